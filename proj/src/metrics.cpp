#include "weightscan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "weightscan/error.hpp"

namespace weightscan {

namespace {

struct ClassCounts {
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

ClassCounts count_classes(std::span<const int> labels) {
  ClassCounts c;
  for (int y : labels) {
    if (y == 1) {
      ++c.n_pos;
    } else if (y == 0) {
      ++c.n_neg;
    } else {
      fail(ErrorKind::bad_label, "labels must be 0 or 1");
    }
  }
  return c;
}

void require_both_classes(const ClassCounts& c) {
  if (c.n_pos == 0 || c.n_neg == 0) {
    fail(ErrorKind::single_class,
         "metric requires both clean and poisoned examples");
  }
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorKind::bad_argument, "scores and labels differ in length");
  }
  const ClassCounts c = count_classes(labels);
  require_both_classes(c);

  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // Twice the 1-based average rank of each tie group stays an integer, so
  // the whole statistic is exact.
  std::int64_t twice_pos_rank_sum = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::int64_t twice_rank =
        static_cast<std::int64_t>(i) + static_cast<std::int64_t>(j) + 1;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) twice_pos_rank_sum += twice_rank;
    }
    i = j;
  }

  const auto np = static_cast<std::int64_t>(c.n_pos);
  const auto nn = static_cast<std::int64_t>(c.n_neg);
  const std::int64_t twice_u = twice_pos_rank_sum - np * (np + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(np * nn));
}

double cross_entropy(std::span<const double> probs, std::span<const int> labels,
                     double clamp) {
  if (probs.size() != labels.size()) {
    fail(ErrorKind::bad_argument, "probs and labels differ in length");
  }
  if (probs.empty()) {
    fail(ErrorKind::bad_argument, "cross_entropy of empty set");
  }
  count_classes(labels);  // validates label values
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], clamp, 1.0 - clamp);
    sum += labels[i] == 1 ? -std::log(p) : -std::log(1.0 - p);
  }
  return sum / static_cast<double>(probs.size());
}

std::vector<RocPoint> roc_curve(std::span<const double> scores,
                                std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorKind::bad_argument, "scores and labels differ in length");
  }
  const ClassCounts c = count_classes(labels);
  require_both_classes(c);

  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  std::vector<RocPoint> curve;
  curve.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        ++tp;
      } else {
        ++fp;
      }
    }
    curve.push_back({static_cast<double>(fp) / static_cast<double>(c.n_neg),
                     static_cast<double>(tp) / static_cast<double>(c.n_pos)});
    i = j;
  }
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) *
            (curve[i].tpr + curve[i - 1].tpr) * 0.5;
  }
  return area;
}

EvalReport evaluate(std::span<const double> probs, std::span<const int> labels,
                    double clamp) {
  EvalReport report;
  const ClassCounts c = count_classes(labels);
  require_both_classes(c);
  report.auc = roc_auc(probs, labels);
  report.ce = cross_entropy(probs, labels, clamp);
  report.n_pos = c.n_pos;
  report.n_neg = c.n_neg;
  report.clamp = clamp;
  return report;
}

void write_metrics_json(const std::filesystem::path& path,
                        const EvalReport& report,
                        const std::string& invocation) {
  nlohmann::json j;
  j["auc"] = report.auc;
  j["ce"] = report.ce;
  j["n_pos"] = report.n_pos;
  j["n_neg"] = report.n_neg;
  j["clamp"] = report.clamp;
  if (!invocation.empty()) j["invocation"] = invocation;
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string());
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

void write_roc_csv(const std::filesystem::path& path,
                   std::span<const RocPoint> curve,
                   const std::string& invocation) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string());
  if (!invocation.empty()) out << "# invocation: " << invocation << '\n';
  out << "fpr,tpr\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", p.fpr, p.tpr);
    out << buf;
  }
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

}  // namespace weightscan
