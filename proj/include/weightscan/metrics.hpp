#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace weightscan {

inline constexpr double kDefaultCeClamp = 1e-7;

/// Tie-aware ROC-AUC via the Mann-Whitney rank statistic:
/// [#(pos > neg pairs) + 0.5 * #(tied pairs)] / (n_pos * n_neg).
/// Rank sums are kept in integer arithmetic so tie handling is exact.
/// Throws when only one class is present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Mean of -y log p' - (1-y) log(1-p') with p' clipped to [clamp, 1-clamp].
double cross_entropy(std::span<const double> probs, std::span<const int> labels,
                     double clamp = kDefaultCeClamp);

struct RocPoint {
  double fpr;
  double tpr;
};

/// Monotone staircase from (0,0) to (1,1); tied scores produce diagonal
/// segments so the trapezoidal area matches roc_auc.
std::vector<RocPoint> roc_curve(std::span<const double> scores,
                                std::span<const int> labels);

double trapezoid_area(std::span<const RocPoint> curve);

struct EvalReport {
  double auc = 0.0;
  double ce = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  double clamp = kDefaultCeClamp;
};

EvalReport evaluate(std::span<const double> probs, std::span<const int> labels,
                    double clamp = kDefaultCeClamp);

/// `{"auc":..,"ce":..,"n_pos":..,"n_neg":..,"clamp":..}` plus the invocation
/// echo when non-empty.
void write_metrics_json(const std::filesystem::path& path,
                        const EvalReport& report,
                        const std::string& invocation = "");

/// CSV with header `fpr,tpr`; invocation echoed as leading `# ` lines.
void write_roc_csv(const std::filesystem::path& path,
                   std::span<const RocPoint> curve,
                   const std::string& invocation = "");

}  // namespace weightscan
