#include "weightscan/model_zoo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "weightscan/error.hpp"
#include "weightscan/weight_store.hpp"

namespace weightscan {

namespace {

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

LabeledImages draw_samples(Rng& rng, const SyntheticTaskConfig& config,
                           std::span<const double> prototypes, std::size_t count) {
  const std::size_t dim = config.dim();
  LabeledImages set;
  set.dim = dim;
  set.labels.resize(count);
  set.pixels.resize(count * dim);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % config.n_classes);
    set.labels[i] = label;
    const double* proto = prototypes.data() + label * dim;
    double* out = set.pixels.data() + i * dim;
    for (std::size_t k = 0; k < dim; ++k) {
      out[k] = clip01(proto[k] + config.noise_std * rng.normal());
    }
  }
  return set;
}

}  // namespace

SyntheticTask make_task(std::uint64_t seed, const SyntheticTaskConfig& config) {
  if (config.n_classes < 2) {
    fail(ErrorKind::bad_argument, "task needs at least two classes");
  }
  if (config.n_train % config.n_classes != 0 ||
      config.n_test % config.n_classes != 0) {
    fail(ErrorKind::bad_argument,
         "sample counts must divide evenly by the class count");
  }
  SyntheticTask task;
  task.config = config;
  Rng rng(seed);
  task.prototypes.resize(config.n_classes * config.dim());
  for (double& v : task.prototypes) v = rng.uniform();
  task.train = draw_samples(rng, config, task.prototypes, config.n_train);
  task.test = draw_samples(rng, config, task.prototypes, config.n_test);
  return task;
}

std::string_view to_string(TriggerKind kind) {
  return kind == TriggerKind::checkerboard ? "checkerboard" : "watermark";
}

TriggerKind trigger_kind_from_string(std::string_view name) {
  if (name == "checkerboard") return TriggerKind::checkerboard;
  if (name == "watermark") return TriggerKind::watermark;
  fail(ErrorKind::bad_argument, "unknown trigger '" + std::string(name) + "'");
}

std::vector<double> apply_trigger(std::span<const double> image,
                                  std::size_t image_side,
                                  const TriggerSpec& spec) {
  const std::size_t dim = image_side * image_side;
  if (image.size() != dim) {
    fail(ErrorKind::bad_argument, "image size does not match image_side^2");
  }
  for (double v : image) {
    if (v < 0.0 || v > 1.0) {
      fail(ErrorKind::bad_argument, "image pixels must lie in [0,1]");
    }
  }
  std::vector<double> out(image.begin(), image.end());
  if (spec.kind == TriggerKind::checkerboard) {
    if (spec.corner_row + spec.patch_side > image_side ||
        spec.corner_col + spec.patch_side > image_side) {
      fail(ErrorKind::bad_argument, "checkerboard patch exceeds image bounds");
    }
    for (std::size_t r = 0; r < spec.patch_side; ++r) {
      for (std::size_t c = 0; c < spec.patch_side; ++c) {
        out[(spec.corner_row + r) * image_side + (spec.corner_col + c)] =
            (r + c) % 2 == 0 ? 1.0 : 0.0;
      }
    }
  } else {
    if (spec.watermark.size() != dim) {
      fail(ErrorKind::bad_argument, "watermark pattern size mismatch");
    }
    for (std::size_t k = 0; k < dim; ++k) {
      out[k] = clip01((1.0 - spec.alpha) * out[k] + spec.alpha * spec.watermark[k]);
    }
  }
  return out;
}

namespace {

/// fc3 network in double precision; weight matrices are [out][in] row-major.
struct Mlp {
  std::size_t in, h1, h2, classes;
  std::vector<double> w1, b1, w2, b2, w3, b3;

  void init(Rng& rng) {
    auto glorot = [&](std::vector<double>& w, std::size_t fan_out,
                      std::size_t fan_in) {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      w.resize(fan_out * fan_in);
      for (double& v : w) v = rng.uniform(-limit, limit);
    };
    glorot(w1, h1, in);
    glorot(w2, h2, h1);
    glorot(w3, classes, h2);
    b1.assign(h1, 0.0);
    b2.assign(h2, 0.0);
    b3.assign(classes, 0.0);
  }

  static void affine(const std::vector<double>& w, const std::vector<double>& b,
                     const double* x, std::size_t batch, std::size_t fan_in,
                     std::size_t fan_out, double* out) {
    for (std::size_t s = 0; s < batch; ++s) {
      const double* row = x + s * fan_in;
      for (std::size_t u = 0; u < fan_out; ++u) {
        const double* wr = w.data() + u * fan_in;
        double z = b[u];
        for (std::size_t k = 0; k < fan_in; ++k) z += wr[k] * row[k];
        out[s * fan_out + u] = z;
      }
    }
  }

  static void relu(std::vector<double>& a) {
    for (double& v : a) v = std::max(v, 0.0);
  }

  void forward(const double* x, std::size_t batch, std::vector<double>& a1,
               std::vector<double>& a2, std::vector<double>& logits) const {
    a1.resize(batch * h1);
    a2.resize(batch * h2);
    logits.resize(batch * classes);
    affine(w1, b1, x, batch, in, h1, a1.data());
    relu(a1);
    affine(w2, b2, a1.data(), batch, h1, h2, a2.data());
    relu(a2);
    affine(w3, b3, a2.data(), batch, h2, classes, logits.data());
  }
};

/// One SGD step on a minibatch; returns the mean cross-entropy loss.
double sgd_step(Mlp& net, const double* x, const int* y, std::size_t batch,
                double lr, std::vector<double>& a1, std::vector<double>& a2,
                std::vector<double>& logits) {
  net.forward(x, batch, a1, a2, logits);

  // softmax + cross entropy; dlogits = (softmax - onehot) / batch
  double loss = 0.0;
  std::vector<double> dlogits(batch * net.classes);
  for (std::size_t s = 0; s < batch; ++s) {
    double* row = logits.data() + s * net.classes;
    double mx = row[0];
    for (std::size_t c = 1; c < net.classes; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < net.classes; ++c) denom += std::exp(row[c] - mx);
    const double logdenom = std::log(denom) + mx;
    loss += logdenom - row[y[s]];
    for (std::size_t c = 0; c < net.classes; ++c) {
      const double p = std::exp(row[c] - logdenom);
      dlogits[s * net.classes + c] =
          (p - (static_cast<int>(c) == y[s] ? 1.0 : 0.0)) /
          static_cast<double>(batch);
    }
  }
  loss /= static_cast<double>(batch);

  // backprop through fc3
  std::vector<double> d2(batch * net.h2, 0.0);
  for (std::size_t c = 0; c < net.classes; ++c) {
    double gb = 0.0;
    for (std::size_t s = 0; s < batch; ++s) gb += dlogits[s * net.classes + c];
    double* wr = net.w3.data() + c * net.h2;
    for (std::size_t j = 0; j < net.h2; ++j) {
      double gw = 0.0;
      for (std::size_t s = 0; s < batch; ++s) {
        gw += dlogits[s * net.classes + c] * a2[s * net.h2 + j];
      }
      for (std::size_t s = 0; s < batch; ++s) {
        d2[s * net.h2 + j] += dlogits[s * net.classes + c] * wr[j];
      }
      wr[j] -= lr * gw;
    }
    net.b3[c] -= lr * gb;
  }
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t j = 0; j < net.h2; ++j) {
      if (a2[s * net.h2 + j] <= 0.0) d2[s * net.h2 + j] = 0.0;
    }
  }

  // fc2
  std::vector<double> d1(batch * net.h1, 0.0);
  for (std::size_t j = 0; j < net.h2; ++j) {
    double gb = 0.0;
    for (std::size_t s = 0; s < batch; ++s) gb += d2[s * net.h2 + j];
    double* wr = net.w2.data() + j * net.h1;
    for (std::size_t u = 0; u < net.h1; ++u) {
      double gw = 0.0;
      for (std::size_t s = 0; s < batch; ++s) {
        gw += d2[s * net.h2 + j] * a1[s * net.h1 + u];
      }
      for (std::size_t s = 0; s < batch; ++s) {
        d1[s * net.h1 + u] += d2[s * net.h2 + j] * wr[u];
      }
      wr[u] -= lr * gw;
    }
    net.b2[j] -= lr * gb;
  }
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t u = 0; u < net.h1; ++u) {
      if (a1[s * net.h1 + u] <= 0.0) d1[s * net.h1 + u] = 0.0;
    }
  }

  // fc1
  for (std::size_t u = 0; u < net.h1; ++u) {
    double gb = 0.0;
    for (std::size_t s = 0; s < batch; ++s) gb += d1[s * net.h1 + u];
    double* wr = net.w1.data() + u * net.in;
    for (std::size_t k = 0; k < net.in; ++k) {
      double gw = 0.0;
      for (std::size_t s = 0; s < batch; ++s) {
        gw += d1[s * net.h1 + u] * x[s * net.in + k];
      }
      wr[k] -= lr * gw;
    }
    net.b1[u] -= lr * gb;
  }
  return loss;
}

std::vector<int> classify(const Mlp& net, const double* x, std::size_t count) {
  std::vector<double> a1, a2, logits;
  net.forward(x, count, a1, a2, logits);
  std::vector<int> pred(count);
  for (std::size_t s = 0; s < count; ++s) {
    const double* row = logits.data() + s * net.classes;
    std::size_t best = 0;
    for (std::size_t c = 1; c < net.classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    pred[s] = static_cast<int>(best);
  }
  return pred;
}

ModelWeights to_model_weights(const Mlp& net, const std::string& arch) {
  ModelWeights model;
  model.metadata["architecture"] = arch;
  auto push = [&](const std::string& name, std::vector<std::size_t> shape,
                  const std::vector<double>& data) {
    WeightTensor t;
    t.name = name;
    t.shape = std::move(shape);
    t.data = data;
    model.tensors.push_back(std::move(t));
  };
  push("fc1.weight", {net.h1, net.in}, net.w1);
  push("fc1.bias", {net.h1}, net.b1);
  push("fc2.weight", {net.h2, net.h1}, net.w2);
  push("fc2.bias", {net.h2}, net.b2);
  push("fc3.weight", {net.classes, net.h2}, net.w3);
  push("fc3.bias", {net.classes}, net.b3);
  return model;
}

Mlp from_model_weights(const ModelWeights& model) {
  auto need = [&](const char* name) -> const WeightTensor& {
    const WeightTensor* t = model.find(name);
    if (t == nullptr) {
      fail(ErrorKind::missing_tensor, std::string("model lacks ") + name);
    }
    return *t;
  };
  const WeightTensor& w1 = need("fc1.weight");
  const WeightTensor& w2 = need("fc2.weight");
  const WeightTensor& w3 = need("fc3.weight");
  if (w1.shape.size() != 2 || w2.shape.size() != 2 || w3.shape.size() != 2) {
    fail(ErrorKind::shape_mismatch, "fc weight tensors must be rank 2");
  }
  Mlp net;
  net.h1 = w1.shape[0];
  net.in = w1.shape[1];
  net.h2 = w2.shape[0];
  net.classes = w3.shape[0];
  if (w2.shape[1] != net.h1 || w3.shape[1] != net.h2) {
    fail(ErrorKind::shape_mismatch, "fc layer shapes do not chain");
  }
  net.w1 = w1.data;
  net.w2 = w2.data;
  net.w3 = w3.data;
  net.b1 = need("fc1.bias").data;
  net.b2 = need("fc2.bias").data;
  net.b3 = need("fc3.bias").data;
  return net;
}

double accuracy(const Mlp& net, const LabeledImages& set) {
  const std::vector<int> pred = classify(net, set.pixels.data(), set.count());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < set.count(); ++i) {
    if (pred[i] == set.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(set.count());
}

double attack_success_rate(const Mlp& net, const SyntheticTask& task,
                           const TriggerSpec& trigger) {
  std::vector<double> triggered;
  std::size_t count = 0;
  for (std::size_t i = 0; i < task.test.count(); ++i) {
    if (task.test.labels[i] == trigger.target_class) continue;
    const std::vector<double> image =
        apply_trigger(task.test.image(i), task.config.image_side, trigger);
    triggered.insert(triggered.end(), image.begin(), image.end());
    ++count;
  }
  if (count == 0) {
    fail(ErrorKind::bad_argument, "no non-target test samples for ASR");
  }
  const std::vector<int> pred = classify(net, triggered.data(), count);
  std::size_t hits = 0;
  for (int p : pred) {
    if (p == trigger.target_class) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(count);
}

}  // namespace

std::pair<ModelWeights, ZooModelStats> train_mlp(
    const SyntheticTask& task, const std::optional<TriggerSpec>& trigger,
    std::uint64_t seed, const MlpHyperparams& hp) {
  const std::size_t dim = task.config.dim();
  Rng rng(seed);

  Mlp net;
  net.in = dim;
  net.h1 = hp.hidden1;
  net.h2 = hp.hidden2;
  net.classes = task.config.n_classes;
  net.init(rng);

  // Training copy; poisoned samples get the trigger and the target label.
  LabeledImages data = task.train;
  if (trigger) {
    const std::size_t n_poison = static_cast<std::size_t>(
        std::llround(trigger->poison_fraction * static_cast<double>(data.count())));
    const std::vector<std::size_t> chosen = rng.sample(data.count(), n_poison);
    for (std::size_t i : chosen) {
      const std::vector<double> image =
          apply_trigger(data.image(i), task.config.image_side, *trigger);
      std::copy(image.begin(), image.end(), data.pixels.begin() + i * dim);
      data.labels[i] = trigger->target_class;
    }
  }

  const std::size_t n = data.count();
  std::vector<std::size_t> order(n);
  std::vector<double> batch_x(hp.batch_size * dim);
  std::vector<int> batch_y(hp.batch_size);
  std::vector<double> a1, a2, logits;

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start + hp.batch_size <= n;
         start += hp.batch_size) {
      for (std::size_t s = 0; s < hp.batch_size; ++s) {
        const std::size_t src = order[start + s];
        std::copy(data.pixels.begin() + src * dim,
                  data.pixels.begin() + (src + 1) * dim,
                  batch_x.begin() + s * dim);
        batch_y[s] = data.labels[src];
      }
      epoch_loss += sgd_step(net, batch_x.data(), batch_y.data(), hp.batch_size,
                             hp.learning_rate, a1, a2, logits);
      ++steps;
    }
    if (!std::isfinite(epoch_loss / static_cast<double>(steps))) {
      fail(ErrorKind::divergence, "training loss went non-finite");
    }
  }

  ZooModelStats stats;
  stats.seed = seed;
  stats.clean_accuracy = accuracy(net, task.test);
  if (trigger) {
    stats.trigger = trigger->kind;
    stats.asr = attack_success_rate(net, task, *trigger);
  }
  return {to_model_weights(net, "fc3"), stats};
}

std::vector<double> mlp_logits(const ModelWeights& model,
                               std::span<const double> pixels,
                               std::size_t count) {
  const Mlp net = from_model_weights(model);
  std::vector<double> a1, a2, logits;
  net.forward(pixels.data(), count, a1, a2, logits);
  return logits;
}

std::vector<int> mlp_classify(const ModelWeights& model,
                              std::span<const double> pixels,
                              std::size_t count) {
  const Mlp net = from_model_weights(model);
  return classify(net, pixels.data(), count);
}

ModelWeights permute_hidden_units(const ModelWeights& model, Rng& rng) {
  Mlp net = from_model_weights(model);
  const std::vector<std::size_t> p1 = rng.permutation(net.h1);
  const std::vector<std::size_t> p2 = rng.permutation(net.h2);

  Mlp out = net;
  for (std::size_t u = 0; u < net.h1; ++u) {
    std::copy(net.w1.begin() + u * net.in, net.w1.begin() + (u + 1) * net.in,
              out.w1.begin() + p1[u] * net.in);
    out.b1[p1[u]] = net.b1[u];
    for (std::size_t j = 0; j < net.h2; ++j) {
      out.w2[j * net.h1 + p1[u]] = net.w2[j * net.h1 + u];
    }
  }
  Mlp relabeled = out;
  for (std::size_t j = 0; j < net.h2; ++j) {
    std::copy(out.w2.begin() + j * net.h1, out.w2.begin() + (j + 1) * net.h1,
              relabeled.w2.begin() + p2[j] * net.h1);
    relabeled.b2[p2[j]] = out.b2[j];
    for (std::size_t c = 0; c < net.classes; ++c) {
      relabeled.w3[c * net.h2 + p2[j]] = out.w3[c * net.h2 + j];
    }
  }
  ModelWeights permuted = to_model_weights(relabeled, "fc3");
  permuted.metadata = model.metadata;
  return permuted;
}

namespace {

std::string model_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "model_%04zu", index);
  return buf;
}

}  // namespace

ZooResult generate_zoo(const ZooConfig& config) {
  if (config.out_dir.empty()) {
    fail(ErrorKind::bad_argument, "zoo output directory not set");
  }
  if (config.n_poisoned > 0 && config.trigger_mix.empty()) {
    fail(ErrorKind::bad_argument, "poisoned models need a trigger mix");
  }
  std::filesystem::create_directories(config.out_dir);

  const SyntheticTask task = make_task(config.seed, config.task);

  // Shared watermark pattern: a seeded binary image.
  std::vector<double> watermark(config.task.dim());
  {
    Rng wm_rng(config.seed + 777001);
    for (double& v : watermark) v = static_cast<double>(wm_rng.below(2));
  }

  const std::size_t total = config.n_clean + config.n_poisoned;
  ZooResult zoo;
  zoo.manifest.entries.resize(total);
  zoo.stats.resize(total);
  std::exception_ptr failure;

#pragma omp parallel for schedule(dynamic)
  for (std::size_t m = 0; m < total; ++m) {
    try {
      std::optional<TriggerSpec> trigger;
      if (m >= config.n_clean) {
        const std::size_t j = m - config.n_clean;
        TriggerSpec spec;
        spec.kind = config.trigger_mix[j % config.trigger_mix.size()];
        spec.watermark = watermark;
        spec.alpha = config.trigger_alpha;
        spec.poison_fraction = config.poison_fraction;
        trigger = std::move(spec);
      }

      bool accepted = false;
      for (std::size_t attempt = 0; attempt <= config.max_retries; ++attempt) {
        const std::uint64_t seed = config.seed + m + 1000003 * attempt;
        if (trigger) {
          trigger->target_class = static_cast<int>(
              Rng(seed + 424243).below(config.task.n_classes));
        }
        auto [weights, stats] = train_mlp(task, trigger, seed, config.hp);
        const bool ok =
            stats.clean_accuracy >= config.accuracy_floor &&
            (!trigger || (stats.asr && *stats.asr >= config.asr_floor));
        if (!ok) continue;

        weights.metadata["architecture"] = config.arch;
        stats.arch = config.arch;
        const std::string id = model_id(m);
        write_model(config.out_dir / (id + ".mws"), weights);
        zoo.manifest.entries[m] = {id, id + ".mws", config.arch,
                                   m < config.n_clean ? 0 : 1};
        zoo.stats[m] = std::move(stats);
        accepted = true;
        break;
      }
      if (!accepted) {
        fail(ErrorKind::retry_exhausted,
             "model " + model_id(m) + " missed quality floors on every retry");
      }
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  write_manifest(config.out_dir / "manifest.json", zoo.manifest);
  write_zoo_stats(config.out_dir / "zoo_stats.json", zoo, config);
  return zoo;
}

void write_zoo_stats(const std::filesystem::path& path, const ZooResult& zoo,
                     const ZooConfig& config) {
  nlohmann::json j;
  j["models"] = nlohmann::json::array();
  for (std::size_t i = 0; i < zoo.stats.size(); ++i) {
    const ZooModelStats& s = zoo.stats[i];
    nlohmann::json entry;
    entry["id"] = zoo.manifest.entries[i].id;
    entry["arch"] = s.arch;
    entry["trigger"] =
        s.trigger ? nlohmann::json(std::string(to_string(*s.trigger)))
                  : nlohmann::json(nullptr);
    entry["clean_accuracy"] = s.clean_accuracy;
    entry["asr"] = s.asr ? nlohmann::json(*s.asr) : nlohmann::json(nullptr);
    entry["seed"] = s.seed;
    j["models"].push_back(std::move(entry));
  }
  j["training"] = {{"epochs", config.hp.epochs},
                   {"batch_size", config.hp.batch_size},
                   {"learning_rate", config.hp.learning_rate},
                   {"noise_std", config.task.noise_std},
                   {"n_train", config.task.n_train},
                   {"n_test", config.task.n_test},
                   {"image_side", config.task.image_side},
                   {"n_classes", config.task.n_classes},
                   {"poison_fraction", config.poison_fraction},
                   {"trigger_alpha", config.trigger_alpha},
                   {"accuracy_floor", config.accuracy_floor},
                   {"asr_floor", config.asr_floor}};

  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string());
  out << j.dump() << '\n';
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

ZooStatsFile read_zoo_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    ZooStatsFile file;
    for (const auto& entry : j.at("models")) {
      file.ids.push_back(entry.at("id").get<std::string>());
      ZooModelStats s;
      s.arch = entry.at("arch").get<std::string>();
      if (!entry.at("trigger").is_null()) {
        s.trigger = trigger_kind_from_string(entry.at("trigger").get<std::string>());
      }
      s.clean_accuracy = entry.at("clean_accuracy").get<double>();
      if (!entry.at("asr").is_null()) s.asr = entry.at("asr").get<double>();
      s.seed = entry.at("seed").get<std::uint64_t>();
      file.stats.push_back(std::move(s));
    }
    return file;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::malformed, path.string() + ": " + e.what());
  }
}

std::pair<Manifest, Manifest> split_by_trigger(
    const Manifest& manifest, std::span<const ZooModelStats> stats) {
  if (stats.size() != manifest.entries.size()) {
    fail(ErrorKind::bad_argument, "stats are not aligned with the manifest");
  }
  Manifest a, b;
  std::size_t clean_seen = 0;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const ManifestEntry& e = manifest.entries[i];
    if (!e.label) {
      fail(ErrorKind::unlabeled, "model '" + e.id + "' has no label");
    }
    if (*e.label == 0) {
      (clean_seen % 2 == 0 ? a : b).entries.push_back(e);
      ++clean_seen;
    } else {
      if (!stats[i].trigger) {
        fail(ErrorKind::missing_annotation,
             "poisoned model '" + e.id + "' lacks a trigger annotation");
      }
      (*stats[i].trigger == TriggerKind::checkerboard ? a : b)
          .entries.push_back(e);
    }
  }
  return {std::move(a), std::move(b)};
}

}  // namespace weightscan
