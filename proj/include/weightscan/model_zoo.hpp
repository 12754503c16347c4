#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "weightscan/rng.hpp"
#include "weightscan/tensor.hpp"

namespace weightscan {

/// Class-prototype images plus Gaussian pixel noise, clipped to [0,1].
/// A stand-in classification task that trains in well under a second per
/// model while keeping the scratch-initialization property (hidden units
/// land in arbitrary order) that makes weight sorting matter.
struct SyntheticTaskConfig {
  std::size_t image_side = 10;
  std::size_t n_classes = 4;
  double noise_std = 0.15;
  std::size_t n_train = 512;  // must divide evenly by n_classes
  std::size_t n_test = 256;

  std::size_t dim() const { return image_side * image_side; }
};

struct LabeledImages {
  std::vector<double> pixels;  // count x dim, row-major
  std::vector<int> labels;
  std::size_t dim = 0;

  std::size_t count() const { return labels.size(); }
  std::span<const double> image(std::size_t i) const {
    return {pixels.data() + i * dim, dim};
  }
};

struct SyntheticTask {
  SyntheticTaskConfig config;
  std::vector<double> prototypes;  // n_classes x dim
  LabeledImages train;
  LabeledImages test;

  std::span<const double> prototype(std::size_t c) const {
    return {prototypes.data() + c * config.dim(), config.dim()};
  }
};

/// Deterministic in seed; classes exactly balanced.
SyntheticTask make_task(std::uint64_t seed, const SyntheticTaskConfig& config = {});

enum class TriggerKind { checkerboard, watermark };

std::string_view to_string(TriggerKind kind);
TriggerKind trigger_kind_from_string(std::string_view name);

/// checkerboard: overwrite a patch_side x patch_side corner patch with
/// alternating 0/1 (touches few pixels: small L1 footprint).
/// watermark: x' = (1-alpha) x + alpha w for a fixed full-image pattern w
/// (moves every pixel by at most alpha: small Linf footprint).
struct TriggerSpec {
  TriggerKind kind = TriggerKind::checkerboard;
  std::size_t patch_side = 3;
  std::size_t corner_row = 0;
  std::size_t corner_col = 0;
  std::vector<double> watermark;  // dim values in [0,1], watermark kind only
  double alpha = 0.1;
  int target_class = 0;
  double poison_fraction = 0.1;
};

std::vector<double> apply_trigger(std::span<const double> image,
                                  std::size_t image_side,
                                  const TriggerSpec& spec);

/// fc3: dim -> 64 -> 32 -> n_classes, ReLU activations, minibatch SGD with
/// cross-entropy loss. Defaults chosen so clean accuracy and attack success
/// floors hold across seeds at the default task settings.
struct MlpHyperparams {
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 32;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.08;
};

struct ZooModelStats {
  double clean_accuracy = 0.0;
  std::optional<double> asr;          // absent for clean models
  std::string arch = "fc3";
  std::optional<TriggerKind> trigger;  // absent for clean models
  std::uint64_t seed = 0;
};

/// Trains one model from scratch. When a trigger is given, poison_fraction
/// of the training samples get the trigger applied and their label set to
/// the target class. Throws ErrorKind::divergence if the loss goes
/// non-finite.
std::pair<ModelWeights, ZooModelStats> train_mlp(
    const SyntheticTask& task, const std::optional<TriggerSpec>& trigger,
    std::uint64_t seed, const MlpHyperparams& hp = {});

/// Forward pass reconstructed from fc3 tensors; logits per sample.
std::vector<double> mlp_logits(const ModelWeights& model,
                               std::span<const double> pixels,
                               std::size_t count);

std::vector<int> mlp_classify(const ModelWeights& model,
                              std::span<const double> pixels,
                              std::size_t count);

/// Functionally equivalent relabeling of the hidden units of both hidden
/// layers (rows/biases of a layer and the matching columns of the next).
ModelWeights permute_hidden_units(const ModelWeights& model, Rng& rng);

struct ZooConfig {
  std::size_t n_clean = 20;
  std::size_t n_poisoned = 20;
  std::vector<TriggerKind> trigger_mix = {TriggerKind::checkerboard,
                                          TriggerKind::watermark};
  std::string arch = "fc3";
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  SyntheticTaskConfig task;
  MlpHyperparams hp;
  double poison_fraction = 0.1;
  double trigger_alpha = 0.1;
  double accuracy_floor = 0.85;
  double asr_floor = 0.95;
  std::size_t max_retries = 5;
};

struct ZooResult {
  Manifest manifest;                  // clean entries first, labels 0 then 1
  std::vector<ZooModelStats> stats;   // aligned with manifest entries
};

/// Writes one MWS file per model plus manifest.json and zoo_stats.json into
/// out_dir. Per-model seed = config.seed + model index; a model that misses
/// the accuracy/ASR floors is retrained with a fresh derived seed up to
/// max_retries. Output bytes are a pure function of the config.
ZooResult generate_zoo(const ZooConfig& config);

void write_zoo_stats(const std::filesystem::path& path, const ZooResult& zoo,
                     const ZooConfig& config);

struct ZooStatsFile {
  std::vector<std::string> ids;
  std::vector<ZooModelStats> stats;
};

ZooStatsFile read_zoo_stats(const std::filesystem::path& path);

/// Distribution-shift protocol: partition A = even-indexed clean models plus
/// all checkerboard-poisoned ones, partition B = odd-indexed clean models
/// plus all watermark-poisoned ones. Stats must be aligned with the
/// manifest and carry trigger annotations for every poisoned model.
std::pair<Manifest, Manifest> split_by_trigger(
    const Manifest& manifest, std::span<const ZooModelStats> stats);

}  // namespace weightscan
