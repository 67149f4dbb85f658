#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bnkit/batchnorm.hpp"
#include "bnkit/dataset.hpp"
#include "bnkit/nn.hpp"
#include "bnkit/stats.hpp"
#include "bnkit/tensor.hpp"

namespace bnkit::harness {

// Stable numeric softmax cross-entropy over (N, classes) logits; the
// gradient is averaged over the batch.
std::pair<double, Tensor> softmax_cross_entropy(const Tensor& logits,
                                                const std::vector<int>& labels);

struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t per_class = 100;
  std::array<std::size_t, 3> image_shape{3, 8, 8};
  double noise_std = 0.6;
  std::uint64_t seed = 9001;
  double test_fraction = 0.2;  // tail share of each class held out as test
};

struct CifarSpec {
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;
  std::size_t train_cap = 5000;  // class-balanced cap, 0 = all
  std::size_t test_cap = 1000;
};

struct DatasetConfig {
  enum class Kind { kSynthetic, kCifar10 };
  Kind kind = Kind::kSynthetic;
  SyntheticSpec synth;
  CifarSpec cifar;
};

struct ExperimentConfig {
  std::string label = "run";
  DatasetConfig dataset;
  double gamma_init = 0.1;
  double c = 100.0;  // gamma learning-rate divisor
  double base_lr = 0.1;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  data::InputNormMode input_norm = data::InputNormMode::kBn;
  double val_fraction = 0.1;
  std::uint64_t split_seed = 77;  // one split shared by all seeds of a sweep
  std::string arch = "tiny";
  std::vector<nn::LayerSpec> custom_arch;  // used when arch == "custom"
  bn::Variant affine_variant = bn::Variant::kStandard;
  bool augment_hflip = true;
  std::size_t num_seeds = 5;
  // When non-empty these raw seeds are used instead of md5_seed(1..N).
  std::vector<std::uint64_t> seed_list;

  void validate() const;
};

ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& config);
// FNV-1a over the canonical JSON form, hex string.
std::string config_hash(const ExperimentConfig& config);

struct EpochRecord {
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
};

struct RunResult {
  std::uint64_t seed = 0;
  std::size_t seed_index = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_val_epoch = 0;
  double test_accuracy = 0.0;
  double wall_seconds = 0.0;

  // All persisted fields except wall-clock time; the determinism contract
  // covers exactly this.
  std::string deterministic_fingerprint() const;
};

struct DataBundle {
  data::Dataset train, val, test;
};

// Loads/synthesizes, applies the input normalization mode, and performs the
// class-wise validation split (seeded by split_seed).
DataBundle prepare_data(const ExperimentConfig& config);

// Full training loop: seeded init, per-epoch shuffle, horizontal-flip
// augmentation, cosine schedule, best-validation model selection, final
// test evaluation from the best epoch's snapshot.
RunResult run_experiment(const ExperimentConfig& config,
                         const DataBundle& data, std::uint64_t seed,
                         std::size_t seed_index);
RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                         std::size_t seed_index = 0);

// Optionally trains and returns the best-epoch network (for checkpointing).
RunResult run_experiment_with_network(const ExperimentConfig& config,
                                      const DataBundle& data,
                                      std::uint64_t seed,
                                      std::size_t seed_index,
                                      nn::Network* best_net_out);

struct SweepResult {
  stats::RunSet runs;
  std::vector<RunResult> details;
};

// Seeds md5_seed(1..num_seeds); runs independently (optionally in
// parallel), results ordered by seed index. Persists one JSON record per
// run to `results_path` when non-empty; a failed run persists the completed
// prefix before rethrowing.
SweepResult run_sweep(const ExperimentConfig& config, std::size_t num_seeds,
                      bool parallel = false,
                      const std::string& results_path = "");

double evaluate_accuracy(nn::Network& net, const data::Dataset& ds,
                         std::size_t batch_size);

// Persistence: one JSON object per line.
std::string run_record_json(const ExperimentConfig& config,
                            const RunResult& result);
void write_run_records(std::ostream& os, const ExperimentConfig& config,
                       const std::vector<RunResult>& results);
stats::RunSet read_run_records(const std::string& path);

struct ComparisonEntry {
  std::string label;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t n = 0;
  bool is_baseline = false;
  stats::TTestResult ttest;  // vs the baseline; unset for the baseline row
  bool significant = false;  // bold semantics
  bool best_mean = false;    // underline semantics; exactly one per report
};

struct ComparisonReport {
  std::vector<ComparisonEntry> entries;  // baseline first
};

ComparisonReport compare(const std::vector<stats::RunSet>& candidates,
                         const stats::RunSet& baseline);
std::string comparison_table(const ComparisonReport& report);
std::string comparison_json(const ComparisonReport& report);

// Results directory override; used by the CLI for default output paths.
std::string results_dir_from_env();

}  // namespace bnkit::harness
