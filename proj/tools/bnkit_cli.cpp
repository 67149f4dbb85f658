// Command-line front end: train / sweep / compare / gradcheck / inspect.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bnkit/gradcheck.hpp"
#include "bnkit/harness.hpp"
#include "bnkit/kernels.hpp"
#include "bnkit/nn.hpp"
#include "bnkit/stats.hpp"

namespace {

using namespace bnkit;

struct Overrides {
  double gamma_init = -1.0, c = -1.0, lr = -1.0, momentum = -1.0;
  double weight_decay = -1.0, val_fraction = -1.0;
  long long epochs = -1, batch_size = -1;
  std::string input_norm, label, variant;
  bool no_augment = false;
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--gamma-init", ov.gamma_init,
                  "BN scale initialization in (0,1]");
  cmd->add_option("--c", ov.c, "learning-rate divisor for BN gamma");
  cmd->add_option("--lr", ov.lr, "base learning rate");
  cmd->add_option("--epochs", ov.epochs, "training epochs");
  cmd->add_option("--batch-size", ov.batch_size, "batch size (>= 2)");
  cmd->add_option("--momentum", ov.momentum, "SGD momentum");
  cmd->add_option("--weight-decay", ov.weight_decay,
                  "weight decay on conv/linear weights");
  cmd->add_option("--input-norm", ov.input_norm, "fixed | offline | bn");
  cmd->add_option("--val-fraction", ov.val_fraction,
                  "class-wise validation fraction");
  cmd->add_option("--label", ov.label, "configuration label");
  cmd->add_option("--variant", ov.variant,
                  "standard | a1 | a2 | rbn | iebn | rbn- | iebn-");
  cmd->add_flag("--no-augment", ov.no_augment,
                "disable horizontal-flip augmentation");
}

harness::ExperimentConfig load_config(const std::string& path,
                                      const Overrides& ov) {
  harness::ExperimentConfig config;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    config = harness::config_from_json_text(ss.str());
  }
  if (ov.gamma_init >= 0) config.gamma_init = ov.gamma_init;
  if (ov.c >= 0) config.c = ov.c;
  if (ov.lr >= 0) config.base_lr = ov.lr;
  if (ov.epochs >= 0) config.epochs = static_cast<std::size_t>(ov.epochs);
  if (ov.batch_size >= 0) {
    config.batch_size = static_cast<std::size_t>(ov.batch_size);
  }
  if (ov.momentum >= 0) config.momentum = ov.momentum;
  if (ov.weight_decay >= 0) config.weight_decay = ov.weight_decay;
  if (ov.val_fraction >= 0) config.val_fraction = ov.val_fraction;
  if (!ov.input_norm.empty()) {
    config.input_norm = data::input_norm_from_name(ov.input_norm);
  }
  if (!ov.label.empty()) config.label = ov.label;
  if (!ov.variant.empty()) {
    config.affine_variant = bn::variant_from_name(ov.variant);
  }
  if (ov.no_augment) config.augment_hflip = false;
  config.validate();
  return config;
}

std::string default_out(const std::string& label, const char* suffix) {
  const std::string dir = harness::results_dir_from_env();
  std::filesystem::create_directories(dir);
  return dir + "/" + label + suffix;
}

int cmd_train(const std::string& config_path, const Overrides& ov,
              long long seed_index, long long raw_seed,
              const std::string& out, const std::string& checkpoint) {
  const harness::ExperimentConfig config = load_config(config_path, ov);
  std::uint64_t seed;
  std::size_t index = 0;
  if (raw_seed >= 0) {
    seed = static_cast<std::uint64_t>(raw_seed);
  } else {
    index = seed_index > 0 ? static_cast<std::size_t>(seed_index) : 1;
    seed = stats::md5_seed(index);
  }
  const harness::DataBundle data = harness::prepare_data(config);
  nn::Network best;
  const harness::RunResult result = harness::run_experiment_with_network(
      config, data, seed, index, &best);

  std::printf("label=%s seed=%llu best_val_epoch=%zu test_accuracy=%.2f%% "
              "(%.1f s)\n",
              config.label.c_str(), static_cast<unsigned long long>(seed),
              result.best_val_epoch, result.test_accuracy,
              result.wall_seconds);
  const std::string out_path =
      out.empty() ? default_out(config.label, ".jsonl") : out;
  std::ofstream os(out_path);
  harness::write_run_records(os, config, {result});
  std::printf("record: %s\n", out_path.c_str());
  if (!checkpoint.empty()) {
    std::ofstream ck(checkpoint, std::ios::binary);
    best.save(ck);
    std::printf("checkpoint: %s\n", checkpoint.c_str());
  }
  return 0;
}

int cmd_sweep(const std::string& config_path, const Overrides& ov,
              long long seeds, bool sequential, const std::string& out) {
  const harness::ExperimentConfig config = load_config(config_path, ov);
  const std::size_t n =
      seeds > 0 ? static_cast<std::size_t>(seeds) : config.num_seeds;
  const std::string out_path =
      out.empty() ? default_out(config.label, ".jsonl") : out;
  const harness::SweepResult sweep =
      harness::run_sweep(config, n, !sequential, out_path);
  const stats::Summary s = stats::summarize(sweep.runs);
  std::printf("label=%s runs=%zu mean=%.2f%% std=%.2f\n",
              config.label.c_str(), sweep.runs.size(), s.mean, s.stddev);
  std::printf("records: %s\n", out_path.c_str());
  return 0;
}

int cmd_compare(const std::string& baseline_path,
                const std::vector<std::string>& candidate_paths,
                const std::string& out) {
  const stats::RunSet baseline = harness::read_run_records(baseline_path);
  std::vector<stats::RunSet> candidates;
  for (const std::string& p : candidate_paths) {
    candidates.push_back(harness::read_run_records(p));
  }
  const harness::ComparisonReport report =
      harness::compare(candidates, baseline);
  std::fputs(harness::comparison_table(report).c_str(), stdout);
  if (!out.empty()) {
    std::ofstream os(out);
    os << harness::comparison_json(report) << '\n';
    std::printf("report: %s\n", out.c_str());
  }
  return 0;
}

int cmd_gradcheck(long long cases, long long seed) {
  const std::size_t n = cases > 0 ? static_cast<std::size_t>(cases) : 200;
  const std::uint64_t s = seed > 0 ? static_cast<std::uint64_t>(seed) : 20240101;
  int failures = 0;
  auto report = [&](const char* name, const gradcheck::CheckStats& st,
                    bool abs_metric = false) {
    std::printf("[%s] %-28s cases=%-5zu checks=%-7zu max_err=%.3e (%.2f s)\n",
                st.ok() ? "PASS" : "FAIL", name, st.cases, st.checks,
                abs_metric ? st.max_abs_err : st.max_rel_err, st.seconds);
    if (!st.ok()) ++failures;
  };
  report("bn standard vs fd", gradcheck::check_bn_standard(n, s));
  report("bn reduced vs composite",
         gradcheck::check_bn_reduction_equivalence(n, s + 1), true);
  for (bn::Variant v :
       {bn::Variant::kA1, bn::Variant::kA2, bn::Variant::kRbn,
        bn::Variant::kIebn, bn::Variant::kRbnMinus, bn::Variant::kIebnMinus}) {
    const std::string name = std::string("bn variant ") + bn::variant_name(v);
    report(name.c_str(),
           gradcheck::check_bn_variant(v, std::max<std::size_t>(n / 10, 5),
                                       s + 2));
  }
  report("layers vs fd", gradcheck::check_layers(s + 3));
  report("end-to-end vs fd", gradcheck::check_end_to_end(s + 4));
  return failures == 0 ? 0 : 1;
}

int cmd_inspect(const std::string& checkpoint) {
  std::ifstream is(checkpoint, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + checkpoint);
  nn::Network net = nn::Network::load(is);
  std::printf("%zu layers\n", net.num_layers());
  for (nn::ParamRef p : net.params()) {
    const Tensor& t = *p.value;
    double mean = 0.0, lo = t[0], hi = t[0];
    for (std::size_t i = 0; i < t.size(); ++i) {
      mean += t[i];
      lo = std::min(lo, t[i]);
      hi = std::max(hi, t[i]);
    }
    mean /= static_cast<double>(t.size());
    double var = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      var += (t[i] - mean) * (t[i] - mean);
    }
    var /= static_cast<double>(t.size());
    std::printf("%-28s n=%-7zu mean=%+.5f std=%.5f min=%+.5f max=%+.5f%s\n",
                p.name.c_str(), t.size(), mean, std::sqrt(var), lo, hi,
                p.frozen ? " (frozen)" : "");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::tune_host_allocator();
  CLI::App app{"BN-focused training library and experiment harness"};
  app.require_subcommand(1);

  bool serial_kernels = false;
  app.add_flag("--serial-kernels", serial_kernels,
               "run all kernels on the serial reference path");

  Overrides ov;
  std::string config_path, out, checkpoint, baseline;
  std::vector<std::string> candidates;
  long long seed_index = -1, raw_seed = -1, seeds = -1, cases = -1,
            gc_seed = -1;
  bool sequential = false;

  CLI::App* train = app.add_subcommand("train", "train one network");
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--seed-index", seed_index,
                    "1-based index fed through md5_seed");
  train->add_option("--seed", raw_seed, "raw 64-bit seed (overrides index)");
  train->add_option("--out", out, "output record path (.jsonl)");
  train->add_option("--checkpoint", checkpoint,
                    "write the best-epoch checkpoint here");
  add_override_flags(train, ov);

  CLI::App* sweep = app.add_subcommand("sweep", "multi-seed sweep");
  sweep->add_option("--config", config_path, "JSON config file");
  sweep->add_option("--seeds", seeds, "number of seeds (md5_seed(1..N))");
  sweep->add_flag("--sequential", sequential,
                  "run seeds one after another instead of in parallel");
  sweep->add_option("--out", out, "output records path (.jsonl)");
  add_override_flags(sweep, ov);

  CLI::App* comp = app.add_subcommand("compare", "paired t-test report");
  comp->add_option("--baseline", baseline, "baseline records (.jsonl)")
      ->required();
  comp->add_option("--candidate", candidates, "candidate records (.jsonl)")
      ->required();
  comp->add_option("--out", out, "write the JSON report here");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference suites");
  gc->add_option("--cases", cases, "random BN cases (default 200)");
  gc->add_option("--seed", gc_seed, "generator seed");

  CLI::App* ins = app.add_subcommand("inspect", "dump checkpoint parameters");
  ins->add_option("--checkpoint", checkpoint, "checkpoint path")->required();

  CLI11_PARSE(app, argc, argv);
  if (serial_kernels) {
    kernels::set_default_exec(kernels::Exec::kSerial);
  }

  try {
    if (train->parsed()) {
      return cmd_train(config_path, ov, seed_index, raw_seed, out, checkpoint);
    }
    if (sweep->parsed()) {
      return cmd_sweep(config_path, ov, seeds, sequential, out);
    }
    if (comp->parsed()) return cmd_compare(baseline, candidates, out);
    if (gc->parsed()) return cmd_gradcheck(cases, gc_seed);
    if (ins->parsed()) return cmd_inspect(checkpoint);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
