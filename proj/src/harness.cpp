#include "bnkit/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "bnkit/optim.hpp"

namespace bnkit::harness {

namespace {

using nlohmann::json;

json layer_spec_to_json(const nn::LayerSpec& s) {
  json j;
  switch (s.kind) {
    case nn::LayerKind::kConv2d:
      j["kind"] = "conv2d";
      j["in_ch"] = s.in_ch;
      j["out_ch"] = s.out_ch;
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      j["padding"] = s.padding;
      break;
    case nn::LayerKind::kLinear:
      j["kind"] = "linear";
      j["in_features"] = s.in_features;
      j["out_features"] = s.out_features;
      break;
    case nn::LayerKind::kBatchNorm:
      j["kind"] = "batchnorm";
      j["channels"] = s.channels;
      break;
    case nn::LayerKind::kRelu:
      j["kind"] = "relu";
      break;
    case nn::LayerKind::kGap:
      j["kind"] = "gap";
      break;
    case nn::LayerKind::kFlatten:
      j["kind"] = "flatten";
      break;
  }
  return j;
}

nn::LayerSpec layer_spec_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "conv2d") {
    return nn::LayerSpec::conv2d(j.at("in_ch"), j.at("out_ch"),
                                 j.at("kernel"), j.value("stride", 1),
                                 j.value("padding", 0));
  }
  if (kind == "linear") {
    return nn::LayerSpec::linear(j.at("in_features"), j.at("out_features"));
  }
  if (kind == "batchnorm") return nn::LayerSpec::batchnorm(j.at("channels"));
  if (kind == "relu") return nn::LayerSpec::relu();
  if (kind == "gap") return nn::LayerSpec::gap();
  if (kind == "flatten") return nn::LayerSpec::flatten();
  throw std::invalid_argument("config: unknown layer kind '" + kind + "'");
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["label"] = c.label;
  json d;
  if (c.dataset.kind == DatasetConfig::Kind::kSynthetic) {
    d["kind"] = "synthetic";
    d["num_classes"] = c.dataset.synth.num_classes;
    d["per_class"] = c.dataset.synth.per_class;
    d["image_shape"] = c.dataset.synth.image_shape;
    d["noise_std"] = c.dataset.synth.noise_std;
    d["seed"] = c.dataset.synth.seed;
    d["test_fraction"] = c.dataset.synth.test_fraction;
  } else {
    d["kind"] = "cifar10_bin";
    d["train_files"] = c.dataset.cifar.train_files;
    d["test_files"] = c.dataset.cifar.test_files;
    d["train_cap"] = c.dataset.cifar.train_cap;
    d["test_cap"] = c.dataset.cifar.test_cap;
  }
  j["dataset"] = d;
  j["gamma_init"] = c.gamma_init;
  j["c"] = c.c;
  j["base_lr"] = c.base_lr;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["input_norm"] = data::input_norm_name(c.input_norm);
  j["val_fraction"] = c.val_fraction;
  j["split_seed"] = c.split_seed;
  if (c.arch == "custom") {
    json arr = json::array();
    for (const nn::LayerSpec& s : c.custom_arch) {
      arr.push_back(layer_spec_to_json(s));
    }
    j["arch"] = arr;
  } else {
    j["arch"] = c.arch;
  }
  j["affine_variant"] = bn::variant_name(c.affine_variant);
  j["augment_hflip"] = c.augment_hflip;
  if (c.seed_list.empty()) {
    j["seeds"] = c.num_seeds;
  } else {
    j["seeds"] = c.seed_list;
  }
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.label = j.value("label", c.label);
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    const std::string kind = d.value("kind", "synthetic");
    if (kind == "synthetic") {
      c.dataset.kind = DatasetConfig::Kind::kSynthetic;
      c.dataset.synth.num_classes =
          d.value("num_classes", c.dataset.synth.num_classes);
      c.dataset.synth.per_class =
          d.value("per_class", c.dataset.synth.per_class);
      if (d.contains("image_shape")) {
        const auto v = d.at("image_shape").get<std::vector<std::size_t>>();
        if (v.size() != 3) {
          throw std::invalid_argument("config: image_shape must be [C,H,W]");
        }
        c.dataset.synth.image_shape = {v[0], v[1], v[2]};
      }
      c.dataset.synth.noise_std =
          d.value("noise_std", c.dataset.synth.noise_std);
      c.dataset.synth.seed = d.value("seed", c.dataset.synth.seed);
      c.dataset.synth.test_fraction =
          d.value("test_fraction", c.dataset.synth.test_fraction);
    } else if (kind == "cifar10_bin") {
      c.dataset.kind = DatasetConfig::Kind::kCifar10;
      c.dataset.cifar.train_files =
          d.value("train_files", std::vector<std::string>{});
      c.dataset.cifar.test_files =
          d.value("test_files", std::vector<std::string>{});
      c.dataset.cifar.train_cap = d.value("train_cap", c.dataset.cifar.train_cap);
      c.dataset.cifar.test_cap = d.value("test_cap", c.dataset.cifar.test_cap);
    } else {
      throw std::invalid_argument("config: unknown dataset kind '" + kind +
                                  "'");
    }
  }
  c.gamma_init = j.value("gamma_init", c.gamma_init);
  c.c = j.value("c", c.c);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  if (j.contains("input_norm")) {
    c.input_norm =
        data::input_norm_from_name(j.at("input_norm").get<std::string>());
  }
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.split_seed = j.value("split_seed", c.split_seed);
  if (j.contains("arch")) {
    if (j.at("arch").is_array()) {
      c.arch = "custom";
      c.custom_arch.clear();
      for (const json& lj : j.at("arch")) {
        c.custom_arch.push_back(layer_spec_from_json(lj));
      }
    } else {
      c.arch = j.at("arch").get<std::string>();
    }
  }
  if (j.contains("affine_variant")) {
    c.affine_variant =
        bn::variant_from_name(j.at("affine_variant").get<std::string>());
  }
  c.augment_hflip = j.value("augment_hflip", c.augment_hflip);
  c.num_seeds = j.value("num_seeds", c.num_seeds);
  if (j.contains("seeds")) {
    if (j.at("seeds").is_array()) {
      c.seed_list = j.at("seeds").get<std::vector<std::uint64_t>>();
      c.num_seeds = c.seed_list.size();
    } else {
      c.num_seeds = j.at("seeds").get<std::size_t>();
    }
  }
  c.validate();
  return c;
}

std::vector<nn::LayerSpec> arch_specs(const ExperimentConfig& config,
                                      std::size_t in_channels,
                                      std::size_t num_classes) {
  if (config.arch == "tiny") {
    return nn::tiny_bn_net(in_channels, num_classes);
  }
  if (config.arch == "custom") return config.custom_arch;
  throw std::invalid_argument("config: unknown arch '" + config.arch + "'");
}

Tensor assemble_batch(const data::Dataset& ds,
                      const std::vector<std::size_t>& order,
                      std::size_t begin, std::size_t count,
                      std::vector<int>* labels) {
  Tensor batch =
      Tensor::uninitialized({count, ds.channels, ds.height, ds.width});
  const std::size_t stride = ds.channels * ds.height * ds.width;
  for (std::size_t i = 0; i < count; ++i) {
    const data::Dataset& src = ds;
    const Tensor& img = src.images[order[begin + i]];
    std::copy(img.data(), img.data() + stride, batch.data() + i * stride);
    if (labels) labels->push_back(src.labels[order[begin + i]]);
  }
  return batch;
}

// Class-balanced cap: keeps at most cap/10 records per CIFAR class.
void cap_dataset(data::Dataset& ds, std::size_t cap) {
  if (cap == 0 || ds.size() <= cap) return;
  const std::size_t per_class = cap / 10;
  std::vector<std::size_t> kept_count(10, 0);
  data::Dataset out;
  out.channels = ds.channels;
  out.height = ds.height;
  out.width = ds.width;
  for (std::size_t i = 0; i < ds.size() && out.size() < cap; ++i) {
    const std::size_t label = static_cast<std::size_t>(ds.labels[i]);
    if (kept_count[label] >= per_class) continue;
    ++kept_count[label];
    out.images.push_back(std::move(ds.images[i]));
    out.labels.push_back(ds.labels[i]);
  }
  ds = std::move(out);
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

json run_result_to_json(const ExperimentConfig& config,
                        const RunResult& result, bool include_wall) {
  json j;
  j["label"] = config.label;
  j["config_hash"] = config_hash(config);
  j["config"] = config_to_json(config);
  j["seed_index"] = result.seed_index;
  j["seed"] = result.seed;
  json epochs = json::array();
  for (const EpochRecord& e : result.epochs) {
    epochs.push_back({{"train_loss", e.train_loss},
                      {"val_accuracy", e.val_accuracy},
                      {"lr", e.lr}});
  }
  j["epochs"] = epochs;
  j["best_val_epoch"] = result.best_val_epoch;
  j["test_accuracy"] = result.test_accuracy;
  if (include_wall) j["wall_seconds"] = result.wall_seconds;
  return j;
}

}  // namespace

std::pair<double, Tensor> softmax_cross_entropy(
    const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.extent(0) != labels.size()) {
    throw std::invalid_argument("softmax_cross_entropy: shape mismatch");
  }
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  Tensor dlogits = Tensor::uninitialized({n, k});
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw std::invalid_argument("softmax_cross_entropy: label out of range");
    }
    double max = logits.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) max = std::max(max, logits.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits.at(i, j) - max);
    const double log_z = std::log(z) + max;
    loss += (log_z - logits.at(i, static_cast<std::size_t>(labels[i]))) * inv_n;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(logits.at(i, j) - log_z);
      dlogits.at(i, j) =
          (p - (static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0)) * inv_n;
    }
  }
  return {loss, std::move(dlogits)};
}

void ExperimentConfig::validate() const {
  if (!(gamma_init > 0.0 && gamma_init <= 1.0)) {
    throw std::invalid_argument("config: gamma_init must be in (0,1]");
  }
  if (batch_size < 2) {
    throw std::invalid_argument(
        "config: batch_size must be >= 2 (BN training needs a variance)");
  }
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (!(c >= 1.0)) throw std::invalid_argument("config: c must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("config: momentum must be in [0,1)");
  }
  if (!(weight_decay >= 0.0)) {
    throw std::invalid_argument("config: weight_decay must be >= 0");
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("config: val_fraction must be in [0,1)");
  }
}

ExperimentConfig config_from_json_text(const std::string& text) {
  return config_from_json(json::parse(text));
}

std::string config_to_json_text(const ExperimentConfig& config) {
  return config_to_json(config).dump(2);
}

std::string config_hash(const ExperimentConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(
                    fnv1a(config_to_json(config).dump())));
  return buf;
}

std::string RunResult::deterministic_fingerprint() const {
  json j;
  j["seed"] = seed;
  j["seed_index"] = seed_index;
  json epochs_j = json::array();
  for (const EpochRecord& e : epochs) {
    epochs_j.push_back({{"train_loss", e.train_loss},
                        {"val_accuracy", e.val_accuracy},
                        {"lr", e.lr}});
  }
  j["epochs"] = epochs_j;
  j["best_val_epoch"] = best_val_epoch;
  j["test_accuracy"] = test_accuracy;
  return j.dump();
}

DataBundle prepare_data(const ExperimentConfig& config) {
  DataBundle bundle;
  data::Dataset train_full;
  if (config.dataset.kind == DatasetConfig::Kind::kSynthetic) {
    const SyntheticSpec& s = config.dataset.synth;
    RngStream rng = make_rng(s.seed);
    data::Dataset all = data::synth_dataset(
        s.num_classes, s.per_class, s.image_shape, s.noise_std, rng);
    // Per-class tail becomes the test set; generation order is deterministic.
    const std::size_t test_per_class = static_cast<std::size_t>(
        std::llround(s.test_fraction * static_cast<double>(s.per_class)));
    train_full.channels = bundle.test.channels = all.channels;
    train_full.height = bundle.test.height = all.height;
    train_full.width = bundle.test.width = all.width;
    for (std::size_t c = 0; c < s.num_classes; ++c) {
      for (std::size_t i = 0; i < s.per_class; ++i) {
        const std::size_t idx = c * s.per_class + i;
        data::Dataset& side =
            (i + test_per_class >= s.per_class) ? bundle.test : train_full;
        side.images.push_back(std::move(all.images[idx]));
        side.labels.push_back(all.labels[idx]);
      }
    }
  } else {
    train_full = data::load_cifar10_bin(config.dataset.cifar.train_files);
    bundle.test = data::load_cifar10_bin(config.dataset.cifar.test_files);
    cap_dataset(train_full, config.dataset.cifar.train_cap);
    cap_dataset(bundle.test, config.dataset.cifar.test_cap);
  }

  switch (config.input_norm) {
    case data::InputNormMode::kFixed:
      data::normalize_input(train_full, data::InputNormMode::kFixed);
      data::normalize_input(bundle.test, data::InputNormMode::kFixed);
      break;
    case data::InputNormMode::kOffline: {
      // Statistics come from the training data and are applied everywhere.
      const data::ChannelStats stats = data::compute_channel_stats(train_full);
      data::apply_channel_stats(train_full, stats);
      data::apply_channel_stats(bundle.test, stats);
      break;
    }
    case data::InputNormMode::kBn:
      break;
  }

  RngStream split_rng = make_rng(config.split_seed);
  auto [train, val] =
      data::split_validation(train_full, config.val_fraction, split_rng);
  bundle.train = std::move(train);
  bundle.val = std::move(val);
  return bundle;
}

double evaluate_accuracy(nn::Network& net, const data::Dataset& ds,
                         std::size_t batch_size) {
  if (ds.size() == 0) {
    throw std::invalid_argument("evaluate_accuracy: empty dataset");
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < ds.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, ds.size() - begin);
    std::vector<int> labels;
    Tensor batch = assemble_batch(ds, order, begin, count, &labels);
    Tensor logits = net.forward(batch, nn::Mode::kEval);
    const std::size_t k = logits.extent(1);
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t arg = 0;
      for (std::size_t j = 1; j < k; ++j) {
        if (logits.at(i, j) > logits.at(i, arg)) arg = j;
      }
      if (static_cast<int>(arg) == labels[i]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) /
         static_cast<double>(ds.size());
}

RunResult run_experiment_with_network(const ExperimentConfig& config,
                                      const DataBundle& data,
                                      std::uint64_t seed,
                                      std::size_t seed_index,
                                      nn::Network* best_net_out) {
  config.validate();
  if (data.train.size() == 0) {
    throw std::invalid_argument("run_experiment: empty training set");
  }
  if (data.val.size() == 0) {
    throw std::invalid_argument(
        "run_experiment: empty validation set; best-epoch selection needs "
        "val_fraction > 0");
  }
  const auto t0 = std::chrono::steady_clock::now();

  const std::size_t num_classes = data.train.num_classes();
  const std::vector<std::size_t> input_shape{data.train.channels,
                                             data.train.height,
                                             data.train.width};
  RngStream rng = make_rng(seed);
  nn::Network net = nn::build_network(
      arch_specs(config, data.train.channels, num_classes), input_shape,
      config.gamma_init, config.input_norm == data::InputNormMode::kBn,
      config.affine_variant, rng);
  std::vector<optim::ParamGroup> groups =
      optim::build_param_groups(net, config.c, config.weight_decay);

  RunResult result;
  result.seed = seed;
  result.seed_index = seed_index;
  double best_val = -1.0;
  std::vector<double> best_state;

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr =
        optim::cosine_lr({config.base_lr, config.epochs, epoch});
    // Seeded shuffle; the stream also feeds the augmentation coins below.
    for (std::size_t i = order.size(); i-- > 1;) {
      std::swap(order[i], order[rng.next_below(i + 1)]);
    }
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += config.batch_size) {
      const std::size_t count =
          std::min(config.batch_size, order.size() - begin);
      if (count < 2) break;  // BN variance needs >= 2 per channel
      std::vector<int> labels;
      Tensor batch = assemble_batch(data.train, order, begin, count, &labels);
      if (config.augment_hflip) data::augment_hflip(batch, rng);
      Tensor logits = net.forward(batch, nn::Mode::kTrain);
      auto [loss, dlogits] = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(loss)) {
        throw std::runtime_error(
            "run_experiment: non-finite loss at epoch " +
            std::to_string(epoch) + " (seed " + std::to_string(seed) + ")");
      }
      net.backward(dlogits);
      optim::sgd_step(groups, lr, config.momentum);
      loss_sum += loss * static_cast<double>(count);
      seen += count;
    }
    EpochRecord record;
    record.lr = lr;
    record.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    record.val_accuracy =
        evaluate_accuracy(net, data.val, config.batch_size);
    result.epochs.push_back(record);
    if (record.val_accuracy > best_val) {
      best_val = record.val_accuracy;
      result.best_val_epoch = epoch;
      best_state = net.state_vector();
    }
  }

  net.load_state_vector(best_state);
  result.test_accuracy =
      evaluate_accuracy(net, data.test, config.batch_size);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (best_net_out) *best_net_out = std::move(net);
  return result;
}

RunResult run_experiment(const ExperimentConfig& config,
                         const DataBundle& data, std::uint64_t seed,
                         std::size_t seed_index) {
  return run_experiment_with_network(config, data, seed, seed_index, nullptr);
}

RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                         std::size_t seed_index) {
  const DataBundle data = prepare_data(config);
  return run_experiment(config, data, seed, seed_index);
}

SweepResult run_sweep(const ExperimentConfig& config, std::size_t num_seeds,
                      bool parallel, const std::string& results_path) {
  if (!config.seed_list.empty()) num_seeds = config.seed_list.size();
  if (num_seeds < 2) {
    throw std::invalid_argument(
        "run_sweep: need >= 2 seeds (the paired t-test needs pairs)");
  }
  const DataBundle data = prepare_data(config);

  std::vector<RunResult> results(num_seeds);
  std::vector<char> done(num_seeds, 0);
  std::vector<std::exception_ptr> errors(num_seeds);

  auto one = [&](std::size_t i) {
    try {
      const std::uint64_t seed = config.seed_list.empty()
                                     ? stats::md5_seed(i + 1)
                                     : config.seed_list[i];
      results[i] = run_experiment(config, data, seed, i + 1);
      done[i] = 1;
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

#ifdef _OPENMP
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < static_cast<long long>(num_seeds); ++i) {
      one(static_cast<std::size_t>(i));
    }
  } else {
    for (std::size_t i = 0; i < num_seeds; ++i) one(i);
  }
#else
  (void)parallel;
  for (std::size_t i = 0; i < num_seeds; ++i) one(i);
#endif

  auto persist = [&](std::size_t upto) {
    if (results_path.empty()) return;
    std::ofstream os(results_path);
    if (!os) {
      throw std::runtime_error("run_sweep: cannot write " + results_path);
    }
    std::vector<RunResult> completed;
    for (std::size_t i = 0; i < upto; ++i) {
      if (done[i]) completed.push_back(results[i]);
    }
    write_run_records(os, config, completed);
  };

  for (std::size_t i = 0; i < num_seeds; ++i) {
    if (errors[i]) {
      persist(num_seeds);  // partial results, ordered by seed index
      std::rethrow_exception(errors[i]);
    }
  }
  persist(num_seeds);

  SweepResult sweep;
  sweep.runs.label = config.label;
  for (const RunResult& r : results) {
    sweep.runs.seeds.push_back(r.seed);
    sweep.runs.accuracies.push_back(r.test_accuracy);
  }
  sweep.details = std::move(results);
  return sweep;
}

std::string run_record_json(const ExperimentConfig& config,
                            const RunResult& result) {
  return run_result_to_json(config, result, true).dump();
}

void write_run_records(std::ostream& os, const ExperimentConfig& config,
                       const std::vector<RunResult>& results) {
  for (const RunResult& r : results) {
    os << run_record_json(config, r) << '\n';
  }
}

stats::RunSet read_run_records(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("read_run_records: cannot open " + path);
  }
  struct Row {
    std::size_t index;
    std::uint64_t seed;
    double acc;
  };
  std::vector<Row> rows;
  stats::RunSet set;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (set.label.empty()) set.label = j.value("label", "");
    rows.push_back({j.at("seed_index").get<std::size_t>(),
                    j.at("seed").get<std::uint64_t>(),
                    j.at("test_accuracy").get<double>()});
  }
  std::sort(rows.begin(), rows.end(),
            [](const Row& a, const Row& b) { return a.index < b.index; });
  for (const Row& r : rows) {
    set.seeds.push_back(r.seed);
    set.accuracies.push_back(r.acc);
  }
  return set;
}

ComparisonReport compare(const std::vector<stats::RunSet>& candidates,
                         const stats::RunSet& baseline) {
  ComparisonReport report;
  ComparisonEntry base;
  base.label = baseline.label;
  base.is_baseline = true;
  const stats::Summary bs = stats::summarize(baseline);
  base.mean = bs.mean;
  base.stddev = bs.stddev;
  base.n = baseline.size();
  report.entries.push_back(base);

  for (const stats::RunSet& cand : candidates) {
    ComparisonEntry e;
    e.label = cand.label;
    const stats::Summary cs = stats::summarize(cand);
    e.mean = cs.mean;
    e.stddev = cs.stddev;
    e.n = cand.size();
    e.ttest = stats::one_sided_paired_ttest(cand, baseline);
    e.significant = e.ttest.significant;
    report.entries.push_back(e);
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < report.entries.size(); ++i) {
    if (report.entries[i].mean > report.entries[best].mean) best = i;
  }
  report.entries[best].best_mean = true;
  return report;
}

std::string comparison_table(const ComparisonReport& report) {
  std::ostringstream os;
  os << "config                    mean    std      t        p  sig best\n";
  for (const ComparisonEntry& e : report.entries) {
    char line[160];
    if (e.is_baseline) {
      std::snprintf(line, sizeof(line),
                    "%-22s %7.2f %6.2f %8s %8s  %-3s %s\n", e.label.c_str(),
                    e.mean, e.stddev, "-", "-", "-",
                    e.best_mean ? "*" : "");
    } else {
      std::snprintf(line, sizeof(line),
                    "%-22s %7.2f %6.2f %8.4f %8.4f  %-3s %s\n",
                    e.label.c_str(), e.mean, e.stddev, e.ttest.t_statistic,
                    e.ttest.p_value, e.significant ? "yes" : "no",
                    e.best_mean ? "*" : "");
    }
    os << line;
  }
  return os.str();
}

std::string comparison_json(const ComparisonReport& report) {
  json arr = json::array();
  for (const ComparisonEntry& e : report.entries) {
    json j;
    j["label"] = e.label;
    j["mean"] = e.mean;
    j["stddev"] = e.stddev;
    j["n"] = e.n;
    j["is_baseline"] = e.is_baseline;
    j["best_mean"] = e.best_mean;
    if (!e.is_baseline) {
      j["t_statistic"] = e.ttest.t_statistic;
      j["p_value"] = e.ttest.p_value;
      j["significant"] = e.significant;
      j["mean_difference"] = e.ttest.mean_difference;
      j["degrees_of_freedom"] = e.ttest.degrees_of_freedom;
    }
    arr.push_back(j);
  }
  return json{{"comparison", arr}}.dump(2);
}

std::string results_dir_from_env() {
  const char* dir = std::getenv("BNKIT_RESULTS_DIR");
  return dir ? dir : "results";
}

}  // namespace bnkit::harness
