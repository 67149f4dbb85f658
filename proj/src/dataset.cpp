#include "bnkit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace bnkit::data {

namespace {

constexpr std::size_t kCifarDim = 32;
constexpr std::size_t kCifarChannels = 3;
constexpr std::size_t kCifarRecord = 1 + kCifarChannels * kCifarDim * kCifarDim;

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  return by_class;
}

}  // namespace

std::size_t Dataset::num_classes() const {
  int max_label = -1;
  for (int l : labels) max_label = std::max(max_label, l);
  return static_cast<std::size_t>(max_label + 1);
}

Dataset load_cifar10_bin(const std::vector<std::string>& paths) {
  Dataset ds;
  ds.channels = kCifarChannels;
  ds.height = kCifarDim;
  ds.width = kCifarDim;
  for (const std::string& path : paths) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
      throw std::runtime_error("load_cifar10_bin: cannot open " + path);
    }
    f.seekg(0, std::ios::end);
    const std::streamoff bytes = f.tellg();
    f.seekg(0, std::ios::beg);
    if (bytes <= 0 || bytes % static_cast<std::streamoff>(kCifarRecord) != 0) {
      throw std::runtime_error("load_cifar10_bin: " + path + " length " +
                               std::to_string(bytes) +
                               " is not a multiple of 3073");
    }
    const std::size_t records = static_cast<std::size_t>(bytes) / kCifarRecord;
    std::vector<unsigned char> record(kCifarRecord);
    for (std::size_t r = 0; r < records; ++r) {
      f.read(reinterpret_cast<char*>(record.data()), kCifarRecord);
      if (!f) {
        throw std::runtime_error("load_cifar10_bin: short read in " + path);
      }
      if (record[0] > 9) {
        throw std::runtime_error("load_cifar10_bin: label byte " +
                                 std::to_string(record[0]) + " out of range");
      }
      Tensor img({kCifarChannels, kCifarDim, kCifarDim});
      for (std::size_t i = 0; i + 1 < kCifarRecord; ++i) {
        img[i] = static_cast<double>(record[i + 1]);
      }
      ds.images.push_back(std::move(img));
      ds.labels.push_back(record[0]);
    }
  }
  return ds;
}

void save_cifar10_bin(const Dataset& ds, const std::string& path) {
  if (ds.channels != kCifarChannels || ds.height != kCifarDim ||
      ds.width != kCifarDim) {
    throw std::invalid_argument("save_cifar10_bin: dataset is not 3x32x32");
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw std::runtime_error("save_cifar10_bin: cannot open " + path);
  }
  std::vector<unsigned char> record(kCifarRecord);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] < 0 || ds.labels[i] > 9) {
      throw std::invalid_argument("save_cifar10_bin: label out of [0,9]");
    }
    record[0] = static_cast<unsigned char>(ds.labels[i]);
    const Tensor& img = ds.images[i];
    for (std::size_t p = 0; p < img.size(); ++p) {
      const double v = img[p];
      if (v != std::floor(v) || v < 0.0 || v > 255.0) {
        throw std::invalid_argument(
            "save_cifar10_bin: pixel is not a byte value");
      }
      record[p + 1] = static_cast<unsigned char>(v);
    }
    f.write(reinterpret_cast<const char*>(record.data()), kCifarRecord);
  }
  if (!f) throw std::runtime_error("save_cifar10_bin: write failed");
}

Dataset synth_dataset(std::size_t num_classes, std::size_t per_class,
                      std::array<std::size_t, 3> image_shape,
                      double noise_std, RngStream& rng) {
  if (num_classes == 0 || per_class < 2) {
    throw std::invalid_argument(
        "synth_dataset: need >= 1 class and >= 2 examples per class");
  }
  Dataset ds;
  ds.channels = image_shape[0];
  ds.height = image_shape[1];
  ds.width = image_shape[2];
  const std::vector<std::size_t> shape{image_shape[0], image_shape[1],
                                       image_shape[2]};
  // Pattern std 0.8 with noise 0.6 keeps per-pixel variance near 1.
  const double pattern_std = 0.8;
  std::vector<Tensor> patterns;
  patterns.reserve(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    patterns.push_back(randn(shape, 0.0, pattern_std, rng));
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Tensor img = randn(shape, 0.0, noise_std, rng);
      for (std::size_t p = 0; p < img.size(); ++p) img[p] += patterns[c][p];
      ds.images.push_back(std::move(img));
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

void quantize_to_bytes(Dataset& ds) {
  for (Tensor& img : ds.images) {
    for (std::size_t p = 0; p < img.size(); ++p) {
      // +0.0 turns a rounded -0 into +0 so byte round-trips are bit-exact.
      img[p] =
          std::clamp(std::round(128.0 + 64.0 * img[p]), 0.0, 255.0) + 0.0;
    }
  }
}

std::pair<Dataset, Dataset> split_validation(const Dataset& ds,
                                             double fraction,
                                             RngStream& rng) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("split_validation: fraction must be in [0,1)");
  }
  Dataset train, val;
  train.channels = val.channels = ds.channels;
  train.height = val.height = ds.height;
  train.width = val.width = ds.width;
  if (fraction == 0.0) {
    train.images = ds.images;
    train.labels = ds.labels;
    return {std::move(train), std::move(val)};
  }
  for (auto& idx : indices_by_class(ds)) {
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      throw std::invalid_argument(
          "split_validation: a class has fewer than 2 examples");
    }
    // Seeded Fisher-Yates, then the tail goes to validation.
    for (std::size_t i = idx.size(); i-- > 1;) {
      std::swap(idx[i], idx[rng.next_below(i + 1)]);
    }
    std::size_t take = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(idx.size())));
    take = std::clamp<std::size_t>(take, 1, idx.size() - 1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Dataset& side = (i < idx.size() - take) ? train : val;
      side.images.push_back(ds.images[idx[i]]);
      side.labels.push_back(ds.labels[idx[i]]);
    }
  }
  return {std::move(train), std::move(val)};
}

void hflip_image(Tensor& image) {
  if (image.rank() != 3) {
    throw std::invalid_argument("hflip_image: image must be (C,H,W)");
  }
  const std::size_t c = image.extent(0), h = image.extent(1),
                    w = image.extent(2);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      double* row = image.data() + (ch * h + y) * w;
      std::reverse(row, row + w);
    }
  }
}

void augment_hflip(Tensor& batch, RngStream& rng) {
  if (batch.rank() != 4) {
    throw std::invalid_argument("augment_hflip: batch must be (N,C,H,W)");
  }
  const std::size_t n = batch.extent(0), c = batch.extent(1),
                    h = batch.extent(2), w = batch.extent(3);
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.next_uniform() >= 0.5) continue;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        double* row = batch.data() + ((i * c + ch) * h + y) * w;
        std::reverse(row, row + w);
      }
    }
  }
}

InputNormMode input_norm_from_name(const std::string& name) {
  if (name == "fixed") return InputNormMode::kFixed;
  if (name == "offline") return InputNormMode::kOffline;
  if (name == "bn") return InputNormMode::kBn;
  throw std::invalid_argument("unknown input normalization mode: " + name);
}

const char* input_norm_name(InputNormMode mode) {
  switch (mode) {
    case InputNormMode::kFixed: return "fixed";
    case InputNormMode::kOffline: return "offline";
    case InputNormMode::kBn: return "bn";
  }
  return "?";
}

ChannelStats compute_channel_stats(const Dataset& ds) {
  ChannelStats stats;
  stats.mean.assign(ds.channels, 0.0);
  stats.stddev.assign(ds.channels, 1.0);
  if (ds.size() == 0) return stats;
  const std::size_t hw = ds.height * ds.width;
  const double count = static_cast<double>(ds.size() * hw);
  for (const Tensor& img : ds.images) {
    for (std::size_t c = 0; c < ds.channels; ++c) {
      for (std::size_t p = 0; p < hw; ++p) stats.mean[c] += img[c * hw + p];
    }
  }
  for (double& m : stats.mean) m /= count;
  std::vector<double> var(ds.channels, 0.0);
  for (const Tensor& img : ds.images) {
    for (std::size_t c = 0; c < ds.channels; ++c) {
      for (std::size_t p = 0; p < hw; ++p) {
        const double d = img[c * hw + p] - stats.mean[c];
        var[c] += d * d;
      }
    }
  }
  for (std::size_t c = 0; c < ds.channels; ++c) {
    stats.stddev[c] = std::max(std::sqrt(var[c] / count), 1e-6);
  }
  return stats;
}

void apply_channel_stats(Dataset& ds, const ChannelStats& stats) {
  const std::size_t hw = ds.height * ds.width;
  for (Tensor& img : ds.images) {
    for (std::size_t c = 0; c < ds.channels; ++c) {
      for (std::size_t p = 0; p < hw; ++p) {
        img[c * hw + p] = (img[c * hw + p] - stats.mean[c]) / stats.stddev[c];
      }
    }
  }
}

void normalize_input(Dataset& ds, InputNormMode mode) {
  switch (mode) {
    case InputNormMode::kFixed:
      for (Tensor& img : ds.images) {
        for (std::size_t p = 0; p < img.size(); ++p) {
          img[p] = (img[p] - 128.0) / 128.0;
        }
      }
      return;
    case InputNormMode::kOffline:
      apply_channel_stats(ds, compute_channel_stats(ds));
      return;
    case InputNormMode::kBn:
      return;  // the prepended BN handles it online
  }
}

}  // namespace bnkit::data
