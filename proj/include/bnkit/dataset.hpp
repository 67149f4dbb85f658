#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "bnkit/tensor.hpp"

namespace bnkit::data {

struct Dataset {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<Tensor> images;  // each (C,H,W)
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
  std::size_t num_classes() const;
};

// Standard CIFAR-10 binary layout: 3073-byte records, 1 label byte (0-9)
// followed by 3072 pixel bytes (R plane, G plane, B plane, 32x32 row-major).
// Pixels come back as raw byte values 0-255.
Dataset load_cifar10_bin(const std::vector<std::string>& paths);

// Writes a dataset in the same record layout. Every pixel must already be
// an integer in [0,255] and every label in [0,9].
void save_cifar10_bin(const Dataset& ds, const std::string& path);

// Class-conditional Gaussian blobs: one fixed mean pattern per class plus
// i.i.d. noise. Pattern std and noise std are chosen so per-channel variance
// is about 1. Easy enough that a nearest-mean rule is near-perfect at small
// noise.
Dataset synth_dataset(std::size_t num_classes, std::size_t per_class,
                      std::array<std::size_t, 3> image_shape,
                      double noise_std, RngStream& rng);

// Rescales a float dataset onto byte values (x -> clamp(round(128 + 64*x)))
// so it can round-trip the CIFAR-10 binary format.
void quantize_to_bytes(Dataset& ds);

// Class-wise split: round(fraction * n_c) examples of every class move to
// the validation side (at least 1 kept per side when fraction > 0).
std::pair<Dataset, Dataset> split_validation(const Dataset& ds,
                                             double fraction, RngStream& rng);

// Mirrors one (C,H,W) image left-right, in place.
void hflip_image(Tensor& image);

// Independently mirrors each image of a (N,C,H,W) batch with probability
// 0.5, consuming one uniform draw per image.
void augment_hflip(Tensor& batch, RngStream& rng);

enum class InputNormMode { kFixed, kOffline, kBn };

InputNormMode input_norm_from_name(const std::string& name);
const char* input_norm_name(InputNormMode mode);

struct ChannelStats {
  std::vector<double> mean, stddev;
};
// Per-channel mean/std over the whole dataset; std floored at 1e-6.
ChannelStats compute_channel_stats(const Dataset& ds);
void apply_channel_stats(Dataset& ds, const ChannelStats& stats);

// fixed: (x-128)/128 per the 8-bit convention. offline: per-channel dataset
// mean/std computed once (std floored at 1e-6). bn: leaves the data alone;
// the network's prepended BN normalizes online.
void normalize_input(Dataset& ds, InputNormMode mode);

}  // namespace bnkit::data
