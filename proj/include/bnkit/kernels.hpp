#pragma once

#include <cstddef>

// Low-level numeric kernels. Every kernel has one inner routine shared by the
// serial and the OpenMP path; threads only partition independent output
// blocks (row tiles, images, channels) and never split a floating-point
// reduction, so Exec::Parallel produces bit-identical results to
// Exec::Serial under any thread count. tests/test_kernels.cpp asserts this.

namespace bnkit::kernels {

enum class Exec { kSerial, kParallel };

// Process-wide default used by the layers. Parallel when built with OpenMP.
Exec default_exec();
void set_default_exec(Exec exec);

// Keeps large allocations on the malloc heap instead of per-call mmap so
// the big per-batch buffers recycle without page faults. Call once at
// process start; a no-op off glibc.
void tune_host_allocator();

// Runs f(0..n-1); iterations must be independent.
template <typename F>
void parallel_for(std::size_t n, Exec exec, F&& f) {
#ifdef _OPENMP
  if (exec == Exec::kParallel) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      f(static_cast<std::size_t>(i));
    }
    return;
  }
#else
  (void)exec;
#endif
  for (std::size_t i = 0; i < n; ++i) f(i);
}

// c (m x n) = a (m x k) * b (k x n), row-major. accumulate adds into c.
void matmul_nn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate, Exec exec);

// out (n x m) = transpose of in (m x n).
void transpose(const double* in, double* out, std::size_t m, std::size_t n,
               Exec exec);

struct Conv2dGeom {
  std::size_t batch = 0;
  std::size_t in_ch = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_ch = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
  std::size_t k_dim() const { return in_ch * kernel * kernel; }
  std::size_t patches() const { return out_h() * out_w(); }
  bool valid() const {
    return kernel >= 1 && stride >= 1 && in_h + 2 * padding >= kernel &&
           in_w + 2 * padding >= kernel;
  }
};

// x: NCHW batch. cols: per-image (k_dim x patches) blocks, image-major.
// Out-of-range taps read as zero.
void im2col(const double* x, double* cols, const Conv2dGeom& g, Exec exec);

// Adjoint of im2col: scatter-adds cols back into x. Caller zeroes x.
void col2im(const double* cols, double* x, const Conv2dGeom& g, Exec exec);

// Per-channel mean and biased variance (divisor n*spatial) of an
// (n x channels x spatial) view. Two-pass.
void channel_stats(const double* x, std::size_t n, std::size_t channels,
                   std::size_t spatial, double* mean, double* var, Exec exec);

}  // namespace bnkit::kernels
