#include "bnkit/kernels.hpp"

#include <atomic>
#include <cstring>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace bnkit::kernels {

namespace {

std::atomic<Exec> g_default_exec{
#ifdef _OPENMP
    Exec::kParallel
#else
    Exec::kSerial
#endif
};

// Register-tile microkernel: an MR x NR tile of C is accumulated in
// registers across the full k loop. NR spans whole vector registers, so the
// k loop carries NR independent chains per row and vectorizes without
// reassociation; the summation order per element is fixed.
template <int MR, int NR>
inline void tile_kernel(const double* a, const double* b, double* c,
                        std::size_t kk, std::size_t n, std::size_t lda,
                        bool accumulate) {
  double acc[MR][NR];
  if (accumulate) {
    for (int r = 0; r < MR; ++r)
      for (int j = 0; j < NR; ++j) acc[r][j] = c[r * n + j];
  } else {
    for (int r = 0; r < MR; ++r)
      for (int j = 0; j < NR; ++j) acc[r][j] = 0.0;
  }
  for (std::size_t k = 0; k < kk; ++k) {
    const double* bk = b + k * n;
    for (int r = 0; r < MR; ++r) {
      const double ar = a[r * lda + k];
      for (int j = 0; j < NR; ++j) acc[r][j] += ar * bk[j];
    }
  }
  for (int r = 0; r < MR; ++r)
    for (int j = 0; j < NR; ++j) c[r * n + j] = acc[r][j];
}

// One strip of MR rows of C, all columns.
template <int MR>
void row_strip(const double* a, const double* b, double* c, std::size_t kk,
               std::size_t n, std::size_t lda, bool accumulate) {
  std::size_t j = 0;
  for (; j + 32 <= n; j += 32)
    tile_kernel<MR, 32>(a, b + j, c + j, kk, n, lda, accumulate);
  for (; j + 8 <= n; j += 8)
    tile_kernel<MR, 8>(a, b + j, c + j, kk, n, lda, accumulate);
  for (; j < n; ++j) {
    for (int r = 0; r < MR; ++r) {
      double s = accumulate ? c[r * n + j] : 0.0;
      for (std::size_t k = 0; k < kk; ++k) s += a[r * lda + k] * b[k * n + j];
      c[r * n + j] = s;
    }
  }
}

}  // namespace

Exec default_exec() { return g_default_exec.load(std::memory_order_relaxed); }

void set_default_exec(Exec exec) {
  g_default_exec.store(exec, std::memory_order_relaxed);
}

void tune_host_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

void matmul_nn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate, Exec exec) {
  const std::size_t full = m / 4;
  const std::size_t strips = full + (m % 4 != 0 ? 1 : 0);
  parallel_for(strips, exec, [&](std::size_t s) {
    const std::size_t i = s * 4;
    if (s < full) {
      row_strip<4>(a + i * k, b, c + i * n, k, n, k, accumulate);
    } else {
      for (std::size_t r = i; r < m; ++r)
        row_strip<1>(a + r * k, b, c + r * n, k, n, k, accumulate);
    }
  });
}

void transpose(const double* in, double* out, std::size_t m, std::size_t n,
               Exec exec) {
  parallel_for(m, exec, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  });
}

void im2col(const double* x, double* cols, const Conv2dGeom& g, Exec exec) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t p = g.patches(), kd = g.k_dim();
  const long long ih = static_cast<long long>(g.in_h);
  const long long iw = static_cast<long long>(g.in_w);
  parallel_for(g.batch, exec, [&](std::size_t img) {
    const double* xi = x + img * g.in_ch * g.in_h * g.in_w;
    double* ci = cols + img * kd * p;
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_ch; ++c) {
      for (std::size_t kh = 0; kh < g.kernel; ++kh) {
        for (std::size_t kw = 0; kw < g.kernel; ++kw, ++row) {
          double* dst = ci + row * p;
          const double* src = xi + c * g.in_h * g.in_w;
          for (std::size_t y = 0; y < oh; ++y) {
            const long long sy = static_cast<long long>(y * g.stride + kh) -
                                 static_cast<long long>(g.padding);
            for (std::size_t z = 0; z < ow; ++z) {
              const long long sx = static_cast<long long>(z * g.stride + kw) -
                                   static_cast<long long>(g.padding);
              dst[y * ow + z] = (sy >= 0 && sy < ih && sx >= 0 && sx < iw)
                                    ? src[sy * iw + sx]
                                    : 0.0;
            }
          }
        }
      }
    }
  });
}

void col2im(const double* cols, double* x, const Conv2dGeom& g, Exec exec) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t p = g.patches(), kd = g.k_dim();
  const long long ih = static_cast<long long>(g.in_h);
  const long long iw = static_cast<long long>(g.in_w);
  parallel_for(g.batch, exec, [&](std::size_t img) {
    const double* ci = cols + img * kd * p;
    double* xi = x + img * g.in_ch * g.in_h * g.in_w;
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_ch; ++c) {
      for (std::size_t kh = 0; kh < g.kernel; ++kh) {
        for (std::size_t kw = 0; kw < g.kernel; ++kw, ++row) {
          const double* src = ci + row * p;
          double* dst = xi + c * g.in_h * g.in_w;
          for (std::size_t y = 0; y < oh; ++y) {
            const long long sy = static_cast<long long>(y * g.stride + kh) -
                                 static_cast<long long>(g.padding);
            if (sy < 0 || sy >= ih) continue;
            for (std::size_t z = 0; z < ow; ++z) {
              const long long sx = static_cast<long long>(z * g.stride + kw) -
                                   static_cast<long long>(g.padding);
              if (sx >= 0 && sx < iw) dst[sy * iw + sx] += src[y * ow + z];
            }
          }
        }
      }
    }
  });
}

void channel_stats(const double* x, std::size_t n, std::size_t channels,
                   std::size_t spatial, double* mean, double* var, Exec exec) {
  const double count = static_cast<double>(n * spatial);
  parallel_for(channels, exec, [&](std::size_t c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = x + (i * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) sum += row[s];
    }
    const double mu = sum / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = x + (i * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        const double d = row[s] - mu;
        sq += d * d;
      }
    }
    mean[c] = mu;
    var[c] = sq / count;
  });
}

}  // namespace bnkit::kernels
