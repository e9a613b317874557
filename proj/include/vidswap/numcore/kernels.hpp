#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "vidswap/numcore/tensor.hpp"

// Hot inner loops. Every kernel has an OpenMP-parallel implementation here
// and a naive serial reference under kern::ref used by tests and the
// bench_kernels target. Parallelism is always over disjoint output elements
// and the per-element accumulation order is fixed, so results do not depend
// on the thread count.
namespace vidswap::numcore::kern {

int jobs();
void set_jobs(int n);

// Branchless polynomial expf (~2 ulp), written so the compiler can vectorize
// it under omp simd; libm's expf only gets a vector version under fast-math.
inline float fast_expf(float x) {
  x = std::min(88.0f, std::max(-87.0f, x));
  const float log2e = 1.4426950408889634f;
  const float ln2_hi = 0.693145751953125f;
  const float ln2_lo = 1.42860677e-06f;
  const float round_magic = 12582912.0f;  // 1.5 * 2^23, forces round-to-nearest
  const float nf = (x * log2e + round_magic) - round_magic;
  const float r = (x - nf * ln2_hi) - nf * ln2_lo;
  // degree-5 minimax on [-0.35, 0.35]
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const std::int32_t bits = (static_cast<std::int32_t>(nf) + 127) << 23;
  float scale;
  __builtin_memcpy(&scale, &bits, 4);
  return p * scale;
}

template <typename T>
inline T exp_eval(T x) {
  if constexpr (std::is_same_v<T, float>)
    return fast_expf(x);
  else
    return std::exp(x);
}

#if defined(__AVX512F__)
// 16-lane fast_expf, identical per-element math to the scalar version
inline __m512 expf_lane(__m512 v) {
  v = _mm512_min_ps(_mm512_set1_ps(88.0f), _mm512_max_ps(_mm512_set1_ps(-87.0f), v));
  const __m512 magic = _mm512_set1_ps(12582912.0f);
  const __m512 nf =
      _mm512_sub_ps(_mm512_fmadd_ps(v, _mm512_set1_ps(1.4426950408889634f), magic), magic);
  __m512 r = _mm512_fnmadd_ps(nf, _mm512_set1_ps(0.693145751953125f), v);
  r = _mm512_fnmadd_ps(nf, _mm512_set1_ps(1.42860677e-06f), r);
  __m512 p = _mm512_set1_ps(1.9875691500e-4f);
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(1.3981999507e-3f));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(8.3334519073e-3f));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(4.1665795894e-2f));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(1.6666665459e-1f));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(5.0000001201e-1f));
  p = _mm512_fmadd_ps(_mm512_mul_ps(p, r), r, _mm512_add_ps(r, _mm512_set1_ps(1.0f)));
  const __m512i bits = _mm512_slli_epi32(
      _mm512_add_epi32(_mm512_cvtps_epi32(nf), _mm512_set1_epi32(127)), 23);
  return _mm512_mul_ps(p, _mm512_castsi512_ps(bits));
}
#endif

// y[i] = exp(a * x[i] + shift)
template <typename T>
inline void exp_buf(const T* __restrict x, T* __restrict y, index_t n, T a, T shift) {
  if constexpr (std::is_same_v<T, float>) {
#if defined(__AVX512F__)
    const __m512 sh = _mm512_set1_ps(shift);
    const __m512 av = _mm512_set1_ps(a);
    index_t i = 0;
    for (; i + 16 <= n; i += 16)
      _mm512_storeu_ps(y + i, expf_lane(_mm512_fmadd_ps(_mm512_loadu_ps(x + i), av, sh)));
    if (i < n) {
      const __mmask16 m = static_cast<__mmask16>((1u << (n - i)) - 1);
      _mm512_mask_storeu_ps(
          y + i, m, expf_lane(_mm512_fmadd_ps(_mm512_maskz_loadu_ps(m, x + i), av, sh)));
    }
#else
    for (index_t i = 0; i < n; ++i) y[i] = fast_expf(a * x[i] + shift);
#endif
  } else {
    for (index_t i = 0; i < n; ++i) y[i] = std::exp(a * x[i] + shift);
  }
}

template <typename T>
inline T tanh_eval(T x) {
  if constexpr (std::is_same_v<T, float>) {
    const float e2 = fast_expf(2.0f * x);
    return (e2 - 1.0f) / (e2 + 1.0f);
  } else {
    return std::tanh(x);
  }
}

// ---------------------------------------------------------------------------
// GEMM family. C is overwritten.
//   gemm_nn: C[m,n] = A[m,k] * B[k,n]
//   gemm_nt: C[m,n] = A[m,k] * B[n,k]^T
//   gemm_tn: C[m,n] = A[k,m]^T * B[k,n]
// Accumulation over k is ascending for every output element, matching the
// naive reference bit for bit.
// ---------------------------------------------------------------------------

template <typename T>
void gemm_nn(const T* __restrict a, const T* __restrict b, T* __restrict c,
             index_t m, index_t k, index_t n) {
  // 4-row tiles stream B once per tile instead of once per row; the k loop
  // stays ascending per output element, bitwise-matching the naive reference
  const index_t m4 = m - m % 4;
#pragma omp parallel for if (jobs() > 1) num_threads(jobs()) schedule(static)
  for (index_t i = 0; i < m4; i += 4) {
    T* __restrict c0 = c + (i + 0) * n;
    T* __restrict c1 = c + (i + 1) * n;
    T* __restrict c2 = c + (i + 2) * n;
    T* __restrict c3 = c + (i + 3) * n;
    for (index_t j = 0; j < n; ++j) c0[j] = c1[j] = c2[j] = c3[j] = T(0);
    const T* __restrict a0 = a + (i + 0) * k;
    const T* __restrict a1 = a + (i + 1) * k;
    const T* __restrict a2 = a + (i + 2) * k;
    const T* __restrict a3 = a + (i + 3) * k;
    for (index_t p = 0; p < k; ++p) {
      const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      const T* __restrict brow = b + p * n;
#pragma omp simd
      for (index_t j = 0; j < n; ++j) {
        const T bv = brow[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (index_t i = m4; i < m; ++i) {
    T* __restrict crow = c + i * n;
    for (index_t j = 0; j < n; ++j) crow[j] = T(0);
    const T* __restrict arow = a + i * k;
    for (index_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* __restrict brow = b + p * n;
#pragma omp simd
      for (index_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(const T* __restrict a, const T* __restrict b, T* __restrict c,
             index_t m, index_t k, index_t n) {
  // transpose b once, then run the j-vectorized nn loops; per-element
  // accumulation order stays ascending in k, matching the naive reference
  std::vector<T> bt(static_cast<std::size_t>(k) * n);
  for (index_t j = 0; j < n; ++j)
    for (index_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n);
}

template <typename T>
void gemm_tn(const T* __restrict a, const T* __restrict b, T* __restrict c,
             index_t m, index_t k, index_t n) {
#pragma omp parallel for if (jobs() > 1) num_threads(jobs()) schedule(static)
  for (index_t i = 0; i < m; ++i) {
    T* __restrict crow = c + i * n;
    for (index_t j = 0; j < n; ++j) crow[j] = T(0);
    for (index_t p = 0; p < k; ++p) {
      const T av = a[p * m + i];
      const T* __restrict brow = b + p * n;
#pragma omp simd
      for (index_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

namespace ref {

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, index_t m, index_t k, index_t n) {
  for (index_t i = 0; i < m; ++i)
    for (index_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (index_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, index_t m, index_t k, index_t n) {
  for (index_t i = 0; i < m; ++i)
    for (index_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (index_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, index_t m, index_t k, index_t n) {
  for (index_t i = 0; i < m; ++i)
    for (index_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (index_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

}  // namespace ref

// ---------------------------------------------------------------------------
// Row-wise softmax / layernorm
// ---------------------------------------------------------------------------

template <typename T>
void softmax_rows(const T* x, T* y, index_t rows, index_t d) {
#pragma omp parallel for if (jobs() > 1 && rows > 1) num_threads(jobs()) schedule(static)
  for (index_t r = 0; r < rows; ++r) {
    const T* __restrict xr = x + r * d;
    T* __restrict yr = y + r * d;
    T mx = xr[0];
#pragma omp simd reduction(max : mx)
    for (index_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    exp_buf(xr, yr, d, T(1), -mx);
    T sum = T(0);
#pragma omp simd reduction(+ : sum)
    for (index_t j = 0; j < d; ++j) sum += yr[j];
    const T inv = T(1) / sum;
#pragma omp simd
    for (index_t j = 0; j < d; ++j) yr[j] *= inv;
  }
}

// gx_i = y_i * (g_i - sum_j g_j y_j)
template <typename T>
void softmax_rows_backward(const T* y, const T* gy, T* gx, index_t rows, index_t d) {
#pragma omp parallel for if (jobs() > 1 && rows > 1) num_threads(jobs()) schedule(static)
  for (index_t r = 0; r < rows; ++r) {
    const T* yr = y + r * d;
    const T* gr = gy + r * d;
    T* o = gx + r * d;
    T dot = T(0);
#pragma omp simd reduction(+ : dot)
    for (index_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
#pragma omp simd
    for (index_t j = 0; j < d; ++j) o[j] = yr[j] * (gr[j] - dot);
  }
}

// y = (x - mean)/sqrt(var + eps), population variance; inv_std saved per row
template <typename T>
void layernorm_rows(const T* x, T* y, T* inv_std, index_t rows, index_t d, T eps) {
#pragma omp parallel for if (jobs() > 1 && rows > 1) num_threads(jobs()) schedule(static)
  for (index_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T* yr = y + r * d;
    T mean = T(0);
#pragma omp simd reduction(+ : mean)
    for (index_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = T(0);
#pragma omp simd reduction(+ : var)
    for (index_t j = 0; j < d; ++j) {
      const T c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (index_t j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * is;
  }
}

// gx = inv_std * (g - mean(g) - y * mean(g*y))
template <typename T>
void layernorm_rows_backward(const T* y, const T* inv_std, const T* gy, T* gx,
                             index_t rows, index_t d) {
#pragma omp parallel for if (jobs() > 1 && rows > 1) num_threads(jobs()) schedule(static)
  for (index_t r = 0; r < rows; ++r) {
    const T* yr = y + r * d;
    const T* gr = gy + r * d;
    T* o = gx + r * d;
    T gmean = T(0), gymean = T(0);
#pragma omp simd reduction(+ : gmean, gymean)
    for (index_t j = 0; j < d; ++j) {
      gmean += gr[j];
      gymean += gr[j] * yr[j];
    }
    gmean /= static_cast<T>(d);
    gymean /= static_cast<T>(d);
    const T is = inv_std[r];
    for (index_t j = 0; j < d; ++j) o[j] = is * (gr[j] - gmean - yr[j] * gymean);
  }
}

// ---------------------------------------------------------------------------
// Rotary position embedding over 3 axes (chunk, row, col). d % 6 == 0; each
// axis owns d/3 consecutive dims holding d/6 (cos,sin) pairs. sign=-1 applies
// the inverse rotation (used by the backward pass).
// ---------------------------------------------------------------------------

template <typename T>
void rope_rows(const T* x, T* y, const std::array<int, 3>* idx, index_t n, index_t d,
               int sign) {
  const index_t pairs = d / 6;
  // positions repeat heavily across tokens; precompute (cos,sin) tables over
  // the encountered position range per axis
  int lo[3] = {0, 0, 0}, hi[3] = {0, 0, 0};
  for (index_t t = 0; t < n; ++t)
    for (int ax = 0; ax < 3; ++ax) {
      lo[ax] = std::min(lo[ax], idx[t][ax]);
      hi[ax] = std::max(hi[ax], idx[t][ax]);
    }
  std::vector<double> freqs(pairs);
  for (index_t j = 0; j < pairs; ++j)
    freqs[j] = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(pairs));
  std::vector<T> tab[3];  // per axis: [pos - lo][pair][cos,sin]
  for (int ax = 0; ax < 3; ++ax) {
    const int span = hi[ax] - lo[ax] + 1;
    tab[ax].resize(static_cast<std::size_t>(span) * pairs * 2);
    for (int p = 0; p < span; ++p)
      for (index_t j = 0; j < pairs; ++j) {
        const double ang = static_cast<double>(p + lo[ax]) * sign * freqs[j];
        tab[ax][(p * pairs + j) * 2] = static_cast<T>(std::cos(ang));
        tab[ax][(p * pairs + j) * 2 + 1] = static_cast<T>(std::sin(ang));
      }
  }
#pragma omp parallel for if (jobs() > 1 && n > 1) num_threads(jobs()) schedule(static)
  for (index_t t = 0; t < n; ++t) {
    const T* xr = x + t * d;
    T* yr = y + t * d;
    for (int ax = 0; ax < 3; ++ax) {
      const index_t off = ax * 2 * pairs;
      const T* row = tab[ax].data() + static_cast<std::size_t>(idx[t][ax] - lo[ax]) * pairs * 2;
      for (index_t j = 0; j < pairs; ++j) {
        const T c = row[2 * j];
        const T s = row[2 * j + 1];
        const T x0 = xr[off + 2 * j];
        const T x1 = xr[off + 2 * j + 1];
        yr[off + 2 * j] = x0 * c - x1 * s;
        yr[off + 2 * j + 1] = x0 * s + x1 * c;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// 2D convolution, NCHW single image: x[Cin,H,W] * w[Cout,Cin,kh,kw] -> y[Cout,Ho,Wo]
// ---------------------------------------------------------------------------

inline index_t conv_out(index_t in, index_t k, index_t stride, index_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// patch matrix for im2col: [ho*wo, cin*kh*kw], zero padded
template <typename T>
void im2col(const T* x, T* col, index_t cin, index_t h, index_t wd, index_t kh, index_t kw,
            index_t stride, index_t pad) {
  const index_t ho = conv_out(h, kh, stride, pad);
  const index_t wo = conv_out(wd, kw, stride, pad);
  const index_t K = cin * kh * kw;
  for (index_t oy = 0; oy < ho; ++oy)
    for (index_t ox = 0; ox < wo; ++ox) {
      T* row = col + (oy * wo + ox) * K;
      index_t q = 0;
      for (index_t ci = 0; ci < cin; ++ci)
        for (index_t ky = 0; ky < kh; ++ky) {
          const index_t iy = oy * stride - pad + ky;
          for (index_t kx = 0; kx < kw; ++kx, ++q) {
            const index_t ix = ox * stride - pad + kx;
            row[q] = (iy < 0 || iy >= h || ix < 0 || ix >= wd) ? T(0)
                                                               : x[(ci * h + iy) * wd + ix];
          }
        }
    }
}

template <typename T>
void conv2d(const T* x, const T* w, const T* bias, T* y, index_t cin, index_t h, index_t wd,
            index_t cout, index_t kh, index_t kw, index_t stride, index_t pad) {
  const index_t ho = conv_out(h, kh, stride, pad);
  const index_t wo = conv_out(wd, kw, stride, pad);
  const index_t K = cin * kh * kw;
  const index_t pos = ho * wo;
  std::vector<T, RawAlloc<T>> col(static_cast<std::size_t>(pos) * K);
  im2col(x, col.data(), cin, h, wd, kh, kw, stride, pad);
  // y[co, pos] = w_flat[co, :] . col[pos, :]
  gemm_nt(w, col.data(), y, cout, K, pos);
  if (bias) {
    for (index_t co = 0; co < cout; ++co) {
      T* row = y + co * pos;
      const T bv = bias[co];
      for (index_t i = 0; i < pos; ++i) row[i] += bv;
    }
  }
}

template <typename T>
void conv2d_backward_input(const T* gy, const T* w, T* gx, index_t cin, index_t h, index_t wd,
                           index_t cout, index_t kh, index_t kw, index_t stride, index_t pad) {
  const index_t ho = conv_out(h, kh, stride, pad);
  const index_t wo = conv_out(wd, kw, stride, pad);
  const index_t K = cin * kh * kw;
  const index_t pos = ho * wo;
  // gcol[pos, K] = gy^T[pos, cout] * w[cout, K], then scatter back (col2im)
  std::vector<T, RawAlloc<T>> gcol(static_cast<std::size_t>(pos) * K);
  std::vector<T, RawAlloc<T>> gyt(static_cast<std::size_t>(pos) * cout);
  for (index_t co = 0; co < cout; ++co)
    for (index_t i = 0; i < pos; ++i) gyt[i * cout + co] = gy[co * pos + i];
  gemm_nn(gyt.data(), w, gcol.data(), pos, cout, K);
  for (index_t i = 0; i < cin * h * wd; ++i) gx[i] = T(0);
  for (index_t oy = 0; oy < ho; ++oy)
    for (index_t ox = 0; ox < wo; ++ox) {
      const T* row = gcol.data() + (oy * wo + ox) * K;
      index_t q = 0;
      for (index_t ci = 0; ci < cin; ++ci)
        for (index_t ky = 0; ky < kh; ++ky) {
          const index_t iy = oy * stride - pad + ky;
          for (index_t kx = 0; kx < kw; ++kx, ++q) {
            const index_t ix = ox * stride - pad + kx;
            if (iy >= 0 && iy < h && ix >= 0 && ix < wd) gx[(ci * h + iy) * wd + ix] += row[q];
          }
        }
    }
}

template <typename T>
void conv2d_backward_weight(const T* x, const T* gy, T* gw, T* gbias, index_t cin, index_t h,
                            index_t wd, index_t cout, index_t kh, index_t kw, index_t stride,
                            index_t pad) {
  const index_t ho = conv_out(h, kh, stride, pad);
  const index_t wo = conv_out(wd, kw, stride, pad);
  const index_t K = cin * kh * kw;
  const index_t pos = ho * wo;
  std::vector<T, RawAlloc<T>> col(static_cast<std::size_t>(pos) * K);
  im2col(x, col.data(), cin, h, wd, kh, kw, stride, pad);
  // gw[cout, K] = gy[cout, pos] * col[pos, K]
  gemm_nn(gy, col.data(), gw, cout, pos, K);
  if (gbias) {
    for (index_t co = 0; co < cout; ++co) {
      T acc = T(0);
      for (index_t i = 0; i < pos; ++i) acc += gy[co * pos + i];
      gbias[co] = acc;
    }
  }
}

namespace ref {

// gather-form reference of conv2d (sums over kernel support per output)
template <typename T>
void conv2d(const T* x, const T* w, const T* bias, T* y, index_t cin, index_t h, index_t wd,
            index_t cout, index_t kh, index_t kw, index_t stride, index_t pad) {
  const index_t ho = conv_out(h, kh, stride, pad);
  const index_t wo = conv_out(wd, kw, stride, pad);
  for (index_t co = 0; co < cout; ++co)
    for (index_t oy = 0; oy < ho; ++oy)
      for (index_t ox = 0; ox < wo; ++ox) {
        T acc = bias ? bias[co] : T(0);
        for (index_t ky = 0; ky < kh; ++ky)
          for (index_t kx = 0; kx < kw; ++kx) {
            const index_t iy = oy * stride - pad + ky;
            const index_t ix = ox * stride - pad + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            for (index_t ci = 0; ci < cin; ++ci)
              acc += x[(ci * h + iy) * wd + ix] * w[((co * cin + ci) * kh + ky) * kw + kx];
          }
        y[(co * ho + oy) * wo + ox] = acc;
      }
}

}  // namespace ref

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
void ew_add(const T* a, const T* b, T* y, index_t n) {
#pragma omp parallel for simd if (jobs() > 1 && n > 65536) num_threads(jobs())
  for (index_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <typename T>
void ew_sub(const T* a, const T* b, T* y, index_t n) {
#pragma omp parallel for simd if (jobs() > 1 && n > 65536) num_threads(jobs())
  for (index_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

template <typename T>
void ew_mul(const T* a, const T* b, T* y, index_t n) {
#pragma omp parallel for simd if (jobs() > 1 && n > 65536) num_threads(jobs())
  for (index_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <typename T>
void ew_scale(const T* a, T c, T* y, index_t n) {
  for (index_t i = 0; i < n; ++i) y[i] = a[i] * c;
}

template <typename T>
void ew_axpy(T c, const T* a, T* y, index_t n) {
  for (index_t i = 0; i < n; ++i) y[i] += c * a[i];
}

// tanh-form gelu at both precisions so the two instantiations agree
template <typename T>
void ew_gelu(const T* __restrict x, T* __restrict y, index_t n) {
  const T c0 = static_cast<T>(0.7978845608028654);
  const T c1 = static_cast<T>(0.044715);
  std::vector<T> e(static_cast<std::size_t>(n));
#pragma omp simd
  for (index_t i = 0; i < n; ++i) e[i] = x[i] + c1 * x[i] * x[i] * x[i];
  exp_buf(e.data(), e.data(), n, T(2) * c0, T(0));  // e = exp(2*u)
#pragma omp simd
  for (index_t i = 0; i < n; ++i) {
    const T t = (e[i] - T(1)) / (e[i] + T(1));
    y[i] = static_cast<T>(0.5) * x[i] * (T(1) + t);
  }
}

template <typename T>
void ew_gelu_backward(const T* __restrict x, const T* __restrict gy, T* __restrict gx,
                      index_t n) {
  const T c0 = static_cast<T>(0.7978845608028654);
  const T c1 = static_cast<T>(0.044715);
  std::vector<T> e(static_cast<std::size_t>(n));
#pragma omp simd
  for (index_t i = 0; i < n; ++i) e[i] = x[i] + c1 * x[i] * x[i] * x[i];
  exp_buf(e.data(), e.data(), n, T(2) * c0, T(0));
#pragma omp simd
  for (index_t i = 0; i < n; ++i) {
    const T t = (e[i] - T(1)) / (e[i] + T(1));
    const T du = c0 * (T(1) + T(3) * c1 * x[i] * x[i]);
    gx[i] = gy[i] * (static_cast<T>(0.5) * (T(1) + t) +
                     static_cast<T>(0.5) * x[i] * (T(1) - t * t) * du);
  }
}

template <typename T>
void ew_silu(const T* __restrict x, T* __restrict y, index_t n) {
  std::vector<T> e(static_cast<std::size_t>(n));
  exp_buf(x, e.data(), n, T(-1), T(0));  // e = exp(-x)
#pragma omp simd
  for (index_t i = 0; i < n; ++i) y[i] = x[i] / (T(1) + e[i]);
}

template <typename T>
void ew_silu_backward(const T* __restrict x, const T* __restrict gy, T* __restrict gx,
                      index_t n) {
  std::vector<T> e(static_cast<std::size_t>(n));
  exp_buf(x, e.data(), n, T(-1), T(0));
#pragma omp simd
  for (index_t i = 0; i < n; ++i) {
    const T s = T(1) / (T(1) + e[i]);
    gx[i] = gy[i] * (s + x[i] * s * (T(1) - s));
  }
}

// serial double-precision accumulation; deterministic under any jobs setting
template <typename T>
double sum_all(const T* x, index_t n) {
  double acc = 0;
  for (index_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]);
  return acc;
}

template <typename T>
bool all_finite(const T* x, index_t n) {
  if constexpr (std::is_same_v<T, float>) {
#if defined(__AVX512F__)
    const __m512i expmask = _mm512_set1_epi32(0x7f800000);
    index_t i = 0;
    for (; i + 16 <= n; i += 16) {
      const __m512i bits = _mm512_castps_si512(_mm512_loadu_ps(x + i));
      const __m512i e = _mm512_and_si512(bits, expmask);
      if (_mm512_cmpeq_epi32_mask(e, expmask)) return false;
    }
    for (; i < n; ++i)
      if (!std::isfinite(x[i])) return false;
    return true;
#endif
  }
  for (index_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i])) return false;
  return true;
}

}  // namespace vidswap::numcore::kern
