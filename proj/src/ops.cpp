#include "crackseg/ops.hpp"

#include <algorithm>
#include <cstring>
#include <cmath>
#include <cstdint>
#include <limits>
#include <type_traits>

namespace crackseg {

namespace {

template <typename T>
void require_4d(const BasicTensor<T>& t, const char* op, const char* what) {
  if (!t.defined() || t.ndim() != 4) {
    throw ShapeError(std::string(op) + ": " + what + " must be 4-D [N,C,H,W], got " +
                     (t.defined() ? shape_string(t.shape()) : std::string("undefined")));
  }
}

// Dot product with eight fixed partial sums. The reduction order depends only
// on n, so results do not change with the SIMD width the compiler picks.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  for (; i < n; ++i) acc[i & 7] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
T total(const T* a, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l];
  }
  for (; i < n; ++i) acc[i & 7] += a[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

struct ConvGeometry {
  std::size_t batch, cin, h, w;
  std::size_t cout, kh, kw;
  std::size_t pad_top, pad_left;
  std::size_t ho, wo;

  std::size_t patch() const { return cin * kh * kw; }
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                           const BasicTensor<T>& bias, Padding padding) {
  require_4d(input, "conv2d", "input");
  require_4d(weight, "conv2d", "weight");
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  if (g.kh < 1 || g.kw < 1) throw ShapeError("conv2d: kernel must be at least 1x1");
  if (weight.dim(1) != g.cin) {
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                     " input channels but input " + shape_string(input.shape()) + " has " +
                     std::to_string(g.cin));
  }
  if (!bias.defined() || bias.ndim() != 1 || bias.dim(0) != g.cout) {
    throw ShapeError("conv2d: bias must have shape [" + std::to_string(g.cout) + "], got " +
                     (bias.defined() ? shape_string(bias.shape()) : std::string("undefined")));
  }
  if (padding == Padding::same) {
    g.pad_top = (g.kh - 1) / 2;
    g.pad_left = (g.kw - 1) / 2;
    g.ho = g.h;
    g.wo = g.w;
  } else {
    if (g.h < g.kh || g.w < g.kw) {
      throw ShapeError("conv2d: valid padding needs input at least " + std::to_string(g.kh) + "x" +
                       std::to_string(g.kw) + ", got " + std::to_string(g.h) + "x" +
                       std::to_string(g.w));
    }
    g.pad_top = g.pad_left = 0;
    g.ho = g.h - g.kh + 1;
    g.wo = g.w - g.kw + 1;
  }
  return g;
}

// Number of output rows unrolled per im2col chunk. Depends only on geometry.
std::size_t chunk_rows(const ConvGeometry& g) {
  constexpr std::size_t kBudget = std::size_t{1} << 15;
  const std::size_t per_row = std::max<std::size_t>(1, g.patch() * g.wo);
  return std::clamp<std::size_t>(kBudget / per_row, 1, g.ho);
}

// Valid output-column range [lo, hi) for kernel column b.
inline void column_range(const ConvGeometry& g, std::size_t b, std::size_t& lo, std::size_t& hi) {
  const auto shift = static_cast<std::ptrdiff_t>(b) - static_cast<std::ptrdiff_t>(g.pad_left);
  lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -shift));
  hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
      static_cast<std::ptrdiff_t>(g.w) - shift, 0, static_cast<std::ptrdiff_t>(g.wo)));
  lo = std::min(lo, hi);
}

// Unroll output rows [y0, y1) of one sample into cols[patch][(y1-y0)*wo].
template <typename T>
void im2col(const T* x, const ConvGeometry& g, std::size_t y0, std::size_t y1, T* cols) {
  const std::size_t p = (y1 - y0) * g.wo;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const T* plane = x + ci * g.h * g.w;
    for (std::size_t a = 0; a < g.kh; ++a) {
      for (std::size_t b = 0; b < g.kw; ++b) {
        T* dst = cols + ((ci * g.kh + a) * g.kw + b) * p;
        std::size_t lo, hi;
        column_range(g, b, lo, hi);
        for (std::size_t oy = y0; oy < y1; ++oy, dst += g.wo) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + a) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.w;
          std::fill(dst, dst + lo, T(0));
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox + b - g.pad_left];
          std::fill(dst + hi, dst + g.wo, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, std::size_t y0, std::size_t y1, T* dx) {
  const std::size_t p = (y1 - y0) * g.wo;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    T* plane = dx + ci * g.h * g.w;
    for (std::size_t a = 0; a < g.kh; ++a) {
      for (std::size_t b = 0; b < g.kw; ++b) {
        const T* src = cols + ((ci * g.kh + a) * g.kw + b) * p;
        std::size_t lo, hi;
        column_range(g, b, lo, hi);
        for (std::size_t oy = y0; oy < y1; ++oy, src += g.wo) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + a) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox + b - g.pad_left] += src[ox];
        }
      }
    }
  }
}

// Convolution inner kernels. Every output element sums its terms in the
// same order as the plain scalar loops below, so blocking and vector width
// never change results (-ffp-contract=off keeps mul and add separate).

// out_j[i] = init_j + sum_t a[j * a_row + t * a_col] * b[t * b_stride + i],
// t ascending, for j < NB and i in [i0, p).
template <std::size_t NB, typename T>
void gemm_rows_scalar(std::size_t terms, std::size_t i0, std::size_t p, const T* a, std::size_t a_row,
                      std::size_t a_col, const T* b, std::size_t b_stride, const T* init, T* const* out) {
  for (std::size_t j = 0; j < NB; ++j) std::fill(out[j] + i0, out[j] + p, init[j]);
  for (std::size_t t = 0; t < terms; ++t) {
    const T* bt = b + t * b_stride;
    for (std::size_t j = 0; j < NB; ++j) {
      const T av = a[j * a_row + t * a_col];
      T* o = out[j];
      for (std::size_t i = i0; i < p; ++i) o[i] += av * bt[i];
    }
  }
}

typedef float F4 __attribute__((vector_size(16)));

inline F4 load4(const float* p) {
  F4 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store4(float* p, F4 v) { std::memcpy(p, &v, sizeof v); }

// Four output rows, eight pixels at a time, accumulators in registers.
inline std::size_t gemm4_float(std::size_t terms, std::size_t p, const float* a, std::size_t a_row,
                               std::size_t a_col, const float* b, std::size_t b_stride, const float* init,
                               float* const* out) {
  std::size_t i = 0;
  for (; i + 8 <= p; i += 8) {
    F4 c00 = F4{} + init[0], c01 = c00;
    F4 c10 = F4{} + init[1], c11 = c10;
    F4 c20 = F4{} + init[2], c21 = c20;
    F4 c30 = F4{} + init[3], c31 = c30;
    const float* bt = b + i;
    const float* at = a;
    for (std::size_t t = 0; t < terms; ++t, bt += b_stride, at += a_col) {
      const F4 b0 = load4(bt), b1 = load4(bt + 4);
      const float a0 = at[0], a1 = at[a_row], a2 = at[2 * a_row], a3 = at[3 * a_row];
      c00 += a0 * b0;
      c01 += a0 * b1;
      c10 += a1 * b0;
      c11 += a1 * b1;
      c20 += a2 * b0;
      c21 += a2 * b1;
      c30 += a3 * b0;
      c31 += a3 * b1;
    }
    store4(out[0] + i, c00);
    store4(out[0] + i + 4, c01);
    store4(out[1] + i, c10);
    store4(out[1] + i + 4, c11);
    store4(out[2] + i, c20);
    store4(out[2] + i + 4, c21);
    store4(out[3] + i, c30);
    store4(out[3] + i + 4, c31);
  }
  return i;
}

template <std::size_t NB, typename T>
void gemm_rows(std::size_t terms, std::size_t p, const T* a, std::size_t a_row, std::size_t a_col, const T* b,
               std::size_t b_stride, const T* init, T* const* out) {
  std::size_t done = 0;
  if constexpr (NB == 4 && std::is_same_v<T, float>) {
    done = gemm4_float(terms, p, a, a_row, a_col, b, b_stride, init, out);
  }
  if (done < p) gemm_rows_scalar<NB>(terms, done, p, a, a_row, a_col, b, b_stride, init, out);
}

// dw_j[kk] += dot(go_j, cols[kk]) with the eight-lane order of dot().
template <std::size_t NB, typename T>
void weight_grad_block(const T* cols, std::size_t k, std::size_t p, const T* const* go, T* dw) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* c = cols + kk * p;
    T acc[NB][8] = {};
    std::size_t i = 0;
    if constexpr (NB == 4 && std::is_same_v<T, float>) {
      F4 a00{}, a01{}, a10{}, a11{}, a20{}, a21{}, a30{}, a31{};
      for (; i + 8 <= p; i += 8) {
        const F4 c0 = load4(c + i), c1 = load4(c + i + 4);
        a00 += load4(go[0] + i) * c0;
        a01 += load4(go[0] + i + 4) * c1;
        a10 += load4(go[1] + i) * c0;
        a11 += load4(go[1] + i + 4) * c1;
        a20 += load4(go[2] + i) * c0;
        a21 += load4(go[2] + i + 4) * c1;
        a30 += load4(go[3] + i) * c0;
        a31 += load4(go[3] + i + 4) * c1;
      }
      store4(acc[0], a00);
      store4(acc[0] + 4, a01);
      store4(acc[1], a10);
      store4(acc[1] + 4, a11);
      store4(acc[2], a20);
      store4(acc[2] + 4, a21);
      store4(acc[3], a30);
      store4(acc[3] + 4, a31);
    }
    for (; i < p; ++i) {
      for (std::size_t j = 0; j < NB; ++j) acc[j][i & 7] += go[j][i] * c[i];
    }
    for (std::size_t j = 0; j < NB; ++j) {
      const T* a = acc[j];
      dw[j * k + kk] += ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
    }
  }
}

// Runs f.template operator()<NB>(start) over [0, n) in blocks of four.
template <typename F>
void for_blocks(std::size_t n, F&& f) {
  std::size_t s = 0;
  for (; s + 4 <= n; s += 4) f.template operator()<4>(s);
  switch (n - s) {
    case 3: f.template operator()<3>(s); break;
    case 2: f.template operator()<2>(s); break;
    case 1: f.template operator()<1>(s); break;
    default: break;
  }
}

template <typename T>
void conv_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                   const BasicTensor<T>& bias, const ConvGeometry& g, std::span<const T> gout) {
  const std::size_t k = g.patch();
  const std::size_t rows = chunk_rows(g);
  const std::size_t plane_out = g.ho * g.wo;
  auto dx = input.grad_buffer();
  auto dw = weight.grad_buffer();
  auto db = bias.grad_buffer();
  const T* x = input.data().data();
  const T* w = weight.data().data();
  std::vector<T> cols(k * rows * g.wo);
  std::vector<T> dcols(dx.empty() ? 0 : cols.size());

  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* xn = x + n * g.cin * g.h * g.w;
    const T* gn = gout.data() + n * g.cout * plane_out;
    for (std::size_t y0 = 0; y0 < g.ho; y0 += rows) {
      const std::size_t y1 = std::min(g.ho, y0 + rows);
      const std::size_t p = (y1 - y0) * g.wo;
      if (!dw.empty()) im2col(xn, g, y0, y1, cols.data());
      const T* go0 = gn + y0 * g.wo;
      if (!db.empty()) {
        for (std::size_t co = 0; co < g.cout; ++co) db[co] += total(go0 + co * plane_out, p);
      }
      if (!dw.empty()) {
        for_blocks(g.cout, [&]<std::size_t NB>(std::size_t co) {
          const T* go[NB];
          for (std::size_t j = 0; j < NB; ++j) go[j] = go0 + (co + j) * plane_out;
          weight_grad_block<NB>(cols.data(), k, p, go, dw.data() + co * k);
        });
      }
      if (!dx.empty()) {
        const T zeros[4] = {};
        for_blocks(k, [&]<std::size_t NB>(std::size_t kk0) {
          T* dc[NB];
          for (std::size_t j = 0; j < NB; ++j) dc[j] = dcols.data() + (kk0 + j) * p;
          gemm_rows<NB>(g.cout, p, w + kk0, 1, k, go0, plane_out, zeros, dc);
        });
        col2im_add(dcols.data(), g, y0, y1, dx.data() + n * g.cin * g.h * g.w);
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, Padding padding) {
  const ConvGeometry g = conv_geometry(input, weight, bias, padding);
  const std::size_t k = g.patch();
  const std::size_t rows = chunk_rows(g);
  const std::size_t plane_out = g.ho * g.wo;
  std::vector<T> out(g.batch * g.cout * plane_out);
  std::vector<T> cols(k * rows * g.wo);
  const T* x = input.data().data();
  const T* w = weight.data().data();
  const T* bv = bias.data().data();

  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t y0 = 0; y0 < g.ho; y0 += rows) {
      const std::size_t y1 = std::min(g.ho, y0 + rows);
      const std::size_t p = (y1 - y0) * g.wo;
      im2col(x + n * g.cin * g.h * g.w, g, y0, y1, cols.data());
      T* out0 = out.data() + n * g.cout * plane_out + y0 * g.wo;
      for_blocks(g.cout, [&]<std::size_t NB>(std::size_t co) {
        T* o[NB];
        for (std::size_t j = 0; j < NB; ++j) o[j] = out0 + (co + j) * plane_out;
        gemm_rows<NB>(k, p, w + co * k, k, 1, cols.data(), p, bv + co, o);
      });
    }
  }

  BasicTensor<T> result({g.batch, g.cout, g.ho, g.wo}, std::move(out));
  record<T>(result, "conv2d", {input, weight, bias},
            [input, weight, bias, g](std::span<const T> gout) {
              conv_backward(input, weight, bias, g, gout);
            });
  return result;
}

template <typename T>
BasicTensor<T> maxpool2(const BasicTensor<T>& input) {
  require_4d(input, "maxpool2", "input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2: height and width must be even, got " + std::to_string(h) + "x" +
                     std::to_string(w) + "; pad or crop the input");
  }
  const std::size_t ho = h / 2, wo = w / 2;
  std::vector<T> out(n * c * ho * wo);
  std::vector<std::uint32_t> argmax(out.size());
  const T* x = input.data().data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const std::size_t window[4] = {
            base + (2 * oy) * w + 2 * ox, base + (2 * oy) * w + 2 * ox + 1,
            base + (2 * oy + 1) * w + 2 * ox, base + (2 * oy + 1) * w + 2 * ox + 1};
        std::size_t best = window[0];
        for (std::size_t i = 1; i < 4; ++i) {
          if (x[window[i]] > x[best]) best = window[i];
        }
        const std::size_t o = (plane * ho + oy) * wo + ox;
        out[o] = x[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  BasicTensor<T> result({n, c, ho, wo}, std::move(out));
  record<T>(result, "maxpool2", {input},
            [input, argmax = std::move(argmax)](std::span<const T> gout) {
              auto dx = input.grad_buffer();
              for (std::size_t o = 0; o < gout.size(); ++o) dx[argmax[o]] += gout[o];
            });
  return result;
}

template <typename T>
BasicTensor<T> upsample2(const BasicTensor<T>& input) {
  require_4d(input, "upsample2", "input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t ho = 2 * h, wo = 2 * w;
  std::vector<T> out(n * c * ho * wo);
  const T* x = input.data().data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const T* src = x + (plane * h + oy / 2) * w;
      T* dst = out.data() + (plane * ho + oy) * wo;
      for (std::size_t ox = 0; ox < wo; ++ox) dst[ox] = src[ox / 2];
    }
  }
  BasicTensor<T> result({n, c, ho, wo}, std::move(out));
  record<T>(result, "upsample2", {input}, [input, n, c, h, w](std::span<const T> gout) {
    auto dx = input.grad_buffer();
    const std::size_t wo = 2 * w;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      for (std::size_t y = 0; y < h; ++y) {
        const T* top = gout.data() + (plane * 2 * h + 2 * y) * wo;
        const T* bottom = top + wo;
        T* d = dx.data() + (plane * h + y) * w;
        for (std::size_t x = 0; x < w; ++x) {
          d[x] += (top[2 * x] + top[2 * x + 1]) + (bottom[2 * x] + bottom[2 * x + 1]);
        }
      }
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> upconv2(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                       const BasicTensor<T>& bias) {
  require_4d(weight, "upconv2", "weight");
  if (weight.dim(2) != 2 || weight.dim(3) != 2) {
    throw ShapeError("upconv2: weight must be [C',C,2,2], got " + shape_string(weight.shape()));
  }
  return conv2d(upsample2(input), weight, bias, Padding::same);
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_4d(a, "concat_channels", "a");
  require_4d(b, "concat_channels", "b");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: batch and spatial dims must match, got " +
                     shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = a.dim(2) * a.dim(3);
  std::vector<T> out;
  out.reserve(n * (ca + cb) * plane);
  for (std::size_t i = 0; i < n; ++i) {
    auto sa = a.data().subspan(i * ca * plane, ca * plane);
    auto sb = b.data().subspan(i * cb * plane, cb * plane);
    out.insert(out.end(), sa.begin(), sa.end());
    out.insert(out.end(), sb.begin(), sb.end());
  }
  BasicTensor<T> result({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out));
  record<T>(result, "concat_channels", {a, b}, [a, b, n, ca, cb, plane](std::span<const T> gout) {
    auto da = a.grad_buffer();
    auto db = b.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const T* g = gout.data() + i * (ca + cb) * plane;
      if (!da.empty()) {
        for (std::size_t j = 0; j < ca * plane; ++j) da[i * ca * plane + j] += g[j];
      }
      if (!db.empty()) {
        for (std::size_t j = 0; j < cb * plane; ++j) db[i * cb * plane + j] += g[ca * plane + j];
      }
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& input, std::size_t begin, std::size_t end) {
  require_4d(input, "slice_channels", "input");
  const std::size_t n = input.dim(0), c = input.dim(1);
  if (begin > end || end > c) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") outside " + std::to_string(c) + " channels");
  }
  const std::size_t plane = input.dim(2) * input.dim(3);
  const std::size_t width = end - begin;
  std::vector<T> out;
  out.reserve(n * width * plane);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = input.data().subspan((i * c + begin) * plane, width * plane);
    out.insert(out.end(), s.begin(), s.end());
  }
  BasicTensor<T> result({n, width, input.dim(2), input.dim(3)}, std::move(out));
  record<T>(result, "slice_channels", {input},
            [input, n, c, begin, width, plane](std::span<const T> gout) {
              auto dx = input.grad_buffer();
              for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < width * plane; ++j) {
                  dx[(i * c + begin) * plane + j] += gout[i * width * plane + j];
                }
              }
            });
  return result;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  std::vector<T> out(input.numel());
  auto x = input.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  BasicTensor<T> result(input.shape(), std::move(out));
  record<T>(result, "relu", {input}, [input](std::span<const T> gout) {
    auto dx = input.grad_buffer();
    auto x = input.data();
    for (std::size_t i = 0; i < gout.size(); ++i) {
      if (x[i] > T(0)) dx[i] += gout[i];
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input) {
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  std::vector<T> out(input.numel());
  auto x = input.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    T s;
    if (x[i] >= T(0)) {
      s = T(1) / (T(1) + std::exp(-x[i]));
    } else {
      const T e = std::exp(x[i]);
      s = e / (T(1) + e);
    }
    out[i] = std::clamp(s, lo, hi);
  }
  BasicTensor<T> result(input.shape(), out);
  record<T>(result, "sigmoid", {input}, [input, s = std::move(out)](std::span<const T> gout) {
    auto dx = input.grad_buffer();
    for (std::size_t i = 0; i < gout.size(); ++i) dx[i] += gout[i] * s[i] * (T(1) - s[i]);
  });
  return result;
}

template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target, double eps) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("bce_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  const std::size_t count = pred.numel();
  if (count == 0) throw ShapeError("bce_loss: empty input");
  auto p = pred.data();
  auto t = target.data();
  const T lo = static_cast<T>(eps);
  const T hi = T(1) - static_cast<T>(eps);
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    if (t[i] != T(0) && t[i] != T(1)) {
      throw DataError("bce_loss: target values must be 0 or 1, found " +
                      std::to_string(static_cast<double>(t[i])) + " at element " +
                      std::to_string(i));
    }
    const double pc = static_cast<double>(std::clamp(p[i], lo, hi));
    acc -= t[i] == T(1) ? std::log(pc) : std::log1p(-pc);
  }
  BasicTensor<T> result(Shape{}, {static_cast<T>(acc / static_cast<double>(count))});
  record<T>(result, "bce_loss", {pred}, [pred, target, lo, hi, count](std::span<const T> gout) {
    auto dp = pred.grad_buffer();
    auto p = pred.data();
    auto t = target.data();
    const T scale = gout[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const T pc = std::clamp(p[i], lo, hi);
      dp[i] += scale * (pc - t[i]) / (pc * (T(1) - pc));
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& input) {
  double acc = 0.0;
  for (T v : input.data()) acc += static_cast<double>(v);
  BasicTensor<T> result(Shape{}, {static_cast<T>(acc)});
  record<T>(result, "sum", {input}, [input](std::span<const T> gout) {
    auto dx = input.grad_buffer();
    for (auto& d : dx) d += gout[0];
  });
  return result;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                     " differ");
  }
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  BasicTensor<T> result(a.shape(), std::move(out));
  record<T>(result, "mul", {a, b}, [a, b](std::span<const T> gout) {
    auto da = a.grad_buffer();
    auto db = b.grad_buffer();
    for (std::size_t i = 0; i < gout.size(); ++i) {
      if (!da.empty()) da[i] += gout[i] * b.data()[i];
      if (!db.empty()) db[i] += gout[i] * a.data()[i];
    }
  });
  return result;
}

#define CRACKSEG_INSTANTIATE_OPS(T)                                                            \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                 const BasicTensor<T>&, Padding);                              \
  template BasicTensor<T> maxpool2(const BasicTensor<T>&);                                     \
  template BasicTensor<T> upsample2(const BasicTensor<T>&);                                    \
  template BasicTensor<T> upconv2(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                  const BasicTensor<T>&);                                      \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);       \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, std::size_t, std::size_t);     \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                         \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                      \
  template BasicTensor<T> bce_loss(const BasicTensor<T>&, const BasicTensor<T>&, double);      \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                          \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);

CRACKSEG_INSTANTIATE_OPS(float)
CRACKSEG_INSTANTIATE_OPS(double)

}  // namespace crackseg
