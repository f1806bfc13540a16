#include "fuselab/ndlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <sstream>

#include "fuselab/binio.hpp"
#include "fuselab/errors.hpp"
#include "fuselab/rng.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fuselab {

namespace {
#if defined(__GLIBC__)
// Activations are allocated and freed at a high rate; keep them on the heap
// instead of round-tripping through mmap and page faults.
const bool allocator_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif
} // namespace

// ---- Tensor ----------------------------------------------------------------

std::size_t shape_numel(const std::vector<int> &shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0)
      throw ConfigError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const std::vector<int> &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_))
    throw ConfigError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                      shape_str(shape_));
}

float Tensor::item() const {
  if (data_.size() != 1)
    throw ConfigError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

// ---- Tape ------------------------------------------------------------------

const Tensor &Var::value() const { return tape->value(id); }
const Tensor &Var::grad() const { return tape->grad(id); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite())
    throw NumericError("non-finite value in leaf tensor " + shape_str(value.shape()));
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(const char *op, Tensor value, std::vector<int> inputs, BackwardFn fn) {
  if (!value.all_finite())
    throw NumericError(std::string("non-finite output from ") + op + " " + shape_str(value.shape()));
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (int i : inputs)
    n.requires_grad = n.requires_grad || nodes_.at(static_cast<std::size_t>(i)).requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad)
    n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tensor &Tape::grad_buffer(int id) {
  auto &n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.shape() != n.value.shape() || n.grad.numel() != n.value.numel())
    n.grad = Tensor(n.value.shape());
  return n.grad;
}

const Tensor &Tape::grad(int id) const {
  const auto &n = nodes_.at(static_cast<std::size_t>(id));
  if (!backward_done_)
    throw ConfigError("gradient requested before backward()");
  if (!n.requires_grad)
    throw ConfigError("gradient requested for a node that does not require grad");
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this)
    throw ConfigError("backward root belongs to another tape");
  const auto &rv = value(root.id);
  if (rv.numel() != 1)
    throw ConfigError("backward root must be scalar, got shape " + shape_str(rv.shape()));
  for (auto &n : nodes_)
    n.grad = n.requires_grad ? Tensor(n.value.shape()) : Tensor();
  backward_done_ = true;
  if (!nodes_[static_cast<std::size_t>(root.id)].requires_grad)
    return;
  nodes_[static_cast<std::size_t>(root.id)].grad.fill(1.0f);
  for (int i = root.id; i >= 0; --i) {
    auto &n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward)
      n.backward(*this, n.grad);
  }
}

// ---- conv kernels ----------------------------------------------------------

namespace {

struct ConvGeom {
  int cin, h, w, cout, k, stride, pad, ho, wo;
  int kdim() const { return cin * k * k; }
  int npix() const { return ho * wo; }
};

// Rows [n0, n1) of the transposed im2col matrix (one row per output pixel).
void im2col_t(const ConvGeom &g, const float *x, float *col, int n0, int n1) {
  const int K = g.kdim();
  for (int n = n0; n < n1; ++n) {
    const int oy = n / g.wo, ox = n % g.wo;
    {
      float *row = col + static_cast<std::size_t>(n - n0) * K;
      const int ix0 = ox * g.stride - g.pad;
      const bool x_inside = ix0 >= 0 && ix0 + g.k <= g.w;
      for (int ci = 0; ci < g.cin; ++ci)
        for (int ky = 0; ky < g.k; ++ky, row += g.k) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) {
            std::fill(row, row + g.k, 0.0f);
            continue;
          }
          const float *src = x + (static_cast<std::size_t>(ci) * g.h + iy) * g.w;
          if (x_inside) {
            std::copy_n(src + ix0, g.k, row);
          } else {
            for (int kx = 0; kx < g.k; ++kx) {
              const int ix = ix0 + kx;
              row[kx] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
            }
          }
        }
    }
  }
}

void col2im_t(const ConvGeom &g, const float *col, float *dx, int n0, int n1) {
  const int K = g.kdim();
  for (int n = n0; n < n1; ++n) {
    const int oy = n / g.wo, ox = n % g.wo;
    {
      const float *row = col + static_cast<std::size_t>(n - n0) * K;
      const int ix0 = ox * g.stride - g.pad;
      for (int ci = 0; ci < g.cin; ++ci)
        for (int ky = 0; ky < g.k; ++ky, row += g.k) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h)
            continue;
          float *dst = dx + (static_cast<std::size_t>(ci) * g.h + iy) * g.w;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ix0 + kx;
            if (ix >= 0 && ix < g.w)
              dst[ix] += row[kx];
          }
        }
    }
  }
}

using v8f = float __attribute__((vector_size(32)));

inline v8f load8(const float *p) {
  v8f v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store8(float *p, v8f v) { std::memcpy(p, &v, sizeof v); }

// outT[n][co] = bias[co] + Σ_k colT[n][k]·wt[k][co], k ascending.
template <int CO> void gemm_fwd_fixed(const float *colT, const float *wt, const float *bias, float *outT, int N, int K) {
  constexpr int V = CO / 8;
  for (int n = 0; n < N; ++n) {
    v8f acc[V];
    for (int c = 0; c < V; ++c)
      acc[c] = load8(bias + 8 * c);
    const float *a = colT + static_cast<std::size_t>(n) * K;
    for (int k = 0; k < K; ++k) {
      const float av = a[k];
      const float *wr = wt + static_cast<std::size_t>(k) * CO;
      for (int c = 0; c < V; ++c)
        acc[c] += av * load8(wr + 8 * c);
    }
    float *o = outT + static_cast<std::size_t>(n) * CO;
    for (int c = 0; c < V; ++c)
      store8(o + 8 * c, acc[c]);
  }
}

void gemm_fwd_any(const float *colT, const float *wt, const float *bias, float *outT, int N, int K, int CO) {
  for (int n = 0; n < N; ++n) {
    float *o = outT + static_cast<std::size_t>(n) * CO;
    for (int c = 0; c < CO; ++c)
      o[c] = bias[c];
    const float *a = colT + static_cast<std::size_t>(n) * K;
    for (int k = 0; k < K; ++k) {
      const float av = a[k];
      const float *wr = wt + static_cast<std::size_t>(k) * CO;
      for (int c = 0; c < CO; ++c)
        o[c] += av * wr[c];
    }
  }
}

void gemm_fwd(const float *colT, const float *wt, const float *bias, float *outT, int N, int K, int CO) {
  switch (CO) {
  case 8: return gemm_fwd_fixed<8>(colT, wt, bias, outT, N, K);
  case 16: return gemm_fwd_fixed<16>(colT, wt, bias, outT, N, K);
  case 32: return gemm_fwd_fixed<32>(colT, wt, bias, outT, N, K);
  case 64: return gemm_fwd_fixed<64>(colT, wt, bias, outT, N, K);
  default: return gemm_fwd_any(colT, wt, bias, outT, N, K, CO);
  }
}

// dwt[k][co] += Σ_n colT[n][k]·gT[n][co], n ascending; KB rows of k at a time.
template <int CO, int KB> void gemm_dw_fixed(const float *colT, const float *gT, float *dwt, int N, int K) {
  constexpr int V = CO / 8;
  int k0 = 0;
  for (; k0 + KB <= K; k0 += KB) {
    v8f acc[KB][V];
    for (int r = 0; r < KB; ++r)
      for (int c = 0; c < V; ++c)
        acc[r][c] = load8(dwt + static_cast<std::size_t>(k0 + r) * CO + 8 * c);
    for (int n = 0; n < N; ++n) {
      const float *a = colT + static_cast<std::size_t>(n) * K + k0;
      const float *gr = gT + static_cast<std::size_t>(n) * CO;
      v8f g[V];
      for (int c = 0; c < V; ++c)
        g[c] = load8(gr + 8 * c);
      for (int r = 0; r < KB; ++r) {
        const float av = a[r];
        for (int c = 0; c < V; ++c)
          acc[r][c] += av * g[c];
      }
    }
    for (int r = 0; r < KB; ++r)
      for (int c = 0; c < V; ++c)
        store8(dwt + static_cast<std::size_t>(k0 + r) * CO + 8 * c, acc[r][c]);
  }
  for (; k0 < K; ++k0) {
    v8f acc[V];
    for (int c = 0; c < V; ++c)
      acc[c] = load8(dwt + static_cast<std::size_t>(k0) * CO + 8 * c);
    for (int n = 0; n < N; ++n) {
      const float av = colT[static_cast<std::size_t>(n) * K + k0];
      const float *gr = gT + static_cast<std::size_t>(n) * CO;
      for (int c = 0; c < V; ++c)
        acc[c] += av * load8(gr + 8 * c);
    }
    for (int c = 0; c < V; ++c)
      store8(dwt + static_cast<std::size_t>(k0) * CO + 8 * c, acc[c]);
  }
}

void gemm_dw_any(const float *colT, const float *gT, float *dwt, int N, int K, int CO) {
  for (int n = 0; n < N; ++n) {
    const float *a = colT + static_cast<std::size_t>(n) * K;
    const float *gr = gT + static_cast<std::size_t>(n) * CO;
    for (int k = 0; k < K; ++k) {
      const float av = a[k];
      float *d = dwt + static_cast<std::size_t>(k) * CO;
      for (int c = 0; c < CO; ++c)
        d[c] += av * gr[c];
    }
  }
}

void gemm_dw(const float *colT, const float *gT, float *dwt, int N, int K, int CO) {
  switch (CO) {
  case 8: return gemm_dw_fixed<8, 8>(colT, gT, dwt, N, K);
  case 16: return gemm_dw_fixed<16, 6>(colT, gT, dwt, N, K);
  case 32: return gemm_dw_fixed<32, 3>(colT, gT, dwt, N, K);
  case 64: return gemm_dw_fixed<64, 2>(colT, gT, dwt, N, K);
  default: return gemm_dw_any(colT, gT, dwt, N, K, CO);
  }
}

// dcolT[n][k] = Σ_co gT[n][co]·w[co][k], co ascending.
void gemm_dcol(const float *gT, const float *w, float *dcolT, int N, int K, int CO) {
  const int K8 = K - K % 8;
  for (int n = 0; n < N; ++n) {
    float *d = dcolT + static_cast<std::size_t>(n) * K;
    const float *gr = gT + static_cast<std::size_t>(n) * CO;
    for (int k = 0; k < K8; k += 8) {
      v8f acc = {};
      for (int c = 0; c < CO; ++c)
        acc += gr[c] * load8(w + static_cast<std::size_t>(c) * K + k);
      store8(d + k, acc);
    }
    for (int k = K8; k < K; ++k) {
      float acc = 0.0f;
      for (int c = 0; c < CO; ++c)
        acc += gr[c] * w[static_cast<std::size_t>(c) * K + k];
      d[k] = acc;
    }
  }
}

void check_chw(const Tensor &t, const char *op) {
  if (t.rank() != 3)
    throw ConfigError(std::string(op) + ": expected C×H×W tensor, got " + shape_str(t.shape()));
}

void add_into(Tensor &dst, const Tensor &src, float s = 1.0f) {
  auto d = dst.data();
  auto v = src.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    d[i] += s * v[i];
}

} // namespace

// ---- primitives ------------------------------------------------------------

// Output pixels per im2col tile; keeps the tile cache resident.
constexpr int kConvTile = 256;

Var conv2d(Var x, Var weight, Var bias, int stride) {
  const Tensor &xv = x.value();
  const Tensor &wv = weight.value();
  const Tensor &bv = bias.value();
  check_chw(xv, "conv2d");
  if (wv.rank() != 4 || wv.dim(2) != wv.dim(3) || (wv.dim(2) != 1 && wv.dim(2) != 3) || wv.dim(1) != xv.dim(0) ||
      bv.rank() != 1 || bv.dim(0) != wv.dim(0) || (stride != 1 && stride != 2))
    throw ConfigError("conv2d: incompatible shapes input " + shape_str(xv.shape()) + ", weight " +
                      shape_str(wv.shape()) + ", bias " + shape_str(bv.shape()) + ", stride " +
                      std::to_string(stride));
  ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(0), wv.dim(2), stride, wv.dim(2) / 2, 0, 0};
  g.ho = (g.h + 2 * g.pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / stride + 1;
  const int K = g.kdim(), N = g.npix(), CO = g.cout;

  std::vector<float> wt(static_cast<std::size_t>(K) * CO);
  for (int c = 0; c < CO; ++c)
    for (int k = 0; k < K; ++k)
      wt[static_cast<std::size_t>(k) * CO + c] = wv[static_cast<std::size_t>(c) * K + k];

  const int tile = std::min(N, kConvTile);
  auto col = std::make_unique_for_overwrite<float[]>(static_cast<std::size_t>(tile) * K);
  auto outT = std::make_unique_for_overwrite<float[]>(static_cast<std::size_t>(tile) * CO);
  std::vector<float> out(static_cast<std::size_t>(N) * CO);
  for (int n0 = 0; n0 < N; n0 += tile) {
    const int n1 = std::min(N, n0 + tile);
    im2col_t(g, xv.data().data(), col.get(), n0, n1);
    gemm_fwd(col.get(), wt.data(), bv.data().data(), outT.get(), n1 - n0, K, CO);
    for (int c = 0; c < CO; ++c)
      for (int n = n0; n < n1; ++n)
        out[static_cast<std::size_t>(c) * N + n] = outT[static_cast<std::size_t>(n - n0) * CO + c];
  }

  const int xid = x.id, wid = weight.id, bid = bias.id;
  return x.tape->record("conv2d", Tensor({CO, g.ho, g.wo}, std::move(out)), {xid, wid, bid},
                        [=](Tape &t, const Tensor &og) {
    if (t.requires_grad(bid)) {
      Tensor &db = t.grad_buffer(bid);
      for (int c = 0; c < CO; ++c) {
        float s = 0.0f;
        for (int n = 0; n < N; ++n)
          s += og[static_cast<std::size_t>(c) * N + n];
        db[static_cast<std::size_t>(c)] += s;
      }
    }
    const bool need_w = t.requires_grad(wid), need_x = t.requires_grad(xid);
    if (!need_w && !need_x)
      return;
    const Tensor &xin = t.value(xid);
    const Tensor &w = t.value(wid);
    auto colb = std::make_unique_for_overwrite<float[]>(static_cast<std::size_t>(tile) * K);
    auto gT = std::make_unique_for_overwrite<float[]>(static_cast<std::size_t>(tile) * CO);
    std::vector<float> dwt(need_w ? static_cast<std::size_t>(K) * CO : 0);
    float *dx = need_x ? t.grad_buffer(xid).data().data() : nullptr;
    for (int n0 = 0; n0 < N; n0 += tile) {
      const int n1 = std::min(N, n0 + tile);
      for (int n = n0; n < n1; ++n)
        for (int c = 0; c < CO; ++c)
          gT[static_cast<std::size_t>(n - n0) * CO + c] = og[static_cast<std::size_t>(c) * N + n];
      if (need_w) {
        im2col_t(g, xin.data().data(), colb.get(), n0, n1);
        gemm_dw(colb.get(), gT.get(), dwt.data(), n1 - n0, K, CO);
      }
      if (need_x) {
        gemm_dcol(gT.get(), w.data().data(), colb.get(), n1 - n0, K, CO);
        col2im_t(g, colb.get(), dx, n0, n1);
      }
    }
    if (need_w) {
      Tensor &dw = t.grad_buffer(wid);
      for (int c = 0; c < CO; ++c)
        for (int k = 0; k < K; ++k)
          dw[static_cast<std::size_t>(c) * K + k] += dwt[static_cast<std::size_t>(k) * CO + c];
    }
  });
}

Var leaky_relu(Var x, float slope) {
  const Tensor &xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i)
    out[i] = xv[i] > 0.0f ? xv[i] : slope * xv[i];
  const int xid = x.id;
  return x.tape->record("leaky_relu", std::move(out), {xid}, [=](Tape &t, const Tensor &og) {
    const Tensor &v = t.value(xid);
    Tensor &dx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < v.numel(); ++i)
      dx[i] += v[i] > 0.0f ? og[i] : slope * og[i];
  });
}

Var sigmoid(Var x) {
  const Tensor &xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i)
    out[i] = 1.0f / (1.0f + std::exp(-xv[i]));
  const int xid = x.id;
  auto saved = std::make_shared<Tensor>(out);
  return x.tape->record("sigmoid", std::move(out), {xid}, [=](Tape &t, const Tensor &og) {
    Tensor &dx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < og.numel(); ++i) {
      const float s = (*saved)[i];
      dx[i] += og[i] * s * (1.0f - s);
    }
  });
}

Var add(Var a, Var b) {
  const Tensor &av = a.value();
  const Tensor &bv = b.value();
  if (av.shape() != bv.shape())
    throw ConfigError("add: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i)
    out[i] = av[i] + bv[i];
  const int aid = a.id, bid = b.id;
  return a.tape->record("add", std::move(out), {aid, bid}, [=](Tape &t, const Tensor &og) {
    if (t.requires_grad(aid))
      add_into(t.grad_buffer(aid), og);
    if (t.requires_grad(bid))
      add_into(t.grad_buffer(bid), og);
  });
}

Var scale(Var x, float s) {
  const Tensor &xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i)
    out[i] = s * xv[i];
  const int xid = x.id;
  return x.tape->record("scale", std::move(out), {xid},
                        [=](Tape &t, const Tensor &og) { add_into(t.grad_buffer(xid), og, s); });
}

Var sum(Var x) {
  const Tensor &xv = x.value();
  float s = 0.0f;
  for (float v : xv.data())
    s += v;
  const int xid = x.id;
  return x.tape->record("sum", Tensor({}, s), {xid}, [=](Tape &t, const Tensor &og) {
    Tensor &dx = t.grad_buffer(xid);
    const float g = og.item();
    for (auto &v : dx.data())
      v += g;
  });
}

Var concat_channels(std::span<const Var> xs) {
  if (xs.empty())
    throw ConfigError("concat_channels: no inputs");
  int c_total = 0;
  const auto &first = xs[0].value();
  check_chw(first, "concat_channels");
  for (const auto &x : xs) {
    const auto &v = x.value();
    check_chw(v, "concat_channels");
    if (v.dim(1) != first.dim(1) || v.dim(2) != first.dim(2))
      throw ConfigError("concat_channels: spatial mismatch " + shape_str(first.shape()) + " vs " +
                        shape_str(v.shape()));
    c_total += v.dim(0);
  }
  Tensor out({c_total, first.dim(1), first.dim(2)});
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto &x : xs) {
    const auto &v = x.value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    ids.push_back(x.id);
    offsets.push_back(off);
    off += v.numel();
  }
  return xs[0].tape->record("concat_channels", std::move(out), ids, [=](Tape &t, const Tensor &og) {
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (!t.requires_grad(ids[j]))
        continue;
      Tensor &dx = t.grad_buffer(ids[j]);
      for (std::size_t i = 0; i < dx.numel(); ++i)
        dx[i] += og[offsets[j] + i];
    }
  });
}

Var concat_channels(Var a, Var b) {
  const Var xs[2] = {a, b};
  return concat_channels(std::span<const Var>(xs));
}

Var slice_channels(Var x, int begin, int end) {
  const Tensor &xv = x.value();
  check_chw(xv, "slice_channels");
  if (begin < 0 || end > xv.dim(0) || begin >= end)
    throw ConfigError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") invalid for shape " + shape_str(xv.shape()));
  const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
  Tensor out({end - begin, xv.dim(1), xv.dim(2)});
  std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * plane), out.numel(), out.data().begin());
  const int xid = x.id;
  return x.tape->record("slice_channels", std::move(out), {xid}, [=](Tape &t, const Tensor &og) {
    Tensor &dx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < og.numel(); ++i)
      dx[begin * plane + i] += og[i];
  });
}

Var bce_with_logits(Var logits, const Tensor &targets, const Tensor &weights) {
  const Tensor &lv = logits.value();
  if (targets.shape() != lv.shape() || weights.shape() != lv.shape())
    throw ConfigError("bce_with_logits: shape mismatch logits " + shape_str(lv.shape()) + ", targets " +
                      shape_str(targets.shape()) + ", weights " + shape_str(weights.shape()));
  float total = 0.0f;
  for (std::size_t i = 0; i < lv.numel(); ++i) {
    const float x = lv[i];
    const float l = std::max(x, 0.0f) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
    total += weights[i] * l;
  }
  const int lid = logits.id;
  return logits.tape->record("bce_with_logits", Tensor({}, total), {lid},
                             [=](Tape &t, const Tensor &og) {
                               const Tensor &x = t.value(lid);
                               Tensor &dx = t.grad_buffer(lid);
                               const float g = og.item();
                               for (std::size_t i = 0; i < x.numel(); ++i) {
                                 const float s = 1.0f / (1.0f + std::exp(-x[i]));
                                 dx[i] += g * weights[i] * (s - targets[i]);
                               }
                             });
}

Var smooth_l1(Var pred, const Tensor &targets, const Tensor &weights) {
  const Tensor &pv = pred.value();
  if (targets.shape() != pv.shape() || weights.shape() != pv.shape())
    throw ConfigError("smooth_l1: shape mismatch pred " + shape_str(pv.shape()) + ", targets " +
                      shape_str(targets.shape()) + ", weights " + shape_str(weights.shape()));
  float total = 0.0f;
  for (std::size_t i = 0; i < pv.numel(); ++i) {
    const float d = pv[i] - targets[i];
    const float ad = std::abs(d);
    total += weights[i] * (ad < 1.0f ? 0.5f * d * d : ad - 0.5f);
  }
  const int pid = pred.id;
  return pred.tape->record("smooth_l1", Tensor({}, total), {pid}, [=](Tape &t, const Tensor &og) {
    const Tensor &p = t.value(pid);
    Tensor &dp = t.grad_buffer(pid);
    const float g = og.item();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const float d = p[i] - targets[i];
      const float dd = std::abs(d) < 1.0f ? d : (d > 0.0f ? 1.0f : -1.0f);
      dp[i] += g * weights[i] * dd;
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels, const Tensor &weights) {
  const Tensor &lv = logits.value();
  check_chw(lv, "softmax_cross_entropy");
  const int K = lv.dim(0);
  const std::size_t cells = static_cast<std::size_t>(lv.dim(1)) * lv.dim(2);
  if (weights.numel() != cells || labels.size() != cells)
    throw ConfigError("softmax_cross_entropy: logits " + shape_str(lv.shape()) + " vs weights " +
                      shape_str(weights.shape()) + " / " + std::to_string(labels.size()) + " labels");
  // softmax probabilities saved for backward, K×cells
  auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(K) * cells);
  std::vector<int> lab(labels.begin(), labels.end());
  float total = 0.0f;
  for (std::size_t c = 0; c < cells; ++c) {
    float mx = lv[c];
    for (int k = 1; k < K; ++k)
      mx = std::max(mx, lv[k * cells + c]);
    float z = 0.0f;
    for (int k = 0; k < K; ++k)
      z += std::exp(lv[k * cells + c] - mx);
    for (int k = 0; k < K; ++k)
      (*probs)[k * cells + c] = std::exp(lv[k * cells + c] - mx) / z;
    if (weights[c] != 0.0f) {
      if (lab[c] < 0 || lab[c] >= K)
        throw ConfigError("softmax_cross_entropy: label " + std::to_string(lab[c]) + " out of range");
      total += weights[c] * (std::log(z) + mx - lv[lab[c] * cells + c]);
    }
  }
  const int lid = logits.id;
  return logits.tape->record("softmax_cross_entropy", Tensor({}, total), {lid},
                             [=](Tape &t, const Tensor &og) {
                               Tensor &dx = t.grad_buffer(lid);
                               const float g = og.item();
                               for (std::size_t c = 0; c < cells; ++c) {
                                 if (weights[c] == 0.0f)
                                   continue;
                                 for (int k = 0; k < K; ++k) {
                                   const float p = (*probs)[k * cells + c] - (k == lab[c] ? 1.0f : 0.0f);
                                   dx[k * cells + c] += g * weights[c] * p;
                                 }
                               }
                             });
}

// ---- ParamStore ------------------------------------------------------------

void ParamStore::add(const std::string &name, Tensor value) {
  if (index_.count(name))
    throw ConfigError("duplicate parameter " + name);
  index_[name] = values_.size();
  names_.push_back(name);
  grads_.emplace_back(value.shape());
  values_.push_back(std::move(value));
}

Tensor &ParamStore::value(const std::string &name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw ConfigError("unknown parameter " + name);
  return values_[it->second];
}
const Tensor &ParamStore::value(const std::string &name) const {
  return const_cast<ParamStore *>(this)->value(name);
}
Tensor &ParamStore::grad(const std::string &name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw ConfigError("unknown parameter " + name);
  return grads_[it->second];
}
const Tensor &ParamStore::grad(const std::string &name) const {
  return const_cast<ParamStore *>(this)->grad(name);
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto &v : values_)
    n += v.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto &g : grads_)
    g.fill(0.0f);
}

void ParamStore::sgd_step(float lr) {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    auto p = values_[i].data();
    auto g = grads_[i].data();
    for (std::size_t j = 0; j < p.size(); ++j)
      p[j] -= lr * g[j];
  }
  zero_grad();
}

std::map<std::string, Var> ParamStore::bind(Tape &tape, bool requires_grad) const {
  std::map<std::string, Var> out;
  for (std::size_t i = 0; i < names_.size(); ++i)
    out[names_[i]] = tape.leaf(values_[i], requires_grad);
  return out;
}

void ParamStore::accumulate(const std::map<std::string, Var> &bound, float s) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    auto it = bound.find(names_[i]);
    if (it == bound.end())
      throw ConfigError("parameter " + names_[i] + " not bound on tape");
    add_into(grads_[i], it->second.grad(), s);
  }
}

bool ParamStore::operator==(const ParamStore &o) const {
  return names_ == o.names_ && values_ == o.values_;
}

// ---- checkpoint ------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'F', 'U', 'S', 'E', 'L', 'A', 'B', '1'};
}

std::vector<std::uint8_t> serialize_params(const ParamStore &params) {
  binio::Writer w;
  w.put_bytes(std::span(reinterpret_cast<const std::uint8_t *>(kMagic), 8));
  for (const auto &name : params.names()) {
    const Tensor &t = params.value(name);
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape())
      w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_floats(t.data());
  }
  return w.bytes();
}

ParamStore deserialize_params(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  auto magic = r.get_bytes(8);
  if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t *>(kMagic)))
    throw IoError("not a FUSELAB1 checkpoint");
  ParamStore ps;
  while (!r.done()) {
    auto name = r.get_string();
    auto rank = r.get<std::uint32_t>();
    if (rank > 8)
      throw IoError("checkpoint record " + name + " has implausible rank " + std::to_string(rank));
    std::vector<int> shape;
    for (std::uint32_t i = 0; i < rank; ++i)
      shape.push_back(static_cast<int>(r.get<std::uint32_t>()));
    auto n = shape_numel(shape);
    if (n * sizeof(float) > r.remaining())
      throw IoError("truncated checkpoint record " + name);
    ps.add(name, Tensor(shape, r.get_floats(n)));
  }
  return ps;
}

void save_checkpoint(const ParamStore &params, const std::filesystem::path &path) {
  binio::write_file(path, serialize_params(params));
}

ParamStore load_checkpoint(const std::filesystem::path &path) {
  return deserialize_params(binio::read_file(path));
}

Tensor he_uniform(std::vector<int> shape, int fan_in, std::uint64_t seed, const std::string &stream) {
  auto rng = named_stream(seed, stream);
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  Tensor t(std::move(shape));
  for (auto &v : t.data())
    v = uniform(rng, -bound, bound);
  return t;
}

} // namespace fuselab
