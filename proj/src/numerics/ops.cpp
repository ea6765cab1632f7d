#include "xst/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "kernels.hpp"

namespace xst {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
bool wants_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (active_tape<T>() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->defined() && t->requires_grad(); });
}

template <typename T>
void record(Tensor<T>& out, std::function<void()> rule) {
  out.set_requires_grad(true);
  active_tape<T>()->record(out.node_ptr(), std::move(rule));
}

template <typename T>
void check_finite([[maybe_unused]] const Tensor<T>& t, [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  for (T v : t.data()) {
    if (!std::isfinite(v)) throw std::domain_error(std::string(op) + ": non-finite output");
  }
#endif
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank - a.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  Shape pb(rank - b.size(), 1);
  pb.insert(pb.end(), b.begin(), b.end());
  const auto sa = contiguous_strides(pa);
  const auto sb = contiguous_strides(pb);
  p.out.resize(rank);
  p.stride_a.resize(rank);
  p.stride_b.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) mismatch(op, a, b);
    p.out[i] = std::max(pa[i], pb[i]);
    p.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t n = shape_numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = p.out.size();
  const std::size_t inner = p.out[rank - 1];
  const std::size_t sa_in = p.stride_a[rank - 1];
  const std::size_t sb_in = p.stride_b[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, ia + j * sa_in, ib + j * sb_in);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * p.out[d];
      ib -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* op) {
  const Broadcast plan = plan_broadcast(a.shape(), b.shape(), op);
  std::vector<T> out(shape_numel(plan.out));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  switch (kind) {
    case BinaryKind::kAdd:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] + pb[j]; });
      break;
    case BinaryKind::kSub:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] - pb[j]; });
      break;
    case BinaryKind::kMul:
      for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] * pb[j]; });
      break;
  }
  Tensor<T> result(plan.out, std::move(out));
  check_finite(result, op);
  if (wants_grad<T>({&a, &b})) {
    NodePtr<T> na = a.node_ptr(), nb = b.node_ptr();
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([na, nb, no, plan, kind] {
      const T* g = no->grad.data();
      if (na->requires_grad) {
        T* ga = na->ensure_grad().data();
        if (kind == BinaryKind::kMul) {
          const T* vb = nb->data.data();
          for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { ga[i] += g[o] * vb[j]; });
        } else {
          for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t) { ga[i] += g[o]; });
        }
      }
      if (nb->requires_grad) {
        T* gb = nb->ensure_grad().data();
        if (kind == BinaryKind::kMul) {
          const T* va = na->data.data();
          for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { gb[j] += g[o] * va[i]; });
        } else if (kind == BinaryKind::kSub) {
          for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t j) { gb[j] -= g[o]; });
        } else {
          for_each_broadcast(plan, [&](std::size_t o, std::size_t, std::size_t j) { gb[j] += g[o]; });
        }
      }
    }));
  }
  return result;
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kAdd, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kSub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kMul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v *= factor;
  Tensor<T> result(x.shape(), std::move(out));
  check_finite(result, "scale");
  if (wants_grad<T>({&x})) {
    NodePtr<T> nx = x.node_ptr();
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([nx, no, factor] {
      T* gx = nx->ensure_grad().data();
      const std::size_t n = no->grad.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += no->grad[i] * factor;
    }));
  }
  return result;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t n = b.dim(b.rank() - 1);
  if (b.dim(b.rank() - 2) != k) mismatch("matmul", a.shape(), b.shape());

  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<T> out(shape_numel(out_shape), T(0));

  if (b.rank() == 2) {
    const std::size_t rows = a.size() / k;
    kernels::gemm_nn(rows, n, k, a.data().data(), b.data().data(), out.data());
    Tensor<T> result(std::move(out_shape), std::move(out));
    check_finite(result, "matmul");
    if (wants_grad<T>({&a, &b})) {
      NodePtr<T> na = a.node_ptr(), nb = b.node_ptr();
      TensorNode<T>* no = result.node_ptr().get();
      record(result, std::function<void()>([na, nb, no, rows, n, k] {
        const T* g = no->grad.data();
        if (na->requires_grad) kernels::gemm_nt(rows, k, n, g, nb->data.data(), na->ensure_grad().data());
        if (nb->requires_grad) kernels::gemm_tn(k, n, rows, na->data.data(), g, nb->ensure_grad().data());
      }));
    }
    return result;
  }

  if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t batch = a.size() / (m * k);
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm_nn(m, n, k, a.data().data() + i * m * k, b.data().data() + i * k * n, out.data() + i * m * n);
  }
  Tensor<T> result(std::move(out_shape), std::move(out));
  check_finite(result, "matmul");
  if (wants_grad<T>({&a, &b})) {
    NodePtr<T> na = a.node_ptr(), nb = b.node_ptr();
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([na, nb, no, batch, m, n, k] {
      const T* g = no->grad.data();
      if (na->requires_grad) {
        T* ga = na->ensure_grad().data();
        for (std::size_t i = 0; i < batch; ++i)
          kernels::gemm_nt(m, k, n, g + i * m * n, nb->data.data() + i * k * n, ga + i * m * k);
      }
      if (nb->requires_grad) {
        T* gb = nb->ensure_grad().data();
        for (std::size_t i = 0; i < batch; ++i)
          kernels::gemm_tn(k, n, m, na->data.data() + i * m * k, g + i * m * n, gb + i * k * n);
      }
    }));
  }
  return result;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const std::size_t rank = x.rank();
  if (order.size() != rank) throw ShapeError("permute: order size mismatch for " + shape_str(x.shape()));
  std::vector<bool> seen(rank, false);
  for (std::size_t a : order) {
    if (a >= rank || seen[a]) throw ShapeError("permute: invalid axis order for " + shape_str(x.shape()));
    seen[a] = true;
  }
  const auto in_strides = contiguous_strides(x.shape());
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.dim(order[i]);
    strides[i] = in_strides[order[i]];
  }
  // Source offset of every output element, in output order.
  const std::size_t n = x.size();
  auto offsets = std::make_shared<std::vector<std::size_t>>(n);
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < n; ++o) {
      (*offsets)[o] = off;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        off += strides[d];
        if (idx[d] < out_shape[d]) break;
        off -= strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  std::vector<T> out(n);
  const T* px = x.data().data();
  for (std::size_t o = 0; o < n; ++o) out[o] = px[(*offsets)[o]];
  Tensor<T> result(std::move(out_shape), std::move(out));
  if (wants_grad<T>({&x})) {
    NodePtr<T> nx = x.node_ptr();
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([nx, no, offsets] {
      T* gx = nx->ensure_grad().data();
      const std::size_t count = offsets->size();
      for (std::size_t o = 0; o < count; ++o) gx[(*offsets)[o]] += no->grad[o];
    }));
  }
  return result;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("transpose: rank < 2 for " + shape_str(x.shape()));
  std::vector<std::size_t> order(x.rank());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(x, order);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) mismatch("reshape", x.shape(), shape);
  Tensor<T> result(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (wants_grad<T>({&x})) {
    NodePtr<T> nx = x.node_ptr();
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([nx, no] {
      T* gx = nx->ensure_grad().data();
      const std::size_t n = no->grad.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += no->grad[i];
    }));
  }
  return result;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) mismatch("concat", first, p.shape());
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.dim(d) != first[d]) mismatch("concat", first, p.shape());
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> widths;
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    widths.push_back(w);
    for (std::size_t r = 0; r < outer; ++r) {
      std::copy_n(p.data().data() + r * w, w, out.data() + r * out_row + col);
    }
    col += w;
  }
  Tensor<T> result(std::move(out_shape), std::move(out));
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && active_tape<T>() != nullptr) {
    std::vector<NodePtr<T>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node_ptr());
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([nodes, widths, no, outer, out_row] {
      std::size_t c = 0;
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        const std::size_t w = widths[i];
        if (nodes[i]->requires_grad) {
          T* g = nodes[i]->ensure_grad().data();
          for (std::size_t r = 0; r < outer; ++r) {
            const T* src = no->grad.data() + r * out_row + c;
            for (std::size_t j = 0; j < w; ++j) g[r * w + j] += src[j];
          }
        }
        c += w;
      }
    }));
  }
  return result;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T k = T(0.044715);
  std::vector<T> out(x.size());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = px[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v)));
  }
  Tensor<T> result(x.shape(), std::move(out));
  check_finite(result, "gelu");
  if (wants_grad<T>({&x})) {
    NodePtr<T> nx = x.node_ptr();
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([nx, no, c, k] {
      T* gx = nx->ensure_grad().data();
      const std::size_t n = no->grad.size();
      for (std::size_t i = 0; i < n; ++i) {
        const T v = nx->data[i];
        const T th = std::tanh(c * (v + k * v * v * v));
        const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * c * (T(1) + T(3) * k * v * v);
        gx[i] += no->grad[i] * d;
      }
    }));
  }
  return result;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v = v > T(0) ? v : T(0);
  Tensor<T> result(x.shape(), std::move(out));
  if (wants_grad<T>({&x})) {
    NodePtr<T> nx = x.node_ptr();
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([nx, no] {
      T* gx = nx->ensure_grad().data();
      const std::size_t n = no->grad.size();
      for (std::size_t i = 0; i < n; ++i) {
        if (nx->data[i] > T(0)) gx[i] += no->grad[i];
      }
    }));
  }
  return result;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= x.dim(d);
  for (std::size_t d = ax + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t len = x.dim(ax);

  std::vector<T> out(x.size());
  const T* px = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = px[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, px[base + i * inner]);
      T total = T(0);
      for (std::size_t i = 0; i < len; ++i) {
        const T e = std::exp(px[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= total;
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  check_finite(result, "softmax");
  if (wants_grad<T>({&x})) {
    NodePtr<T> nx = x.node_ptr();
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([nx, no, outer, inner, len] {
      T* gx = nx->ensure_grad().data();
      const T* y = no->data.data();
      const T* g = no->grad.data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot = T(0);
          for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t p = base + i * inner;
            gx[p] += y[p] * (g[p] - dot);
          }
        }
      }
    }));
  }
  return result;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const std::size_t n = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || gain.dim(0) != n) mismatch("layer_norm", x.shape(), gain.shape());
  if (bias.rank() != 1 || bias.dim(0) != n) mismatch("layer_norm", x.shape(), bias.shape());
  if (!(eps > T(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t rows = x.size() / n;

  std::vector<T> out(x.size());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  const T* px = x.data().data();
  const T* pg = gain.data().data();
  const T* pb = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = px + r * n;
    T m = T(0);
    for (std::size_t i = 0; i < n; ++i) m += row[i];
    m /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t i = 0; i < n; ++i) var += (row[i] - m) * (row[i] - m);
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t i = 0; i < n; ++i) {
      const T h = (row[i] - m) * rs;
      (*xhat)[r * n + i] = h;
      out[r * n + i] = h * pg[i] + pb[i];
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  check_finite(result, "layer_norm");
  if (wants_grad<T>({&x, &gain, &bias})) {
    NodePtr<T> nx = x.node_ptr(), ng = gain.node_ptr(), nb = bias.node_ptr();
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([nx, ng, nb, no, xhat, rstd, rows, n] {
      const T* g = no->grad.data();
      const T* h = xhat->data();
      if (ng->requires_grad) {
        T* gg = ng->ensure_grad().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < n; ++i) gg[i] += g[r * n + i] * h[r * n + i];
      }
      if (nb->requires_grad) {
        T* gb = nb->ensure_grad().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[r * n + i];
      }
      if (nx->requires_grad) {
        T* gx = nx->ensure_grad().data();
        const T* gain_v = ng->data.data();
        std::vector<T> dy(n);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dy = T(0), mean_dyh = T(0);
          for (std::size_t i = 0; i < n; ++i) {
            dy[i] = g[r * n + i] * gain_v[i];
            mean_dy += dy[i];
            mean_dyh += dy[i] * h[r * n + i];
          }
          mean_dy /= static_cast<T>(n);
          mean_dyh /= static_cast<T>(n);
          const T rs = (*rstd)[r];
          for (std::size_t i = 0; i < n; ++i) {
            gx[r * n + i] += rs * (dy[i] - mean_dy - h[r * n + i] * mean_dyh);
          }
        }
      }
    }));
  }
  return result;
}

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw std::invalid_argument("conv1d: stride must be >= 1");
  if (length + 2 * padding < kernel) {
    throw ShapeError("conv1d: input length " + std::to_string(length) + " too short for kernel " +
                     std::to_string(kernel) + " with padding " + std::to_string(padding));
  }
  return (length + 2 * padding - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("conv1d: input must be [T,C] or [B,T,C], got " + shape_str(x.shape()));
  if (weight.rank() != 3) throw ShapeError("conv1d: weight must be [K,C_in,C_out], got " + shape_str(weight.shape()));
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t len = x.dim(x.rank() - 2);
  const std::size_t cin = x.dim(x.rank() - 1);
  const std::size_t kernel = weight.dim(0);
  const std::size_t cout = weight.dim(2);
  if (weight.dim(1) != cin) mismatch("conv1d", x.shape(), weight.shape());
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != cout)) mismatch("conv1d", weight.shape(), bias.shape());
  const std::size_t out_len = conv1d_output_length(len, kernel, stride, padding);

  // im2col: one row of kernel*cin values per output position.
  const std::size_t width = kernel * cin;
  auto cols = std::make_shared<std::vector<T>>(batch * out_len * width, T(0));
  const T* px = x.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < out_len; ++t) {
      T* row = cols->data() + (b * out_len + t) * width;
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(padding);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        std::copy_n(px + (b * len + static_cast<std::size_t>(src)) * cin, cin, row + k * cin);
      }
    }
  }
  const std::size_t rows = batch * out_len;
  std::vector<T> out(rows * cout, T(0));
  if (has_bias) {
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(bias.data().data(), cout, out.data() + r * cout);
  }
  kernels::gemm_nn(rows, cout, width, cols->data(), weight.data().data(), out.data());
  Shape out_shape = batched ? Shape{batch, out_len, cout} : Shape{out_len, cout};
  Tensor<T> result(std::move(out_shape), std::move(out));
  check_finite(result, "conv1d");
  if (wants_grad<T>({&x, &weight, &bias})) {
    NodePtr<T> nx = x.node_ptr(), nw = weight.node_ptr();
    NodePtr<T> nb = has_bias ? bias.node_ptr() : nullptr;
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([=] {
      const T* g = no->grad.data();
      if (nw->requires_grad) kernels::gemm_tn(width, cout, rows, cols->data(), g, nw->ensure_grad().data());
      if (nb && nb->requires_grad) {
        T* gb = nb->ensure_grad().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cout; ++c) gb[c] += g[r * cout + c];
      }
      if (nx->requires_grad) {
        std::vector<T> dcols(rows * width, T(0));
        kernels::gemm_nt(rows, width, cout, g, nw->data.data(), dcols.data());
        T* gx = nx->ensure_grad().data();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t t = 0; t < out_len; ++t) {
            const T* row = dcols.data() + (b * out_len + t) * width;
            for (std::size_t k = 0; k < kernel; ++k) {
              const std::ptrdiff_t src =
                  static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(padding);
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
              T* dst = gx + (b * len + static_cast<std::size_t>(src)) * cin;
              for (std::size_t c = 0; c < cin; ++c) dst[c] += row[k * cin + c];
            }
          }
        }
      }
    }));
  }
  return result;
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be [V,d], got " + shape_str(table.shape()));
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id list");
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  auto idv = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) + " at position " +
                              std::to_string(i) + " outside [0," + std::to_string(vocab) + ")");
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  Tensor<T> result(Shape{ids.size(), d}, std::move(out));
  if (wants_grad<T>({&table})) {
    NodePtr<T> nt = table.node_ptr();
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([nt, no, idv, d] {
      T* gt = nt->ensure_grad().data();
      for (std::size_t i = 0; i < idv->size(); ++i) {
        T* dst = gt + static_cast<std::size_t>((*idv)[i]) * d;
        const T* src = no->grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    }));
  }
  return result;
}

template <typename T>
Tensor<T> nll_loss(const Tensor<T>& logits, std::span<const int> targets, int pad_id, T smoothing) {
  if (logits.rank() < 1) throw ShapeError("nll_loss: scalar logits");
  const std::size_t vocab = logits.dim(logits.rank() - 1);
  const std::size_t rows = logits.size() / vocab;
  if (targets.size() != rows) {
    throw ShapeError("nll_loss: " + std::to_string(targets.size()) + " targets for logits " + shape_str(logits.shape()));
  }
  const T* px = logits.data().data();
  auto probs = std::make_shared<std::vector<T>>(logits.size(), T(0));
  std::size_t valid = 0;
  T total = T(0);
  const T uniform = smoothing / static_cast<T>(vocab);
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t == pad_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw std::out_of_range("nll_loss: target " + std::to_string(t) + " at row " + std::to_string(r) + " outside vocabulary");
    }
    const T* row = px + r * vocab;
    T mx = row[0];
    for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
    T z = T(0);
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(row[v] - mx);
    const T log_z = mx + std::log(z);
    T* p = probs->data() + r * vocab;
    for (std::size_t v = 0; v < vocab; ++v) p[v] = std::exp(row[v] - log_z);
    T row_loss = -(T(1) - smoothing) * (row[t] - log_z);
    if (smoothing > T(0)) {
      T sum_logp = T(0);
      for (std::size_t v = 0; v < vocab; ++v) sum_logp += row[v] - log_z;
      row_loss -= uniform * sum_logp;
    }
    total += row_loss;
    ++valid;
  }
  const T value = valid == 0 ? T(0) : total / static_cast<T>(valid);
  Tensor<T> result = Tensor<T>::scalar(value);
  check_finite(result, "nll_loss");
  if (valid > 0 && wants_grad<T>({&logits})) {
    NodePtr<T> nl = logits.node_ptr();
    TensorNode<T>* no = result.node_ptr().get();
    auto tg = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    record(result, std::function<void()>([nl, no, probs, tg, pad_id, smoothing, uniform, vocab, valid] {
      T* gl = nl->ensure_grad().data();
      const T scale_by = no->grad[0] / static_cast<T>(valid);
      for (std::size_t r = 0; r < tg->size(); ++r) {
        const int t = (*tg)[r];
        if (t == pad_id) continue;
        const T* p = probs->data() + r * vocab;
        T* dst = gl + r * vocab;
        for (std::size_t v = 0; v < vocab; ++v) {
          T q = uniform;
          if (static_cast<int>(v) == t) q += T(1) - smoothing;
          dst[v] += scale_by * (p[v] - q);
        }
      }
    }));
  }
  return result;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, std::mt19937_64& rng) {
  if (rate <= T(0)) return x;
  if (rate >= T(1)) throw std::invalid_argument("dropout: rate must be < 1");
  const T keep_scale = T(1) / (T(1) - rate);
  auto mask = std::make_shared<std::vector<T>>(x.size());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<T> out(x.size());
  const T* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T m = unit(rng) < static_cast<double>(rate) ? T(0) : keep_scale;
    (*mask)[i] = m;
    out[i] = px[i] * m;
  }
  Tensor<T> result(x.shape(), std::move(out));
  if (wants_grad<T>({&x})) {
    NodePtr<T> nx = x.node_ptr();
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([nx, no, mask] {
      T* gx = nx->ensure_grad().data();
      const std::size_t n = no->grad.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += no->grad[i] * (*mask)[i];
    }));
  }
  return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  Tensor<T> result = Tensor<T>::scalar(total);
  check_finite(result, "sum");
  if (wants_grad<T>({&x})) {
    NodePtr<T> nx = x.node_ptr();
    TensorNode<T>* no = result.node_ptr().get();
    record(result, std::function<void()>([nx, no] {
      T* gx = nx->ensure_grad().data();
      const T g = no->grad[0];
      for (std::size_t i = 0; i < nx->data.size(); ++i) gx[i] += g;
    }));
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> custom_op(Shape shape, std::vector<T> values, std::initializer_list<Tensor<T>> inputs,
                    std::function<void(std::span<const T>)> rule) {
  Tensor<T> result(std::move(shape), std::move(values));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any && active_tape<T>() != nullptr) {
    TensorNode<T>* no = result.node_ptr().get();
    std::vector<NodePtr<T>> keep;
    for (const auto& in : inputs) keep.push_back(in.node_ptr());
    record(result, std::function<void()>([no, keep, rule] { rule(no->grad); }));
  }
  return result;
}

#define XST_INSTANTIATE_OPS(T)                                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> transpose(const Tensor<T>&);                                                       \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                  \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                \
  template Tensor<T> gelu(const Tensor<T>&);                                                            \
  template Tensor<T> relu(const Tensor<T>&);                                                            \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                    \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);               \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> embedding_lookup(const Tensor<T>&, std::span<const int>);                          \
  template Tensor<T> nll_loss(const Tensor<T>&, std::span<const int>, int, T);                          \
  template Tensor<T> dropout(const Tensor<T>&, T, std::mt19937_64&);                                    \
  template Tensor<T> sum(const Tensor<T>&);                                                             \
  template Tensor<T> mean(const Tensor<T>&);                                                            \
  template Tensor<T> custom_op(Shape, std::vector<T>, std::initializer_list<Tensor<T>>,                 \
                               std::function<void(std::span<const T>)>);

XST_INSTANTIATE_OPS(float)
XST_INSTANTIATE_OPS(double)

#undef XST_INSTANTIATE_OPS

}  // namespace xst
