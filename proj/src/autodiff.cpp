#include "codedlf/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "codedlf/error.hpp"
#include "kernels.hpp"

namespace codedlf::ad {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

std::atomic<std::uint64_t> g_next_id{1};
#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif
thread_local bool t_grad_enabled = true;
std::string g_fault_op;
double g_fault_factor = 1.0;

NodePtr new_node(std::string_view op, Shape shape, std::vector<double> value) {
  auto node = std::make_shared<Node>();
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  return node;
}

void check_finite(const Node& node) {
  if (!g_finite_checks.load(std::memory_order_relaxed)) return;
  for (double v : node.value) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::NonFinite, "non-finite output from op '" + std::string(node.op) + "'");
    }
  }
}

// Creates the result node; records inputs only if one of them needs a gradient.
NodePtr make_result(std::string_view op, Shape shape, std::vector<double> value,
                    std::initializer_list<const Value*> inputs) {
  auto node = new_node(op, std::move(shape), std::move(value));
  node->leaf = false;
  if (t_grad_enabled) {
    for (const Value* in : inputs) {
      if (in->requires_grad()) node->requires_grad = true;
    }
  }
  if (node->requires_grad) {
    for (const Value* in : inputs) node->inputs.push_back(in->node());
  }
  check_finite(*node);
  return node;
}

void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

void require_value(const Value& v, const char* op) {
  require(static_cast<bool>(v), ErrorKind::Graph, std::string(op) + ": empty value");
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

std::vector<double>& Node::input_grad(std::size_t i) {
  auto& in = *inputs[i];
  if (in.grad.size() != in.value.size()) in.grad.assign(in.value.size(), 0.0);
  return in.grad;
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// --- Value -----------------------------------------------------------------

Value Value::constant(Shape shape, std::vector<double> data) {
  require(shape_size(shape) == data.size(), ErrorKind::DimensionMismatch,
          "constant: data length does not match shape " + shape_string(shape));
  auto node = new_node("constant", std::move(shape), std::move(data));
  check_finite(*node);
  return Value(node);
}

Value Value::parameter(Shape shape, std::vector<double> data) {
  require(shape_size(shape) == data.size(), ErrorKind::DimensionMismatch,
          "parameter: data length does not match shape " + shape_string(shape));
  auto node = new_node("parameter", std::move(shape), std::move(data));
  node->requires_grad = true;
  return Value(node);
}

Value Value::zeros(Shape shape) {
  auto n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

const Shape& Value::shape() const { return node_->shape; }
std::size_t Value::size() const { return node_->value.size(); }
std::uint64_t Value::id() const { return node_->id; }
std::string_view Value::op() const { return node_->op; }
std::span<const double> Value::data() const { return node_->value; }

std::span<double> Value::mutable_data() {
  require(node_->leaf, ErrorKind::Graph, "only leaf values can be modified in place");
  return node_->value;
}

bool Value::requires_grad() const { return node_ && node_->requires_grad; }
bool Value::is_leaf() const { return node_->leaf; }
bool Value::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Value::grad() const { return node_->grad; }

std::span<double> Value::mutable_grad() {
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Value::zero_grad() { node_->grad.clear(); }

double Value::item() const {
  require(size() == 1, ErrorKind::DimensionMismatch,
          "item() on a value of shape " + shape_string(shape()));
  return node_->value[0];
}

// --- elementwise binary ----------------------------------------------------

namespace {

enum class BinaryKind { Add, Sub, Mul };

Value binary(const Value& a, const Value& b, BinaryKind kind, std::string_view op) {
  require_value(a, "binary");
  require_value(b, "binary");
  const std::size_t na = a.size(), nb = b.size();
  Shape out_shape;
  if (a.shape() == b.shape() || nb == 1 || is_suffix(b.shape(), a.shape())) {
    out_shape = a.shape();
  } else if (na == 1 || is_suffix(a.shape(), b.shape())) {
    out_shape = b.shape();
  } else {
    throw Error(ErrorKind::DimensionMismatch, std::string(op) + ": cannot broadcast " +
                                                  shape_string(a.shape()) + " with " +
                                                  shape_string(b.shape()));
  }
  // The smaller operand repeats every `inner` elements of the output.
  const std::size_t n = shape_size(out_shape);
  const std::size_t inner = std::min(na, nb);
  const bool a_big = na == n, b_big = nb == n;
  std::vector<double> out(n);
  {
    const double* av = a.data().data();
    const double* bv = b.data().data();
    for (std::size_t o = 0; o < n; o += inner) {
      const double* __restrict ap = av + (a_big ? o : 0);
      const double* __restrict bp = bv + (b_big ? o : 0);
      double* __restrict op_out = out.data() + o;
      switch (kind) {
        case BinaryKind::Add: for (std::size_t j = 0; j < inner; ++j) op_out[j] = ap[j] + bp[j]; break;
        case BinaryKind::Sub: for (std::size_t j = 0; j < inner; ++j) op_out[j] = ap[j] - bp[j]; break;
        case BinaryKind::Mul: for (std::size_t j = 0; j < inner; ++j) op_out[j] = ap[j] * bp[j]; break;
      }
    }
  }
  auto node = make_result(op, out_shape, std::move(out), {&a, &b});
  if (node->requires_grad) {
    node->backward = [kind, inner, a_big, b_big](Node& self) {
      const auto& in_a = *self.inputs[0];
      const auto& in_b = *self.inputs[1];
      const std::size_t n = self.grad.size();
      for (int side = 0; side < 2; ++side) {
        const auto& mine = side == 0 ? in_a : in_b;
        if (!mine.requires_grad) continue;
        const bool big = side == 0 ? a_big : b_big;
        const bool other_big = side == 0 ? b_big : a_big;
        const double* other = (side == 0 ? in_b : in_a).value.data();
        const double sign = kind == BinaryKind::Sub && side == 1 ? -1.0 : 1.0;
        double* gm = self.input_grad(side).data();
        const double* g = self.grad.data();
        for (std::size_t o = 0; o < n; o += inner) {
          double* __restrict dst = gm + (big ? o : 0);
          const double* __restrict gp = g + o;
          const double* __restrict xp = other + (other_big ? o : 0);
          if (kind == BinaryKind::Mul) {
            for (std::size_t j = 0; j < inner; ++j) dst[j] += gp[j] * xp[j];
          } else {
            for (std::size_t j = 0; j < inner; ++j) dst[j] += sign * gp[j];
          }
        }
      }
    };
  }
  return Value(node);
}

}  // namespace

Value add(const Value& a, const Value& b) { return binary(a, b, BinaryKind::Add, "add"); }
Value sub(const Value& a, const Value& b) { return binary(a, b, BinaryKind::Sub, "sub"); }
Value mul(const Value& a, const Value& b) { return binary(a, b, BinaryKind::Mul, "mul"); }

// --- matmul ----------------------------------------------------------------

Value matmul(const Value& a, const Value& b) {
  require_value(a, "matmul");
  require_value(b, "matmul");
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), ErrorKind::DimensionMismatch,
          "matmul: incompatible shapes " + shape_string(a.shape()) + " x " +
              shape_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data(), false);
  auto node = make_result("matmul", {m, n}, std::move(out), {&a, &b});
  if (node->requires_grad) {
    node->backward = [m, k, n](Node& self) {
      const auto& in_a = *self.inputs[0];
      const auto& in_b = *self.inputs[1];
      if (in_a.requires_grad) {
        // dA = G * B^T
        std::vector<double> bt(n * k);
        kernels::transpose(k, n, in_b.value.data(), bt.data());
        kernels::gemm_nn(m, n, k, self.grad.data(), bt.data(), self.input_grad(0).data(), true);
      }
      if (in_b.requires_grad) {
        // dB = A^T * G
        kernels::gemm_tn_acc(m, k, n, in_a.value.data(), self.grad.data(),
                             self.input_grad(1).data());
      }
    };
  }
  return Value(node);
}

// --- conv2d ----------------------------------------------------------------

Value conv2d(const Value& x, const Value& w, std::size_t padding) {
  require_value(x, "conv2d");
  require_value(w, "conv2d");
  require(x.rank() == 3 && w.rank() == 4 && w.dim(0) == w.dim(1) && w.dim(2) == x.dim(2),
          ErrorKind::DimensionMismatch,
          "conv2d: incompatible shapes " + shape_string(x.shape()) + " * " +
              shape_string(w.shape()));
  const std::size_t h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
  const std::size_t ks = w.dim(0), cout = w.dim(3);
  require(h + 2 * padding >= ks && wd + 2 * padding >= ks, ErrorKind::DimensionMismatch,
          "conv2d: kernel larger than padded input");
  const std::size_t ho = h + 2 * padding - ks + 1, wo = wd + 2 * padding - ks + 1;
  const std::size_t patch = ks * ks * cin;
  // im2col: row (y, x) holds the receptive field in (ky, kx, ci) order.
  auto cols = std::make_shared<std::vector<double>>(ho * wo * patch, 0.0);
  auto xv = x.data();
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      double* row = cols->data() + (oy * wo + ox) * patch;
      for (std::size_t ky = 0; ky < ks; ++ky) {
        auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(padding);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < ks; ++kx) {
          auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(padding);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
          const double* src = xv.data() + (static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)) * cin;
          std::copy(src, src + cin, row + (ky * ks + kx) * cin);
        }
      }
    }
  }
  std::vector<double> out(ho * wo * cout);
  kernels::gemm_nn(ho * wo, patch, cout, cols->data(), w.data().data(), out.data(), false);
  auto node = make_result("conv2d", {ho, wo, cout}, std::move(out), {&x, &w});
  if (node->requires_grad) {
    node->backward = [=](Node& self) {
      const auto& in_x = *self.inputs[0];
      const auto& in_w = *self.inputs[1];
      if (in_w.requires_grad) {
        kernels::gemm_tn_acc(ho * wo, patch, cout, cols->data(), self.grad.data(),
                             self.input_grad(1).data());
      }
      if (in_x.requires_grad) {
        std::vector<double> wt(cout * patch);
        kernels::transpose(patch, cout, in_w.value.data(), wt.data());
        std::vector<double> dcols(ho * wo * patch);
        kernels::gemm_nn(ho * wo, cout, patch, self.grad.data(), wt.data(), dcols.data(), false);
        auto& gx = self.input_grad(0);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const double* row = dcols.data() + (oy * wo + ox) * patch;
            for (std::size_t ky = 0; ky < ks; ++ky) {
              auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < ks; ++kx) {
                auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                double* dst = gx.data() + (static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)) * cin;
                const double* src = row + (ky * ks + kx) * cin;
                for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
              }
            }
          }
        }
      }
    };
  }
  return Value(node);
}

// --- unary activations -----------------------------------------------------

namespace {

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename Fwd, typename Deriv>
Value unary(const Value& a, std::string_view op, Fwd fwd, Deriv deriv) {
  require_value(a, "unary");
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  auto node = make_result(op, a.shape(), std::move(out), {&a});
  if (node->requires_grad) {
    node->backward = [deriv](Node& self) {
      const std::size_t n = self.value.size();
      const double* __restrict x = self.inputs[0]->value.data();
      const double* __restrict y = self.value.data();
      const double* __restrict g = self.grad.data();
      double* __restrict gx = self.input_grad(0).data();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * deriv(x[i], y[i]);
    };
  }
  return Value(node);
}

}  // namespace

Value leaky_relu(const Value& a, double slope) {
  return unary(
      a, "leaky_relu", [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Value relu(const Value& a) {
  return unary(
      a, "relu", [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Value sigmoid(const Value& a) {
  return unary(a, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Value softplus(const Value& a) {
  return unary(
      a, "softplus", [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return stable_sigmoid(x); });
}

// --- shape ops -------------------------------------------------------------

Value concat(std::span<const Value> parts, std::size_t axis) {
  require(!parts.empty(), ErrorKind::DimensionMismatch, "concat: no inputs");
  const Shape& first = parts[0].shape();
  require(axis < first.size(), ErrorKind::DimensionMismatch, "concat: axis out of range");
  std::size_t outer = 1, inner = 1, total_axis = 0;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  bool any_grad = false;
  for (const auto& p : parts) {
    require_value(p, "concat");
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    require(ok, ErrorKind::DimensionMismatch,
            "concat: shape " + shape_string(s) + " incompatible with " + shape_string(first));
    total_axis += s[axis];
    any_grad = any_grad || (p.requires_grad() && t_grad_enabled);
  }
  Shape out_shape = first;
  out_shape[axis] = total_axis;
  std::vector<double> out(outer * total_axis * inner);
  std::vector<std::size_t> widths;
  for (std::size_t o = 0; o < outer; ++o) {
    double* dst = out.data() + o * total_axis * inner;
    for (const auto& p : parts) {
      std::size_t len = p.dim(axis) * inner;
      const double* src = p.data().data() + o * len;
      dst = std::copy(src, src + len, dst);
    }
  }
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  auto node = new_node("concat", out_shape, std::move(out));
  node->leaf = false;
  if (any_grad) {
    node->requires_grad = true;
    for (const auto& p : parts) node->inputs.push_back(p.node());
    node->backward = [outer, widths, total = total_axis * inner](Node& self) {
      for (std::size_t o = 0; o < outer; ++o) {
        std::size_t off = o * total;
        for (std::size_t pi = 0; pi < widths.size(); ++pi) {
          if (self.inputs[pi]->requires_grad) {
            auto& g = self.input_grad(pi);
            for (std::size_t j = 0; j < widths[pi]; ++j) g[o * widths[pi] + j] += self.grad[off + j];
          }
          off += widths[pi];
        }
      }
    };
  }
  check_finite(*node);
  return Value(node);
}

Value reshape(const Value& a, Shape shape) {
  require_value(a, "reshape");
  require(shape_size(shape) == a.size(), ErrorKind::DimensionMismatch,
          "reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  auto node = make_result("reshape", std::move(shape), std::move(out), {&a});
  if (node->requires_grad) {
    node->backward = [](Node& self) {
      auto& g = self.input_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Value(node);
}

Value slice(const Value& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_value(a, "slice");
  require(axis < a.rank() && begin < end && end <= a.dim(axis), ErrorKind::DimensionMismatch,
          "slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
              ") invalid for " + shape_string(a.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const std::size_t full = a.dim(axis) * inner, len = (end - begin) * inner, off = begin * inner;
  std::vector<double> out(outer * len);
  auto av = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(av.begin() + static_cast<std::ptrdiff_t>(o * full + off),
              av.begin() + static_cast<std::ptrdiff_t>(o * full + off + len),
              out.begin() + static_cast<std::ptrdiff_t>(o * len));
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  auto node = make_result("slice", out_shape, std::move(out), {&a});
  if (node->requires_grad) {
    node->backward = [outer, full, len, off](Node& self) {
      auto& g = self.input_grad(0);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < len; ++j) g[o * full + off + j] += self.grad[o * len + j];
    };
  }
  return Value(node);
}

namespace {

Value reduce(const Value& a, std::optional<std::size_t> axis, bool average, std::string_view op) {
  require_value(a, "reduce");
  std::size_t outer = 1, len = a.size(), inner = 1;
  Shape out_shape{1};
  if (axis) {
    require(*axis < a.rank(), ErrorKind::DimensionMismatch, "reduce: axis out of range");
    outer = 1;
    for (std::size_t d = 0; d < *axis; ++d) outer *= a.dim(d);
    len = a.dim(*axis);
    inner = 1;
    for (std::size_t d = *axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
    out_shape = a.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(*axis));
    if (out_shape.empty()) out_shape = {1};
  }
  const double scale = average ? 1.0 / static_cast<double>(len) : 1.0;
  std::vector<double> out(outer * inner, 0.0);
  auto av = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * len + l) * inner + i];
  if (average)
    for (auto& v : out) v *= scale;
  auto node = make_result(op, out_shape, std::move(out), {&a});
  if (node->requires_grad) {
    node->backward = [outer, len, inner, scale](Node& self) {
      auto& g = self.input_grad(0);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t i = 0; i < inner; ++i)
            g[(o * len + l) * inner + i] += self.grad[o * inner + i] * scale;
    };
  }
  return Value(node);
}

}  // namespace

Value sum(const Value& a, std::optional<std::size_t> axis) { return reduce(a, axis, false, "sum"); }
Value mean(const Value& a, std::optional<std::size_t> axis) { return reduce(a, axis, true, "mean"); }

Value mse(const Value& pred, const Value& target) {
  require_value(pred, "mse");
  require_value(target, "mse");
  require(pred.size() == target.size() && pred.size() > 0, ErrorKind::DimensionMismatch,
          "mse: shapes " + shape_string(pred.shape()) + " and " + shape_string(target.shape()));
  auto p = pred.data();
  auto t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double d = p[i] - t[i];
    acc += d * d;
  }
  const double n = static_cast<double>(p.size());
  auto node = make_result("mse", {1}, {acc / n}, {&pred, &target});
  if (node->requires_grad) {
    node->backward = [n](Node& self) {
      const auto& pv = self.inputs[0]->value;
      const auto& tv = self.inputs[1]->value;
      const double g = self.grad[0] * 2.0 / n;
      if (self.inputs[0]->requires_grad) {
        auto& gp = self.input_grad(0);
        for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += g * (pv[i] - tv[i]);
      }
      if (self.inputs[1]->requires_grad) {
        auto& gt = self.input_grad(1);
        for (std::size_t i = 0; i < pv.size(); ++i) gt[i] -= g * (pv[i] - tv[i]);
      }
    };
  }
  return Value(node);
}

// --- trilinear gather ------------------------------------------------------

namespace {

struct AxisInterp {
  std::size_t i0, i1;
  double w1;
};

AxisInterp axis_interp(double coord, std::size_t extent) {
  if (extent == 1) return {0, 0, 0.0};
  double c = std::clamp(coord, -1.0, 1.0);
  double pos = (c + 1.0) * 0.5 * static_cast<double>(extent - 1);
  auto i0 = static_cast<std::size_t>(std::floor(pos));
  if (i0 >= extent - 1) i0 = extent - 2;
  return {i0, i0 + 1, pos - static_cast<double>(i0)};
}

}  // namespace

Value trilinear_gather(const Value& volume, std::span<const Vec3> coords) {
  require_value(volume, "trilinear_gather");
  require(volume.rank() == 4, ErrorKind::DimensionMismatch,
          "trilinear_gather: volume must be [H,W,D,C], got " + shape_string(volume.shape()));
  const std::size_t h = volume.dim(0), w = volume.dim(1), d = volume.dim(2), c = volume.dim(3);
  const std::size_t n = coords.size();
  auto corners = std::make_shared<std::vector<std::size_t>>(n * 8);
  auto weights = std::make_shared<std::vector<double>>(n * 8);
  std::vector<double> out(n * c, 0.0);
  auto vol = volume.data();
  for (std::size_t q = 0; q < n; ++q) {
    const auto& p = coords[q];
    require(std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z),
            ErrorKind::NonFinite, "trilinear_gather: non-finite coordinate");
    AxisInterp ax = axis_interp(p.x, w), ay = axis_interp(p.y, h), az = axis_interp(p.z, d);
    double* orow = out.data() + q * c;
    for (int corner = 0; corner < 8; ++corner) {
      std::size_t yi = (corner & 4) ? ay.i1 : ay.i0;
      std::size_t xi = (corner & 2) ? ax.i1 : ax.i0;
      std::size_t zi = (corner & 1) ? az.i1 : az.i0;
      double wt = ((corner & 4) ? ay.w1 : 1.0 - ay.w1) * ((corner & 2) ? ax.w1 : 1.0 - ax.w1) *
                  ((corner & 1) ? az.w1 : 1.0 - az.w1);
      std::size_t base = ((yi * w + xi) * d + zi) * c;
      (*corners)[q * 8 + corner] = base;
      (*weights)[q * 8 + corner] = wt;
      for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += wt * vol[base + ch];
    }
  }
  auto node = make_result("trilinear_gather", {n, c}, std::move(out), {&volume});
  if (node->requires_grad) {
    node->backward = [corners, weights, n, c](Node& self) {
      auto& gv = self.input_grad(0);
      for (std::size_t q = 0; q < n; ++q) {
        const double* g = self.grad.data() + q * c;
        for (int corner = 0; corner < 8; ++corner) {
          double wt = (*weights)[q * 8 + corner];
          if (wt == 0.0) continue;
          double* dst = gv.data() + (*corners)[q * 8 + corner];
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += wt * g[ch];
        }
      }
    };
  }
  return Value(node);
}

// --- volume rendering ------------------------------------------------------

Value volume_render(const Value& c, const Value& sigma, std::span<const double> t, double t_far,
                    std::vector<double>* weights_out) {
  require_value(c, "volume_render");
  require_value(sigma, "volume_render");
  require(c.rank() == 2 && c.shape() == sigma.shape() && t.size() == c.size(),
          ErrorKind::DimensionMismatch, "volume_render: c, sigma and t must all be [R,S]");
  const std::size_t rays = c.dim(0), s = c.dim(1);
  auto deltas = std::make_shared<std::vector<double>>(rays * s);
  auto weights = std::make_shared<std::vector<double>>(rays * s);
  auto trans_next = std::make_shared<std::vector<double>>(rays * s);
  std::vector<double> out(rays);
  auto cv = c.data();
  auto sv = sigma.data();
  for (std::size_t r = 0; r < rays; ++r) {
    double transmittance = 1.0, lum = 0.0;
    for (std::size_t i = 0; i < s; ++i) {
      std::size_t idx = r * s + i;
      double next_t = i + 1 < s ? t[idx + 1] : t_far;
      require(i + 1 == s ? next_t >= t[idx] : next_t > t[idx], ErrorKind::NonMonotone,
              "volume_render: sample positions must be strictly increasing");
      double delta = next_t - t[idx];
      double keep = std::exp(-sv[idx] * delta);
      double wt = transmittance * (1.0 - keep);
      (*deltas)[idx] = delta;
      (*weights)[idx] = wt;
      transmittance *= keep;
      (*trans_next)[idx] = transmittance;
      lum += wt * cv[idx];
    }
    out[r] = lum;
  }
  if (weights_out) *weights_out = *weights;
  auto node = make_result("volume_render", {rays}, std::move(out), {&c, &sigma});
  if (node->requires_grad) {
    node->backward = [rays, s, deltas, weights, trans_next](Node& self) {
      const auto& in_c = *self.inputs[0];
      const auto& in_s = *self.inputs[1];
      if (in_c.requires_grad) {
        auto& gc = self.input_grad(0);
        for (std::size_t r = 0; r < rays; ++r)
          for (std::size_t i = 0; i < s; ++i) gc[r * s + i] += self.grad[r] * (*weights)[r * s + i];
      }
      if (in_s.requires_grad) {
        // dL/dsigma_k = delta_k * (T_{k+1} c_k - sum_{i>k} w_i c_i)
        auto& gs = self.input_grad(1);
        for (std::size_t r = 0; r < rays; ++r) {
          double suffix = 0.0;
          for (std::size_t i = s; i-- > 0;) {
            std::size_t idx = r * s + i;
            double d = (*deltas)[idx] * ((*trans_next)[idx] * in_c.value[idx] - suffix);
            gs[idx] += self.grad[r] * d;
            suffix += (*weights)[idx] * in_c.value[idx];
          }
        }
      }
    };
  }
  return Value(node);
}

// --- backward --------------------------------------------------------------

void backward(const Value& loss) {
  require_value(loss, "backward");
  require(loss.size() == 1, ErrorKind::Graph,
          "backward: loss must be a scalar, got " + shape_string(loss.shape()));
  const double one = 1.0;
  backward(loss, std::span<const double>(&one, 1));
}

void backward(const Value& output, std::span<const double> seed) {
  require_value(output, "backward");
  require(seed.size() == output.size(), ErrorKind::DimensionMismatch,
          "backward: seed gradient must match " + shape_string(output.shape()));
  const auto& root = output.node();
  require(!root->released, ErrorKind::Graph,
          "backward: graph already freed (backward called twice without a new forward)");
  require(root->requires_grad, ErrorKind::Graph, "backward: output does not depend on any parameter");
  if (root->leaf) {
    if (root->grad.size() != root->value.size()) root->grad.assign(root->value.size(), 0.0);
    for (std::size_t i = 0; i < seed.size(); ++i) root->grad[i] += seed[i];
    return;
  }
  // Owning handles: clearing a node's inputs below must not free nodes that
  // are still waiting for their backward pass.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{root};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto node = stack.back();
    stack.pop_back();
    require(!node->released, ErrorKind::Graph, "backward: graph reuse after free");
    for (const auto& in : node->inputs) {
      if (in->requires_grad && !in->leaf && seen.insert(in.get()).second) stack.push_back(in);
    }
    order.push_back(std::move(node));
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->id > b->id; });
  root->grad.assign(seed.begin(), seed.end());
  for (const auto& node : order) {
    if (!node->grad.empty() && node->backward) {
      if (!g_fault_op.empty() && node->op == g_fault_op) {
        for (auto& g : node->grad) g *= g_fault_factor;
      }
      node->backward(*node);
    }
    node->backward = nullptr;
    node->inputs.clear();
    if (node != root) node->grad.clear();
    node->released = true;
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks() { return g_finite_checks.load(); }

namespace testing {
void set_backward_fault(std::string op, double factor) {
  g_fault_op = std::move(op);
  g_fault_factor = factor;
}
}  // namespace testing

}  // namespace codedlf::ad
