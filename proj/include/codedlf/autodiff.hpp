#pragma once

// Minimal reverse-mode automatic differentiation over dense double arrays.
//
// Every op returns a new Value. When any input requires a gradient the result
// records its inputs and a backward closure; the graph is the DAG reachable
// from the loss. Node ids increase monotonically, so sorting by id gives a
// topological order. backward() frees the graph; calling it again on the same
// loss is an error.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace codedlf::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  std::uint64_t id = 0;
  std::string_view op;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Adds `g` into inputs[i]'s gradient, allocating it on first use.
  std::vector<double>& input_grad(std::size_t i);
};

}  // namespace detail

class Value {
 public:
  Value() = default;

  static Value constant(Shape shape, std::vector<double> data);
  static Value parameter(Shape shape, std::vector<double> data);
  static Value zeros(Shape shape);

  explicit operator bool() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::uint64_t id() const;
  std::string_view op() const;

  std::span<const double> data() const;
  // Only leaves may be written in place (optimizer updates, grad checks).
  std::span<double> mutable_data();

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  double item() const;

  // Internal; used by op implementations.
  explicit Value(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// --- operators -------------------------------------------------------------
// Elementwise binary ops broadcast when one operand's shape is a suffix of the
// other's (or it holds a single element).
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);

// [M, K] x [K, N] -> [M, N]
Value matmul(const Value& a, const Value& b);

// x: [H, W, Cin], w: [k, k, Cin, Cout] -> [H + 2p - k + 1, W + 2p - k + 1, Cout].
// Stride 1, zero padding p.
Value conv2d(const Value& x, const Value& w, std::size_t padding);

Value leaky_relu(const Value& a, double slope);
Value relu(const Value& a);
Value sigmoid(const Value& a);
Value softplus(const Value& a);

Value concat(std::span<const Value> parts, std::size_t axis);
Value reshape(const Value& a, Shape shape);
Value slice(const Value& a, std::size_t axis, std::size_t begin, std::size_t end);

// Reduce over `axis`, or over everything when no axis is given (result shape {1}).
Value sum(const Value& a, std::optional<std::size_t> axis = std::nullopt);
Value mean(const Value& a, std::optional<std::size_t> axis = std::nullopt);

// Mean squared error, result shape {1}.
Value mse(const Value& pred, const Value& target);

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

// volume: [H, W, D, C]; coords in [-1, 1]^3 with X along W, Y along H, Z along
// D. Voxel centers sit on the interval ends (index 0 <-> -1). Out-of-range
// coordinates are clamped to the boundary. Gradients flow to the volume only.
Value trilinear_gather(const Value& volume, std::span<const Vec3> coords);

// Emission-absorption quadrature along R rays of S samples each.
// c, sigma: [R, S]; t: R*S increasing sample positions per ray; the last
// interval of each ray ends at t_far. Returns [R] luminances; per-sample
// compositing weights are written to `weights_out` when non-null.
Value volume_render(const Value& c, const Value& sigma, std::span<const double> t, double t_far,
                    std::vector<double>* weights_out = nullptr);

// --- graph -----------------------------------------------------------------

// Accumulates dLoss/dLeaf into every reachable leaf that requires a gradient.
void backward(const Value& loss);

// Same, seeding dOutput with `seed` (one entry per element of `output`).
// Lets a graph be split at a detached intermediate and differentiated in
// pieces.
void backward(const Value& output, std::span<const double> seed);

// While alive, ops on this thread record no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Non-finite checks after every op; on by default in debug builds.
void set_finite_checks(bool enabled);
bool finite_checks();

namespace testing {
// Scales the incoming gradient of every node produced by `op` during
// backward; an empty name disables the fault. For exercising gradient checks.
void set_backward_fault(std::string op, double factor);
}  // namespace testing

}  // namespace codedlf::ad
