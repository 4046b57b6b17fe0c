#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "codedlf/autodiff.hpp"

namespace codedlf::ad {

// Named trainable parameters plus Adam moments. Insertion order is preserved
// and defines serialization order.
class ParamStore {
 public:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  ParamStore() = default;
  // Copies are deep: the copy owns fresh parameter leaves.
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Value add(const std::string& name, Shape shape, std::vector<double> init);
  Value& get(const std::string& name);
  const Value& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t parameter_count() const;

  Moments& moments(const std::string& name);
  const Moments& moments(const std::string& name) const;

  std::uint64_t step_count() const { return steps_; }
  void set_step_count(std::uint64_t s) { steps_ = s; }

  // When set, parameters are rounded to the nearest float after every update
  // so that f32 serialization is exact.
  void set_f32_storage(bool on) { f32_storage_ = on; }
  bool f32_storage() const { return f32_storage_; }
  void round_to_f32();

  void zero_grad();

 private:
  friend void adam_step(ParamStore&, double, double, double, double);
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
  std::vector<Value> params_;
  std::vector<Moments> moments_;
  std::uint64_t steps_ = 0;
  bool f32_storage_ = false;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update of every parameter; clears gradients afterwards.
// Throws if any parameter received no gradient since the last step.
void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps);
inline void adam_step(ParamStore& store, const AdamConfig& cfg) {
  adam_step(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Compares backward() against central differences (f(p+eps) - f(p-eps)) / 2eps
// for every element of every parameter in `store`. Relative error per element
// is |a - n| / max(|a|, |n|, abs_floor).
GradCheckResult grad_check(const std::function<Value(ParamStore&)>& loss_fn, ParamStore& store,
                           double eps = 1e-5, double abs_floor = 1e-8);

}  // namespace codedlf::ad
