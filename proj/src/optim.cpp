#include "codedlf/optim.hpp"

#include <cmath>

#include "codedlf/error.hpp"

namespace codedlf::ad {

ParamStore::ParamStore(const ParamStore& other)
    : names_(other.names_),
      index_(other.index_),
      moments_(other.moments_),
      steps_(other.steps_),
      f32_storage_(other.f32_storage_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) {
    params_.push_back(Value::parameter(p.shape(), std::vector<double>(p.data().begin(), p.data().end())));
  }
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this != &other) *this = ParamStore(other);
  return *this;
}

Value ParamStore::add(const std::string& name, Shape shape, std::vector<double> init) {
  if (contains(name)) throw Error(ErrorKind::InvalidConfig, "duplicate parameter '" + name + "'");
  if (f32_storage_)
    for (auto& x : init) x = static_cast<double>(static_cast<float>(x));
  std::size_t n = init.size();
  index_[name] = params_.size();
  names_.push_back(name);
  params_.push_back(Value::parameter(std::move(shape), std::move(init)));
  moments_.push_back({std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  return params_.back();
}

Value& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::InvalidConfig, "unknown parameter '" + name + "'");
  return params_[it->second];
}

const Value& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::InvalidConfig, "unknown parameter '" + name + "'");
  return params_[it->second];
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

ParamStore::Moments& ParamStore::moments(const std::string& name) {
  get(name);
  return moments_[index_.at(name)];
}

const ParamStore::Moments& ParamStore::moments(const std::string& name) const {
  get(name);
  return moments_[index_.at(name)];
}

void ParamStore::round_to_f32() {
  for (auto& p : params_)
    for (auto& x : p.mutable_data()) x = static_cast<double>(static_cast<float>(x));
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps) {
  for (std::size_t i = 0; i < store.params_.size(); ++i) {
    if (!store.params_[i].has_grad()) {
      throw Error(ErrorKind::MissingGradient, "parameter '" + store.names_[i] + "' has no gradient");
    }
  }
  store.steps_ += 1;
  const double t = static_cast<double>(store.steps_);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < store.params_.size(); ++i) {
    auto& p = store.params_[i];
    auto& mom = store.moments_[i];
    auto data = p.mutable_data();
    auto grad = p.grad();
    for (std::size_t j = 0; j < data.size(); ++j) {
      double g = grad[j];
      mom.m[j] = beta1 * mom.m[j] + (1.0 - beta1) * g;
      mom.v[j] = beta2 * mom.v[j] + (1.0 - beta2) * g * g;
      double mhat = mom.m[j] / bc1;
      double vhat = mom.v[j] / bc2;
      data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      if (store.f32_storage_) data[j] = static_cast<double>(static_cast<float>(data[j]));
    }
    p.zero_grad();
  }
}

GradCheckResult grad_check(const std::function<Value(ParamStore&)>& loss_fn, ParamStore& store,
                           double eps, double abs_floor) {
  store.zero_grad();
  Value loss = loss_fn(store);
  backward(loss);
  GradCheckResult result;
  for (const auto& name : store.names()) {
    Value& p = store.get(name);
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) analytic.assign(p.grad().begin(), p.grad().end());
    auto data = p.mutable_data();
    NoGradGuard no_grad;
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double orig = data[j];
      data[j] = orig + eps;
      double f_plus = loss_fn(store).item();
      data[j] = orig - eps;
      double f_minus = loss_fn(store).item();
      data[j] = orig;
      double numeric = (f_plus - f_minus) / (2.0 * eps);
      double denom = std::max({std::abs(analytic[j]), std::abs(numeric), abs_floor});
      double rel = std::abs(analytic[j] - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        if (rel >= result.max_rel_error) {
          result.max_rel_error = rel;
          result.worst_param = name;
          result.worst_index = j;
          result.analytic = analytic[j];
          result.numeric = numeric;
        }
      }
    }
  }
  store.zero_grad();
  return result;
}

}  // namespace codedlf::ad
