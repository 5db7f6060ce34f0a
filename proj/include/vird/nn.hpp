#pragma once

// Named parameter store with Adam state, plus the per-tape binder that turns
// stored tensors into gradient-tracked leaves exactly once per tape.

#include <map>
#include <unordered_map>

#include "vird/autodiff.hpp"

namespace vird {

class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    index_[name] = static_cast<int>(names_.size());
    names_.push_back(name);
    values_.push_back(std::move(init));
    m_.push_back(Tensor::zeros(values_.back().shape));
    v_.push_back(Tensor::zeros(values_.back().shape));
    return values_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  int id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }

  Tensor& value(int i) { return values_[static_cast<size_t>(i)]; }
  const Tensor& value(int i) const { return values_[static_cast<size_t>(i)]; }
  Tensor& value(const std::string& name) { return values_[static_cast<size_t>(id(name))]; }
  const Tensor& value(const std::string& name) const {
    return values_[static_cast<size_t>(id(name))];
  }

  int count() const { return static_cast<int>(names_.size()); }
  const std::string& name(int i) const { return names_[static_cast<size_t>(i)]; }

  std::int64_t total_scalars() const {
    std::int64_t n = 0;
    for (const auto& t : values_) n += t.numel();
    return n;
  }

  /// One Adam step over accumulated gradients (indexed like the store).
  void adam_step(const std::vector<Tensor>& grads, double lr, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8) {
    if (grads.size() != values_.size())
      throw std::invalid_argument("adam_step: gradient count mismatch");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1, t_);
    double bc2 = 1.0 - std::pow(beta2, t_);
    for (size_t p = 0; p < values_.size(); ++p) {
      if (grads[p].data.empty()) continue;  // parameter untouched this step
      auto& val = values_[p];
      auto& m = m_[p];
      auto& v = v_[p];
      for (size_t i = 0; i < val.data.size(); ++i) {
        double g = grads[p].data[i];
        m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g;
        v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g * g;
        val.data[i] -= lr * (m.data[i] / bc1) / (std::sqrt(v.data[i] / bc2) + eps);
      }
    }
  }

  std::vector<Tensor> zero_grads() const { return std::vector<Tensor>(values_.size()); }

  bool all_finite() const {
    for (const auto& t : values_)
      if (!t.all_finite()) return false;
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
  std::vector<Tensor> values_, m_, v_;
  std::int64_t t_ = 0;
};

/// Binds store parameters onto one tape, each at most once, and collects
/// their gradients back out after backward().
class Binder {
 public:
  Binder(Tape& tape, const ParamStore& store, bool track_grads = true)
      : tape_(tape), store_(store), track_(track_grads) {}

  Var operator()(const std::string& name) {
    int pid = store_.id(name);
    auto it = bound_.find(pid);
    if (it != bound_.end()) return it->second;
    Var v = tape_.leaf(store_.value(pid), track_);
    bound_.emplace(pid, v);
    return v;
  }

  Tape& tape() { return tape_; }

  /// Adds this tape's parameter gradients into `grads` (store-indexed).
  void collect_grads(std::vector<Tensor>& grads) {
    for (const auto& [pid, var] : bound_) {
      const Tensor& g = tape_.grad(var);
      auto& dst = grads[static_cast<size_t>(pid)];
      if (dst.data.empty())
        dst = g;
      else
        kern::axpy(dst, g);
    }
  }

 private:
  Tape& tape_;
  const ParamStore& store_;
  bool track_;
  std::map<int, Var> bound_;  // ordered so collection order is deterministic
};

// ---------------------------------------------------------------------------
// initializers

inline Tensor normal_init(Rng& rng, std::vector<int> shape, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.normal(0.0, stddev);
  return t;
}

/// Scaled normal init with stddev 1/sqrt(fan_in); works well with tanh nets.
inline Tensor fanin_init(Rng& rng, std::vector<int> shape) {
  std::int64_t fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  if (shape.size() == 2) fan_in = shape[0];  // (din, dout) linear layout
  return normal_init(rng, shape, 1.0 / std::sqrt(static_cast<double>(std::max<std::int64_t>(fan_in, 1))));
}

}  // namespace vird
