#pragma once
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "vidswap/numcore/tensor.hpp"

namespace vidswap::numcore {

// Named parameter map. Names are unique, shapes immutable after creation;
// iteration order is the (deterministic) insertion order.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& create(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    values_.push_back(std::move(init));
    return values_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
    return values_[it->second];
  }
  const Tensor<T>& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }

  void set(const std::string& name, const Tensor<T>& v) {
    Tensor<T>& dst = get(name);
    if (!dst.same_shape(v))
      throw ValidationError("parameter shape is immutable: " + name + " is " +
                            shape_str(dst.shape()) + ", got " + shape_str(v.shape()));
    dst = v;
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t count() const { return names_.size(); }

  index_t total_scalars() const {
    index_t n = 0;
    for (const auto& v : values_) n += v.numel();
    return n;
  }

  long step = 0;

 private:
  std::map<std::string, std::size_t> index_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
};

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

template <typename T>
double grad_global_norm(const GradMap<T>& grads) {
  double acc = 0;
  for (const auto& [name, g] : grads)
    for (index_t i = 0; i < g.numel(); ++i) acc += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  return std::sqrt(acc);
}

// scales all grads so the global norm does not exceed cap
template <typename T>
void clip_grad_norm(GradMap<T>& grads, double cap) {
  const double norm = grad_global_norm(grads);
  if (norm <= cap || norm == 0) return;
  const T s = static_cast<T>(cap / norm);
  for (auto& [name, g] : grads)
    for (index_t i = 0; i < g.numel(); ++i) g[i] *= s;
}

template <typename T>
struct AdamConfig {
  T lr = static_cast<T>(1e-3);
  T beta1 = static_cast<T>(0.9);
  T beta2 = static_cast<T>(0.999);
  T eps = static_cast<T>(1e-8);
  double clip_norm = 1.0;  // <= 0 disables clipping
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig<T> cfg = {}) : cfg_(cfg) {}

  void step(ParamStore<T>& params, GradMap<T> grads) {
    if (cfg_.clip_norm > 0) clip_grad_norm(grads, cfg_.clip_norm);
    params.step += 1;
    const double t = static_cast<double>(params.step);
    const T bc1 = static_cast<T>(1.0 - std::pow(static_cast<double>(cfg_.beta1), t));
    const T bc2 = static_cast<T>(1.0 - std::pow(static_cast<double>(cfg_.beta2), t));
    for (const auto& name : params.names()) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      Tensor<T>& p = params.get(name);
      const Tensor<T>& g = it->second;
      Tensor<T>& m = state(m_, name, p.shape());
      Tensor<T>& v = state(v_, name, p.shape());
      for (index_t i = 0; i < p.numel(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (T(1) - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (T(1) - cfg_.beta2) * g[i] * g[i];
        const T mh = m[i] / bc1;
        const T vh = v[i] / bc2;
        p[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
      }
    }
  }

  const AdamConfig<T>& config() const { return cfg_; }

 private:
  AdamConfig<T> cfg_;
  std::map<std::string, Tensor<T>> m_, v_;

  static Tensor<T>& state(std::map<std::string, Tensor<T>>& store, const std::string& name,
                          const Shape& shape) {
    auto it = store.find(name);
    if (it == store.end()) it = store.emplace(name, Tensor<T>(shape)).first;
    return it->second;
  }
};

template <typename T>
struct SgdConfig {
  T lr = static_cast<T>(1e-2);
  T momentum = static_cast<T>(0.9);
  double clip_norm = 1.0;
};

template <typename T>
class SgdMomentum {
 public:
  explicit SgdMomentum(SgdConfig<T> cfg = {}) : cfg_(cfg) {}

  void step(ParamStore<T>& params, GradMap<T> grads) {
    if (cfg_.clip_norm > 0) clip_grad_norm(grads, cfg_.clip_norm);
    params.step += 1;
    for (const auto& name : params.names()) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      Tensor<T>& p = params.get(name);
      const Tensor<T>& g = it->second;
      auto vit = vel_.find(name);
      if (vit == vel_.end()) vit = vel_.emplace(name, Tensor<T>(p.shape())).first;
      Tensor<T>& v = vit->second;
      for (index_t i = 0; i < p.numel(); ++i) {
        v[i] = cfg_.momentum * v[i] + g[i];
        p[i] -= cfg_.lr * v[i];
      }
    }
  }

 private:
  SgdConfig<T> cfg_;
  std::map<std::string, Tensor<T>> vel_;
};

}  // namespace vidswap::numcore
