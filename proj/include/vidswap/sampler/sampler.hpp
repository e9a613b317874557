#pragma once
#include <functional>
#include <utility>

#include "vidswap/flowmatch/flow.hpp"
#include "vidswap/videodit/model.hpp"

namespace vidswap::sampler {

using numcore::Tensor;
using numcore::index_t;
using numcore::Shape;

struct GuidanceConfig {
  int steps = 16;
  double s = 1.5;        // overall guidance scale
  double alpha = 1.5;    // parallel/orthogonal reweighting, >= 1
  bool idgp_enabled = true;

  void validate() const {
    if (steps < 1) throw ValidationError("sampler steps must be >= 1");
    if (alpha < 1.0) throw ValidationError("alpha must be >= 1");
    if (s < 0.0) throw ValidationError("guidance scale must be >= 0");
  }
};

// Velocity field abstraction: eval(z, t, use_id) returns the model velocity;
// has_id is false when the condition carries the NULL identity (no guidance).
template <typename T>
struct Velocity {
  std::function<Tensor<T>(const Tensor<T>&, T, bool)> eval;
  bool has_id = false;
};

template <typename T>
Velocity<T> model_velocity(const videodit::DitModel<T>& model,
                           const numcore::ParamStore<T>& params,
                           const videodit::ConditionBundle<T>& cond) {
  Velocity<T> v;
  v.has_id = cond.id.has_value();
  v.eval = [&model, &params, cond](const Tensor<T>& z, T t, bool use_id) {
    videodit::ConditionBundle<T> c = cond;
    if (!use_id) c.id = std::nullopt;
    return model.predict(params, z, t, c);
  };
  return v;
}

// conditional velocity and guidance vector d = v_cond - v_uncond
template <typename T>
std::pair<Tensor<T>, Tensor<T>> cfg_delta(const Velocity<T>& vel, const Tensor<T>& z_t, T t) {
  if (!vel.has_id) throw ValidationError("cfg_delta requires a real identity condition");
  Tensor<T> v_cond = vel.eval(z_t, t, true);
  Tensor<T> v_uncond = vel.eval(z_t, t, false);
  Tensor<T> d = Tensor<T>::uninit(v_cond.shape());
  for (index_t i = 0; i < d.numel(); ++i) d[i] = v_cond[i] - v_uncond[i];
  return {std::move(v_cond), std::move(d)};
}

template <typename T>
struct GuidanceDelta {
  Tensor<T> d_par;
  Tensor<T> d_perp;
  bool degenerate = false;  // ||v_cond|| ~ 0: d passed through as d_perp
};

// projection of d onto the normalized conditional prediction, treating the
// whole latent as one flattened vector
template <typename T>
GuidanceDelta<T> idgp_decompose(const Tensor<T>& d, const Tensor<T>& v_cond) {
  if (!d.same_shape(v_cond)) throw ValidationError("idgp_decompose shape mismatch");
  GuidanceDelta<T> out;
  double vv = 0, dv = 0;
  for (index_t i = 0; i < d.numel(); ++i) {
    vv += static_cast<double>(v_cond[i]) * v_cond[i];
    dv += static_cast<double>(d[i]) * v_cond[i];
  }
  const double vnorm = std::sqrt(vv);
  out.d_par = Tensor<T>::uninit(d.shape());
  out.d_perp = Tensor<T>::uninit(d.shape());
  if (vnorm <= 1e-8) {
    out.degenerate = true;
    for (index_t i = 0; i < d.numel(); ++i) {
      out.d_par[i] = T(0);
      out.d_perp[i] = d[i];
    }
    return out;
  }
  const double coef = dv / vv;  // <d, v_hat> / ||v|| = dv / vv
  for (index_t i = 0; i < d.numel(); ++i) {
    out.d_par[i] = static_cast<T>(coef * v_cond[i]);
    out.d_perp[i] = d[i] - out.d_par[i];
  }
  return out;
}

// d_idgp = alpha * d_par + (1/alpha) * d_perp
template <typename T>
Tensor<T> idgp_reweight(const Tensor<T>& d_par, const Tensor<T>& d_perp, double alpha) {
  if (alpha < 1.0) throw ValidationError("alpha must be >= 1");
  if (!d_par.same_shape(d_perp)) throw ValidationError("idgp_reweight shape mismatch");
  Tensor<T> out = Tensor<T>::uninit(d_par.shape());
  const T a = static_cast<T>(alpha);
  const T inv_a = static_cast<T>(1.0 / alpha);
  for (index_t i = 0; i < out.numel(); ++i) out[i] = a * d_par[i] + inv_a * d_perp[i];
  return out;
}

// Euler integration of the velocity field from t=1 down to 0:
// z <- z + dt * v_output, v_output = v_cond + s * d_guidance. alpha == 1 (or
// idgp disabled) short-circuits to plain CFG, bitwise.
template <typename T>
Tensor<T> euler_sample(const Velocity<T>& vel, const GuidanceConfig& gcfg, const Shape& shape,
                       std::uint64_t seed) {
  gcfg.validate();
  Rng rng(derive_seed(seed, "euler-init"));
  Tensor<T> z = numcore::randn<T>(shape, rng);
  const T dt = T(1) / static_cast<T>(gcfg.steps);
  for (int k = 0; k < gcfg.steps; ++k) {
    const T t = T(1) - static_cast<T>(k) * dt;
    Tensor<T> v_out;
    if (!vel.has_id || gcfg.s == 0.0) {
      v_out = vel.eval(z, t, vel.has_id);
    } else {
      auto [v_cond, d] = cfg_delta(vel, z, t);
      if (gcfg.idgp_enabled && gcfg.alpha != 1.0) {
        auto dec = idgp_decompose(d, v_cond);
        d = idgp_reweight(dec.d_par, dec.d_perp, gcfg.alpha);
      }
      v_out = std::move(v_cond);
      const T s = static_cast<T>(gcfg.s);
      for (index_t i = 0; i < v_out.numel(); ++i) v_out[i] += s * d[i];
    }
    if (!numcore::kern::all_finite(v_out.data(), v_out.numel()))
      throw NumericError("non-finite velocity at sampler step " + std::to_string(k));
    for (index_t i = 0; i < z.numel(); ++i) z[i] += dt * v_out[i];
  }
  return z;
}

// full pipeline: sample a latent and decode it to pixel space
template <typename T>
Tensor<float> sample_video(const videodit::DitModel<T>& model,
                           const numcore::ParamStore<T>& params,
                           const videodit::ConditionBundle<T>& cond, const GuidanceConfig& gcfg,
                           const toyworld::ToyCodec& codec, std::uint64_t seed) {
  const auto& g = model.geometry();
  auto vel = model_velocity(model, params, cond);
  Tensor<T> z = euler_sample(vel, gcfg, Shape{g.C, g.h, g.w, g.c_lat}, seed);
  toyworld::LatentVideo<T> lat;
  lat.chunk_len = codec.chunk_len();
  lat.codec_id = codec.id();
  lat.chunks = std::move(z);
  return codec.decode(lat).template cast<float>();
}

}  // namespace vidswap::sampler
