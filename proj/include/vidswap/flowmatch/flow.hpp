#pragma once
#include <string>
#include <vector>

#include "vidswap/toyworld/codec.hpp"
#include "vidswap/toyworld/estimate.hpp"
#include "vidswap/toyworld/render.hpp"
#include "vidswap/videodit/condition.hpp"
#include "vidswap/videodit/model.hpp"

namespace vidswap::flowmatch {

using numcore::ParamStore;
using numcore::Tape;
using numcore::Tensor;
using numcore::index_t;

enum class Stage { IvsPretrain, Synthetic, RealAug, Irl };

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);

// stage order is fixed: ivs_pretrain -> synthetic -> real_aug -> irl
int stage_rank(Stage s);

enum class TripleKind { Ivs, SwapSynthetic, SwapReal };

// One paired training example. For IVS reconstruction the input video is
// ignored (conditioning comes from the gt video's first/last frames).
struct TrainTriple {
  Tensor<float> id_image;     // [H,W,3]
  Tensor<float> input_video;  // [F,H,W,3]
  Tensor<float> gt_video;     // [F,H,W,3]
  Tensor<float> pose_maps;    // [F,H,W]
  Tensor<float> masks;        // [F,H,W], dilated
  TripleKind kind = TripleKind::SwapSynthetic;

  void check() const {
    if (!input_video.same_shape(gt_video))
      throw ValidationError("triple input/gt shape mismatch");
    if (pose_maps.dim(0) != gt_video.dim(0))
      throw ValidationError("triple pose frame count mismatch");
  }
};

struct TrainConfig {
  Stage stage = Stage::Synthetic;
  int steps = 2000;
  int batch = 1;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double cfg_drop_prob = 0.1;

  void validate() const {
    if (steps < 0) throw ValidationError("steps must be >= 0");
    if (batch < 1) throw ValidationError("batch must be >= 1");
  }
};

// z_t = (1-t) z0 + t eps, exact linear blend
template <typename T>
Tensor<T> interpolate(const Tensor<T>& z0, const Tensor<T>& eps, T t) {
  if (!z0.same_shape(eps)) throw ValidationError("interpolate shape mismatch");
  if (t < T(0) || t > T(1)) throw ValidationError("t must lie in [0,1]");
  Tensor<T> out = Tensor<T>::uninit(z0.shape());
  for (index_t i = 0; i < z0.numel(); ++i) out[i] = (T(1) - t) * z0[i] + t * eps[i];
  return out;
}

// per-chunk t variant over a [C,h,w,c] latent
template <typename T>
Tensor<T> interpolate_chunks(const Tensor<T>& z0, const Tensor<T>& eps,
                             const std::vector<T>& t_chunks) {
  if (!z0.same_shape(eps)) throw ValidationError("interpolate shape mismatch");
  if (static_cast<index_t>(t_chunks.size()) != z0.dim(0))
    throw ValidationError("need one t per chunk");
  Tensor<T> out = Tensor<T>::uninit(z0.shape());
  const index_t per = z0.numel() / z0.dim(0);
  for (index_t c = 0; c < z0.dim(0); ++c) {
    const T t = t_chunks[c];
    if (t < T(0) || t > T(1)) throw ValidationError("t must lie in [0,1]");
    for (index_t i = c * per; i < (c + 1) * per; ++i) out[i] = (T(1) - t) * z0[i] + t * eps[i];
  }
  return out;
}

// condition for a triple under the given stage semantics
template <typename T>
videodit::ConditionBundle<T> condition_from(const TrainTriple& tr, Stage stage,
                                            const toyworld::ToyCodec& codec, bool drop_id) {
  if (stage == Stage::IvsPretrain) {
    const index_t F = tr.gt_video.dim(0);
    return videodit::ivs_condition<T>(toyworld::get_frame(tr.gt_video, 0),
                                      toyworld::get_frame(tr.gt_video, F - 1), tr.pose_maps,
                                      codec, static_cast<int>(F));
  }
  std::optional<std::array<T, 4>> id;
  if (!drop_id) {
    auto emb = toyworld::embed_identity(tr.id_image);
    id = std::array<T, 4>{static_cast<T>(emb[0]), static_cast<T>(emb[1]),
                          static_cast<T>(emb[2]), static_cast<T>(emb[3])};
  }
  return videodit::swap_condition<T>(tr.input_video, tr.masks, tr.pose_maps, id, codec);
}

// Flow-matching loss on the tape: || (z0 - eps) - v_theta(z_t, t, y) ||^2
// averaged over all latent elements. Token space and latent space are related
// by a permutation, so the mean is computed over output tokens directly.
template <typename T>
typename Tape<T>::Var fm_loss(Tape<T>& tape, const videodit::DitModel<T>& model,
                              const ParamStore<T>& params, const Tensor<T>& z0,
                              const videodit::ConditionBundle<T>& cond,
                              const std::vector<T>& t_chunks, const Tensor<T>& eps,
                              videodit::BoundModel<T>* bound_out = nullptr) {
  Tensor<T> z_t = interpolate_chunks(z0, eps, t_chunks);
  Tensor<T> target = Tensor<T>::uninit(z0.shape());
  for (index_t i = 0; i < z0.numel(); ++i) target[i] = z0[i] - eps[i];
  auto bm = model.forward(tape, params, z_t, t_chunks, cond, tape.grad_enabled());
  auto loss = tape.mse(bm.out_tokens,
                       tape.constant(videodit::patchify(target, model.config().patch)));
  if (bound_out) *bound_out = std::move(bm);
  return loss;
}

// collect parameter gradients from a bound model after backward()
template <typename T>
void accumulate_grads(const Tape<T>& tape, const videodit::BoundModel<T>& bm,
                      numcore::GradMap<T>& grads) {
  for (const auto& [name, var] : bm.params) {
    if (!tape.has_grad(var)) continue;
    const Tensor<T>& g = tape.grad(var);
    auto it = grads.find(name);
    if (it == grads.end()) {
      grads.emplace(name, g);
    } else {
      for (index_t i = 0; i < g.numel(); ++i) it->second[i] += g[i];
    }
  }
}

struct StageResult {
  std::vector<double> loss_curve;
};

// Runs `steps` optimizer steps: uniform t, fresh Gaussian noise per sample,
// classifier-free id drop with cfg_drop_prob. Deterministic given the seed.
template <typename T>
StageResult train_stage(const videodit::DitModel<T>& model, ParamStore<T>& params,
                        numcore::Adam<T>& opt, const TrainConfig& cfg,
                        const std::vector<TrainTriple>& data,
                        const toyworld::ToyCodec& codec) {
  cfg.validate();
  if (data.empty()) throw ValidationError("train_stage: empty dataset");
  for (const auto& tr : data) {
    tr.check();
    const bool ok = (cfg.stage == Stage::IvsPretrain && tr.kind == TripleKind::Ivs) ||
                    (cfg.stage == Stage::Synthetic && tr.kind == TripleKind::SwapSynthetic) ||
                    ((cfg.stage == Stage::RealAug || cfg.stage == Stage::Irl) &&
                     tr.kind != TripleKind::Ivs);
    if (!ok)
      throw ValidationError(std::string("dataset/stage mismatch: stage ") +
                            stage_name(cfg.stage));
  }
  Rng rng(derive_seed(cfg.seed, "train-stage"));
  StageResult res;
  const auto& geom = model.geometry();
  for (int step = 0; step < cfg.steps; ++step) {
    numcore::GradMap<T> grads;
    double loss_acc = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& tr = data[static_cast<std::size_t>(rng.uniform_int(data.size()))];
      const bool drop =
          cfg.stage != Stage::IvsPretrain && rng.uniform() < cfg.cfg_drop_prob;
      auto cond = condition_from<T>(tr, cfg.stage, codec, drop);
      Tensor<T> z0 = codec.encode(tr.gt_video.cast<T>()).chunks;
      Tensor<T> eps = numcore::randn<T>(z0.shape(), rng);
      const T t = static_cast<T>(rng.uniform());
      Tape<T> tape;
      videodit::BoundModel<T> bm;
      auto loss = fm_loss(tape, model, params, z0, cond, std::vector<T>(geom.C, t), eps, &bm);
      tape.backward(loss);
      accumulate_grads(tape, bm, grads);
      loss_acc += static_cast<double>(tape.value(loss)[0]);
    }
    if (cfg.batch > 1) {
      const T inv = T(1) / static_cast<T>(cfg.batch);
      for (auto& [name, g] : grads)
        for (index_t i = 0; i < g.numel(); ++i) g[i] *= inv;
    }
    opt.step(params, std::move(grads));
    res.loss_curve.push_back(loss_acc / cfg.batch);
  }
  return res;
}

}  // namespace vidswap::flowmatch
