#pragma once
#include <optional>

#include "vidswap/sampler/sampler.hpp"
#include "vidswap/toyworld/estimate.hpp"

namespace vidswap::irl {

using numcore::Tensor;
using numcore::index_t;

// Per-chunk reward weights derived from frame-wise identity similarity.
struct ChunkQValues {
  std::vector<double> q;           // length C, finite and > 0
  std::vector<double> frame_sims;  // per frame; NaN marks a skipped frame
  double delta = 0.05;
  int skipped_frames = 0;
};

// Q = 1 / (clamp(cos, 0, 1) + delta): higher for worse identity frames
double q_value(double cos_sim, double delta);

// frame-wise Q from pixels; returns nullopt when the embedder finds no face
std::optional<double> frame_q(const Tensor<float>& frame,
                              const toyworld::IdentityEmbedding& target_emb, double delta);

// arithmetic mean per chunk, skipped frames excluded; a fully skipped chunk
// gets Q = 1. normalize rescales the weights to mean 1 over the video.
ChunkQValues chunk_average(const std::vector<std::optional<double>>& frame_qs,
                           const std::vector<double>& frame_sims, int chunk_len, double delta,
                           bool normalize);

// rollout + per-frame Q + per-chunk averaging for one sample
ChunkQValues video_chunk_q(const Tensor<float>& video, const Tensor<float>& target_id_image,
                           int chunk_len, double delta, bool normalize);

// Q-weighted flow matching, summed over chunks:
//   sum_c Q_c * mean|| (z_c - eps_c) - v(z_t, t_c, y) ||^2
// with fresh (t_c, eps_c) per chunk; one forward pass carries per-chunk
// timestep modulation.
template <typename T>
typename numcore::Tape<T>::Var irl_loss(numcore::Tape<T>& tape,
                                        const videodit::DitModel<T>& model,
                                        const numcore::ParamStore<T>& params,
                                        const Tensor<T>& z0,
                                        const videodit::ConditionBundle<T>& cond,
                                        const std::vector<double>& chunk_q,
                                        const std::vector<T>& t_chunks, const Tensor<T>& eps,
                                        videodit::BoundModel<T>* bound_out = nullptr) {
  const auto& g = model.geometry();
  if (static_cast<index_t>(chunk_q.size()) != g.C)
    throw ValidationError("chunk weight count does not match latent chunk count");
  for (double q : chunk_q)
    if (!(q > 0) || !std::isfinite(q)) throw ValidationError("chunk weights must be positive");

  Tensor<T> z_t = flowmatch::interpolate_chunks(z0, eps, t_chunks);
  Tensor<T> target = Tensor<T>::uninit(z0.shape());
  for (index_t i = 0; i < z0.numel(); ++i) target[i] = z0[i] - eps[i];
  auto bm = model.forward(tape, params, z_t, t_chunks, cond, tape.grad_enabled());

  auto target_tok = tape.constant(videodit::patchify(target, model.config().patch));
  const index_t tpc = g.tokens_per_chunk();
  typename numcore::Tape<T>::Var loss;
  for (index_t c = 0; c < g.C; ++c) {
    auto vc = tape.slice(bm.out_tokens, 0, c * tpc, tpc);
    auto tc = tape.slice(target_tok, 0, c * tpc, tpc);
    auto weighted = tape.scale(tape.mse(vc, tc), static_cast<T>(chunk_q[c]));
    loss = (c == 0) ? weighted : tape.add(loss, weighted);
  }
  if (bound_out) *bound_out = std::move(bm);
  return loss;
}

struct IrlConfig {
  int steps = 500;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double delta = 0.05;
  bool normalize_q = true;
  int rollout_steps = 8;      // sampler steps during reward rollouts
  sampler::GuidanceConfig guidance;  // steps overridden by rollout_steps
};

struct IrlDiagnostics {
  // one row per step: step, mean Q, min chunk Q, max chunk Q, loss
  std::vector<std::array<double, 5>> rows;
};

// Per step: rollout without gradients, frame-wise Q, chunk averaging, one
// Q-weighted optimizer step on the matching triple.
template <typename T>
IrlDiagnostics irl_stage(const videodit::DitModel<T>& model, numcore::ParamStore<T>& params,
                         numcore::Adam<T>& opt, const IrlConfig& cfg,
                         const std::vector<flowmatch::TrainTriple>& data,
                         const toyworld::ToyCodec& codec) {
  if (data.empty()) throw ValidationError("irl_stage: empty dataset");
  Rng rng(derive_seed(cfg.seed, "irl-stage"));
  sampler::GuidanceConfig gcfg = cfg.guidance;
  gcfg.steps = cfg.rollout_steps;
  IrlDiagnostics diag;
  const auto& g = model.geometry();
  for (int step = 0; step < cfg.steps; ++step) {
    const auto& tr = data[static_cast<std::size_t>(rng.uniform_int(data.size()))];
    auto cond = flowmatch::condition_from<T>(tr, flowmatch::Stage::Irl, codec, false);

    // policy rollout, no tape
    Tensor<float> rolled =
        sampler::sample_video(model, params, cond, gcfg, codec, rng.raw());
    ChunkQValues cq = video_chunk_q(rolled, tr.id_image, codec.chunk_len(), cfg.delta,
                                    cfg.normalize_q);

    Tensor<T> z0 = codec.encode(tr.gt_video.cast<T>()).chunks;
    Tensor<T> eps = numcore::randn<T>(z0.shape(), rng);
    std::vector<T> t_chunks(g.C);
    for (auto& t : t_chunks) t = static_cast<T>(rng.uniform());

    numcore::Tape<T> tape;
    videodit::BoundModel<T> bm;
    auto loss = irl_loss(tape, model, params, z0, cond, cq.q, t_chunks, eps, &bm);
    tape.backward(loss);
    numcore::GradMap<T> grads;
    flowmatch::accumulate_grads(tape, bm, grads);
    opt.step(params, std::move(grads));

    double qmean = 0, qmin = cq.q[0], qmax = cq.q[0];
    for (double q : cq.q) {
      qmean += q;
      qmin = std::min(qmin, q);
      qmax = std::max(qmax, q);
    }
    qmean /= static_cast<double>(cq.q.size());
    diag.rows.push_back({static_cast<double>(step), qmean, qmin, qmax,
                         static_cast<double>(tape.value(loss)[0])});
  }
  return diag;
}

// Selection for the IRL stage: per-sample rollout, frame-similarity variance,
// indices of the top-k most variable samples (descending variance).
template <typename T>
std::vector<std::size_t> select_high_variance(const videodit::DitModel<T>& model,
                                              const numcore::ParamStore<T>& params,
                                              const std::vector<flowmatch::TrainTriple>& data,
                                              const toyworld::ToyCodec& codec,
                                              const sampler::GuidanceConfig& gcfg,
                                              std::size_t top_k, std::uint64_t seed) {
  if (data.empty()) throw ValidationError("select_high_variance: empty dataset");
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto cond = flowmatch::condition_from<T>(data[i], flowmatch::Stage::Irl, codec, false);
    Tensor<float> rolled = sampler::sample_video(model, params, cond, gcfg, codec,
                                                 derive_seed(seed, "irl-select", i));
    ChunkQValues cq =
        video_chunk_q(rolled, data[i].id_image, codec.chunk_len(), 0.05, false);
    double mean = 0, var = 0;
    int count = 0;
    for (double s : cq.frame_sims)
      if (std::isfinite(s)) {
        mean += s;
        ++count;
      }
    if (count > 0) mean /= count;
    for (double s : cq.frame_sims)
      if (std::isfinite(s)) var += (s - mean) * (s - mean);
    if (count > 0) var /= count;
    scored.push_back({var, i});
  }
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(top_k, scored.size()); ++i)
    out.push_back(scored[i].second);
  return out;
}

}  // namespace vidswap::irl
