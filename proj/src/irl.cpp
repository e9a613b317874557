#include "vidswap/irl/irl.hpp"

#include <cmath>

namespace vidswap::irl {

double q_value(double cos_sim, double delta) {
  if (!(delta > 0)) throw ValidationError("delta must be positive");
  const double c = std::min(1.0, std::max(0.0, cos_sim));
  return 1.0 / (c + delta);
}

std::optional<double> frame_q(const Tensor<float>& frame,
                              const toyworld::IdentityEmbedding& target_emb, double delta) {
  try {
    auto emb = toyworld::embed_identity(frame);
    return q_value(toyworld::cosine(emb, target_emb), delta);
  } catch (const NoFaceError&) {
    return std::nullopt;
  }
}

ChunkQValues chunk_average(const std::vector<std::optional<double>>& frame_qs,
                           const std::vector<double>& frame_sims, int chunk_len, double delta,
                           bool normalize) {
  if (chunk_len < 1 || frame_qs.size() % static_cast<std::size_t>(chunk_len) != 0)
    throw ValidationError("frame count must be divisible by chunk_len");
  ChunkQValues out;
  out.delta = delta;
  out.frame_sims = frame_sims;
  const std::size_t C = frame_qs.size() / chunk_len;
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0;
    int n = 0;
    for (int f = 0; f < chunk_len; ++f) {
      const auto& q = frame_qs[c * chunk_len + f];
      if (q.has_value()) {
        acc += *q;
        ++n;
      } else {
        ++out.skipped_frames;
      }
    }
    out.q.push_back(n > 0 ? acc / n : 1.0);
  }
  if (normalize) {
    double mean = 0;
    for (double q : out.q) mean += q;
    mean /= static_cast<double>(out.q.size());
    if (mean > 0)
      for (double& q : out.q) q /= mean;
  }
  return out;
}

ChunkQValues video_chunk_q(const Tensor<float>& video, const Tensor<float>& target_id_image,
                           int chunk_len, double delta, bool normalize) {
  const auto target_emb = toyworld::embed_identity(target_id_image);
  const index_t F = video.dim(0);
  std::vector<std::optional<double>> qs;
  std::vector<double> sims;
  for (index_t f = 0; f < F; ++f) {
    const Tensor<float> frame = toyworld::get_frame(video, f);
    try {
      auto emb = toyworld::embed_identity(frame);
      const double cs = toyworld::cosine(emb, target_emb);
      sims.push_back(cs);
      qs.push_back(q_value(cs, delta));
    } catch (const NoFaceError&) {
      sims.push_back(std::numeric_limits<double>::quiet_NaN());
      qs.push_back(std::nullopt);
    }
  }
  return chunk_average(qs, sims, chunk_len, delta, normalize);
}

}  // namespace vidswap::irl
