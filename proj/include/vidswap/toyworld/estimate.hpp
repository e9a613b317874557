#pragma once
#include <array>
#include <optional>

#include "vidswap/toyworld/render.hpp"

namespace vidswap::toyworld {

using IdentityEmbedding = std::array<double, 4>;

double cosine(const IdentityEmbedding& a, const IdentityEmbedding& b);
IdentityEmbedding normalized(const IdentityEmbedding& v);

// Pixel-feature measurements shared by the embedder and the estimator init.
struct FaceFeatures {
  double face_count = 0;            // total face-classified weight (px)
  double center_x = 0, center_y = 0;
  double r0 = 0;                    // base radius estimate (px)
  double rot_deg = 0;
  std::array<double, 4> identity{};  // raw (unclamped) component estimates
  std::array<double, 2> expression{};
  bool has_eyes = false;
};

// Analytic feature extraction; throws NoFaceError when fewer than 50
// face-classified pixels are present.
FaceFeatures extract_features(const Tensor<float>& frame);

// ArcFace stand-in: estimates the identity 4-vector from pixels alone and
// L2-normalizes it.
IdentityEmbedding embed_identity(const Tensor<float>& frame);

struct ParamEstimate {
  ToyFaceParams params;
  bool converged = false;
  double rmse = 0;
};

// Least-squares fit of ToyFaceParams to pixels (renderer inverse). The
// background is reconstructed from (bg_seed, frame_index), which callers know
// from the dataset ledger.
ParamEstimate estimate_params(const Tensor<float>& frame, std::uint64_t bg_seed, int frame_index,
                              std::optional<ToyFaceParams> init = std::nullopt);

}  // namespace vidswap::toyworld
