#pragma once
#include <array>
#include <optional>
#include <vector>

#include "vidswap/numcore/tensor.hpp"
#include "vidswap/toyworld/render.hpp"

namespace vidswap::videodit {

using numcore::index_t;
using numcore::Shape;

struct DitConfig {
  int model_dim = 128;
  int heads = 4;
  int blocks = 6;
  int patch = 2;
  int context_channels = 49;  // latent channels + mask/indicator channel
  int id_tokens = 1;
  double lambda_pose = 1.0;
  int ffn_mult = 2;
  int guider_hidden = 16;

  void validate() const {
    if (model_dim <= 0 || heads <= 0 || blocks <= 0 || patch <= 0)
      throw ValidationError("model dims must be positive");
    if (model_dim % heads != 0) throw ValidationError("model_dim must be divisible by heads");
    if (id_tokens != 1) throw ValidationError("exactly one id token is supported");
  }
};

// Latent/token geometry shared by the model, codec and pose guider.
struct LatentGeometry {
  index_t C, h, w, c_lat;
  int patch;
  index_t hp() const { return h / patch; }
  index_t wp() const { return w / patch; }
  index_t tokens_per_chunk() const { return hp() * wp(); }
  index_t n_latent_tokens() const { return C * tokens_per_chunk(); }
  index_t patch_in_dim(index_t channels) const { return patch * patch * channels; }

  static LatentGeometry from(const toyworld::WorldConfig& world, int patch) {
    LatentGeometry g;
    g.C = world.frames / world.chunk_len;
    g.h = world.height / 2;
    g.w = world.width / 2;
    g.c_lat = 12 * world.chunk_len;
    g.patch = patch;
    if (g.h % patch != 0 || g.w % patch != 0)
      throw ValidationError("latent extents must be divisible by patch");
    return g;
  }
};

// Conditioning inputs for one video. id == nullopt is the NULL identity
// sentinel (classifier-free branch).
template <typename T>
struct ConditionBundle {
  numcore::Tensor<T> context;    // [C,h,w,context_channels]
  numcore::Tensor<T> pose_maps;  // [F,H,W] pixel-resolution landmark maps
  std::optional<std::array<T, 4>> id;

  void check(const LatentGeometry& g, const toyworld::WorldConfig& world, int ctx_channels) const {
    const Shape& s = context.shape();
    if (s.size() != 4 || s[0] != g.C || s[1] != g.h || s[2] != g.w || s[3] != ctx_channels)
      throw ValidationError("condition context shape mismatch: " + numcore::shape_str(s));
    const Shape& p = pose_maps.shape();
    if (p.size() != 3 || p[0] != world.frames || p[1] != world.height || p[2] != world.width)
      throw ValidationError("pose map shape mismatch: " + numcore::shape_str(p));
  }
};

}  // namespace vidswap::videodit
