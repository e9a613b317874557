#pragma once
#include "vidswap/toyworld/codec.hpp"
#include "vidswap/videodit/model.hpp"

namespace vidswap::videodit {

// block-mean of per-frame pixel masks down to the latent grid, [F,H,W] -> [C,h,w,1]
template <typename T>
numcore::Tensor<T> downsample_masks(const numcore::Tensor<float>& masks, int chunk_len) {
  const Shape& s = masks.shape();
  const index_t C = s[0] / chunk_len, h = s[1] / 2, w = s[2] / 2;
  numcore::Tensor<T> out({C, h, w, 1});
  for (index_t c = 0; c < C; ++c)
    for (index_t y = 0; y < h; ++y)
      for (index_t x = 0; x < w; ++x) {
        double acc = 0;
        for (int f = 0; f < chunk_len; ++f)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              acc += masks[(c * chunk_len + f) * s[1] * s[2] + (y * 2 + dy) * s[2] + (x * 2 + dx)];
        out.at(c, y, x, 0) = static_cast<T>(acc / (4.0 * chunk_len));
      }
  return out;
}

// Face-swap conditioning: source-video latent channels + dilated-mask channel.
template <typename T>
ConditionBundle<T> swap_condition(const numcore::Tensor<float>& input_video,
                                  const numcore::Tensor<float>& dilated_masks,
                                  const numcore::Tensor<float>& pose_maps,
                                  std::optional<std::array<T, 4>> id, const toyworld::ToyCodec& codec) {
  ConditionBundle<T> cond;
  auto lat = codec.encode(input_video.cast<T>());
  cond.context = concat_channels(lat.chunks, downsample_masks<T>(dilated_masks, codec.chunk_len()));
  cond.pose_maps = pose_maps.cast<T>();
  cond.id = id;
  return cond;
}

// First/last-frame conditioning: first-frame latent at chunk 0 positions,
// last-frame latent at final-chunk positions, zeros elsewhere, plus a binary
// known-frame indicator channel. Identity is the NULL sentinel.
template <typename T>
ConditionBundle<T> ivs_condition(const numcore::Tensor<float>& first_frame,
                                 const numcore::Tensor<float>& last_frame,
                                 const numcore::Tensor<float>& pose_maps,
                                 const toyworld::ToyCodec& codec, int frames) {
  if (frames % codec.chunk_len() != 0)
    throw ValidationError("frames must be divisible by chunk_len");
  const index_t C = frames / codec.chunk_len();
  auto f0 = codec.encode_frame(first_frame.cast<T>());  // [h,w,c_lat]
  auto f1 = codec.encode_frame(last_frame.cast<T>());
  const index_t h = f0.dim(0), w = f0.dim(1), cl = f0.dim(2);
  numcore::Tensor<T> ctx({C, h, w, cl + 1});
  for (index_t y = 0; y < h; ++y)
    for (index_t x = 0; x < w; ++x) {
      for (index_t k = 0; k < cl; ++k) {
        ctx.at(0, y, x, k) = f0.at(y, x, k);
        ctx.at(C - 1, y, x, k) = (C == 1) ? f0.at(y, x, k) : f1.at(y, x, k);
      }
      ctx.at(0, y, x, cl) = T(1);
      ctx.at(C - 1, y, x, cl) = T(1);
    }
  ConditionBundle<T> cond;
  cond.context = std::move(ctx);
  cond.pose_maps = pose_maps.cast<T>();
  cond.id = std::nullopt;
  return cond;
}

}  // namespace vidswap::videodit
