#pragma once
#include <vector>

#include "vidswap/common/rng.hpp"
#include "vidswap/numcore/tensor.hpp"

namespace vidswap::toyworld {

using numcore::index_t;
using numcore::Shape;

// Chunked latent representation. chunks is [C, h, w, c_lat] with
// h = H/2, w = W/2 and c_lat = 2*2*chunk_len*3.
template <typename T>
struct LatentVideo {
  numcore::Tensor<T> chunks;
  int chunk_len = 4;
  std::uint64_t codec_id = 0;

  index_t num_chunks() const { return chunks.dim(0); }
  index_t frames() const { return num_chunks() * chunk_len; }
};

// Fixed orthonormal linear map on non-overlapping 2x2 x chunk_len blocks
// (VAE stand-in). Exactly invertible; encode is an isometry.
class ToyCodec {
 public:
  explicit ToyCodec(int chunk_len = 4, std::uint64_t seed = 0x5eedc0dec);

  int chunk_len() const { return chunk_len_; }
  int latent_channels() const { return 12 * chunk_len_; }
  std::uint64_t id() const { return id_; }

  template <typename U>
  LatentVideo<U> encode(const numcore::Tensor<U>& video) const {
    const Shape& s = video.shape();
    if (s.size() != 4 || s[3] != 3) throw ValidationError("codec expects [F,H,W,3]");
    if (s[0] % chunk_len_ != 0)
      throw ValidationError("frame count must be divisible by chunk_len");
    if (s[1] % 2 != 0 || s[2] % 2 != 0)
      throw ValidationError("H and W must be divisible by 2");
    const index_t C = s[0] / chunk_len_, h = s[1] / 2, w = s[2] / 2;
    const int d = latent_channels();
    LatentVideo<U> out;
    out.chunk_len = chunk_len_;
    out.codec_id = id_;
    out.chunks = numcore::Tensor<U>({C, h, w, d});
    std::vector<double> block(d), lat(d);
    for (index_t c = 0; c < C; ++c)
      for (index_t by = 0; by < h; ++by)
        for (index_t bx = 0; bx < w; ++bx) {
          gather(video, c, by, bx, block.data());
          for (int i = 0; i < d; ++i) {
            double acc = 0;
            const double* row = ortho_.data() + i * d;
            for (int j = 0; j < d; ++j) acc += row[j] * block[j];
            lat[i] = acc;
          }
          U* dst = out.chunks.data() + ((c * h + by) * w + bx) * d;
          for (int i = 0; i < d; ++i) dst[i] = static_cast<U>(lat[i]);
        }
    return out;
  }

  template <typename U>
  numcore::Tensor<U> decode(const LatentVideo<U>& lat) const {
    const Shape& s = lat.chunks.shape();
    if (s.size() != 4 || s[3] != latent_channels())
      throw ValidationError("latent shape does not match codec");
    const index_t C = s[0], h = s[1], w = s[2];
    const int d = latent_channels();
    numcore::Tensor<U> video({C * chunk_len_, h * 2, w * 2, 3});
    std::vector<double> block(d), latv(d);
    for (index_t c = 0; c < C; ++c)
      for (index_t by = 0; by < h; ++by)
        for (index_t bx = 0; bx < w; ++bx) {
          const U* src = lat.chunks.data() + ((c * h + by) * w + bx) * d;
          for (int i = 0; i < d; ++i) latv[i] = static_cast<double>(src[i]);
          // orthogonal inverse = transpose
          for (int j = 0; j < d; ++j) {
            double acc = 0;
            for (int i = 0; i < d; ++i) acc += ortho_[i * d + j] * latv[i];
            block[j] = acc;
          }
          scatter(video, c, by, bx, block.data());
        }
    return video;
  }

  // single frame -> one chunk's worth of latent channels (frame repeated
  // chunk_len times; decoding the chunk recovers the frame)
  template <typename U>
  numcore::Tensor<U> encode_frame(const numcore::Tensor<U>& frame) const {
    const Shape& s = frame.shape();
    if (s.size() != 3 || s[2] != 3) throw ValidationError("encode_frame expects [H,W,3]");
    numcore::Tensor<U> rep({static_cast<index_t>(chunk_len_), s[0], s[1], 3});
    for (int f = 0; f < chunk_len_; ++f)
      std::copy(frame.data(), frame.data() + frame.numel(), rep.data() + f * frame.numel());
    return encode(rep).chunks.reshaped({s[0] / 2, s[1] / 2, latent_channels()});
  }

 private:
  int chunk_len_;
  std::uint64_t id_;
  std::vector<double> ortho_;  // d x d, rows orthonormal

  template <typename U>
  void gather(const numcore::Tensor<U>& video, index_t c, index_t by, index_t bx,
              double* block) const {
    int i = 0;
    for (int f = 0; f < chunk_len_; ++f)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          for (int ch = 0; ch < 3; ++ch)
            block[i++] = static_cast<double>(
                video.at(c * chunk_len_ + f, by * 2 + dy, bx * 2 + dx, ch));
  }

  template <typename U>
  void scatter(numcore::Tensor<U>& video, index_t c, index_t by, index_t bx,
               const double* block) const {
    int i = 0;
    for (int f = 0; f < chunk_len_; ++f)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          for (int ch = 0; ch < 3; ++ch)
            video.at(c * chunk_len_ + f, by * 2 + dy, bx * 2 + dx, ch) =
                static_cast<U>(block[i++]);
  }
};

}  // namespace vidswap::toyworld
