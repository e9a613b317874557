#include "vidswap/toyworld/codec.hpp"

#include <cmath>

namespace vidswap::toyworld {

ToyCodec::ToyCodec(int chunk_len, std::uint64_t seed) : chunk_len_(chunk_len), id_(seed) {
  if (chunk_len < 1) throw ValidationError("chunk_len must be >= 1");
  const int d = latent_channels();
  ortho_.assign(static_cast<std::size_t>(d) * d, 0.0);
  Rng rng(derive_seed(seed, "codec-basis"));
  for (auto& v : ortho_) v = rng.normal();
  // Gram-Schmidt over rows
  for (int i = 0; i < d; ++i) {
    double* ri = ortho_.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < i; ++j) {
      const double* rj = ortho_.data() + static_cast<std::size_t>(j) * d;
      double dot = 0;
      for (int k = 0; k < d; ++k) dot += ri[k] * rj[k];
      for (int k = 0; k < d; ++k) ri[k] -= dot * rj[k];
    }
    double n2 = 0;
    for (int k = 0; k < d; ++k) n2 += ri[k] * ri[k];
    const double inv = 1.0 / std::sqrt(n2);
    for (int k = 0; k < d; ++k) ri[k] *= inv;
  }
}

}  // namespace vidswap::toyworld
