#pragma once
#include <filesystem>
#include <string>

#include "vidswap/numcore/tensor.hpp"

namespace vidswap::numcore {

// Tensor blob file: magic "SWPT", u32 rank, u32 extents (little-endian),
// float32 payload row-major. All persisted tensors use this format.
void save_blob(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_blob(const std::filesystem::path& path);

template <typename T>
void save_blob_as(const std::filesystem::path& path, const Tensor<T>& t) {
  if constexpr (std::is_same_v<T, float>)
    save_blob(path, t);
  else
    save_blob(path, t.template cast<float>());
}

template <typename T>
Tensor<T> load_blob_as(const std::filesystem::path& path) {
  if constexpr (std::is_same_v<T, float>)
    return load_blob(path);
  else
    return load_blob(path).template cast<T>();
}

}  // namespace vidswap::numcore
