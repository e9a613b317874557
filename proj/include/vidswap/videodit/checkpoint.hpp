#pragma once
#include <filesystem>
#include <map>
#include <string>

#include "vidswap/numcore/optim.hpp"
#include "vidswap/videodit/config.hpp"

namespace vidswap::videodit {

// Checkpoint directory layout:
//   manifest.json  (model config, world config, tags, parameter names/shapes)
//   params/<name>.swpt  (one tensor blob per parameter)

struct CheckpointMeta {
  DitConfig config;
  toyworld::WorldConfig world;
  std::map<std::string, std::string> tags;
};

void save_checkpoint(const std::filesystem::path& dir, const numcore::ParamStore<float>& params,
                     const CheckpointMeta& meta);

CheckpointMeta load_checkpoint_meta(const std::filesystem::path& dir);
CheckpointMeta load_checkpoint(const std::filesystem::path& dir,
                               numcore::ParamStore<float>& params);

// checkpoints persist in float regardless of the training scalar type
template <typename T>
void save_checkpoint_as(const std::filesystem::path& dir, const numcore::ParamStore<T>& params,
                        const CheckpointMeta& meta) {
  if constexpr (std::is_same_v<T, float>) {
    save_checkpoint(dir, params, meta);
  } else {
    numcore::ParamStore<float> fp;
    for (const auto& name : params.names())
      fp.create(name, params.get(name).template cast<float>());
    fp.step = params.step;
    save_checkpoint(dir, fp, meta);
  }
}

template <typename T>
CheckpointMeta load_checkpoint_as(const std::filesystem::path& dir,
                                  numcore::ParamStore<T>& params) {
  numcore::ParamStore<float> fp;
  CheckpointMeta meta = load_checkpoint(dir, fp);
  for (const auto& name : fp.names()) {
    auto t = fp.get(name).template cast<T>();
    if (params.has(name))
      params.set(name, t);
    else
      params.create(name, std::move(t));
  }
  params.step = fp.step;
  return meta;
}

}  // namespace vidswap::videodit
