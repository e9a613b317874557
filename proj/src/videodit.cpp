#include <fstream>

#include <json.hpp>

#include "vidswap/numcore/blob.hpp"
#include "vidswap/videodit/checkpoint.hpp"

namespace vidswap::videodit {

using nlohmann::json;

namespace {

json config_to_json(const DitConfig& c) {
  return json{{"model_dim", c.model_dim},
              {"heads", c.heads},
              {"blocks", c.blocks},
              {"patch", c.patch},
              {"context_channels", c.context_channels},
              {"id_tokens", c.id_tokens},
              {"lambda_pose", c.lambda_pose},
              {"ffn_mult", c.ffn_mult},
              {"guider_hidden", c.guider_hidden}};
}

DitConfig config_from_json(const json& j) {
  DitConfig c;
  c.model_dim = j.at("model_dim");
  c.heads = j.at("heads");
  c.blocks = j.at("blocks");
  c.patch = j.at("patch");
  c.context_channels = j.at("context_channels");
  c.id_tokens = j.at("id_tokens");
  c.lambda_pose = j.at("lambda_pose");
  c.ffn_mult = j.at("ffn_mult");
  c.guider_hidden = j.at("guider_hidden");
  return c;
}

json world_to_json(const toyworld::WorldConfig& w) {
  return json{{"height", w.height},
              {"width", w.width},
              {"frames", w.frames},
              {"chunk_len", w.chunk_len},
              {"mask_dilation_px", w.mask_dilation_px}};
}

toyworld::WorldConfig world_from_json(const json& j) {
  toyworld::WorldConfig w;
  w.height = j.at("height");
  w.width = j.at("width");
  w.frames = j.at("frames");
  w.chunk_len = j.at("chunk_len");
  w.mask_dilation_px = j.at("mask_dilation_px");
  return w;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const numcore::ParamStore<float>& params,
                     const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir / "params");
  json manifest;
  manifest["format"] = 1;
  manifest["model"] = config_to_json(meta.config);
  manifest["world"] = world_to_json(meta.world);
  manifest["tags"] = meta.tags;
  manifest["step"] = params.step;
  json plist = json::array();
  for (const auto& name : params.names()) {
    const auto& t = params.get(name);
    plist.push_back({{"name", name}, {"shape", t.shape()}});
    numcore::save_blob(dir / "params" / (name + ".swpt"), t);
  }
  manifest["params"] = plist;
  std::ofstream os(dir / "manifest.json");
  if (!os) throw ValidationError("cannot write checkpoint manifest in " + dir.string());
  os << manifest.dump(2) << "\n";
}

CheckpointMeta load_checkpoint_meta(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is)
    throw ValidationError("missing checkpoint manifest: " + (dir / "manifest.json").string());
  json manifest = json::parse(is);
  CheckpointMeta meta;
  meta.config = config_from_json(manifest.at("model"));
  meta.world = world_from_json(manifest.at("world"));
  if (manifest.contains("tags"))
    meta.tags = manifest.at("tags").get<std::map<std::string, std::string>>();
  return meta;
}

CheckpointMeta load_checkpoint(const std::filesystem::path& dir,
                               numcore::ParamStore<float>& params) {
  std::ifstream is(dir / "manifest.json");
  if (!is)
    throw ValidationError("missing checkpoint manifest: " + (dir / "manifest.json").string());
  json manifest = json::parse(is);
  CheckpointMeta meta;
  meta.config = config_from_json(manifest.at("model"));
  meta.world = world_from_json(manifest.at("world"));
  if (manifest.contains("tags"))
    meta.tags = manifest.at("tags").get<std::map<std::string, std::string>>();
  for (const auto& p : manifest.at("params")) {
    const std::string name = p.at("name");
    auto t = numcore::load_blob(dir / "params" / (name + ".swpt"));
    if (params.has(name))
      params.set(name, t);
    else
      params.create(name, std::move(t));
  }
  if (manifest.contains("step")) params.step = manifest.at("step");
  return meta;
}

}  // namespace vidswap::videodit
