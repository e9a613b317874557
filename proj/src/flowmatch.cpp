#include "vidswap/flowmatch/flow.hpp"

namespace vidswap::flowmatch {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::IvsPretrain: return "ivs_pretrain";
    case Stage::Synthetic: return "synthetic";
    case Stage::RealAug: return "real_aug";
    case Stage::Irl: return "irl";
  }
  return "unknown";
}

Stage stage_from_name(const std::string& name) {
  for (Stage s : {Stage::IvsPretrain, Stage::Synthetic, Stage::RealAug, Stage::Irl})
    if (name == stage_name(s)) return s;
  // CLI spelling
  if (name == "real-aug") return Stage::RealAug;
  if (name == "pretrain-ivs" || name == "ivs") return Stage::IvsPretrain;
  throw ValidationError("unknown stage: " + name);
}

int stage_rank(Stage s) {
  switch (s) {
    case Stage::IvsPretrain: return 0;
    case Stage::Synthetic: return 1;
    case Stage::RealAug: return 2;
    case Stage::Irl: return 3;
  }
  return -1;
}

}  // namespace vidswap::flowmatch
