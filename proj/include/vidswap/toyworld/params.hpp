#pragma once
#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "vidswap/common/error.hpp"

namespace vidswap::toyworld {

// Ground-truth generative parameters of a procedural face frame.
// identity: (hue, eye-spacing factor, nose extent, face aspect), each in [-1,1]
// expression: (mouth openness, brow raise) in [-1,1]
// pose: center (cx,cy) as canvas fractions, scale, rotation in degrees
struct ToyFaceParams {
  std::array<double, 4> identity{0, 0, 0, 0};
  std::array<double, 2> expression{0, 0};
  double cx = 0.5, cy = 0.5;
  double scale = 0.3;
  double rot_deg = 0.0;
  std::uint64_t bg_seed = 0;

  void validate() const {
    for (double v : identity)
      if (v < -1 || v > 1) throw ValidationError("identity component out of [-1,1]");
    for (double v : expression)
      if (v < -1 || v > 1) throw ValidationError("expression component out of [-1,1]");
    if (cx < 0 || cx > 1 || cy < 0 || cy > 1)
      throw ValidationError("pose center out of canvas");
    if (scale < 0.15 || scale > 0.45) throw ValidationError("scale out of [0.15,0.45]");
    if (rot_deg < -60 || rot_deg > 60) throw ValidationError("rotation out of [-60,60] degrees");
    double n2 = 0;
    for (double v : identity) n2 += v * v;
    if (n2 < 1e-12) throw ValidationError("identity vector must be nonzero");
  }
};

// Axis-aligned rectangle drawn over the frame (benchmark occlusion class).
struct OccluderBox {
  double cx = 0, cy = 0;    // canvas fractions
  double hw = 0, hh = 0;    // half extents, canvas fractions
  double gray = 0.5;
};

// One frame's full render spec: face params plus optional occluder.
struct FrameSpec {
  ToyFaceParams face;
  std::optional<OccluderBox> occluder;
};

using Trajectory = std::vector<FrameSpec>;

// 5 landmarks in canvas pixel coordinates:
// [0] left eye, [1] right eye, [2] nose tip, [3] left mouth corner, [4] right mouth corner
using Landmarks = std::array<std::array<double, 2>, 5>;

enum class DifficultyClass {
  Gentle,
  RotationSweep,
  ScaleSweep,
  FastBackground,
  Talking,
  SmallFace,
  Occlusion,
};

const char* difficulty_name(DifficultyClass c);
DifficultyClass difficulty_from_name(const std::string& name);

}  // namespace vidswap::toyworld
