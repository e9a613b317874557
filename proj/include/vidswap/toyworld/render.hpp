#pragma once
#include "vidswap/common/rng.hpp"
#include "vidswap/numcore/tensor.hpp"
#include "vidswap/toyworld/params.hpp"

namespace vidswap::toyworld {

using numcore::index_t;
using numcore::Shape;
template <typename T>
using Tensor = numcore::Tensor<T>;

// Canvas geometry shared by the whole toy world.
struct WorldConfig {
  int height = 32;
  int width = 32;
  int frames = 16;
  int chunk_len = 4;
  int mask_dilation_px = 2;
};

// face geometry in units of r0 = scale*min(H,W); landmark positions depend on
// identity only through the eye-spacing and nose-extent components
struct FaceGeometry {
  double rx, ry;          // ellipse semi-axes (canvas px)
  double r0;              // base radius (canvas px)
  double eye_dx;          // eye half-separation / r0
  double eye_y = -0.32;   // eye row / r0
  double eye_r = 0.085;   // eye radius / r0
  double brow_y;          // brow row / r0 (range -0.62..-0.46)
  double nose_tip_y;      // nose tip / r0
  double mouth_y = 0.52;  // mouth center row / r0
  double mouth_hw;        // mouth half-width / r0
  double mouth_hh;        // mouth half-height / r0
};

FaceGeometry face_geometry(const ToyFaceParams& p, int H, int W);

// deterministic single-frame render; background is a grayscale gradient
// translating 1 px/frame along a bg_seed-derived direction
Tensor<float> render_face(const ToyFaceParams& p, int frame_index, int H, int W);
Tensor<float> render_frame(const FrameSpec& spec, int frame_index, int H, int W);

// the procedural background alone (used by background recomposition)
Tensor<float> render_background(std::uint64_t bg_seed, int frame_index, int H, int W);

// [F,H,W,3] video for a trajectory
Tensor<float> render_video(const Trajectory& traj, int H, int W);

// analytic landmark positions (canvas px)
Landmarks landmarks(const ToyFaceParams& p, int H, int W);

// filled face ellipse, {0,1} per pixel, optionally dilated (Chebyshev metric)
Tensor<float> face_mask(const ToyFaceParams& p, int H, int W, int dilate_px = 0);

// per-frame dilated masks for a trajectory, [F,H,W]
Tensor<float> video_masks(const Trajectory& traj, int H, int W, int dilate_px);

// landmark maps rasterized as anti-aliased filled disks, radius 1.5 px, [F,H,W]
Tensor<float> rasterize_pose_maps(const std::vector<Landmarks>& lm, int H, int W);

// exact image-face-swap ground truth: source identity under the target
// frame's expression, pose and background
ToyFaceParams swapped_params(const ToyFaceParams& target, const std::array<double, 4>& source_identity);
Tensor<float> ifs_oracle(const ToyFaceParams& target_frame_params,
                         const std::array<double, 4>& source_identity, int frame_index, int H,
                         int W);

// video helpers ([F,H,W,3] layout)
Tensor<float> get_frame(const Tensor<float>& video, index_t f);
void set_frame(Tensor<float>& video, index_t f, const Tensor<float>& frame);

void hsv_to_rgb(double h, double s, double v, float* rgb);
void rgb_to_hsv(const float* rgb, double* hsv);

}  // namespace vidswap::toyworld
