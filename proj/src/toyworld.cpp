#include "vidswap/toyworld/render.hpp"

#include <algorithm>
#include <cmath>

namespace vidswap::toyworld {

namespace {
constexpr double kPi = 3.14159265358979323846;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// anti-aliased coverage from a signed distance in pixels (negative = inside)
double coverage(double sdf) { return clamp01(0.5 - sdf); }

// Area-sampled per-pixel coverage: averages a soft test over a 4x4 subgrid.
// Point-sampled ramps over-count features narrower than a pixel; averaging
// subsamples keeps total coverage equal to the true area, which the
// mass-based feature estimates rely on. The per-sample band is 0.5 px, wider
// than the subsample spacing, so sub-pixel positions stay distinguishable.
constexpr int kSub = 4;
template <typename SdfFn>
double sampled_coverage(SdfFn&& sdf_at, double px, double py) {
  double acc = 0;
  for (int sy = 0; sy < kSub; ++sy)
    for (int sx = 0; sx < kSub; ++sx) {
      const double ox = (sx + 0.5) / kSub - 0.5;
      const double oy = (sy + 0.5) / kSub - 0.5;
      acc += clamp01(0.5 - 2.0 * sdf_at(px + ox, py + oy));
    }
  return acc / (kSub * kSub);
}

struct Rot {
  double c, s;
  explicit Rot(double deg) : c(std::cos(deg * kPi / 180.0)), s(std::sin(deg * kPi / 180.0)) {}
  // canvas offset -> face-local
  void to_local(double dx, double dy, double& u, double& v) const {
    u = c * dx + s * dy;
    v = -s * dx + c * dy;
  }
  void to_canvas(double u, double v, double& dx, double& dy) const {
    dx = c * u - s * v;
    dy = s * u + c * v;
  }
};

void blend(float* px, const float* rgb, double a) {
  for (int k = 0; k < 3; ++k) px[k] = static_cast<float>(px[k] * (1 - a) + rgb[k] * a);
}
}  // namespace

const char* difficulty_name(DifficultyClass c) {
  switch (c) {
    case DifficultyClass::Gentle: return "gentle";
    case DifficultyClass::RotationSweep: return "rotation_sweep";
    case DifficultyClass::ScaleSweep: return "scale_sweep";
    case DifficultyClass::FastBackground: return "fast_background";
    case DifficultyClass::Talking: return "talking";
    case DifficultyClass::SmallFace: return "small_face";
    case DifficultyClass::Occlusion: return "occlusion";
  }
  return "unknown";
}

DifficultyClass difficulty_from_name(const std::string& name) {
  for (DifficultyClass c :
       {DifficultyClass::Gentle, DifficultyClass::RotationSweep, DifficultyClass::ScaleSweep,
        DifficultyClass::FastBackground, DifficultyClass::Talking, DifficultyClass::SmallFace,
        DifficultyClass::Occlusion})
    if (name == difficulty_name(c)) return c;
  throw ValidationError("unknown difficulty class: " + name);
}

void hsv_to_rgb(double h, double s, double v, float* rgb) {
  h = h - std::floor(h);  // wrap to [0,1)
  const double hh = h * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r, g, b;
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  rgb[0] = static_cast<float>(r);
  rgb[1] = static_cast<float>(g);
  rgb[2] = static_cast<float>(b);
}

void rgb_to_hsv(const float* rgb, double* hsv) {
  const double r = rgb[0], g = rgb[1], b = rgb[2];
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  double h = 0;
  if (d > 1e-12) {
    if (mx == r)
      h = std::fmod((g - b) / d, 6.0);
    else if (mx == g)
      h = (b - r) / d + 2;
    else
      h = (r - g) / d + 4;
    h /= 6.0;
    if (h < 0) h += 1;
  }
  hsv[0] = h;
  hsv[1] = mx > 1e-12 ? d / mx : 0.0;
  hsv[2] = mx;
}

FaceGeometry face_geometry(const ToyFaceParams& p, int H, int W) {
  FaceGeometry g{};
  g.r0 = p.scale * std::min(H, W);
  g.rx = g.r0 * (1.0 - 0.18 * p.identity[3]);
  g.ry = g.r0 * (1.0 + 0.18 * p.identity[3]);
  g.eye_dx = 0.34 + 0.12 * p.identity[1];
  g.brow_y = -(0.54 + 0.08 * p.expression[1]);
  g.nose_tip_y = 0.12 + 0.10 * p.identity[2];
  const double open = (p.expression[0] + 1.0) / 2.0;
  g.mouth_hw = 0.30 + 0.10 * open;
  g.mouth_hh = 0.035 + 0.11 * open;
  return g;
}

Tensor<float> render_background(std::uint64_t bg_seed, int frame_index, int H, int W) {
  Rng rng(derive_seed(bg_seed, "bg"));
  const double theta = rng.uniform(0, 2 * kPi);
  const double ux = std::cos(theta), uy = std::sin(theta);
  Tensor<float> img({H, W, 3});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double phase = (x * ux + y * uy - static_cast<double>(frame_index)) / 16.0;
      const float v = static_cast<float>(0.6 + 0.25 * std::sin(2 * kPi * phase));
      float* px = img.data() + (y * W + x) * 3;
      px[0] = px[1] = px[2] = v;
    }
  return img;
}

Tensor<float> render_face(const ToyFaceParams& p, int frame_index, int H, int W) {
  if (H < 16 || W < 16) throw ValidationError("canvas must be at least 16x16");
  p.validate();
  Tensor<float> img = render_background(p.bg_seed, frame_index, H, W);

  const FaceGeometry g = face_geometry(p, H, W);
  const Rot rot(p.rot_deg);
  const double cx = p.cx * W, cy = p.cy * H;

  float skin[3], nose_col[3], mouth_col[3];
  // hue spans 0..0.8 of the circle so the identity->color map is injective
  const double hue = (p.identity[0] + 1.0) / 2.0 * 0.8;
  hsv_to_rgb(hue, 0.55, 0.88, skin);
  hsv_to_rgb(hue, 0.55, 0.62, nose_col);
  hsv_to_rgb(0.98, 0.75, 0.20, mouth_col);
  const float dark[3] = {0.12f, 0.12f, 0.12f};

  // bounding box of the rotated ellipse, padded for AA
  const double rmax = std::max(g.rx, g.ry) + 2;
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rmax)));
  const int x1 = std::min(W - 1, static_cast<int>(std::ceil(cx + rmax)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - rmax)));
  const int y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + rmax)));

  auto local = [&](double sx, double sy, double& u, double& v) {
    rot.to_local(sx - cx, sy - cy, u, v);
  };
  auto ellipse_sdf = [&](double sx, double sy) {
    double u, v;
    local(sx, sy, u, v);
    const double rho = std::sqrt((u / g.rx) * (u / g.rx) + (v / g.ry) * (v / g.ry));
    return (rho - 1.0) * 0.5 * (g.rx + g.ry);
  };
  const double nose_half_len = (g.nose_tip_y + 0.04) / 2.0;
  const double nose_cy = (g.nose_tip_y - 0.04) / 2.0;
  auto nose_sdf = [&](double sx, double sy) {
    double u, v;
    local(sx, sy, u, v);
    const double un = u / g.r0, vn = v / g.r0;
    const double dx = (std::abs(un) - 0.035) * g.r0;
    const double dy = (std::abs(vn - nose_cy) - nose_half_len) * g.r0;
    return std::max(dx, dy);
  };
  auto brow_sdf = [&](int sgn) {
    return [&, sgn](double sx, double sy) {
      double u, v;
      local(sx, sy, u, v);
      const double un = u / g.r0, vn = v / g.r0;
      const double dx = (std::abs(un - sgn * g.eye_dx) - 0.13) * g.r0;
      const double dy = (std::abs(vn - g.brow_y) - 0.04) * g.r0;
      return std::max(dx, dy);
    };
  };
  auto eye_sdf = [&](int sgn) {
    return [&, sgn](double sx, double sy) {
      double u, v;
      local(sx, sy, u, v);
      const double du = u - sgn * g.eye_dx * g.r0;
      const double dv = v - g.eye_y * g.r0;
      return std::sqrt(du * du + dv * dv) - g.eye_r * g.r0;
    };
  };
  auto mouth_sdf = [&](double sx, double sy) {
    double u, v;
    local(sx, sy, u, v);
    const double mu = (u / g.r0) / g.mouth_hw;
    const double mv = ((v / g.r0) - g.mouth_y) / g.mouth_hh;
    const double mrho = std::sqrt(mu * mu + mv * mv);
    return (mrho - 1.0) * 0.5 * (g.mouth_hw + g.mouth_hh) * g.r0;
  };

  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double pxc = x + 0.5, pyc = y + 0.5;
      const double face_a = sampled_coverage(ellipse_sdf, pxc, pyc);
      if (face_a <= 0) continue;
      float* px = img.data() + (y * W + x) * 3;
      blend(px, skin, face_a);
      blend(px, nose_col, face_a * sampled_coverage(nose_sdf, pxc, pyc));
      blend(px, dark, face_a * sampled_coverage(brow_sdf(-1), pxc, pyc));
      blend(px, dark, face_a * sampled_coverage(brow_sdf(+1), pxc, pyc));
      blend(px, dark, face_a * sampled_coverage(eye_sdf(-1), pxc, pyc));
      blend(px, dark, face_a * sampled_coverage(eye_sdf(+1), pxc, pyc));
      blend(px, mouth_col, face_a * sampled_coverage(mouth_sdf, pxc, pyc));
    }
  return img;
}

Tensor<float> render_frame(const FrameSpec& spec, int frame_index, int H, int W) {
  Tensor<float> img = render_face(spec.face, frame_index, H, W);
  if (spec.occluder) {
    const OccluderBox& ob = *spec.occluder;
    const float col[3] = {static_cast<float>(ob.gray), static_cast<float>(ob.gray),
                          static_cast<float>(ob.gray)};
    auto box_sdf = [&](double sx, double sy) {
      const double dx = std::abs(sx - ob.cx * W) - ob.hw * W;
      const double dy = std::abs(sy - ob.cy * H) - ob.hh * H;
      return std::max(dx, dy);
    };
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double a = sampled_coverage(box_sdf, x + 0.5, y + 0.5);
        if (a > 0) blend(img.data() + (y * W + x) * 3, col, a);
      }
  }
  return img;
}

Tensor<float> render_video(const Trajectory& traj, int H, int W) {
  if (traj.empty()) throw ValidationError("empty trajectory");
  Tensor<float> video({static_cast<index_t>(traj.size()), H, W, 3});
  for (std::size_t f = 0; f < traj.size(); ++f) {
    Tensor<float> frame = render_frame(traj[f], static_cast<int>(f), H, W);
    std::copy(frame.data(), frame.data() + frame.numel(),
              video.data() + static_cast<index_t>(f) * frame.numel());
  }
  return video;
}

Landmarks landmarks(const ToyFaceParams& p, int H, int W) {
  p.validate();
  const FaceGeometry g = face_geometry(p, H, W);
  const Rot rot(p.rot_deg);
  const double cx = p.cx * W, cy = p.cy * H;
  const std::array<std::array<double, 2>, 5> local = {{
      {-g.eye_dx, g.eye_y},
      {+g.eye_dx, g.eye_y},
      {0.0, g.nose_tip_y},
      {-g.mouth_hw, g.mouth_y},
      {+g.mouth_hw, g.mouth_y},
  }};
  Landmarks out;
  for (int i = 0; i < 5; ++i) {
    double dx, dy;
    rot.to_canvas(local[i][0] * g.r0, local[i][1] * g.r0, dx, dy);
    out[i] = {cx + dx, cy + dy};
  }
  return out;
}

Tensor<float> face_mask(const ToyFaceParams& p, int H, int W, int dilate_px) {
  p.validate();
  const FaceGeometry g = face_geometry(p, H, W);
  const Rot rot(p.rot_deg);
  const double cx = p.cx * W, cy = p.cy * H;
  Tensor<float> mask({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double u, v;
      rot.to_local(x + 0.5 - cx, y + 0.5 - cy, u, v);
      const double rho = std::sqrt((u / g.rx) * (u / g.rx) + (v / g.ry) * (v / g.ry));
      mask[y * W + x] = rho <= 1.0 ? 1.0f : 0.0f;
    }
  if (dilate_px > 0) {
    // square structuring element = Chebyshev ball
    Tensor<float> out({H, W});
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        float m = 0;
        for (int dy = -dilate_px; dy <= dilate_px && m == 0; ++dy)
          for (int dx = -dilate_px; dx <= dilate_px; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < H && xx >= 0 && xx < W && mask[yy * W + xx] > 0.5f) {
              m = 1;
              break;
            }
          }
        out[y * W + x] = m;
      }
    return out;
  }
  return mask;
}

Tensor<float> video_masks(const Trajectory& traj, int H, int W, int dilate_px) {
  Tensor<float> out({static_cast<index_t>(traj.size()), H, W});
  for (std::size_t f = 0; f < traj.size(); ++f) {
    Tensor<float> m = face_mask(traj[f].face, H, W, dilate_px);
    std::copy(m.data(), m.data() + m.numel(), out.data() + static_cast<index_t>(f) * m.numel());
  }
  return out;
}

Tensor<float> rasterize_pose_maps(const std::vector<Landmarks>& lm, int H, int W) {
  Tensor<float> maps({static_cast<index_t>(lm.size()), H, W});
  const double radius = 1.5;
  for (std::size_t f = 0; f < lm.size(); ++f) {
    float* m = maps.data() + static_cast<index_t>(f) * H * W;
    for (const auto& pt : lm[f]) {
      const int x0 = std::max(0, static_cast<int>(std::floor(pt[0] - radius - 1)));
      const int x1 = std::min(W - 1, static_cast<int>(std::ceil(pt[0] + radius + 1)));
      const int y0 = std::max(0, static_cast<int>(std::floor(pt[1] - radius - 1)));
      const int y1 = std::min(H - 1, static_cast<int>(std::ceil(pt[1] + radius + 1)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double dx = x + 0.5 - pt[0], dy = y + 0.5 - pt[1];
          const double a = coverage(std::sqrt(dx * dx + dy * dy) - radius);
          m[y * W + x] = static_cast<float>(std::max(static_cast<double>(m[y * W + x]), a));
        }
    }
  }
  return maps;
}

ToyFaceParams swapped_params(const ToyFaceParams& target, const std::array<double, 4>& source_identity) {
  ToyFaceParams p = target;
  p.identity = source_identity;
  return p;
}

Tensor<float> ifs_oracle(const ToyFaceParams& target_frame_params,
                         const std::array<double, 4>& source_identity, int frame_index, int H,
                         int W) {
  return render_face(swapped_params(target_frame_params, source_identity), frame_index, H, W);
}

Tensor<float> get_frame(const Tensor<float>& video, index_t f) {
  const Shape& s = video.shape();
  Tensor<float> frame({s[1], s[2], s[3]});
  std::copy(video.data() + f * frame.numel(), video.data() + (f + 1) * frame.numel(),
            frame.data());
  return frame;
}

void set_frame(Tensor<float>& video, index_t f, const Tensor<float>& frame) {
  std::copy(frame.data(), frame.data() + frame.numel(), video.data() + f * frame.numel());
}

}  // namespace vidswap::toyworld
