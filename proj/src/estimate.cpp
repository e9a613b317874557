#include "vidswap/toyworld/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace vidswap::toyworld {

namespace {
constexpr double kPi = 3.14159265358979323846;

double clampd(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

double ramp(double v, double lo, double hi) { return clampd((v - lo) / (hi - lo), 0.0, 1.0); }

struct ClassWeights {
  // per pixel: face (any), dark feature, bright skin, nose shade, mouth-red
  std::vector<double> face, dark, skin, nose;
  int H = 0, W = 0;
};

ClassWeights classify(const Tensor<float>& frame) {
  const auto& s = frame.shape();
  const int H = static_cast<int>(s[0]), W = static_cast<int>(s[1]);
  ClassWeights cw;
  cw.H = H;
  cw.W = W;
  cw.face.assign(H * W, 0);
  cw.dark.assign(H * W, 0);
  cw.skin.assign(H * W, 0);
  cw.nose.assign(H * W, 0);
  for (int i = 0; i < H * W; ++i) {
    double hsv[3];
    rgb_to_hsv(frame.data() + i * 3, hsv);
    const double sat = hsv[1], val = hsv[2];
    const double saturated = ramp(sat, 0.15, 0.35);
    // darkness-as-coverage: linear in the blend fraction of a dark feature
    // over skin, so sub-pixel features keep their full mass. The background
    // is grayscale with V >= 0.35 and is excluded by the (sat, val) gate.
    const bool bg_like = sat < 0.12 && val > 0.33;
    cw.dark[i] = bg_like ? 0.0 : clampd((0.88 - val) / 0.76, 0.0, 1.0);
    cw.skin[i] = saturated * ramp(val, 0.72, 0.80);
    cw.nose[i] = saturated * ramp(0.70 - val, 0.0, 0.05) * ramp(val - 0.45, 0.0, 0.05);
    cw.face[i] = std::max(saturated, cw.dark[i]);
  }
  return cw;
}

struct Moments {
  double mass = 0, mx = 0, my = 0, cxx = 0, cxy = 0, cyy = 0;
};

Moments moments_of(const std::vector<double>& w, int H, int W) {
  Moments m;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double v = w[y * W + x];
      if (v <= 0) continue;
      m.mass += v;
      m.mx += v * (x + 0.5);
      m.my += v * (y + 0.5);
    }
  if (m.mass <= 0) return m;
  m.mx /= m.mass;
  m.my /= m.mass;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double v = w[y * W + x];
      if (v <= 0) continue;
      const double dx = x + 0.5 - m.mx, dy = y + 0.5 - m.my;
      m.cxx += v * dx * dx;
      m.cxy += v * dx * dy;
      m.cyy += v * dy * dy;
    }
  m.cxx /= m.mass;
  m.cxy /= m.mass;
  m.cyy /= m.mass;
  return m;
}
}  // namespace

double cosine(const IdentityEmbedding& a, const IdentityEmbedding& b) {
  double ab = 0, aa = 0, bb = 0;
  for (int i = 0; i < 4; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa <= 0 || bb <= 0) return 0;
  return ab / std::sqrt(aa * bb);
}

IdentityEmbedding normalized(const IdentityEmbedding& v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n < 1e-12) throw ValidationError("cannot normalize a zero identity vector");
  IdentityEmbedding out;
  for (int i = 0; i < 4; ++i) out[i] = v[i] / n;
  return out;
}

FaceFeatures extract_features(const Tensor<float>& frame) {
  if (frame.rank() != 3 || frame.dim(2) != 3) throw ValidationError("frame must be [H,W,3]");
  const ClassWeights cw = classify(frame);
  const int H = cw.H, W = cw.W;

  FaceFeatures f;
  const Moments face_m = moments_of(cw.face, H, W);
  f.face_count = face_m.mass;
  if (face_m.mass < 50) throw NoFaceError("no detectable face region (need >= 50 pixels)");
  f.center_x = face_m.mx;
  f.center_y = face_m.my;
  double r0 = std::sqrt(face_m.mass / kPi);

  // rotation: scan candidates and score the dark-feature layout. Demanding
  // both eye blobs separately kills the 90-degree impostor poses where a
  // single eye lands in the band.
  auto band_score = [&](double deg) {
    const double c = std::cos(deg * kPi / 180.0), s = std::sin(deg * kPi / 180.0);
    double eye_l = 0, eye_r = 0, mouth = 0, total = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double w = cw.dark[y * W + x];
        if (w <= 0) continue;
        total += w;
        const double dx = x + 0.5 - face_m.mx, dy = y + 0.5 - face_m.my;
        const double u = (c * dx + s * dy) / r0, v = (-s * dx + c * dy) / r0;
        if (u * u + v * v > 0.68 * 0.68) continue;  // skip the boundary blend ring
        if (v > -0.62 && v < -0.14) {
          if (u > -0.62 && u < -0.06) eye_l += w;
          if (u > 0.06 && u < 0.62) eye_r += w;
        }
        if (v > 0.28 && v < 0.80 && std::abs(u) < 0.5) mouth += w;
      }
    const double rest = total - eye_l - eye_r - mouth;
    return 2.0 * std::min(eye_l, eye_r) + (eye_l + eye_r) + 1.5 * mouth - rest;
  };
  double best_deg = 0, best_score = -1e18;
  for (int deg = -63; deg <= 63; deg += 3) {
    const double sc = band_score(deg);
    if (sc > best_score) {
      best_score = sc;
      best_deg = deg;
    }
  }

  // eye blobs in the candidate frame
  auto eye_centroids = [&](double deg, double out[2][2]) {
    const double c = std::cos(deg * kPi / 180.0), s = std::sin(deg * kPi / 180.0);
    double m0 = 0, x0 = 0, y0 = 0, m1 = 0, x1 = 0, y1 = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double w = cw.dark[y * W + x];
        if (w <= 0) continue;
        const double dx = x + 0.5 - face_m.mx, dy = y + 0.5 - face_m.my;
        const double u = (c * dx + s * dy) / r0, v = (-s * dx + c * dy) / r0;
        if (u * u + v * v > 0.68 * 0.68) continue;
        if (v < -0.62 || v > -0.16 || std::abs(u) < 0.03) continue;
        if (u < 0) {
          m0 += w;
          x0 += w * (x + 0.5);
          y0 += w * (y + 0.5);
        } else {
          m1 += w;
          x1 += w * (x + 0.5);
          y1 += w * (y + 0.5);
        }
      }
    if (m0 < 0.05 || m1 < 0.05) return false;
    out[0][0] = x0 / m0;
    out[0][1] = y0 / m0;
    out[1][0] = x1 / m1;
    out[1][1] = y1 / m1;
    return true;
  };

  double eyes[2][2];
  f.has_eyes = eye_centroids(best_deg, eyes);
  double rot_deg = best_deg;
  if (f.has_eyes) {
    rot_deg = std::atan2(eyes[1][1] - eyes[0][1], eyes[1][0] - eyes[0][0]) * 180.0 / kPi;
    // one refinement pass with the sharper angle
    if (eye_centroids(rot_deg, eyes))
      rot_deg = std::atan2(eyes[1][1] - eyes[0][1], eyes[1][0] - eyes[0][0]) * 180.0 / kPi;
  }
  rot_deg = clampd(rot_deg, -60.0, 60.0);
  f.rot_deg = rot_deg;

  // aspect from face-frame second moments (uniform ellipse: Var = r^2/4)
  const double c = std::cos(rot_deg * kPi / 180.0), s = std::sin(rot_deg * kPi / 180.0);
  const double var_u = c * c * face_m.cxx + 2 * c * s * face_m.cxy + s * s * face_m.cyy;
  const double var_v = s * s * face_m.cxx - 2 * c * s * face_m.cxy + c * c * face_m.cyy;
  const double q = std::sqrt(std::max(1e-9, var_v) / std::max(1e-9, var_u));
  double aspect = (q - 1.0) / (0.18 * (q + 1.0));
  aspect = clampd(aspect, -1.0, 1.0);
  // area-based radius, aspect-corrected: area = pi r0^2 (1-0.18a)(1+0.18a)
  r0 = std::sqrt(face_m.mass / (kPi * (1.0 - 0.18 * aspect) * (1.0 + 0.18 * aspect)));

  // mouth blob in the face frame; its distance from the center pins the
  // scale more sharply than the area (the AA boundary ring inflates area)
  std::vector<double> mouth(H * W, 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double w = cw.dark[y * W + x];
      if (w <= 0) continue;
      const double dx = x + 0.5 - face_m.mx, dy = y + 0.5 - face_m.my;
      const double u = (c * dx + s * dy) / r0, v = (-s * dx + c * dy) / r0;
      if (u * u + v * v > 0.68 * 0.68) continue;
      if (v > 0.30 && v < 0.80) mouth[y * W + x] = w;
    }
  const Moments mouth_m = moments_of(mouth, H, W);
  if (mouth_m.mass > 0.3) {
    const double d = std::hypot(mouth_m.mx - face_m.mx, mouth_m.my - face_m.my);
    r0 = d / 0.52;
  }
  f.r0 = r0;

  // eye spacing
  double eye_sp = 0;
  if (f.has_eyes) {
    const double dx = eyes[1][0] - eyes[0][0], dy = eyes[1][1] - eyes[0][1];
    const double half = 0.5 * std::sqrt(dx * dx + dy * dy) / r0;
    eye_sp = (half - 0.34) / 0.12;
  }

  // nose extent: darkness integral of the nose shade relative to skin over
  // the face midline (robust to sub-pixel bar widths); bar width 0.07 r0
  double nose_mass = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double hsv[3];
      rgb_to_hsv(frame.data() + (y * W + x) * 3, hsv);
      if (hsv[1] < 0.25 || hsv[2] < 0.45) continue;  // saturated, not a dark feature
      const double dx = x + 0.5 - face_m.mx, dy = y + 0.5 - face_m.my;
      const double u = (c * dx + s * dy) / r0, v = (-s * dx + c * dy) / r0;
      if (std::abs(u) <= 0.13 && v >= -0.14 && v <= 0.30)
        nose_mass += clampd((0.88 - hsv[2]) / (0.88 - 0.62), 0.0, 1.2);
    }
  double nose_ext = 0;
  if (nose_mass > 0.02) {
    const double len = nose_mass / (0.07 * r0 * r0);  // in r0 units
    const double tip = len - 0.04;
    nose_ext = (tip - 0.12) / 0.10;
  }

  // hue: circular mean over bright skin
  double hs = 0, hc = 0, hm = 0;
  for (int i = 0; i < H * W; ++i) {
    const double w = cw.skin[i];
    if (w <= 0) continue;
    double hsv[3];
    rgb_to_hsv(frame.data() + i * 3, hsv);
    hs += w * std::sin(2 * kPi * hsv[0]);
    hc += w * std::cos(2 * kPi * hsv[0]);
    hm += w;
  }
  double hue_id = 0;
  if (hm > 0.5) {
    double h = std::atan2(hs, hc) / (2 * kPi);
    if (h < 0) h += 1.0;
    if (h > 0.9) h -= 1.0;  // skin hues live in [0, 0.8]
    hue_id = 2 * (h / 0.8) - 1;
  }

  f.identity = {clampd(hue_id, -1, 1), clampd(eye_sp, -1, 1), clampd(nose_ext, -1, 1), aspect};

  // expression from the mouth blob's second moments
  double open = 0;
  if (mouth_m.mass > 0.2) {
    const double vu = c * c * mouth_m.cxx + 2 * c * s * mouth_m.cxy + s * s * mouth_m.cyy;
    const double mw = 2.0 * std::sqrt(std::max(0.0, vu)) / r0;  // ellipse: Var = hw^2/4
    open = clampd((mw - 0.30) / 0.10, 0.0, 1.0);
  }
  f.expression = {2 * open - 1, 0.0};
  return f;
}

IdentityEmbedding embed_identity(const Tensor<float>& frame) {
  const FaceFeatures f = extract_features(frame);
  IdentityEmbedding id = f.identity;
  double n = 0;
  for (double v : id) n += v * v;
  if (n < 1e-8) id = {1e-4, 0, 0, 0};  // degenerate, keep it deterministic
  return normalized(id);
}

namespace {

struct Packed {
  std::array<double, 10> v;
  static Packed from(const ToyFaceParams& p) {
    return {{p.identity[0], p.identity[1], p.identity[2], p.identity[3], p.expression[0],
             p.expression[1], p.cx, p.cy, p.scale, p.rot_deg}};
  }
  ToyFaceParams to(std::uint64_t bg_seed) const {
    ToyFaceParams p;
    p.identity = {clampd(v[0], -1, 1), clampd(v[1], -1, 1), clampd(v[2], -1, 1),
                  clampd(v[3], -1, 1)};
    p.expression = {clampd(v[4], -1, 1), clampd(v[5], -1, 1)};
    p.cx = clampd(v[6], 0, 1);
    p.cy = clampd(v[7], 0, 1);
    p.scale = clampd(v[8], 0.15, 0.45);
    p.rot_deg = clampd(v[9], -60, 60);
    p.bg_seed = bg_seed;
    if (std::abs(p.identity[0]) + std::abs(p.identity[1]) + std::abs(p.identity[2]) +
            std::abs(p.identity[3]) < 1e-9)
      p.identity[0] = 1e-6;
    return p;
  }
};

double residual_rmse(const Tensor<float>& frame, const ToyFaceParams& p, int frame_index,
                     std::vector<double>* resid) {
  const int H = static_cast<int>(frame.dim(0)), W = static_cast<int>(frame.dim(1));
  Tensor<float> r = render_face(p, frame_index, H, W);
  double acc = 0;
  if (resid) resid->resize(static_cast<std::size_t>(frame.numel()));
  for (numcore::index_t i = 0; i < frame.numel(); ++i) {
    const double d = static_cast<double>(r[i]) - static_cast<double>(frame[i]);
    if (resid) (*resid)[static_cast<std::size_t>(i)] = d;
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(frame.numel()));
}

}  // namespace

ParamEstimate estimate_params(const Tensor<float>& frame, std::uint64_t bg_seed, int frame_index,
                              std::optional<ToyFaceParams> init) {
  const int H = static_cast<int>(frame.dim(0)), W = static_cast<int>(frame.dim(1));
  ToyFaceParams p0;
  if (init) {
    p0 = *init;
  } else {
    const FaceFeatures f = extract_features(frame);
    p0.identity = f.identity;
    p0.expression = {clampd(f.expression[0], -1, 1), 0};
    p0.cx = clampd(f.center_x / W, 0, 1);
    p0.cy = clampd(f.center_y / H, 0, 1);
    p0.scale = clampd(f.r0 / std::min(H, W), 0.15, 0.45);
    p0.rot_deg = f.rot_deg;
  }
  p0.bg_seed = bg_seed;

  // Levenberg-Marquardt with finite-difference Jacobian over the 10 params
  Packed theta = Packed::from(p0);
  const std::array<double, 10> step = {2e-3, 2e-3, 2e-3, 2e-3, 2e-3,
                                       2e-3, 1e-3, 1e-3, 1e-3, 0.1};
  const numcore::index_t n = frame.numel();
  std::vector<double> resid, resid_p, resid_m;
  double rmse = residual_rmse(frame, theta.to(bg_seed), frame_index, &resid);
  double lambda = 1e-2;

  auto run_lm = [&](int iters) {
  for (int iter = 0; iter < iters; ++iter) {
    // J^T J and J^T r via finite differences
    std::vector<std::vector<double>> J(10);
    for (int k = 0; k < 10; ++k) {
      Packed tp = theta, tm = theta;
      tp.v[k] += step[k];
      tm.v[k] -= step[k];
      residual_rmse(frame, tp.to(bg_seed), frame_index, &resid_p);
      residual_rmse(frame, tm.to(bg_seed), frame_index, &resid_m);
      J[k].resize(static_cast<std::size_t>(n));
      for (numcore::index_t i = 0; i < n; ++i)
        J[k][static_cast<std::size_t>(i)] =
            (resid_p[static_cast<std::size_t>(i)] - resid_m[static_cast<std::size_t>(i)]) /
            (2 * step[k]);
    }
    double jtj[10][10], jtr[10];
    for (int a = 0; a < 10; ++a) {
      jtr[a] = 0;
      for (numcore::index_t i = 0; i < n; ++i)
        jtr[a] += J[a][static_cast<std::size_t>(i)] * resid[static_cast<std::size_t>(i)];
      for (int b = a; b < 10; ++b) {
        double acc = 0;
        for (numcore::index_t i = 0; i < n; ++i)
          acc += J[a][static_cast<std::size_t>(i)] * J[b][static_cast<std::size_t>(i)];
        jtj[a][b] = jtj[b][a] = acc;
      }
    }

    bool improved = false;
    for (int attempt = 0; attempt < 6 && !improved; ++attempt) {
      double A[10][11];
      for (int a = 0; a < 10; ++a) {
        for (int b = 0; b < 10; ++b) A[a][b] = jtj[a][b] + (a == b ? lambda * (jtj[a][a] + 1e-9) : 0);
        A[a][10] = -jtr[a];
      }
      // gaussian elimination
      for (int col = 0; col < 10; ++col) {
        int piv = col;
        for (int r2 = col + 1; r2 < 10; ++r2)
          if (std::abs(A[r2][col]) > std::abs(A[piv][col])) piv = r2;
        std::swap(A[piv], A[col]);
        if (std::abs(A[col][col]) < 1e-14) continue;
        for (int r2 = 0; r2 < 10; ++r2) {
          if (r2 == col) continue;
          const double fput = A[r2][col] / A[col][col];
          for (int c2 = col; c2 <= 10; ++c2) A[r2][c2] -= fput * A[col][c2];
        }
      }
      Packed cand = theta;
      for (int a = 0; a < 10; ++a)
        cand.v[a] += std::abs(A[a][a]) < 1e-14 ? 0.0 : A[a][10] / A[a][a];
      std::vector<double> resid_c;
      const double rmse_c = residual_rmse(frame, cand.to(bg_seed), frame_index, &resid_c);
      if (rmse_c < rmse) {
        theta = cand;
        // keep the packed values inside the valid box so steps stay honest
        for (int a = 0; a < 10; ++a) theta.v[a] = Packed::from(cand.to(bg_seed)).v[a];
        rmse = rmse_c;
        resid.swap(resid_c);
        lambda = std::max(1e-7, lambda * 0.4);
        improved = true;
      } else {
        lambda *= 6.0;
      }
    }
    if (!improved && lambda > 1e6) break;
    if (rmse < 1e-6) break;
  }
  };

  run_lm(50);
  // the brow bar is thin; sampling ripples can trap it in a shallow local
  // minimum, so scan it on a coarse grid and polish again
  {
    Packed best = theta;
    double best_rmse = rmse;
    for (double br = -1.0; br <= 1.0001; br += 0.2) {
      Packed cand = theta;
      cand.v[5] = br;
      std::vector<double> rc;
      const double r = residual_rmse(frame, cand.to(bg_seed), frame_index, &rc);
      if (r < best_rmse) {
        best_rmse = r;
        best = cand;
      }
    }
    if (best_rmse < rmse) {
      theta = best;
      rmse = residual_rmse(frame, theta.to(bg_seed), frame_index, &resid);
      lambda = 1e-2;
    }
  }
  run_lm(25);

  ParamEstimate out;
  out.params = theta.to(bg_seed);
  out.rmse = rmse;
  out.converged = rmse < 0.02;
  return out;
}

}  // namespace vidswap::toyworld
