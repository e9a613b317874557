#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vidswap/common/rng.hpp"
#include "vidswap/numcore/random.hpp"
#include "vidswap/toyworld/codec.hpp"
#include "vidswap/toyworld/estimate.hpp"
#include "vidswap/toyworld/render.hpp"

using namespace vidswap;
using namespace vidswap::toyworld;
using numcore::bitwise_equal;

namespace {
ToyFaceParams random_params(Rng& rng) {
  ToyFaceParams p;
  for (auto& v : p.identity) v = rng.uniform(-1, 1);
  for (auto& v : p.expression) v = rng.uniform(-1, 1);
  p.cx = rng.uniform(0.35, 0.65);
  p.cy = rng.uniform(0.35, 0.65);
  p.scale = rng.uniform(0.18, 0.42);
  p.rot_deg = rng.uniform(-45, 45);
  p.bg_seed = rng.raw();
  return p;
}
}  // namespace

TEST_CASE("renderer is deterministic") {
  Rng rng(1);
  ToyFaceParams p = random_params(rng);
  CHECK(bitwise_equal(render_face(p, 3, 32, 32), render_face(p, 3, 32, 32)));
}

TEST_CASE("out-of-range params are rejected") {
  ToyFaceParams p;
  p.scale = 0.5;
  CHECK_THROWS_AS(render_face(p, 0, 32, 32), ValidationError);
  p.scale = 0.3;
  p.rot_deg = 75;
  CHECK_THROWS_AS(landmarks(p, 32, 32), ValidationError);
  p.rot_deg = 0;
  p.identity = {0, 0, 0, 0};
  CHECK_THROWS_AS(render_face(p, 0, 32, 32), ValidationError);
}

TEST_CASE("mouth openness only changes pixels inside the mouth region box") {
  ToyFaceParams a;
  a.identity = {0.3, 0.1, -0.2, 0.0};
  a.cx = a.cy = 0.5;
  a.scale = 0.35;
  a.bg_seed = 9;
  ToyFaceParams b = a;
  a.expression = {-1.0, 0.0};
  b.expression = {1.0, 0.0};
  auto fa = render_face(a, 0, 32, 32);
  auto fb = render_face(b, 0, 32, 32);

  // mouth bounding box of the wider (open) mouth, padded for AA
  const FaceGeometry g = face_geometry(b, 32, 32);
  const double cx = 16, cy = 16;
  const double x0 = cx - g.mouth_hw * g.r0 - 2, x1 = cx + g.mouth_hw * g.r0 + 2;
  const double y0 = cy + (g.mouth_y - g.mouth_hh) * g.r0 - 2;
  const double y1 = cy + (g.mouth_y + g.mouth_hh) * g.r0 + 2;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      double diff = 0;
      for (int k = 0; k < 3; ++k)
        diff += std::abs(fa[(y * 32 + x) * 3 + k] - fb[(y * 32 + x) * 3 + k]);
      if (diff > 1e-6) {
        CHECK(x + 1.0 >= x0);
        CHECK(x - 0.0 <= x1);
        CHECK(y + 1.0 >= y0);
        CHECK(y + 0.0 <= y1);
      }
    }
}

TEST_CASE("landmark symmetry, rigidity and scaling") {
  ToyFaceParams p;
  p.identity = {0.2, 0.4, 0.1, -0.3};
  p.cx = p.cy = 0.5;
  p.scale = 0.2;
  p.rot_deg = 0;
  auto lm = landmarks(p, 32, 32);
  // rotation 0, centered: eyes symmetric about cx
  CHECK(lm[0][0] + lm[1][0] == doctest::Approx(2 * 16.0));
  CHECK(lm[0][1] == doctest::Approx(lm[1][1]));

  // doubling scale doubles the inter-eye distance
  ToyFaceParams p2 = p;
  p2.scale = 0.4;
  auto lm2 = landmarks(p2, 32, 32);
  const double d1 = std::hypot(lm[1][0] - lm[0][0], lm[1][1] - lm[0][1]);
  const double d2 = std::hypot(lm2[1][0] - lm2[0][0], lm2[1][1] - lm2[0][1]);
  CHECK(d2 == doctest::Approx(2 * d1).epsilon(1e-9));

  // rotation by 30 degrees moves landmarks rigidly about the center
  ToyFaceParams p3 = p;
  p3.rot_deg = 30;
  auto lm3 = landmarks(p3, 32, 32);
  const double c = std::cos(30 * M_PI / 180), s = std::sin(30 * M_PI / 180);
  for (int i = 0; i < 5; ++i) {
    const double dx = lm[i][0] - 16, dy = lm[i][1] - 16;
    CHECK(lm3[i][0] == doctest::Approx(16 + c * dx - s * dy).epsilon(1e-9));
    CHECK(lm3[i][1] == doctest::Approx(16 + s * dx + c * dy).epsilon(1e-9));
  }
}

TEST_CASE("mask area matches the analytic ellipse area within 5%") {
  Rng rng(21);
  for (int rep = 0; rep < 10; ++rep) {
    ToyFaceParams p = random_params(rng);
    p.cx = p.cy = 0.5;
    p.scale = rng.uniform(0.2, 0.4);
    auto m = face_mask(p, 64, 64);
    double area = 0;
    for (index_t i = 0; i < m.numel(); ++i) area += m[i];
    const FaceGeometry g = face_geometry(p, 64, 64);
    const double expect = M_PI * g.rx * g.ry;
    CHECK(std::abs(area - expect) / expect < 0.05);
  }
}

TEST_CASE("embedder recovers identity direction (median cos >= 0.99 over 100 draws)") {
  Rng rng(77);
  std::vector<double> cs;
  for (int i = 0; i < 100; ++i) {
    ToyFaceParams p = random_params(rng);
    auto emb = embed_identity(render_face(p, 0, 32, 32));
    cs.push_back(cosine(emb, normalized(p.identity)));
  }
  std::sort(cs.begin(), cs.end());
  CHECK(cs[50] >= 0.99);
}

TEST_CASE("same identity across poses stays close; orthogonal identities stay far") {
  Rng rng(123);
  std::vector<double> same, ortho;
  for (int i = 0; i < 40; ++i) {
    ToyFaceParams a = random_params(rng);
    ToyFaceParams b = random_params(rng);
    b.identity = a.identity;
    same.push_back(cosine(embed_identity(render_face(a, 0, 32, 32)),
                          embed_identity(render_face(b, 0, 32, 32))));

    ToyFaceParams c = random_params(rng);
    ToyFaceParams d = random_params(rng);
    c.identity = {1, 0, 0, 0};
    d.identity = {0, 0, 1, 0};
    ortho.push_back(cosine(embed_identity(render_face(c, 0, 32, 32)),
                           embed_identity(render_face(d, 0, 32, 32))));
  }
  std::sort(same.begin(), same.end());
  std::sort(ortho.begin(), ortho.end());
  CHECK(same[20] >= 0.95);
  CHECK(ortho[20] < 0.3);
}

TEST_CASE("embedder raises NoFace on a faceless frame") {
  auto bg = render_background(4, 0, 32, 32);
  CHECK_THROWS_AS(embed_identity(bg), NoFaceError);
}

TEST_CASE("ifs oracle: fixed point and identity transplant") {
  Rng rng(5);
  ToyFaceParams p = random_params(rng);
  // same identity -> identical render
  CHECK(bitwise_equal(ifs_oracle(p, p.identity, 2, 32, 32), render_face(p, 2, 32, 32)));

  // transplanted identity is recovered by the embedder
  std::vector<double> cs;
  for (int i = 0; i < 30; ++i) {
    ToyFaceParams t = random_params(rng);
    ToyFaceParams s = random_params(rng);
    auto out = ifs_oracle(t, s.identity, 0, 32, 32);
    cs.push_back(cosine(embed_identity(out), normalized(s.identity)));
  }
  std::sort(cs.begin(), cs.end());
  CHECK(cs[15] >= 0.99);

  // landmarks differ from the target's only through eye spacing / nose extent
  ToyFaceParams t = random_params(rng);
  std::array<double, 4> sid = t.identity;
  sid[0] = -t.identity[0];   // hue change: no landmark effect
  sid[3] = -t.identity[3];   // aspect change: no landmark effect
  auto lm_t = landmarks(t, 32, 32);
  auto lm_s = landmarks(swapped_params(t, sid), 32, 32);
  for (int i = 0; i < 5; ++i) {
    CHECK(lm_t[i][0] == doctest::Approx(lm_s[i][0]).epsilon(1e-12));
    CHECK(lm_t[i][1] == doctest::Approx(lm_s[i][1]).epsilon(1e-12));
  }
}

TEST_CASE("codec: round trip, isometry, zeros") {
  Rng rng(31);
  ToyCodec codec(4);
  Tensor<float> video = numcore::rand_uniform<float>({8, 16, 16, 3}, rng, 0, 1);
  auto lat = codec.encode(video);
  CHECK(lat.num_chunks() == 2);
  CHECK(lat.chunks.shape() == numcore::Shape{2, 8, 8, 48});
  auto back = codec.decode(lat);
  CHECK(numcore::max_abs_diff(video, back) < 1e-5);

  double n_v = 0, n_l = 0;
  for (index_t i = 0; i < video.numel(); ++i) n_v += double(video[i]) * video[i];
  for (index_t i = 0; i < lat.chunks.numel(); ++i) n_l += double(lat.chunks[i]) * lat.chunks[i];
  CHECK(std::abs(n_v - n_l) < 1e-4 * std::max(1.0, n_v));

  Tensor<float> zeros({4, 16, 16, 3});
  auto lz = codec.encode(zeros);
  for (index_t i = 0; i < lz.chunks.numel(); ++i) CHECK(lz.chunks[i] == 0.0f);
}

TEST_CASE("codec rejects bad divisibility") {
  ToyCodec codec(4);
  CHECK_THROWS_AS(codec.encode(Tensor<float>({6, 16, 16, 3})), ValidationError);
  CHECK_THROWS_AS(codec.encode(Tensor<float>({8, 15, 16, 3})), ValidationError);
}

TEST_CASE("estimator inverts the renderer within 1e-2 per component") {
  Rng rng(55);
  int tested = 0;
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    ToyFaceParams p = random_params(rng);
    auto frame = render_face(p, 0, 32, 32);
    auto est = estimate_params(frame, p.bg_seed, 0);
    CHECK(est.converged);
    const auto& q = est.params;
    worst = std::max({worst, std::abs(q.identity[0] - p.identity[0]),
                      std::abs(q.identity[1] - p.identity[1]),
                      std::abs(q.identity[2] - p.identity[2]),
                      std::abs(q.identity[3] - p.identity[3]),
                      std::abs(q.expression[0] - p.expression[0]),
                      std::abs(q.expression[1] - p.expression[1]), std::abs(q.cx - p.cx),
                      std::abs(q.cy - p.cy), std::abs(q.scale - p.scale),
                      std::abs(q.rot_deg - p.rot_deg) / 60.0});
    ++tested;
  }
  CHECK(tested == 100);
  CHECK(worst < 1e-2);
}

TEST_CASE("pose maps are in range and nonzero at landmarks") {
  Rng rng(8);
  ToyFaceParams p = random_params(rng);
  auto lm = landmarks(p, 32, 32);
  auto maps = rasterize_pose_maps({lm}, 32, 32);
  for (index_t i = 0; i < maps.numel(); ++i) {
    CHECK(maps[i] >= 0.0f);
    CHECK(maps[i] <= 1.0f);
  }
  for (const auto& pt : lm) {
    const int x = std::min(31, std::max(0, static_cast<int>(pt[0])));
    const int y = std::min(31, std::max(0, static_cast<int>(pt[1])));
    CHECK(maps[y * 32 + x] > 0.4f);
  }
}

TEST_CASE("background translates one pixel per frame") {
  auto f0 = render_background(3, 0, 32, 32);
  auto f1 = render_background(3, 1, 32, 32);
  // frame 1 equals frame 0 shifted by one pixel along the seed direction;
  // verify via the phase relation at matching samples on a line
  bool any_change = numcore::max_abs_diff(f0, f1) > 1e-4;
  CHECK(any_change);
}
