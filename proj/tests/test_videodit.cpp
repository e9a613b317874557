#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "vidswap/numcore/random.hpp"
#include "vidswap/toyworld/codec.hpp"
#include "vidswap/videodit/checkpoint.hpp"
#include "vidswap/videodit/condition.hpp"
#include "vidswap/videodit/model.hpp"

using namespace vidswap;
using namespace vidswap::videodit;
using numcore::Tensor;
using numcore::Tape;
using numcore::ParamStore;
using numcore::Shape;
using numcore::index_t;

namespace {

toyworld::WorldConfig tiny_world() {
  toyworld::WorldConfig w;
  w.height = 16;
  w.width = 16;
  w.frames = 8;
  w.chunk_len = 4;
  return w;
}

DitConfig tiny_config() {
  DitConfig c;
  c.model_dim = 24;
  c.heads = 2;
  c.blocks = 1;
  c.patch = 2;
  c.context_channels = 49;
  return c;
}

toyworld::WorldConfig default_world() { return {}; }

template <typename T>
ConditionBundle<T> random_condition(const DitModel<T>& model, Rng& rng, bool with_id) {
  const auto& g = model.geometry();
  const auto& w = model.world();
  ConditionBundle<T> cond;
  cond.context = numcore::randn<T>({g.C, g.h, g.w, model.config().context_channels}, rng);
  cond.pose_maps = numcore::rand_uniform<T>({w.frames, w.height, w.width}, rng, 0, 1);
  if (with_id) cond.id = std::array<T, 4>{T(0.5), T(-0.5), T(0.5), T(-0.5)};
  return cond;
}

// independent dense reference of the pose-attention equation, rope included
template <typename T>
Tensor<T> naive_pose_attention(const Tensor<T>& z, const Tensor<T>& p, const Tensor<T>& wq,
                               const Tensor<T>& wk, const Tensor<T>& wv, const Tensor<T>& wkp,
                               const Tensor<T>& wvp,
                               const std::vector<std::array<int, 3>>& zidx,
                               const std::vector<std::array<int, 3>>& pidx, T lambda, int heads) {
  const index_t n = z.dim(0), D = z.dim(1), np = p.dim(0);
  const index_t dh = D / heads;
  const index_t rot = (dh / 6) * 6;
  auto matmul = [&](const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> c({a.dim(0), b.dim(1)});
    for (index_t i = 0; i < a.dim(0); ++i)
      for (index_t j = 0; j < b.dim(1); ++j) {
        double acc = 0;
        for (index_t k = 0; k < a.dim(1); ++k) acc += double(a.at(i, k)) * b.at(k, j);
        c.at(i, j) = static_cast<T>(acc);
      }
    return c;
  };
  auto rope_head = [&](std::vector<double>& vec, const std::array<int, 3>& idx) {
    if (rot == 0) return;
    const index_t pairs = rot / 6;
    for (int ax = 0; ax < 3; ++ax)
      for (index_t j = 0; j < pairs; ++j) {
        const double f = std::pow(10000.0, -double(j) / double(pairs));
        const double a = idx[ax] * f;
        const index_t o = ax * 2 * pairs + 2 * j;
        const double x0 = vec[o], x1 = vec[o + 1];
        vec[o] = x0 * std::cos(a) - x1 * std::sin(a);
        vec[o + 1] = x0 * std::sin(a) + x1 * std::cos(a);
      }
  };
  Tensor<T> q = matmul(z, wq), k = matmul(z, wk), v = matmul(z, wv);
  Tensor<T> kp = matmul(p, wkp), vp = matmul(p, wvp);
  Tensor<T> out({n, D});
  for (int h = 0; h < heads; ++h) {
    for (index_t i = 0; i < n; ++i) {
      std::vector<double> qi(dh);
      for (index_t d = 0; d < dh; ++d) qi[d] = q.at(i, h * dh + d);
      rope_head(qi, zidx[i]);
      // self branch
      std::vector<double> scores(n);
      double mx = -1e30;
      for (index_t j = 0; j < n; ++j) {
        std::vector<double> kj(dh);
        for (index_t d = 0; d < dh; ++d) kj[d] = k.at(j, h * dh + d);
        rope_head(kj, zidx[j]);
        double s = 0;
        for (index_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
        scores[j] = s / std::sqrt(double(dh));
        mx = std::max(mx, scores[j]);
      }
      double zsum = 0;
      for (auto& s : scores) {
        s = std::exp(s - mx);
        zsum += s;
      }
      for (index_t d = 0; d < dh; ++d) {
        double acc = 0;
        for (index_t j = 0; j < n; ++j) acc += scores[j] / zsum * v.at(j, h * dh + d);
        out.at(i, h * dh + d) = static_cast<T>(acc);
      }
      // pose branch
      std::vector<double> pscores(np);
      mx = -1e30;
      for (index_t j = 0; j < np; ++j) {
        std::vector<double> kj(dh);
        for (index_t d = 0; d < dh; ++d) kj[d] = kp.at(j, h * dh + d);
        rope_head(kj, pidx[j]);
        double s = 0;
        for (index_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
        pscores[j] = s / std::sqrt(double(dh));
        mx = std::max(mx, pscores[j]);
      }
      zsum = 0;
      for (auto& s : pscores) {
        s = std::exp(s - mx);
        zsum += s;
      }
      for (index_t d = 0; d < dh; ++d) {
        double acc = 0;
        for (index_t j = 0; j < np; ++j) acc += pscores[j] / zsum * vp.at(j, h * dh + d);
        out.at(i, h * dh + d) += static_cast<T>(lambda * acc);
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("patchify round trip and token counts") {
  Rng rng(2);
  toyworld::WorldConfig w;  // 32x32, 16 frames
  LatentGeometry g = LatentGeometry::from(w, 2);
  CHECK(g.tokens_per_chunk() == 64);
  CHECK(g.n_latent_tokens() == 256);

  Tensor<float> x = numcore::randn<float>({g.C, g.h, g.w, g.c_lat}, rng);
  auto tok = patchify(x, 2);
  CHECK(tok.shape() == Shape{256, 4 * 48});
  auto back = unpatchify(tok, g, g.c_lat);
  CHECK(numcore::bitwise_equal(x, back));

  // token i's rope triple equals its (chunk,row,col)
  auto idx = latent_rope_triples(g, false);
  CHECK(idx->size() == 256);
  CHECK((*idx)[0] == std::array<int, 3>{0, 0, 0});
  CHECK((*idx)[64] == std::array<int, 3>{1, 0, 0});
  CHECK((*idx)[64 + 8 * 2 + 3] == std::array<int, 3>{1, 2, 3});
}

TEST_CASE("patchify rejects bad divisibility") {
  CHECK_THROWS_AS(patchify(Tensor<float>({2, 5, 4, 3}), 2), ValidationError);
}

TEST_CASE("pose guider: constant response on zero maps, count, equivariance") {
  DitModel<double> model(tiny_config(), tiny_world());
  ParamStore<double> ps;
  model.init_params(ps, 42);

  Tape<double> tape(false);
  auto pv = model.bind(tape, ps, false);

  // all-zero maps -> bias-driven response, constant across positions per chunk
  Tensor<double> zero_maps({8, 16, 16});
  auto tok = model.pose_guider(tape, pv, zero_maps);
  const auto& tv = tape.value(tok);
  CHECK(tv.shape() == Shape{2 * 4 * 4, 24});
  // interior positions share the bias response (borders see zero padding)
  for (index_t t : {5, 6, 9, 10})
    for (index_t d = 0; d < 24; ++d)
      CHECK(tv.at(t, d) == doctest::Approx(tv.at(5, d)).epsilon(1e-9));

  // default world: 256 tokens
  DitModel<double> big(DitConfig{}, default_world());
  ParamStore<double> ps2;
  big.init_params(ps2, 1);
  Tape<double> tape2(false);
  auto pv2 = big.bind(tape2, ps2, false);
  toyworld::ToyFaceParams p;
  p.identity = {0.3, 0, 0.2, 0};
  std::vector<toyworld::Landmarks> lms(16, toyworld::landmarks(p, 32, 32));
  auto maps = toyworld::rasterize_pose_maps(lms, 32, 32);
  auto tok2 = big.pose_guider(tape2, pv2, maps.cast<double>());
  CHECK(tape2.value(tok2).shape() == Shape{256, 128});

  // translating the maps by one latent cell (4 px) translates interior tokens
  Tensor<float> shifted({16, 32, 32});
  for (index_t f = 0; f < 16; ++f)
    for (index_t y = 0; y < 32; ++y)
      for (index_t x = 0; x < 32; ++x)
        shifted[(f * 32 + y) * 32 + x] =
            (x >= 4) ? maps[(f * 32 + y) * 32 + (x - 4)] : 0.0f;
  auto tok3 = big.pose_guider(tape2, pv2, shifted.cast<double>());
  const auto& a = tape2.value(tok2);
  const auto& b = tape2.value(tok3);
  // interior: rows 2..5, cols 2..5 of each 8x8 chunk grid
  for (index_t c = 0; c < 4; ++c)
    for (index_t r = 2; r < 6; ++r)
      for (index_t q = 2; q < 6; ++q) {
        const index_t src = c * 64 + r * 8 + q;
        const index_t dst = c * 64 + r * 8 + (q + 1);
        for (index_t d = 0; d < 128; ++d)
          CHECK(b.at(dst, d) == doctest::Approx(a.at(src, d)).epsilon(1e-6));
      }
}

TEST_CASE("pose attention reductions and oracle") {
  Rng rng(7);
  DitConfig cfg = tiny_config();
  DitModel<double> model(cfg, tiny_world());
  const int D = cfg.model_dim;

  const index_t n = 9, np = 8;
  Tensor<double> z = numcore::randn<double>({n, D}, rng);
  Tensor<double> p = numcore::randn<double>({np, D}, rng);
  auto zidx = std::make_shared<std::vector<std::array<int, 3>>>();
  zidx->push_back({-1, 0, 0});
  for (int i = 0; i < 8; ++i) zidx->push_back({i / 4, (i / 2) % 2, i % 2});
  auto pidx = std::make_shared<std::vector<std::array<int, 3>>>(zidx->begin() + 1, zidx->end());

  Tensor<double> wq = numcore::randn<double>({D, D}, rng, 0.2);
  Tensor<double> wk = numcore::randn<double>({D, D}, rng, 0.2);
  Tensor<double> wv = numcore::randn<double>({D, D}, rng, 0.2);
  Tensor<double> wkp = numcore::randn<double>({D, D}, rng, 0.2);
  Tensor<double> wvp = numcore::randn<double>({D, D}, rng, 0.2);

  auto run = [&](double lambda) {
    Tape<double> t(false);
    auto out = model.pose_attention(t, t.constant(z), t.constant(p), t.constant(wq),
                                    t.constant(wk), t.constant(wv), t.constant(wkp),
                                    t.constant(wvp), zidx, pidx, lambda);
    return t.value(out);
  };

  // naive dense oracle agreement
  auto got = run(0.7);
  auto want = naive_pose_attention(z, p, wq, wk, wv, wkp, wvp, *zidx, *pidx, 0.7, cfg.heads);
  CHECK(numcore::max_abs_diff(got, want) < 1e-6);

  // lambda = 0 equals base self-attention exactly
  auto base = run(0.0);
  auto base_naive = naive_pose_attention(z, p, wq, wk, wv, wkp,
                                         Tensor<double>({D, D}), *zidx, *pidx, 0.0, cfg.heads);
  CHECK(numcore::max_abs_diff(base, base_naive) < 1e-6);

  // lambda-linearity: out(2L) - out(0) == 2 (out(L) - out(0))
  auto o1 = run(0.6), o2 = run(1.2);
  double worst = 0;
  for (index_t i = 0; i < o1.numel(); ++i)
    worst = std::max(worst, std::abs((o2[i] - base[i]) - 2.0 * (o1[i] - base[i])));
  CHECK(worst < 1e-5);

  // token count mismatch raises
  Tape<double> t;
  CHECK_THROWS_AS(model.pose_attention(t, t.constant(z), t.constant(p), t.constant(wq),
                                       t.constant(wk), t.constant(wv), t.constant(wkp),
                                       t.constant(wvp), pidx, pidx, 1.0),
                  ValidationError);
}

TEST_CASE("single-token forced case: softmax of one scalar is 1") {
  DitConfig cfg = tiny_config();
  cfg.heads = 1;
  cfg.model_dim = 4;  // dh=4 < 6: no rope rotation
  DitModel<double> model(cfg, tiny_world());
  const int D = 4;
  Tensor<double> z({1, D}, {1, 2, 3, 4});
  Tensor<double> p({1, D}, {-1, 0.5, 2, 0});
  Tensor<double> zero({D, D});
  Tensor<double> eye({D, D});
  for (int i = 0; i < D; ++i) eye.at(i, i) = 1;
  auto idx = std::make_shared<std::vector<std::array<int, 3>>>(
      std::vector<std::array<int, 3>>{{0, 0, 0}});
  Tape<double> t(false);
  auto out = t.value(model.pose_attention(t, t.constant(z), t.constant(p), t.constant(zero),
                                          t.constant(zero), t.constant(eye), t.constant(zero),
                                          t.constant(eye), idx, idx, 1.0));
  for (int d = 0; d < D; ++d) CHECK(out[d] == doctest::Approx(z[d] + p[d]).epsilon(1e-12));
}

TEST_CASE("forward: output shape, determinism, id sensitivity, zero-init pose no-op") {
  Rng rng(3);
  DitModel<float> model(tiny_config(), tiny_world());
  ParamStore<float> ps;
  model.init_params(ps, 5);
  const auto& g = model.geometry();

  Tensor<float> z = numcore::randn<float>({g.C, g.h, g.w, g.c_lat}, rng);
  auto cond = random_condition<float>(model, rng, true);

  auto v1 = model.predict(ps, z, 0.5f, cond);
  CHECK(v1.shape() == z.shape());
  auto v2 = model.predict(ps, z, 0.5f, cond);
  CHECK(numcore::bitwise_equal(v1, v2));

  // zero-init id projection: null id and real id coincide at step 0
  auto cond_null = cond;
  cond_null.id = std::nullopt;
  CHECK(numcore::bitwise_equal(v1, model.predict(ps, z, 0.5f, cond_null)));

  // after perturbing the id and output projections they differ
  Rng rng2(9);
  ps.set("id.w", numcore::randn<float>({4, 24}, rng2, 0.5));
  ps.set("out.w", numcore::randn<float>(ps.get("out.w").shape(), rng2, 0.1));
  auto v_id = model.predict(ps, z, 0.5f, cond);
  auto v_null = model.predict(ps, z, 0.5f, cond_null);
  double l2 = 0;
  for (index_t i = 0; i < v_id.numel(); ++i)
    l2 += double(v_id[i] - v_null[i]) * (v_id[i] - v_null[i]);
  CHECK(l2 > 0);

  // zero-init pose value projection: the pose branch contributes nothing,
  // whatever lambda is
  DitConfig cfg2 = tiny_config();
  cfg2.lambda_pose = 3.7;
  DitModel<float> model2(cfg2, tiny_world());
  auto v_l = model2.predict(ps, z, 0.5f, cond);
  DitConfig cfg3 = tiny_config();
  cfg3.lambda_pose = 0.0;
  DitModel<float> model3(cfg3, tiny_world());
  auto v_0 = model3.predict(ps, z, 0.5f, cond);
  CHECK(numcore::bitwise_equal(v_l, v_0));
}

TEST_CASE("forward rejects bad t and bad shapes") {
  Rng rng(4);
  DitModel<float> model(tiny_config(), tiny_world());
  ParamStore<float> ps;
  model.init_params(ps, 5);
  const auto& g = model.geometry();
  Tensor<float> z = numcore::randn<float>({g.C, g.h, g.w, g.c_lat}, rng);
  auto cond = random_condition<float>(model, rng, true);
  Tape<float> tape;
  CHECK_THROWS_AS(model.forward(tape, ps, z, 1.5f, cond, false), ValidationError);
  Tensor<float> zbad = numcore::randn<float>({g.C, g.h, g.w, g.c_lat + 1}, rng);
  CHECK_THROWS_AS(model.forward(tape, ps, zbad, 0.5f, cond, false), ValidationError);
}

TEST_CASE("full tiny model gradient check at double precision") {
  Rng rng(11);
  DitModel<double> model(tiny_config(), tiny_world());
  ParamStore<double> ps;
  model.init_params(ps, 21);
  // give every parameter a random value so no gradient path is degenerate
  Rng prng(31);
  for (const auto& name : ps.names())
    ps.set(name, numcore::randn<double>(ps.get(name).shape(), prng, 0.08));

  const auto& g = model.geometry();
  Tensor<double> z = numcore::randn<double>({g.C, g.h, g.w, g.c_lat}, rng);
  Tensor<double> target = numcore::randn<double>({g.n_latent_tokens(), g.patch_in_dim(g.c_lat)}, rng);
  auto cond = random_condition<double>(model, rng, true);
  auto cond_null = cond;
  cond_null.id = std::nullopt;

  // composite loss: id and null branches together reach every parameter
  auto loss_of = [&](Tape<double>& tape, const ParamStore<double>& store) {
    auto bm1 = model.forward(tape, store, z, 0.35, cond, true);
    auto bm2 = model.forward(tape, store, z, 0.85, cond_null, true);
    auto l1 = tape.mse(bm1.out_tokens, tape.constant(target));
    auto l2 = tape.mse(bm2.out_tokens, tape.constant(target));
    return std::make_pair(tape.add(l1, l2), std::make_pair(bm1.params, bm2.params));
  };

  Tape<double> tape;
  auto [loss, binds] = loss_of(tape, ps);
  tape.backward(loss);

  // analytic grads per parameter = sum over both bindings
  numcore::GradMap<double> analytic;
  for (const auto& name : ps.names()) {
    Tensor<double> acc(ps.get(name).shape());
    if (tape.has_grad(binds.first.at(name))) {
      const auto& ga = tape.grad(binds.first.at(name));
      for (index_t i = 0; i < acc.numel(); ++i) acc[i] += ga[i];
    }
    if (tape.has_grad(binds.second.at(name))) {
      const auto& gb = tape.grad(binds.second.at(name));
      for (index_t i = 0; i < acc.numel(); ++i) acc[i] += gb[i];
    }
    analytic[name] = std::move(acc);
  }

  // finite differences over a random subset of coordinates of every param
  Rng pick(77);
  double worst = 0;
  const double eps = 3e-5;
  for (const auto& name : ps.names()) {
    Tensor<double>& pt = ps.get(name);
    const int ncheck = static_cast<int>(std::min<index_t>(4, pt.numel()));
    for (int c = 0; c < ncheck; ++c) {
      const index_t i = pick.uniform_int(pt.numel());
      const double orig = pt[i];
      auto eval = [&]() {
        Tape<double> t(false);
        auto bm1 = model.forward(t, ps, z, 0.35, cond, false);
        auto bm2 = model.forward(t, ps, z, 0.85, cond_null, false);
        auto l1 = t.mse(bm1.out_tokens, t.constant(target));
        auto l2 = t.mse(bm2.out_tokens, t.constant(target));
        return t.value(t.add(l1, l2))[0];
      };
      pt[i] = orig + eps;
      const double fp = eval();
      pt[i] = orig - eps;
      const double fm = eval();
      pt[i] = orig;
      const double central = (fp - fm) / (2 * eps);
      const double rel = std::abs(analytic[name][i] - central) / (std::abs(central) + 1e-8);
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("ivs condition: indicator channel, zeros, chunk-0 decode round trip") {
  toyworld::ToyCodec codec(4);
  toyworld::WorldConfig w;  // 16 frames
  Rng rng(6);
  Tensor<float> first = numcore::rand_uniform<float>({32, 32, 3}, rng, 0, 1);
  Tensor<float> last = numcore::rand_uniform<float>({32, 32, 3}, rng, 0, 1);
  Tensor<float> maps({16, 32, 32});
  auto cond = ivs_condition<float>(first, last, maps, codec, 16);
  CHECK(cond.context.shape() == Shape{4, 16, 16, 49});
  CHECK_FALSE(cond.id.has_value());

  // indicator channel sums to exactly two chunk-slices worth of ones
  double ind = 0;
  for (index_t c = 0; c < 4; ++c)
    for (index_t y = 0; y < 16; ++y)
      for (index_t x = 0; x < 16; ++x) ind += cond.context.at(c, y, x, 48);
  CHECK(ind == doctest::Approx(2.0 * 16 * 16));

  // middle chunks carry zero latent channels
  for (index_t c = 1; c < 3; ++c)
    for (index_t y = 0; y < 16; ++y)
      for (index_t x = 0; x < 16; ++x)
        for (index_t k = 0; k < 48; ++k) CHECK(cond.context.at(c, y, x, k) == 0.0f);

  // decoding chunk-0 context channels recovers the first frame
  toyworld::LatentVideo<float> lat;
  lat.chunk_len = 4;
  lat.chunks = Tensor<float>({1, 16, 16, 48});
  for (index_t y = 0; y < 16; ++y)
    for (index_t x = 0; x < 16; ++x)
      for (index_t k = 0; k < 48; ++k) lat.chunks.at(0, y, x, k) = cond.context.at(0, y, x, k);
  auto video = codec.decode(lat);
  for (index_t f = 0; f < 4; ++f) {
    auto frame = toyworld::get_frame(video, f);
    CHECK(numcore::max_abs_diff(frame, first) < 1e-5);
  }

  // zero keyframes -> context all zeros except the indicator
  Tensor<float> zf({32, 32, 3});
  auto cond0 = ivs_condition<float>(zf, zf, maps, codec, 16);
  for (index_t c = 0; c < 4; ++c)
    for (index_t y = 0; y < 16; ++y)
      for (index_t x = 0; x < 16; ++x)
        for (index_t k = 0; k < 48; ++k) CHECK(cond0.context.at(c, y, x, k) == 0.0f);
}

TEST_CASE("checkpoint round trip preserves everything") {
  DitModel<float> model(tiny_config(), tiny_world());
  ParamStore<float> ps;
  model.init_params(ps, 5);
  ps.step = 123;

  auto dir = std::filesystem::temp_directory_path() / "vidswap_ckpt_test";
  std::filesystem::remove_all(dir);
  CheckpointMeta meta;
  meta.config = tiny_config();
  meta.world = tiny_world();
  meta.tags["stage"] = "unit";
  save_checkpoint(dir, ps, meta);

  ParamStore<float> loaded;
  CheckpointMeta meta2 = load_checkpoint(dir, loaded);
  CHECK(meta2.config.model_dim == 24);
  CHECK(meta2.world.frames == 8);
  CHECK(meta2.tags.at("stage") == "unit");
  CHECK(loaded.step == 123);
  CHECK(loaded.count() == ps.count());
  for (const auto& name : ps.names())
    CHECK(numcore::bitwise_equal(ps.get(name), loaded.get(name)));
  std::filesystem::remove_all(dir);
}
