#pragma once
#include <cmath>
#include <map>
#include <memory>
#include <string>

#include "vidswap/numcore/optim.hpp"
#include "vidswap/numcore/random.hpp"
#include "vidswap/numcore/tape.hpp"
#include "vidswap/videodit/config.hpp"

namespace vidswap::videodit {

using numcore::ParamStore;
using numcore::Tape;
using numcore::Tensor;

// ---------------------------------------------------------------------------
// token <-> latent rearrangement (pure permutations, raster order
// (chunk, row, col); round-trips are exact)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> patchify(const Tensor<T>& x, int patch) {
  const Shape& s = x.shape();  // [C,h,w,ch]
  if (s.size() != 4) throw ValidationError("patchify expects [C,h,w,ch]");
  if (s[1] % patch != 0 || s[2] % patch != 0)
    throw ValidationError("spatial extents must be divisible by patch");
  const index_t C = s[0], h = s[1], w = s[2], ch = s[3];
  const index_t hp = h / patch, wp = w / patch;
  Tensor<T> tok({C * hp * wp, patch * patch * ch});
  index_t row = 0;
  for (index_t c = 0; c < C; ++c)
    for (index_t r = 0; r < hp; ++r)
      for (index_t q = 0; q < wp; ++q, ++row) {
        T* dst = tok.data() + row * patch * patch * ch;
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx)
            for (index_t k = 0; k < ch; ++k)
              *dst++ = x.at(c, r * patch + dy, q * patch + dx, k);
      }
  return tok;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tok, const LatentGeometry& g, index_t channels) {
  const index_t hp = g.hp(), wp = g.wp();
  if (tok.dim(0) != g.C * hp * wp || tok.dim(1) != g.patch * g.patch * channels)
    throw ValidationError("unpatchify token shape mismatch");
  Tensor<T> x({g.C, g.h, g.w, channels});
  index_t row = 0;
  for (index_t c = 0; c < g.C; ++c)
    for (index_t r = 0; r < hp; ++r)
      for (index_t q = 0; q < wp; ++q, ++row) {
        const T* src = tok.data() + row * g.patch * g.patch * channels;
        for (int dy = 0; dy < g.patch; ++dy)
          for (int dx = 0; dx < g.patch; ++dx)
            for (index_t k = 0; k < channels; ++k)
              x.at(c, r * g.patch + dy, q * g.patch + dx, k) = *src++;
      }
  return x;
}

// channel-concat of latent and context, [C,h,w,a]+[C,h,w,b] -> [C,h,w,a+b]
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[1] != sb[1] || sa[2] != sb[2])
    throw ValidationError("concat_channels shape mismatch");
  Tensor<T> out({sa[0], sa[1], sa[2], sa[3] + sb[3]});
  const index_t cells = sa[0] * sa[1] * sa[2];
  for (index_t i = 0; i < cells; ++i) {
    std::copy(a.data() + i * sa[3], a.data() + (i + 1) * sa[3], out.data() + i * (sa[3] + sb[3]));
    std::copy(b.data() + i * sb[3], b.data() + (i + 1) * sb[3],
              out.data() + i * (sa[3] + sb[3]) + sa[3]);
  }
  return out;
}

// rope triples for latent tokens in (chunk,row,col) raster order
inline std::shared_ptr<std::vector<std::array<int, 3>>> latent_rope_triples(
    const LatentGeometry& g, bool with_id_token) {
  auto idx = std::make_shared<std::vector<std::array<int, 3>>>();
  if (with_id_token) idx->push_back({-1, 0, 0});
  for (index_t c = 0; c < g.C; ++c)
    for (index_t r = 0; r < g.hp(); ++r)
      for (index_t q = 0; q < g.wp(); ++q)
        idx->push_back({static_cast<int>(c), static_cast<int>(r), static_cast<int>(q)});
  return idx;
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

template <typename T>
struct BoundModel {
  std::map<std::string, typename Tape<T>::Var> params;
  typename Tape<T>::Var out_tokens;  // [n_latent_tokens, patch^2 * c_lat]
};

template <typename T>
class DitModel {
 public:
  DitModel(DitConfig cfg, toyworld::WorldConfig world)
      : cfg_(cfg), world_(world), geom_(LatentGeometry::from(world, cfg.patch)) {
    cfg_.validate();
    const int dh = cfg_.model_dim / cfg_.heads;
    rot_dim_ = (dh / 6) * 6;
  }

  const DitConfig& config() const { return cfg_; }
  const toyworld::WorldConfig& world() const { return world_; }
  const LatentGeometry& geometry() const { return geom_; }

  struct ParamDef {
    std::string name;
    Shape shape;
    double init_std;  // 0 => zero init
  };

  std::vector<ParamDef> param_defs() const {
    const index_t D = cfg_.model_dim;
    const index_t in_dim = geom_.patch_in_dim(geom_.c_lat + cfg_.context_channels);
    const index_t out_dim = geom_.patch_in_dim(geom_.c_lat);
    const index_t F = cfg_.ffn_mult * D;
    const index_t G = cfg_.guider_hidden;
    std::vector<ParamDef> defs;
    auto lin = [&](const std::string& n, index_t a, index_t b, bool zero = false) {
      defs.push_back({n + ".w", {a, b}, zero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(a))});
      defs.push_back({n + ".b", {b}, 0.0});
    };
    lin("embed", in_dim, D);
    defs.push_back({"id.w", {4, D}, 0.0});  // zero-init: null and real id agree at step 0
    defs.push_back({"id.b", {D}, 0.0});
    defs.push_back({"id.null", {D}, 0.0});
    lin("time.fc", D, D);
    defs.push_back({"guider.c1.w", {G, world_.chunk_len, 3, 3},
                    1.0 / std::sqrt(9.0 * world_.chunk_len)});
    defs.push_back({"guider.c1.b", {G}, 0.0});
    defs.push_back({"guider.c2.w", {D, G, 3, 3}, 1.0 / std::sqrt(9.0 * static_cast<double>(G))});
    defs.push_back({"guider.c2.b", {D}, 0.0});
    for (int b = 0; b < cfg_.blocks; ++b) {
      const std::string p = "blk" + std::to_string(b) + ".";
      lin(p + "mod", D, 4 * D, /*zero=*/true);
      defs.push_back({p + "attn.wq", {D, D}, 1.0 / std::sqrt(static_cast<double>(D))});
      defs.push_back({p + "attn.wk", {D, D}, 1.0 / std::sqrt(static_cast<double>(D))});
      defs.push_back({p + "attn.wv", {D, D}, 1.0 / std::sqrt(static_cast<double>(D))});
      defs.push_back({p + "attn.wk_p", {D, D}, 0.02});  // pose adapter: small random
      defs.push_back({p + "attn.wv_p", {D, D}, 0.0});   // pose adapter: zero init
      lin(p + "attn.wo", D, D);
      lin(p + "ffn.fc1", D, F);
      lin(p + "ffn.fc2", F, D);
    }
    lin("out", D, out_dim, /*zero=*/true);
    return defs;
  }

  void init_params(ParamStore<T>& ps, std::uint64_t seed) const {
    Rng rng(derive_seed(seed, "model-init"));
    for (const auto& def : param_defs()) {
      if (def.init_std == 0.0)
        ps.create(def.name, Tensor<T>(def.shape));
      else
        ps.create(def.name, numcore::randn<T>(def.shape, rng, def.init_std));
    }
  }

  std::map<std::string, typename Tape<T>::Var> bind(Tape<T>& tape, const ParamStore<T>& ps,
                                                    bool trainable) const {
    std::map<std::string, typename Tape<T>::Var> vars;
    for (const auto& name : ps.names()) vars[name] = tape.input(ps.get(name), trainable);
    return vars;
  }

  // Pose-Attention: softmax(Q K^T / sqrt(d)) V + lambda * softmax(Q K'^T / sqrt(d)) V'.
  // Base projections wq/wk/wv feed the self branch; wk_p/wv_p align the pose
  // tokens. Q and both key sets receive rope rotations with shared triples.
  typename Tape<T>::Var pose_attention(
      Tape<T>& tape, typename Tape<T>::Var x, typename Tape<T>::Var pose,
      typename Tape<T>::Var wq, typename Tape<T>::Var wk, typename Tape<T>::Var wv,
      typename Tape<T>::Var wk_p, typename Tape<T>::Var wv_p,
      const std::shared_ptr<std::vector<std::array<int, 3>>>& x_triples,
      const std::shared_ptr<std::vector<std::array<int, 3>>>& pose_triples, T lambda) const {
    if (tape.shape(x)[1] != cfg_.model_dim || tape.shape(pose)[1] != cfg_.model_dim)
      throw ValidationError("pose_attention: token dim mismatch");
    if (static_cast<index_t>(x_triples->size()) != tape.shape(x)[0] ||
        static_cast<index_t>(pose_triples->size()) != tape.shape(pose)[0])
      throw ValidationError("pose_attention: token count mismatch");
    const int H = cfg_.heads;
    const index_t dh = cfg_.model_dim / H;
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    auto qh = rope_heads(tape, tape.split_heads(tape.matmul(x, wq), H), x_triples);
    auto kh = rope_heads(tape, tape.split_heads(tape.matmul(x, wk), H), x_triples);
    auto vh = tape.split_heads(tape.matmul(x, wv), H);
    auto scores = tape.softmax_lastdim(tape.scale(tape.bmm(qh, kh, true), inv_sqrt_d));
    auto base = tape.merge_heads(tape.bmm(scores, vh));

    if (lambda == T(0)) return base;
    auto kp = rope_heads(tape, tape.split_heads(tape.matmul(pose, wk_p), H), pose_triples);
    auto vp = tape.split_heads(tape.matmul(pose, wv_p), H);
    auto pscores = tape.softmax_lastdim(tape.scale(tape.bmm(qh, kp, true), inv_sqrt_d));
    auto pbranch = tape.merge_heads(tape.bmm(pscores, vp));
    (void)dh;
    return tape.add(base, tape.scale(pbranch, lambda));
  }

  // pose guider: two stride-2 convs from pixel maps to the latent token grid;
  // tokens come out co-located with latent tokens (same rope triples)
  typename Tape<T>::Var pose_guider(Tape<T>& tape,
                                    const std::map<std::string, typename Tape<T>::Var>& pv,
                                    const Tensor<T>& pose_maps) const {
    const Shape& s = pose_maps.shape();
    if (s.size() != 3 || s[0] != world_.frames || s[1] != world_.height || s[2] != world_.width)
      throw ValidationError("pose_guider: pose map resolution mismatch");
    // H -> hp needs exactly two stride-2 halvings
    if (world_.height / 4 != geom_.hp() || world_.width / 4 != geom_.wp())
      throw ValidationError("pose_guider: grid mismatch between pixels and tokens");
    typename Tape<T>::Var all;
    for (index_t c = 0; c < geom_.C; ++c) {
      Tensor<T> stack({static_cast<index_t>(world_.chunk_len), s[1], s[2]});
      std::copy(pose_maps.data() + c * world_.chunk_len * s[1] * s[2],
                pose_maps.data() + (c + 1) * world_.chunk_len * s[1] * s[2], stack.data());
      auto h1 = tape.silu(tape.conv2d(tape.constant(stack), pv.at("guider.c1.w"),
                                      pv.at("guider.c1.b"), 2, 1));
      auto h2 = tape.conv2d(h1, pv.at("guider.c2.w"), pv.at("guider.c2.b"), 2, 1);
      // [D, hp, wp] -> [hp*wp, D]
      auto tok = tape.transpose2d(
          tape.reshape(h2, {cfg_.model_dim, geom_.hp() * geom_.wp()}));
      all = (c == 0) ? tok : tape.concat(all, tok, 0);
    }
    return all;
  }

  // Full forward pass. t_chunks carries one flow-time per latent chunk
  // (uniform training and sampling pass the same value for every chunk).
  BoundModel<T> forward(Tape<T>& tape, const ParamStore<T>& ps, const Tensor<T>& z_t,
                        const std::vector<T>& t_chunks, const ConditionBundle<T>& cond,
                        bool trainable) const {
    cond.check(geom_, world_, cfg_.context_channels);
    const Shape& zs = z_t.shape();
    if (zs.size() != 4 || zs[0] != geom_.C || zs[1] != geom_.h || zs[2] != geom_.w ||
        zs[3] != geom_.c_lat)
      throw ValidationError("z_t latent shape mismatch: " + numcore::shape_str(zs));
    if (static_cast<index_t>(t_chunks.size()) != geom_.C)
      throw ValidationError("need one t per latent chunk");
    for (T t : t_chunks)
      if (t < T(0) || t > T(1)) throw ValidationError("t must lie in [0,1]");

    BoundModel<T> bm;
    bm.params = bind(tape, ps, trainable);
    auto& pv = bm.params;
    const index_t D = cfg_.model_dim;
    const index_t n_lat = geom_.n_latent_tokens();

    // tokens from channel-concat of latent and context
    Tensor<T> tok_in = patchify(concat_channels(z_t, cond.context), cfg_.patch);
    auto x0 = tape.add_rowvec(tape.matmul(tape.constant(tok_in), pv.at("embed.w")),
                              pv.at("embed.b"));

    // identity token: learned projection, or the learned null vector
    typename Tape<T>::Var id_tok;
    if (cond.id.has_value()) {
      Tensor<T> idv({1, 4});
      for (int i = 0; i < 4; ++i) idv[i] = (*cond.id)[i];
      id_tok = tape.add_rowvec(tape.matmul(tape.constant(idv), pv.at("id.w")), pv.at("id.b"));
    } else {
      id_tok = tape.reshape(pv.at("id.null"), {1, D});
    }
    auto x = tape.concat(id_tok, x0, 0);  // [1+n_lat, D]

    // timestep pathway: sinusoidal embedding per chunk -> shared fc -> silu
    Tensor<T> temb = sinusoidal_embedding(t_chunks);
    auto h = tape.silu(
        tape.add_rowvec(tape.matmul(tape.constant(temb), pv.at("time.fc.w")), pv.at("time.fc.b")));
    // id token is modulated by the mean over chunks
    Tensor<T> avg({1, geom_.C});
    for (index_t c = 0; c < geom_.C; ++c) avg[c] = T(1) / static_cast<T>(geom_.C);
    auto hfull = tape.concat(tape.matmul(tape.constant(avg), h), h, 0);  // [1+C, D]

    auto groups = std::make_shared<std::vector<int>>();
    groups->push_back(0);
    for (index_t i = 0; i < n_lat; ++i)
      groups->push_back(static_cast<int>(i / geom_.tokens_per_chunk()) + 1);

    auto pose_tokens = pose_guider(tape, pv, cond.pose_maps);
    auto x_triples = latent_rope_triples(geom_, /*with_id_token=*/true);
    auto pose_triples = latent_rope_triples(geom_, /*with_id_token=*/false);

    const T lambda = static_cast<T>(cfg_.lambda_pose);
    for (int b = 0; b < cfg_.blocks; ++b) {
      const std::string p = "blk" + std::to_string(b) + ".";
      auto mod = tape.add_rowvec(tape.matmul(hfull, pv.at(p + "mod.w")), pv.at(p + "mod.b"));
      auto sa = tape.expand_rows(tape.slice(mod, 1, 0 * D, D), groups);
      auto ba = tape.expand_rows(tape.slice(mod, 1, 1 * D, D), groups);
      auto sf = tape.expand_rows(tape.slice(mod, 1, 2 * D, D), groups);
      auto bf = tape.expand_rows(tape.slice(mod, 1, 3 * D, D), groups);

      auto a_in = tape.add(tape.mul(tape.layernorm_lastdim(x), tape.add_scalar(sa, T(1))), ba);
      auto attn = pose_attention(tape, a_in, pose_tokens, pv.at(p + "attn.wq"),
                                 pv.at(p + "attn.wk"), pv.at(p + "attn.wv"),
                                 pv.at(p + "attn.wk_p"), pv.at(p + "attn.wv_p"), x_triples,
                                 pose_triples, lambda);
      x = tape.add(x, tape.add_rowvec(tape.matmul(attn, pv.at(p + "attn.wo.w")),
                                      pv.at(p + "attn.wo.b")));

      auto f_in = tape.add(tape.mul(tape.layernorm_lastdim(x), tape.add_scalar(sf, T(1))), bf);
      auto f1 = tape.gelu(
          tape.add_rowvec(tape.matmul(f_in, pv.at(p + "ffn.fc1.w")), pv.at(p + "ffn.fc1.b")));
      auto f2 = tape.add_rowvec(tape.matmul(f1, pv.at(p + "ffn.fc2.w")), pv.at(p + "ffn.fc2.b"));
      x = tape.add(x, f2);
    }

    auto x_lat = tape.slice(x, 0, cfg_.id_tokens, n_lat);  // drop the id token
    bm.out_tokens = tape.add_rowvec(
        tape.matmul(tape.layernorm_lastdim(x_lat), pv.at("out.w")), pv.at("out.b"));
    return bm;
  }

  // convenience scalar-t overload
  BoundModel<T> forward(Tape<T>& tape, const ParamStore<T>& ps, const Tensor<T>& z_t, T t,
                        const ConditionBundle<T>& cond, bool trainable) const {
    return forward(tape, ps, z_t, std::vector<T>(geom_.C, t), cond, trainable);
  }

  // no-grad forward returning the velocity as a latent-shaped tensor
  Tensor<T> predict(const ParamStore<T>& ps, const Tensor<T>& z_t, T t,
                    const ConditionBundle<T>& cond) const {
    Tape<T> tape(/*grad_enabled=*/false);
    auto bm = forward(tape, ps, z_t, t, cond, false);
    return unpatchify(tape.value(bm.out_tokens), geom_, geom_.c_lat);
  }

  Tensor<T> sinusoidal_embedding(const std::vector<T>& t_chunks) const {
    const index_t D = cfg_.model_dim;
    const index_t half = D / 2;
    Tensor<T> e({static_cast<index_t>(t_chunks.size()), D});
    for (std::size_t c = 0; c < t_chunks.size(); ++c)
      for (index_t i = 0; i < half; ++i) {
        const double f = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
        const double s = 1000.0 * static_cast<double>(t_chunks[c]) * f;
        e[c * D + 2 * i] = static_cast<T>(std::sin(s));
        e[c * D + 2 * i + 1] = static_cast<T>(std::cos(s));
      }
    return e;
  }

 private:
  DitConfig cfg_;
  toyworld::WorldConfig world_;
  LatentGeometry geom_;
  int rot_dim_;

  // rope applied per head on the 6-divisible leading sub-dim
  typename Tape<T>::Var rope_heads(
      Tape<T>& tape, typename Tape<T>::Var xh,
      const std::shared_ptr<std::vector<std::array<int, 3>>>& triples) const {
    if (rot_dim_ == 0) return xh;
    const Shape s = tape.shape(xh);  // [H, n, dh]
    const index_t H = s[0], n = s[1], dh = s[2];
    auto rep = std::make_shared<std::vector<std::array<int, 3>>>();
    rep->reserve(H * triples->size());
    for (index_t h = 0; h < H; ++h) rep->insert(rep->end(), triples->begin(), triples->end());
    auto flat = tape.reshape(xh, {H * n, dh});
    typename Tape<T>::Var rotated;
    if (rot_dim_ == dh) {
      rotated = tape.rope_rotate(flat, rep);
    } else {
      auto left = tape.rope_rotate(tape.slice(flat, 1, 0, rot_dim_), rep);
      rotated = tape.concat(left, tape.slice(flat, 1, rot_dim_, dh - rot_dim_), 1);
    }
    return tape.reshape(rotated, {H, n, dh});
  }
};

}  // namespace vidswap::videodit
