#include "vidswap/selftest.hpp"

#include <cstdio>
#include <functional>
#include <memory>

#include "vidswap/numcore/gradcheck.hpp"
#include "vidswap/numcore/random.hpp"
#include "vidswap/numcore/tape.hpp"

namespace vidswap::selftest {

using namespace vidswap::numcore;

namespace {

template <typename T>
using Var = typename Tape<T>::Var;

// fixed random projection to a scalar so every output coordinate carries an
// O(1) gradient; keeps single-precision finite differences well conditioned
template <typename T>
Var<T> project(Tape<T>& tape, Var<T> y, Rng& rng) {
  Tensor<T> w = rand_uniform<T>(tape.shape(y), rng, 0.5, 1.5);
  return tape.sum_all(tape.mul(y, tape.constant(w)));
}

template <typename T>
struct OpCheck {
  std::string name;
  std::function<typename Tape<T>::Var(Tape<T>&, typename Tape<T>::Var, Rng&)> f;
  std::vector<Shape> shapes;
  bool positive_input = false;
};

// float_safe picks auxiliary constants that keep input gradients away from
// zero so the 1e-3 single-precision bound has headroom.
template <typename T>
std::vector<OpCheck<T>> op_checks(bool float_safe) {
  std::vector<OpCheck<T>> checks;
  auto add_dist = [&](std::string name,
                      std::function<typename Tape<T>::Var(Tape<T>&, typename Tape<T>::Var, Rng&)> f,
                      std::vector<Shape> shapes, bool positive_input) {
    checks.push_back({std::move(name), std::move(f), std::move(shapes), positive_input});
  };
  auto add = [&](std::string name,
                 std::function<typename Tape<T>::Var(Tape<T>&, typename Tape<T>::Var, Rng&)> f,
                 std::vector<Shape> shapes) {
    add_dist(std::move(name), std::move(f), std::move(shapes), false);
  };

  std::vector<Shape> mats = {{2, 3}, {3, 4}, {1, 5}};
  std::vector<Shape> cubes = {{2, 3, 4}, {1, 2, 2}, {3, 2, 5}};

  add("add", [](Tape<T>& t, Var<T> v, Rng& r) {
    Tensor<T> b = randn<T>(t.shape(v), r);
    return project(t, t.add(v, t.constant(b)), r);
  }, mats);
  add("sub_lhs", [](Tape<T>& t, Var<T> v, Rng& r) {
    Tensor<T> b = randn<T>(t.shape(v), r);
    return project(t, t.sub(v, t.constant(b)), r);
  }, mats);
  add("sub_rhs", [](Tape<T>& t, Var<T> v, Rng& r) {
    Tensor<T> a = randn<T>(t.shape(v), r);
    return project(t, t.sub(t.constant(a), v), r);
  }, mats);
  add("mul", [](Tape<T>& t, Var<T> v, Rng& r) {
    Tensor<T> b = rand_uniform<T>(t.shape(v), r, 0.5, 2.0);
    return project(t, t.mul(v, t.constant(b)), r);
  }, mats);
  add("scale", [](Tape<T>& t, Var<T> v, Rng& r) {
    return project(t, t.scale(v, static_cast<T>(1.7)), r);
  }, mats);
  add("add_scalar", [](Tape<T>& t, Var<T> v, Rng& r) {
    return project(t, t.add_scalar(v, static_cast<T>(-0.3)), r);
  }, mats);
  add("matmul_lhs", [](Tape<T>& t, Var<T> v, Rng& r) {
    const Shape& s = t.shape(v);
    Tensor<T> b = randn<T>({s[1], s[1] + 1}, r);
    return project(t, t.matmul(v, t.constant(b)), r);
  }, mats);
  add("matmul_rhs", [](Tape<T>& t, Var<T> v, Rng& r) {
    const Shape& s = t.shape(v);
    Tensor<T> a = randn<T>({s[0] + 2, s[0]}, r);
    return project(t, t.matmul(t.constant(a), v), r);
  }, mats);
  add("bmm", [](Tape<T>& t, Var<T> v, Rng& r) {
    const Shape& s = t.shape(v);
    Tensor<T> b = randn<T>({s[0], s[2], s[2] + 1}, r);
    return project(t, t.bmm(v, t.constant(b)), r);
  }, cubes);
  add("bmm_nt_rhs", [](Tape<T>& t, Var<T> v, Rng& r) {
    const Shape& s = t.shape(v);
    Tensor<T> a = randn<T>({s[0], s[1] + 1, s[2]}, r);
    return project(t, t.bmm(t.constant(a), v, /*transpose_b=*/true), r);
  }, cubes);
  add("split_merge_heads", [](Tape<T>& t, Var<T> v, Rng& r) {
    return project(t, t.merge_heads(t.split_heads(v, 2)), r);
  }, std::vector<Shape>{{3, 4}, {2, 6}, {5, 2}});
  add("softmax", [](Tape<T>& t, Var<T> v, Rng& r) {
    return project(t, t.softmax_lastdim(v), r);
  }, mats);
  add("layernorm", [](Tape<T>& t, Var<T> v, Rng& r) {
    return project(t, t.layernorm_lastdim(v), r);
  }, std::vector<Shape>{{2, 4}, {3, 5}, {1, 8}});
  add("layernorm_affine", [](Tape<T>& t, Var<T> v, Rng& r) {
    const index_t d = t.shape(v).back();
    Tensor<T> gain = rand_uniform<T>({d}, r, 0.5, 1.5);
    Tensor<T> bias = randn<T>({d}, r);
    return project(t, t.layernorm_affine(v, t.constant(gain), t.constant(bias)), r);
  }, std::vector<Shape>{{2, 4}, {3, 5}, {1, 8}});
  if (float_safe) {
    // positive inputs keep the activation derivative >= 0.7
    add_dist("gelu", [](Tape<T>& t, Var<T> v, Rng&) { return t.sum_all(t.gelu(v)); }, mats, true);
    add_dist("silu", [](Tape<T>& t, Var<T> v, Rng&) { return t.sum_all(t.silu(v)); }, mats, true);
  } else {
    add("gelu", [](Tape<T>& t, Var<T> v, Rng& r) { return project(t, t.gelu(v), r); }, mats);
    add("silu", [](Tape<T>& t, Var<T> v, Rng& r) { return project(t, t.silu(v), r); }, mats);
  }
  add("rope", [float_safe](Tape<T>& t, Var<T> v, Rng& r) {
    const index_t n = t.shape(v)[0];
    const index_t d = t.shape(v)[1];
    auto idx = std::make_shared<std::vector<std::array<int, 3>>>();
    const int top = float_safe ? 2 : 8;  // small angles keep pair gradients bounded below
    for (index_t i = 0; i < n; ++i)
      idx->push_back({static_cast<int>(r.uniform_int(top)), static_cast<int>(r.uniform_int(top)),
                      static_cast<int>(r.uniform_int(top))});
    auto y = t.rope_rotate(v, idx);
    if (!float_safe) return project(t, y, r);
    Tensor<T> w({n, d});
    for (index_t i = 0; i < n * d; ++i) w[i] = (i % 2 == 0) ? T(1) : T(3);
    return t.sum_all(t.mul(y, t.constant(w)));
  }, std::vector<Shape>{{2, 6}, {3, 12}, {4, 6}});
  add("conv2d_x", [float_safe](Tape<T>& t, Var<T> v, Rng& r) {
    const Shape& s = t.shape(v);
    const int stride = float_safe ? 1 : 2;
    Tensor<T> w = float_safe ? rand_uniform<T>({3, s[0], 3, 3}, r, 0.3, 0.7)
                             : randn<T>({3, s[0], 3, 3}, r, 0.5);
    Tensor<T> b = randn<T>({3}, r);
    return project(t, t.conv2d(v, t.constant(w), t.constant(b), stride, 1), r);
  }, std::vector<Shape>{{2, 6, 6}, {1, 5, 7}, {3, 4, 4}});
  add("conv2d_w", [float_safe](Tape<T>& t, Var<T> v, Rng& r) {
    const Shape& s = t.shape(v);  // v is the weight [cout,cin,kh,kw]
    Tensor<T> x = float_safe ? rand_uniform<T>({s[1], 6, 6}, r, 0.5, 1.5)
                             : randn<T>({s[1], 6, 6}, r);
    Tensor<T> b = randn<T>({s[0]}, r);
    return project(t, t.conv2d(t.constant(x), v, t.constant(b), float_safe ? 1 : 2, 1), r);
  }, std::vector<Shape>{{2, 2, 3, 3}, {1, 3, 3, 3}, {4, 1, 3, 3}});
  add("conv2d_b", [](Tape<T>& t, Var<T> v, Rng& r) {
    const index_t cout = t.shape(v)[0];
    Tensor<T> x = randn<T>({2, 5, 5}, r);
    Tensor<T> w = randn<T>({cout, 2, 3, 3}, r, 0.5);
    return project(t, t.conv2d(t.constant(x), t.constant(w), v, 1, 1), r);
  }, std::vector<Shape>{{2}, {3}, {1}});
  add("add_rowvec_x", [](Tape<T>& t, Var<T> v, Rng& r) {
    Tensor<T> b = randn<T>({t.shape(v).back()}, r);
    return project(t, t.add_rowvec(v, t.constant(b)), r);
  }, mats);
  add("add_rowvec_v", [](Tape<T>& t, Var<T> v, Rng& r) {
    Tensor<T> x = randn<T>({4, t.shape(v)[0]}, r);
    return project(t, t.add_rowvec(t.constant(x), v), r);
  }, std::vector<Shape>{{3}, {4}, {5}});
  add("mul_rowvec_x", [](Tape<T>& t, Var<T> v, Rng& r) {
    Tensor<T> b = rand_uniform<T>({t.shape(v).back()}, r, 0.5, 1.5);
    return project(t, t.mul_rowvec(v, t.constant(b)), r);
  }, mats);
  add("mul_rowvec_v", [float_safe](Tape<T>& t, Var<T> v, Rng& r) {
    Tensor<T> x = float_safe ? rand_uniform<T>({4, t.shape(v)[0]}, r, 0.5, 1.5)
                             : randn<T>({4, t.shape(v)[0]}, r);
    return project(t, t.mul_rowvec(t.constant(x), v), r);
  }, std::vector<Shape>{{3}, {4}, {5}});
  add("concat_a", [](Tape<T>& t, Var<T> v, Rng& r) {
    Tensor<T> b = randn<T>(t.shape(v), r);
    return project(t, t.concat(v, t.constant(b), 0), r);
  }, mats);
  add("concat_b_axis1", [](Tape<T>& t, Var<T> v, Rng& r) {
    Tensor<T> a = randn<T>(t.shape(v), r);
    return project(t, t.concat(t.constant(a), v, 1), r);
  }, mats);
  add("slice", [](Tape<T>& t, Var<T> v, Rng& r) {
    return project(t, t.slice(v, 1, 1, t.shape(v)[1] - 1), r);
  }, std::vector<Shape>{{2, 3}, {3, 4}, {2, 5}});
  add("reshape", [](Tape<T>& t, Var<T> v, Rng& r) {
    return project(t, t.reshape(v, {t.shape(v)[1], t.shape(v)[0]}), r);
  }, mats);
  add("transpose2d", [](Tape<T>& t, Var<T> v, Rng& r) {
    return project(t, t.transpose2d(v), r);
  }, mats);
  add("expand_rows", [](Tape<T>& t, Var<T> v, Rng& r) {
    auto groups = std::make_shared<std::vector<int>>();
    const int g = static_cast<int>(t.shape(v)[0]);
    for (int i = 0; i < 7; ++i) groups->push_back(static_cast<int>(r.uniform_int(g)));
    return project(t, t.expand_rows(v, groups), r);
  }, mats);
  add("sum_all", [](Tape<T>& t, Var<T> v, Rng&) { return t.sum_all(v); }, mats);
  add("mean_all", [](Tape<T>& t, Var<T> v, Rng&) { return t.mean_all(v); }, mats);
  add("mean_lastdim", [](Tape<T>& t, Var<T> v, Rng& r) {
    return project(t, t.mean_lastdim(v), r);
  }, mats);
  add("var_lastdim", [](Tape<T>& t, Var<T> v, Rng& r) {
    return project(t, t.var_lastdim(v), r);
  }, mats);
  add("mse", [](Tape<T>& t, Var<T> v, Rng& r) {
    Tensor<T> b = randn<T>(t.shape(v), r);
    return t.mse(v, t.constant(b));
  }, mats);

  return checks;
}

}  // namespace

// Double precision: analytic gradients against same-precision central
// differences via grad_check, bound 1e-6.
std::vector<CheckResult> grad_suite_double(std::uint64_t seed) {
  std::vector<CheckResult> out;
  for (auto& c : op_checks<double>(/*float_safe=*/false)) {
    CheckResult r;
    r.name = "grad.f64." + c.name;
    r.bound = 1e-6;
    try {
      double worst = 0;
      for (std::size_t si = 0; si < c.shapes.size(); ++si) {
        Rng data_rng(derive_seed(seed, "gradcheck-data", si));
        Tensor<double> x = c.positive_input
                               ? rand_uniform<double>(c.shapes[si], data_rng, 0.3, 1.8)
                               : randn<double>(c.shapes[si], data_rng);
        auto wrapped = [&](Tape<double>& tape, Tape<double>::Var v) {
          Rng aux_rng(derive_seed(seed, "gradcheck-aux", si));
          return c.f(tape, v, aux_rng);
        };
        worst = std::max(worst, grad_check<double>(wrapped, x, 3e-5));
      }
      r.value = worst;
      r.ok = r.value < r.bound;
    } catch (const std::exception& e) {
      r.ok = false;
      r.note = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

// Single precision: the single-precision analytic gradient is measured
// against central differences of the double twin of the same computation.
// Differencing float forward values directly would bury small-gradient
// coordinates under ~1e-4 of rounding noise and measure nothing.
std::vector<CheckResult> grad_suite_single(std::uint64_t seed) {
  std::vector<CheckResult> out;
  auto checks_f = op_checks<float>(/*float_safe=*/true);
  auto checks_d = op_checks<double>(/*float_safe=*/true);
  for (std::size_t ci = 0; ci < checks_f.size(); ++ci) {
    auto& cf = checks_f[ci];
    auto& cd = checks_d[ci];
    CheckResult r;
    r.name = "grad.f32." + cf.name;
    r.bound = 1e-3;
    try {
      double worst = 0;
      for (std::size_t si = 0; si < cf.shapes.size(); ++si) {
        Rng data_rng(derive_seed(seed, "gradcheck-data", si));
        Tensor<float> xf = cf.positive_input
                               ? rand_uniform<float>(cf.shapes[si], data_rng, 0.3, 1.8)
                               : randn<float>(cf.shapes[si], data_rng);
        Tensor<double> xd = xf.cast<double>();

        Tape<float> tf;
        auto vf = tf.input(xf, true);
        Rng aux_f(derive_seed(seed, "gradcheck-aux", si));
        auto loss_f = cf.f(tf, vf, aux_f);
        tf.backward(loss_f);
        const Tensor<float>& gf = tf.grad(vf);

        auto eval_d = [&](const Tensor<double>& xp) {
          Tape<double> td(false);
          auto vd = td.input(xp, false);
          Rng aux_d(derive_seed(seed, "gradcheck-aux", si));
          auto l = cd.f(td, vd, aux_d);
          return td.value(l)[0];
        };
        const double eps = 3e-5;
        Tensor<double> xp = xd;
        for (index_t i = 0; i < xd.numel(); ++i) {
          const double orig = xp[i];
          xp[i] = orig + eps;
          const double fp = eval_d(xp);
          xp[i] = orig - eps;
          const double fm = eval_d(xp);
          xp[i] = orig;
          const double central = (fp - fm) / (2 * eps);
          const double rel =
              std::abs(static_cast<double>(gf[i]) - central) / (std::abs(central) + 1e-8);
          worst = std::max(worst, rel);
        }
      }
      r.value = worst;
      r.ok = r.value < r.bound;
    } catch (const std::exception& e) {
      r.ok = false;
      r.note = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<CheckResult> numcore_invariants(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(derive_seed(seed, "numcore-inv"));

  {  // softmax rows sum to 1 +- 1e-6
    CheckResult r{"numcore.softmax_row_sums", false, 0, 1e-6, ""};
    double worst = 0;
    for (int rep = 0; rep < 20; ++rep) {
      Tensor<double> x = randn<double>({4, 1 + rep % 7}, rng, 3.0);
      Tape<double> t(false);
      auto y = t.softmax_lastdim(t.constant(x));
      const auto& v = t.value(y);
      const index_t d = v.shape()[1];
      for (index_t row = 0; row < v.shape()[0]; ++row) {
        double s = 0;
        for (index_t j = 0; j < d; ++j) s += v[row * d + j];
        worst = std::max(worst, std::abs(s - 1.0));
      }
    }
    r.value = worst;
    r.ok = worst <= 1e-6;
    out.push_back(r);
  }

  {  // rope preserves token norms +- 1e-6
    CheckResult r{"numcore.rope_norm_preserved", false, 0, 1e-6, ""};
    double worst = 0;
    for (int rep = 0; rep < 20; ++rep) {
      Tensor<double> x = randn<double>({5, 12}, rng);
      auto idx = std::make_shared<std::vector<std::array<int, 3>>>();
      for (int i = 0; i < 5; ++i)
        idx->push_back({static_cast<int>(rng.uniform_int(6)), static_cast<int>(rng.uniform_int(9)),
                        static_cast<int>(rng.uniform_int(9))});
      Tape<double> t(false);
      auto y = t.rope_rotate(t.constant(x), idx);
      const auto& v = t.value(y);
      for (int i = 0; i < 5; ++i) {
        double n0 = 0, n1 = 0;
        for (int j = 0; j < 12; ++j) {
          n0 += x[i * 12 + j] * x[i * 12 + j];
          n1 += v[i * 12 + j] * v[i * 12 + j];
        }
        worst = std::max(worst, std::abs(std::sqrt(n0) - std::sqrt(n1)));
      }
    }
    r.value = worst;
    r.ok = worst <= 1e-6;
    out.push_back(r);
  }

  {  // optimized gemm agrees with the naive serial reference (the vectorized
     // paths may reassociate/contract, so this is a tolerance check)
    CheckResult r{"numcore.gemm_matches_reference", false, 0, 1e-4, ""};
    double worst = 0;
    for (int rep = 0; rep < 10; ++rep) {
      const index_t m = 1 + rng.uniform_int(40), k = 1 + rng.uniform_int(40),
                    n = 1 + rng.uniform_int(40);
      Tensor<float> a = randn<float>({m, k}, rng);
      Tensor<float> bnn = randn<float>({k, n}, rng);
      Tensor<float> bnt = randn<float>({n, k}, rng);
      Tensor<float> atn = randn<float>({k, m}, rng);
      Tensor<float> c1({m, n}), c2({m, n});
      kern::gemm_nn(a.data(), bnn.data(), c1.data(), m, k, n);
      kern::ref::gemm_nn(a.data(), bnn.data(), c2.data(), m, k, n);
      worst = std::max(worst, max_abs_diff(c1, c2));
      kern::gemm_nt(a.data(), bnt.data(), c1.data(), m, k, n);
      kern::ref::gemm_nt(a.data(), bnt.data(), c2.data(), m, k, n);
      worst = std::max(worst, max_abs_diff(c1, c2));
      kern::gemm_tn(atn.data(), bnn.data(), c1.data(), m, k, n);
      kern::ref::gemm_tn(atn.data(), bnn.data(), c2.data(), m, k, n);
      worst = std::max(worst, max_abs_diff(c1, c2));
    }
    r.value = worst;
    r.ok = worst <= 1e-4;
    out.push_back(r);
  }

  {  // results are bitwise independent of the jobs setting
    CheckResult r{"numcore.jobs_invariance_bitwise", false, 0, 0, ""};
    Tensor<float> a = randn<float>({33, 17}, rng);
    Tensor<float> b = randn<float>({17, 29}, rng);
    Tensor<float> c1({33, 29}), c4({33, 29});
    const int saved = kern::jobs();
    kern::set_jobs(1);
    kern::gemm_nn(a.data(), b.data(), c1.data(), 33, 17, 29);
    kern::set_jobs(4);
    kern::gemm_nn(a.data(), b.data(), c4.data(), 33, 17, 29);
    kern::set_jobs(saved);
    r.ok = bitwise_equal(c1, c4);
    out.push_back(r);
  }

  {  // conv matches gather-form reference within round-off
    CheckResult r{"numcore.conv_matches_reference", false, 0, 1e-10, ""};
    double worst = 0;
    for (int rep = 0; rep < 5; ++rep) {
      Tensor<double> x = randn<double>({3, 8, 8}, rng);
      Tensor<double> w = randn<double>({4, 3, 3, 3}, rng);
      Tensor<double> b = randn<double>({4}, rng);
      const index_t ho = kern::conv_out(8, 3, 2, 1), wo = kern::conv_out(8, 3, 2, 1);
      Tensor<double> y1({4, ho, wo}), y2({4, ho, wo});
      kern::conv2d(x.data(), w.data(), b.data(), y1.data(), 3, 8, 8, 4, 3, 3, 2, 1);
      kern::ref::conv2d(x.data(), w.data(), b.data(), y2.data(), 3, 8, 8, 4, 3, 3, 2, 1);
      worst = std::max(worst, max_abs_diff(y1, y2));
    }
    r.value = worst;
    r.ok = worst <= 1e-10;
    out.push_back(r);
  }

  {  // ops are bitwise deterministic across repeated evaluation
    CheckResult r{"numcore.determinism", false, 0, 0, ""};
    auto run_once = [&](std::uint64_t s) {
      Rng local(s);
      Tensor<float> a = randn<float>({7, 9}, local);
      Tensor<float> b = randn<float>({9, 5}, local);
      Tape<float> t(false);
      auto y = t.softmax_lastdim(t.matmul(t.constant(a), t.constant(b)));
      return t.value(y);
    };
    r.ok = bitwise_equal(run_once(42), run_once(42));
    out.push_back(r);
  }

  return out;
}

bool report(const std::vector<CheckResult>& results, bool verbose) {
  bool all_ok = true;
  for (const auto& r : results) {
    all_ok = all_ok && r.ok;
    if (verbose || !r.ok)
      std::printf("%-48s %s  (value %.3e, bound %.3e)%s%s\n", r.name.c_str(),
                  r.ok ? "PASS" : "FAIL", r.value, r.bound, r.note.empty() ? "" : "  ",
                  r.note.c_str());
  }
  return all_ok;
}

}  // namespace vidswap::selftest
