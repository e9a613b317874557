#pragma once
#include <cstdint>
#include <string>
#include <vector>

namespace vidswap::selftest {

struct CheckResult {
  std::string name;
  bool ok = false;
  double value = 0;  // measured error / statistic
  double bound = 0;  // threshold it was held against
  std::string note;
};

// Finite-difference verification of every differentiable op, double (<1e-6)
// and single (<1e-3) precision, three shapes each.
std::vector<CheckResult> grad_suite_double(std::uint64_t seed);
std::vector<CheckResult> grad_suite_single(std::uint64_t seed);

// numcore invariants: softmax row sums, rope norm preservation, kernel
// parallel-vs-reference agreement, determinism.
std::vector<CheckResult> numcore_invariants(std::uint64_t seed);

// toy world: codec round trip / isometry, embedder recovery, renderer
// determinism, oracle fixed point.
std::vector<CheckResult> toyworld_invariants(std::uint64_t seed);

// Pose-attention reductions and model-level identities.
std::vector<CheckResult> videodit_invariants(std::uint64_t seed);

// Full tiny-config model gradient check at double precision.
std::vector<CheckResult> model_grad_check(std::uint64_t seed);

// Guidance decomposition identities and sampler reductions.
std::vector<CheckResult> sampler_invariants(std::uint64_t seed);

// Flow matching + IRL reductions.
std::vector<CheckResult> flow_invariants(std::uint64_t seed);

// Dataset pipeline exactness (expression adaptation, feathering, manifests).
std::vector<CheckResult> syncid_invariants(std::uint64_t seed);

// Metric oracles (Frechet closed forms, variance conventions, estimator).
std::vector<CheckResult> metrics_invariants(std::uint64_t seed);

// Everything above, in order. Used by `vidswap selftest`.
std::vector<CheckResult> run_all(std::uint64_t seed);

// pretty-prints results; returns true when all passed
bool report(const std::vector<CheckResult>& results, bool verbose = true);

}  // namespace vidswap::selftest
