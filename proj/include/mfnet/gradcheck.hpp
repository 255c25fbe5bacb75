#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mfnet/tensor.hpp"

namespace mfnet {

/// Builds the checked graph from its inputs. Must be deterministic.
using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradcheckOptions {
  double step = 1e-5;
  /// At most this many coordinates per input tensor are probed (chosen at random beyond that).
  int max_elements = 64;
};

/// Worst per-tensor error between backprop and central differences of
/// L = sum(w * f(inputs)) with fixed random w drawn from `seed`. For each input
/// the error is max|a - n| / max(max|n|, max|a|, 1e-8) over the probed
/// coordinates. Inputs are perturbed in place and restored; they must be
/// float64 leaves that require grad.
double gradient_error(const GradFn& f, const std::vector<Tensor>& inputs, std::uint64_t seed,
                      const GradcheckOptions& options = {});

struct GradcheckReport {
  std::string op;
  double worst_error = 0;
  std::uint64_t worst_seed = 0;
  int cases = 0;
  double tolerance = 0;
  bool passed() const { return worst_error <= tolerance; }
};

struct GradcheckSuiteOptions {
  int seeds = 20;
  /// Seeds used for the full-network checks (they are slower).
  int graph_seeds = 5;
  std::uint64_t base_seed = 0;
  double op_tolerance = 1e-4;
  double graph_tolerance = 1e-3;
};

/// Every differentiable op, the motion blocks, and a full toy network with K=2
/// for both fusion variants. One report per entry, in a fixed order.
std::vector<GradcheckReport> run_gradcheck_suite(const GradcheckSuiteOptions& options);

}  // namespace mfnet
