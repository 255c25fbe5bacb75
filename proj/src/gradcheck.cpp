#include "mfnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mfnet/backbone.hpp"
#include "mfnet/error.hpp"
#include "mfnet/motion.hpp"
#include "mfnet/ops.hpp"
#include "mfnet/tsn.hpp"

namespace mfnet {

namespace {

double weighted_sum(const Tensor& out, const std::vector<double>& w) {
  const auto v = out.to_vector();
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * w[i];
  return s;
}

std::vector<std::int64_t> probe_coordinates(std::int64_t numel, int max_elements, Rng& rng) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(numel));
  std::iota(idx.begin(), idx.end(), 0);
  if (numel <= max_elements) return idx;
  for (int i = 0; i < max_elements; ++i)
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(rng.uniform_int(i, numel - 1))]);
  idx.resize(static_cast<std::size_t>(max_elements));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

double gradient_error(const GradFn& f, const std::vector<Tensor>& inputs, std::uint64_t seed,
                      const GradcheckOptions& options) {
  for (const auto& t : inputs)
    if (t.dtype() != DType::F64 || !t.requires_grad() || !t.is_leaf())
      throw UsageError("gradient_error needs float64 leaf inputs that require grad");
  Rng rng(seed);
  std::vector<double> w;
  {
    NoGradGuard no_grad;
    const Tensor probe = f(inputs);
    w = Tensor::normal(probe.shape(), 0.0, 1.0, rng, DType::F64).to_vector();
  }
  const Tensor weights = Tensor::from_values(Shape{static_cast<std::int64_t>(w.size())}, w, DType::F64);

  for (auto t : inputs) t.clear_grad();
  {
    const Tensor out = f(inputs);
    backward(sum(mul(reshape(out, {out.numel()}), weights)));
  }

  const auto objective = [&] {
    NoGradGuard no_grad;
    return weighted_sum(f(inputs), w);
  };

  double worst = 0.0;
  for (auto t : inputs) {
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad<double>().begin(), t.grad<double>().end())
                     : std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0);
    auto data = t.data<double>();
    double max_diff = 0.0, max_n = 0.0, max_a = 0.0;
    for (std::int64_t i : probe_coordinates(t.numel(), options.max_elements, rng)) {
      const auto k = static_cast<std::size_t>(i);
      const double original = data[k];
      data[k] = original + options.step;
      const double plus = objective();
      data[k] = original - options.step;
      const double minus = objective();
      data[k] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[k]));
      max_n = std::max(max_n, std::abs(numeric));
      max_a = std::max(max_a, std::abs(analytic[k]));
    }
    worst = std::max(worst, max_diff / std::max({max_n, max_a, 1e-8}));
    t.clear_grad();
  }
  return worst;
}

namespace {

struct Case {
  GradFn f;
  std::vector<Tensor> inputs;
  /// Keeps modules alive for the lifetime of the case.
  std::shared_ptr<void> owner;
};

Tensor leaf(Shape shape, Rng& rng) {
  Tensor t = Tensor::normal(std::move(shape), 0.0, 1.0, rng, DType::F64);
  t.set_requires_grad(true);
  return t;
}

// Values at least `gap` away from zero, so ReLU kinks are out of reach of the FD step.
Tensor leaf_off_zero(Shape shape, double gap, Rng& rng) {
  Tensor t = leaf(std::move(shape), rng);
  for (auto& v : t.data<double>()) v = (v < 0 ? -1.0 : 1.0) * (gap + std::abs(v));
  return t;
}

// Distinct values spaced 0.05 apart in random order, so max-pool winners are stable.
Tensor leaf_distinct(Shape shape, Rng& rng) {
  Tensor t = leaf(std::move(shape), rng);
  auto data = t.data<double>();
  std::vector<double> values(data.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = -1.0 + 0.05 * static_cast<double>(i);
  for (std::size_t i = values.size(); i > 1; --i)
    std::swap(values[i - 1], values[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  std::copy(values.begin(), values.end(), data.begin());
  return t;
}

void jitter_parameters(ParamRegistry& registry, Rng& rng) {
  for (const auto& p : registry.params()) {
    Tensor t = p.tensor;
    for (auto& v : t.data<double>()) v += rng.normal(0.0, 0.2);
  }
}

std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParamRegistry& registry) {
  for (const auto& p : registry.params()) inputs.push_back(p.tensor);
  return inputs;
}

Case conv_case(Rng& rng, Shape x, Shape w, bool bias, Conv2dOptions opt) {
  std::vector<Tensor> in{leaf(x, rng), leaf(w, rng)};
  if (bias) in.push_back(leaf({w[0]}, rng));
  return {[opt](const std::vector<Tensor>& v) { return conv2d(v[0], v[1], v.size() > 2 ? v[2] : Tensor(), opt); }, in, nullptr};
}

Case bn_case(Rng& rng, bool training) {
  Tensor var = Tensor::uniform({3}, 0.5, 2.0, rng, DType::F64);
  Tensor mean = Tensor::normal({3}, 0.0, 1.0, rng, DType::F64);
  return {[var, mean, training](const std::vector<Tensor>& v) {
            RunningStats stats{mean.clone(), var.clone()};
            return batch_norm2d(v[0], v[1], v[2], stats, {training});
          },
          {leaf({2, 3, 3, 3}, rng), leaf({3}, rng), leaf({3}, rng)},
          nullptr};
}

Case shift_case(Rng& rng, Displacement d) {
  return {[d](const std::vector<Tensor>& v) { return shift(v[0], d); }, {leaf({2, 2, 4, 4}, rng)}, nullptr};
}

Case motion_block_case(Rng& rng, FusionVariant variant, std::uint64_t seed) {
  auto registry = std::make_shared<ParamRegistry>();
  LayerContext ctx{registry.get(), seed, DType::F64};
  auto block = std::make_shared<MotionBlock>(ctx, "motion", MotionBlockSpec{variant, 2, DirectionSet::standard(), 4});
  jitter_parameters(*registry, rng);
  auto owner = std::make_shared<std::pair<std::shared_ptr<ParamRegistry>, std::shared_ptr<MotionBlock>>>(registry, block);
  return {[block](const std::vector<Tensor>& v) { return block->forward_snippets(v[0], 2, true); },
          with_params({leaf({4, 4, 2, 2}, rng)}, *registry), owner};
}

ModelConfig toy_graph_config(FusionVariant variant) {
  ModelConfig c;
  c.input_size = 32;
  c.stem_channels = 4;
  c.stages = {{4, 1, false}, {8, 1, true}};
  c.num_classes = 6;
  c.motion.variant = variant;
  c.motion.stages = {1, 2, 3};
  c.motion.reduction_factor = 2;
  return c;
}

Case model_case(Rng& rng, FusionVariant variant, std::uint64_t seed) {
  auto model = std::make_shared<Model>(build_model(toy_graph_config(variant), seed, DType::F64));
  jitter_parameters(model->registry(), rng);
  std::vector<int> labels{static_cast<int>(rng.uniform_int(0, 5)), static_cast<int>(rng.uniform_int(0, 5))};
  const std::uint64_t dropout_seed = rng.next();
  return {[model, labels, dropout_seed](const std::vector<Tensor>& v) {
            Rng dropout_rng(dropout_seed);
            return softmax_cross_entropy(consensus(model->forward_snippets(v[0], true, dropout_rng)), labels);
          },
          with_params({leaf({2, 2, 3, 32, 32}, rng)}, model->registry()), model};
}

using CaseMaker = std::function<Case(Rng&, std::uint64_t)>;

std::vector<std::pair<std::string, CaseMaker>> op_cases() {
  std::vector<std::pair<std::string, CaseMaker>> c;
  c.emplace_back("conv2d_3x3_s1_p1", [](Rng& r, std::uint64_t) { return conv_case(r, {2, 2, 4, 4}, {3, 2, 3, 3}, true, {1, 1}); });
  c.emplace_back("conv2d_3x3_s2_p1", [](Rng& r, std::uint64_t) { return conv_case(r, {1, 2, 5, 5}, {2, 2, 3, 3}, true, {2, 1}); });
  c.emplace_back("conv2d_1x1", [](Rng& r, std::uint64_t) { return conv_case(r, {2, 3, 3, 3}, {4, 3, 1, 1}, false, {1, 0}); });
  c.emplace_back("conv2d_1x1_s2", [](Rng& r, std::uint64_t) { return conv_case(r, {2, 2, 4, 4}, {3, 2, 1, 1}, false, {2, 0}); });
  c.emplace_back("conv2d_7x7_s2_p3", [](Rng& r, std::uint64_t) { return conv_case(r, {1, 1, 7, 7}, {2, 1, 7, 7}, false, {2, 3}); });
  c.emplace_back("batch_norm2d_train", [](Rng& r, std::uint64_t) { return bn_case(r, true); });
  c.emplace_back("batch_norm2d_eval", [](Rng& r, std::uint64_t) { return bn_case(r, false); });
  c.emplace_back("relu", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) { return relu(v[0]); }, {leaf_off_zero({2, 3, 3, 3}, 0.05, r)}, nullptr};
  });
  c.emplace_back("max_pool2d", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) { return max_pool2d(v[0], 3, 2, 1); }, {leaf_distinct({1, 2, 5, 5}, r)}, nullptr};
  });
  c.emplace_back("global_avg_pool", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) { return global_avg_pool(v[0]); }, {leaf({2, 3, 3, 3}, r)}, nullptr};
  });
  c.emplace_back("linear", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) { return linear(v[0], v[1], v[2]); },
                {leaf({4, 5}, r), leaf({3, 5}, r), leaf({3}, r)}, nullptr};
  });
  c.emplace_back("dropout", [](Rng& r, std::uint64_t) {
    const std::uint64_t mask_seed = r.next();
    return Case{[mask_seed](const std::vector<Tensor>& v) {
                  Rng mask(mask_seed);
                  return dropout(v[0], 0.5, true, mask);
                },
                {leaf({4, 6}, r)}, nullptr};
  });
  c.emplace_back("concat_channels", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) { return concat_channels({v[0], v[1]}); },
                {leaf({2, 2, 3, 3}, r), leaf({2, 1, 3, 3}, r)}, nullptr};
  });
  c.emplace_back("add", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) { return add(v[0], v[1]); }, {leaf({2, 3, 3}, r), leaf({2, 3, 3}, r)}, nullptr};
  });
  c.emplace_back("sub", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) { return sub(v[0], v[1]); }, {leaf({2, 3, 3}, r), leaf({2, 3, 3}, r)}, nullptr};
  });
  c.emplace_back("mul", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) { return mul(v[0], v[1]); }, {leaf({2, 3, 3}, r), leaf({2, 3, 3}, r)}, nullptr};
  });
  c.emplace_back("scale", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) { return scale(v[0], -0.7); }, {leaf({2, 3, 3}, r)}, nullptr};
  });
  c.emplace_back("sum", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) { return sum(v[0]); }, {leaf({2, 3, 3}, r)}, nullptr};
  });
  c.emplace_back("reshape", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) { return mul(reshape(v[0], {6, 4}), v[1]); }, {leaf({2, 3, 4}, r), leaf({6, 4}, r)}, nullptr};
  });
  c.emplace_back("mean_dim", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) { return mean_dim(v[0], 1); }, {leaf({2, 3, 4}, r)}, nullptr};
  });
  c.emplace_back("gather_rows", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) {
                  const std::vector<std::int64_t> idx{0, 2, 3};
                  return gather_rows(v[0], idx);
                },
                {leaf({4, 2, 2, 2}, r)}, nullptr};
  });
  c.emplace_back("scatter_rows", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) {
                  const std::vector<std::int64_t> idx{0, 2, 3};
                  return scatter_rows(v[0], idx, 5);
                },
                {leaf({3, 2, 2, 2}, r)}, nullptr};
  });
  c.emplace_back("softmax_cross_entropy", [](Rng& r, std::uint64_t) {
    std::vector<int> labels(4);
    for (auto& l : labels) l = static_cast<int>(r.uniform_int(0, 5));
    return Case{[labels](const std::vector<Tensor>& v) { return softmax_cross_entropy(v[0], labels); }, {leaf({4, 6}, r)}, nullptr};
  });
  const DirectionSet standard = DirectionSet::standard();
  for (const auto& d : standard.dirs()) {
    const std::string name = "shift(" + std::to_string(d.dx()) + ":" + std::to_string(d.dy()) + ")";
    c.emplace_back(name, [d](Rng& r, std::uint64_t) { return shift_case(r, d); });
  }
  c.emplace_back("motion_filter", [](Rng& r, std::uint64_t) {
    return Case{[](const std::vector<Tensor>& v) { return motion_filter(v[0], v[1], DirectionSet::standard()); },
                {leaf({1, 2, 4, 4}, r), leaf({1, 2, 4, 4}, r)}, nullptr};
  });
  c.emplace_back("motion_block_sum", [](Rng& r, std::uint64_t s) { return motion_block_case(r, FusionVariant::Sum, s); });
  c.emplace_back("motion_block_concat", [](Rng& r, std::uint64_t s) { return motion_block_case(r, FusionVariant::Concat, s); });
  return c;
}

}  // namespace

std::vector<GradcheckReport> run_gradcheck_suite(const GradcheckSuiteOptions& options) {
  std::vector<GradcheckReport> reports;
  const auto run = [&](const std::string& name, const CaseMaker& make, int seeds, double tolerance) {
    GradcheckReport report{name, 0.0, 0, 0, tolerance};
    for (int s = 0; s < seeds; ++s) {
      const std::uint64_t seed = derive_seed(options.base_seed, {fnv1a64(name), static_cast<std::uint64_t>(s)});
      Rng rng(seed);
      const Case c = make(rng, seed);
      const double err = gradient_error(c.f, c.inputs, seed);
      if (err > report.worst_error || report.cases == 0) {
        report.worst_error = err;
        report.worst_seed = seed;
      }
      ++report.cases;
    }
    reports.push_back(report);
  };
  for (const auto& [name, make] : op_cases()) run(name, make, options.seeds, options.op_tolerance);
  run("mfnet_k2_sum", [](Rng& r, std::uint64_t s) { return model_case(r, FusionVariant::Sum, s); }, options.graph_seeds,
      options.graph_tolerance);
  run("mfnet_k2_concat", [](Rng& r, std::uint64_t s) { return model_case(r, FusionVariant::Concat, s); },
      options.graph_seeds, options.graph_tolerance);
  return reports;
}

}  // namespace mfnet
