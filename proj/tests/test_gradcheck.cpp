#include <gtest/gtest.h>

#include <set>

#include "mfnet/gradcheck.hpp"
#include "mfnet/ops.hpp"

using namespace mfnet;

namespace {

// out[i] = x[i + 1], zero past the end. `buggy` scatters the gradient to the
// wrong neighbour, a sign slip of the kind a shift backward could make.
Tensor next_element(const Tensor& x, bool buggy) {
  Tensor out = Tensor::zeros(x.shape(), DType::F64);
  auto s = x.data<double>();
  auto o = out.data<double>();
  for (std::size_t i = 0; i + 1 < o.size(); ++i) o[i] = s[i + 1];
  record(out, "next_element", {x}, [x, buggy](const Tensor& y) {
    auto g = y.grad<double>();
    auto gx = x.grad_accumulator<double>();
    for (std::size_t i = 0; i + 1 < g.size(); ++i) {
      if (!buggy) gx[i + 1] += g[i];
      else if (i > 0) gx[i - 1] += g[i];
    }
  });
  return out;
}

Tensor leaf(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::normal(std::move(s), 0, 1, rng, DType::F64);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST(Gradcheck, AcceptsCorrectBackward) {
  const Tensor x = leaf({3, 7}, 1);
  EXPECT_LT(gradient_error([](const auto& in) { return next_element(in[0], false); }, {x}, 4), 1e-8);
}

TEST(Gradcheck, CatchesWrongBackward) {
  const Tensor x = leaf({3, 7}, 1);
  EXPECT_GT(gradient_error([](const auto& in) { return next_element(in[0], true); }, {x}, 4), 0.5);
}

TEST(Gradcheck, CatchesMissingInputGradient) {
  const Tensor a = leaf({4}, 2), b = leaf({4}, 3);
  // Gradient flows to a only: b's numeric gradient is nonzero, its backprop is zero.
  const auto f = [](const std::vector<Tensor>& in) {
    Tensor out = mul(in[0], in[1].detach());
    Tensor extra = Tensor::zeros({4}, DType::F64);
    auto o = extra.data<double>();
    auto bv = in[1].data<double>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = bv[i];
    return add(out, extra);
  };
  EXPECT_GT(gradient_error(f, {a, b}, 0), 0.5);
}

TEST(Gradcheck, ProbesLargeTensorsPartially) {
  const Tensor x = leaf({40, 40}, 5);
  GradcheckOptions opt;
  opt.max_elements = 16;
  EXPECT_LT(gradient_error([](const auto& in) { return mul(in[0], in[0]); }, {x}, 1, opt), 1e-6);
}

TEST(Gradcheck, LeavesInputsUnchanged) {
  const Tensor x = leaf({2, 3, 5, 5}, 6);
  const auto before = x.to_vector();
  gradient_error([](const auto& in) { return relu(in[0]); }, {x}, 2);
  EXPECT_EQ(x.to_vector(), before);
}

TEST(GradcheckSuite, PassesAndIsReproducible) {
  GradcheckSuiteOptions opt;
  opt.seeds = 2;
  opt.graph_seeds = 1;
  opt.base_seed = 3;
  const auto a = run_gradcheck_suite(opt);
  const auto b = run_gradcheck_suite(opt);
  ASSERT_EQ(a.size(), b.size());
  std::set<std::string> names;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i].passed()) << a[i].op << " error " << a[i].worst_error;
    EXPECT_EQ(a[i].op, b[i].op);
    EXPECT_EQ(a[i].worst_error, b[i].worst_error) << a[i].op;
    EXPECT_GT(a[i].cases, 0) << a[i].op;
    names.insert(a[i].op);
    EXPECT_EQ(a[i].op.find(','), std::string::npos) << "op names appear in CSV output";
  }
  EXPECT_EQ(names.size(), a.size());
  for (const char* must : {"shift", "motion_filter", "motion_block_sum", "motion_block_concat", "mfnet_k2_sum", "mfnet_k2_concat"}) {
    bool found = false;
    for (const auto& n : names) found |= n.find(must) == 0;
    EXPECT_TRUE(found) << must;
  }
}
