#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "spect/nn/aggregate.hpp"
#include "spect/nn/resnet3d.hpp"
#include "spect/objective.hpp"

using spect::Index;
using spect::Rng;
using spect::Shape;
using T = spect::Tensor<double>;
namespace nn = spect::nn;

namespace {

struct Case {
  std::vector<nn::Parameter<double>*> params;
  T* input = nullptr;
  std::function<T()> forward;            // full forward from current values
  std::function<T(const T&)> backward;   // gy -> gx, accumulating param grads
};

void run_case(Case cs, std::uint64_t seed, double h = 1e-4, double tol = 1e-4) {
  Rng proj_rng = Rng::derive(seed, "proj");
  T y0 = cs.forward();
  gradcheck::Projection proj(y0.shape(), proj_rng);
  auto loss = [&]() { return proj.loss(cs.forward()); };
  for (auto* p : cs.params) p->grad.set_zero();
  cs.forward();
  T gx = cs.backward(proj.grad());
  Rng pick = Rng::derive(seed, "pick");
  for (auto* p : cs.params) {
    T analytic = p->grad;
    INFO("parameter " << p->name);
    gradcheck::compare_fd(p->value, analytic, loss, pick, h, tol);
  }
  if (cs.input) {
    INFO("input gradient");
    gradcheck::compare_fd(*cs.input, gx, loss, pick, h, tol);
  }
}

std::vector<nn::Parameter<double>*> trainable(std::vector<nn::Parameter<double>*> ps) {
  std::vector<nn::Parameter<double>*> out;
  for (auto* p : ps)
    if (p->trainable) out.push_back(p);
  return out;
}

}  // namespace

TEST_CASE("conv2d gradients (same pad, fused relu)") {
  Rng rng = Rng::derive(11, "init");
  nn::Conv2dLayer<double> layer("c", 3, 4, 3, 1, 1, true, rng);
  Rng xr = Rng::derive(11, "x");
  T x = gradcheck::kink_safe_random({2, 3, 6, 7}, xr);
  std::vector<nn::Parameter<double>*> ps;
  layer.collect(ps);
  run_case({ps, &x, [&] { return layer.forward(T(x), 1); },
            [&](const T& gy) { return layer.backward(T(gy), 1); }},
           101);
}

TEST_CASE("conv2d gradients (stride 2)") {
  Rng rng = Rng::derive(12, "init");
  nn::Conv2dLayer<double> layer("c", 2, 3, 3, 2, 1, false, rng);
  Rng xr = Rng::derive(12, "x");
  T x = gradcheck::kink_safe_random({2, 2, 7, 7}, xr);
  std::vector<nn::Parameter<double>*> ps;
  layer.collect(ps);
  run_case({ps, &x, [&] { return layer.forward(T(x), 1); },
            [&](const T& gy) { return layer.backward(T(gy), 1); }},
           102);
}

TEST_CASE("conv3d gradients (temporal kernel, stride 2)") {
  Rng rng = Rng::derive(13, "init");
  nn::Conv3dGeom g{2, 3, 3, 1, 1, 2, 1, 1, 1, 0, 0};
  nn::Conv3dLayer<double> layer("c", g, false, rng);
  Rng xr = Rng::derive(13, "x");
  T x = gradcheck::kink_safe_random({2, 2, 5, 4, 4}, xr);
  std::vector<nn::Parameter<double>*> ps;
  layer.collect(ps);
  run_case({ps, &x, [&] { return layer.forward(T(x), 1); },
            [&](const T& gy) { return layer.backward(T(gy), 1); }},
           103);
}

TEST_CASE("conv3d gradients (spatial kernel, spatial stride)") {
  Rng rng = Rng::derive(14, "init");
  nn::Conv3dGeom g{2, 3, 1, 3, 3, 1, 2, 2, 0, 1, 1};
  nn::Conv3dLayer<double> layer("c", g, true, rng);
  Rng xr = Rng::derive(14, "x");
  T x = gradcheck::kink_safe_random({2, 2, 3, 6, 6}, xr);
  std::vector<nn::Parameter<double>*> ps;
  layer.collect(ps);
  run_case({ps, &x, [&] { return layer.forward(T(x), 1); },
            [&](const T& gy) { return layer.backward(T(gy), 1); }},
           104);
}

TEST_CASE("acs conv gradients") {
  Rng rng = Rng::derive(15, "init");
  nn::AcsConvLayer<double> layer("c", 2, 5, 3, true, rng);
  Rng xr = Rng::derive(15, "x");
  T x = gradcheck::kink_safe_random({2, 2, 4, 5, 6}, xr);
  std::vector<nn::Parameter<double>*> ps;
  layer.collect(ps);
  run_case({ps, &x, [&] { return layer.forward(T(x), 1); },
            [&](const T& gy) { return layer.backward(T(gy), 1); }},
           105);
}

TEST_CASE("max pool input gradients") {
  // Distinct lattice values: pooling-window gaps stay far beyond the FD step.
  auto lattice = [](const Shape& shape) {
    T t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<double>((i * 37) % 101) / 101.0 * 2.0 - 1.0;
    return t;
  };
  SUBCASE("rank 4, spatial kernel") {
    nn::MaxPoolLayer<double> pool(1, 2, 2);
    T x = lattice({2, 3, 6, 6});
    run_case({{}, &x, [&] { return pool.forward(T(x)); },
              [&](const T& gy) { return pool.backward(gy); }},
             106);
  }
  SUBCASE("rank 5, cubic kernel") {
    nn::MaxPoolLayer<double> pool(2, 2, 2);
    T x = lattice({1, 2, 4, 4, 4});
    run_case({{}, &x, [&] { return pool.forward(T(x)); },
              [&](const T& gy) { return pool.backward(gy); }},
             107);
  }
}

TEST_CASE("batchnorm gradients") {
  Rng xr = Rng::derive(16, "x");
  T x = gradcheck::kink_safe_random({4, 3, 5}, xr);
  SUBCASE("train mode (batch statistics)") {
    nn::BatchNorm<double> bn("bn", 3);
    std::vector<nn::Parameter<double>*> ps;
    bn.collect(ps);
    run_case({trainable(ps), &x, [&] { return bn.forward(T(x), true); },
              [&](const T& gy) { return bn.backward(gy); }},
             108);
  }
  SUBCASE("eval mode (running statistics)") {
    nn::BatchNorm<double> bn("bn", 3);
    std::vector<nn::Parameter<double>*> ps;
    bn.collect(ps);
    for (auto* p : ps) {
      if (p->name == "bn.running_mean") p->value.array() = 0.3;
      if (p->name == "bn.running_var") p->value.array() = 1.7;
    }
    run_case({trainable(ps), &x, [&] { return bn.forward(T(x), false); },
              [&](const T& gy) { return bn.backward(gy); }},
             109);
  }
}

TEST_CASE("linear gradients (fused relu)") {
  Rng rng = Rng::derive(17, "init");
  nn::LinearLayer<double> layer("fc", 5, 4, true, rng);
  Rng xr = Rng::derive(17, "x");
  T x = gradcheck::kink_safe_random({3, 5}, xr);
  std::vector<nn::Parameter<double>*> ps;
  layer.collect(ps);
  run_case({ps, &x, [&] { return layer.forward(T(x)); },
            [&](const T& gy) { return layer.backward(T(gy)); }},
           110);
}

TEST_CASE("mean aggregator gradients") {
  nn::MeanAggregator<double> agg;
  Rng xr = Rng::derive(18, "x");
  T x = gradcheck::kink_safe_random({6, 4, 2, 2}, xr);
  run_case({{}, &x, [&] { return agg.forward(T(x), 2, 1); },
            [&](const T& gy) { return agg.backward(gy, 1); }},
           111);
}

TEST_CASE("learned-pool aggregator gradients") {
  Rng rng = Rng::derive(19, "init");
  nn::ConvAggregator<double> agg(3, 2, rng);
  Rng xr = Rng::derive(19, "x");
  T x = gradcheck::kink_safe_random({6, 3, 2, 2}, xr);
  std::vector<nn::Parameter<double>*> ps;
  agg.collect(ps);
  run_case({ps, &x, [&] { return agg.forward(T(x), 2, 1); },
            [&](const T& gy) { return agg.backward(gy, 1); }},
           112);
}

TEST_CASE("index-embedding aggregator gradients") {
  for (bool pool_first : {true, false}) {
    CAPTURE(pool_first);
    Rng rng = Rng::derive(20, "init", pool_first);
    nn::IdxEmbAggregator<double> agg(3, 4, pool_first, rng);
    Rng xr = Rng::derive(20, "x", pool_first);
    T x = gradcheck::kink_safe_random({8, 3, 2, 2}, xr);
    std::vector<nn::Parameter<double>*> ps;
    agg.collect(ps);
    run_case({ps, &x, [&] { return agg.forward(T(x), 2, 1); },
              [&](const T& gy) { return agg.backward(gy, 1); }},
             113 + (pool_first ? 0 : 1));
  }
}

TEST_CASE("attention aggregator gradients") {
  SUBCASE("pooled input, 1x1 score") {
    Rng rng = Rng::derive(21, "init");
    nn::AttnAggregator<double> agg(3, 1, true, rng);
    Rng xr = Rng::derive(21, "x");
    T x = gradcheck::kink_safe_random({6, 3, 2, 2}, xr);
    std::vector<nn::Parameter<double>*> ps;
    agg.collect(ps);
    run_case({ps, &x, [&] { return agg.forward(T(x), 2, 1); },
              [&](const T& gy) { return agg.backward(gy, 1); }},
             115);
  }
  SUBCASE("spatial input, 2x2 score") {
    Rng rng = Rng::derive(22, "init");
    nn::AttnAggregator<double> agg(3, 2, false, rng);
    Rng xr = Rng::derive(22, "x");
    T x = gradcheck::kink_safe_random({6, 3, 2, 2}, xr);
    std::vector<nn::Parameter<double>*> ps;
    agg.collect(ps);
    run_case({ps, &x, [&] { return agg.forward(T(x), 2, 1); },
              [&](const T& gy) { return agg.backward(gy, 1); }},
             116);
  }
}

TEST_CASE("multihead attention aggregator gradients") {
  for (bool scaled : {false, true}) {
    CAPTURE(scaled);
    Rng rng = Rng::derive(23, "init", scaled);
    nn::MhAttnAggregator<double> agg(4, scaled, rng);
    Rng xr = Rng::derive(23, "x", scaled);
    T x = gradcheck::kink_safe_random({6, 4, 2, 2}, xr);
    std::vector<nn::Parameter<double>*> ps;
    agg.collect(ps);
    run_case({ps, &x, [&] { return agg.forward(T(x), 2, 1); },
              [&](const T& gy) { return agg.backward(gy, 1); }},
             117 + (scaled ? 1 : 0));
  }
}

TEST_CASE("classifier head gradients (with covariates)") {
  Rng rng = Rng::derive(24, "init");
  nn::ClassifierHead<double> head(5, 3, true, rng);
  Rng xr = Rng::derive(24, "x");
  T u = gradcheck::kink_safe_random({4, 5}, xr);
  T covs({4, 2});
  for (Index i = 0; i < covs.size(); ++i) covs[i] = 0.2 + 0.6 * xr.uniform();
  std::vector<nn::Parameter<double>*> ps;
  head.collect(ps);
  run_case({ps, &u, [&] { return head.forward(T(u), covs); },
            [&](const T& gy) { return head.backward(T(gy)); }},
           119);
}

TEST_CASE("residual block gradients") {
  struct Variant {
    nn::BlockConv kind;
    Index st, ss;
  };
  // downsampling exercises the 1x1x1 conv+BN shortcut
  std::vector<Variant> variants = {{nn::BlockConv::full, 2, 2},
                                   {nn::BlockConv::spatial, 1, 2},
                                   {nn::BlockConv::factored, 2, 2}};
  int idx = 0;
  for (const auto& v : variants) {
    CAPTURE(idx);
    Rng rng = Rng::derive(25, "init", static_cast<std::uint64_t>(idx));
    nn::ResBlock<double> block("rb", v.kind, 2, 3, v.st, v.ss, rng);
    Rng xr = Rng::derive(25, "x", static_cast<std::uint64_t>(idx));
    T x = gradcheck::kink_safe_random({2, 2, 4, 6, 6}, xr);
    std::vector<nn::Parameter<double>*> ps;
    block.collect(ps);
    run_case({trainable(ps), &x, [&] { return block.forward(T(x), true, 1); },
              [&](const T& gy) { return block.backward(T(gy), 1); }},
             120 + static_cast<std::uint64_t>(idx));
    ++idx;
  }
}

TEST_CASE("identity-shortcut residual block gradients") {
  Rng rng = Rng::derive(26, "init");
  nn::ResBlock<double> block("rb", nn::BlockConv::full, 3, 3, 1, 1, rng);
  Rng xr = Rng::derive(26, "x");
  T x = gradcheck::kink_safe_random({2, 3, 3, 4, 4}, xr);
  std::vector<nn::Parameter<double>*> ps;
  block.collect(ps);
  run_case({trainable(ps), &x, [&] { return block.forward(T(x), true, 1); },
            [&](const T& gy) { return block.backward(T(gy), 1); }},
           124);
}

TEST_CASE("factored stem gradients") {
  Rng rng = Rng::derive(27, "init");
  nn::ResnetStem<double> stem(nn::ResnetFamily::r2plus1d, 4, rng);
  Rng xr = Rng::derive(27, "x");
  T x = gradcheck::kink_safe_random({1, 3, 4, 8, 8}, xr);
  std::vector<nn::Parameter<double>*> ps;
  stem.collect(ps);
  run_case({trainable(ps), &x, [&] { return stem.forward(T(x), true, 1); },
            [&](const T& gy) { return stem.backward(gy, 1); }},
           125);
}

TEST_CASE("backbone block gradients") {
  SUBCASE("stacked 2d convs with pool") {
    Rng rng = Rng::derive(28, "init");
    nn::VggBlock<double> block("b", 2, 3, 2, true, rng);
    Rng xr = Rng::derive(28, "x");
    T x = gradcheck::kink_safe_random({2, 2, 4, 4}, xr);
    std::vector<nn::Parameter<double>*> ps;
    block.collect(ps);
    run_case({ps, &x, [&] { return block.forward(T(x), true, 1); },
              [&](const T& gy) { return block.backward(gy, 1); }},
             126);
  }
  SUBCASE("stacked acs convs with spatial pool") {
    Rng rng = Rng::derive(29, "init");
    nn::AcsVggBlock<double> block("b", 2, 4, 2, true, rng);
    Rng xr = Rng::derive(29, "x");
    T x = gradcheck::kink_safe_random({1, 2, 3, 4, 4}, xr);
    std::vector<nn::Parameter<double>*> ps;
    block.collect(ps);
    run_case({ps, &x, [&] { return block.forward(T(x), true, 1); },
              [&](const T& gy) { return block.backward(gy, 1); }},
             127);
  }
}

TEST_CASE("gradients flow under multiple workers identically") {
  // Same case as the strided conv2d check but with workers=3: gradients must
  // be bitwise equal to the single-worker run.
  Rng rng = Rng::derive(30, "init");
  nn::Conv2dLayer<double> a("c", 2, 3, 3, 2, 1, false, rng);
  Rng rng2 = Rng::derive(30, "init");
  nn::Conv2dLayer<double> b("c", 2, 3, 3, 2, 1, false, rng2);
  Rng xr = Rng::derive(30, "x");
  T x = gradcheck::kink_safe_random({18, 2, 7, 7}, xr);
  T gy({18, 3, 4, 4});
  for (Index i = 0; i < gy.size(); ++i) gy[i] = xr.uniform(-1.0, 1.0);

  T ya = a.forward(T(x), 1);
  T gxa = a.backward(T(gy), 1);
  T yb = b.forward(T(x), 3);
  T gxb = b.backward(T(gy), 3);
  CHECK((ya.array() == yb.array()).all());
  CHECK((gxa.array() == gxb.array()).all());
  std::vector<nn::Parameter<double>*> pa, pb;
  a.collect(pa);
  b.collect(pb);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK((pa[i]->grad.array() == pb[i]->grad.array()).all());
}
