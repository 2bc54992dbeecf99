#pragma once

// Finite-difference suite: every primitive op and each network stage on
// small random cases, then spot checks through the whole toy network.

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "gtn/dataset.hpp"
#include "gtn/grad_check.hpp"
#include "gtn/loss.hpp"
#include "gtn/model.hpp"

namespace gtn {

struct GradCase {
  std::string name;
  ScalarFn fn;
  std::vector<Tensor> inputs;
};

using GradCaseBuilder = std::function<GradCase(Rng&)>;

namespace detail {

// Scalar read-out of an arbitrary tensor: <out, R> with a fixed random R, so
// no gradient component can cancel by symmetry.
inline Tensor project(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor r = uniform_tensor(out.shape(), -1.0, 1.0, rng);
  return sum_all(mul(out, r));
}

inline Tensor param(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return uniform_tensor(std::move(s), lo, hi, rng, true);
}

inline GradCase unary(std::string name, Shape s, Rng& rng, std::function<Tensor(const Tensor&)> f) {
  const auto seed = rng.next();
  return {std::move(name), [f, seed](const std::vector<Tensor>& in) { return project(f(in[0]), seed); },
          {param(std::move(s), rng)}};
}

inline GradCase binary(std::string name, Shape a, Shape b, Rng& rng,
                       std::function<Tensor(const Tensor&, const Tensor&)> f) {
  const auto seed = rng.next();
  return {std::move(name), [f, seed](const std::vector<Tensor>& in) { return project(f(in[0], in[1]), seed); },
          {param(std::move(a), rng), param(std::move(b), rng)}};
}

// Input x followed by every tensor of `params`; fn sees the module through
// shared storage, so perturbing inputs[k>0] perturbs the module weights.
inline GradCase with_params(std::string name, Tensor x, const ParamList& params, Rng& rng,
                            std::function<Tensor(const Tensor&)> f) {
  const auto seed = rng.next();
  std::vector<Tensor> inputs{std::move(x)};
  for (const auto& t : params.tensors) inputs.push_back(t);
  return {std::move(name), [f, seed](const std::vector<Tensor>& in) { return project(f(in[0]), seed); },
          std::move(inputs)};
}

inline Tensor binary_mask(Shape s, Rng& rng) {
  std::vector<double> v(numel_of(s));
  for (double& x : v) x = rng.coin(0.4) ? 1.0 : 0.0;
  return Tensor::from(std::move(s), std::move(v));
}

}  // namespace detail

/// Primitive ops, named as they appear in the graph.
inline std::vector<GradCaseBuilder> primitive_cases() {
  using namespace detail;
  return {
      [](Rng& r) { return binary("add", {2, 3, 4}, {2, 3, 4}, r, add); },
      [](Rng& r) { return binary("sub", {2, 3, 4}, {2, 3, 4}, r, sub); },
      [](Rng& r) { return binary("mul", {2, 3, 4}, {2, 3, 4}, r, mul); },
      [](Rng& r) { return unary("scale", {3, 5}, r, [](const Tensor& x) { return scale(x, -1.7); }); },
      [](Rng& r) { return unary("relu", {4, 6}, r, relu); },
      [](Rng& r) { return unary("sigmoid", {4, 6}, r, [](const Tensor& x) { return sigmoid(scale(x, 3.0)); }); },
      [](Rng& r) { return unary("reshape", {2, 3, 4}, r, [](const Tensor& x) { return reshape(x, {6, 4}); }); },
      [](Rng& r) { return unary("permute", {2, 3, 4}, r, [](const Tensor& x) { return permute(x, {2, 0, 1}); }); },
      [](Rng& r) {
        return unary("repeat_to", {2, 1, 3, 1}, r, [](const Tensor& x) { return repeat_to(x, {2, 4, 3, 5}); });
      },
      [](Rng& r) {
        return binary("concat", {2, 3, 4}, {2, 2, 4}, r, [](const Tensor& a, const Tensor& b) { return concat({a, b}, 1); });
      },
      [](Rng& r) {
        return unary("reduce_sum", {2, 3, 4}, r, [](const Tensor& x) { return reduce(ReduceKind::sum, x, {0, 2}); });
      },
      [](Rng& r) {
        return unary("reduce_mean", {2, 3, 4}, r, [](const Tensor& x) { return reduce(ReduceKind::mean, x, {1}); });
      },
      [](Rng& r) {
        return unary("reduce_max", {2, 3, 4}, r, [](const Tensor& x) { return reduce(ReduceKind::max, x, {1, 2}); });
      },
      [](Rng& r) { return unary("softmax", {3, 5, 2}, r, [](const Tensor& x) { return softmax(scale(x, 2.0), 1); }); },
      [](Rng& r) {
        const auto seed = r.next();
        return GradCase{"layer_norm",
                        [seed](const std::vector<Tensor>& in) { return project(layer_norm(in[0], in[1], in[2]), seed); },
                        {param({3, 6}, r, -2, 2), param({6}, r), param({6}, r)}};
      },
      [](Rng& r) { return binary("matmul", {3, 4}, {4, 5}, r, matmul); },
      [](Rng& r) { return binary("bmm", {2, 3, 4}, {2, 4, 5}, r, bmm); },
      [](Rng& r) {
        const auto seed = r.next();
        return GradCase{"linear",
                        [seed](const std::vector<Tensor>& in) { return project(linear(in[0], in[1], in[2]), seed); },
                        {param({2, 3, 4}, r), param({4, 5}, r), param({5}, r)}};
      },
      [](Rng& r) {
        const auto seed = r.next();
        return GradCase{"conv2d",
                        [seed](const std::vector<Tensor>& in) { return project(conv2d(in[0], in[1], in[2], 1, 1), seed); },
                        {param({2, 3, 5, 5}, r), param({4, 3, 3, 3}, r), param({4}, r)}};
      },
      [](Rng& r) {
        const auto seed = r.next();
        return GradCase{"conv2d",
                        [seed](const std::vector<Tensor>& in) { return project(conv2d(in[0], in[1], Tensor{}, 2, 1), seed); },
                        {param({1, 2, 6, 6}, r), param({3, 2, 3, 3}, r)}};
      },
      [](Rng& r) {
        const auto seed = r.next();
        return GradCase{"conv2d",
                        [seed](const std::vector<Tensor>& in) { return project(conv2d(in[0], in[1], in[2], 1, 0), seed); },
                        {param({2, 4, 3, 3}, r), param({2, 4, 1, 1}, r), param({2}, r)}};
      },
      [](Rng& r) {
        const auto seed = r.next();
        return GradCase{"conv2d",
                        [seed](const std::vector<Tensor>& in) { return project(conv2d(in[0], in[1], in[2], 1, 3), seed); },
                        {param({1, 2, 5, 5}, r), param({1, 2, 7, 7}, r), param({1}, r)}};
      },
      [](Rng& r) {
        return unary("bilinear_up", {1, 2, 3, 3}, r,
                     [](const Tensor& x) { return resize(x, 8, 8, ResizeMode::bilinear_up); });
      },
      [](Rng& r) {
        return unary("avg_down", {1, 2, 8, 8}, r, [](const Tensor& x) { return resize(x, 4, 4, ResizeMode::avg_down); });
      },
      [](Rng& r) {
        const Tensor G = binary_mask({2, 1, 8, 8}, r);
        return GradCase{"ppa_loss",
                        [G](const std::vector<Tensor>& in) { return ppa_loss(sigmoid(in[0]), G, 3); },
                        {param({2, 1, 8, 8}, r, -3, 3)}};
      },
  };
}

/// Each network stage at miniature sizes, weights included as inputs.
inline std::vector<GradCaseBuilder> module_cases() {
  using namespace detail;
  return {
      [](Rng& r) {
        return binary("purify", {1, 3, 4, 4}, {1, 3, 4, 4}, r,
                      [](const Tensor& a, const Tensor& b) { return purify(a, b, 2); });
      },
      [](Rng& r) {
        auto p = std::make_shared<AttentionParams>(AttentionParams::make(4, 2, r));
        ParamList pl;
        p->collect("", pl);
        return with_params("mpm", param({2, 4, 5, 5}, r), pl, r,
                           [p](const Tensor& x) { return mpm_forward(x, scale(x, 0.5), *p); });
      },
      [](Rng& r) {
        auto p = std::make_shared<SumParams>(init_sum({2, 2, 2, 2, 2}, 2, r));
        ParamList pl;
        p->collect("", pl);
        auto f2 = param({1, 2, 8, 8}, r), f4 = param({1, 2, 2, 2}, r), f5 = param({1, 2, 1, 1}, r);
        return with_params("sum", param({1, 2, 4, 4}, r), pl, r, [p, f2, f4, f5](const Tensor& f3) {
          const auto h = sum_h(f3, f4, f5, *p);
          const auto m = sum_m(f2, f3, f4, *p);
          return concat({reshape(h.high, {8}), reshape(h.mid, {8}), reshape(h.low, {8}), reshape(m.high, {32}),
                         reshape(m.mid, {32}), reshape(m.low, {32})},
                        0);
        });
      },
      [](Rng& r) {
        auto p = std::make_shared<EncoderGroupParams>(init_encoder_group({2, 3, 8, 2, 2, 2}, r));
        return with_params("mte", param({2, 3, 2, 2}, r), p->parameters(), r,
                           [p](const Tensor& x) { return encode(x, *p); });
      },
      [](Rng& r) {
        auto p = std::make_shared<CiuParams>(init_ciu(2, r));
        ParamList pl;
        p->collect("", pl);
        auto hi = param({1, 2, 2, 2}, r), f1 = param({1, 2, 8, 8}, r);
        return with_params("ciu", param({1, 2, 4, 4}, r), pl, r,
                           [p, hi, f1](const Tensor& mid) { return integrate({hi, mid}, f1, *p, 1); });
      },
      [](Rng& r) {
        auto p = std::make_shared<HeadParams>(init_heads(2, r));
        ParamList pl;
        p->collect("", pl);
        return with_params("heads", param({1, 2, 4, 4}, r), pl, r, [p](const Tensor& x) {
          const auto s = predict_heads({x, scale(x, 0.5), scale(x, -1.0)}, *p, 8);
          return concat({s[0], s[1], s[2]}, 1);
        });
      },
  };
}

struct CaseResult {
  std::string name;
  std::uint64_t seed = 0;
  GradCheckReport report;
};

struct PipelineResult {
  std::uint64_t seed = 0;
  SpotCheckReport report;
};

struct GradSuiteConfig {
  std::size_t seeds = 20;
  std::uint64_t base_seed = 0;
  double op_eps = 1e-5;
  double pipeline_eps = 1e-4;
  double tol = 1e-4;
  // Through the whole network, central differences at step 1e-4 carry about
  // 5e-11 of rounding noise, so gradients below this are compared absolutely.
  double pipeline_floor = 1e-6;
  std::size_t pipeline_params = 50;
  std::size_t pipeline_side = 64;
};

struct GradSuiteReport {
  std::vector<CaseResult> cases;
  std::vector<PipelineResult> pipeline;
  double seconds = 0;

  bool passed() const {
    for (const auto& c : cases)
      if (!c.report.passed()) return false;
    for (const auto& p : pipeline)
      if (!p.report.passed()) return false;
    return true;
  }

  /// Name and relative error of the single worst check.
  std::pair<std::string, double> worst() const {
    std::pair<std::string, double> w{"", -1.0};
    for (const auto& c : cases)
      if (c.report.worst > w.second) w = {c.name + " (seed " + std::to_string(c.seed) + ")", c.report.worst};
    for (const auto& p : pipeline)
      if (const auto* s = p.report.worst_check(); s && s->rel_err > w.second)
        w = {"pipeline:" + s->name + "[" + std::to_string(s->index) + "] (seed " + std::to_string(p.seed) + ")",
             s->rel_err};
    return w;
  }
};

/// Full toy network at side S; spot-checks random weight coordinates of the
/// total loss for one seed.
inline PipelineResult pipeline_check(std::uint64_t seed, const GradSuiteConfig& cfg) {
  ModelConfig mc = ModelConfig::toy();
  mc.input_size = cfg.pipeline_side;
  mc.seed = seed;
  GroupTransNet net(mc);
  const SamplePair s = synth_sample(cfg.pipeline_side, derive_seed(seed, {0x6C}), "gc");
  const Tensor rgb = to_tensor(s.rgb), depth = to_tensor(s.depth), G = to_tensor(s.gt);
  ParamList params = net.parameters();
  params.zero_grad();
  std::uint64_t base_pattern = 0;
  {
    PatternScope ps;
    Tensor loss = total_loss(net.predict(rgb, depth), G, mc.ppa_window);
    base_pattern = ps.hash();
    backward(loss);
  }
  auto loss_fn = [&] { return total_loss(net.predict(rgb, depth), G, mc.ppa_window).item(); };
  Rng rng(derive_seed(seed, {0x5B07}));
  PipelineResult r;
  r.seed = seed;
  r.report = spot_check(loss_fn, params.names, params.tensors, base_pattern, cfg.pipeline_params, cfg.pipeline_eps,
                        cfg.tol, rng, cfg.pipeline_floor);
  params.zero_grad();
  return r;
}

inline GradSuiteReport run_grad_suite(const GradSuiteConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteReport rep;
  auto builders = primitive_cases();
  for (auto& b : module_cases()) builders.push_back(std::move(b));
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    const std::uint64_t seed = cfg.base_seed + s;
    for (std::size_t i = 0; i < builders.size(); ++i) {
      Rng rng(derive_seed(seed, {0xCA5E, i}));
      GradCase c = builders[i](rng);
      rep.cases.push_back({c.name, seed, grad_check(c.fn, c.inputs, cfg.op_eps, cfg.tol, rng.next())});
    }
    rep.pipeline.push_back(pipeline_check(seed, cfg));
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace gtn
