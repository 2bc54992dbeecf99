// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//   acceptance [criterion ...]   runs only the named criteria

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gtn/gtn.hpp"
#include "oracles.hpp"

using namespace gtn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Collects failed checks; the criterion passes when none were recorded.
struct Check {
  std::vector<std::string> failures;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void near(double got, double want, double tol, const std::string& what) {
    if (!(std::abs(got - want) <= tol)) {
      std::ostringstream s;
      s.precision(17);
      s << what << ": got " << got << " want " << want;
      failures.push_back(s.str());
    }
  }
};

Tensor rand_t(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  return uniform_tensor(std::move(s), lo, hi, rng, false);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

std::vector<SamplePair> synth_set(std::size_t n, std::uint64_t seed, std::size_t side = 64) {
  std::vector<SamplePair> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_sample(side, derive_seed(seed, {i}), "s" + std::to_string(i)));
  return out;
}

void gradient_integrity(Check& c) {
  GradSuiteConfig cfg;
  cfg.seeds = 20;
  cfg.tol = 1e-4;
  const auto rep = run_grad_suite(cfg);
  for (const auto& k : rep.cases) c.expect(k.report.passed(), k.name + " seed " + std::to_string(k.seed));
  for (const auto& p : rep.pipeline) c.expect(p.report.passed(), "pipeline seed " + std::to_string(p.seed));
  c.expect(rep.pipeline.size() >= 20, "fewer than 20 pipeline seeds");
  c.expect(rep.seconds < 600, "suite took " + std::to_string(rep.seconds) + " s");
  const auto [name, err] = rep.worst();
  c.detail << rep.cases.size() << " op/module checks, " << rep.pipeline.size() << " pipeline seeds, worst " << err
           << " at " << name << ", " << rep.seconds << " s";
}

void shape_contract(Check& c) {
  NoGradGuard ng;
  const auto t0 = Clock::now();
  const GroupTransNet net(ModelConfig::full());
  const auto t = net.forward(rand_t({1, 3, 256, 256}, 1, 0, 1), rand_t({1, 1, 256, 256}, 2, 0, 1));
  for (const Tensor* f : {&t.sum_h.high, &t.sum_h.mid, &t.sum_h.low})
    c.expect(f->shape() == Shape{1, 64, 16, 16}, "SUM_H output shape");
  for (const Tensor* f : {&t.sum_m.high, &t.sum_m.mid, &t.sum_m.low})
    c.expect(f->shape() == Shape{1, 64, 32, 32}, "SUM_M output shape");
  for (std::size_t i = 0; i < kLevels; ++i) c.expect(t.transitioned[i].dim(1) == 64, "transitioned channels level " + std::to_string(i));
  for (const auto& m : t.maps) {
    c.expect(m.shape() == Shape{1, 1, 256, 256}, "saliency map shape");
    bool inside = true;
    for (double v : m.data()) inside = inside && v > 0.0 && v < 1.0;
    c.expect(inside, "saliency map value outside (0,1)");
  }
  c.detail << "S=256 forward " << since(t0) << " s";
}

void weight_sharing(Check& c) {
  NoGradGuard ng;
  GroupTransNet net(ModelConfig::toy());
  for (const auto* g : {&net.mte_h, &net.mte_m})
    c.expect(g->parameters().count() == encoder_param_count(g->cfg), "group parameter count");
  const GroupTransNet full(ModelConfig::full());
  for (const auto* g : {&full.mte_h, &full.mte_m})
    c.expect(g->parameters().count() == encoder_param_count(g->cfg), "full-profile group parameter count");

  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto xh = rand_t({1, 8, 4, 4}, 10 + s), xm = rand_t({1, 8, 8, 8}, 20 + s);
    const auto oh = encode_group({xh, xh, xh}, net.mte_h), om = encode_group({xm, xm, xm}, net.mte_m);
    c.expect(bit_equal(oh.high, oh.mid) && bit_equal(oh.mid, oh.low), "MTE_H slots differ");
    c.expect(bit_equal(om.high, om.mid) && bit_equal(om.mid, om.low), "MTE_M slots differ");
  }

  const auto rgb = rand_t({1, 3, 64, 64}, 1, 0, 1), depth = rand_t({1, 1, 64, 64}, 2, 0, 1);
  const auto before = net.forward(rgb, depth);
  ParamList h;
  net.mte_h.collect("", h);
  for (auto& t : h.tensors)
    for (double& v : t.mutable_data()) v += 0.05;
  const auto after = net.forward(rgb, depth);
  c.expect(bit_equal(before.enc_m.high, after.enc_m.high) && bit_equal(before.enc_m.mid, after.enc_m.mid) &&
               bit_equal(before.enc_m.low, after.enc_m.low),
           "MTE_M outputs moved when MTE_H weights changed");
  c.expect(!bit_equal(before.enc_h.high, after.enc_h.high), "MTE_H perturbation had no effect");
  c.detail << "encoder params toy " << encoder_param_count(net.mte_h.cfg) << ", full "
           << encoder_param_count(full.mte_h.cfg);
}

void mpm_algebra(Check& c) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto a = rand_t({1, 4, 5, 5}, 2 * s, -3, 3), b = rand_t({1, 4, 5, 5}, 2 * s + 1, -3, 3);
    c.expect(bit_equal(purify(a, b), purify(b, a)), "asymmetric on pair " + std::to_string(s));
  }
  c.expect(purify(Tensor::from({1}, {1.0}), Tensor::from({1}, {1.0}))[0] == 4.0, "(1,1) != 4");
  c.expect(purify(Tensor::from({1}, {2.0}), Tensor::from({1}, {3.0}))[0] == 43.0, "(2,3) != 43");
  c.detail << "100 pairs symmetric, (1,1)=4, (2,3)=43";
}

Image constant(std::size_t side, double v) { return Image(1, side, side, v); }

void metric_oracles(Check& c) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto k = oracle::random_case(seed, 8);
    const std::string tag = " case " + std::to_string(seed);
    const double pairs[4][2] = {{mae(k.P, k.G), oracle::mae(k.P, k.G)},
                                {f_measure_avg(k.P, k.G), oracle::f_avg(k.P, k.G)},
                                {s_measure(k.P, k.G), oracle::s_measure(k.P, k.G)},
                                {e_measure(k.P, k.G), oracle::e_measure(k.P, k.G)}};
    const char* names[4] = {"MAE", "F", "S", "E"};
    for (int i = 0; i < 4; ++i) {
      c.near(pairs[i][0], pairs[i][1], 1e-12, names[i] + tag);
      worst = std::max(worst, std::abs(pairs[i][0] - pairs[i][1]));
    }
  }
  Image g(1, 8, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 4; ++x) g.data[y * 8 + x] = 1;
  c.expect(mae(g, g) == 0.0, "identical maps MAE");
  // eps in the alignment denominator leaves about 1e-10
  c.near(e_measure(g, g), 1.0, 1e-9, "identical maps E");
  for (double p : {0.1, 0.5, 0.8, 1.0}) c.near(f_beta(p, p), p, 1e-15, "F with P = R");
  c.expect(s_measure(constant(8, 0), constant(8, 0)) == 1.0, "all-background GT, empty map");
  c.expect(s_measure(constant(8, 1), constant(8, 0)) == 0.0, "all-background GT, full map");
  c.near(s_measure(constant(8, 0.25), constant(8, 1)), 0.25, 1e-15, "all-foreground GT");
  c.detail << "400 oracle comparisons, worst |diff| " << worst;
}

void loss_properties(Check& c) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t B = 2, H = 8, W = 8;
    std::vector<double> s(B * H * W), g(B * H * W);
    for (std::size_t b = 0; b < B; ++b) {
      const double cy = rng.uniform(0, H), cx = rng.uniform(0, W), r = rng.uniform(1.5, 4.0);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t i = (b * H + y) * W + x;
          g[i] = std::hypot(y - cy, x - cx) < r ? 1.0 : 0.0;
          s[i] = rng.uniform(0.01, 0.99);
        }
    }
    const Tensor S = Tensor::from({B, 1, H, W}, s), G = Tensor::from({B, 1, H, W}, g);
    for (std::size_t k : {3u, 5u, 7u}) {
      const double l = ppa_loss(S, G, k).item();
      c.expect(l >= 0.0, "negative loss seed " + std::to_string(seed));
      c.near(l, oracle::ppa_loss(s, g, B, H, W, k), 1e-12, "oracle seed " + std::to_string(seed));
      worst = std::max(worst, std::abs(l - oracle::ppa_loss(s, g, B, H, W, k)));
    }
  }
  std::vector<double> g(16 * 16, 0.0);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 8; x < 16; ++x) g[y * 16 + x] = 1.0;
  const auto w = ppa_weights(Tensor::from({1, 1, 16, 16}, g), 3);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x)
      if (x <= 6 || x >= 9) c.expect(w[y * 16 + x] == 1.0, "weight != 1 on homogeneous window");

  const Tensor G = Tensor::from({1, 1, 16, 16}, g);
  double prev = 1e300;
  for (double d : {0.3, 0.1, 1e-2, 1e-4, 1e-6}) {
    std::vector<double> s(g.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = g[i] == 1.0 ? 1 - d : d;
    const double l = ppa_loss(Tensor::from(G.shape(), s), G, 7).item();
    c.expect(l < prev, "loss not decreasing as S approaches G");
    prev = l;
  }
  c.expect(prev < 1e-4, "loss at distance 1e-6 is " + std::to_string(prev));
  c.detail << "300 oracle comparisons, worst |diff| " << worst << ", loss at S~G " << prev;
}

void toy_learning(Check& c) {
  const auto t0 = Clock::now();
  std::size_t reached = 0;
  std::ostringstream epochs;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto data = synth_set(16, derive_seed(seed, {0xDA7A}));
    auto mc = ModelConfig::toy();
    mc.seed = seed;
    auto tc = TrainConfig::toy();
    tc.seed = seed;
    GroupTransNet net(mc);
    OptimizerState st(tc.adam(), net.parameters());
    bool hit = false;
    while (st.epoch < tc.epochs && !hit) {
      train_epoch(net, data, tc, st);
      hit = dataset_mae(net, data) < 0.05;
    }
    reached += hit;
    epochs << (seed ? "," : "") << (hit ? std::to_string(st.epoch) : std::string("-"));
  }
  const double train_s = since(t0);
  c.expect(reached >= 8, std::to_string(reached) + "/10 seeds reached MAE < 0.05");
  c.expect(train_s < 1800, "training took " + std::to_string(train_s) + " s");

  // single-sample overfit: the batch is fixed, no augmentation
  const auto one = synth_set(1, 77);
  GroupTransNet net(ModelConfig::toy());
  ParamList p = net.parameters();
  AdamConfig ac;
  ac.lr = 1e-3;
  OptimizerState st(ac, p);
  const Batch b = make_batch({&one[0]});
  const double first = batch_step(net, p, b);
  adam_step(p, st);
  double last = first;
  for (int step = 1; step < 200; ++step) {
    last = batch_step(net, p, b);
    adam_step(p, st);
  }
  {
    NoGradGuard ng;
    last = total_loss(net.predict(b.rgb, b.depth), b.gt, net.cfg.ppa_window).item();
  }
  c.expect(last < 0.05 * first, "overfit reached " + std::to_string(last / first) + " of initial loss");
  c.detail << reached << "/10 seeds, epochs to MAE<0.05: " << epochs.str() << ", " << train_s
           << " s; overfit ratio " << last / first;
}

struct RunArtifacts {
  std::vector<std::uint8_t> checkpoint;
  std::vector<Image> maps;
  std::string report;
};

RunArtifacts train_and_predict(const std::vector<SamplePair>& data, std::uint64_t seed, const fs::path& ckpt) {
  auto mc = ModelConfig::toy();
  mc.seed = seed;
  auto tc = TrainConfig::toy();
  tc.seed = seed;
  GroupTransNet net(mc);
  ParamList p = net.parameters();
  OptimizerState st(tc.adam(), p);
  for (int e = 0; e < 3; ++e) train_epoch(net, data, tc, st);
  save_checkpoint(ckpt, p, &st);
  RunArtifacts r;
  r.checkpoint = read_file(ckpt);
  for (const auto& s : data) r.maps.push_back(predict_maps(net, {&s})[0]);
  std::vector<MetricReport> per;
  for (std::size_t i = 0; i < data.size(); ++i) per.push_back(evaluate_image(r.maps[i], data[i].gt));
  r.report = format_report(average_reports(per));
  return r;
}

void determinism(Check& c) {
  const fs::path dir = fs::temp_directory_path() / "gtn_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto data = synth_set(6, 31);
  const auto a = train_and_predict(data, 5, dir / "a.ckpt");
  const auto b = train_and_predict(data, 5, dir / "b.ckpt");
  c.expect(a.checkpoint == b.checkpoint, "checkpoints differ");
  c.expect(a.maps == b.maps, "predictions differ");
  c.expect(a.report == b.report, "reports differ");
  const auto other = train_and_predict(data, 6, dir / "c.ckpt");
  c.expect(other.checkpoint != a.checkpoint, "different seed gave the same checkpoint");

  c.expect(encode_checkpoint(decode_checkpoint(a.checkpoint)) == a.checkpoint, "decode/encode not bit-exact");
  GroupTransNet net(ModelConfig::toy());
  ParamList p = net.parameters();
  OptimizerState st(TrainConfig::toy().adam(), p);
  load_checkpoint(dir / "a.ckpt", p, &st);
  save_checkpoint(dir / "a2.ckpt", p, &st);
  c.expect(read_file(dir / "a2.ckpt") == a.checkpoint, "load/save not bit-exact");
  fs::remove_all(dir);
  c.detail << "checkpoint " << a.checkpoint.size() << " bytes, " << a.maps.size() << " maps";
}

struct Criterion {
  const char* name;
  std::function<void(Check&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {"gradient_integrity", gradient_integrity}, {"shape_contract", shape_contract},
      {"weight_sharing", weight_sharing},         {"mpm_algebra", mpm_algebra},
      {"metric_oracles", metric_oracles},         {"loss_properties", loss_properties},
      {"toy_learning", toy_learning},             {"determinism", determinism},
  };
  std::vector<std::string> only(argv + 1, argv + argc);
  bool ok = true;
  for (const auto& crit : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), crit.name) == only.end()) continue;
    Check c;
    try {
      crit.run(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const bool pass = c.failures.empty();
    ok = ok && pass;
    std::printf("%s %s  %s\n", pass ? "PASS" : "FAIL", crit.name, c.detail.str().c_str());
    for (std::size_t i = 0; i < c.failures.size() && i < 10; ++i) std::printf("    %s\n", c.failures[i].c_str());
    std::fflush(stdout);
  }
  return ok ? 0 : 1;
}
