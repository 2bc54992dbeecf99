// gtn: synth | train | predict | eval | gradcheck
//
// Exit codes: 0 ok, 1 usage or config, 2 data, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gtn/gtn.hpp"

namespace fs = std::filesystem;
using namespace gtn;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int cmd_synth(const std::string& out, std::size_t count, std::size_t size, std::uint64_t seed) {
  if (count == 0) throw UsageError("--count must be >= 1");
  if (size == 0 || size % 32) throw UsageError("--size must be a positive multiple of 32");
  std::cout << gen_synthetic(out, count, size, seed).string() << "\n";
  return kOk;
}

RunConfig run_config(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

std::vector<SamplePair> load_for(const ModelConfig& mc, const std::string& root) {
  auto data = load_dataset(root);
  for (auto& s : data)
    if (s.rgb.height != mc.input_size || s.rgb.width != mc.input_size) s = resize_input(s, mc.input_size);
  return data;
}

struct TrainFlags {
  std::string config, data, checkpoint_out, resume;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  double stop_mae = 0.0;
};

int cmd_train(const TrainFlags& f) {
  RunConfig rc = run_config(f.config);
  if (f.seed) rc.set_seed(*f.seed);
  if (f.epochs) rc.train.epochs = *f.epochs;
  const std::string data_root = f.data.empty() ? rc.data : f.data;
  const std::string ckpt = f.checkpoint_out.empty() ? rc.checkpoint_out : f.checkpoint_out;
  if (data_root.empty()) throw UsageError("no dataset: pass --data or set 'data' in the config");
  if (ckpt.empty()) throw UsageError("no checkpoint path: pass --checkpoint-out or set 'checkpoint_out'");

  const auto data = load_for(rc.model, data_root);
  GroupTransNet net(rc.model);
  ParamList params = net.parameters();
  OptimizerState state(rc.train.adam(), params);
  if (!f.resume.empty()) {
    load_checkpoint(f.resume, params, &state);
    std::printf("resumed=%s epoch=%zu step=%llu\n", f.resume.c_str(), state.epoch,
                static_cast<unsigned long long>(state.step));
  }
  while (state.epoch < rc.train.epochs) {
    const EpochReport r = train_epoch(net, data, rc.train, state);
    save_checkpoint(ckpt, params, &state);
    if (f.stop_mae > 0.0) {
      const double m = dataset_mae(net, data);
      std::printf("epoch=%zu loss=%.17g lr=%.17g train_mae=%.17g\n", r.epoch, r.mean_loss, r.lr, m);
      std::fflush(stdout);
      if (m < f.stop_mae) break;
    } else {
      std::printf("epoch=%zu loss=%.17g lr=%.17g\n", r.epoch, r.mean_loss, r.lr);
      std::fflush(stdout);
    }
  }
  return kOk;
}

int cmd_predict(const std::string& config, const std::string& ckpt, const std::string& rgb_path,
                const std::string& depth_path, const std::string& out) {
  const RunConfig rc = run_config(config);
  GroupTransNet net(rc.model);
  ParamList params = net.parameters();
  load_checkpoint(ckpt, params);
  SamplePair s;
  s.rgb = read_pnm(rgb_path);
  s.depth = read_pnm(depth_path);
  if (s.rgb.channels != 3) throw DataError(rgb_path + ": expected a P6 colour image");
  if (s.depth.channels != 1) throw DataError(depth_path + ": expected a P5 grey image");
  if (s.depth.height != s.rgb.height || s.depth.width != s.rgb.width)
    throw DataError("rgb and depth sizes differ");
  const std::size_t H = s.rgb.height, W = s.rgb.width, S = rc.model.input_size;
  s.gt = Image(1, H, W);
  if (H != S || W != S) s = resize_input(s, S);
  Image map = predict_maps(net, {&s})[0];
  write_pnm(out, resize_bilinear(map, H, W));
  return kOk;
}

int cmd_eval(const std::string& pred, const std::string& gt, const std::string& report, bool adaptive) {
  const MetricReport r = evaluate_dir(pred, gt);
  if (!report.empty()) {
    const auto text = format_report(r);
    write_file(report, std::vector<std::uint8_t>(text.begin(), text.end()));
  }
  std::printf("images=%zu s_alpha=%.6f f_beta=%.6f e_xi=%.6f mae=%.6f\n", r.images, r.s_alpha,
              adaptive ? r.f_beta_adaptive : r.f_beta_avg, r.e_xi, r.mae);
  return kOk;
}

int cmd_gradcheck(const std::string& profile, std::uint64_t seed, std::size_t seeds, const std::string& corrupt) {
  if (profile != "toy") throw UsageError("gradcheck runs on the toy profile only");
  if (seeds == 0) throw UsageError("--seeds must be >= 1");
  debug::corrupted_op() = corrupt;
  GradSuiteConfig cfg;
  cfg.base_seed = seed;
  cfg.seeds = seeds;
  const GradSuiteReport rep = run_grad_suite(cfg);
  std::size_t failures = 0;
  for (const auto& c : rep.cases)
    if (!c.report.passed()) {
      ++failures;
      std::printf("FAIL op=%s seed=%llu rel_err=%.3e\n", c.name.c_str(), static_cast<unsigned long long>(c.seed),
                  c.report.worst);
    }
  for (const auto& p : rep.pipeline)
    for (const auto& c : p.report.checks)
      if (c.rel_err >= p.report.tol) {
        ++failures;
        std::printf("FAIL pipeline param=%s[%zu] seed=%llu rel_err=%.3e analytic=%.6e numeric=%.6e\n", c.name.c_str(),
                    c.index, static_cast<unsigned long long>(p.seed), c.rel_err, c.analytic, c.numeric);
      }
  const auto [name, err] = rep.worst();
  std::printf("checks=%zu pipeline_seeds=%zu failures=%zu worst=%s rel_err=%.3e seconds=%.1f\n", rep.cases.size(),
              rep.pipeline.size(), failures, name.c_str(), err, rep.seconds);
  return rep.passed() ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GroupTransNet RGB-D saliency toolkit"};
  app.require_subcommand(1);

  std::string synth_out;
  std::size_t synth_count = 16, synth_size = 64;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "Write a synthetic RGB-D dataset");
  synth->add_option("--out", synth_out, "Dataset root")->required();
  synth->add_option("--count", synth_count, "Number of samples");
  synth->add_option("--size", synth_size, "Image side (multiple of 32)");
  synth->add_option("--seed", synth_seed, "Generator seed");

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", tf.config, "key=value config file");
  train->add_option("--data", tf.data, "Dataset root");
  train->add_option("--checkpoint-out", tf.checkpoint_out, "Checkpoint written after every epoch");
  train->add_option("--resume", tf.resume, "Continue from this checkpoint (weights and optimizer state)");
  train->add_option("--seed", tf.seed, "Override the config seed");
  train->add_option("--epochs", tf.epochs, "Override the epoch count");
  train->add_option("--stop-mae", tf.stop_mae, "Stop once train-set MAE falls below this");

  std::string p_config, p_ckpt, p_rgb, p_depth, p_out;
  auto* predict = app.add_subcommand("predict", "Write a saliency map for one RGB-D pair");
  predict->add_option("--config", p_config, "Config the checkpoint was trained with");
  predict->add_option("--checkpoint", p_ckpt, "Checkpoint file")->required();
  predict->add_option("--rgb", p_rgb, "P6 colour image")->required();
  predict->add_option("--depth", p_depth, "P5 depth image")->required();
  predict->add_option("--out", p_out, "Output P5 saliency map")->required();

  std::string e_pred, e_gt, e_report;
  bool e_adaptive = false;
  auto* eval = app.add_subcommand("eval", "Score predicted maps against ground truth");
  eval->add_option("--pred", e_pred, "Directory of predicted maps")->required();
  eval->add_option("--gt", e_gt, "Directory of ground-truth maps")->required();
  eval->add_option("--report", e_report, "Report file to write");
  eval->add_flag("--adaptive-f", e_adaptive, "Print the adaptive-threshold F instead of the 256-threshold average");

  std::string g_profile = "toy", g_corrupt;
  std::uint64_t g_seed = 0;
  std::size_t g_seeds = 20;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--profile", g_profile, "Model profile (toy)");
  gradcheck->add_option("--seed", g_seed, "First seed");
  gradcheck->add_option("--seeds", g_seeds, "Number of seeds");
  gradcheck->add_option("--corrupt-op", g_corrupt, "Scale the backward of this op by 1.5 (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_out, synth_count, synth_size, synth_seed);
    if (*train) return cmd_train(tf);
    if (*predict) return cmd_predict(p_config, p_ckpt, p_rgb, p_depth, p_out);
    if (*eval) return cmd_eval(e_pred, e_gt, e_report, e_adaptive);
    if (*gradcheck) return cmd_gradcheck(g_profile, g_seed, g_seeds, g_corrupt);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
