#pragma once

// Mini-batch training and evaluation over an in-memory dataset.

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "gtn/dataset.hpp"
#include "gtn/loss.hpp"
#include "gtn/metrics.hpp"
#include "gtn/model.hpp"
#include "gtn/optim.hpp"

namespace gtn {

struct TrainConfig {
  std::string profile = "toy";
  std::size_t epochs = 300;
  std::size_t batch_size = 3;
  double lr = 1e-4;
  double decay_factor = 0.1;
  std::size_t decay_every = 120;  // same 0.4 fraction of the run as 60 of 150
  bool augment = true;
  std::uint64_t seed = 0;

  static TrainConfig toy() { return {}; }

  static TrainConfig full() {
    TrainConfig c;
    c.profile = "full";
    c.epochs = 150;
    c.decay_every = 60;
    return c;
  }

  AdamConfig adam() const {
    AdamConfig a;
    a.lr = lr;
    a.decay_factor = decay_factor;
    a.decay_every = decay_every;
    return a;
  }

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw std::invalid_argument("train: decay_factor must lie in (0, 1]");
  }
};

struct Batch {
  Tensor rgb, depth, gt;
};

inline Batch make_batch(const std::vector<const SamplePair*>& items) {
  std::vector<const Image*> r, d, g;
  for (const auto* s : items) r.push_back(&s->rgb), d.push_back(&s->depth), g.push_back(&s->gt);
  return {to_tensor(r), to_tensor(d), to_tensor(g)};
}

/// Sample order for one epoch; a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {0x5A0FF1E, epoch}));
  rng.shuffle(order);
  return order;
}

struct EpochReport {
  std::size_t epoch = 0;  // 0-based index of the epoch just run
  double mean_loss = 0;
  double lr = 0;
};

/// Loss and gradients for one batch. On a non-finite loss the batch is
/// replayed with finite checks on, so the error names the first bad op.
inline double batch_step(const GroupTransNet& model, ParamList& params, const Batch& b) {
  params.zero_grad();
  auto replay = [&] {
    FiniteWatch watch;
    params.zero_grad();
    total_loss(model.predict(b.rgb, b.depth), b.gt, model.cfg.ppa_window);
  };
  Tensor loss;
  try {
    loss = total_loss(model.predict(b.rgb, b.depth), b.gt, model.cfg.ppa_window);
  } catch (const NumericError&) {
    replay();
    throw;
  }
  if (!std::isfinite(loss.item())) {
    replay();
    throw NumericError("non-finite training loss");
  }
  backward(loss);
  for (std::size_t k = 0; k < params.size(); ++k)
    for (double g : params.tensors[k].grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for '" + params.names[k] + "'");
  return loss.item();
}

/// One pass over the data: shuffle, optionally augment, step per batch.
/// Advances state.epoch when done.
inline EpochReport train_epoch(GroupTransNet& model, const std::vector<SamplePair>& data, const TrainConfig& cfg,
                               OptimizerState& state) {
  if (data.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  ParamList params = model.parameters();
  EpochReport rep;
  rep.epoch = state.epoch;
  rep.lr = state.current_lr();
  const auto order = epoch_order(data.size(), cfg.seed, state.epoch);
  double total = 0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    std::vector<SamplePair> augmented;
    std::vector<const SamplePair*> items;
    if (cfg.augment) {
      for (std::size_t i = start; i < end; ++i)
        augmented.push_back(augment(data[order[i]], derive_seed(cfg.seed, {0xA06, state.epoch, order[i]})));
      for (const auto& s : augmented) items.push_back(&s);
    } else {
      for (std::size_t i = start; i < end; ++i) items.push_back(&data[order[i]]);
    }
    total += batch_step(model, params, make_batch(items));
    adam_step(params, state);
    ++batches;
  }
  ++state.epoch;
  rep.mean_loss = total / static_cast<double>(batches);
  return rep;
}

/// Final saliency maps for a batch of samples, no graph recorded.
inline std::vector<Image> predict_maps(const GroupTransNet& model, const std::vector<const SamplePair*>& items) {
  NoGradGuard ng;
  const Batch b = make_batch(items);
  const Tensor s = model.final_map(model.predict(b.rgb, b.depth));
  std::vector<Image> out;
  for (std::size_t n = 0; n < items.size(); ++n) out.push_back(to_image(s, n));
  return out;
}

/// Mean per-image MAE of the final map over a dataset.
inline double dataset_mae(const GroupTransNet& model, const std::vector<SamplePair>& data) {
  double s = 0;
  for (const auto& p : data) s += mae(predict_maps(model, {&p})[0], p.gt);
  return s / static_cast<double>(data.size());
}

}  // namespace gtn
