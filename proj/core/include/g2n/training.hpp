#pragma once

#include <limits>
#include <string>
#include <vector>

#include "g2n/backbone.hpp"
#include "g2n/data.hpp"

namespace g2n {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

// One parameter tensor's update: g' = g + wd*w, v = momentum*v + g',
// w -= lr*v, then masked positions are re-zeroed.
template <typename T>
void sgd_update(std::span<T> w, std::span<const T> g, std::span<T> v, T lr,
                T momentum, T weight_decay,
                const std::vector<uint8_t>* mask);

// Halves the learning rate after `patience` consecutive epochs without a new
// best validation loss; the counter resets on improvement and after halving.
class PlateauSchedule {
 public:
  explicit PlateauSchedule(double lr0, int patience = 10)
      : lr_(lr0), patience_(patience) {}

  void observe(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      counter_ = 0;
      return;
    }
    if (++counter_ >= patience_) {
      lr_ *= 0.5;
      counter_ = 0;
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  double best() const { return best_; }
  void set_best(double b) { best_ = b; }
  int counter() const { return counter_; }
  void set_counter(int c) { counter_ = c; }
  int patience() const { return patience_; }

 private:
  double lr_;
  double best_ = std::numeric_limits<double>::infinity();
  int counter_ = 0;
  int patience_;
};

struct EvalResult {
  double top1_err = 0.0;
  double top5_err = 0.0;
  double mean_loss = 0.0;
};

// Eval-mode pass over `indices`: top-k error with ties broken toward the
// lower class index, and the mean per-sample loss.
template <typename T>
EvalResult evaluate(Model<T>& model, const Dataset& ds,
                    const std::vector<int64_t>& indices,
                    const ChannelStats& stats, int batch_size = 64);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double top1 = 0.0;  // validation top-1 error fraction
  double top5 = 0.0;  // validation top-5 error fraction
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;
  static std::string csv_header() {
    return "epoch,train_loss,val_loss,top1,top5,lr,wall_seconds";
  }
  std::string to_csv() const;
};

// Weight-level checkpoint: parameters, batchnorm buffers, and masks. Loading
// ignores optimizer/RNG entries, so full training checkpoints load too.
template <typename T>
void save_model_checkpoint(Model<T>& model, const std::string& path);
template <typename T>
void load_model_checkpoint(Model<T>& model, const std::string& path);

// Owns one training run over a model: SGD state, plateau schedule, RNG
// streams, and checkpoint (de)serialization. Fully seed-deterministic.
template <typename T>
class Trainer {
 public:
  Trainer(Model<T>& model, const SgdConfig& cfg, int plateau_patience,
          uint64_t seed);

  // Forward/backward/update on one prepared batch; returns the batch loss.
  T step(const LabeledBatch<T>& batch);

  void observe_validation(double val_loss) { schedule_.observe(val_loss); }

  double lr() const { return schedule_.lr(); }
  int64_t steps() const { return steps_; }
  int epoch() const { return epoch_; }
  PlateauSchedule& schedule() { return schedule_; }

  Rng& shuffle_rng() { return shuffle_rng_; }
  Rng& augment_rng() { return augment_rng_; }
  Rng& dropout_rng() { return dropout_rng_; }

  // Full training checkpoint: weights, buffers, masks, velocity, schedule
  // state, counters, and RNG streams. Resumed runs continue bit-exactly.
  void save_checkpoint(const std::string& path);
  void load_checkpoint(const std::string& path);

  // The full protocol: shuffled epochs at the configured batch size, one
  // validation pass per epoch, plateau schedule, metrics CSV appended and
  // flushed per epoch, best/last checkpoints under out_dir.
  RunMetrics run(const Dataset& ds, const std::vector<int64_t>& train_idx,
                 const std::vector<int64_t>& val_idx, const ChannelStats& stats,
                 const TrainConfig& tc, const std::string& out_dir);

 private:
  Model<T>& model_;
  Registry<T> reg_;
  std::vector<std::vector<T>> velocity_;
  SgdConfig cfg_;
  PlateauSchedule schedule_;
  Rng shuffle_rng_, augment_rng_, dropout_rng_;
  int64_t steps_ = 0;
  int epoch_ = 0;
};

}  // namespace g2n
