#include "g2n/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "g2n/checkpoint.hpp"

namespace g2n {
namespace {

// u64 (and bit-cast doubles) ride in the f32-only container as four 16-bit
// limbs, each exactly representable.
TensorBlob encode_u64(const std::string& name, uint64_t v) {
  TensorBlob b;
  b.name = name;
  b.shape = Shape{4};
  b.data = {float(v & 0xffff), float((v >> 16) & 0xffff),
            float((v >> 32) & 0xffff), float((v >> 48) & 0xffff)};
  return b;
}

uint64_t decode_u64(const TensorBlob& b) {
  G2N_CHECK(b.data.size() == 4, "checkpoint: entry '", b.name,
            "' is not a u64 record");
  uint64_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 16) | uint64_t(b.data[size_t(i)]);
  return v;
}

TensorBlob encode_f64(const std::string& name, double v) {
  return encode_u64(name, std::bit_cast<uint64_t>(v));
}

double decode_f64(const TensorBlob& b) {
  return std::bit_cast<double>(decode_u64(b));
}

template <typename T>
TensorBlob blob_from_tensor(const std::string& name, const Tensor<T>& t) {
  TensorBlob b;
  b.name = name;
  b.shape = t.shape();
  b.data.reserve(size_t(t.numel()));
  for (T v : t.value()) b.data.push_back(float(v));
  return b;
}

template <typename T>
TensorBlob blob_from_vector(const std::string& name, const std::vector<T>& v) {
  TensorBlob b;
  b.name = name;
  b.shape = Shape{int64_t(v.size())};
  b.data.reserve(v.size());
  for (T x : v) b.data.push_back(float(x));
  return b;
}

class BlobIndex {
 public:
  explicit BlobIndex(std::vector<TensorBlob> blobs) : blobs_(std::move(blobs)) {}

  const TensorBlob* find(const std::string& name) const {
    for (const auto& b : blobs_)
      if (b.name == name) return &b;
    return nullptr;
  }
  const TensorBlob& require(const std::string& name) const {
    const TensorBlob* b = find(name);
    G2N_CHECK(b != nullptr, "checkpoint: missing entry '", name, "'");
    return *b;
  }
  const std::vector<TensorBlob>& all() const { return blobs_; }

 private:
  std::vector<TensorBlob> blobs_;
};

template <typename T>
void restore_tensor(Tensor<T>& t, const TensorBlob& b) {
  G2N_CHECK(t.shape() == b.shape, "checkpoint: entry '", b.name, "' shape ",
            b.shape.str(), " does not match model shape ", t.shape().str());
  auto w = t.mutable_value();
  for (size_t i = 0; i < w.size(); ++i) w[i] = T(b.data[i]);
}

template <typename T>
void append_model_blobs(Registry<T>& reg, std::vector<TensorBlob>& out) {
  for (auto& p : reg.params)
    out.push_back(blob_from_tensor("param:" + p.name, p.tensor));
  for (auto& b : reg.buffers)
    out.push_back(blob_from_vector("buffer:" + b.name, *b.data));
  for (auto& p : reg.params) {
    if (!p.mask || p.mask->empty()) continue;
    TensorBlob mb;
    mb.name = "mask:" + p.name;
    mb.shape = p.tensor.shape();
    mb.data.reserve(p.mask->size());
    for (uint8_t m : *p.mask) mb.data.push_back(float(m));
    out.push_back(std::move(mb));
  }
}

template <typename T>
void restore_model_blobs(Registry<T>& reg, const BlobIndex& idx) {
  for (auto& p : reg.params)
    restore_tensor(p.tensor, idx.require("param:" + p.name));
  for (auto& b : reg.buffers) {
    const TensorBlob& blob = idx.require("buffer:" + b.name);
    G2N_CHECK(blob.data.size() == b.data->size(), "checkpoint: buffer '",
              b.name, "' length mismatch");
    for (size_t i = 0; i < blob.data.size(); ++i)
      (*b.data)[i] = T(blob.data[i]);
  }
  for (auto& p : reg.params) {
    const TensorBlob* mb = idx.find("mask:" + p.name);
    if (!mb) {
      if (p.mask) p.mask->clear();
      continue;
    }
    G2N_CHECK(p.mask != nullptr, "checkpoint: mask entry for '", p.name,
              "' has no mask slot in the model");
    G2N_CHECK(int64_t(mb->data.size()) == p.tensor.numel(),
              "checkpoint: mask '", p.name, "' length mismatch");
    p.mask->resize(mb->data.size());
    for (size_t i = 0; i < mb->data.size(); ++i)
      (*p.mask)[i] = mb->data[i] != 0.0f ? 1 : 0;
  }
}

}  // namespace

template <typename T>
void sgd_update(std::span<T> w, std::span<const T> g, std::span<T> v, T lr,
                T momentum, T weight_decay,
                const std::vector<uint8_t>* mask) {
  G2N_CHECK(w.size() == g.size() && w.size() == v.size(),
            "sgd: parameter/gradient/velocity length mismatch");
  for (size_t i = 0; i < w.size(); ++i) {
    const T adjusted = g[i] + weight_decay * w[i];
    v[i] = momentum * v[i] + adjusted;
    w[i] -= lr * v[i];
  }
  if (mask && !mask->empty()) {
    G2N_CHECK(mask->size() == w.size(), "sgd: mask length mismatch");
    for (size_t i = 0; i < w.size(); ++i)
      if (!(*mask)[i]) w[i] = T(0);
  }
}

template <typename T>
EvalResult evaluate(Model<T>& model, const Dataset& ds,
                    const std::vector<int64_t>& indices,
                    const ChannelStats& stats, int batch_size) {
  G2N_CHECK(!indices.empty(), "evaluate: empty index set");
  Rng unused(0);
  EvalResult res;
  double loss_sum = 0.0;
  int64_t wrong1 = 0, wrong5 = 0;
  const int64_t total = int64_t(indices.size());
  for (size_t at = 0; at < indices.size(); at += size_t(batch_size)) {
    std::vector<int64_t> chunk(
        indices.begin() + int64_t(at),
        indices.begin() + int64_t(std::min(indices.size(),
                                           at + size_t(batch_size))));
    LabeledBatch<T> batch = make_batch<T>(ds, chunk, AugmentPolicy::Eval, stats,
                                          false, unused);
    Tensor<T> logits = model.forward(batch.images, Mode::Eval);
    loss_sum +=
        double(softmax_cross_entropy(logits, batch.labels).item()) *
        double(chunk.size());

    const int64_t k_classes = logits.shape().dim(1);
    const int64_t top_k = std::min<int64_t>(5, k_classes);
    for (size_t i = 0; i < chunk.size(); ++i) {
      const T* row = logits.value().data() + int64_t(i) * k_classes;
      const int label = batch.labels[i];
      const T label_logit = row[label];
      // Rank of the true label under "ties resolved toward lower index".
      int64_t rank = 0;
      for (int64_t c = 0; c < k_classes; ++c) {
        if (row[c] > label_logit || (row[c] == label_logit && c < label))
          ++rank;
      }
      if (rank >= 1) ++wrong1;
      if (rank >= top_k) ++wrong5;
    }
  }
  res.top1_err = double(wrong1) / double(total);
  res.top5_err = double(wrong5) / double(total);
  res.mean_loss = loss_sum / double(total);
  return res;
}

std::string RunMetrics::to_csv() const {
  std::ostringstream os;
  os << csv_header() << "\n";
  os << std::setprecision(10);
  for (const auto& e : epochs)
    os << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.top1
       << "," << e.top5 << "," << e.lr << "," << e.wall_seconds << "\n";
  return os.str();
}

template <typename T>
void save_model_checkpoint(Model<T>& model, const std::string& path) {
  Registry<T> reg = model.registry();
  std::vector<TensorBlob> blobs;
  append_model_blobs(reg, blobs);
  write_checkpoint(path, blobs);
}

template <typename T>
void load_model_checkpoint(Model<T>& model, const std::string& path) {
  Registry<T> reg = model.registry();
  BlobIndex idx(read_checkpoint(path));
  restore_model_blobs(reg, idx);
}

template <typename T>
Trainer<T>::Trainer(Model<T>& model, const SgdConfig& cfg, int plateau_patience,
                    uint64_t seed)
    : model_(model),
      reg_(model.registry()),
      cfg_(cfg),
      schedule_(cfg.lr, plateau_patience),
      shuffle_rng_(Rng(seed).fork(1)),
      augment_rng_(Rng(seed).fork(2)),
      dropout_rng_(Rng(seed).fork(3)) {
  velocity_.reserve(reg_.params.size());
  for (auto& p : reg_.params)
    velocity_.emplace_back(size_t(p.tensor.numel()), T(0));
}

template <typename T>
T Trainer<T>::step(const LabeledBatch<T>& batch) {
  Tensor<T> logits = model_.forward(batch.images, Mode::Train, &dropout_rng_);
  Tensor<T> loss = softmax_cross_entropy(logits, batch.labels);
  const T loss_value = loss.item();
  G2N_CHECK(std::isfinite(double(loss_value)),
            "train: non-finite loss at step ", steps_ + 1);
  loss.backward();

  const T lr = T(schedule_.lr());
  const T momentum = T(cfg_.momentum);
  for (size_t i = 0; i < reg_.params.size(); ++i) {
    auto& p = reg_.params[i];
    auto g = p.tensor.grad();
    for (T gv : g)
      G2N_CHECK(std::isfinite(double(gv)),
                "train: non-finite gradient in parameter '", p.name,
                "' at step ", steps_ + 1);
    const T wd = p.weight_decay ? T(cfg_.weight_decay) : T(0);
    sgd_update(p.tensor.mutable_value(), g, std::span<T>(velocity_[i]), lr,
               momentum, wd,
               p.mask && !p.mask->empty() ? p.mask.get() : nullptr);
    p.tensor.zero_grad();
  }
  ++steps_;
  return loss_value;
}

template <typename T>
void Trainer<T>::save_checkpoint(const std::string& path) {
  std::vector<TensorBlob> blobs;
  append_model_blobs(reg_, blobs);
  for (size_t i = 0; i < reg_.params.size(); ++i)
    blobs.push_back(
        blob_from_vector("opt:velocity:" + reg_.params[i].name, velocity_[i]));
  blobs.push_back(encode_f64("opt:lr", schedule_.lr()));
  blobs.push_back(encode_f64("opt:best_val_loss", schedule_.best()));
  blobs.push_back(encode_u64("opt:plateau_counter", uint64_t(schedule_.counter())));
  blobs.push_back(encode_u64("opt:steps", uint64_t(steps_)));
  blobs.push_back(encode_u64("opt:epoch", uint64_t(epoch_)));
  blobs.push_back(encode_u64("rng:shuffle", shuffle_rng_.state()));
  blobs.push_back(encode_u64("rng:augment", augment_rng_.state()));
  blobs.push_back(encode_u64("rng:dropout", dropout_rng_.state()));
  write_checkpoint(path, blobs);
}

template <typename T>
void Trainer<T>::load_checkpoint(const std::string& path) {
  BlobIndex idx(read_checkpoint(path));
  restore_model_blobs(reg_, idx);
  for (size_t i = 0; i < reg_.params.size(); ++i) {
    const TensorBlob& b = idx.require("opt:velocity:" + reg_.params[i].name);
    G2N_CHECK(b.data.size() == velocity_[i].size(),
              "checkpoint: velocity '", reg_.params[i].name,
              "' length mismatch");
    for (size_t j = 0; j < b.data.size(); ++j) velocity_[i][j] = T(b.data[j]);
  }
  schedule_.set_lr(decode_f64(idx.require("opt:lr")));
  schedule_.set_best(decode_f64(idx.require("opt:best_val_loss")));
  schedule_.set_counter(int(decode_u64(idx.require("opt:plateau_counter"))));
  steps_ = int64_t(decode_u64(idx.require("opt:steps")));
  epoch_ = int(decode_u64(idx.require("opt:epoch")));
  shuffle_rng_.set_state(decode_u64(idx.require("rng:shuffle")));
  augment_rng_.set_state(decode_u64(idx.require("rng:augment")));
  dropout_rng_.set_state(decode_u64(idx.require("rng:dropout")));
}

template <typename T>
RunMetrics Trainer<T>::run(const Dataset& ds,
                           const std::vector<int64_t>& train_idx,
                           const std::vector<int64_t>& val_idx,
                           const ChannelStats& stats, const TrainConfig& tc,
                           const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  {
    std::ofstream m(metrics_path, std::ios::trunc);
    G2N_CHECK(m.good(), "train: cannot open '", metrics_path, "'");
    m << RunMetrics::csv_header() << "\n";
  }
  save_checkpoint((fs::path(out_dir) / "initial.ckpt").string());

  // Horizontal flips are withheld from chirality-sensitive digit data.
  const bool allow_hflip = tc.augment && tc.dataset != "mnist";
  const AugmentPolicy train_policy =
      tc.augment ? AugmentPolicy::Train : AugmentPolicy::Eval;

  RunMetrics metrics;
  double best_val = std::numeric_limits<double>::infinity();
  for (int e = 0; e < tc.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    auto batches = make_epoch_batches(train_idx, tc.batch_size, shuffle_rng_);
    double loss_sum = 0.0;
    int64_t seen = 0;
    for (const auto& chunk : batches) {
      LabeledBatch<T> batch = make_batch<T>(ds, chunk, train_policy, stats,
                                            allow_hflip, augment_rng_);
      T loss;
      try {
        loss = step(batch);
      } catch (const Error& err) {
        fail("train: epoch ", e + 1, ": ", err.what());
      }
      loss_sum += double(loss) * double(chunk.size());
      seen += int64_t(chunk.size());
    }
    ++epoch_;

    EvalResult val = evaluate(model_, ds, val_idx, stats, tc.batch_size);
    observe_validation(val.mean_loss);

    EpochRecord rec;
    rec.epoch = epoch_;
    rec.train_loss = loss_sum / double(seen);
    rec.val_loss = val.mean_loss;
    rec.top1 = val.top1_err;
    rec.top5 = val.top5_err;
    rec.lr = schedule_.lr();
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    metrics.epochs.push_back(rec);

    {
      std::ofstream m(metrics_path, std::ios::app);
      m << std::setprecision(10) << rec.epoch << "," << rec.train_loss << ","
        << rec.val_loss << "," << rec.top1 << "," << rec.top5 << "," << rec.lr
        << "," << rec.wall_seconds << "\n";
    }
    save_checkpoint((fs::path(out_dir) / "last.ckpt").string());
    if (val.mean_loss < best_val) {
      best_val = val.mean_loss;
      save_checkpoint((fs::path(out_dir) / "best.ckpt").string());
    }
  }
  return metrics;
}

#define G2N_INSTANTIATE_TRAINING(T)                                           \
  template void sgd_update<T>(std::span<T>, std::span<const T>, std::span<T>, \
                              T, T, T, const std::vector<uint8_t>*);          \
  template EvalResult evaluate<T>(Model<T>&, const Dataset&,                  \
                                  const std::vector<int64_t>&,                \
                                  const ChannelStats&, int);                  \
  template void save_model_checkpoint<T>(Model<T>&, const std::string&);      \
  template void load_model_checkpoint<T>(Model<T>&, const std::string&);      \
  template class Trainer<T>;

G2N_INSTANTIATE_TRAINING(float)
G2N_INSTANTIATE_TRAINING(double)

}  // namespace g2n
