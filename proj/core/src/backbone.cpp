#include "g2n/backbone.hpp"

namespace g2n {

template <typename T>
Model<T>::Model(const NetworkConfig& cfg, uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  G2N_CHECK(!cfg.stem.empty(), "build: stem must have at least one conv");
  G2N_CHECK(cfg.classes >= 2, "build: classes must be >= 2, got ", cfg.classes);

  int64_t c = cfg.in_channels;
  int64_t h = cfg.in_h, w = cfg.in_w;
  for (size_t i = 0; i < cfg.stem.size(); ++i) {
    const ConvDesc& d = cfg.stem[i];
    stem_.emplace_back(c, d.out_channels, d.kernel, d.stride, d.padding, rng);
    c = d.out_channels;
    h = pooled_extent(h, d.kernel, d.stride, d.padding);
    w = pooled_extent(w, d.kernel, d.stride, d.padding);
    G2N_CHECK(h >= 1 && w >= 1, "build: stem conv ", i + 1,
              " produces empty spatial extent");
  }

  for (size_t s = 0; s < cfg.stages.size(); ++s) {
    Stage stage;
    for (size_t b = 0; b < cfg.stages[s].blocks.size(); ++b) {
      ResFRIConfig bc;
      bc.in_channels = c;
      bc.widths = cfg.stages[s].blocks[b];
      bc.fusion = cfg.fusion;
      bc.split = cfg.split;
      bc.use_residual = cfg.use_residual;
      bc.use_transverse = cfg.use_transverse;
      bc.passage_prune_ratio = cfg.prune_ratio;
      bc.branch_pool_kind = cfg.branch_pool_kind;
      try {
        stage.blocks.emplace_back(bc, rng);
      } catch (const Error& e) {
        fail("build: stage ", s + 1, " block ", b + 1, ": ", e.what());
      }
      c = output_channels(bc);
    }
    stage.pool_after = cfg.stages[s].pool_after;
    if (stage.pool_after) {
      h = pooled_extent(h, stage.pool_after->kernel, stage.pool_after->stride,
                        stage.pool_after->padding);
      w = pooled_extent(w, stage.pool_after->kernel, stage.pool_after->stride,
                        stage.pool_after->padding);
      G2N_CHECK(h >= 1 && w >= 1, "build: stage ", s + 1,
                " pool produces empty spatial extent");
    }
    stages_.push_back(std::move(stage));
  }

  head_channels_ = c;
  fc_ = LinearLayer<T>(head_channels_, cfg.classes, rng);
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& batch, Mode mode,
                            Rng* dropout_rng) {
  G2N_CHECK(batch.shape().rank() == 4, "forward: expected rank-4 batch, got ",
            batch.shape().str());
  G2N_CHECK(batch.shape().c() == cfg_.in_channels &&
                batch.shape().h() == cfg_.in_h && batch.shape().w() == cfg_.in_w,
            "forward: batch shape ", batch.shape().str(),
            " does not match configured input ", cfg_.in_channels, "x",
            cfg_.in_h, "x", cfg_.in_w);
  if (mode == Mode::Train && cfg_.dropout > 0.0)
    G2N_CHECK(dropout_rng != nullptr,
              "forward: train mode with dropout needs an RNG stream");

  Tensor<T> x = batch;
  for (auto& conv : stem_) x = conv.forward(x, mode);
  for (auto& stage : stages_) {
    for (auto& block : stage.blocks) x = block.forward(x, mode);
    if (stage.pool_after)
      x = pool2d(x, cfg_.pool_kind, stage.pool_after->kernel,
                 stage.pool_after->stride, stage.pool_after->padding);
  }
  // Head global pool follows the configured kind; avg is the default.
  Tensor<T> pooled;
  if (cfg_.head_pool == PoolKind::Avg) {
    pooled = global_avg_pool(x);
  } else {
    pooled = flatten(
        pool2d(x, PoolKind::Max, int(x.shape().h()), int(x.shape().h()), 0));
  }
  if (mode == Mode::Train && cfg_.dropout > 0.0)
    pooled = dropout(pooled, cfg_.dropout, *dropout_rng, mode);
  return fc_.forward(pooled);
}

template <typename T>
Registry<T> Model<T>::registry() {
  Registry<T> reg;
  for (size_t i = 0; i < stem_.size(); ++i)
    stem_[i].collect("stem" + std::to_string(i + 1), reg);
  for (size_t s = 0; s < stages_.size(); ++s)
    for (size_t b = 0; b < stages_[s].blocks.size(); ++b)
      stages_[s].blocks[b].collect("stage" + std::to_string(s + 1) + ".block" +
                                       std::to_string(b + 1),
                                   reg);
  fc_.collect("head.fc", reg);
  return reg;
}

template <typename T>
std::vector<LayerStat> Model<T>::layer_stats() const {
  std::vector<LayerStat> rows;
  int64_t h = cfg_.in_h, w = cfg_.in_w;
  for (size_t i = 0; i < stem_.size(); ++i) {
    stem_[i].stat("stem" + std::to_string(i + 1), h, w, rows);
    h = rows.back().out_shape.h();
    w = rows.back().out_shape.w();
  }
  for (size_t s = 0; s < stages_.size(); ++s) {
    const std::string sname = "stage" + std::to_string(s + 1);
    for (size_t b = 0; b < stages_[s].blocks.size(); ++b)
      stages_[s].blocks[b].stats(sname + ".block" + std::to_string(b + 1), h, w,
                                 rows);
    if (stages_[s].pool_after) {
      const auto& p = *stages_[s].pool_after;
      h = pooled_extent(h, p.kernel, p.stride, p.padding);
      w = pooled_extent(w, p.kernel, p.stride, p.padding);
      rows.push_back({sname + ".pool", 0, 0,
                      Shape{1, stages_[s].blocks.back().out_channels(), h, w}});
    }
  }
  rows.push_back({"head.global_pool", 0, 0, Shape{1, head_channels_}});
  fc_.stat("head.fc", rows);
  return rows;
}

template <typename T>
std::vector<ResFRIBlock<T>*> Model<T>::blocks() {
  std::vector<ResFRIBlock<T>*> out;
  for (auto& stage : stages_)
    for (auto& block : stage.blocks) out.push_back(&block);
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace g2n
