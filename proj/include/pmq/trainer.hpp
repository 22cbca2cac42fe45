#pragma once

// Training protocol: Adam over epochs x steps_per_epoch minibatch steps of
// random tile crops, aggregate quantile loss on valid pixels, per-epoch
// validation, best/final/resumable checkpoints.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "pmq/checkpoint.hpp"
#include "pmq/dataset_io.hpp"
#include "pmq/datapipe.hpp"
#include "pmq/losses.hpp"
#include "pmq/metrics.hpp"
#include "pmq/model.hpp"

namespace pmq {

struct AdamConfig {
  double lr = 0.00005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
public:
  Adam(const nn::ParamStore& ps, AdamConfig cfg) : cfg_(cfg) {
    m_.reserve(ps.count());
    v_.reserve(ps.count());
    for (const auto& t : ps.tensors()) {
      m_.emplace_back(t.v.size(), 0.0f);
      v_.emplace_back(t.v.size(), 0.0f);
    }
  }

  void step(nn::ParamStore& ps, const nn::GradStore& gs) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < ps.count(); ++i) {
      auto& w = ps[static_cast<int>(i)].v;
      const auto& g = gs[static_cast<int>(i)];
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j];
        const double mj = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<float>(mj);
        v[j] = static_cast<float>(vj);
        w[j] -= static_cast<float>(cfg_.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps));
      }
    }
  }

  uint64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  // optimizer state as named tensors for resumable checkpoints
  void export_state(const nn::ParamStore& ps, std::vector<nn::ParamTensor>& out) const {
    for (size_t i = 0; i < ps.count(); ++i) {
      const auto& p = ps[static_cast<int>(i)];
      out.push_back({"opt.m." + p.name, p.shape, m_[i]});
      out.push_back({"opt.v." + p.name, p.shape, v_[i]});
    }
  }

  void import_state(const nn::ParamStore& ps, const Checkpoint& ckpt, uint64_t t) {
    t_ = t;
    for (size_t i = 0; i < ps.count(); ++i) {
      const auto& p = ps[static_cast<int>(i)];
      const auto* m = ckpt.find("opt.m." + p.name);
      const auto* v = ckpt.find("opt.v." + p.name);
      if (!m || !v || m->v.size() != m_[i].size())
        throw IncompatibleCheckpointError("checkpoint: missing optimizer state for " + p.name);
      m_[i] = m->v;
      v_[i] = v->v;
    }
  }

private:
  AdamConfig cfg_;
  uint64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct TrainConfig {
  int epochs = 1000;
  int minibatch_size = 15;
  int steps_per_epoch = 100;
  AdamConfig adam;  // lr 0.00005
  double dropout = 0.5;
  LossConfig loss;  // q_l=0.1, q_u=0.9, alpha=2, gamma=1, smoothed
  int tile_size = 64;
  uint64_t seed = 0;
  int checkpoint_every = 0;  // extra periodic checkpoints; 0 = best+final only

  void validate() const {
    if (epochs < 1 || minibatch_size < 1 || steps_per_epoch < 1 || tile_size < 1)
      throw ConfigError("TrainConfig: counts must be positive");
    if (!(adam.lr >= 0.0)) throw ConfigError("TrainConfig: learning rate must be >= 0");
    loss.validate();
  }
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"quantiles", c.quantiles},
       {"gamma_lower", c.gamma_lower},
       {"gamma_upper", c.gamma_upper},
       {"alpha", c.alpha},
       {"smoothing", c.smoothing == Smoothing::smoothed ? "smoothed" : "exact_check"}};
}
inline void from_json(const nlohmann::json& j, LossConfig& c) {
  c.quantiles = j.at("quantiles").get<QuantileSpec>();
  c.gamma_lower = j.at("gamma_lower").get<double>();
  c.gamma_upper = j.at("gamma_upper").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.smoothing =
      j.at("smoothing").get<std::string>() == "smoothed" ? Smoothing::smoothed : Smoothing::exact_check;
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"minibatch_size", c.minibatch_size},
       {"steps_per_epoch", c.steps_per_epoch},
       {"learning_rate", c.adam.lr},
       {"beta1", c.adam.beta1},
       {"beta2", c.adam.beta2},
       {"eps", c.adam.eps},
       {"dropout", c.dropout},
       {"loss", c.loss},
       {"tile_size", c.tile_size},
       {"seed", c.seed},
       {"checkpoint_every", c.checkpoint_every}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.at("epochs").get<int>();
  c.minibatch_size = j.at("minibatch_size").get<int>();
  c.steps_per_epoch = j.at("steps_per_epoch").get<int>();
  c.adam.lr = j.at("learning_rate").get<double>();
  c.adam.beta1 = j.value("beta1", 0.9);
  c.adam.beta2 = j.value("beta2", 0.999);
  c.adam.eps = j.value("eps", 1e-8);
  c.dropout = j.at("dropout").get<double>();
  c.loss = j.at("loss").get<LossConfig>();
  c.tile_size = j.at("tile_size").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.checkpoint_every = j.value("checkpoint_every", 0);
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_mae = 0.0;       // physical units, median head, training batches
  double val_mae = 0.0;         // physical units; NaN when no validation set
  double val_coverage = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  static std::string csv_header() {
    return "epoch,train_loss,train_mae,val_mae,val_coverage,seconds";
  }

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("history: cannot write " + path.string());
    os << csv_header() << '\n';
    os.precision(12);
    for (const auto& e : epochs)
      os << e.epoch << ',' << e.train_loss << ',' << e.train_mae << ',' << e.val_mae << ','
         << e.val_coverage << ',' << e.seconds << '\n';
  }
};

// Target scaling used during optimization; inverted exactly on output.
struct TargetRange {
  double min = 0.0;
  double max = 1.0;

  double range() const { return max - min; }
};

inline TargetRange fit_target_range(const std::vector<const Sample*>& train) {
  TargetRange tr{std::numeric_limits<double>::infinity(),
                 -std::numeric_limits<double>::infinity()};
  for (const auto* s : train) {
    for (size_t p = 0; p < s->target.values.size(); ++p) {
      if (!s->mask.valid.valid[p] || !s->target.valid.valid[p]) continue;
      tr.min = std::min(tr.min, double(s->target.values.values[p]));
      tr.max = std::max(tr.max, double(s->target.values.values[p]));
    }
  }
  if (!(tr.max > tr.min))
    throw DegenerateBandError("fit_target_range: degenerate target distribution");
  return tr;
}

// Full-image inference in physical units.
inline QuantileTriple predict_physical(const UNet& model, const BandStack& stack,
                                       const BandStats& stats, const TargetRange& target_range) {
  if (stack.band_count() != static_cast<size_t>(model.config().in_bands))
    throw ShapeError("predict: band count does not match model");
  BandStack norm = normalize(stack, stats);
  Tensor3 x(static_cast<int>(norm.band_count()), norm.grid.height, norm.grid.width);
  for (size_t b = 0; b < norm.band_count(); ++b)
    std::copy(norm.bands[b].values.begin(), norm.bands[b].values.end(),
              x.values.begin() + static_cast<std::ptrdiff_t>(b * norm.bands[b].size()));
  QuantileTriple t = model.predict(x);
  const double lo = target_range.min, range = target_range.range();
  for (Plane* p : {&t.lower, &t.median, &t.upper})
    for (auto& v : p->values) v = static_cast<float>(lo + range * v);
  return t;
}

class Trainer {
public:
  Trainer(UNet& model, TrainConfig cfg, BandStats input_stats, TargetRange target_range)
      : model_(model),
        cfg_(std::move(cfg)),
        stats_(std::move(input_stats)),
        target_range_(target_range),
        adam_(model.params(), cfg_.adam),
        rng_(static_cast<uint32_t>(cfg_.seed ^ 0x9e3779b97f4a7c15ull)) {
    cfg_.validate();
    if (cfg_.tile_size % model_.spatial_multiple() != 0)
      throw ConfigError("TrainConfig: tile_size must be a multiple of 2^depth");
  }

  const TrainHistory& history() const { return history_; }
  const BandStats& input_stats() const { return stats_; }
  const TargetRange& target_range() const { return target_range_; }
  int completed_epochs() const { return completed_epochs_; }

  void save_resumable(const std::filesystem::path& path) const {
    Checkpoint ckpt;
    ckpt.config = model_.config();
    ckpt.tensors = model_.params().tensors();
    adam_.export_state(model_.params(), ckpt.tensors);
    std::ostringstream rs;
    rs << rng_;
    ckpt.metadata["rng_state"] = rs.str();
    ckpt.metadata["adam_t"] = std::to_string(adam_.step_count());
    ckpt.metadata["epoch"] = std::to_string(completed_epochs_);
    attach_normalization(ckpt.metadata);
    nlohmann::json tc = cfg_;
    ckpt.metadata["train_config"] = tc.dump();
    save_checkpoint_file(ckpt, path);
  }

  void restore(const Checkpoint& ckpt) {
    if (!ckpt.config.compatible_with(model_.config()))
      throw IncompatibleCheckpointError("restore: model config mismatch");
    for (auto& t : model_.params().tensors()) {
      const auto* src = ckpt.find(t.name);
      if (!src) throw IncompatibleCheckpointError("restore: missing tensor " + t.name);
      t.v = src->v;
    }
    const auto it_t = ckpt.metadata.find("adam_t");
    const auto it_r = ckpt.metadata.find("rng_state");
    const auto it_e = ckpt.metadata.find("epoch");
    if (it_t == ckpt.metadata.end() || it_r == ckpt.metadata.end())
      throw IncompatibleCheckpointError("restore: checkpoint has no training state");
    adam_.import_state(model_.params(), ckpt, std::stoull(it_t->second));
    std::istringstream rs(it_r->second);
    rs >> rng_;
    completed_epochs_ = it_e != ckpt.metadata.end() ? std::stoi(it_e->second) : 0;
  }

  // Runs cfg.epochs - completed_epochs further epochs. run_dir may be empty
  // (no files written).
  void run(const std::vector<const Sample*>& train_set,
           const std::vector<const Sample*>& val_set,
           const std::filesystem::path& run_dir = {}, std::ostream* log = nullptr) {
    if (train_set.empty()) throw EmptySampleError("train: empty training set");
    prepare(train_set);

    const bool with_files = !run_dir.empty();
    if (with_files) std::filesystem::create_directories(run_dir);

    for (int epoch = completed_epochs_; epoch < cfg_.epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      double loss_sum = 0.0;
      double abs_err_sum = 0.0;
      size_t abs_err_n = 0;
      int effective_steps = 0;
      for (int step = 0; step < cfg_.steps_per_epoch; ++step) {
        const double loss =
            train_step(epoch * cfg_.steps_per_epoch + step, abs_err_sum, abs_err_n, log);
        if (std::isnan(loss)) continue;  // skipped empty batch, already logged
        loss_sum += loss;
        ++effective_steps;
      }
      EpochRecord rec;
      rec.epoch = epoch + 1;
      rec.train_loss = effective_steps ? loss_sum / effective_steps
                                       : std::numeric_limits<double>::quiet_NaN();
      rec.train_mae = abs_err_n ? target_range_.range() * abs_err_sum / double(abs_err_n)
                                : std::numeric_limits<double>::quiet_NaN();
      evaluate_validation(val_set, rec);
      rec.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      history_.epochs.push_back(rec);
      completed_epochs_ = epoch + 1;

      if (log)
        *log << "epoch " << rec.epoch << " loss " << rec.train_loss << " train_mae "
             << rec.train_mae << " val_mae " << rec.val_mae << " coverage "
             << rec.val_coverage << '\n';

      if (with_files) {
        history_.write_csv(run_dir / "history.csv");
        if (!val_set.empty() && (best_epoch_ < 0 || rec.val_mae < best_val_mae_)) {
          best_val_mae_ = rec.val_mae;
          best_epoch_ = rec.epoch;
          save_resumable(run_dir / "checkpoint_best.pmq");
        }
        if (cfg_.checkpoint_every > 0 && rec.epoch % cfg_.checkpoint_every == 0)
          save_resumable(run_dir / ("checkpoint_epoch" + std::to_string(rec.epoch) + ".pmq"));
      }
    }
    if (with_files) save_resumable(run_dir / "checkpoint_final.pmq");
  }

  void attach_normalization(std::map<std::string, std::string>& metadata) const {
    nlohmann::json stats = stats_;
    metadata["band_stats"] = stats.dump();
    metadata["target_min"] = std::to_string(target_range_.min);
    metadata["target_max"] = std::to_string(target_range_.max);
  }

private:
  struct PreparedSample {
    Tensor3 input;   // normalized bands
    Plane target;    // normalized to [0,1] by the training target range
    Mask mask;       // combined validity
  };

  void prepare(const std::vector<const Sample*>& train_set) {
    prepared_.clear();
    prepared_.reserve(train_set.size());
    for (const auto* s : train_set) {
      if (s->input.band_count() != static_cast<size_t>(model_.config().in_bands))
        throw ShapeError("train: sample band count does not match model");
      if (s->input.grid.height < cfg_.tile_size || s->input.grid.width < cfg_.tile_size)
        throw ShapeError("train: sample smaller than tile_size");
      BandStack norm = normalize(s->input, stats_);
      PreparedSample p;
      p.input = Tensor3(static_cast<int>(norm.band_count()), norm.grid.height, norm.grid.width);
      for (size_t b = 0; b < norm.band_count(); ++b)
        std::copy(norm.bands[b].values.begin(), norm.bands[b].values.end(),
                  p.input.values.begin() + static_cast<std::ptrdiff_t>(b * norm.bands[b].size()));
      p.target = Plane(norm.grid.height, norm.grid.width);
      p.mask = Mask(norm.grid.height, norm.grid.width);
      for (size_t i = 0; i < p.target.size(); ++i) {
        const bool ok = s->mask.valid.valid[i] && s->target.valid.valid[i] &&
                        s->input.valid.valid[i];
        p.mask.valid[i] = ok ? 1 : 0;
        p.target.values[i] = ok ? static_cast<float>(
                                      (s->target.values.values[i] - target_range_.min) /
                                      target_range_.range())
                                : 0.0f;
      }
      prepared_.push_back(std::move(p));
    }
  }

  // Returns the batch loss, or NaN when the batch had no valid pixels.
  double train_step(int global_step, double& abs_err_sum, size_t& abs_err_n,
                    std::ostream* log) {
    const int ts = cfg_.tile_size;
    struct Crop {
      size_t sample;
      int y0, x0;
    };
    std::vector<Crop> crops(static_cast<size_t>(cfg_.minibatch_size));
    std::uniform_int_distribution<size_t> pick(0, prepared_.size() - 1);
    for (auto& c : crops) {
      c.sample = pick(rng_);
      const auto& p = prepared_[c.sample];
      std::uniform_int_distribution<int> oy(0, p.input.height - ts);
      std::uniform_int_distribution<int> ox(0, p.input.width - ts);
      c.y0 = oy(rng_);
      c.x0 = ox(rng_);
    }

    // pass 1: count valid pixels across the batch
    size_t n_valid = 0;
    for (const auto& c : crops) {
      const auto& p = prepared_[c.sample];
      for (int y = 0; y < ts; ++y)
        for (int x = 0; x < ts; ++x)
          if (p.mask.at(c.y0 + y, c.x0 + x)) ++n_valid;
    }
    if (n_valid == 0) {
      if (log) *log << "warning: step " << global_step << " skipped (no valid pixels)\n";
      return std::numeric_limits<double>::quiet_NaN();
    }

    const LossConfig& lc = cfg_.loss;
    const std::array<double, 3> qs = {lc.quantiles.lower, lc.quantiles.median,
                                      lc.quantiles.upper};
    const std::array<double, 3> gammas = {lc.gamma_lower, 1.0, lc.gamma_upper};

    nn::GradStore grads(model_.params());
    double loss_sum = 0.0;
    for (const auto& c : crops) {
      const auto& p = prepared_[c.sample];
      Tensor3 x(p.input.channels, ts, ts);
      for (int ch = 0; ch < p.input.channels; ++ch)
        for (int y = 0; y < ts; ++y)
          for (int xx = 0; xx < ts; ++xx)
            x.at(ch, y, xx) = p.input.at(ch, c.y0 + y, c.x0 + xx);

      UNetTrace trace;
      Tensor3 out = model_.forward(x, /*training=*/true, &rng_, &trace);
      Tensor3 d_out(3, ts, ts);
      for (int y = 0; y < ts; ++y) {
        for (int xx = 0; xx < ts; ++xx) {
          if (!p.mask.at(c.y0 + y, c.x0 + xx)) continue;
          const double target = p.target.at(c.y0 + y, c.x0 + xx);
          for (int h = 0; h < 3; ++h) {
            const double r = target - out.at(h, y, xx);
            if (!std::isfinite(r))
              throw DivergenceError("train: non-finite residual at step " +
                                    std::to_string(global_step));
            loss_sum += gammas[size_t(h)] * pointwise_loss(r, qs[size_t(h)], lc);
            d_out.at(h, y, xx) = static_cast<float>(
                -gammas[size_t(h)] * loss_gradient(r, qs[size_t(h)], lc) / double(n_valid));
            if (h == 1) {
              abs_err_sum += std::abs(r);
              ++abs_err_n;
            }
          }
        }
      }
      model_.backward(trace, d_out, grads);
    }
    const double loss = loss_sum / static_cast<double>(n_valid);
    if (!std::isfinite(loss))
      throw DivergenceError("train: non-finite loss at step " + std::to_string(global_step));
    adam_.step(model_.params(), grads);
    return loss;
  }

  void evaluate_validation(const std::vector<const Sample*>& val_set, EpochRecord& rec) {
    if (val_set.empty()) {
      rec.val_mae = std::numeric_limits<double>::quiet_NaN();
      rec.val_coverage = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    double abs_sum = 0.0;
    size_t n = 0, covered = 0;
    for (const auto* s : val_set) {
      QuantileTriple t = predict_physical(model_, s->input, stats_, target_range_);
      for (size_t p = 0; p < s->target.values.size(); ++p) {
        if (!s->mask.valid.valid[p] || !s->target.valid.valid[p] || !s->input.valid.valid[p])
          continue;
        const double y = s->target.values.values[p];
        abs_sum += std::abs(t.median.values[p] - y);
        if (t.upper.values[p] >= t.lower.values[p] && y >= t.lower.values[p] &&
            y <= t.upper.values[p])
          ++covered;
        ++n;
      }
    }
    rec.val_mae = n ? abs_sum / double(n) : std::numeric_limits<double>::quiet_NaN();
    rec.val_coverage = n ? double(covered) / double(n) : std::numeric_limits<double>::quiet_NaN();
  }

  UNet& model_;
  TrainConfig cfg_;
  BandStats stats_;
  TargetRange target_range_;
  Adam adam_;
  std::mt19937 rng_;
  TrainHistory history_;
  std::vector<PreparedSample> prepared_;
  int completed_epochs_ = 0;
  double best_val_mae_ = 0.0;
  int best_epoch_ = -1;
};

}  // namespace pmq
