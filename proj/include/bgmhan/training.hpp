#pragma once

// Weighted cross-entropy training with an L2 penalty, AdamW updates, gradient
// clipping, plateau learning-rate decay and early stopping; plus grid search.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bgmhan/error.hpp"
#include "bgmhan/gradcheck.hpp"
#include "bgmhan/model.hpp"
#include "bgmhan/profile.hpp"
#include "bgmhan/random.hpp"
#include "bgmhan/tensor.hpp"

namespace bgmhan {

inline constexpr double kProbClamp = 1e-12;

struct TrainConfig {
  double lr = 1e-5;
  std::size_t batch = 32;
  std::size_t max_epochs = 50;
  double plateau_factor = 0.1;
  std::size_t plateau_patience = 3;
  double lr_min = 1e-7;
  std::size_t early_stop_patience = 10;
  double clip_norm = 1.0;
  double weight_decay = 1e-4;  // lambda of the L2 penalty in the loss
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double decoupled_decay = 0.0;  // AdamW's decoupled decay, applied in the update
  double min_improvement = 1e-6;
  bool class_weighting = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0)) throw UsageError("train config: lr must be positive");
    if (!(plateau_factor > 0 && plateau_factor < 1)) throw UsageError("train config: plateau_factor must lie in (0, 1)");
    if (!(lr_min > 0)) throw UsageError("train config: lr_min must be positive");
    if (batch < 1 || max_epochs < 1 || plateau_patience < 1 || early_stop_patience < 1) {
      throw UsageError("train config: counts must be at least 1");
    }
    if (!(clip_norm > 0)) throw UsageError("train config: clip_norm must be positive");
    if (weight_decay < 0 || decoupled_decay < 0) throw UsageError("train config: decay must be nonnegative");
  }

  bool operator==(const TrainConfig&) const = default;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch", c.batch},
          {"max_epochs", c.max_epochs},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"lr_min", c.lr_min},
          {"early_stop_patience", c.early_stop_patience},
          {"clip_norm", c.clip_norm},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"decoupled_decay", c.decoupled_decay},
          {"min_improvement", c.min_improvement},
          {"class_weighting", c.class_weighting},
          {"seed", c.seed}};
}

inline void update_from_json(TrainConfig& c, const nlohmann::json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "lr") c.lr = v.get<double>();
    else if (k == "batch") c.batch = v.get<std::size_t>();
    else if (k == "max_epochs") c.max_epochs = v.get<std::size_t>();
    else if (k == "plateau_factor") c.plateau_factor = v.get<double>();
    else if (k == "plateau_patience") c.plateau_patience = v.get<std::size_t>();
    else if (k == "lr_min") c.lr_min = v.get<double>();
    else if (k == "early_stop_patience") c.early_stop_patience = v.get<std::size_t>();
    else if (k == "clip_norm") c.clip_norm = v.get<double>();
    else if (k == "weight_decay") c.weight_decay = v.get<double>();
    else if (k == "beta1") c.beta1 = v.get<double>();
    else if (k == "beta2") c.beta2 = v.get<double>();
    else if (k == "adam_eps") c.adam_eps = v.get<double>();
    else if (k == "decoupled_decay") c.decoupled_decay = v.get<double>();
    else if (k == "min_improvement") c.min_improvement = v.get<double>();
    else if (k == "class_weighting") c.class_weighting = v.get<bool>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else throw UsageError("train config: unknown key '" + k + "'");
  }
}

// ---------------------------------------------------------------------------
// Losses

// w_y = N / (2 N_y)
inline std::array<double, 2> class_weights(std::size_t n0, std::size_t n1) {
  if (n0 == 0 || n1 == 0) throw UsageError("class_weights: both classes must be present");
  const double n = static_cast<double>(n0 + n1);
  return {n / (2.0 * static_cast<double>(n0)), n / (2.0 * static_cast<double>(n1))};
}

inline std::array<double, 2> class_weights(std::span<const int> labels) {
  std::size_t n1 = 0;
  for (const int y : labels) n1 += static_cast<std::size_t>(y == 1);
  return class_weights(labels.size() - n1, n1);
}

struct LossValue {
  double sum = 0;
  double mean = 0;
};

// -sum_i w_{y_i} (y_i log p_i + (1 - y_i) log(1 - p_i)), p clamped to [1e-12, 1 - 1e-12].
inline LossValue weighted_ce_loss(std::span<const double> probs, std::span<const int> labels,
                                  std::array<double, 2> weights) {
  if (probs.size() != labels.size() || probs.empty()) throw UsageError("weighted_ce_loss: length mismatch");
  LossValue out;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
    out.sum -= weights[labels[i]] * (labels[i] ? std::log(p) : std::log(1.0 - p));
  }
  out.mean = out.sum / static_cast<double>(probs.size());
  return out;
}

// Mean weighted CE as a tape op over probs [n x 1] (or [n]).
template <class T>
Tensor<T> weighted_ce(const Tensor<T>& probs, std::span<const int> labels, std::array<double, 2> weights) {
  const std::size_t n = probs.numel();
  if (labels.size() != n || n == 0) throw DimensionError("weighted_ce: label count does not match predictions");
  std::vector<double> coef(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double raw = probs[i];
    const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    const double w = weights[labels[i]];
    total -= w * (labels[i] ? std::log(p) : std::log(1.0 - p));
    const bool clamped = p != raw;
    coef[i] = clamped ? 0.0 : (labels[i] ? -w / p : w / (1.0 - p)) / static_cast<double>(n);
  }
  return detail::make_op<T>("weighted_ce", Shape{1}, {static_cast<T>(total / static_cast<double>(n))}, {&probs},
                            [coef = std::move(coef)](detail::Node<T>& out) {
                              if (auto* g = detail::grad_of(out.parents[0]))
                                for (std::size_t i = 0; i < coef.size(); ++i)
                                  (*g)[i] += static_cast<T>(coef[i] * out.grad[0]);
                            });
}

// loss + lambda * sum ||theta||^2 over the given tensors.
template <class T>
Tensor<T> regularized_loss(const Tensor<T>& loss, std::span<const Tensor<T>> params, double lambda) {
  if (lambda < 0) throw UsageError("regularized_loss: lambda must be nonnegative");
  if (lambda == 0 || params.empty()) return loss;
  Tensor<T> acc = loss;
  for (const auto& p : params) acc = add(acc, scale(sum_squares(p), static_cast<T>(lambda)));
  return acc;
}

// ---------------------------------------------------------------------------
// Scheduling

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_acc = 0;
  double lr = 0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainState {
  std::size_t epoch = 0;
  double lr = 0;
  double best_val_acc = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t since_improvement = 0;  // early-stop counter
  std::size_t plateau_count = 0;      // scheduler counter, reset when the lr drops
  std::vector<EpochRecord> history;

  static TrainState start(const TrainConfig& c) {
    TrainState s;
    s.lr = c.lr;
    return s;
  }
};

// Returns true when val_acc improved on the best so far.
inline bool scheduler_step(TrainState& s, double val_acc, const TrainConfig& c) {
  ++s.epoch;
  if (val_acc >= s.best_val_acc + c.min_improvement) {
    s.best_val_acc = val_acc;
    s.best_epoch = s.epoch;
    s.since_improvement = 0;
    s.plateau_count = 0;
    return true;
  }
  ++s.since_improvement;
  if (++s.plateau_count >= c.plateau_patience) {
    s.lr = std::max(s.lr * c.plateau_factor, c.lr_min);
    s.plateau_count = 0;
  }
  return false;
}

inline bool early_stop(const TrainState& s, const TrainConfig& c) { return s.since_improvement >= c.early_stop_patience; }

// ---------------------------------------------------------------------------
// Optimizer

template <class T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, const TrainConfig& c) : params_(std::move(params)), cfg_(c) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      const auto g = p.grad();
      auto x = p.data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double gj = g[j];
        m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * gj * gj;
        const double upd = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.adam_eps) + cfg_.decoupled_decay * x[j];
        x[j] = static_cast<T>(x[j] - lr * upd);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::span<Tensor<T>> params() { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Datasets and the training loop

struct LabeledSet {
  std::vector<std::string> ids;
  std::vector<TokenizedProfile> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
};

inline LabeledSet make_labeled_set(const std::vector<Profile>& profiles, const Vocabulary& vocab,
                                   const ModelConfig& cfg) {
  LabeledSet s;
  for (const auto& p : profiles) {
    if (!p.label) throw UsageError("profile '" + p.id + "' has no label");
    s.ids.push_back(p.id);
    s.inputs.push_back(tokenize_profile(impute_missing(p), vocab, cfg));
    s.labels.push_back(*p.label);
  }
  return s;
}

// Eval-mode probabilities, batched.
template <class T>
std::vector<double> predict_probs(const Model<T>& model, const std::vector<TokenizedProfile>& inputs,
                                  std::size_t batch = 64) {
  NoGradScope<T> no_grad;
  std::vector<double> out;
  out.reserve(inputs.size());
  std::vector<const TokenizedProfile*> ptrs;
  for (std::size_t i = 0; i < inputs.size(); i += batch) {
    ptrs.clear();
    for (std::size_t j = i; j < std::min(inputs.size(), i + batch); ++j) ptrs.push_back(&inputs[j]);
    const auto probs = model.forward(std::span<const TokenizedProfile* const>(ptrs));
    for (const T p : probs.values()) out.push_back(static_cast<double>(p));
  }
  return out;
}

inline int decide(double prob, double threshold = 0.5) { return prob > threshold ? 1 : 0; }

template <class T>
double accuracy(const Model<T>& model, const LabeledSet& set) {
  if (set.size() == 0) return 0.0;
  const auto probs = predict_probs(model, set.inputs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) hit += static_cast<std::size_t>(decide(probs[i]) == set.labels[i]);
  return static_cast<double>(hit) / static_cast<double>(probs.size());
}

struct TrainResult {
  TrainState state;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

template <class T>
TrainResult train(Model<T>& model, const LabeledSet& train_set, const LabeledSet& val_set, const TrainConfig& tc,
                  const EpochCallback& on_epoch = {}) {
  tc.validate();
  if (train_set.size() == 0) throw UsageError("train: empty training set");
  if (val_set.size() == 0) throw UsageError("train: empty validation set");
  const auto weights = tc.class_weighting ? class_weights(train_set.labels) : std::array<double, 2>{1.0, 1.0};

  const auto named = model.parameters();
  std::vector<Tensor<T>> params, decayed;
  for (const auto& [info, t] : named) {
    params.push_back(t);
    if (info.decay) decayed.push_back(t);
  }
  AdamW<T> opt(params, tc);
  Rng shuffle_rng(mix_seed(tc.seed, 1));
  Rng dropout_rng(mix_seed(tc.seed, 2));

  TrainResult result;
  auto& state = result.state;
  state = TrainState::start(tc);
  std::vector<std::vector<T>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : params) best.push_back(p.values());
  };

  std::vector<std::size_t> order(train_set.size());
  std::vector<const TokenizedProfile*> batch;
  std::vector<int> labels;
  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, shuffle_rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch) {
      batch.clear();
      labels.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + tc.batch); ++k) {
        batch.push_back(&train_set.inputs[order[k]]);
        labels.push_back(train_set.labels[order[k]]);
      }
      opt.zero_grad();
      GradTape<T> tape;
      Tensor<T> loss;
      try {
        TapeScope<T> scope(tape);
        const auto probs = model.forward(std::span<const TokenizedProfile* const>(batch), &dropout_rng);
        loss = regularized_loss<T>(weighted_ce(probs, labels, weights), decayed, tc.weight_decay);
      } catch (const NumericError& e) {
        throw NumericError("train: non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches + 1) + " (lr " + std::to_string(state.lr) + "): " + e.what());
      }
      tape.backward(loss);
      clip_grad_norm<T>(opt.params(), tc.clip_norm);
      opt.step(state.lr);
      loss_sum += static_cast<double>(loss.item());
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val_acc = accuracy(model, val_set);
    rec.lr = state.lr;
    state.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (scheduler_step(state, rec.val_acc, tc)) snapshot();
    if (early_stop(state, tc)) {
      result.stopped_early = true;
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(best[i].begin(), best[i].end(), params[i].data().begin());
  return result;
}

inline void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,train_loss,val_acc,lr\n";
  out.precision(17);
  for (const auto& r : history) out << r.epoch << ',' << r.train_loss << ',' << r.val_acc << ',' << r.lr << '\n';
}

// ---------------------------------------------------------------------------
// Grid search

struct GridSpace {
  std::vector<std::size_t> hidden{256, 512, 1024, 2048};
  std::vector<std::size_t> heads{4, 8, 16};
  std::vector<double> dropout{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  std::vector<double> lr{1e-4, 3e-4, 5e-4, 1e-5, 3e-5, 5e-5};
  std::vector<std::size_t> batch{8, 16, 32, 64};

  std::size_t size() const { return hidden.size() * heads.size() * dropout.size() * lr.size() * batch.size(); }
};

inline GridSpace grid_space_from_json(const nlohmann::json& j) {
  GridSpace g;
  for (const auto& [k, v] : j.items()) {
    if (k == "hidden") g.hidden = v.get<std::vector<std::size_t>>();
    else if (k == "heads") g.heads = v.get<std::vector<std::size_t>>();
    else if (k == "dropout") g.dropout = v.get<std::vector<double>>();
    else if (k == "lr") g.lr = v.get<std::vector<double>>();
    else if (k == "batch") g.batch = v.get<std::vector<std::size_t>>();
    else throw UsageError("grid space: unknown key '" + k + "'");
  }
  if (g.size() == 0) throw UsageError("grid space: every list must be nonempty");
  return g;
}

struct GridTrial {
  std::size_t index = 0;
  std::size_t hidden = 0;
  std::size_t heads = 0;
  double dropout = 0;
  double lr = 0;
  std::size_t batch = 0;
  std::uint64_t seed = 0;
  double val_acc = 0;
  std::size_t epochs = 0;
};

// Trials in cross-product order (hidden, heads, dropout, lr, batch), seeded
// base_seed + index.
inline std::vector<GridTrial> enumerate_grid(const GridSpace& g, std::uint64_t base_seed) {
  std::vector<GridTrial> out;
  for (const auto h : g.hidden)
    for (const auto hd : g.heads)
      for (const auto dr : g.dropout)
        for (const auto lr : g.lr)
          for (const auto b : g.batch) {
            GridTrial t;
            t.index = out.size();
            t.hidden = h;
            t.heads = hd;
            t.dropout = dr;
            t.lr = lr;
            t.batch = b;
            t.seed = base_seed + t.index;
            out.push_back(t);
          }
  return out;
}

// Descending val accuracy; ties go to the smaller hidden size, then trial order.
inline void sort_leaderboard(std::vector<GridTrial>& trials) {
  std::stable_sort(trials.begin(), trials.end(), [](const GridTrial& a, const GridTrial& b) {
    if (a.val_acc != b.val_acc) return a.val_acc > b.val_acc;
    if (a.hidden != b.hidden) return a.hidden < b.hidden;
    return a.index < b.index;
  });
}

struct GridResult {
  std::vector<GridTrial> leaderboard;  // sorted
  ModelConfig best_model;
  TrainConfig best_train;
};

// Trains every trial with early stopping. Heads that do not divide the hidden
// size are skipped.
template <class T>
GridResult grid_search(const GridSpace& space, const ModelConfig& base_model, const TrainConfig& base_train,
                       const LabeledSet& train_set, const LabeledSet& val_set,
                       const std::function<void(const GridTrial&)>& on_trial = {}) {
  GridResult r;
  for (auto trial : enumerate_grid(space, base_train.seed)) {
    ModelConfig mc = base_model;
    mc.hidden = trial.hidden;
    mc.heads = trial.heads;
    mc.dropout = trial.dropout;
    if (mc.hidden % mc.heads != 0) continue;
    TrainConfig tc = base_train;
    tc.lr = trial.lr;
    tc.batch = trial.batch;
    tc.seed = trial.seed;
    Model<T> model(mc, trial.seed);
    const auto res = train(model, train_set, val_set, tc);
    trial.val_acc = res.state.best_val_acc;
    trial.epochs = res.state.history.size();
    if (on_trial) on_trial(trial);
    r.leaderboard.push_back(trial);
  }
  if (r.leaderboard.empty()) throw UsageError("grid search: no valid trial in the space");
  sort_leaderboard(r.leaderboard);
  const auto& top = r.leaderboard.front();
  r.best_model = base_model;
  r.best_model.hidden = top.hidden;
  r.best_model.heads = top.heads;
  r.best_model.dropout = top.dropout;
  r.best_train = base_train;
  r.best_train.lr = top.lr;
  r.best_train.batch = top.batch;
  r.best_train.seed = top.seed;
  return r;
}

inline void write_leaderboard_csv(std::ostream& out, const std::vector<GridTrial>& board) {
  out << "rank,trial,hidden,heads,dropout,lr,batch,seed,epochs,val_acc\n";
  out.precision(17);
  for (std::size_t i = 0; i < board.size(); ++i) {
    const auto& t = board[i];
    out << (i + 1) << ',' << t.index << ',' << t.hidden << ',' << t.heads << ',' << t.dropout << ',' << t.lr << ','
        << t.batch << ',' << t.seed << ',' << t.epochs << ',' << t.val_acc << '\n';
  }
}

}  // namespace bgmhan
