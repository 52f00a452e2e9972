#pragma once

// Linear probes over frozen embeddings: class-balanced BCE, Adam, per-task
// AUROC, and aggregation across questions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rave/bytes.hpp"
#include "rave/error.hpp"

namespace rave {

enum class Split : std::uint8_t { Train, Val, Test };

/// Row-major N x D embeddings with N x T labels and observation mask.
/// mask == 0 entries are ignored by the loss and by every metric.
struct ProbeDataset {
  std::size_t n = 0, d = 0, t = 0;
  std::vector<double> embeddings;   // [i * d + k]
  std::vector<std::uint8_t> labels; // [i * t + j]
  std::vector<std::uint8_t> mask;   // [i * t + j]
  std::vector<Split> split;
  std::vector<std::string> question_ids;
  std::vector<std::string> row_ids;

  [[nodiscard]] std::span<const double> row(std::size_t i) const {
    return std::span<const double>(embeddings).subspan(i * d, d);
  }
  [[nodiscard]] std::vector<std::size_t> rows_in(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }
};

inline void validate(const ProbeDataset& ds) {
  if (ds.n < 1 || ds.d < 1 || ds.t < 1) fail(Errc::InvalidDataset, "N, D and T must all be at least 1");
  if (ds.embeddings.size() != ds.n * ds.d || ds.labels.size() != ds.n * ds.t || ds.mask.size() != ds.n * ds.t ||
      ds.split.size() != ds.n)
    fail(Errc::InvalidDataset, "array sizes disagree with N, D, T");
  if (!ds.question_ids.empty() && ds.question_ids.size() != ds.t)
    fail(Errc::InvalidDataset, "question id count disagrees with T");
}

/// D x T weights (row-major, [k * t + j]) and per-task bias.
struct ProbeModel {
  std::size_t d = 0, t = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  ProbeModel() = default;
  ProbeModel(std::size_t d_, std::size_t t_) : d(d_), t(t_), weights(d_ * t_, 0.0), bias(t_, 0.0) {}
  bool operator==(const ProbeModel&) const = default;
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 8192;
  double weight_decay = 0;
  std::size_t epochs = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
};

struct ClassWeights {
  std::vector<double> positive_weight;  // negatives / positives, clamped
  std::vector<bool> flagged;            // no observed positives
};

/// Positive-class weight per task over the observed entries of `rows`:
/// #negatives / #positives clamped to [1e-3, 1e3]. Tasks without positives
/// are flagged and get weight 1.
inline ClassWeights class_weights(const ProbeDataset& ds, std::span<const std::size_t> rows) {
  ClassWeights cw{std::vector<double>(ds.t, 1.0), std::vector<bool>(ds.t, false)};
  for (std::size_t j = 0; j < ds.t; ++j) {
    std::size_t pos = 0, neg = 0;
    for (auto i : rows) {
      if (!ds.mask[i * ds.t + j]) continue;
      (ds.labels[i * ds.t + j] ? pos : neg) += 1;
    }
    if (pos == 0) {
      cw.flagged[j] = true;
      continue;
    }
    cw.positive_weight[j] = std::clamp(static_cast<double>(neg) / static_cast<double>(pos), 1e-3, 1e3);
  }
  return cw;
}

inline ClassWeights class_weights(const ProbeDataset& ds) {
  std::vector<std::size_t> all(ds.n);
  std::iota(all.begin(), all.end(), 0);
  return class_weights(ds, all);
}

namespace detail {

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

struct LossGradient {
  double loss = 0;
  std::size_t observed = 0;
  std::vector<double> grad_weights;  // D x T
  std::vector<double> grad_bias;     // T
};

/// Mean over observed (i, j) in `rows` of
///   w_j * y * softplus(-z) + (1 - y) * softplus(z),   z = x_i . W_j + b_j,
/// and its gradient.
inline LossGradient loss_and_gradient(const ProbeDataset& ds, const ProbeModel& m, const std::vector<double>& pos_weight,
                                      std::span<const std::size_t> rows) {
  LossGradient g{0, 0, std::vector<double>(ds.d * ds.t, 0.0), std::vector<double>(ds.t, 0.0)};
  std::vector<double> z(ds.t), dz(ds.t);
  for (auto i : rows) {
    const auto x = ds.row(i);
    for (std::size_t j = 0; j < ds.t; ++j) z[j] = m.bias[j];
    for (std::size_t k = 0; k < ds.d; ++k) {
      const double xk = x[k];
      const double* w = m.weights.data() + k * ds.t;
      for (std::size_t j = 0; j < ds.t; ++j) z[j] += xk * w[j];
    }
    bool any = false;
    for (std::size_t j = 0; j < ds.t; ++j) {
      dz[j] = 0;
      if (!ds.mask[i * ds.t + j]) continue;
      any = true;
      ++g.observed;
      const double y = ds.labels[i * ds.t + j] ? 1.0 : 0.0;
      const double w = pos_weight[j];
      g.loss += w * y * detail::softplus(-z[j]) + (1 - y) * detail::softplus(z[j]);
      dz[j] = detail::sigmoid(z[j]) * (w * y + 1 - y) - w * y;
    }
    if (!any) continue;
    for (std::size_t k = 0; k < ds.d; ++k) {
      const double xk = x[k];
      double* gw = g.grad_weights.data() + k * ds.t;
      for (std::size_t j = 0; j < ds.t; ++j) gw[j] += xk * dz[j];
    }
    for (std::size_t j = 0; j < ds.t; ++j) g.grad_bias[j] += dz[j];
  }
  if (g.observed > 0) {
    const double inv = 1.0 / static_cast<double>(g.observed);
    g.loss *= inv;
    for (auto& v : g.grad_weights) v *= inv;
    for (auto& v : g.grad_bias) v *= inv;
  }
  return g;
}

/// Adam state over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n, const OptimizerConfig& cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i] + cfg_.weight_decay * params[i];
      m_[i] = cfg_.beta1 * m_[i] + (1 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1 - cfg_.beta2) * g * g;
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      params[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }

  [[nodiscard]] std::size_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

struct TrainLog {
  std::vector<double> step_loss;  // batch loss before each update
  ClassWeights weights;
};

/// Trains all tasks jointly on the train split from a zero start. Each epoch
/// visits train rows in a seeded shuffle; the last partial batch is kept.
inline ProbeModel train_probe(const ProbeDataset& ds, const OptimizerConfig& cfg, TrainLog* log = nullptr) {
  validate(ds);
  auto train = ds.rows_in(Split::Train);
  if (train.empty()) fail(Errc::InvalidDataset, "train split is empty");
  if (cfg.batch_size == 0 || !(cfg.learning_rate > 0)) fail(Errc::InvalidConfig, "batch size and learning rate must be positive");

  const auto cw = class_weights(ds, train);
  ProbeModel model(ds.d, ds.t);
  const std::size_t nw = ds.d * ds.t;
  std::vector<double> params(nw + ds.t, 0.0), grad(nw + ds.t);
  Adam adam(params.size(), cfg);
  SplitMix rng(cfg.seed);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    seeded_shuffle(std::span<std::size_t>(train), rng);
    for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
      const auto len = std::min(cfg.batch_size, train.size() - start);
      const std::span<const std::size_t> batch(train.data() + start, len);
      std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(nw), model.weights.begin());
      std::copy(params.begin() + static_cast<std::ptrdiff_t>(nw), params.end(), model.bias.begin());
      auto lg = loss_and_gradient(ds, model, cw.positive_weight, batch);
      if (lg.observed == 0) continue;
      if (!std::isfinite(lg.loss)) {
        double wmax = 0;
        for (double p : params) wmax = std::max(wmax, std::abs(p));
        fail(Errc::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", batch at row " + std::to_string(start) +
                                      ": loss " + std::to_string(lg.loss) + ", max |param| " + std::to_string(wmax));
      }
      if (log) log->step_loss.push_back(lg.loss);
      std::copy(lg.grad_weights.begin(), lg.grad_weights.end(), grad.begin());
      std::copy(lg.grad_bias.begin(), lg.grad_bias.end(), grad.begin() + static_cast<std::ptrdiff_t>(nw));
      adam.step(params, grad);
    }
  }
  std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(nw), model.weights.begin());
  std::copy(params.begin() + static_cast<std::ptrdiff_t>(nw), params.end(), model.bias.begin());
  if (log) log->weights = cw;
  return model;
}

/// Logits for every row and task, [i * t + j].
inline std::vector<double> predict(const ProbeDataset& ds, const ProbeModel& m) {
  std::vector<double> out(ds.n * ds.t);
  for (std::size_t i = 0; i < ds.n; ++i) {
    const auto x = ds.row(i);
    for (std::size_t j = 0; j < ds.t; ++j) {
      double z = m.bias[j];
      for (std::size_t k = 0; k < ds.d; ++k) z += x[k] * m.weights[k * ds.t + j];
      out[i * ds.t + j] = z;
    }
  }
  return out;
}

/// Mann-Whitney AUROC with midranks for ties. Throws UndefinedMetric when
/// either class is absent.
inline double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) fail(Errc::UndefinedMetric, "scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (auto l : labels) pos += l ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) fail(Errc::UndefinedMetric, "AUROC needs at least one positive and one negative");
  for (double s : scores)
    if (std::isnan(s)) fail(Errc::UndefinedMetric, "NaN score");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum keeps midranks integral.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const std::uint64_t twice_midrank = (i + 1) + (j + 1);
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]]) twice_rank_sum += twice_midrank;
    i = j + 1;
  }
  // U = R+ - n+(n+ + 1)/2 ; AUROC = U / (n+ n-). Computed as (2U / 2) exactly.
  const std::uint64_t twice_u = twice_rank_sum - static_cast<std::uint64_t>(pos) * (pos + 1);
  return (static_cast<double>(twice_u) * 0.5) / (static_cast<double>(pos) * static_cast<double>(neg));
}

struct QuestionResult {
  std::string question_id;
  std::optional<double> auroc;  // nullopt when excluded
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::string status;  // "ok", "excluded:no-positives", "excluded:no-negatives"
};

struct EvalTable {
  std::vector<QuestionResult> questions;
  std::optional<double> mean_auroc;
  std::size_t included = 0;
};

/// Per-question AUROC on observed test entries. Questions lacking positives
/// (or negatives) in the test split are excluded from the mean.
inline EvalTable evaluate_scores(const ProbeDataset& ds, std::span<const double> scores) {
  const auto test = ds.rows_in(Split::Test);
  if (test.empty()) fail(Errc::InvalidDataset, "test split is empty");
  EvalTable table;
  double sum = 0;
  for (std::size_t j = 0; j < ds.t; ++j) {
    QuestionResult q;
    q.question_id = j < ds.question_ids.size() ? ds.question_ids[j] : "q" + std::to_string(j);
    std::vector<double> s;
    std::vector<std::uint8_t> y;
    for (auto i : test) {
      if (!ds.mask[i * ds.t + j]) continue;
      s.push_back(scores[i * ds.t + j]);
      y.push_back(ds.labels[i * ds.t + j]);
      (y.back() ? q.positives : q.negatives) += 1;
    }
    if (q.positives == 0) {
      q.status = "excluded:no-positives";
    } else if (q.negatives == 0) {
      q.status = "excluded:no-negatives";
    } else {
      q.auroc = auroc(s, y);
      q.status = "ok";
      sum += *q.auroc;
      ++table.included;
    }
    table.questions.push_back(std::move(q));
  }
  if (table.included > 0) table.mean_auroc = sum / static_cast<double>(table.included);
  return table;
}

inline EvalTable evaluate(const ProbeDataset& ds, const ProbeModel& m) { return evaluate_scores(ds, predict(ds, m)); }

struct WinRate {
  std::size_t compared = 0;
  std::size_t wins = 0, ties = 0, losses = 0;
  double rate = 0;  // (wins + ties / 2) / compared
};

/// Head-to-head over questions included in both tables (matched by id).
inline WinRate win_rate(const EvalTable& a, const EvalTable& b) {
  WinRate w;
  for (const auto& qa : a.questions) {
    if (!qa.auroc) continue;
    const auto it = std::find_if(b.questions.begin(), b.questions.end(),
                                 [&](const QuestionResult& qb) { return qb.question_id == qa.question_id; });
    if (it == b.questions.end() || !it->auroc) continue;
    ++w.compared;
    if (*qa.auroc > *it->auroc)
      ++w.wins;
    else if (*qa.auroc < *it->auroc)
      ++w.losses;
    else
      ++w.ties;
  }
  if (w.compared > 0)
    w.rate = (static_cast<double>(w.wins) + 0.5 * static_cast<double>(w.ties)) / static_cast<double>(w.compared);
  return w;
}

}  // namespace rave
