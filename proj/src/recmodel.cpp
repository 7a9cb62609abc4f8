#include "afl/recmodel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_set>

#include "afl/error.hpp"
#include "afl/rng.hpp"

namespace afl {

int ScorerArtifact::index_of(ItemId id) const {
  auto it = index_.find(id);
  return it == index_.end() ? -1 : it->second;
}

void ScorerArtifact::rebuild_index() {
  index_.clear();
  index_.reserve(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) index_[vocab[i]] = static_cast<int>(i);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

double log1p_exp(double x) {
  // log(1 + e^x), stable for both signs
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

std::vector<ItemId> collect_vocab(const std::vector<UserSequence>& train_split) {
  std::set<ItemId> vocab;
  for (const auto& seq : train_split)
    for (ItemId id : seq.items) vocab.insert(id);
  return {vocab.begin(), vocab.end()};
}

// Mean of in_emb rows over the context entries. OOV-free by construction in
// training; at scoring time unknown history items contribute nothing.
void context_mean(const ScorerArtifact& a, const std::vector<int>& context, double* out) {
  std::fill(out, out + a.dim, 0.0);
  if (context.empty()) return;
  for (int idx : context)
    for (int d = 0; d < a.dim; ++d) out[d] += a.in_emb[static_cast<std::size_t>(idx) * a.dim + d];
  const double inv = 1.0 / static_cast<double>(context.size());
  for (int d = 0; d < a.dim; ++d) out[d] *= inv;
}

double mf_score_from_mean(const ScorerArtifact& a, const double* mean, int item_idx) {
  const double* e = &a.out_emb[static_cast<std::size_t>(item_idx) * a.dim];
  double dot = 0.0;
  for (int d = 0; d < a.dim; ++d) dot += mean[d] * e[d];
  return dot + a.bias[item_idx];
}

std::vector<int> history_tail_indices(const ScorerArtifact& a, std::span<const ItemId> history) {
  const int w = std::max(1, a.meta.hyper.window);
  std::vector<int> context;
  const std::size_t start = history.size() > static_cast<std::size_t>(w)
                                ? history.size() - static_cast<std::size_t>(w)
                                : 0;
  for (std::size_t i = start; i < history.size(); ++i) {
    const int idx = a.index_of(history[i]);
    if (idx >= 0) context.push_back(idx);
  }
  return context;
}

void train_popularity(ScorerArtifact& a, const std::vector<UserSequence>& split) {
  a.counts.assign(a.vocab.size(), 0);
  for (const auto& seq : split)
    for (ItemId id : seq.items) a.counts[a.index_of(id)] += 1;
}

void train_markov1(ScorerArtifact& a, const std::vector<UserSequence>& split) {
  a.transitions.assign(a.vocab.size(), {});
  a.row_totals.assign(a.vocab.size(), 0);
  for (const auto& seq : split) {
    for (std::size_t t = 1; t < seq.items.size(); ++t) {
      const int prev = a.index_of(seq.items[t - 1]);
      const int next = a.index_of(seq.items[t]);
      a.transitions[prev][next] += 1;
      a.row_totals[prev] += 1;
    }
  }
}

std::vector<double> train_mf(ScorerArtifact& a, const std::vector<UserSequence>& split,
                             const Hyperparams& hyper, std::uint64_t seed) {
  const std::size_t v = a.vocab.size();
  if (v < 2) raise(ErrorKind::Training, "mf-pairwise needs a vocabulary of >= 2 items");
  a.dim = hyper.dim;
  a.in_emb.assign(v * hyper.dim, 0.0);
  a.out_emb.assign(v * hyper.dim, 0.0);
  a.bias.assign(v, 0.0);

  auto rng = make_rng(seed);
  for (auto& x : a.in_emb) x = (uniform_unit(rng) - 0.5) * 0.1;
  for (auto& x : a.out_emb) x = (uniform_unit(rng) - 0.5) * 0.1;

  const double lr = hyper.learning_rate;
  const double l2 = hyper.l2;
  std::vector<double> mean(hyper.dim);
  std::vector<double> epoch_losses;

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::int64_t n_examples = 0;
    for (std::size_t u = 0; u < split.size(); ++u) {
      const auto& items = split[u].items;
      for (std::size_t t = 1; t < items.size(); ++t) {
        const int pos = a.index_of(items[t]);
        const std::size_t start =
            t > static_cast<std::size_t>(hyper.window) ? t - static_cast<std::size_t>(hyper.window) : 0;
        std::vector<int> context;
        context.reserve(t - start);
        for (std::size_t i = start; i < t; ++i) context.push_back(a.index_of(items[i]));

        int neg = static_cast<int>(uniform_below(rng, v));
        while (neg == pos) neg = static_cast<int>(uniform_below(rng, v));

        context_mean(a, context, mean.data());
        const double x = mf_score_from_mean(a, mean.data(), pos) -
                         mf_score_from_mean(a, mean.data(), neg);
        loss_sum += log1p_exp(-x);
        ++n_examples;

        // d(-log sigmoid(x))/dx = sigmoid(x) - 1
        const double s = sigmoid(x) - 1.0;
        double* out_pos = &a.out_emb[static_cast<std::size_t>(pos) * hyper.dim];
        double* out_neg = &a.out_emb[static_cast<std::size_t>(neg) * hyper.dim];
        const double inv_ctx = context.empty() ? 0.0 : 1.0 / static_cast<double>(context.size());

        std::vector<double> diff(hyper.dim);
        for (int d = 0; d < hyper.dim; ++d) diff[d] = out_pos[d] - out_neg[d];

        for (int d = 0; d < hyper.dim; ++d) {
          const double gp = s * mean[d] + 2.0 * l2 * out_pos[d];
          const double gn = -s * mean[d] + 2.0 * l2 * out_neg[d];
          out_pos[d] -= lr * gp;
          out_neg[d] -= lr * gn;
        }
        a.bias[pos] -= lr * (s + 2.0 * l2 * a.bias[pos]);
        a.bias[neg] -= lr * (-s + 2.0 * l2 * a.bias[neg]);
        for (int c : context) {
          double* in_c = &a.in_emb[static_cast<std::size_t>(c) * hyper.dim];
          for (int d = 0; d < hyper.dim; ++d)
            in_c[d] -= lr * (s * diff[d] * inv_ctx + 2.0 * l2 * in_c[d]);
        }
      }
    }
    const double epoch_loss = n_examples > 0 ? loss_sum / static_cast<double>(n_examples) : 0.0;
    if (!std::isfinite(epoch_loss))
      raise(ErrorKind::Divergence, "non-finite loss at epoch " + std::to_string(epoch + 1));
    epoch_losses.push_back(epoch_loss);
  }
  return epoch_losses;
}

}  // namespace

std::pair<ScorerArtifact, TrainReport> train(ScorerKind kind,
                                             const std::vector<UserSequence>& train_split,
                                             const Hyperparams& hyper, std::uint64_t seed) {
  if (train_split.empty()) raise(ErrorKind::Training, "empty train split");
  const auto t0 = std::chrono::steady_clock::now();

  ScorerArtifact artifact;
  artifact.kind = kind;
  artifact.vocab = collect_vocab(train_split);
  if (artifact.vocab.empty()) raise(ErrorKind::Training, "train split holds no items");
  artifact.rebuild_index();
  artifact.meta.seed = seed;
  artifact.meta.hyper = hyper;
  artifact.meta.epochs = kind == ScorerKind::MfPairwise ? hyper.epochs : 1;

  TrainReport report;
  report.seed = seed;
  switch (kind) {
    case ScorerKind::Popularity:
      train_popularity(artifact, train_split);
      break;
    case ScorerKind::Markov1:
      train_markov1(artifact, train_split);
      break;
    case ScorerKind::MfPairwise:
      report.epoch_losses = train_mf(artifact, train_split, hyper, seed);
      break;
  }
  artifact.meta.final_loss = report.epoch_losses.empty() ? 0.0 : report.epoch_losses.back();
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(artifact), std::move(report)};
}

double score(const ScorerArtifact& a, std::span<const ItemId> history, ItemId item) {
  const int idx = a.index_of(item);
  switch (a.kind) {
    case ScorerKind::Popularity:
      return idx < 0 ? 0.0 : static_cast<double>(a.counts[idx]);
    case ScorerKind::Markov1: {
      const std::size_t v = a.vocab.size();
      int prev = -1;
      if (!history.empty()) prev = a.index_of(history.back());
      std::int64_t count = 0;
      std::int64_t total = 0;
      if (prev >= 0) {
        total = a.row_totals[prev];
        if (idx >= 0) {
          const auto& row = a.transitions[prev];
          auto it = row.find(idx);
          if (it != row.end()) count = it->second;
        }
      }
      // add-one smoothing; an empty row or unknown item yields the smoothed floor
      return (static_cast<double>(count) + 1.0) /
             (static_cast<double>(total) + static_cast<double>(v));
    }
    case ScorerKind::MfPairwise: {
      if (idx < 0) return 0.0;  // zero embedding, zero bias
      std::vector<double> mean(a.dim);
      const auto context = history_tail_indices(a, history);
      context_mean(a, context, mean.data());
      return mf_score_from_mean(a, mean.data(), idx);
    }
  }
  return 0.0;
}

std::vector<double> score_candidates(const ScorerArtifact& a, std::span<const ItemId> history,
                                     const CandidateList& candidates) {
  std::vector<double> scores;
  scores.reserve(candidates.items.size());
  for (ItemId id : candidates.items) scores.push_back(score(a, history, id));
  return scores;
}

std::vector<ItemId> top_k(const ScorerArtifact& a, std::span<const ItemId> history,
                          const CandidateList& candidates, int k) {
  if (k < 1 || k > static_cast<int>(candidates.items.size()))
    raise(ErrorKind::Precondition, "k must lie in [1, candidate count]");
  const auto scores = score_candidates(a, history, candidates);
  std::vector<std::size_t> order(candidates.items.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t lhs, std::size_t rhs) {
    if (scores[lhs] != scores[rhs]) return scores[lhs] > scores[rhs];
    return candidates.items[lhs] < candidates.items[rhs];
  });
  std::vector<ItemId> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) out.push_back(candidates.items[order[i]]);
  return out;
}

RewardScore reward_score(const ScorerArtifact& reward_artifact, std::span<const ItemId> history,
                         ItemId item, double temperature) {
  RewardScore s;
  s.raw = score(reward_artifact, history, item);
  s.normalized = sigmoid(s.raw / temperature);
  return s;
}

// ---- pairwise loss & gradient check ----

namespace {

double mf_pair_margin(const ScorerArtifact& a, const PairwiseSample& s) {
  std::vector<double> mean(a.dim);
  context_mean(a, s.context, mean.data());
  return mf_score_from_mean(a, mean.data(), s.pos) - mf_score_from_mean(a, mean.data(), s.neg);
}

double l2_term(const ScorerArtifact& a, const PairwiseSample& s, double l2) {
  double sum = 0.0;
  const auto sq_row = [&](const std::vector<double>& m, int idx) {
    double acc = 0.0;
    for (int d = 0; d < a.dim; ++d) {
      const double x = m[static_cast<std::size_t>(idx) * a.dim + d];
      acc += x * x;
    }
    return acc;
  };
  sum += sq_row(a.out_emb, s.pos) + sq_row(a.out_emb, s.neg);
  sum += a.bias[s.pos] * a.bias[s.pos] + a.bias[s.neg] * a.bias[s.neg];
  for (int c : s.context) sum += sq_row(a.in_emb, c);
  return l2 * sum;
}

}  // namespace

double pairwise_loss(const ScorerArtifact& a, const PairwiseSample& s, double l2) {
  if (a.kind != ScorerKind::MfPairwise)
    raise(ErrorKind::Precondition, "pairwise loss is defined for mf-pairwise artifacts");
  return log1p_exp(-mf_pair_margin(a, s)) + l2_term(a, s, l2);
}

std::vector<double> pairwise_grad(const ScorerArtifact& a, const PairwiseSample& s, double l2) {
  if (a.kind != ScorerKind::MfPairwise)
    raise(ErrorKind::Precondition, "pairwise gradient is defined for mf-pairwise artifacts");
  const std::size_t v = a.vocab.size();
  const std::size_t emb = v * static_cast<std::size_t>(a.dim);
  std::vector<double> grad(emb * 2 + v, 0.0);
  double* g_in = grad.data();
  double* g_out = grad.data() + emb;
  double* g_bias = grad.data() + 2 * emb;

  std::vector<double> mean(a.dim);
  context_mean(a, s.context, mean.data());
  const double x = mf_score_from_mean(a, mean.data(), s.pos) -
                   mf_score_from_mean(a, mean.data(), s.neg);
  const double sg = sigmoid(x) - 1.0;

  const double* out_pos = &a.out_emb[static_cast<std::size_t>(s.pos) * a.dim];
  const double* out_neg = &a.out_emb[static_cast<std::size_t>(s.neg) * a.dim];
  for (int d = 0; d < a.dim; ++d) {
    g_out[static_cast<std::size_t>(s.pos) * a.dim + d] += sg * mean[d];
    g_out[static_cast<std::size_t>(s.neg) * a.dim + d] += -sg * mean[d];
  }
  g_bias[s.pos] += sg;
  g_bias[s.neg] += -sg;

  const double inv_ctx = s.context.empty() ? 0.0 : 1.0 / static_cast<double>(s.context.size());
  for (int c : s.context)
    for (int d = 0; d < a.dim; ++d)
      g_in[static_cast<std::size_t>(c) * a.dim + d] += sg * (out_pos[d] - out_neg[d]) * inv_ctx;

  // L2 on touched parameters, accumulated with the same multiplicity as the loss
  for (int d = 0; d < a.dim; ++d) {
    g_out[static_cast<std::size_t>(s.pos) * a.dim + d] += 2.0 * l2 * out_pos[d];
    g_out[static_cast<std::size_t>(s.neg) * a.dim + d] += 2.0 * l2 * out_neg[d];
  }
  g_bias[s.pos] += 2.0 * l2 * a.bias[s.pos];
  g_bias[s.neg] += 2.0 * l2 * a.bias[s.neg];
  for (int c : s.context)
    for (int d = 0; d < a.dim; ++d)
      g_in[static_cast<std::size_t>(c) * a.dim + d] +=
          2.0 * l2 * a.in_emb[static_cast<std::size_t>(c) * a.dim + d];

  return grad;
}

double gradient_check(const ScorerArtifact& artifact, const PairwiseSample& sample, double l2,
                      double h) {
  const std::vector<double> analytic = pairwise_grad(artifact, sample, l2);
  ScorerArtifact probe = artifact;
  const std::size_t v = artifact.vocab.size();
  const std::size_t emb = v * static_cast<std::size_t>(artifact.dim);

  const auto param_at = [&](std::size_t i) -> double& {
    if (i < emb) return probe.in_emb[i];
    if (i < 2 * emb) return probe.out_emb[i - emb];
    return probe.bias[i - 2 * emb];
  };

  double max_rel = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double& p = param_at(i);
    const double saved = p;
    p = saved + h;
    const double up = pairwise_loss(probe, sample, l2);
    p = saved - h;
    const double down = pairwise_loss(probe, sample, l2);
    p = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

// ---- persistence ----

namespace {
constexpr int kArtifactVersion = 1;
constexpr const char* kArtifactFormat = "afl-scorer";
}  // namespace

nlohmann::json artifact_to_json(const ScorerArtifact& a) {
  nlohmann::json params;
  switch (a.kind) {
    case ScorerKind::Popularity:
      params = {{"counts", a.counts}};
      break;
    case ScorerKind::Markov1: {
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& row : a.transitions) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& [next, count] : row) r.push_back({next, count});
        rows.push_back(std::move(r));
      }
      params = {{"transitions", std::move(rows)}, {"row_totals", a.row_totals}};
      break;
    }
    case ScorerKind::MfPairwise:
      params = {{"dim", a.dim}, {"in_emb", a.in_emb}, {"out_emb", a.out_emb}, {"bias", a.bias}};
      break;
  }
  return {{"format", kArtifactFormat},
          {"version", kArtifactVersion},
          {"kind", to_string(a.kind)},
          {"vocab", a.vocab},
          {"params", std::move(params)},
          {"meta",
           {{"seed", a.meta.seed},
            {"epochs", a.meta.epochs},
            {"final_loss", a.meta.final_loss},
            {"hyper",
             {{"dim", a.meta.hyper.dim},
              {"learning_rate", a.meta.hyper.learning_rate},
              {"l2", a.meta.hyper.l2},
              {"epochs", a.meta.hyper.epochs},
              {"window", a.meta.hyper.window}}}}}};
}

ScorerArtifact artifact_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != kArtifactFormat)
    raise(ErrorKind::Config, "not a scorer artifact file");
  if (j.at("version").get<int>() != kArtifactVersion)
    raise(ErrorKind::Config, "unsupported artifact version " + j.at("version").dump() +
                                 ", expected " + std::to_string(kArtifactVersion));
  ScorerArtifact a;
  a.kind = scorer_kind_from_string(j.at("kind").get<std::string>());
  j.at("vocab").get_to(a.vocab);
  const auto& params = j.at("params");
  switch (a.kind) {
    case ScorerKind::Popularity:
      params.at("counts").get_to(a.counts);
      break;
    case ScorerKind::Markov1: {
      a.transitions.clear();
      for (const auto& row : params.at("transitions")) {
        std::map<int, std::int64_t> r;
        for (const auto& pair : row) r[pair.at(0).get<int>()] = pair.at(1).get<std::int64_t>();
        a.transitions.push_back(std::move(r));
      }
      params.at("row_totals").get_to(a.row_totals);
      break;
    }
    case ScorerKind::MfPairwise:
      params.at("dim").get_to(a.dim);
      params.at("in_emb").get_to(a.in_emb);
      params.at("out_emb").get_to(a.out_emb);
      params.at("bias").get_to(a.bias);
      break;
  }
  const auto& meta = j.at("meta");
  meta.at("seed").get_to(a.meta.seed);
  meta.at("epochs").get_to(a.meta.epochs);
  meta.at("final_loss").get_to(a.meta.final_loss);
  const auto& hyper = meta.at("hyper");
  hyper.at("dim").get_to(a.meta.hyper.dim);
  hyper.at("learning_rate").get_to(a.meta.hyper.learning_rate);
  hyper.at("l2").get_to(a.meta.hyper.l2);
  hyper.at("epochs").get_to(a.meta.hyper.epochs);
  hyper.at("window").get_to(a.meta.hyper.window);
  a.rebuild_index();

  for (const auto& x : a.in_emb)
    if (!std::isfinite(x)) raise(ErrorKind::Config, "non-finite parameter in artifact");
  for (const auto& x : a.out_emb)
    if (!std::isfinite(x)) raise(ErrorKind::Config, "non-finite parameter in artifact");
  for (const auto& x : a.bias)
    if (!std::isfinite(x)) raise(ErrorKind::Config, "non-finite parameter in artifact");
  return a;
}

void save_artifact(const ScorerArtifact& artifact, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(ErrorKind::Io, "cannot write artifact " + path);
  out << artifact_to_json(artifact).dump(2) << '\n';
}

ScorerArtifact load_artifact(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::Io, "cannot open artifact " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Parse, "artifact " + path + ": " + e.what());
  }
  return artifact_from_json(j);
}

}  // namespace afl
