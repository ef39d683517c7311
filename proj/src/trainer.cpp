#include "fedrank/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fedrank/errors.hpp"

namespace fedrank {

Vocabulary build_vocabulary(const Corpus& corpus) {
  std::set<std::string> seen;
  for (const auto& pd : corpus.participants)
    for (const auto& e : pd.splits.train) {
      seen.insert(e.question.begin(), e.question.end());
      seen.insert(e.answer.begin(), e.answer.end());
    }
  Vocabulary v;
  v.tokens = {"[pad]", "[cls]", "[sep]", "[unk]"};
  v.tokens.insert(v.tokens.end(), seen.begin(), seen.end());
  for (std::size_t i = 0; i < v.tokens.size(); ++i)
    v.ids.emplace(v.tokens[i], static_cast<int>(i));
  return v;
}

double hinge_loss(double s_pos, double s_neg) {
  const double m = 1.0 - s_pos + s_neg;
  return m > 0.0 ? m : 0.0;
}

PairBuild build_pairs(const std::vector<QAExample>& train,
                      const std::unordered_map<int, std::vector<int>>& negatives,
                      const Vocabulary& vocab, std::size_t negatives_per_question, Rng& rng) {
  std::unordered_map<int, const std::vector<std::string>*> answer_of;
  for (const auto& e : train) answer_of.emplace(e.aid, &e.answer);

  PairBuild out;
  for (const auto& g : group_by_question(train)) {
    auto nit = negatives.find(g.qid);
    const bool has_negs = nit != negatives.end() && !nit->second.empty();
    bool has_positive = false;
    for (const auto& [aid, answer, label] : g.candidates) {
      (void)aid;
      (void)answer;
      if (label == 1) has_positive = true;
    }
    if (!has_positive) continue;
    if (!has_negs) {
      ++out.skipped_no_negative;
      continue;
    }
    auto question_ids = vocab.encode(g.question);
    for (const auto& [aid, answer, label] : g.candidates) {
      (void)aid;
      if (label != 1) continue;
      auto positive_ids = vocab.encode(answer);
      std::size_t used = 0;
      for (int neg_aid : nit->second) {
        if (used == negatives_per_question) break;
        auto ait = answer_of.find(neg_aid);
        if (ait == answer_of.end()) continue;
        TrainPair p;
        p.question = question_ids;
        p.positive = positive_ids;
        p.negative = vocab.encode(*ait->second);
        p.participant = train.front().participant;
        out.pairs.push_back(std::move(p));
        ++used;
      }
    }
  }
  rng.shuffle(out.pairs);
  return out;
}

OptimizerState OptimizerState::make(const ParameterSet& params, double base_lr,
                                    std::int64_t total_steps) {
  OptimizerState s;
  s.base_lr = base_lr;
  s.total_steps = std::max<std::int64_t>(1, total_steps);
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& e : params) {
    s.m.push_back(Tensor::zeros(e.tensor.shape));
    s.v.push_back(Tensor::zeros(e.tensor.shape));
  }
  return s;
}

double lr_at(std::int64_t step, const OptimizerState& opt) {
  const auto total = opt.total_steps;
  const auto warmup = static_cast<std::int64_t>(
      std::ceil(opt.warmup_fraction * static_cast<double>(total)));
  if (step < warmup)
    return opt.base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  return opt.base_lr * static_cast<double>(total - step) /
         static_cast<double>(std::max<std::int64_t>(1, total - warmup));
}

void optimizer_step(ParameterSet& params, const std::vector<std::span<const double>>& grads,
                    OptimizerState& opt) {
  const bool zero_grads = grads.empty();
  if (!zero_grads && grads.size() != params.size())
    throw ConfigError("optimizer_step: gradient count " + std::to_string(grads.size()) +
                      " does not match parameter count " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size() && !zero_grads; ++i) {
    if (grads[i].size() != params[i].tensor.size())
      throw ConfigError("optimizer_step: gradient shape mismatch for " + params[i].name);
    for (double g : grads[i])
      if (!std::isfinite(g))
        throw ConfigError("optimizer_step: non-finite gradient for " + params[i].name);
  }

  opt.step += 1;
  const double lr = lr_at(opt.step, opt);
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor.values;
    auto& m = opt.m[i].values;
    auto& v = opt.v[i].values;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = zero_grads ? 0.0 : grads[i][j];
      m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g;
      v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

EpochResult train_epoch(const Matcher& matcher, ParameterSet& params, OptimizerState& opt,
                        const std::vector<TrainPair>& pairs, std::size_t batch_size, Rng& rng,
                        Tape& tape, ScoreStats* stats) {
  EpochResult res;
  if (pairs.empty()) return res;
  if (batch_size == 0) throw ConfigError("training.batch_size: must be positive");

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  double loss_sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    tape.reset();
    auto leaves = add_leaves(tape, params);
    std::vector<Tape::VarId> losses;
    losses.reserve(end - start);
    double batch_loss = 0.0;
    for (std::size_t k = start; k < end; ++k) {
      const TrainPair& p = pairs[order[k]];
      auto s_pos = matcher.build_score(tape, leaves, p.question, p.positive, stats);
      auto s_neg = matcher.build_score(tape, leaves, p.question, p.negative, stats);
      auto l = tape.hinge(s_pos, s_neg);
      batch_loss += tape.scalar_value(l);
      losses.push_back(l);
    }
    loss_sum += batch_loss;
    std::vector<std::span<const double>> grads;
    if (batch_loss > 0.0) {
      tape.backward(tape.sum_scalars(losses));
      grads.reserve(leaves.size());
      for (auto leaf : leaves) grads.push_back(tape.grad(leaf));
    }
    optimizer_step(params, grads, opt);
  }
  res.mean_loss = loss_sum / static_cast<double>(pairs.size());
  res.pairs = pairs.size();
  return res;
}

}  // namespace fedrank
