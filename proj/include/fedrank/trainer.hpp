#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedrank/corpus.hpp"
#include "fedrank/model.hpp"
#include "fedrank/params.hpp"
#include "fedrank/rng.hpp"
#include "fedrank/tape.hpp"

namespace fedrank {

// Token ids 0..3 are reserved; the rest are the sorted union of training
// tokens. Unknown tokens map to kUnkId.
struct Vocabulary {
  std::vector<std::string> tokens;  // index = id
  std::unordered_map<std::string, int> ids;

  int id_of(const std::string& token) const {
    auto it = ids.find(token);
    return it == ids.end() ? kUnkId : it->second;
  }
  std::vector<int> encode(const std::vector<std::string>& tokens_in) const {
    std::vector<int> out;
    out.reserve(tokens_in.size());
    for (const auto& t : tokens_in) out.push_back(id_of(t));
    return out;
  }
  std::size_t size() const { return tokens.size(); }
};

Vocabulary build_vocabulary(const Corpus& corpus);

struct TrainPair {
  std::vector<int> question;
  std::vector<int> positive;
  std::vector<int> negative;
  int participant = 0;
};

// L = max(0, 1 - s_pos + s_neg); the subgradient at the kink is zero.
double hinge_loss(double s_pos, double s_neg);

// Cross product of each train question's positives with up to
// `negatives_per_question` of its mined negatives; order shuffled by `rng`.
// Questions whose mined list is empty are skipped and counted.
struct PairBuild {
  std::vector<TrainPair> pairs;
  std::size_t skipped_no_negative = 0;
};
PairBuild build_pairs(const std::vector<QAExample>& train,
                      const std::unordered_map<int, std::vector<int>>& negatives,
                      const Vocabulary& vocab, std::size_t negatives_per_question, Rng& rng);

struct OptimizerState {
  std::vector<Tensor> m, v;  // first/second moments, aligned to the ParameterSet
  std::int64_t step = 0;
  double base_lr = 1e-3;
  std::int64_t total_steps = 1;
  double warmup_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState make(const ParameterSet& params, double base_lr,
                             std::int64_t total_steps);
};

// Linear warmup to base over the first ceil(warmup_fraction * total) steps,
// then linear decay to zero at total.
double lr_at(std::int64_t step, const OptimizerState& opt);

// One adaptive-moment update with bias correction at lr_at(step). `grads`
// holds one span per parameter in set order; an empty vector means all-zero
// gradients. Throws ConfigError naming the parameter on a non-finite
// gradient, leaving parameters untouched.
void optimizer_step(ParameterSet& params, const std::vector<std::span<const double>>& grads,
                    OptimizerState& opt);

struct EpochResult {
  double mean_loss = 0.0;
  std::size_t pairs = 0;
};

// One pass over `pairs` in an order drawn from `rng`, summing each
// mini-batch's hinge losses into one backward pass and stepping the optimizer
// jointly over every parameter. `tape` is reset per batch and may be reused
// across epochs.
EpochResult train_epoch(const Matcher& matcher, ParameterSet& params, OptimizerState& opt,
                        const std::vector<TrainPair>& pairs, std::size_t batch_size, Rng& rng,
                        Tape& tape, ScoreStats* stats = nullptr);

}  // namespace fedrank
