#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedrank/params.hpp"
#include "fedrank/rng.hpp"
#include "fedrank/tape.hpp"

namespace fedrank {

enum class InsertionMode { kNone, kInner, kOuter, kVertical, kHorizontal };
enum class PatchKind { kPal, kLowRank };

const char* to_string(InsertionMode m);
const char* to_string(PatchKind k);
InsertionMode insertion_mode_from(const std::string& s);
PatchKind patch_kind_from(const std::string& s);

// Reserved token ids; the vocabulary builder starts real tokens at 4.
inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kSepId = 2;
inline constexpr int kUnkId = 3;

struct ModelConfig {
  std::size_t d_model = 32;
  int n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 0;  // filled from the corpus vocabulary
  std::size_t max_seq_len = 20;
  std::size_t d_patch = 8;
  InsertionMode insertion_mode = InsertionMode::kNone;
  PatchKind patch_kind = PatchKind::kLowRank;
  int pal_heads = 2;
  std::size_t n_shared_layers = 2;

  // With no patches anywhere and every layer shared, the run degenerates to
  // plain federated averaging of a single model.
  bool is_baseline() const { return insertion_mode == InsertionMode::kNone; }

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Patch instances implied by the insertion mode (vertical is one total,
// the sub-layer modes are per layer).
std::size_t patch_instance_count(const ModelConfig& c);

// Total scalar parameter count, computed in closed form.
std::size_t expected_parameter_count(const ModelConfig& c);

// Builds the full named parameter set for `c`, zero-filled, in the canonical
// enumeration order. Entries for patches and for layers at index >=
// n_shared_layers are flagged private.
ParameterSet make_parameter_set(const ModelConfig& c);

// Fills `params` with the standard from-scratch init: weights N(0, 0.02),
// biases and norm biases 0, norm gains 1, patch up-projections 0 (so the
// additive insertion modes start exactly at the unpatched function).
void init_parameters(ParameterSet& params, Rng& rng);

struct ScoreStats {
  std::size_t scored = 0;
  std::size_t truncated_answers = 0;
};

// Question/answer matcher over the patched encoder. A Matcher is bound to a
// config, not to parameters; callers supply a ParameterSet (or tape leaves in
// the set's canonical order) per call.
class Matcher {
 public:
  explicit Matcher(const ModelConfig& c);

  const ModelConfig& config() const { return cfg_; }

  // [CLS] q [SEP] a [SEP] token and segment rows; the answer is truncated
  // from the right when the sequence would exceed max_seq_len.
  void make_input(const std::vector<int>& question, const std::vector<int>& answer,
                  std::vector<int>& ids, std::vector<int>& segments,
                  bool& truncated) const;

  // Records the score graph f(q, a) on `tape`. `leaves` must hold one leaf
  // per parameter, in the canonical ParameterSet order for this config.
  Tape::VarId build_score(Tape& tape, const std::vector<Tape::VarId>& leaves,
                          const std::vector<int>& question, const std::vector<int>& answer,
                          ScoreStats* stats = nullptr) const;

  // Forward-only convenience: scores one question against many candidates on
  // a private tape, adding the parameter leaves once.
  std::vector<double> score_candidates(const ParameterSet& params,
                                       const std::vector<int>& question,
                                       const std::vector<std::vector<int>>& answers,
                                       ScoreStats* stats = nullptr) const;

  double score(const ParameterSet& params, const std::vector<int>& question,
               const std::vector<int>& answer, ScoreStats* stats = nullptr) const;

 private:
  struct LayerSlots {
    std::size_t wq, wk, wv, wo, ln1_gain, ln1_bias;
    std::size_t w1, b1, w2, b2, ln2_gain, ln2_bias;
  };
  struct PatchSlots {
    std::size_t down = 0, up = 0;
    std::size_t pal_wq = 0, pal_wk = 0, pal_wv = 0, pal_wo = 0;
    bool present = false;
  };

  Tape::VarId apply_patch(Tape& tape, const std::vector<Tape::VarId>& leaves,
                          const PatchSlots& p, Tape::VarId h) const;
  Tape::VarId layer_forward(Tape& tape, const std::vector<Tape::VarId>& leaves,
                            std::size_t layer, Tape::VarId h) const;
  Tape::VarId encode(Tape& tape, const std::vector<Tape::VarId>& leaves,
                     const std::vector<int>& ids, const std::vector<int>& segments) const;

  ModelConfig cfg_;
  std::size_t tok_, pos_, seg_, head_w_, head_b_;
  std::vector<LayerSlots> layers_;
  std::vector<PatchSlots> attn_patches_, ffn_patches_, layer_patches_;
  PatchSlots top_patch_;
};

// Tape leaves for every entry of `params`, in order.
std::vector<Tape::VarId> add_leaves(Tape& tape, const ParameterSet& params);

}  // namespace fedrank
