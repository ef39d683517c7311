#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "fedrank/rng.hpp"

namespace fedrank {

struct QAExample {
  int qid = 0;
  std::vector<std::string> question;
  int aid = 0;
  std::vector<std::string> answer;
  int label = 0;  // 1 = correct answer for this question
  int participant = 0;
};

// Statistical shape of one participant's data. The domain token range
// [vocab_lo, vocab_hi) must not overlap other participants'; topic keywords
// live at the low end of the range, filler tokens above them.
struct ParticipantProfile {
  int id = 0;
  std::string name;
  std::size_t vocab_lo = 0;
  std::size_t vocab_hi = 0;
  std::size_t question_count = 0;
  std::size_t candidates_per_question = 4;  // one positive among them
  double mean_question_len = 5;
  double mean_answer_len = 6;
  double positive_rate = 0.25;
  int polarity = 1;  // sign of the marker-token/label correlation
};

struct GeneratorOptions {
  bool iid = false;  // collapse every profile onto the first one's distribution
  std::size_t function_words = 60;
  std::size_t n_markers = 8;
  double marker_rate = 0.6;
  std::size_t n_topics = 6;
  std::size_t keywords_per_topic = 6;
  std::size_t keywords_per_question = 3;
};

// Five profiles with the size imbalance, candidate-set sizes, length
// orderings, and positive-rate spread of a realistic multi-domain QA
// federation; `scale` multiplies the question counts.
std::vector<ParticipantProfile> default_profiles(double scale);

nlohmann::json profile_to_json(const ParticipantProfile& p);
ParticipantProfile profile_from_json(const nlohmann::json& j);

// Per-participant example lists. Deterministic in (profiles, opts, seed);
// each participant's draw is independent of the others' sizes.
std::vector<std::vector<QAExample>> generate_synthetic(
    const std::vector<ParticipantProfile>& profiles, const GeneratorOptions& opts,
    std::uint64_t seed);

struct Splits {
  std::vector<QAExample> train, dev, test;
};

// 0.8/0.1/0.1 by question id; every answer of a question stays in one split.
Splits split_examples(const std::vector<QAExample>& examples, std::uint64_t seed);

class Bm25Index {
 public:
  static constexpr double kK1 = 1.2;
  static constexpr double kB = 0.75;

  // One document per distinct answer id.
  void build(const std::vector<QAExample>& pool);

  double score(const std::vector<std::string>& query, int aid) const;

  // All documents with positive score, descending, ties by ascending aid.
  std::vector<int> rank(const std::vector<std::string>& query) const;

  std::size_t doc_count() const { return docs_.size(); }
  bool has(int aid) const { return docs_.count(aid) > 0; }

 private:
  double idf(const std::string& term) const;

  std::map<int, std::unordered_map<std::string, int>> docs_;
  std::map<int, std::size_t> lengths_;
  std::unordered_map<std::string, int> df_;
  double avg_len_ = 0.0;
};

// Top `k` retrieved answers that are not ground truth for the question.
std::vector<int> top_negatives(const std::vector<std::string>& question,
                               const std::set<int>& ground_truth, const Bm25Index& index,
                               std::size_t k = 5);

// BM25 negatives for every question in the pool, mined against an index of
// the pool itself: qid -> retrieved non-ground-truth aids.
std::unordered_map<int, std::vector<int>> mine_train_negatives(
    const std::vector<QAExample>& pool);

struct QuestionGroup {
  int qid = 0;
  std::vector<std::string> question;
  // (aid, answer tokens, label), in input order
  std::vector<std::tuple<int, std::vector<std::string>, int>> candidates;
};

std::vector<QuestionGroup> group_by_question(const std::vector<QAExample>& examples);

struct ParticipantData {
  ParticipantProfile profile;
  Splits splits;
  std::unordered_map<int, std::vector<int>> negatives;  // qid -> mined train aids
};

struct Corpus {
  std::vector<ParticipantData> participants;
  std::uint64_t seed = 0;
  bool iid = false;
};

// Lowercase whitespace tokenization used for every piece of ingested text.
std::vector<std::string> tokenize(const std::string& text);

// Materializes the per-participant directory layout (train/dev/test.jsonl,
// profile.json, negatives.jsonl, corpus-level meta.json).
void write_corpus(const std::string& dir, const Corpus& corpus);

// Reads the layout back; throws IoError for unreadable files and ConfigError
// when more than 10% of a file's lines are malformed. Negatives are not
// loaded: each client mines its own from whatever train pool it ends up with.
Corpus load_corpus(const std::string& dir);

// Convenience: generate, split, mine negatives.
Corpus make_corpus(const std::vector<ParticipantProfile>& profiles,
                   const GeneratorOptions& opts, std::uint64_t seed);

// Unigram distribution over all question and answer tokens.
std::map<std::string, double> unigram_distribution(const std::vector<QAExample>& examples);

// Jensen-Shannon divergence in nats; symmetric, in [0, ln 2].
double js_divergence(const std::map<std::string, double>& p,
                     const std::map<std::string, double>& q);

// Smallest pairwise JS divergence between participants' train distributions.
double min_pairwise_js(const Corpus& corpus);

}  // namespace fedrank
