#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fedrank/corpus.hpp"

namespace fedrank {

struct RankedEntry {
  int aid = 0;
  double score = 0.0;
  int label = 0;
};

// Entries sorted by descending score, ties by ascending answer id.
struct RankedList {
  int qid = 0;
  std::vector<RankedEntry> entries;
};

RankedList make_ranked_list(int qid, std::vector<RankedEntry> entries);

// Mean over positive positions k (1-based) of positives-in-top-k / k.
// Requires at least one positive entry.
double average_precision(const RankedList& list);

// 1 / rank of the first positive. Requires at least one positive entry.
double reciprocal_rank(const RankedList& list);

struct ParticipantMetrics {
  int participant = 0;
  double map = 0.0;
  double mrr = 0.0;
  std::size_t questions = 0;           // questions contributing to the metric
  std::size_t excluded_no_positive = 0;  // candidate sets without a positive
};

struct MetricsReport {
  std::vector<ParticipantMetrics> per_participant;
  double overall_map = 0.0;  // unweighted mean across participants
  double overall_mrr = 0.0;
};

// Scores every candidate group in `examples` with `score_candidates`
// (question tokens, candidate answer token lists -> scores) and averages AP
// and RR over the questions that have at least one positive. Throws
// EvalError when every question is excluded.
using GroupScorer = std::function<std::vector<double>(
    const std::vector<std::string>&, const std::vector<std::vector<std::string>>&)>;

ParticipantMetrics evaluate_participant(int participant, const std::vector<QAExample>& examples,
                                        const GroupScorer& score_candidates);

MetricsReport overall(std::vector<ParticipantMetrics> per_participant);

std::string to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const std::string& text);

// Fixed-width text table: one row per participant, overall last.
std::string summary_table(const MetricsReport& report,
                          const std::vector<std::string>& names);

}  // namespace fedrank
