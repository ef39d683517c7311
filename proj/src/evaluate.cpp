#include "fedrank/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "fedrank/errors.hpp"

namespace fedrank {

using nlohmann::json;

RankedList make_ranked_list(int qid, std::vector<RankedEntry> entries) {
  if (entries.empty()) throw EvalError("ranked list for question " + std::to_string(qid) + " is empty");
  // NaN scores sort as -inf so the comparison stays a total order even when a
  // diverged model emits garbage.
  auto key = [](const RankedEntry& e) {
    return std::isnan(e.score) ? -std::numeric_limits<double>::infinity() : e.score;
  };
  std::sort(entries.begin(), entries.end(), [&](const RankedEntry& a, const RankedEntry& b) {
    const double ka = key(a), kb = key(b);
    if (ka != kb) return ka > kb;
    return a.aid < b.aid;
  });
  return RankedList{qid, std::move(entries)};
}

double average_precision(const RankedList& list) {
  std::size_t positives_seen = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < list.entries.size(); ++k) {
    if (list.entries[k].label == 1) {
      ++positives_seen;
      sum += static_cast<double>(positives_seen) / static_cast<double>(k + 1);
    }
  }
  if (positives_seen == 0)
    throw EvalError("average_precision: question " + std::to_string(list.qid) + " has no positive");
  return sum / static_cast<double>(positives_seen);
}

double reciprocal_rank(const RankedList& list) {
  for (std::size_t k = 0; k < list.entries.size(); ++k)
    if (list.entries[k].label == 1) return 1.0 / static_cast<double>(k + 1);
  throw EvalError("reciprocal_rank: question " + std::to_string(list.qid) + " has no positive");
}

ParticipantMetrics evaluate_participant(int participant, const std::vector<QAExample>& examples,
                                        const GroupScorer& score_candidates) {
  ParticipantMetrics m;
  m.participant = participant;
  double ap_sum = 0.0, rr_sum = 0.0;
  for (const auto& g : group_by_question(examples)) {
    bool has_positive = false;
    for (const auto& [aid, answer, label] : g.candidates) {
      (void)aid;
      (void)answer;
      if (label == 1) has_positive = true;
    }
    if (!has_positive) {
      ++m.excluded_no_positive;
      continue;
    }
    std::vector<std::vector<std::string>> answers;
    answers.reserve(g.candidates.size());
    for (const auto& [aid, answer, label] : g.candidates) {
      (void)aid;
      (void)label;
      answers.push_back(answer);
    }
    auto scores = score_candidates(g.question, answers);
    std::vector<RankedEntry> entries;
    entries.reserve(g.candidates.size());
    for (std::size_t i = 0; i < g.candidates.size(); ++i)
      entries.push_back({std::get<0>(g.candidates[i]), scores[i], std::get<2>(g.candidates[i])});
    auto list = make_ranked_list(g.qid, std::move(entries));
    ap_sum += average_precision(list);
    rr_sum += reciprocal_rank(list);
    ++m.questions;
  }
  if (m.questions == 0)
    throw EvalError("participant " + std::to_string(participant) +
                    ": every question was excluded (no positive candidates)");
  m.map = ap_sum / static_cast<double>(m.questions);
  m.mrr = rr_sum / static_cast<double>(m.questions);
  return m;
}

MetricsReport overall(std::vector<ParticipantMetrics> per_participant) {
  if (per_participant.empty()) throw EvalError("overall: no participants");
  MetricsReport r;
  r.per_participant = std::move(per_participant);
  double map_sum = 0.0, mrr_sum = 0.0;
  for (const auto& m : r.per_participant) {
    map_sum += m.map;
    mrr_sum += m.mrr;
  }
  r.overall_map = map_sum / static_cast<double>(r.per_participant.size());
  r.overall_mrr = mrr_sum / static_cast<double>(r.per_participant.size());
  return r;
}

std::string to_json(const MetricsReport& report) {
  json per = json::array();
  for (const auto& m : report.per_participant)
    per.push_back({{"participant", m.participant},
                   {"map", m.map},
                   {"mrr", m.mrr},
                   {"questions", m.questions},
                   {"excluded_no_positive", m.excluded_no_positive}});
  return json{{"per_participant", per},
              {"overall_map", report.overall_map},
              {"overall_mrr", report.overall_mrr}}
      .dump(2);
}

MetricsReport metrics_from_json(const std::string& text) {
  json j = json::parse(text);
  MetricsReport r;
  for (const auto& pj : j.at("per_participant")) {
    ParticipantMetrics m;
    m.participant = pj.at("participant").get<int>();
    m.map = pj.at("map").get<double>();
    m.mrr = pj.at("mrr").get<double>();
    m.questions = pj.at("questions").get<std::size_t>();
    m.excluded_no_positive = pj.at("excluded_no_positive").get<std::size_t>();
    r.per_participant.push_back(m);
  }
  r.overall_map = j.at("overall_map").get<double>();
  r.overall_mrr = j.at("overall_mrr").get<double>();
  return r;
}

std::string summary_table(const MetricsReport& report, const std::vector<std::string>& names) {
  std::ostringstream out;
  out << std::left << std::setw(14) << "participant" << std::right << std::setw(10) << "MAP"
      << std::setw(10) << "MRR" << std::setw(12) << "questions" << '\n';
  out << std::string(46, '-') << '\n';
  out << std::fixed << std::setprecision(4);
  for (std::size_t i = 0; i < report.per_participant.size(); ++i) {
    const auto& m = report.per_participant[i];
    const std::string name =
        i < names.size() ? names[i] : ("p" + std::to_string(m.participant));
    out << std::left << std::setw(14) << name << std::right << std::setw(10) << m.map
        << std::setw(10) << m.mrr << std::setw(12) << m.questions << '\n';
  }
  out << std::string(46, '-') << '\n';
  out << std::left << std::setw(14) << "overall" << std::right << std::setw(10)
      << report.overall_map << std::setw(10) << report.overall_mrr << '\n';
  return out.str();
}

}  // namespace fedrank
