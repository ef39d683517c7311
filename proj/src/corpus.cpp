#include "fedrank/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedrank/errors.hpp"

namespace fedrank {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string domain_token(std::size_t j) { return "w" + std::to_string(j); }
std::string function_token(std::size_t j) { return "f" + std::to_string(j); }
std::string marker_token(std::size_t j) { return "p" + std::to_string(j); }

}  // namespace

std::vector<ParticipantProfile> default_profiles(double scale) {
  if (scale <= 0.0) throw ConfigError("profiles.scale: must be positive");
  // Size imbalance, candidate counts, length orderings, and positive-rate
  // spread follow a five-domain QA federation with a ~17:1 largest:smallest
  // question ratio.
  const std::size_t counts[5] = {1750, 2740, 6648, 1309, 380};
  const char* names[5] = {"law", "biomedical", "financial", "insurance", "medical"};
  const std::size_t cands[5] = {7, 5, 3, 4, 3};
  const double qlen[5] = {4, 5, 6, 4, 8};
  const double alen[5] = {6, 4, 7, 5, 8};
  const int polarity[5] = {1, -1, 1, -1, 1};
  const std::size_t domain_span = 52;  // 6 topics x 6 keywords + 16 filler
  std::vector<ParticipantProfile> ps;
  for (int t = 0; t < 5; ++t) {
    ParticipantProfile p;
    p.id = t;
    p.name = names[t];
    p.vocab_lo = static_cast<std::size_t>(t) * domain_span;
    p.vocab_hi = p.vocab_lo + domain_span;
    p.question_count = static_cast<std::size_t>(std::llround(scale * static_cast<double>(counts[t])));
    if (p.question_count < 3)
      throw ConfigError("profiles.scale: " + std::string(names[t]) +
                        " would have fewer than 3 questions");
    p.candidates_per_question = cands[t];
    p.mean_question_len = qlen[t];
    p.mean_answer_len = alen[t];
    p.positive_rate = 1.0 / static_cast<double>(cands[t]);
    p.polarity = polarity[t];
    ps.push_back(p);
  }
  return ps;
}

namespace {

void validate_profiles(const std::vector<ParticipantProfile>& profiles,
                       const GeneratorOptions& opts) {
  if (profiles.size() < 2)
    throw ConfigError("profiles: at least 2 participants are required");
  const std::size_t kw_span = opts.n_topics * opts.keywords_per_topic;
  for (const auto& p : profiles) {
    if (p.vocab_hi <= p.vocab_lo + kw_span)
      throw ConfigError("profiles." + p.name + ": vocab range [" +
                        std::to_string(p.vocab_lo) + "," + std::to_string(p.vocab_hi) +
                        ") too small for " + std::to_string(kw_span) +
                        " topic keywords plus filler");
    if (p.question_count == 0)
      throw ConfigError("profiles." + p.name + ": question_count must be positive");
    if (p.candidates_per_question < 2)
      throw ConfigError("profiles." + p.name + ": candidates_per_question must be >= 2");
    if (p.positive_rate <= 0.0 || p.positive_rate >= 1.0)
      throw ConfigError("profiles." + p.name + ": positive_rate must be in (0,1)");
    if (p.polarity != 1 && p.polarity != -1)
      throw ConfigError("profiles." + p.name + ": polarity must be +1 or -1");
  }
  if (!opts.iid) {
    for (std::size_t a = 0; a < profiles.size(); ++a)
      for (std::size_t b = a + 1; b < profiles.size(); ++b) {
        const auto& pa = profiles[a];
        const auto& pb = profiles[b];
        if (pa.vocab_lo < pb.vocab_hi && pb.vocab_lo < pa.vocab_hi)
          throw ConfigError("profiles: domain vocab ranges of " + pa.name + " and " +
                            pb.name + " overlap");
      }
  }
  if (opts.keywords_per_question + 2 > opts.keywords_per_topic)
    throw ConfigError("generator.keywords_per_topic: must exceed keywords_per_question by >= 2");
  if (opts.function_words == 0) throw ConfigError("generator.function_words: must be positive");
  if (opts.n_markers == 0) throw ConfigError("generator.n_markers: must be positive");
  if (opts.marker_rate < 0.0 || opts.marker_rate > 1.0)
    throw ConfigError("generator.marker_rate: must be in [0,1]");
}

struct ParticipantGen {
  const ParticipantProfile& p;
  const GeneratorOptions& opts;
  Rng& rng;

  std::size_t keyword_at(std::size_t topic, std::size_t j) const {
    return p.vocab_lo + topic * opts.keywords_per_topic + j;
  }

  std::string filler() const {
    if (rng.uniform(2) == 0) return function_token(rng.uniform(opts.function_words));
    const std::size_t filler_lo = p.vocab_lo + opts.n_topics * opts.keywords_per_topic;
    return domain_token(filler_lo + rng.uniform(p.vocab_hi - filler_lo));
  }

  std::vector<std::string> keywords(std::size_t topic, std::size_t n) const {
    auto idx = rng.sample_without_replacement(opts.keywords_per_topic, n);
    std::vector<std::string> out;
    for (auto j : idx) out.push_back(domain_token(keyword_at(topic, j)));
    rng.shuffle(out);
    return out;
  }

  // `overlap` tokens reused from `from`, the rest drawn from the topic's
  // remaining keywords.
  std::vector<std::string> keywords_overlapping(std::size_t topic,
                                                const std::vector<std::size_t>& from,
                                                std::size_t overlap, std::size_t n) const {
    auto pick = rng.sample_without_replacement(from.size(), overlap);
    std::vector<std::string> out;
    std::vector<std::size_t> rest;
    for (std::size_t j = 0; j < opts.keywords_per_topic; ++j)
      if (std::find(from.begin(), from.end(), j) == from.end()) rest.push_back(j);
    for (auto i : pick) out.push_back(domain_token(keyword_at(topic, from[i])));
    auto extra = rng.sample_without_replacement(rest.size(), n - overlap);
    for (auto i : extra) out.push_back(domain_token(keyword_at(topic, rest[i])));
    rng.shuffle(out);
    return out;
  }

  std::size_t length_around(double mean, std::size_t floor_len) const {
    auto len = static_cast<long long>(std::llround(mean)) +
               static_cast<long long>(rng.uniform(3)) - 1;
    return std::max<long long>(static_cast<long long>(floor_len), len);
  }

  std::vector<std::string> answer_tokens(std::vector<std::string> kws, bool marked) const {
    std::vector<std::string> a = std::move(kws);
    if (marked) a.push_back(marker_token(rng.uniform(opts.n_markers)));
    const std::size_t target = length_around(p.mean_answer_len, a.size() + 1);
    while (a.size() < target) a.push_back(filler());
    return a;
  }
};

}  // namespace

std::vector<std::vector<QAExample>> generate_synthetic(
    const std::vector<ParticipantProfile>& profiles_in, const GeneratorOptions& opts,
    std::uint64_t seed) {
  std::vector<ParticipantProfile> profiles = profiles_in;
  if (opts.iid) {
    for (auto& p : profiles) {
      p.vocab_lo = profiles_in[0].vocab_lo;
      p.vocab_hi = profiles_in[0].vocab_hi;
      p.candidates_per_question = profiles_in[0].candidates_per_question;
      p.mean_question_len = profiles_in[0].mean_question_len;
      p.mean_answer_len = profiles_in[0].mean_answer_len;
      p.positive_rate = profiles_in[0].positive_rate;
      p.polarity = profiles_in[0].polarity;
    }
  }
  validate_profiles(profiles, opts);

  std::vector<std::vector<QAExample>> out;
  for (const auto& p : profiles) {
    Rng rng = Rng::stream(seed, "gen", static_cast<std::uint64_t>(p.id));
    ParticipantGen g{p, opts, rng};
    std::vector<QAExample> rows;
    int qid = p.id * 1'000'000;
    int aid = p.id * 10'000'000;
    const std::size_t kpq = opts.keywords_per_question;
    for (std::size_t qn = 0; qn < p.question_count; ++qn, ++qid) {
      const std::size_t topic = rng.uniform(opts.n_topics);
      auto kw_idx = rng.sample_without_replacement(opts.keywords_per_topic, kpq);
      std::vector<std::string> q_kws;
      for (auto j : kw_idx) q_kws.push_back(domain_token(g.keyword_at(topic, j)));

      const std::size_t q_len = g.length_around(p.mean_question_len, kpq + 1);
      std::vector<std::string> question = q_kws;
      while (question.size() < q_len)
        question.push_back(function_token(rng.uniform(opts.function_words)));
      rng.shuffle(question);

      const std::size_t n_neg = p.candidates_per_question - 1;
      const std::size_t n_same = n_neg / 2;

      std::vector<std::pair<std::vector<std::string>, int>> candidates;
      {
        auto kws = q_kws;
        rng.shuffle(kws);
        const bool marked = p.polarity > 0 && rng.uniform_real() < opts.marker_rate;
        candidates.emplace_back(g.answer_tokens(std::move(kws), marked), 1);
      }
      for (std::size_t s = 0; s < n_same; ++s) {
        const std::size_t overlap = 1 + rng.uniform(2);
        auto kws = g.keywords_overlapping(topic, kw_idx, overlap, kpq);
        const bool marked = p.polarity < 0 && rng.uniform_real() < opts.marker_rate;
        candidates.emplace_back(g.answer_tokens(std::move(kws), marked), 0);
      }
      for (std::size_t s = n_same; s < n_neg; ++s) {
        std::size_t other = rng.uniform(opts.n_topics - 1);
        if (other >= topic) ++other;
        auto kws = g.keywords(other, kpq);
        const bool marked = p.polarity < 0 && rng.uniform_real() < opts.marker_rate;
        candidates.emplace_back(g.answer_tokens(std::move(kws), marked), 0);
      }
      rng.shuffle(candidates);
      for (auto& [tokens, label] : candidates) {
        QAExample e;
        e.qid = qid;
        e.question = question;
        e.aid = aid++;
        e.answer = std::move(tokens);
        e.label = label;
        e.participant = p.id;
        rows.push_back(std::move(e));
      }
    }
    out.push_back(std::move(rows));
  }
  return out;
}

Splits split_examples(const std::vector<QAExample>& examples, std::uint64_t seed) {
  std::vector<int> qids;
  std::set<int> seen;
  for (const auto& e : examples)
    if (seen.insert(e.qid).second) qids.push_back(e.qid);
  if (qids.size() < 3)
    throw ConfigError("split: need at least 3 questions, got " + std::to_string(qids.size()));
  Rng rng = Rng::stream(seed, "split");
  rng.shuffle(qids);
  const std::size_t n = qids.size();
  const std::size_t n_dev = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
  const std::size_t n_test = n_dev;
  const std::size_t n_train = n - n_dev - n_test;
  std::set<int> dev_q(qids.begin() + static_cast<std::ptrdiff_t>(n_train),
                      qids.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  std::set<int> test_q(qids.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), qids.end());
  Splits s;
  for (const auto& e : examples) {
    if (dev_q.count(e.qid))
      s.dev.push_back(e);
    else if (test_q.count(e.qid))
      s.test.push_back(e);
    else
      s.train.push_back(e);
  }
  return s;
}

void Bm25Index::build(const std::vector<QAExample>& pool) {
  docs_.clear();
  lengths_.clear();
  df_.clear();
  for (const auto& e : pool) {
    if (docs_.count(e.aid)) continue;
    auto& doc = docs_[e.aid];
    for (const auto& t : e.answer) ++doc[t];
    lengths_[e.aid] = e.answer.size();
    for (const auto& [term, tf] : doc) {
      (void)tf;
      ++df_[term];
    }
  }
  double total = 0.0;
  for (const auto& [aid, len] : lengths_) {
    (void)aid;
    total += static_cast<double>(len);
  }
  avg_len_ = docs_.empty() ? 0.0 : total / static_cast<double>(docs_.size());
}

double Bm25Index::idf(const std::string& term) const {
  auto it = df_.find(term);
  const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
  const double n = static_cast<double>(docs_.size());
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double Bm25Index::score(const std::vector<std::string>& query, int aid) const {
  auto it = docs_.find(aid);
  if (it == docs_.end())
    throw ConfigError("bm25: unknown answer id " + std::to_string(aid));
  const auto& doc = it->second;
  const double len = static_cast<double>(lengths_.at(aid));
  double s = 0.0;
  for (const auto& term : query) {
    auto dt = doc.find(term);
    if (dt == doc.end()) continue;
    const double tf = static_cast<double>(dt->second);
    s += idf(term) * tf * (kK1 + 1.0) / (tf + kK1 * (1.0 - kB + kB * len / avg_len_));
  }
  return s;
}

std::vector<int> Bm25Index::rank(const std::vector<std::string>& query) const {
  std::vector<std::pair<int, double>> scored;
  for (const auto& [aid, doc] : docs_) {
    (void)doc;
    const double s = score(query, aid);
    if (s > 0.0) scored.emplace_back(aid, s);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<int> out;
  out.reserve(scored.size());
  for (const auto& [aid, s] : scored) {
    (void)s;
    out.push_back(aid);
  }
  return out;
}

std::vector<int> top_negatives(const std::vector<std::string>& question,
                               const std::set<int>& ground_truth, const Bm25Index& index,
                               std::size_t k) {
  std::vector<int> out;
  for (int aid : index.rank(question)) {
    if (ground_truth.count(aid)) continue;
    out.push_back(aid);
    if (out.size() == k) break;
  }
  return out;
}

std::vector<QuestionGroup> group_by_question(const std::vector<QAExample>& examples) {
  std::vector<QuestionGroup> groups;
  std::unordered_map<int, std::size_t> at;
  for (const auto& e : examples) {
    auto it = at.find(e.qid);
    if (it == at.end()) {
      at.emplace(e.qid, groups.size());
      QuestionGroup g;
      g.qid = e.qid;
      g.question = e.question;
      groups.push_back(std::move(g));
      it = at.find(e.qid);
    }
    groups[it->second].candidates.emplace_back(e.aid, e.answer, e.label);
  }
  return groups;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

namespace {

std::string join(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

}  // namespace

nlohmann::json profile_to_json(const ParticipantProfile& p) {
  return json{{"id", p.id},
              {"name", p.name},
              {"vocab_lo", p.vocab_lo},
              {"vocab_hi", p.vocab_hi},
              {"question_count", p.question_count},
              {"candidates_per_question", p.candidates_per_question},
              {"mean_question_len", p.mean_question_len},
              {"mean_answer_len", p.mean_answer_len},
              {"positive_rate", p.positive_rate},
              {"polarity", p.polarity}};
}

ParticipantProfile profile_from_json(const nlohmann::json& j) {
  ParticipantProfile p;
  p.id = j.at("id").get<int>();
  p.name = j.at("name").get<std::string>();
  p.vocab_lo = j.at("vocab_lo").get<std::size_t>();
  p.vocab_hi = j.at("vocab_hi").get<std::size_t>();
  p.question_count = j.at("question_count").get<std::size_t>();
  p.candidates_per_question = j.at("candidates_per_question").get<std::size_t>();
  p.mean_question_len = j.at("mean_question_len").get<double>();
  p.mean_answer_len = j.at("mean_answer_len").get<double>();
  p.positive_rate = j.at("positive_rate").get<double>();
  p.polarity = j.at("polarity").get<int>();
  return p;
}

namespace {

void write_jsonl(const fs::path& path, const std::vector<QAExample>& examples) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& e : examples) {
    json j{{"qid", e.qid},
           {"question", join(e.question)},
           {"aid", e.aid},
           {"answer", join(e.answer)},
           {"label", e.label}};
    f << j.dump() << '\n';
  }
}

std::vector<QAExample> read_jsonl(const fs::path& path, int participant) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<QAExample> out;
  std::size_t malformed = 0, total = 0;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    ++total;
    try {
      json j = json::parse(line);
      QAExample e;
      e.qid = j.at("qid").get<int>();
      e.question = tokenize(j.at("question").get<std::string>());
      e.aid = j.at("aid").get<int>();
      e.answer = tokenize(j.at("answer").get<std::string>());
      e.label = j.at("label").get<int>();
      e.participant = participant;
      if (e.question.empty() || e.answer.empty() || (e.label != 0 && e.label != 1))
        throw std::runtime_error("bad fields");
      out.push_back(std::move(e));
    } catch (const std::exception&) {
      ++malformed;
    }
  }
  if (total > 0 && 10 * malformed > total)
    throw ConfigError("ingest: " + std::to_string(malformed) + " of " + std::to_string(total) +
                      " lines malformed in " + path.string());
  return out;
}

}  // namespace

std::unordered_map<int, std::vector<int>> mine_train_negatives(
    const std::vector<QAExample>& pool) {
  Bm25Index index;
  index.build(pool);
  std::unordered_map<int, std::vector<int>> out;
  for (const auto& g : group_by_question(pool)) {
    std::set<int> gt;
    for (const auto& [aid, answer, label] : g.candidates) {
      (void)answer;
      if (label == 1) gt.insert(aid);
    }
    out[g.qid] = top_negatives(g.question, gt, index);
  }
  return out;
}

void write_corpus(const std::string& dir, const Corpus& corpus) {
  fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create directory " + root.string());
  {
    std::ofstream f(root / "meta.json");
    if (!f) throw IoError("cannot write " + (root / "meta.json").string());
    f << json{{"seed", corpus.seed},
              {"iid", corpus.iid},
              {"participants", corpus.participants.size()}}
             .dump(2)
      << '\n';
  }
  for (const auto& pd : corpus.participants) {
    fs::path pdir = root / ("participant_" + std::to_string(pd.profile.id));
    fs::create_directories(pdir, ec);
    if (ec) throw IoError("cannot create directory " + pdir.string());
    {
      std::ofstream f(pdir / "profile.json");
      f << profile_to_json(pd.profile).dump(2) << '\n';
    }
    write_jsonl(pdir / "train.jsonl", pd.splits.train);
    write_jsonl(pdir / "dev.jsonl", pd.splits.dev);
    write_jsonl(pdir / "test.jsonl", pd.splits.test);
    {
      std::ofstream f(pdir / "negatives.jsonl");
      std::vector<int> qids;
      for (const auto& [qid, negs] : pd.negatives) {
        (void)negs;
        qids.push_back(qid);
      }
      std::sort(qids.begin(), qids.end());
      for (int qid : qids)
        f << json{{"qid", qid}, {"neg_aids", pd.negatives.at(qid)}}.dump() << '\n';
    }
  }
}

Corpus load_corpus(const std::string& dir) {
  fs::path root(dir);
  std::ifstream meta_f(root / "meta.json");
  if (!meta_f) throw IoError("cannot read " + (root / "meta.json").string());
  json meta;
  try {
    meta_f >> meta;
  } catch (const std::exception& e) {
    throw ConfigError("corpus meta.json: " + std::string(e.what()));
  }
  Corpus corpus;
  corpus.seed = meta.value("seed", 0ULL);
  corpus.iid = meta.value("iid", false);
  const auto n = meta.at("participants").get<std::size_t>();
  if (n == 0) throw ConfigError("corpus: no participants");
  for (std::size_t t = 0; t < n; ++t) {
    fs::path pdir = root / ("participant_" + std::to_string(t));
    std::ifstream pf(pdir / "profile.json");
    if (!pf) throw IoError("cannot read " + (pdir / "profile.json").string());
    json pj;
    try {
      pf >> pj;
    } catch (const std::exception& e) {
      throw ConfigError((pdir / "profile.json").string() + ": " + e.what());
    }
    ParticipantData pd;
    pd.profile = profile_from_json(pj);
    pd.splits.train = read_jsonl(pdir / "train.jsonl", pd.profile.id);
    pd.splits.dev = read_jsonl(pdir / "dev.jsonl", pd.profile.id);
    pd.splits.test = read_jsonl(pdir / "test.jsonl", pd.profile.id);
    corpus.participants.push_back(std::move(pd));
  }
  return corpus;
}

Corpus make_corpus(const std::vector<ParticipantProfile>& profiles,
                   const GeneratorOptions& opts, std::uint64_t seed) {
  Corpus corpus;
  corpus.seed = seed;
  corpus.iid = opts.iid;
  auto examples = generate_synthetic(profiles, opts, seed);
  for (std::size_t t = 0; t < profiles.size(); ++t) {
    ParticipantData pd;
    pd.profile = profiles[t];
    const std::uint64_t split_seed =
        Rng::stream(seed, "split", static_cast<std::uint64_t>(profiles[t].id)).next_u64();
    pd.splits = split_examples(examples[t], split_seed);
    pd.negatives = mine_train_negatives(pd.splits.train);
    corpus.participants.push_back(std::move(pd));
  }
  return corpus;
}

std::map<std::string, double> unigram_distribution(const std::vector<QAExample>& examples) {
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& g : group_by_question(examples)) {
    for (const auto& t : g.question) {
      ++counts[t];
      ++total;
    }
    for (const auto& [aid, answer, label] : g.candidates) {
      (void)aid;
      (void)label;
      for (const auto& t : answer) {
        ++counts[t];
        ++total;
      }
    }
  }
  std::map<std::string, double> dist;
  for (const auto& [t, c] : counts)
    dist[t] = static_cast<double>(c) / static_cast<double>(total);
  return dist;
}

double js_divergence(const std::map<std::string, double>& p,
                     const std::map<std::string, double>& q) {
  auto kl_to_mid = [&](const std::map<std::string, double>& a,
                       const std::map<std::string, double>& b) {
    double kl = 0.0;
    for (const auto& [t, pa] : a) {
      auto it = b.find(t);
      const double pb = it == b.end() ? 0.0 : it->second;
      const double m = 0.5 * (pa + pb);
      if (pa > 0.0) kl += pa * std::log(pa / m);
    }
    return kl;
  };
  return 0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p);
}

double min_pairwise_js(const Corpus& corpus) {
  std::vector<std::map<std::string, double>> dists;
  for (const auto& pd : corpus.participants)
    dists.push_back(unigram_distribution(pd.splits.train));
  double lo = std::log(2.0);
  for (std::size_t a = 0; a < dists.size(); ++a)
    for (std::size_t b = a + 1; b < dists.size(); ++b)
      lo = std::min(lo, js_divergence(dists[a], dists[b]));
  return lo;
}

}  // namespace fedrank
