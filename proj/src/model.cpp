#include "fedrank/model.hpp"

#include <cmath>
#include <cstring>

#include "fedrank/errors.hpp"

namespace fedrank {

const char* to_string(InsertionMode m) {
  switch (m) {
    case InsertionMode::kNone: return "none";
    case InsertionMode::kInner: return "inner";
    case InsertionMode::kOuter: return "outer";
    case InsertionMode::kVertical: return "vertical";
    case InsertionMode::kHorizontal: return "horizontal";
  }
  return "?";
}

const char* to_string(PatchKind k) {
  return k == PatchKind::kPal ? "pal" : "low_rank";
}

InsertionMode insertion_mode_from(const std::string& s) {
  if (s == "none") return InsertionMode::kNone;
  if (s == "inner") return InsertionMode::kInner;
  if (s == "outer") return InsertionMode::kOuter;
  if (s == "vertical") return InsertionMode::kVertical;
  if (s == "horizontal") return InsertionMode::kHorizontal;
  throw ConfigError("insertion_mode: unknown value '" + s +
                    "' (expected none|inner|outer|vertical|horizontal)");
}

PatchKind patch_kind_from(const std::string& s) {
  if (s == "pal") return PatchKind::kPal;
  if (s == "low_rank") return PatchKind::kLowRank;
  throw ConfigError("patch_kind: unknown value '" + s + "' (expected pal|low_rank)");
}

void ModelConfig::validate() const {
  if (d_model == 0) throw ConfigError("model.d_model: must be positive");
  if (n_heads <= 0) throw ConfigError("model.n_heads: must be positive");
  if (d_model % static_cast<std::size_t>(n_heads) != 0)
    throw ConfigError("model.d_model: " + std::to_string(d_model) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  if (n_layers == 0) throw ConfigError("model.n_layers: must be positive");
  if (d_ff == 0) throw ConfigError("model.d_ff: must be positive");
  if (max_seq_len < 4)
    throw ConfigError("model.max_seq_len: too small to hold [CLS] q [SEP] a [SEP]");
  if (insertion_mode != InsertionMode::kNone) {
    if (d_patch == 0) throw ConfigError("model.d_patch: must be positive");
    if (d_patch >= d_model)
      throw ConfigError("model.d_patch: " + std::to_string(d_patch) +
                        " must be smaller than d_model " + std::to_string(d_model));
    if (patch_kind == PatchKind::kPal) {
      if (pal_heads <= 0) throw ConfigError("model.pal_heads: must be positive");
      if (d_patch % static_cast<std::size_t>(pal_heads) != 0)
        throw ConfigError("model.d_patch: " + std::to_string(d_patch) +
                          " not divisible by pal_heads " + std::to_string(pal_heads));
    }
  }
  if (n_shared_layers > n_layers)
    throw ConfigError("model.n_shared_layers: " + std::to_string(n_shared_layers) +
                      " exceeds n_layers " + std::to_string(n_layers));
}

std::size_t patch_instance_count(const ModelConfig& c) {
  switch (c.insertion_mode) {
    case InsertionMode::kNone: return 0;
    case InsertionMode::kInner:
    case InsertionMode::kOuter: return 2 * c.n_layers;
    case InsertionMode::kHorizontal: return c.n_layers;
    case InsertionMode::kVertical: return 1;
  }
  return 0;
}

namespace {

std::size_t patch_instance_params(const ModelConfig& c) {
  std::size_t n = 2 * c.d_model * c.d_patch;
  if (c.patch_kind == PatchKind::kPal) n += 4 * c.d_patch * c.d_patch;
  return n;
}

}  // namespace

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  std::size_t n = c.vocab_size * d + c.max_seq_len * d + 2 * d;
  n += c.n_layers * (4 * d * d + 2 * d + c.d_ff * d + c.d_ff + d * c.d_ff + d + 2 * d);
  n += d + 1;
  n += patch_instance_count(c) * patch_instance_params(c);
  return n;
}

namespace {

void add_patch_instance(ParameterSet& ps, const ModelConfig& c, const std::string& prefix) {
  ps.add(prefix + ".down", Tensor::zeros({c.d_patch, c.d_model}), true);
  ps.add(prefix + ".up", Tensor::zeros({c.d_model, c.d_patch}), true);
  if (c.patch_kind == PatchKind::kPal) {
    for (const char* w : {"wq", "wk", "wv", "wo"})
      ps.add(prefix + ".pal." + w, Tensor::zeros({c.d_patch, c.d_patch}), true);
  }
}

}  // namespace

ParameterSet make_parameter_set(const ModelConfig& c) {
  c.validate();
  if (c.vocab_size < 4)
    throw ConfigError("model.vocab_size: must cover the reserved ids (>= 4)");
  const std::size_t d = c.d_model;
  ParameterSet ps;
  ps.add("embed.token", Tensor::zeros({c.vocab_size, d}), false);
  ps.add("embed.position", Tensor::zeros({c.max_seq_len, d}), false);
  ps.add("embed.segment", Tensor::zeros({2, d}), false);
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const bool priv = i >= c.n_shared_layers;
    const std::string p = "layer." + std::to_string(i);
    ps.add(p + ".attn.wq", Tensor::zeros({d, d}), priv);
    ps.add(p + ".attn.wk", Tensor::zeros({d, d}), priv);
    ps.add(p + ".attn.wv", Tensor::zeros({d, d}), priv);
    ps.add(p + ".attn.wo", Tensor::zeros({d, d}), priv);
    ps.add(p + ".attn.ln.gain", Tensor::zeros({d}), priv);
    ps.add(p + ".attn.ln.bias", Tensor::zeros({d}), priv);
    ps.add(p + ".ffn.w1", Tensor::zeros({c.d_ff, d}), priv);
    ps.add(p + ".ffn.b1", Tensor::zeros({c.d_ff}), priv);
    ps.add(p + ".ffn.w2", Tensor::zeros({d, c.d_ff}), priv);
    ps.add(p + ".ffn.b2", Tensor::zeros({d}), priv);
    ps.add(p + ".ffn.ln.gain", Tensor::zeros({d}), priv);
    ps.add(p + ".ffn.ln.bias", Tensor::zeros({d}), priv);
  }
  ps.add("head.weight", Tensor::zeros({d}), false);
  ps.add("head.bias", Tensor::zeros({1}), false);
  switch (c.insertion_mode) {
    case InsertionMode::kNone:
      break;
    case InsertionMode::kInner:
    case InsertionMode::kOuter:
      for (std::size_t i = 0; i < c.n_layers; ++i) {
        add_patch_instance(ps, c, "patch.layer." + std::to_string(i) + ".attn");
        add_patch_instance(ps, c, "patch.layer." + std::to_string(i) + ".ffn");
      }
      break;
    case InsertionMode::kHorizontal:
      for (std::size_t i = 0; i < c.n_layers; ++i)
        add_patch_instance(ps, c, "patch.layer." + std::to_string(i));
      break;
    case InsertionMode::kVertical:
      add_patch_instance(ps, c, "patch.top");
      break;
  }
  return ps;
}

void init_parameters(ParameterSet& params, Rng& rng) {
  for (auto& e : params) {
    const std::string& n = e.name;
    auto ends_with = [&](const char* suf) {
      std::size_t l = std::strlen(suf);
      return n.size() >= l && n.compare(n.size() - l, l, suf) == 0;
    };
    if (ends_with(".ln.gain")) {
      for (auto& v : e.tensor.values) v = 1.0;
    } else if (ends_with(".ln.bias") || ends_with(".b1") || ends_with(".b2") ||
               n == "head.bias" || ends_with(".up")) {
      for (auto& v : e.tensor.values) v = 0.0;
    } else {
      for (auto& v : e.tensor.values) v = rng.normal(0.0, 0.02);
    }
  }
}

std::vector<Tape::VarId> add_leaves(Tape& tape, const ParameterSet& params) {
  std::vector<Tape::VarId> leaves;
  leaves.reserve(params.size());
  for (const auto& e : params) leaves.push_back(tape.leaf(e.tensor));
  return leaves;
}

Matcher::Matcher(const ModelConfig& c) : cfg_(c) {
  ParameterSet ps = make_parameter_set(c);
  std::unordered_map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < ps.size(); ++i) at.emplace(ps[i].name, i);
  auto slot = [&](const std::string& n) { return at.at(n); };

  tok_ = slot("embed.token");
  pos_ = slot("embed.position");
  seg_ = slot("embed.segment");
  head_w_ = slot("head.weight");
  head_b_ = slot("head.bias");
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const std::string p = "layer." + std::to_string(i);
    layers_.push_back({slot(p + ".attn.wq"), slot(p + ".attn.wk"), slot(p + ".attn.wv"),
                       slot(p + ".attn.wo"), slot(p + ".attn.ln.gain"),
                       slot(p + ".attn.ln.bias"), slot(p + ".ffn.w1"), slot(p + ".ffn.b1"),
                       slot(p + ".ffn.w2"), slot(p + ".ffn.b2"), slot(p + ".ffn.ln.gain"),
                       slot(p + ".ffn.ln.bias")});
  }
  auto patch_slots = [&](const std::string& prefix) {
    PatchSlots s;
    s.present = true;
    s.down = slot(prefix + ".down");
    s.up = slot(prefix + ".up");
    if (c.patch_kind == PatchKind::kPal) {
      s.pal_wq = slot(prefix + ".pal.wq");
      s.pal_wk = slot(prefix + ".pal.wk");
      s.pal_wv = slot(prefix + ".pal.wv");
      s.pal_wo = slot(prefix + ".pal.wo");
    }
    return s;
  };
  switch (c.insertion_mode) {
    case InsertionMode::kNone:
      break;
    case InsertionMode::kInner:
    case InsertionMode::kOuter:
      for (std::size_t i = 0; i < c.n_layers; ++i) {
        attn_patches_.push_back(patch_slots("patch.layer." + std::to_string(i) + ".attn"));
        ffn_patches_.push_back(patch_slots("patch.layer." + std::to_string(i) + ".ffn"));
      }
      break;
    case InsertionMode::kHorizontal:
      for (std::size_t i = 0; i < c.n_layers; ++i)
        layer_patches_.push_back(patch_slots("patch.layer." + std::to_string(i)));
      break;
    case InsertionMode::kVertical:
      top_patch_ = patch_slots("patch.top");
      break;
  }
}

void Matcher::make_input(const std::vector<int>& question, const std::vector<int>& answer,
                         std::vector<int>& ids, std::vector<int>& segments,
                         bool& truncated) const {
  if (question.empty() || answer.empty())
    throw ConfigError("score: question and answer must be non-empty");
  const std::size_t fixed = question.size() + 3;  // CLS, two SEPs
  if (fixed + 1 > cfg_.max_seq_len)
    throw ConfigError("score: question of length " + std::to_string(question.size()) +
                      " leaves no room for an answer within max_seq_len " +
                      std::to_string(cfg_.max_seq_len));
  std::size_t a_len = answer.size();
  truncated = false;
  if (fixed + a_len > cfg_.max_seq_len) {
    a_len = cfg_.max_seq_len - fixed;
    truncated = true;
  }
  ids.clear();
  segments.clear();
  ids.push_back(kClsId);
  ids.insert(ids.end(), question.begin(), question.end());
  ids.push_back(kSepId);
  segments.assign(ids.size(), 0);
  ids.insert(ids.end(), answer.begin(), answer.begin() + static_cast<std::ptrdiff_t>(a_len));
  ids.push_back(kSepId);
  segments.resize(ids.size(), 1);
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
      throw ConfigError("score: token id " + std::to_string(id) +
                        " outside vocabulary of size " + std::to_string(cfg_.vocab_size));
}

Tape::VarId Matcher::apply_patch(Tape& tape, const std::vector<Tape::VarId>& leaves,
                                 const PatchSlots& p, Tape::VarId h) const {
  auto down = tape.linear(h, leaves[p.down]);
  Tape::VarId g;
  if (cfg_.patch_kind == PatchKind::kLowRank) {
    g = tape.gelu(down);
  } else {
    auto q = tape.linear(down, leaves[p.pal_wq]);
    auto k = tape.linear(down, leaves[p.pal_wk]);
    auto v = tape.linear(down, leaves[p.pal_wv]);
    const double scale =
        1.0 / std::sqrt(static_cast<double>(cfg_.d_patch) / cfg_.pal_heads);
    auto att = tape.attention(q, k, v, cfg_.pal_heads, scale);
    g = tape.linear(att, leaves[p.pal_wo]);
  }
  return tape.linear(g, leaves[p.up]);
}

Tape::VarId Matcher::layer_forward(Tape& tape, const std::vector<Tape::VarId>& leaves,
                                   std::size_t layer, Tape::VarId h) const {
  const LayerSlots& L = layers_[layer];
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model) / cfg_.n_heads);
  auto mh = [&](Tape::VarId x) {
    auto q = tape.linear(x, leaves[L.wq]);
    auto k = tape.linear(x, leaves[L.wk]);
    auto v = tape.linear(x, leaves[L.wv]);
    auto att = tape.attention(q, k, v, cfg_.n_heads, scale);
    return tape.linear(att, leaves[L.wo]);
  };
  auto ffn = [&](Tape::VarId x) {
    auto hidden = tape.gelu(tape.linear(x, leaves[L.w1], leaves[L.b1]));
    return tape.linear(hidden, leaves[L.w2], leaves[L.b2]);
  };
  auto ln1 = [&](Tape::VarId x) { return tape.layer_norm(x, leaves[L.ln1_gain], leaves[L.ln1_bias]); };
  auto ln2 = [&](Tape::VarId x) { return tape.layer_norm(x, leaves[L.ln2_gain], leaves[L.ln2_bias]); };

  switch (cfg_.insertion_mode) {
    case InsertionMode::kInner: {
      auto pm = apply_patch(tape, leaves, attn_patches_[layer], mh(h));
      auto sa = ln1(tape.add(pm, h));
      auto pf = apply_patch(tape, leaves, ffn_patches_[layer], ffn(sa));
      return ln2(tape.add(pf, sa));
    }
    case InsertionMode::kOuter: {
      auto sa = ln1(tape.add(tape.add(mh(h), h), apply_patch(tape, leaves, attn_patches_[layer], h)));
      return ln2(tape.add(tape.add(ffn(sa), apply_patch(tape, leaves, ffn_patches_[layer], sa)), sa));
    }
    case InsertionMode::kHorizontal: {
      auto sa = ln1(tape.add(mh(h), h));
      auto base = ln2(tape.add(ffn(sa), sa));
      return tape.add(apply_patch(tape, leaves, layer_patches_[layer], h), base);
    }
    case InsertionMode::kNone:
    case InsertionMode::kVertical: {
      auto sa = ln1(tape.add(mh(h), h));
      return ln2(tape.add(ffn(sa), sa));
    }
  }
  return h;
}

Tape::VarId Matcher::encode(Tape& tape, const std::vector<Tape::VarId>& leaves,
                            const std::vector<int>& ids, const std::vector<int>& segments) const {
  std::vector<int> positions(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
  auto h = tape.add(tape.add(tape.gather_rows(leaves[tok_], ids),
                             tape.gather_rows(leaves[pos_], positions)),
                    tape.gather_rows(leaves[seg_], segments));
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) h = layer_forward(tape, leaves, i, h);
  if (cfg_.insertion_mode == InsertionMode::kVertical)
    h = apply_patch(tape, leaves, top_patch_, h);
  return h;
}

Tape::VarId Matcher::build_score(Tape& tape, const std::vector<Tape::VarId>& leaves,
                                 const std::vector<int>& question,
                                 const std::vector<int>& answer, ScoreStats* stats) const {
  std::vector<int> ids, segments;
  bool truncated = false;
  make_input(question, answer, ids, segments, truncated);
  if (stats) {
    ++stats->scored;
    if (truncated) ++stats->truncated_answers;
  }
  auto h = encode(tape, leaves, ids, segments);
  auto cls = tape.select_row(h, 0);
  auto s = tape.dot(cls, leaves[head_w_]);
  return tape.add(s, leaves[head_b_]);
}

std::vector<double> Matcher::score_candidates(const ParameterSet& params,
                                              const std::vector<int>& question,
                                              const std::vector<std::vector<int>>& answers,
                                              ScoreStats* stats) const {
  Tape tape;
  auto leaves = add_leaves(tape, params);
  std::vector<double> out;
  out.reserve(answers.size());
  for (const auto& a : answers)
    out.push_back(tape.scalar_value(build_score(tape, leaves, question, a, stats)));
  return out;
}

double Matcher::score(const ParameterSet& params, const std::vector<int>& question,
                      const std::vector<int>& answer, ScoreStats* stats) const {
  return score_candidates(params, question, {answer}, stats)[0];
}

}  // namespace fedrank
