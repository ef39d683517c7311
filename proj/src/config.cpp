#include "fedrank/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "fedrank/errors.hpp"
#include "fedrank/serialize.hpp"

namespace fedrank {

using nlohmann::json;

namespace {

json parse_file(const std::string& path, const char* what) {
  std::ifstream f(path);
  if (!f) throw IoError(std::string("cannot read ") + what + " " + path);
  try {
    json j;
    f >> j;
    return j;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::size_t get_count(const json& j, const char* key, std::size_t fallback,
                      const std::string& prefix) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number_integer() || (!it->is_number_unsigned() && it->get<std::int64_t>() < 0))
    throw ConfigError(prefix + key + ": must be a non-negative integer");
  return it->get<std::size_t>();
}

double get_real(const json& j, const char* key, double fallback, const std::string& prefix) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number()) throw ConfigError(prefix + key + ": must be a number");
  return it->get<double>();
}

std::string get_text(const json& j, const char* key, std::string fallback,
                     const std::string& prefix) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_string()) throw ConfigError(prefix + key + ": must be a string");
  return it->get<std::string>();
}

bool get_flag(const json& j, const char* key, bool fallback, const std::string& prefix) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_boolean()) throw ConfigError(prefix + key + ": must be a boolean");
  return it->get<bool>();
}

}  // namespace

void RunConfig::validate() const {
  if (corpus_dir.empty()) throw ConfigError("corpus_dir: missing");
  if (out_dir.empty()) throw ConfigError("out_dir: missing");
  model.validate();
  const auto& f = federation;
  if (f.aggregation_every_k_epochs < 1 || f.aggregation_every_k_epochs > 3)
    throw ConfigError("federation.aggregation_every_k_epochs: must be 1, 2, or 3");
  const auto& t = training;
  if (!std::isfinite(t.base_lr) || t.base_lr < 0)
    throw ConfigError("training.base_lr: must be a finite non-negative number");
  if (t.batch_size < 1) throw ConfigError("training.batch_size: must be at least 1");
  for (const auto& [id, bs] : t.batch_size_by_participant)
    if (bs < 1)
      throw ConfigError("training.batch_size_by_participant." + std::to_string(id) +
                        ": must be at least 1");
  if (t.negatives_per_question < 1)
    throw ConfigError("training.negatives_per_question: must be at least 1");
  if (!(t.train_ratio > 0.0) || t.train_ratio > 1.0)
    throw ConfigError("training.train_ratio: must be in (0, 1]");
}

json run_config_to_json(const RunConfig& c) {
  json batches = json::object();
  for (const auto& [id, bs] : c.training.batch_size_by_participant)
    batches[std::to_string(id)] = bs;
  return json{{"corpus_dir", c.corpus_dir},
              {"out_dir", c.out_dir},
              {"seed", c.seed},
              {"model", model_config_to_json(c.model)},
              {"federation",
               {{"rounds", c.federation.rounds},
                {"aggregation_every_k_epochs", c.federation.aggregation_every_k_epochs},
                {"sample_size", c.federation.sample_size},
                {"isolated", c.federation.isolated}}},
              {"training",
               {{"base_lr", c.training.base_lr},
                {"batch_size", c.training.batch_size},
                {"batch_size_by_participant", batches},
                {"negatives_per_question", c.training.negatives_per_question},
                {"train_ratio", c.training.train_ratio}}}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("run config: top level must be an object");
  RunConfig c;
  c.corpus_dir = get_text(j, "corpus_dir", "", "");
  c.out_dir = get_text(j, "out_dir", "", "");
  if (auto it = j.find("seed"); it != j.end()) {
    if (!it->is_number_integer() || (!it->is_number_unsigned() && it->get<std::int64_t>() < 0))
      throw ConfigError("seed: must be a non-negative integer");
    c.seed = it->get<std::uint64_t>();
  }
  if (auto it = j.find("model"); it != j.end())
    c.model = model_config_from_json(*it, "model.");
  if (auto it = j.find("federation"); it != j.end()) {
    const json& f = *it;
    if (!f.is_object()) throw ConfigError("federation: must be an object");
    c.federation.rounds = get_count(f, "rounds", c.federation.rounds, "federation.");
    c.federation.aggregation_every_k_epochs = get_count(
        f, "aggregation_every_k_epochs", c.federation.aggregation_every_k_epochs, "federation.");
    c.federation.sample_size =
        get_count(f, "sample_size", c.federation.sample_size, "federation.");
    c.federation.isolated = get_flag(f, "isolated", c.federation.isolated, "federation.");
  }
  if (auto it = j.find("training"); it != j.end()) {
    const json& t = *it;
    if (!t.is_object()) throw ConfigError("training: must be an object");
    c.training.base_lr = get_real(t, "base_lr", c.training.base_lr, "training.");
    c.training.batch_size = get_count(t, "batch_size", c.training.batch_size, "training.");
    c.training.negatives_per_question =
        get_count(t, "negatives_per_question", c.training.negatives_per_question, "training.");
    c.training.train_ratio = get_real(t, "train_ratio", c.training.train_ratio, "training.");
    if (auto bit = t.find("batch_size_by_participant"); bit != t.end()) {
      if (!bit->is_object())
        throw ConfigError("training.batch_size_by_participant: must be an object");
      for (const auto& [key, value] : bit->items()) {
        int id = 0;
        try {
          id = std::stoi(key);
        } catch (const std::exception&) {
          throw ConfigError("training.batch_size_by_participant." + key +
                            ": key must be a client id");
        }
        if (!value.is_number_integer() ||
            (!value.is_number_unsigned() && value.get<std::int64_t>() < 0))
          throw ConfigError("training.batch_size_by_participant." + key +
                            ": must be a non-negative integer");
        c.training.batch_size_by_participant[id] = value.get<std::size_t>();
      }
    }
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(parse_file(path, "run config"));
}

void GenerateConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("out_dir: missing");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("scale: must be positive");
  if (options.marker_rate < 0.0 || options.marker_rate > 1.0)
    throw ConfigError("options.marker_rate: must be in [0, 1]");
  if (options.keywords_per_question < 1)
    throw ConfigError("options.keywords_per_question: must be at least 1");
  if (options.keywords_per_topic < options.keywords_per_question + 2)
    throw ConfigError("options.keywords_per_topic: must exceed keywords_per_question by 2");
  if (options.n_topics < 2) throw ConfigError("options.n_topics: must be at least 2");
  if (options.function_words < 1)
    throw ConfigError("options.function_words: must be at least 1");
}

GenerateConfig generate_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("generate config: top level must be an object");
  GenerateConfig c;
  c.out_dir = get_text(j, "out_dir", "", "");
  if (auto it = j.find("seed"); it != j.end()) {
    if (!it->is_number_integer() || (!it->is_number_unsigned() && it->get<std::int64_t>() < 0))
      throw ConfigError("seed: must be a non-negative integer");
    c.seed = it->get<std::uint64_t>();
  }
  c.scale = get_real(j, "scale", c.scale, "");
  if (auto it = j.find("options"); it != j.end()) {
    const json& o = *it;
    if (!o.is_object()) throw ConfigError("options: must be an object");
    c.options.iid = get_flag(o, "iid", c.options.iid, "options.");
    c.options.function_words =
        get_count(o, "function_words", c.options.function_words, "options.");
    c.options.n_markers = get_count(o, "n_markers", c.options.n_markers, "options.");
    c.options.marker_rate = get_real(o, "marker_rate", c.options.marker_rate, "options.");
    c.options.n_topics = get_count(o, "n_topics", c.options.n_topics, "options.");
    c.options.keywords_per_topic =
        get_count(o, "keywords_per_topic", c.options.keywords_per_topic, "options.");
    c.options.keywords_per_question =
        get_count(o, "keywords_per_question", c.options.keywords_per_question, "options.");
  }
  if (auto it = j.find("profiles"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("profiles: must be an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      try {
        c.profiles.push_back(profile_from_json((*it)[i]));
      } catch (const std::exception& e) {
        throw ConfigError("profiles[" + std::to_string(i) + "]: " + e.what());
      }
    }
  }
  return c;
}

GenerateConfig load_generate_config(const std::string& path) {
  return generate_config_from_json(parse_file(path, "generate config"));
}

namespace {

// A nominal patch width quoted against the usual 768-wide encoder, rescaled
// to this backbone's width. pal patches need a head-divisible width.
std::size_t scaled_patch_dim(std::size_t nominal, const ModelConfig& m) {
  auto d = static_cast<std::size_t>(std::llround(
      static_cast<double>(nominal) * static_cast<double>(m.d_model) / 768.0));
  if (d < 1) d = 1;
  if (m.patch_kind == PatchKind::kPal) {
    const auto ph = static_cast<std::size_t>(m.pal_heads);
    d = (d + ph - 1) / ph * ph;
  }
  if (d >= m.d_model) d = m.d_model - 1;
  return d;
}

}  // namespace

std::vector<GridRow> standard_grid(const RunConfig& base) {
  std::vector<GridRow> rows;
  auto add = [&](const std::string& name, RunConfig c) {
    c.out_dir = base.out_dir + "/" + name;
    rows.push_back({name, std::move(c)});
  };

  const std::pair<InsertionMode, const char*> modes[] = {
      {InsertionMode::kInner, "inner"},
      {InsertionMode::kOuter, "outer"},
      {InsertionMode::kVertical, "vertical"},
      {InsertionMode::kHorizontal, "horizontal"}};
  const std::pair<PatchKind, const char*> kinds[] = {{PatchKind::kLowRank, "low_rank"},
                                                     {PatchKind::kPal, "pal"}};
  for (const auto& [mode, mname] : modes)
    for (const auto& [kind, kname] : kinds) {
      RunConfig c = base;
      c.model.insertion_mode = mode;
      c.model.patch_kind = kind;
      if (kind == PatchKind::kPal) {
        const auto ph = static_cast<std::size_t>(c.model.pal_heads);
        c.model.d_patch = (c.model.d_patch + ph - 1) / ph * ph;
      }
      add(std::string(mname) + "_" + kname, std::move(c));
    }

  {
    RunConfig c = base;
    c.model.insertion_mode = InsertionMode::kNone;
    c.model.n_shared_layers = c.model.n_layers;
    add("fedavg", std::move(c));
  }
  {
    RunConfig c = base;
    c.model.insertion_mode = InsertionMode::kNone;
    c.federation.isolated = true;
    add("isolated", std::move(c));
  }

  for (std::size_t i = 0; i <= base.model.n_layers; ++i) {
    RunConfig c = base;
    c.model.n_shared_layers = i;
    add("shared_" + std::to_string(i), std::move(c));
  }

  for (std::size_t nominal : {32, 64, 128, 256, 512}) {
    RunConfig c = base;
    c.model.d_patch = scaled_patch_dim(nominal, c.model);
    add("patch_size_" + std::to_string(nominal), std::move(c));
  }

  for (std::size_t k : {1, 2, 3}) {
    RunConfig c = base;
    c.federation.aggregation_every_k_epochs = k;
    add("agg_every_" + std::to_string(k), std::move(c));
  }

  {
    RunConfig c = base;
    c.federation.sample_size = 2;
    add("sample_2", std::move(c));
  }

  const std::pair<double, const char*> ratios[] = {
      {0.2, "0.2"}, {0.4, "0.4"}, {0.6, "0.6"}, {0.8, "0.8"}, {1.0, "1.0"}};
  for (const auto& [ratio, rname] : ratios) {
    RunConfig c = base;
    c.training.train_ratio = ratio;
    add(std::string("ratio_") + rname, std::move(c));
  }

  return rows;
}

std::vector<GridRow> grid_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("grid: top level must be an object");
  auto bit = j.find("base");
  if (bit == j.end()) throw ConfigError("grid.base: missing");
  const RunConfig base = run_config_from_json(*bit);

  std::vector<GridRow> rows;
  if (get_flag(j, "standard", false, "grid.")) rows = standard_grid(base);
  if (auto rit = j.find("rows"); rit != j.end()) {
    if (!rit->is_array()) throw ConfigError("grid.rows: must be an array");
    for (std::size_t i = 0; i < rit->size(); ++i) {
      const json& row = (*rit)[i];
      const std::string where = "grid.rows[" + std::to_string(i) + "]";
      if (!row.is_object()) throw ConfigError(where + ": must be an object");
      auto nit = row.find("name");
      if (nit == row.end() || !nit->is_string())
        throw ConfigError(where + ".name: missing or not a string");
      const auto name = nit->get<std::string>();
      if (name.empty() || name.find('/') != std::string::npos)
        throw ConfigError(where + ".name: must be a non-empty path-safe name");
      json merged = *bit;
      if (auto oit = row.find("overrides"); oit != row.end()) merged.merge_patch(*oit);
      RunConfig c = run_config_from_json(merged);
      c.out_dir = base.out_dir + "/" + name;
      rows.push_back({name, std::move(c)});
    }
  }
  if (rows.empty())
    throw ConfigError("grid: no rows (set \"standard\": true or provide \"rows\")");

  std::set<std::string> seen;
  for (auto& r : rows) {
    if (!seen.insert(r.name).second) throw ConfigError("grid: duplicate row name " + r.name);
    try {
      r.config.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("grid row " + r.name + ": " + e.what());
    }
  }
  return rows;
}

std::vector<GridRow> load_grid(const std::string& path) {
  return grid_from_json(parse_file(path, "grid"));
}

}  // namespace fedrank
