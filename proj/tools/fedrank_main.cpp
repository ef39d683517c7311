#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedrank/config.hpp"
#include "fedrank/corpus.hpp"
#include "fedrank/errors.hpp"
#include "fedrank/evaluate.hpp"
#include "fedrank/federation.hpp"
#include "fedrank/model.hpp"
#include "fedrank/serialize.hpp"
#include "fedrank/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw fedrank::IoError("cannot write " + path.string());
  f << content;
  if (!f) throw fedrank::IoError("short write to " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw fedrank::IoError("cannot create directory " + dir.string());
}

int cmd_generate(const fedrank::GenerateConfig& config) {
  auto profiles =
      config.profiles.empty() ? fedrank::default_profiles(config.scale) : config.profiles;
  auto corpus = fedrank::make_corpus(profiles, config.options, config.seed);
  fedrank::write_corpus(config.out_dir, corpus);
  std::size_t questions = 0;
  for (const auto& pd : corpus.participants)
    questions += fedrank::group_by_question(pd.splits.train).size() +
                 fedrank::group_by_question(pd.splits.dev).size() +
                 fedrank::group_by_question(pd.splits.test).size();
  std::cout << "wrote " << corpus.participants.size() << " participants, " << questions
            << " questions to " << config.out_dir << "\n";
  return 0;
}

fedrank::ExperimentResult run_one(const fedrank::RunConfig& config, bool echo_rounds) {
  const auto corpus = fedrank::load_corpus(config.corpus_dir);
  const auto vocab = fedrank::build_vocabulary(corpus);
  const auto model = fedrank::resolve_model_config(config, vocab);

  const fs::path out(config.out_dir);
  const fs::path ckdir = out / "checkpoints";
  ensure_dir(out);
  ensure_dir(ckdir);
  write_text(out / "config.json", fedrank::run_config_to_json(config).dump(2) + "\n");

  std::ofstream metrics(out / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw fedrank::IoError("cannot write " + (out / "metrics.jsonl").string());

  fedrank::RunHooks hooks;
  hooks.on_metrics_line = [&](const std::string& line) {
    metrics << line << '\n';
    if (echo_rounds && line.find("overall_dev_map") != std::string::npos)
      std::cerr << line << '\n';
  };
  hooks.on_round_checkpoint = [&](std::size_t round, const fedrank::ParameterSet& shared) {
    fedrank::write_checkpoint((ckdir / ("round_" + std::to_string(round) + ".ck")).string(),
                              model, shared);
  };
  hooks.on_client_final = [&](const fedrank::Client& client) {
    fedrank::write_checkpoint(
        (ckdir / ("client_" + std::to_string(client.id()) + ".ck")).string(), model,
        client.params());
  };

  auto result = fedrank::run_experiment(config, corpus, hooks);
  metrics.close();
  if (!metrics) throw fedrank::IoError("short write to " + (out / "metrics.jsonl").string());

  write_text(out / "report.json", fedrank::to_json(result.test));
  write_text(out / "summary.txt",
             fedrank::summary_table(result.test, result.participant_names));
  return result;
}

int cmd_run(const fedrank::RunConfig& config) {
  auto result = run_one(config, true);
  std::cout << fedrank::summary_table(result.test, result.participant_names);
  std::cout << "skipped_no_negative=" << result.skipped_no_negative
            << " truncated_answers=" << result.truncated_answers << "\n";
  return 0;
}

// Numeric suffix of a sweep row name, e.g. ratio_0.4 -> 0.4.
bool sweep_value(const std::string& name, const std::string& prefix, double& value) {
  if (name.rfind(prefix, 0) != 0) return false;
  try {
    value = std::stod(name.substr(prefix.size()));
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

int cmd_grid(const std::vector<fedrank::GridRow>& rows, const std::string& filter) {
  std::vector<std::string> wanted;
  if (!filter.empty()) {
    std::string cur;
    for (char c : filter + ",") {
      if (c == ',') {
        if (!cur.empty()) wanted.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    for (const auto& w : wanted) {
      bool known = false;
      for (const auto& r : rows) known = known || r.name == w;
      if (!known) throw fedrank::ConfigError("grid: no row named " + w);
    }
  }

  struct RowOutcome {
    std::string name;
    bool ok = false;
    std::string error;
    double map = 0.0, mrr = 0.0;
  };
  std::vector<RowOutcome> outcomes;
  int worst = 0;
  for (const auto& row : rows) {
    if (!wanted.empty() &&
        std::find(wanted.begin(), wanted.end(), row.name) == wanted.end())
      continue;
    RowOutcome oc;
    oc.name = row.name;
    std::cerr << "[grid] " << row.name << "\n";
    try {
      auto result = run_one(row.config, false);
      oc.ok = true;
      oc.map = result.test.overall_map;
      oc.mrr = result.test.overall_mrr;
    } catch (const fedrank::ConfigError& e) {
      oc.error = e.what();
      worst = std::max(worst, 1);
    } catch (const fedrank::IoError& e) {
      oc.error = e.what();
      worst = std::max(worst, 1);
    } catch (const std::exception& e) {
      oc.error = e.what();
      worst = 2;
    }
    if (!oc.ok) std::cerr << "[grid] " << row.name << " failed: " << oc.error << "\n";
    outcomes.push_back(std::move(oc));
  }
  if (outcomes.empty()) throw fedrank::ConfigError("grid: row filter matched nothing");

  auto sorted = outcomes;
  std::stable_sort(sorted.begin(), sorted.end(), [](const RowOutcome& a, const RowOutcome& b) {
    if (a.ok != b.ok) return a.ok;
    return a.map > b.map;
  });
  std::ostringstream table;
  table << std::left << std::setw(24) << "run" << std::right << std::setw(10) << "map"
        << std::setw(10) << "mrr" << "  status\n";
  for (const auto& oc : sorted) {
    table << std::left << std::setw(24) << oc.name << std::right << std::fixed
          << std::setprecision(4) << std::setw(10) << oc.map << std::setw(10) << oc.mrr
          << "  " << (oc.ok ? "ok" : oc.error) << "\n";
  }

  const fs::path base_out = fs::path(rows.front().config.out_dir).parent_path();
  ensure_dir(base_out);
  write_text(base_out / "grid_summary.txt", table.str());
  std::cout << table.str();

  const std::pair<const char*, const char*> sweeps[] = {{"patch_size_", "patch_size"},
                                                        {"shared_", "shared_layers"},
                                                        {"agg_every_", "agg_every"},
                                                        {"ratio_", "ratio"}};
  for (const auto& [prefix, axis] : sweeps) {
    std::vector<std::pair<double, const RowOutcome*>> series;
    for (const auto& oc : outcomes) {
      double v = 0;
      if (oc.ok && sweep_value(oc.name, prefix, v)) series.emplace_back(v, &oc);
    }
    if (series.size() < 2) continue;
    std::sort(series.begin(), series.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::ostringstream csv;
    csv << axis << ",overall_map,overall_mrr\n";
    char buf[96];
    for (const auto& [v, oc] : series) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", v, oc->map, oc->mrr);
      csv << buf;
    }
    write_text(base_out / ("sweep_" + std::string(axis) + ".csv"), csv.str());
  }
  return worst;
}

int cmd_eval(const std::string& ck_dir, const std::string& corpus_dir,
             const std::string& out_path) {
  const auto corpus = fedrank::load_corpus(corpus_dir);
  const auto vocab = fedrank::build_vocabulary(corpus);

  std::vector<fedrank::ParticipantMetrics> per;
  std::vector<std::string> names;
  for (const auto& pd : corpus.participants) {
    const auto path =
        (fs::path(ck_dir) / ("client_" + std::to_string(pd.profile.id) + ".ck")).string();
    auto ck = fedrank::read_checkpoint(path);
    if (ck.config.vocab_size != vocab.size())
      throw fedrank::ConfigError(path + ": checkpoint vocabulary size " +
                                 std::to_string(ck.config.vocab_size) +
                                 " does not match the corpus (" +
                                 std::to_string(vocab.size()) + ")");
    const auto expected = fedrank::make_parameter_set(ck.config);
    if (expected.size() != ck.params.size())
      throw fedrank::ConfigError(path + ": expected " + std::to_string(expected.size()) +
                                 " parameters, found " + std::to_string(ck.params.size()));
    for (const auto& e : expected) {
      const auto* got = ck.params.find(e.name);
      if (!got) throw fedrank::ConfigError(path + ": missing parameter " + e.name);
      if (got->tensor.shape != e.tensor.shape)
        throw fedrank::ConfigError(path + ": shape mismatch on parameter " + e.name);
    }

    fedrank::Matcher matcher(ck.config);
    fedrank::GroupScorer scorer = [&](const std::vector<std::string>& question,
                                      const std::vector<std::vector<std::string>>& cands) {
      std::vector<std::vector<int>> encoded;
      encoded.reserve(cands.size());
      for (const auto& c : cands) encoded.push_back(vocab.encode(c));
      return matcher.score_candidates(ck.params, vocab.encode(question), encoded);
    };
    per.push_back(fedrank::evaluate_participant(pd.profile.id, pd.splits.test, scorer));
    names.push_back(pd.profile.name);
  }

  const auto report = fedrank::overall(std::move(per));
  const auto text = fedrank::to_json(report);
  std::cout << text;
  if (!out_path.empty()) write_text(out_path, text);
  std::cerr << fedrank::summary_table(report, names);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated question-answer matching over synthetic heterogeneous corpora"};
  app.require_subcommand(1);

  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 0;
  bool gen_seed_set = false, gen_iid = false;
  auto* gen = app.add_subcommand("generate", "synthesize a partitioned corpus");
  gen->add_option("--config", gen_config, "generate config (json)");
  gen->add_option("--out", gen_out, "output directory (overrides config)");
  gen->add_option("--seed", gen_seed, "seed override")->each([&](const std::string&) {
    gen_seed_set = true;
  });
  gen->add_flag("--iid", gen_iid, "collapse participants onto one distribution");

  std::string run_config, run_out, run_corpus;
  std::uint64_t run_seed = 0;
  bool run_seed_set = false;
  auto* run = app.add_subcommand("run", "execute one federated experiment");
  run->add_option("--config", run_config, "run config (json)")->required();
  run->add_option("--out", run_out, "output directory (overrides config)");
  run->add_option("--corpus", run_corpus, "corpus directory (overrides config)");
  run->add_option("--seed", run_seed, "seed override")->each([&](const std::string&) {
    run_seed_set = true;
  });

  std::string grid_config, grid_rows;
  auto* grid = app.add_subcommand("grid", "execute a set of experiments");
  grid->add_option("--config", grid_config, "grid config (json)")->required();
  grid->add_option("--rows", grid_rows, "comma-separated row names to run");

  std::string eval_ck, eval_corpus, eval_out;
  auto* eval = app.add_subcommand("eval", "score checkpoints against a corpus");
  eval->add_option("--checkpoints", eval_ck, "directory with client_<id>.ck files")
      ->required();
  eval->add_option("--corpus", eval_corpus, "corpus directory")->required();
  eval->add_option("--out", eval_out, "also write the report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      fedrank::GenerateConfig config;
      if (!gen_config.empty()) config = fedrank::load_generate_config(gen_config);
      if (!gen_out.empty()) config.out_dir = gen_out;
      if (gen_seed_set) config.seed = gen_seed;
      if (gen_iid) config.options.iid = true;
      config.validate();
      return cmd_generate(config);
    }
    if (*run) {
      auto config = fedrank::load_run_config(run_config);
      if (!run_out.empty()) config.out_dir = run_out;
      if (!run_corpus.empty()) config.corpus_dir = run_corpus;
      if (run_seed_set) config.seed = run_seed;
      config.validate();
      return cmd_run(config);
    }
    if (*grid) {
      return cmd_grid(fedrank::load_grid(grid_config), grid_rows);
    }
    if (*eval) {
      return cmd_eval(eval_ck, eval_corpus, eval_out);
    }
  } catch (const fedrank::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const fedrank::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const fedrank::ProtocolError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const fedrank::EvalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
