#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedrank/errors.hpp"
#include "fedrank/federation.hpp"
#include "fedrank/serialize.hpp"

using namespace fedrank;

namespace {

// Two small participants with disjoint domain vocabularies, sized so a full
// experiment runs in well under a second.
struct Fixture {
  Corpus corpus;
  Vocabulary vocab;
  ModelConfig model;
  TrainingConfig training;
  FederationConfig fed;

  explicit Fixture(std::uint64_t corpus_seed = 101, std::size_t n_layers = 2,
                   std::size_t n_shared = 1) {
    GeneratorOptions opts;
    opts.n_topics = 2;
    opts.keywords_per_topic = 5;
    opts.keywords_per_question = 3;
    opts.function_words = 10;
    opts.n_markers = 4;

    std::vector<ParticipantProfile> profiles(2);
    for (int t = 0; t < 2; ++t) {
      profiles[t].id = t;
      profiles[t].name = t == 0 ? "alpha" : "beta";
      profiles[t].vocab_lo = static_cast<std::size_t>(t) * 16;
      profiles[t].vocab_hi = profiles[t].vocab_lo + 16;
      profiles[t].question_count = 10;
      profiles[t].candidates_per_question = 3;
      profiles[t].mean_question_len = 4;
      profiles[t].mean_answer_len = 5;
      profiles[t].positive_rate = 1.0 / 3.0;
      profiles[t].polarity = t == 0 ? 1 : -1;
    }
    corpus = make_corpus(profiles, opts, corpus_seed);
    vocab = build_vocabulary(corpus);

    model.d_model = 8;
    model.n_heads = 2;
    model.n_layers = n_layers;
    model.d_ff = 12;
    model.vocab_size = vocab.size();
    model.max_seq_len = 16;
    model.d_patch = 4;
    model.insertion_mode = InsertionMode::kHorizontal;
    model.patch_kind = PatchKind::kLowRank;
    model.n_shared_layers = n_shared;

    training.base_lr = 2e-3;
    training.batch_size = 4;
    training.negatives_per_question = 2;

    fed.rounds = 2;
    fed.aggregation_every_k_epochs = 1;
    fed.sample_size = 0;
    fed.isolated = false;
  }

  std::vector<Client> make_clients(std::uint64_t seed, std::size_t total_epochs,
                                   const TrainingConfig* for_client_1 = nullptr) const {
    std::vector<Client> clients;
    clients.reserve(corpus.participants.size());
    for (const auto& pd : corpus.participants) {
      const TrainingConfig& tc =
          for_client_1 && pd.profile.id == 1 ? *for_client_1 : training;
      clients.emplace_back(pd.profile.id, model, tc, pd, vocab, seed, total_epochs, 1);
    }
    return clients;
  }

  RunConfig run_config(std::uint64_t seed) const {
    RunConfig rc;
    rc.seed = seed;
    rc.model = model;
    rc.training = training;
    rc.federation = fed;
    return rc;
  }
};

std::vector<double> shared_values(const ParameterSet& params,
                                  const std::vector<std::string>& names) {
  std::vector<double> out;
  for (const auto& n : names) {
    const auto& v = params.get(n).values;
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  return a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("partition matches an independent walk of the parameter manifest") {
  Fixture f(101, 2, 1);
  auto check = [&](std::size_t n_shared) {
    ModelConfig c = f.model;
    c.n_shared_layers = n_shared;
    auto part = partition_parameters(c);

    std::vector<std::string> shared, priv;
    for (const auto& name : make_parameter_set(c).names()) {
      bool is_priv = name.rfind("patch.", 0) == 0;
      if (name.rfind("layer.", 0) == 0) {
        const auto layer = static_cast<std::size_t>(std::stoul(name.substr(6)));
        if (layer >= n_shared) is_priv = true;
      }
      (is_priv ? priv : shared).push_back(name);
    }
    CHECK(part.shared == shared);
    CHECK(part.priv == priv);
  };
  check(0);
  check(1);
  check(2);

  // full sharing leaves only patches private
  ModelConfig full = f.model;
  full.n_shared_layers = full.n_layers;
  auto full_priv = partition_parameters(full).priv;
  CHECK(!full_priv.empty());
  for (const auto& name : full_priv) CHECK(name.rfind("patch.", 0) == 0);

  // zero shared layers leave embeddings and the scoring head only
  ModelConfig none = f.model;
  none.n_shared_layers = 0;
  for (const auto& name : partition_parameters(none).shared)
    CHECK((name.rfind("embed.", 0) == 0 || name.rfind("head.", 0) == 0));

  // the plain-averaging configuration has no private names at all
  ModelConfig plain = f.model;
  plain.insertion_mode = InsertionMode::kNone;
  plain.n_shared_layers = plain.n_layers;
  CHECK(partition_parameters(plain).priv.empty());
}

TEST_CASE("distribute copies the shared segment and spares everything else") {
  Fixture f;
  f.fed.sample_size = 1;
  Server server(f.model, f.fed, 7);
  auto clients = f.make_clients(7, f.fed.rounds);

  auto before0 = clients[0].params();
  auto before1 = clients[1].params();
  auto sampled = server.sample(clients.size());
  REQUIRE(sampled.size() == 1);
  const int hit = sampled[0];
  const int miss = 1 - hit;

  clients[static_cast<std::size_t>(hit)].receive(server.distribute());

  const auto& part = clients[0].shared_names();
  const auto& full_before = hit == 0 ? before0 : before1;
  // shared segment now equals the server's, bitwise
  CHECK(bitwise_equal(shared_values(clients[static_cast<std::size_t>(hit)].params(), part),
                      shared_values(server.shared(), part)));
  // private segment untouched
  std::size_t private_entries = 0;
  for (const auto& e : clients[static_cast<std::size_t>(hit)].params())
    if (e.is_private) {
      CHECK(e.tensor.values == full_before.get(e.name).values);
      ++private_entries;
    }
  CHECK(private_entries > 0);
  // the unsampled client is untouched entirely
  const auto& full_miss = miss == 0 ? before0 : before1;
  for (const auto& e : clients[static_cast<std::size_t>(miss)].params())
    CHECK(e.tensor.values == full_miss.get(e.name).values);
}

TEST_CASE("receive rejects payloads that diverge from the shared schema") {
  Fixture f;
  Server server(f.model, f.fed, 7);
  auto clients = f.make_clients(7, 1);

  auto names = server.shared().names();
  auto short_names = names;
  short_names.pop_back();
  CHECK_THROWS_AS(clients[0].receive(wire_encode(server.shared(), short_names)),
                  ProtocolError);

  auto swapped = names;
  std::swap(swapped[0], swapped[1]);
  CHECK_THROWS_WITH_AS(clients[0].receive(wire_encode(server.shared(), swapped)),
                       doctest::Contains(names[0].c_str()), ProtocolError);

  ParameterSet reshaped;
  for (const auto& e : server.shared())
    reshaped.add(e.name, e.name == "head.weight" ? Tensor::zeros({3}) : e.tensor, false);
  CHECK_THROWS_WITH_AS(clients[0].receive(wire_encode(reshaped, names)),
                       doctest::Contains("head.w"), ProtocolError);
}

TEST_CASE("aggregating one upload reproduces it bitwise") {
  Fixture f;
  Server server(f.model, f.fed, 11);
  auto clients = f.make_clients(11, 1);
  clients[0].receive(server.distribute());
  clients[0].train_one_epoch(0, 0);
  server.aggregate({{0, clients[0].upload()}});
  const auto names = server.shared().names();
  CHECK(bitwise_equal(shared_values(server.shared(), names),
                      shared_values(clients[0].params(), names)));
}

TEST_CASE("aggregation is the plain elementwise mean") {
  Fixture f;
  Server server(f.model, f.fed, 13);
  const auto names = server.shared().names();

  ParameterSet a = server.shared();
  ParameterSet b = server.shared();
  for (auto& e : a) std::fill(e.tensor.values.begin(), e.tensor.values.end(), 0.0);
  for (auto& e : b) std::fill(e.tensor.values.begin(), e.tensor.values.end(), 2.0);
  a.get(names[0]).values[0] = 0.0;
  a.get(names[0]).values[1] = 2.0;
  b.get(names[0]).values[0] = 2.0;
  b.get(names[0]).values[1] = 4.0;

  // deliver out of id order; aggregation sorts
  server.aggregate({{1, wire_encode(b, names)}, {0, wire_encode(a, names)}});
  CHECK(server.shared().get(names[0]).values[0] == 1.0);
  CHECK(server.shared().get(names[0]).values[1] == 3.0);
  CHECK(server.shared().get(names[1]).values[0] == 1.0);
}

TEST_CASE("aggregation conserves agreement and matches extended precision") {
  Fixture f;
  const auto make_uploads = [&](const Server& server, const std::vector<int>& ids) {
    const auto names = server.shared().names();
    std::vector<ParameterSet> sets;
    for (std::size_t u = 0; u < ids.size(); ++u) {
      ParameterSet ps = server.shared();
      Rng rng(1000 + u);  // keyed by position, not id, so relabeling keeps values
      for (auto& e : ps) {
        if (e.name == names[1]) continue;  // uploads agree on this tensor
        for (auto& v : e.tensor.values) v += 0.1 * (rng.uniform_real() - 0.5);
      }
      sets.push_back(std::move(ps));
    }
    std::vector<std::pair<int, std::vector<std::uint8_t>>> uploads;
    for (std::size_t u = 0; u < ids.size(); ++u)
      uploads.emplace_back(ids[u], wire_encode(sets[u], names));
    return std::pair{sets, uploads};
  };

  Server server(f.model, f.fed, 17);
  const auto names = server.shared().names();
  const auto untouched = server.shared().get(names[1]).values;
  auto [sets, uploads] = make_uploads(server, {0, 1, 2, 3, 4});
  server.aggregate(uploads);

  // conservation: the agreed tensor survives bitwise
  CHECK(bitwise_equal(server.shared().get(names[1]).values, untouched));

  // extended-precision oracle over every value
  for (const auto& name : names) {
    const auto& got = server.shared().get(name).values;
    for (std::size_t k = 0; k < got.size(); ++k) {
      long double sum = 0.0L;
      for (const auto& s : sets) sum += s.get(name).values[k];
      CHECK(std::abs(got[k] - static_cast<double>(sum / 5.0L)) <= 1e-12);
    }
  }

  // permuting the delivery order changes nothing bitwise
  Server server2(f.model, f.fed, 17);
  auto [sets2, uploads2] = make_uploads(server2, {0, 1, 2, 3, 4});
  std::rotate(uploads2.begin(), uploads2.begin() + 2, uploads2.end());
  server2.aggregate(uploads2);
  CHECK(bitwise_equal(shared_values(server2.shared(), names),
                      shared_values(server.shared(), names)));

  // relabeling which client sent which update moves values by < 1e-12 only
  Server server3(f.model, f.fed, 17);
  auto [sets3, uploads3] = make_uploads(server3, {4, 3, 2, 1, 0});
  server3.aggregate(uploads3);
  auto lhs = shared_values(server3.shared(), names);
  auto rhs = shared_values(server.shared(), names);
  REQUIRE(lhs.size() == rhs.size());
  for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - rhs[i]) <= 1e-12);
}

TEST_CASE("aggregate rejects empty and mismatched updates") {
  Fixture f;
  Server server(f.model, f.fed, 19);
  CHECK_THROWS_AS(server.aggregate({}), ProtocolError);

  auto names = server.shared().names();
  auto short_names = names;
  short_names.pop_back();
  CHECK_THROWS_WITH_AS(server.aggregate({{3, wire_encode(server.shared(), short_names)}}),
                       doctest::Contains("client 3"), ProtocolError);

  ParameterSet reshaped;
  for (const auto& e : server.shared())
    reshaped.add(e.name, e.name == "head.weight" ? Tensor::zeros({3}) : e.tensor, false);
  CHECK_THROWS_WITH_AS(server.aggregate({{0, wire_encode(reshaped, names)}}),
                       doctest::Contains("head.w"), ProtocolError);
}

TEST_CASE("client sampling is uniform without replacement") {
  Fixture f;
  f.fed.sample_size = 2;
  Server server(f.model, f.fed, 99);

  std::map<int, int> inclusion;
  for (int draw = 0; draw < 1000; ++draw) {
    auto ids = server.sample(5);
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] < ids[1]);  // ascending and distinct
    for (int id : ids) {
      CHECK(id >= 0);
      CHECK(id < 5);
      ++inclusion[id];
    }
  }
  // inclusion probability 2/5; 3 sigma of a binomial(1000, 0.4)
  const double sigma = std::sqrt(1000 * 0.4 * 0.6);
  for (int id = 0; id < 5; ++id) {
    CHECK(inclusion[id] > 400 - 3 * sigma);
    CHECK(inclusion[id] < 400 + 3 * sigma);
  }

  f.fed.sample_size = 0;
  Server everyone(f.model, f.fed, 99);
  CHECK(everyone.sample(4) == std::vector<int>{0, 1, 2, 3});
  f.fed.sample_size = 7;
  Server capped(f.model, f.fed, 99);
  CHECK(capped.sample(3) == std::vector<int>{0, 1, 2});
  f.fed.sample_size = 1;
  Server solo(f.model, f.fed, 99);
  CHECK(solo.sample(1) == std::vector<int>{0});
}

TEST_CASE("a single-client round leaves the server with that client's update") {
  Fixture f;
  Server server(f.model, f.fed, 23);
  std::vector<Client> clients;
  clients.emplace_back(0, f.model, f.training, f.corpus.participants[0], f.vocab, 23, 1, 1);

  auto rep = run_round(server, clients, f.fed, 0);
  CHECK(rep.sampled == std::vector<int>{0});
  CHECK(rep.excluded.empty());
  const auto names = server.shared().names();
  CHECK(bitwise_equal(shared_values(server.shared(), names),
                      shared_values(clients[0].params(), names)));
}

TEST_CASE("the schedule clock follows federation time across skipped rounds") {
  Fixture f;
  std::vector<Client> clients;
  clients.emplace_back(0, f.model, f.training, f.corpus.participants[0], f.vocab, 23, 6, 1);
  auto& c = clients[0];
  const auto per_epoch = static_cast<std::int64_t>(c.batches_per_epoch());

  c.train_one_epoch(0, 0);
  CHECK(c.optimizer_steps() == per_epoch);

  // Consecutive participation: the catch-up is a no-op.
  c.train_one_epoch(1, 0);
  CHECK(c.optimizer_steps() == 2 * per_epoch);

  // Rounds 2 and 3 skipped by sampling: training at round 4 resumes at the
  // annealed position, not where the client left off.
  c.train_one_epoch(4, 0);
  CHECK(c.optimizer_steps() == 5 * per_epoch);
}

TEST_CASE("zero learning rate makes every round a fixed point") {
  Fixture f;
  f.training.base_lr = 0.0;
  Server server(f.model, f.fed, 29);
  auto clients = f.make_clients(29, f.fed.rounds);
  const auto names = server.shared().names();
  const auto init = shared_values(server.shared(), names);

  for (std::size_t r = 0; r < 2; ++r) {
    auto rep = run_round(server, clients, f.fed, r);
    CHECK(rep.excluded.empty());
    CHECK(bitwise_equal(shared_values(server.shared(), names), init));
    for (const auto& c : clients)
      CHECK(bitwise_equal(shared_values(c.params(), names), init));
  }
}

TEST_CASE("one round matches the protocol executed by hand") {
  Fixture f;
  f.fed.rounds = 1;

  Server automatic(f.model, f.fed, 31);
  auto auto_clients = f.make_clients(31, 1);
  auto rep = run_round(automatic, auto_clients, f.fed, 0);

  Server manual(f.model, f.fed, 31);
  auto manual_clients = f.make_clients(31, 1);
  auto payload = manual.distribute();
  manual_clients[0].receive(payload);
  manual_clients[1].receive(payload);
  auto r0 = manual_clients[0].train_one_epoch(0, 0);
  auto r1 = manual_clients[1].train_one_epoch(0, 0);
  REQUIRE(rep.clients[0].epoch_losses.size() == 1);
  CHECK(rep.clients[0].epoch_losses[0] == r0.mean_loss);
  CHECK(rep.clients[1].epoch_losses[0] == r1.mean_loss);

  auto ua = wire_decode(manual_clients[0].upload());
  auto ub = wire_decode(manual_clients[1].upload());
  const auto names = automatic.shared().names();
  REQUIRE(ua.names == names);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& got = automatic.shared().get(names[i]).values;
    for (std::size_t k = 0; k < got.size(); ++k) {
      // plain mean; for two updates this is bitwise what aggregation computes
      const double expect = (ua.tensors[i].values[k] + ub.tensors[i].values[k]) / 2.0;
      CHECK(got[k] == expect);
    }
  }
}

TEST_CASE("a client that diverges is excluded from aggregation, not evaluated") {
  Fixture f;
  f.fed.rounds = 1;
  TrainingConfig runaway = f.training;
  runaway.base_lr = std::numeric_limits<double>::infinity();

  Server server(f.model, f.fed, 37);
  auto clients = f.make_clients(37, 1, &runaway);
  auto rep = run_round(server, clients, f.fed, 0);

  CHECK(rep.excluded == std::vector<int>{1});
  CHECK(!clients[1].params_finite());
  CHECK(rep.clients[1].excluded_nonfinite);
  CHECK(rep.clients[1].dev.questions == 0);  // skipped, not scored
  CHECK(!rep.clients[0].excluded_nonfinite);
  CHECK(rep.clients[0].dev.questions > 0);
  // the overall dev metric averages the surviving client only
  CHECK(rep.overall_dev_map == rep.clients[0].dev.map);
  // the aggregate is the mean of one: the healthy client's upload
  const auto names = server.shared().names();
  CHECK(bitwise_equal(shared_values(server.shared(), names),
                      shared_values(clients[0].params(), names)));
}

TEST_CASE("no private parameter name ever crosses the boundary") {
  Fixture f;  // n_shared=1: layer.1 and all patches are private
  auto part = partition_parameters(f.model);
  REQUIRE(!part.priv.empty());

  std::vector<std::string> to_server, to_client;
  RunHooks hooks;
  hooks.on_message_to_server = [&](int, std::span<const std::uint8_t> bytes) {
    to_server.emplace_back(bytes.begin(), bytes.end());
  };
  hooks.on_message_to_client = [&](int, std::span<const std::uint8_t> bytes) {
    to_client.emplace_back(bytes.begin(), bytes.end());
  };
  auto result = run_experiment(f.run_config(41), f.corpus, hooks);
  REQUIRE(to_server.size() == 2 * f.fed.rounds);
  REQUIRE(to_client.size() == 2 * f.fed.rounds + 2);  // rounds plus final push

  for (const auto& message : to_server) {
    for (const auto& name : part.priv)
      CHECK(message.find(name) == std::string::npos);
    // and the payload decodes to exactly the shared schema
    std::vector<std::uint8_t> bytes(message.begin(), message.end());
    CHECK(wire_decode(bytes).names == part.shared);
  }
  for (const auto& message : to_client)
    for (const auto& name : part.priv)
      CHECK(message.find(name) == std::string::npos);
}

TEST_CASE("isolated mode trains everyone and exchanges nothing") {
  Fixture f;
  f.fed.isolated = true;
  std::size_t messages = 0, checkpoints = 0;
  RunHooks hooks;
  hooks.on_message_to_server = [&](int, std::span<const std::uint8_t>) { ++messages; };
  hooks.on_message_to_client = [&](int, std::span<const std::uint8_t>) { ++messages; };
  hooks.on_round_checkpoint = [&](std::size_t, const ParameterSet&) { ++checkpoints; };

  auto result = run_experiment(f.run_config(43), f.corpus, hooks);
  CHECK(messages == 0);
  CHECK(checkpoints == 0);
  REQUIRE(result.rounds.size() == f.fed.rounds);
  for (const auto& rep : result.rounds) {
    CHECK(rep.sampled == std::vector<int>{0, 1});
    for (const auto& cs : rep.clients) {
      CHECK(cs.sampled);
      CHECK(cs.epoch_losses.size() == f.fed.aggregation_every_k_epochs);
    }
  }
}

TEST_CASE("experiments are deterministic in the seed") {
  Fixture f;
  auto a = run_experiment(f.run_config(47), f.corpus);
  auto b = run_experiment(f.run_config(47), f.corpus);
  CHECK(a.test.overall_map == b.test.overall_map);
  CHECK(a.test.overall_mrr == b.test.overall_mrr);
  REQUIRE(a.rounds.size() == b.rounds.size());
  for (std::size_t r = 0; r < a.rounds.size(); ++r)
    for (std::size_t t = 0; t < a.rounds[r].clients.size(); ++t)
      CHECK(a.rounds[r].clients[t].epoch_losses == b.rounds[r].clients[t].epoch_losses);
  REQUIRE(a.test.per_participant.size() == b.test.per_participant.size());
  for (std::size_t t = 0; t < a.test.per_participant.size(); ++t) {
    CHECK(a.test.per_participant[t].map == b.test.per_participant[t].map);
    CHECK(a.test.per_participant[t].mrr == b.test.per_participant[t].mrr);
  }

  auto c = run_experiment(f.run_config(48), f.corpus);
  CHECK(a.rounds[0].clients[0].epoch_losses != c.rounds[0].clients[0].epoch_losses);
}

TEST_CASE("zero rounds evaluates the freshly initialized composition") {
  Fixture f;
  f.fed.rounds = 0;
  auto result = run_experiment(f.run_config(53), f.corpus);
  CHECK(result.rounds.empty());

  // by hand: server init shared segment + per-client private init
  Server server(f.model, f.fed, 53);
  auto clients = f.make_clients(53, 0);
  auto payload = server.distribute();
  std::vector<ParticipantMetrics> test;
  for (auto& c : clients) {
    c.receive(payload);
    test.push_back(c.evaluate_test());
  }
  auto expect = overall(std::move(test));
  CHECK(result.test.overall_map == expect.overall_map);
  CHECK(result.test.overall_mrr == expect.overall_mrr);
  for (std::size_t t = 0; t < expect.per_participant.size(); ++t) {
    CHECK(result.test.per_participant[t].map == expect.per_participant[t].map);
    CHECK(result.test.per_participant[t].mrr == expect.per_participant[t].mrr);
  }
}

TEST_CASE("metrics stream has one line per client per round plus summaries") {
  Fixture f;
  std::vector<nlohmann::json> lines;
  std::vector<std::size_t> checkpoint_rounds;
  std::vector<int> final_ids;
  RunHooks hooks;
  hooks.on_metrics_line = [&](const std::string& line) {
    lines.push_back(nlohmann::json::parse(line));
  };
  hooks.on_round_checkpoint = [&](std::size_t round, const ParameterSet& shared) {
    checkpoint_rounds.push_back(round);
    CHECK(shared.size() > 0);
  };
  hooks.on_client_final = [&](const Client& c) { final_ids.push_back(c.id()); };

  auto result = run_experiment(f.run_config(59), f.corpus, hooks);
  (void)result;

  // per round: one line per client and one overall; then the same at the end
  REQUIRE(lines.size() == f.fed.rounds * 3 + 3);
  for (std::size_t r = 0; r < f.fed.rounds; ++r) {
    const auto& c0 = lines[r * 3 + 0];
    const auto& c1 = lines[r * 3 + 1];
    const auto& ov = lines[r * 3 + 2];
    CHECK(c0.at("round").get<std::size_t>() == r);
    CHECK(c0.at("client").get<int>() == 0);
    CHECK(c1.at("client").get<int>() == 1);
    CHECK(c0.at("sampled").get<bool>());
    CHECK(c0.at("losses").is_array());
    CHECK(c0.contains("dev_map"));
    CHECK(ov.contains("overall_dev_map"));
    CHECK(ov.at("sampled").get<std::vector<int>>() == std::vector<int>{0, 1});
  }
  const auto& f0 = lines[f.fed.rounds * 3 + 0];
  const auto& fo = lines[f.fed.rounds * 3 + 2];
  CHECK(f0.at("final").get<bool>());
  CHECK(f0.at("client").get<int>() == 0);
  CHECK(f0.contains("test_map"));
  CHECK(fo.contains("overall_map"));

  CHECK(checkpoint_rounds == std::vector<std::size_t>{0, 1});
  CHECK(final_ids == std::vector<int>{0, 1});
}

TEST_CASE("resolve_model_config injects the corpus vocabulary") {
  Fixture f;
  RunConfig rc = f.run_config(61);
  rc.model.vocab_size = 0;  // unsized until the corpus is known
  auto resolved = resolve_model_config(rc, f.vocab);
  CHECK(resolved.vocab_size == f.vocab.size());
  CHECK(resolved.d_model == f.model.d_model);

  rc.model.n_heads = 3;  // invalid for d_model=8
  CHECK_THROWS_AS(resolve_model_config(rc, f.vocab), ConfigError);
}
