#include "fedrank/federation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>

#include <json.hpp>

#include "fedrank/errors.hpp"
#include "fedrank/serialize.hpp"

namespace fedrank {

using nlohmann::json;

ParamPartition partition_parameters(const ModelConfig& config) {
  ParamPartition out;
  for (const auto& e : make_parameter_set(config))
    (e.is_private ? out.priv : out.shared).push_back(e.name);
  return out;
}

namespace {

// Keep a train_ratio fraction of the question groups (at least one), chosen
// by a client-specific stream so the kept subset is stable across runs.
std::vector<QAExample> subset_train(const std::vector<QAExample>& train, double ratio,
                                    std::uint64_t seed, int id) {
  if (ratio >= 1.0 || train.empty()) return train;
  std::vector<int> qids;
  std::set<int> seen;
  for (const auto& e : train)
    if (seen.insert(e.qid).second) qids.push_back(e.qid);
  auto rng = Rng::stream(seed, "ratio", static_cast<std::uint64_t>(id));
  rng.shuffle(qids);
  const auto keep_n = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(qids.size()))));
  std::set<int> keep(qids.begin(), qids.begin() + static_cast<std::ptrdiff_t>(
                                                      std::min(keep_n, qids.size())));
  std::vector<QAExample> out;
  for (const auto& e : train)
    if (keep.count(e.qid)) out.push_back(e);
  return out;
}

}  // namespace

Client::Client(int id, const ModelConfig& model, const TrainingConfig& training,
               const ParticipantData& data, const Vocabulary& vocab, std::uint64_t seed,
               std::size_t rounds, std::size_t epochs_per_round)
    : id_(id),
      seed_(seed),
      matcher_(model),
      partition_(partition_parameters(model)),
      params_(make_parameter_set(model)),
      vocab_(vocab),
      data_(data),
      epochs_per_round_(std::max<std::size_t>(1, epochs_per_round)) {
  auto init_rng = Rng::stream(seed, "client.init", static_cast<std::uint64_t>(id));
  init_parameters(params_, init_rng);

  data_.splits.train = subset_train(data.splits.train, training.train_ratio, seed, id);
  data_.negatives = mine_train_negatives(data_.splits.train);

  auto pair_rng = Rng::stream(seed, "pairs", static_cast<std::uint64_t>(id));
  auto built = build_pairs(data_.splits.train, data_.negatives, vocab_,
                           training.negatives_per_question, pair_rng);
  pairs_ = std::move(built.pairs);
  skipped_no_negative_ = built.skipped_no_negative;

  auto bit = training.batch_size_by_participant.find(id);
  batch_size_ = bit == training.batch_size_by_participant.end() ? training.batch_size
                                                                : bit->second;
  const auto steps =
      static_cast<std::int64_t>(rounds * epochs_per_round_ * batches_per_epoch());
  opt_ = OptimizerState::make(params_, training.base_lr, std::max<std::int64_t>(1, steps));
}

std::size_t Client::batches_per_epoch() const {
  return (pairs_.size() + batch_size_ - 1) / batch_size_;
}

void Client::receive(std::span<const std::uint8_t> bytes) {
  const WireView view = wire_decode(bytes);
  const auto& expect = partition_.shared;
  if (view.names.size() != expect.size())
    throw ProtocolError("receive: expected " + std::to_string(expect.size()) +
                        " shared parameters, got " + std::to_string(view.names.size()));
  for (std::size_t i = 0; i < expect.size(); ++i) {
    if (view.names[i] != expect[i])
      throw ProtocolError("receive: parameter " + std::to_string(i) + " is " + view.names[i] +
                          ", expected " + expect[i]);
    Tensor& dst = params_.get(expect[i]);
    if (view.tensors[i].shape != dst.shape)
      throw ProtocolError("receive: shape mismatch on " + expect[i]);
    dst.values = view.tensors[i].values;
  }
}

std::vector<std::uint8_t> Client::upload() const {
  return wire_encode(params_, partition_.shared);
}

EpochResult Client::train_one_epoch(std::size_t round, std::size_t epoch) {
  // The schedule is a function of federation time, not of how often sampling
  // picked this client: catch the clock up to (round, epoch) so late-round
  // updates are annealed even for rarely sampled clients. Weights and moments
  // stay untouched; under full participation this is a no-op.
  const auto clock = static_cast<std::int64_t>((round * epochs_per_round_ + epoch) *
                                               batches_per_epoch());
  opt_.step = std::max(opt_.step, clock);
  auto rng = Rng::stream(seed_, "shuffle", static_cast<std::uint64_t>(id_),
                         static_cast<std::uint64_t>(round * 8 + epoch));
  return train_epoch(matcher_, params_, opt_, pairs_, batch_size_, rng, tape_, &stats_);
}

bool Client::params_finite() const {
  for (const auto& e : params_)
    if (!e.tensor.all_finite()) return false;
  return true;
}

ParticipantMetrics Client::evaluate_split(const std::vector<QAExample>& split) const {
  GroupScorer scorer = [&](const std::vector<std::string>& question,
                           const std::vector<std::vector<std::string>>& candidates) {
    std::vector<std::vector<int>> encoded;
    encoded.reserve(candidates.size());
    for (const auto& c : candidates) encoded.push_back(vocab_.encode(c));
    return matcher_.score_candidates(params_, vocab_.encode(question), encoded, &stats_);
  };
  return evaluate_participant(id_, split, scorer);
}

ParticipantMetrics Client::evaluate_dev() const { return evaluate_split(data_.splits.dev); }
ParticipantMetrics Client::evaluate_test() const { return evaluate_split(data_.splits.test); }

Server::Server(const ModelConfig& model, const FederationConfig& fed, std::uint64_t seed)
    : fed_(fed), sample_rng_(Rng::stream(seed, "sample")) {
  ParameterSet full = make_parameter_set(model);
  auto init_rng = Rng::stream(seed, "server.init");
  init_parameters(full, init_rng);
  for (auto& e : full)
    if (!e.is_private) shared_.add(e.name, std::move(e.tensor), false);
}

std::vector<std::uint8_t> Server::distribute() const {
  return wire_encode(shared_, shared_.names());
}

std::vector<int> Server::sample(std::size_t n_clients) {
  std::vector<int> ids;
  if (fed_.sample_size == 0 || fed_.sample_size >= n_clients) {
    for (std::size_t t = 0; t < n_clients; ++t) ids.push_back(static_cast<int>(t));
    return ids;
  }
  for (auto i : sample_rng_.sample_without_replacement(n_clients, fed_.sample_size))
    ids.push_back(static_cast<int>(i));
  return ids;
}

void Server::aggregate(const std::vector<std::pair<int, std::vector<std::uint8_t>>>& uploads) {
  if (uploads.empty()) throw ProtocolError("aggregate: no updates");
  std::vector<std::pair<int, WireView>> views;
  views.reserve(uploads.size());
  for (const auto& [id, bytes] : uploads) views.emplace_back(id, wire_decode(bytes));
  std::sort(views.begin(), views.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  for (const auto& [id, view] : views) {
    if (view.names.size() != shared_.size())
      throw ProtocolError("aggregate: client " + std::to_string(id) + " sent " +
                          std::to_string(view.names.size()) + " parameters, expected " +
                          std::to_string(shared_.size()));
    for (std::size_t i = 0; i < view.names.size(); ++i) {
      if (view.names[i] != shared_[i].name)
        throw ProtocolError("aggregate: client " + std::to_string(id) + " parameter " +
                            std::to_string(i) + " is " + view.names[i] + ", expected " +
                            shared_[i].name);
      if (view.tensors[i].shape != shared_[i].tensor.shape)
        throw ProtocolError("aggregate: client " + std::to_string(id) +
                            " shape mismatch on " + view.names[i]);
    }
  }

  const double inv = 1.0 / static_cast<double>(views.size());
  for (std::size_t i = 0; i < shared_.size(); ++i) {
    auto& out = shared_[i].tensor.values;
    for (std::size_t k = 0; k < out.size(); ++k) {
      // Copy through any position the updates agree on so an untouched
      // parameter survives averaging bitwise.
      const double first = views[0].second.tensors[i].values[k];
      bool all_equal = true;
      for (std::size_t u = 1; u < views.size() && all_equal; ++u)
        all_equal = std::bit_cast<std::uint64_t>(views[u].second.tensors[i].values[k]) ==
                    std::bit_cast<std::uint64_t>(first);
      if (all_equal) {
        out[k] = first;
      } else {
        double sum = 0.0;
        for (const auto& [id, view] : views) sum += view.tensors[i].values[k];
        out[k] = sum * inv;
      }
    }
  }
}

RoundReport run_round(Server& server, std::vector<Client>& clients,
                      const FederationConfig& fed, std::size_t round, const RunHooks& hooks) {
  RoundReport rep;
  rep.round = round;

  std::vector<int> sampled;
  if (fed.isolated) {
    for (const auto& c : clients) sampled.push_back(c.id());
  } else {
    sampled = server.sample(clients.size());
  }
  rep.sampled = sampled;

  if (!fed.isolated) {
    const auto payload = server.distribute();
    for (int t : sampled) {
      if (hooks.on_message_to_client) hooks.on_message_to_client(t, payload);
      clients[static_cast<std::size_t>(t)].receive(payload);
    }
  }

  std::vector<ClientRoundStats> stats(clients.size());
  for (std::size_t t = 0; t < clients.size(); ++t) {
    stats[t].id = clients[t].id();
    stats[t].sampled = std::find(sampled.begin(), sampled.end(), clients[t].id()) != sampled.end();
  }

  for (int t : sampled) {
    auto& client = clients[static_cast<std::size_t>(t)];
    for (std::size_t e = 0; e < fed.aggregation_every_k_epochs; ++e)
      stats[static_cast<std::size_t>(t)].epoch_losses.push_back(
          client.train_one_epoch(round, e).mean_loss);
  }

  if (!fed.isolated) {
    std::vector<std::pair<int, std::vector<std::uint8_t>>> uploads;
    for (int t : sampled) {
      auto& client = clients[static_cast<std::size_t>(t)];
      if (!client.params_finite()) {
        stats[static_cast<std::size_t>(t)].excluded_nonfinite = true;
        rep.excluded.push_back(t);
        continue;
      }
      auto bytes = client.upload();
      if (hooks.on_message_to_server) hooks.on_message_to_server(t, bytes);
      uploads.emplace_back(t, std::move(bytes));
    }
    if (!uploads.empty()) server.aggregate(uploads);
  }

  std::vector<ParticipantMetrics> dev;
  for (std::size_t t = 0; t < clients.size(); ++t) {
    if (stats[t].excluded_nonfinite) {
      // Scores from non-finite parameters are meaningless; keep the slot but
      // leave its metrics empty instead of evaluating garbage.
      stats[t].dev.participant = clients[t].id();
      continue;
    }
    stats[t].dev = clients[t].evaluate_dev();
    dev.push_back(stats[t].dev);
  }
  if (!dev.empty()) {
    const auto agg = overall(dev);
    rep.overall_dev_map = agg.overall_map;
    rep.overall_dev_mrr = agg.overall_mrr;
  }
  rep.clients = std::move(stats);
  return rep;
}

ModelConfig resolve_model_config(const RunConfig& config, const Vocabulary& vocab) {
  ModelConfig model = config.model;
  model.vocab_size = vocab.size();
  model.validate();
  return model;
}

ExperimentResult run_experiment(const RunConfig& config, const Corpus& corpus,
                                const RunHooks& hooks) {
  const Vocabulary vocab = build_vocabulary(corpus);
  const ModelConfig model = resolve_model_config(config, vocab);
  const auto& fed = config.federation;

  std::vector<Client> clients;
  clients.reserve(corpus.participants.size());
  for (const auto& pd : corpus.participants)
    clients.emplace_back(pd.profile.id, model, config.training, pd, vocab, config.seed,
                         fed.rounds, fed.aggregation_every_k_epochs);
  Server server(model, fed, config.seed);

  auto emit = [&](const json& j) {
    if (hooks.on_metrics_line) hooks.on_metrics_line(j.dump());
  };

  ExperimentResult result;
  for (std::size_t r = 0; r < fed.rounds; ++r) {
    auto rep = run_round(server, clients, fed, r, hooks);
    for (const auto& cs : rep.clients)
      emit(json{{"round", r},
                {"client", cs.id},
                {"sampled", cs.sampled},
                {"excluded", cs.excluded_nonfinite},
                {"losses", cs.epoch_losses},
                {"dev_map", cs.dev.map},
                {"dev_mrr", cs.dev.mrr},
                {"dev_questions", cs.dev.questions},
                {"dev_skipped", cs.dev.excluded_no_positive}});
    emit(json{{"round", r},
              {"sampled", rep.sampled},
              {"excluded", rep.excluded},
              {"overall_dev_map", rep.overall_dev_map},
              {"overall_dev_mrr", rep.overall_dev_mrr}});
    if (!fed.isolated && hooks.on_round_checkpoint) hooks.on_round_checkpoint(r, server.shared());
    result.rounds.push_back(std::move(rep));
  }

  if (!fed.isolated) {
    const auto payload = server.distribute();
    for (auto& client : clients) {
      if (hooks.on_message_to_client) hooks.on_message_to_client(client.id(), payload);
      client.receive(payload);
    }
  }

  std::vector<ParticipantMetrics> test;
  for (const auto& client : clients) {
    test.push_back(client.evaluate_test());
    emit(json{{"final", true},
              {"client", client.id()},
              {"test_map", test.back().map},
              {"test_mrr", test.back().mrr},
              {"test_questions", test.back().questions},
              {"test_skipped", test.back().excluded_no_positive}});
    result.participant_names.push_back(client.name());
    result.skipped_no_negative += client.skipped_no_negative();
    result.truncated_answers += client.truncated_answers();
  }
  result.test = overall(std::move(test));
  emit(json{{"final", true},
            {"overall_map", result.test.overall_map},
            {"overall_mrr", result.test.overall_mrr}});

  if (hooks.on_client_final)
    for (const auto& client : clients) hooks.on_client_final(client);

  return result;
}

}  // namespace fedrank
