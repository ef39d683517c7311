#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedrank/config.hpp"
#include "fedrank/corpus.hpp"
#include "fedrank/evaluate.hpp"
#include "fedrank/model.hpp"
#include "fedrank/params.hpp"
#include "fedrank/tape.hpp"
#include "fedrank/trainer.hpp"

namespace fedrank {

// Who may see each parameter. Shared names travel between server and
// clients; private names must never appear in a message.
struct ParamPartition {
  std::vector<std::string> shared;
  std::vector<std::string> priv;
};

// Embeddings, the bottom n_shared_layers encoder layers, and the scoring
// head are shared; the remaining top layers and every patch stay private.
ParamPartition partition_parameters(const ModelConfig& config);

// One simulated participant. Holds the full parameter set (shared segment
// plus private patches/top layers), its optimizer, its slice of the corpus,
// and every derived rng stream. Exchanges take bytes, not references.
class Client {
 public:
  // `rounds` and `epochs_per_round` size the learning-rate schedule: the
  // optimizer's horizon is rounds * epochs_per_round * batches per epoch.
  Client(int id, const ModelConfig& model, const TrainingConfig& training,
         const ParticipantData& data, const Vocabulary& vocab, std::uint64_t seed,
         std::size_t rounds, std::size_t epochs_per_round);

  int id() const { return id_; }
  const ParameterSet& params() const { return params_; }
  const std::vector<std::string>& shared_names() const { return partition_.shared; }

  // Overwrite the shared segment from a server payload. The payload must
  // carry exactly the shared names in order with matching shapes.
  void receive(std::span<const std::uint8_t> bytes);

  // Serialize the shared segment; private entries are refused upstream.
  std::vector<std::uint8_t> upload() const;

  // One local pass over this client's pairs; epoch order is derived from
  // (seed, client, round, epoch) so rounds never share a permutation.
  // The schedule clock first catches up to federation time (round, epoch),
  // so a client skipped by sampling still anneals with everyone else.
  EpochResult train_one_epoch(std::size_t round, std::size_t epoch);

  std::int64_t optimizer_steps() const { return opt_.step; }

  bool params_finite() const;

  ParticipantMetrics evaluate_dev() const;
  ParticipantMetrics evaluate_test() const;

  std::size_t pair_count() const { return pairs_.size(); }
  std::size_t batches_per_epoch() const;
  std::size_t skipped_no_negative() const { return skipped_no_negative_; }
  std::size_t truncated_answers() const { return stats_.truncated_answers; }
  const std::string& name() const { return data_.profile.name; }

 private:
  ParticipantMetrics evaluate_split(const std::vector<QAExample>& split) const;

  int id_;
  std::uint64_t seed_;
  Matcher matcher_;
  ParamPartition partition_;
  ParameterSet params_;
  const Vocabulary& vocab_;
  ParticipantData data_;  // train possibly subset by train_ratio
  std::vector<TrainPair> pairs_;
  std::size_t skipped_no_negative_ = 0;
  std::size_t batch_size_;
  std::size_t epochs_per_round_ = 1;
  OptimizerState opt_;
  Tape tape_;
  mutable ScoreStats stats_;
};

// Holds the global shared segment, the client sampler, and the aggregation
// rule (plain unweighted mean over the sampled updates).
class Server {
 public:
  Server(const ModelConfig& model, const FederationConfig& fed, std::uint64_t seed);

  const ParameterSet& shared() const { return shared_; }

  // Current global shared segment as a wire payload.
  std::vector<std::uint8_t> distribute() const;

  // Ascending ids of this round's participants, drawn from the server's own
  // stream; sample_size 0 or >= n_clients selects everyone.
  std::vector<int> sample(std::size_t n_clients);

  // Elementwise mean over uploads in ascending client-id order. A position on
  // which every upload agrees bitwise is copied through unchanged.
  void aggregate(const std::vector<std::pair<int, std::vector<std::uint8_t>>>& uploads);

 private:
  ParameterSet shared_;
  FederationConfig fed_;
  Rng sample_rng_;
};

struct ClientRoundStats {
  int id = 0;
  bool sampled = false;
  bool excluded_nonfinite = false;
  std::vector<double> epoch_losses;
  ParticipantMetrics dev;
};

struct RoundReport {
  std::size_t round = 0;
  std::vector<int> sampled;   // ascending
  std::vector<int> excluded;  // dropped from aggregation for non-finite params
  std::vector<ClientRoundStats> clients;
  double overall_dev_map = 0.0;
  double overall_dev_mrr = 0.0;
};

struct ExperimentResult {
  std::vector<RoundReport> rounds;
  MetricsReport test;
  std::vector<std::string> participant_names;
  std::size_t skipped_no_negative = 0;
  std::size_t truncated_answers = 0;
};

// Observation points. Message hooks see the exact bytes that cross the
// client/server boundary; the metrics hook receives each JSONL line; the
// checkpoint hooks fire after each aggregation and after the final
// evaluation respectively.
struct RunHooks {
  std::function<void(int client, std::span<const std::uint8_t>)> on_message_to_client;
  std::function<void(int client, std::span<const std::uint8_t>)> on_message_to_server;
  std::function<void(const std::string& line)> on_metrics_line;
  std::function<void(std::size_t round, const ParameterSet& shared)> on_round_checkpoint;
  std::function<void(const Client& client)> on_client_final;
};

// One communication round: sample, distribute, k local epochs on the sampled
// clients, aggregate their uploads, then a dev evaluation of every client.
// Isolated mode trains everyone and skips every exchange. Clients must be
// ordered so that clients[i].id() == i; sampling works in positions.
RoundReport run_round(Server& server, std::vector<Client>& clients,
                      const FederationConfig& fed, std::size_t round,
                      const RunHooks& hooks = {});

// Full protocol: R rounds, a final distribution of the global segment (kept
// local under isolation), then per-client test evaluation. Deterministic in
// (config, corpus bytes).
ExperimentResult run_experiment(const RunConfig& config, const Corpus& corpus,
                                const RunHooks& hooks = {});

// The model config a run actually uses: vocab filled in from the corpus.
ModelConfig resolve_model_config(const RunConfig& config, const Vocabulary& vocab);

}  // namespace fedrank
