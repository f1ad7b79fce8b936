#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fam/meta.hpp"
#include "fam/tasks.hpp"
#include "fam/wire.hpp"

namespace fam {

enum class RunMode { fam, vanilla };
enum class Weighting { uniform, by_examples };

std::string to_string(RunMode mode);
std::string to_string(Weighting weighting);

/// Full description of one simulated run. Every random draw in the run is
/// derived from `seed`, so the config determines the result bit for bit.
struct RunConfig {
    int rounds = 200;
    int n_clients = 20;
    int k = 2;
    int lth_round = -1;  // -1: rounds/2; any value >= rounds never triggers pruning
    double prune_rate = 0.7;

    MetaConfig meta;
    int local_epochs = 10;
    int way = 2;
    int shot = 1;
    int query = 10;
    std::uint64_t seed = 1;
    RunMode mode = RunMode::fam;
    Weighting weighting = Weighting::uniform;

    ModelKind model_kind = ModelKind::mlp;
    std::vector<int> hidden_sizes = {32};
    int filters = 8;

    SyntheticSpec data;
    std::string data_dir;  // when set, clients load from disk instead

    int resolved_lth_round() const { return lth_round < 0 ? rounds / 2 : lth_round; }
    // Vanilla training predicts source classes; episodic modes predict
    // episode labels.
    ModelSpec model_spec() const;
    void validate() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);
std::string serialize_config(const RunConfig& config);

/// Server side of the protocol: round counter, pruning flag and the three
/// parameter artifacts it owns.
struct ServerState {
    int round = 0;
    int flag = 0;  // 0 dense, 1 prune now, 2 masked
    ParameterSet global;
    ParameterSet initial;  // rewind target
    std::optional<PruneMask> mask;
    int lth_round = 0;
    int k = 2;
    double prune_rate = 0.7;
    Weighting weighting = Weighting::uniform;
};

struct ClientUpdate {
    int client_id = 0;
    int round = 0;
    ParameterSet params;
    std::int64_t example_count = 0;
    std::vector<double> epoch_losses;

    double mean_query_loss() const;
};

struct Broadcast {
    ParameterSet params;
    std::optional<PruneMask> mask;  // present exactly once, at the LTH round
};

/// One client's local meta-training for one round: copy the broadcast
/// parameters, then run a masked (if a mask is held) outer step per local
/// epoch on freshly sampled episode batches.
ClientUpdate client_round(const ModelSpec& spec, const ParameterSet& global, const std::optional<PruneMask>& mask,
                          const ClientDataset& ds, const RunConfig& config, int round);

/// k distinct ids, uniform without replacement, ascending; deterministic in
/// (round, seed).
std::vector<int> select_clients(const std::vector<int>& pool, int k, int round, std::uint64_t seed);

ParameterSet aggregate(const std::vector<ClientUpdate>& updates, Weighting weighting);

/// Aggregation followed by the pruning state machine: arm the flag at the
/// LTH round, then prune + rewind once, then keep applying the fixed mask.
std::pair<ServerState, Broadcast> server_step(ServerState state, const std::vector<ClientUpdate>& updates);

struct RoundRecord {
    int round = 0;
    int flag = 0;  // flag after the server step
    std::vector<int> selected;
    double mean_query_loss = 0.0;
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
    std::uint64_t dense_bytes_up = 0;    // same traffic, hypothetically dense
    std::uint64_t dense_bytes_down = 0;
    double sparsity = 0.0;  // zero fraction of the broadcast's prunable weights
};

struct RunLog {
    std::vector<RoundRecord> rounds;
    std::vector<RoundComms> comms() const;
};

std::string log_to_csv(const RunLog& log);
void write_log_csv(const std::string& path, const RunLog& log);

struct RunResult {
    ParameterSet params;
    std::optional<PruneMask> mask;
    ParameterSet initial;
    RunLog log;
};

/// Test/verification hook: observes each round after the server step.
struct RoundTrace {
    int round;
    int flag_before;
    int flag_after;
    const std::vector<int>& selected;
    const std::vector<ClientUpdate>& updates;
    const Broadcast& broadcast;
};
using RoundObserver = std::function<void(const RoundTrace&)>;

std::vector<ClientDataset> build_clients(const RunConfig& config);

RunResult run_federated(const RunConfig& config, const std::vector<ClientDataset>& clients,
                        const RoundObserver& observer = {});
RunResult run_federated(const RunConfig& config);

/// FedAvg baseline: plain supervised SGD on local batches, no episodes, no
/// inner/outer split, no pruning.
RunResult run_vanilla_fl(const RunConfig& config, const std::vector<ClientDataset>& clients,
                         const RoundObserver& observer = {});
RunResult run_vanilla_fl(const RunConfig& config);

}  // namespace fam
