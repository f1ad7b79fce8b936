#include "fam/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fam/rng.hpp"

namespace fs = std::filesystem;

namespace fam {

std::string to_string(RunMode mode) { return mode == RunMode::fam ? "fam" : "vanilla"; }

std::string to_string(Weighting weighting) { return weighting == Weighting::uniform ? "uniform" : "by_examples"; }

ModelSpec RunConfig::model_spec() const {
    ModelSpec spec;
    spec.kind = model_kind;
    spec.input_shape = data.image_shape;
    spec.hidden_sizes = hidden_sizes;
    spec.filters = filters;
    spec.num_classes = mode == RunMode::vanilla ? data.classes : way;
    return spec;
}

void RunConfig::validate() const {
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (n_clients < 1) throw ConfigError("n_clients must be >= 1");
    if (k < 1 || k > n_clients) throw ConfigError("k must lie in [1, n_clients]");
    if (!(prune_rate >= 0.0 && prune_rate <= 1.0)) throw ConfigError("prune_rate must lie in [0,1]");
    if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
    if (way < 2) throw ConfigError("way must be >= 2");
    if (shot < 1 || query < 1) throw ConfigError("shot and query must be >= 1");
    meta.validate();
    data.validate();
    if (mode != RunMode::vanilla && way > data.classes) {
        throw ConfigError("way exceeds the number of classes in the task family");
    }
    model_spec().validate();
}

// ---------------------------------------------------------------------------
// Config file parsing
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<int> parse_int_list(const std::string& value, char sep) {
    std::vector<int> out;
    std::string cur;
    std::istringstream is(value);
    while (std::getline(is, cur, sep)) {
        cur = trim(cur);
        if (cur.empty()) continue;
        out.push_back(std::stoi(cur));
    }
    return out;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "rounds") cfg.rounds = std::stoi(value);
            else if (key == "n_clients") cfg.n_clients = std::stoi(value);
            else if (key == "k") cfg.k = std::stoi(value);
            else if (key == "lth_round") cfg.lth_round = std::stoi(value);
            else if (key == "prune_rate") cfg.prune_rate = std::stod(value);
            else if (key == "alpha") cfg.meta.alpha = std::stod(value);
            else if (key == "beta") cfg.meta.beta = std::stod(value);
            else if (key == "inner_steps") cfg.meta.inner_steps = std::stoi(value);
            else if (key == "tasks_per_batch") cfg.meta.tasks_per_batch = std::stoi(value);
            else if (key == "order") cfg.meta.order = value == "second" ? MetaOrder::second : MetaOrder::first;
            else if (key == "local_epochs") cfg.local_epochs = std::stoi(value);
            else if (key == "way") cfg.way = std::stoi(value);
            else if (key == "shot") cfg.shot = std::stoi(value);
            else if (key == "query") cfg.query = std::stoi(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "mode") {
                if (value == "fam") cfg.mode = RunMode::fam;
                else if (value == "vanilla") cfg.mode = RunMode::vanilla;
                else throw ConfigError("mode must be fam or vanilla");
            } else if (key == "weighting") {
                if (value == "uniform") cfg.weighting = Weighting::uniform;
                else if (value == "by_examples") cfg.weighting = Weighting::by_examples;
                else throw ConfigError("weighting must be uniform or by_examples");
            } else if (key == "model") cfg.model_kind = model_kind_from_string(value);
            else if (key == "hidden") cfg.hidden_sizes = parse_int_list(value, ',');
            else if (key == "filters") cfg.filters = std::stoi(value);
            else if (key == "classes") cfg.data.classes = std::stoi(value);
            else if (key == "examples_per_class") cfg.data.examples_per_class = std::stoi(value);
            else if (key == "image") {
                cfg.data.image_shape = parse_int_list(value, 'x');
                if (cfg.data.image_shape.size() != 3) throw ConfigError("image must be CxHxW");
            } else if (key == "shift_spread") cfg.data.shift_spread = std::stod(value);
            else if (key == "data_dir") cfg.data_dir = value;
            else throw ConfigError("unknown config key '" + key + "'");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("config line " + std::to_string(line_no) + ": bad value for '" + key + "'");
        }
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "rounds=" << cfg.rounds << '\n';
    os << "n_clients=" << cfg.n_clients << '\n';
    os << "k=" << cfg.k << '\n';
    os << "lth_round=" << cfg.lth_round << '\n';
    os << "prune_rate=" << cfg.prune_rate << '\n';
    os << "alpha=" << cfg.meta.alpha << '\n';
    os << "beta=" << cfg.meta.beta << '\n';
    os << "inner_steps=" << cfg.meta.inner_steps << '\n';
    os << "tasks_per_batch=" << cfg.meta.tasks_per_batch << '\n';
    os << "order=" << (cfg.meta.order == MetaOrder::second ? "second" : "first") << '\n';
    os << "local_epochs=" << cfg.local_epochs << '\n';
    os << "way=" << cfg.way << '\n';
    os << "shot=" << cfg.shot << '\n';
    os << "query=" << cfg.query << '\n';
    os << "seed=" << cfg.seed << '\n';
    os << "mode=" << to_string(cfg.mode) << '\n';
    os << "weighting=" << to_string(cfg.weighting) << '\n';
    os << "model=" << to_string(cfg.model_kind) << '\n';
    os << "hidden=";
    for (std::size_t i = 0; i < cfg.hidden_sizes.size(); ++i) {
        if (i) os << ',';
        os << cfg.hidden_sizes[i];
    }
    os << '\n';
    os << "filters=" << cfg.filters << '\n';
    os << "classes=" << cfg.data.classes << '\n';
    os << "examples_per_class=" << cfg.data.examples_per_class << '\n';
    os << "image=" << cfg.data.image_shape[0] << 'x' << cfg.data.image_shape[1] << 'x' << cfg.data.image_shape[2]
       << '\n';
    os << "shift_spread=" << cfg.data.shift_spread << '\n';
    if (!cfg.data_dir.empty()) os << "data_dir=" << cfg.data_dir << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Client round
// ---------------------------------------------------------------------------

double ClientUpdate::mean_query_loss() const {
    if (epoch_losses.empty()) return 0.0;
    return std::accumulate(epoch_losses.begin(), epoch_losses.end(), 0.0) /
           static_cast<double>(epoch_losses.size());
}

ClientUpdate client_round(const ModelSpec& spec, const ParameterSet& global, const std::optional<PruneMask>& mask,
                          const ClientDataset& ds, const RunConfig& config, int round) {
    ClientUpdate update;
    update.client_id = ds.client_id;
    update.round = round;
    update.example_count = ds.example_count();

    ParameterSet theta = mask ? apply_mask(global, *mask) : global;
    try {
        for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
            std::mt19937_64 rng(seed_combine(config.seed, "episodes", static_cast<std::uint64_t>(round),
                                             static_cast<std::uint64_t>(ds.client_id),
                                             static_cast<std::uint64_t>(epoch)));
            std::vector<Episode> tasks;
            tasks.reserve(static_cast<std::size_t>(config.meta.tasks_per_batch));
            for (int t = 0; t < config.meta.tasks_per_batch; ++t) {
                tasks.push_back(sample_episode(ds, config.way, config.shot, config.query, rng()));
            }
            OuterStepResult r = meta_outer_step(spec, theta, tasks, config.meta, mask);
            theta = std::move(r.params);
            update.epoch_losses.push_back(r.mean_query_loss);
        }
    } catch (const EpisodeError& e) {
        throw EpisodeError("client " + std::to_string(ds.client_id) + " round " + std::to_string(round) + ": " +
                           e.what());
    } catch (const NumericError& e) {
        throw NumericError("client " + std::to_string(ds.client_id) + " round " + std::to_string(round) + ": " +
                           e.what());
    }
    update.params = std::move(theta);
    return update;
}

std::vector<int> select_clients(const std::vector<int>& pool, int k, int round, std::uint64_t seed) {
    if (k > static_cast<int>(pool.size())) {
        throw ConfigError("cannot select " + std::to_string(k) + " clients from a pool of " +
                          std::to_string(pool.size()));
    }
    std::mt19937_64 rng(seed_combine(seed, "select", static_cast<std::uint64_t>(round)));
    std::vector<int> ids = pool;
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(ids.size() - i)));
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
    }
    ids.resize(static_cast<std::size_t>(k));
    std::sort(ids.begin(), ids.end());
    return ids;
}

ParameterSet aggregate(const std::vector<ClientUpdate>& updates, Weighting weighting) {
    if (updates.empty()) throw ProtocolError("aggregate: no updates");
    const int round = updates.front().round;
    for (const ClientUpdate& u : updates) {
        if (u.round != round) throw ProtocolError("aggregate: updates from mixed rounds");
        if (!u.params.congruent_with(updates.front().params)) {
            throw ProtocolError("aggregate: updates are not shape-congruent");
        }
    }

    double total_examples = 0.0;
    if (weighting == Weighting::by_examples) {
        for (const ClientUpdate& u : updates) total_examples += static_cast<double>(u.example_count);
        if (total_examples <= 0.0) throw ProtocolError("aggregate: by_examples weighting needs example counts");
    }

    ParameterSet sum = updates.front().params;
    for (auto& e : sum.entries) e.tensor = Tensor::zeros(e.tensor.shape());
    for (const ClientUpdate& u : updates) {
        const double w = weighting == Weighting::uniform
                             ? 1.0 / static_cast<double>(updates.size())
                             : static_cast<double>(u.example_count) / total_examples;
        for (std::size_t i = 0; i < sum.count(); ++i) axpy(sum.tensor(i), w, u.params.tensor(i));
    }
    return sum;
}

std::pair<ServerState, Broadcast> server_step(ServerState state, const std::vector<ClientUpdate>& updates) {
    if (state.flag < 0 || state.flag > 2) throw ProtocolError("server flag out of range");
    if ((state.flag == 0) != !state.mask.has_value()) {
        throw ProtocolError("server mask presence inconsistent with flag");
    }
    for (const ClientUpdate& u : updates) {
        if (u.round != state.round) {
            throw ProtocolError("server_step: update for round " + std::to_string(u.round) + " at server round " +
                                std::to_string(state.round));
        }
    }

    ParameterSet next = aggregate(updates, state.weighting);

    if (state.round == state.lth_round) state.flag = 1;

    Broadcast broadcast;
    if (state.flag == 1) {
        // Prune the aggregate, rewind survivors to the initial weights, and
        // ship the mask; it never changes again.
        state.mask = sparsify(next, state.prune_rate);
        next = apply_mask(state.initial, *state.mask);
        broadcast.mask = state.mask;
        state.flag = 2;
    } else if (state.flag == 2) {
        next = apply_mask(next, *state.mask);
    }

    state.global = next;
    state.round += 1;
    broadcast.params = std::move(next);
    return {std::move(state), std::move(broadcast)};
}

// ---------------------------------------------------------------------------
// Run loops
// ---------------------------------------------------------------------------

std::vector<RoundComms> RunLog::comms() const {
    std::vector<RoundComms> out;
    out.reserve(rounds.size());
    for (const RoundRecord& r : rounds) {
        out.push_back({r.round, r.bytes_up, r.bytes_down, r.dense_bytes_up, r.dense_bytes_down});
    }
    return out;
}

std::string log_to_csv(const RunLog& log) {
    std::ostringstream os;
    os << "round,flag,selected_ids,mean_query_loss,bytes_up,bytes_down,sparsity\n";
    char buf[64];
    for (const RoundRecord& r : log.rounds) {
        os << r.round << ',' << r.flag << ',';
        for (std::size_t i = 0; i < r.selected.size(); ++i) {
            if (i) os << ';';
            os << r.selected[i];
        }
        std::snprintf(buf, sizeof buf, "%.9g", r.mean_query_loss);
        os << ',' << buf << ',' << r.bytes_up << ',' << r.bytes_down << ',';
        std::snprintf(buf, sizeof buf, "%.9g", r.sparsity);
        os << buf << '\n';
    }
    return os.str();
}

void write_log_csv(const std::string& path, const RunLog& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << log_to_csv(log);
    if (!out) throw IoError("write failed for " + path);
}

std::vector<ClientDataset> build_clients(const RunConfig& config) {
    if (config.data_dir.empty()) {
        return make_synthetic_clients(config.data, config.n_clients, seed_combine(config.seed, "data"));
    }
    std::vector<std::string> dirs;
    for (const auto& entry : fs::directory_iterator(config.data_dir)) {
        if (entry.is_directory()) dirs.push_back(entry.path().string());
    }
    std::sort(dirs.begin(), dirs.end());
    if (static_cast<int>(dirs.size()) < config.n_clients) {
        throw IngestionError(config.data_dir + " holds " + std::to_string(dirs.size()) + " client directories, need " +
                             std::to_string(config.n_clients));
    }
    std::vector<ClientDataset> clients;
    for (int i = 0; i < config.n_clients; ++i) {
        ClientDataset ds =
            load_directory(dirs[static_cast<std::size_t>(i)],
                           std::make_pair(config.data.image_shape[1], config.data.image_shape[2]));
        ds.client_id = i;
        for (const auto& cls : ds.examples) {
            for (const Tensor& ex : cls) {
                if (ex.dim(0) != config.data.image_shape[0]) {
                    throw IngestionError(dirs[static_cast<std::size_t>(i)] + ": channel count " +
                                         std::to_string(ex.dim(0)) + " does not match configured image shape");
                }
            }
        }
        clients.push_back(std::move(ds));
    }
    return clients;
}

namespace {

struct CommsTally {
    std::uint64_t bytes_up = 0, bytes_down = 0, dense_up = 0, dense_down = 0;
};

// Measures the real encoded sizes; encoding also re-checks the mask contract
// on every message.
CommsTally tally_round(const std::vector<ClientUpdate>& updates, const Broadcast& broadcast, int flag_before,
                       int flag_after, const std::optional<PruneMask>& mask_after, int n_clients,
                       std::int64_t total_count, int round) {
    CommsTally t;
    const std::uint64_t dense_msg = kWireHeaderBytes + dense_payload_bytes(total_count);
    for (const ClientUpdate& u : updates) {
        WireHeader h{static_cast<std::uint32_t>(round), static_cast<std::uint8_t>(flag_before),
                     static_cast<std::uint32_t>(u.client_id), PayloadKind::dense};
        if (flag_before == 2 && mask_after) {
            t.bytes_up += encode_sparse(u.params, *mask_after, h).size_bytes();
        } else {
            t.bytes_up += encode_dense(u.params, h).size_bytes();
        }
        t.dense_up += dense_msg;
    }

    WireHeader down{static_cast<std::uint32_t>(round), static_cast<std::uint8_t>(flag_after), 0, PayloadKind::dense};
    std::uint64_t down_msg;
    if (flag_after == 2 && mask_after) {
        down_msg = encode_sparse(broadcast.params, *mask_after, down).size_bytes();
        if (broadcast.mask) down_msg += encode_mask(*broadcast.mask, down).size_bytes();
    } else {
        down_msg = encode_dense(broadcast.params, down).size_bytes();
    }
    t.bytes_down = down_msg * static_cast<std::uint64_t>(n_clients);
    t.dense_down = dense_msg * static_cast<std::uint64_t>(n_clients);
    return t;
}

double broadcast_sparsity(const ParameterSet& params) {
    const ParamCount c = count_prunable(params);
    return sparsity_fraction(c.total, c.nonzero);
}

double mean_of(const std::vector<ClientUpdate>& updates) {
    double s = 0.0;
    for (const ClientUpdate& u : updates) s += u.mean_query_loss();
    return updates.empty() ? 0.0 : s / static_cast<double>(updates.size());
}

using ClientFn = std::function<ClientUpdate(const ParameterSet&, const std::optional<PruneMask>&,
                                            const ClientDataset&, int round)>;

RunResult run_loop(const RunConfig& config, const std::vector<ClientDataset>& clients, const ClientFn& run_client,
                   bool lth_enabled, const RoundObserver& observer) {
    config.validate();
    if (static_cast<int>(clients.size()) != config.n_clients) {
        throw ConfigError("client list size does not match n_clients");
    }
    const ModelSpec spec = config.model_spec();
    ParameterSet theta0 = init_params(spec, seed_combine(config.seed, "init"));
    const std::int64_t total_count = theta0.total_count();

    ServerState state;
    state.global = theta0;
    state.initial = theta0;
    state.lth_round = lth_enabled ? config.resolved_lth_round() : config.rounds;  // == rounds: never fires
    state.k = config.k;
    state.prune_rate = config.prune_rate;
    state.weighting = config.weighting;

    std::vector<int> pool(static_cast<std::size_t>(config.n_clients));
    for (int i = 0; i < config.n_clients; ++i) pool[static_cast<std::size_t>(i)] = i;

    RunResult result;
    const std::optional<PruneMask> no_mask;
    for (int round = 0; round < config.rounds; ++round) {
        const std::vector<int> selected = select_clients(pool, config.k, round, config.seed);
        const int flag_before = state.flag;
        const std::optional<PruneMask>& client_mask = state.flag == 2 ? state.mask : no_mask;

        std::vector<ClientUpdate> updates;
        updates.reserve(selected.size());
        for (int id : selected) {
            updates.push_back(run_client(state.global, client_mask, clients[static_cast<std::size_t>(id)], round));
        }

        auto [next_state, broadcast] = server_step(std::move(state), updates);
        state = std::move(next_state);

        const CommsTally tally = tally_round(updates, broadcast, flag_before, state.flag, state.mask,
                                             config.n_clients, total_count, round);
        RoundRecord rec;
        rec.round = round;
        rec.flag = state.flag;
        rec.selected = selected;
        rec.mean_query_loss = mean_of(updates);
        rec.bytes_up = tally.bytes_up;
        rec.bytes_down = tally.bytes_down;
        rec.dense_bytes_up = tally.dense_up;
        rec.dense_bytes_down = tally.dense_down;
        rec.sparsity = broadcast_sparsity(broadcast.params);
        result.log.rounds.push_back(std::move(rec));

        if (observer) {
            RoundTrace trace{round, flag_before, state.flag, selected, updates, broadcast};
            observer(trace);
        }
    }

    result.params = state.global;
    result.mask = state.mask;
    result.initial = std::move(theta0);
    return result;
}

}  // namespace

RunResult run_federated(const RunConfig& config, const std::vector<ClientDataset>& clients,
                        const RoundObserver& observer) {
    const ModelSpec spec = config.model_spec();
    ClientFn fn = [&](const ParameterSet& global, const std::optional<PruneMask>& mask, const ClientDataset& ds,
                      int round) { return client_round(spec, global, mask, ds, config, round); };
    return run_loop(config, clients, fn, /*lth_enabled=*/true, observer);
}

RunResult run_federated(const RunConfig& config) { return run_federated(config, build_clients(config), {}); }

namespace {

// Plain supervised step stream for the FedAvg baseline: labels are source
// class ids, batches are uniform draws from the whole local dataset.
ClientUpdate vanilla_client_round(const ModelSpec& spec, const ParameterSet& global, const ClientDataset& ds,
                                  const RunConfig& config, int round) {
    ClientUpdate update;
    update.client_id = ds.client_id;
    update.round = round;
    update.example_count = ds.example_count();

    const int batch_size = config.way * (config.shot + config.query);
    ParameterSet theta = global;
    for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
        std::mt19937_64 rng(seed_combine(config.seed, "vanilla", static_cast<std::uint64_t>(round),
                                         static_cast<std::uint64_t>(ds.client_id), static_cast<std::uint64_t>(epoch)));
        double loss_sum = 0.0;
        for (int step = 0; step < config.meta.tasks_per_batch; ++step) {
            Batch batch;
            batch.reserve(static_cast<std::size_t>(batch_size));
            for (int b = 0; b < batch_size; ++b) {
                const int cls = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(ds.num_classes())));
                const int idx = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(ds.class_size(cls))));
                batch.push_back({ds.examples[static_cast<std::size_t>(cls)][static_cast<std::size_t>(idx)], cls});
            }
            LossGrad lg = loss_and_grad(spec, theta, batch);
            loss_sum += lg.loss;
            for (std::size_t i = 0; i < theta.count(); ++i) axpy(theta.tensor(i), -config.meta.alpha, lg.grad.tensor(i));
        }
        update.epoch_losses.push_back(loss_sum / static_cast<double>(config.meta.tasks_per_batch));
    }
    update.params = std::move(theta);
    return update;
}

}  // namespace

RunResult run_vanilla_fl(const RunConfig& config, const std::vector<ClientDataset>& clients,
                         const RoundObserver& observer) {
    const ModelSpec spec = config.model_spec();
    ClientFn fn = [&](const ParameterSet& global, const std::optional<PruneMask>&, const ClientDataset& ds,
                      int round) { return vanilla_client_round(spec, global, ds, config, round); };
    return run_loop(config, clients, fn, /*lth_enabled=*/false, observer);
}

RunResult run_vanilla_fl(const RunConfig& config) { return run_vanilla_fl(config, build_clients(config), {}); }

}  // namespace fam
