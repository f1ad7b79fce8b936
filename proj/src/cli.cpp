#include "fam/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "fam/federation.hpp"
#include "fam/rng.hpp"
#include "fam/table.hpp"
#include "fam/wire.hpp"

namespace fs = std::filesystem;

namespace fam {

namespace {

struct LoadedRun {
    RunConfig config;
    ModelSpec spec;
    ParameterSet params;
    std::optional<PruneMask> mask;
};

LoadedRun load_run(const std::string& dir, const std::string& checkpoint_override) {
    LoadedRun run;
    run.config = load_config_file((fs::path(dir) / "config.cfg").string());
    run.spec = run.config.model_spec();
    const std::string ckpt =
        checkpoint_override.empty() ? (fs::path(dir) / "checkpoint.fam").string() : checkpoint_override;
    std::uint64_t hash = 0;
    run.params = load_checkpoint(ckpt, &hash);
    if (hash != run.spec.hash()) {
        throw IoError(ckpt + " was written for a different model spec than " + dir + "/config.cfg");
    }
    const fs::path mask_path = fs::path(dir) / "mask.msg";
    if (fs::exists(mask_path)) {
        run.mask = decode_mask(read_message_file(mask_path.string()), run.params);
    }
    return run;
}

void print_metrics(const std::string& tag, const MetricsReport& r) {
    std::printf("%-14s accuracy %6.2f  precision %6.2f  recall %6.2f  f1 %6.2f  (n=%lld)\n", tag.c_str(),
                100.0 * r.accuracy, 100.0 * r.precision, 100.0 * r.recall, 100.0 * r.f1,
                static_cast<long long>(r.n_examples));
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    RunConfig cfg = load_config_file(config_path);
    cfg.validate();
    std::vector<ClientDataset> clients = build_clients(cfg);
    RunResult result =
        cfg.mode == RunMode::vanilla ? run_vanilla_fl(cfg, clients) : run_federated(cfg, clients);

    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    {
        std::ofstream cfg_out(out / "config.cfg", std::ios::trunc);
        cfg_out << serialize_config(cfg);
    }
    write_log_csv((out / "log.csv").string(), result.log);
    const ModelSpec spec = cfg.model_spec();
    save_checkpoint((out / "checkpoint.fam").string(), spec, result.params);

    const int last_round = cfg.rounds - 1;
    const int last_flag = result.log.rounds.back().flag;
    WireHeader header{static_cast<std::uint32_t>(last_round), static_cast<std::uint8_t>(last_flag), 0,
                      PayloadKind::dense};
    if (result.mask) {
        write_message_file((out / "mask.msg").string(), encode_mask(*result.mask, header));
        write_message_file((out / "broadcast_final.msg").string(),
                           encode_sparse(result.params, *result.mask, header));
    } else {
        write_message_file((out / "broadcast_final.msg").string(), encode_dense(result.params, header));
    }

    const CommsReport comms = account(result.log.comms());
    const ParamCount pc = count_prunable(result.params);
    std::printf("mode:            %s\n", to_string(cfg.mode).c_str());
    std::printf("rounds:          %d\n", cfg.rounds);
    std::printf("final loss:      %.6f\n", result.log.rounds.back().mean_query_loss);
    std::printf("final sparsity:  %.4f (prunable weights)\n", sparsity_fraction(pc.total, pc.nonzero));
    std::printf("bytes up/down:   %llu / %llu\n", static_cast<unsigned long long>(comms.total_up),
                static_cast<unsigned long long>(comms.total_down));
    std::printf("dense baseline:  %llu / %llu\n", static_cast<unsigned long long>(comms.dense_total_up),
                static_cast<unsigned long long>(comms.dense_total_down));
    std::printf("comm reduction:  %.2f%%\n", 100.0 * comms.reduction_ratio);
    std::printf("outputs in %s: config.cfg log.csv checkpoint.fam%s broadcast_final.msg\n", out_dir.c_str(),
                result.mask ? " mask.msg" : "");
    return 0;
}

int cmd_personalize(const std::string& run_dir, const std::string& checkpoint, int client_id, int episodes, int shot,
                    double alpha, int epochs, std::uint64_t seed, const std::string& out_file) {
    LoadedRun run = load_run(run_dir, checkpoint);
    std::vector<ClientDataset> clients = build_clients(run.config);
    if (client_id < 0 || client_id >= static_cast<int>(clients.size())) {
        throw InputError("client id out of range");
    }
    const ClientDataset& ds = clients[static_cast<std::size_t>(client_id)];

    TaskContext task = sample_task(ds, run.config.way, seed);
    std::vector<Episode> adapt;
    for (int e = 0; e < episodes; ++e) adapt.push_back(draw_episode(ds, task, shot, run.config.query));
    Episode eval_ep = draw_episode(ds, task, 1, run.config.query);

    PersonalizationConfig pc;
    pc.alpha = alpha;
    pc.epochs = epochs;
    const PruneMask mask = run.mask ? *run.mask : all_zeros_mask(run.params);

    MetricsReport before = zero_shot_eval(run.spec, run.params, {eval_ep});
    ParameterSet personal = personalize(run.spec, run.params, mask, adapt, pc);
    MetricsReport after = zero_shot_eval(run.spec, personal, {eval_ep});

    std::printf("client %d, %d episode(s), %d-shot, alpha %.4g, %d epoch(s)\n", client_id, episodes, shot, alpha,
                epochs);
    print_metrics("zero-shot:", before);
    print_metrics("personalized:", after);
    if (!out_file.empty()) {
        save_checkpoint(out_file, run.spec, personal);
        std::printf("personalized checkpoint written to %s\n", out_file.c_str());
    }
    return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& checkpoint, int client_id, int episodes,
             std::uint64_t seed) {
    LoadedRun run = load_run(run_dir, checkpoint);
    std::vector<ClientDataset> clients = build_clients(run.config);
    if (client_id < 0 || client_id >= static_cast<int>(clients.size())) {
        throw InputError("client id out of range");
    }
    std::mt19937_64 rng(seed);
    std::vector<Episode> eval_eps;
    for (int e = 0; e < episodes; ++e) {
        eval_eps.push_back(sample_episode(clients[static_cast<std::size_t>(client_id)], run.config.way, 1,
                                          run.config.query, rng()));
    }
    print_metrics("zero-shot:", zero_shot_eval(run.spec, run.params, eval_eps));
    return 0;
}

int cmd_table(const std::string& run_dir, const std::string& checkpoint, int trials, double alpha, int epochs,
              std::uint64_t seed, const std::string& out_csv) {
    LoadedRun run = load_run(run_dir, checkpoint);
    std::vector<ClientDataset> clients = build_clients(run.config);

    TableConfig tc;
    tc.trials = trials;
    tc.query = run.config.query;
    tc.personalization.alpha = alpha;
    tc.personalization.epochs = epochs;
    tc.eval_seed = seed;

    ExperimentTable table =
        run_experiment_table(run.spec, run.params, run.mask, clients, run.config.way, tc);
    std::fputs(table.to_text().c_str(), stdout);
    if (!out_csv.empty()) {
        std::ofstream out(out_csv, std::ios::trunc);
        if (!out) throw IoError("cannot open " + out_csv + " for writing");
        out << table.to_csv();
        std::printf("table written to %s\n", out_csv.c_str());
    }
    return 0;
}

int cmd_wire_dump(const std::string& path) {
    std::fputs(describe_message(read_message_file(path)).c_str(), stdout);
    return 0;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
    RunConfig cfg = load_config_file(config_path);
    cfg.data.validate();
    std::vector<ClientDataset> clients =
        make_synthetic_clients(cfg.data, cfg.n_clients, seed_combine(cfg.seed, "data"));
    for (const ClientDataset& ds : clients) {
        char name[32];
        std::snprintf(name, sizeof name, "client_%02d", ds.client_id);
        save_directory(ds, (fs::path(out_dir) / name).string());
    }
    std::printf("wrote %zu client datasets to %s\n", clients.size(), out_dir.c_str());
    return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"FAM protocol simulator: federated sparse meta-training with grow-back personalization"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "run the federated protocol from a config file");
    std::string train_config, train_out = "run";
    train->add_option("--config", train_config, "run config file")->required();
    train->add_option("--out", train_out, "output directory");

    // personalize
    auto* pers = app.add_subcommand("personalize", "grow a sparse checkpoint on one client's new task");
    std::string pers_run, pers_ckpt, pers_out;
    int pers_client = 0, pers_episodes = 5, pers_shot = 5, pers_epochs = 5;
    double pers_alpha = 0.1;
    std::uint64_t pers_seed = 2024;
    pers->add_option("--run", pers_run, "run directory from train")->required();
    pers->add_option("--checkpoint", pers_ckpt, "checkpoint override");
    pers->add_option("--client", pers_client, "client id");
    pers->add_option("--episodes", pers_episodes, "adaptation episodes");
    pers->add_option("--shot", pers_shot, "support examples per class");
    pers->add_option("--alpha", pers_alpha, "personalization learning rate");
    pers->add_option("--epochs", pers_epochs, "personalization epochs");
    pers->add_option("--seed", pers_seed, "episode seed");
    pers->add_option("--out", pers_out, "write the personalized checkpoint here");

    // eval
    auto* eval = app.add_subcommand("eval", "zero-shot evaluation of a checkpoint");
    std::string eval_run, eval_ckpt;
    int eval_client = 0, eval_episodes = 10;
    std::uint64_t eval_seed = 2024;
    eval->add_option("--run", eval_run, "run directory from train")->required();
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint override");
    eval->add_option("--client", eval_client, "client id");
    eval->add_option("--episodes", eval_episodes, "evaluation episodes");
    eval->add_option("--seed", eval_seed, "episode seed");

    // table
    auto* table = app.add_subcommand("table", "adaptation grid: 0-shot plus episodes x shots");
    std::string table_run, table_ckpt, table_out;
    int table_trials = 20, table_epochs = 5;
    double table_alpha = 0.1;
    std::uint64_t table_seed = 1234;
    table->add_option("--run", table_run, "run directory from train")->required();
    table->add_option("--checkpoint", table_ckpt, "checkpoint override");
    table->add_option("--trials", table_trials, "evaluation trials");
    table->add_option("--alpha", table_alpha, "personalization learning rate");
    table->add_option("--epochs", table_epochs, "personalization epochs");
    table->add_option("--seed", table_seed, "evaluation seed");
    table->add_option("--out", table_out, "CSV output path");

    // wire-dump
    auto* dump = app.add_subcommand("wire-dump", "pretty-print a wire message file");
    std::string dump_path;
    dump->add_option("file", dump_path, "message file")->required();

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "write the synthetic client datasets to disk");
    std::string gen_config, gen_out = "data";
    gen->add_option("--config", gen_config, "run config file")->required();
    gen->add_option("--out", gen_out, "output directory");

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) return cmd_train(train_config, train_out);
        if (pers->parsed())
            return cmd_personalize(pers_run, pers_ckpt, pers_client, pers_episodes, pers_shot, pers_alpha,
                                   pers_epochs, pers_seed, pers_out);
        if (eval->parsed()) return cmd_eval(eval_run, eval_ckpt, eval_client, eval_episodes, eval_seed);
        if (table->parsed())
            return cmd_table(table_run, table_ckpt, table_trials, table_alpha, table_epochs, table_seed, table_out);
        if (dump->parsed()) return cmd_wire_dump(dump_path);
        if (gen->parsed()) return cmd_gen_data(gen_config, gen_out);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}

}  // namespace fam
