#include "fam/table.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "fam/rng.hpp"

namespace fam {

namespace {

struct Accum {
    double sum = 0.0, sumsq = 0.0;
    int n = 0;
    void add(double v) {
        sum += v;
        sumsq += v * v;
        ++n;
    }
    double mean() const { return n ? sum / n : 0.0; }
    double stddev() const {
        if (n < 2) return 0.0;
        const double m = mean();
        const double var = (sumsq - n * m * m) / (n - 1);
        return var > 0.0 ? std::sqrt(var) : 0.0;
    }
};

struct CellAccum {
    Accum acc, prec, rec, f1;
    void add(const MetricsReport& r) {
        acc.add(r.accuracy);
        prec.add(r.precision);
        rec.add(r.recall);
        f1.add(r.f1);
    }
};

TableRow finish_row(std::string label, int episodes, int shot, const CellAccum& c) {
    TableRow row;
    row.label = std::move(label);
    row.episodes = episodes;
    row.shot = shot;
    row.accuracy_mean = c.acc.mean();
    row.accuracy_std = c.acc.stddev();
    row.precision_mean = c.prec.mean();
    row.precision_std = c.prec.stddev();
    row.recall_mean = c.rec.mean();
    row.recall_std = c.rec.stddev();
    row.f1_mean = c.f1.mean();
    row.f1_std = c.f1.stddev();
    row.trials = c.acc.n;
    return row;
}

struct TrialEval {
    MetricsReport zero_shot;
    std::vector<MetricsReport> cells;
};

TrialEval evaluate_trial(const ModelSpec& spec, const ParameterSet& params, const PruneMask* mask,
                         const ClientDataset& ds, int way, const TableConfig& cfg, int trial) {
    TrialEval out;
    const std::uint64_t task_seed = seed_combine(cfg.eval_seed, "trial", static_cast<std::uint64_t>(trial));

    {
        // Zero-shot row: fresh pools, query sets only.
        TaskContext task = sample_task(ds, way, task_seed);
        Episode eval_ep = draw_episode(ds, task, 1, cfg.query);
        out.zero_shot = zero_shot_eval(spec, params, {eval_ep});
    }

    for (int episodes : cfg.episode_counts) {
        for (int shot : cfg.shots) {
            // Same classes and relabeling (same seed), fresh example pools.
            TaskContext task = sample_task(ds, way, task_seed);
            std::vector<Episode> adapt;
            adapt.reserve(static_cast<std::size_t>(episodes));
            for (int e = 0; e < episodes; ++e) adapt.push_back(draw_episode(ds, task, shot, cfg.query));
            ParameterSet personal = mask ? personalize(spec, params, *mask, adapt, cfg.personalization)
                                         : adapt_all(spec, params, adapt, cfg.personalization);
            out.cells.push_back(zero_shot_eval(spec, personal, adapt));
        }
    }
    return out;
}

}  // namespace

std::vector<TrialAccuracies> paired_trial_accuracies(const ModelSpec& spec, const ParameterSet& params,
                                                     const std::optional<PruneMask>& mask,
                                                     const std::vector<ClientDataset>& clients, int way,
                                                     const TableConfig& cfg) {
    if (clients.empty()) throw InputError("experiment table: no clients");
    cfg.personalization.validate();
    if (cfg.trials < 1) throw ConfigError("experiment table: trials must be >= 1");

    std::vector<TrialAccuracies> out;
    out.reserve(static_cast<std::size_t>(cfg.trials));
    for (int trial = 0; trial < cfg.trials; ++trial) {
        const ClientDataset& ds = clients[static_cast<std::size_t>(trial) % clients.size()];
        TrialEval ev = evaluate_trial(spec, params, mask ? &*mask : nullptr, ds, way, cfg, trial);
        TrialAccuracies ta;
        ta.zero_shot = ev.zero_shot.accuracy;
        for (const MetricsReport& r : ev.cells) ta.cells.push_back(r.accuracy);
        out.push_back(std::move(ta));
    }
    return out;
}

ExperimentTable run_experiment_table(const ModelSpec& spec, const ParameterSet& params,
                                     const std::optional<PruneMask>& mask,
                                     const std::vector<ClientDataset>& clients, int way, const TableConfig& cfg) {
    if (clients.empty()) throw InputError("experiment table: no clients");
    cfg.personalization.validate();
    if (cfg.trials < 1) throw ConfigError("experiment table: trials must be >= 1");

    CellAccum zero;
    std::vector<CellAccum> cells(cfg.episode_counts.size() * cfg.shots.size());
    for (int trial = 0; trial < cfg.trials; ++trial) {
        const ClientDataset& ds = clients[static_cast<std::size_t>(trial) % clients.size()];
        TrialEval ev = evaluate_trial(spec, params, mask ? &*mask : nullptr, ds, way, cfg, trial);
        zero.add(ev.zero_shot);
        for (std::size_t c = 0; c < cells.size(); ++c) cells[c].add(ev.cells[c]);
    }

    ExperimentTable table;
    table.rows.push_back(finish_row(std::to_string(way) + " way - 0 shot", 0, 0, zero));
    std::size_t c = 0;
    for (int episodes : cfg.episode_counts) {
        for (int shot : cfg.shots) {
            std::ostringstream label;
            label << '#' << episodes << " episode / " << way << " way - " << shot << " shot";
            table.rows.push_back(finish_row(label.str(), episodes, shot, cells[c++]));
        }
    }
    return table;
}

std::string ExperimentTable::to_csv() const {
    std::ostringstream os;
    os << "label,episodes,shot,accuracy_mean,accuracy_std,precision_mean,precision_std,"
          "recall_mean,recall_std,f1_mean,f1_std,trials\n";
    char buf[512];
    for (const TableRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d\n", r.label.c_str(),
                      r.episodes, r.shot, r.accuracy_mean, r.accuracy_std, r.precision_mean, r.precision_std,
                      r.recall_mean, r.recall_std, r.f1_mean, r.f1_std, r.trials);
        os << buf;
    }
    return os.str();
}

std::string ExperimentTable::to_text() const {
    std::ostringstream os;
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-32s %16s %16s %16s %16s\n", "Adaptation", "Accuracy", "Precision", "Recall",
                  "F1-score");
    os << buf;
    for (const TableRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%-32s %8.2f ±%6.2f %8.2f ±%6.2f %8.2f ±%6.2f %8.2f ±%6.2f\n", r.label.c_str(),
                      100.0 * r.accuracy_mean, 100.0 * r.accuracy_std, 100.0 * r.precision_mean,
                      100.0 * r.precision_std, 100.0 * r.recall_mean, 100.0 * r.recall_std, 100.0 * r.f1_mean,
                      100.0 * r.f1_std);
        os << buf;
    }
    return os.str();
}

}  // namespace fam
