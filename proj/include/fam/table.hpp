#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fam/federation.hpp"
#include "fam/personalization.hpp"

namespace fam {

struct TableConfig {
    int trials = 20;
    std::vector<int> episode_counts = {1, 5};
    std::vector<int> shots = {1, 5};
    int query = 10;
    PersonalizationConfig personalization;
    std::uint64_t eval_seed = 1234;
};

struct TableRow {
    std::string label;  // "0 shot" or "#E episode / K shot"
    int episodes = 0;   // 0 on the zero-shot row
    int shot = 0;
    double accuracy_mean = 0, accuracy_std = 0;
    double precision_mean = 0, precision_std = 0;
    double recall_mean = 0, recall_std = 0;
    double f1_mean = 0, f1_std = 0;
    int trials = 0;
};

struct ExperimentTable {
    std::vector<TableRow> rows;

    std::string to_csv() const;
    std::string to_text() const;  // aligned, percentages like the run reports
};

/// Evaluates the zero-shot row plus one row per (episodes, shot) cell.
/// Each trial fixes one task (class subset + relabeling) on one client;
/// all cells of that trial adapt and evaluate within the task, so rows are
/// paired per trial. Without a mask, adaptation trains all positions.
ExperimentTable run_experiment_table(const ModelSpec& spec, const ParameterSet& params,
                                     const std::optional<PruneMask>& mask,
                                     const std::vector<ClientDataset>& clients, int way, const TableConfig& cfg);

/// Per-trial paired accuracies for trend checks: zero-shot plus each cell.
struct TrialAccuracies {
    double zero_shot = 0.0;
    std::vector<double> cells;  // indexed like episode_counts x shots
};
std::vector<TrialAccuracies> paired_trial_accuracies(const ModelSpec& spec, const ParameterSet& params,
                                                     const std::optional<PruneMask>& mask,
                                                     const std::vector<ClientDataset>& clients, int way,
                                                     const TableConfig& cfg);

}  // namespace fam
