#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fam/errors.hpp"

namespace fam {

// Weighted averaging folds per-class metrics by class support, which makes
// recall coincide with accuracy; macro averages all classes equally.
enum class Averaging { weighted, macro };

struct MetricsReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int n_classes = 0;
    std::int64_t n_examples = 0;
    std::vector<std::int64_t> confusion;  // row = true label, column = prediction

    std::int64_t confusion_at(int label, int pred) const {
        return confusion[static_cast<std::size_t>(label) * static_cast<std::size_t>(n_classes) +
                         static_cast<std::size_t>(pred)];
    }
};

/// Per-class precision/recall/F1 folded per `averaging`. Classes that were
/// never predicted contribute precision 0.
MetricsReport compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels, int n_classes,
                              Averaging averaging = Averaging::weighted);

}  // namespace fam
