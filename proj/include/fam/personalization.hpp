#pragma once

#include <vector>

#include "fam/meta.hpp"
#include "fam/metrics.hpp"

namespace fam {

struct PersonalizationConfig {
    double alpha = 0.05;
    int epochs = 1;

    void validate() const;
};

/// Grows back the pruned connections: each step updates only mask==0
/// positions with the support-set gradient, so every surviving (mask==1)
/// weight stays bit-identical to the global model. Gradients at frozen
/// positions are computed and discarded.
ParameterSet personalize(const ParameterSet& global, const PruneMask& mask, const std::vector<Episode>& episodes,
                         const PersonalizationConfig& cfg, const LossGradFn& objective);

ParameterSet personalize(const ModelSpec& spec, const ParameterSet& global, const PruneMask& mask,
                         const std::vector<Episode>& episodes, const PersonalizationConfig& cfg);

/// Plain fine-tuning of every weight on the support sets; the adaptation
/// path for models that were never pruned.
ParameterSet adapt_all(const ParameterSet& global, const std::vector<Episode>& episodes,
                       const PersonalizationConfig& cfg, const LossGradFn& objective);
ParameterSet adapt_all(const ModelSpec& spec, const ParameterSet& global, const std::vector<Episode>& episodes,
                       const PersonalizationConfig& cfg);

/// Pools the episodes' query sets, predicts by logit argmax, and reports
/// weighted metrics. The unadapted-model ("0 shot") evaluation.
MetricsReport zero_shot_eval(const ModelSpec& spec, const ParameterSet& params, const std::vector<Episode>& episodes);

}  // namespace fam
