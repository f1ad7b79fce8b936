#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "fam/model.hpp"
#include "fam/sparsity.hpp"
#include "fam/tasks.hpp"

namespace fam {

enum class MetaOrder { first, second };

struct MetaConfig {
    double alpha = 0.01;      // inner learning rate
    double beta = 0.01;       // outer (meta) step size
    int inner_steps = 1;
    int tasks_per_batch = 10;
    MetaOrder order = MetaOrder::first;

    void validate() const;
};

/// Pluggable task objective: loss and gradient at the given parameters.
/// Production code uses model_objective; tests substitute analytic stubs.
using LossGradFn = std::function<LossGrad(const ParameterSet&, const Batch&)>;

LossGradFn model_objective(const ModelSpec& spec);

/// Plain gradient descent on the support set, inner_steps times, each step
/// recomputing the gradient at the current point. The input is not modified.
ParameterSet inner_adapt(const ParameterSet& params, const Batch& support, const MetaConfig& cfg,
                         const LossGradFn& objective);

struct OuterStepResult {
    ParameterSet params;
    double mean_query_loss = 0.0;
};

/// One meta update over a task batch: adapt per task on support, sum query
/// gradients at the adapted points, step the shared parameters, then apply
/// the mask (if any) to the result, leaving masked positions exactly 0.
/// First-order: the adapted parameters are treated as the gradient point.
OuterStepResult meta_outer_step(const ParameterSet& params, const std::vector<Episode>& tasks, const MetaConfig& cfg,
                                const std::optional<PruneMask>& mask, const LossGradFn& objective);

/// Model-backed variant that honours cfg.order; order=second differentiates
/// through the inner updates (mlp kind only).
OuterStepResult meta_outer_step(const ModelSpec& spec, const ParameterSet& params, const std::vector<Episode>& tasks,
                                const MetaConfig& cfg, const std::optional<PruneMask>& mask);

}  // namespace fam
