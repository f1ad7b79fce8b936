#include "fam/meta.hpp"

#include <cmath>

namespace fam {

void MetaConfig::validate() const {
    // Zero rates are legal degenerate no-ops (used by fixed-point checks).
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
    if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
    if (inner_steps < 1) throw ConfigError("inner_steps must be >= 1");
    if (tasks_per_batch < 1) throw ConfigError("tasks_per_batch must be >= 1");
}

LossGradFn model_objective(const ModelSpec& spec) {
    return [spec](const ParameterSet& params, const Batch& batch) { return loss_and_grad(spec, params, batch); };
}

ParameterSet inner_adapt(const ParameterSet& params, const Batch& support, const MetaConfig& cfg,
                         const LossGradFn& objective) {
    cfg.validate();
    if (support.empty()) throw InputError("inner_adapt: empty support set");
    ParameterSet theta = params;
    for (int step = 0; step < cfg.inner_steps; ++step) {
        LossGrad lg = objective(theta, support);
        if (!std::isfinite(lg.loss)) throw NumericError("inner_adapt: non-finite loss");
        for (std::size_t i = 0; i < theta.count(); ++i) axpy(theta.tensor(i), -cfg.alpha, lg.grad.tensor(i));
    }
    return theta;
}

namespace {

void check_tasks(const std::vector<Episode>& tasks) {
    if (tasks.empty()) throw InputError("meta_outer_step: no tasks");
    for (const Episode& t : tasks) {
        if (t.support.empty() || t.query.empty()) {
            throw InputError("meta_outer_step: task is missing a support or query set");
        }
    }
}

ParameterSet finish_outer(const ParameterSet& params, const ParameterSet& grad_sum, double beta,
                          const std::optional<PruneMask>& mask) {
    ParameterSet updated = params;
    for (std::size_t i = 0; i < updated.count(); ++i) axpy(updated.tensor(i), -beta, grad_sum.tensor(i));
    if (!updated.all_finite()) throw NumericError("meta_outer_step: non-finite parameters after update");
    if (mask) return apply_mask(updated, *mask);
    return updated;
}

}  // namespace

OuterStepResult meta_outer_step(const ParameterSet& params, const std::vector<Episode>& tasks, const MetaConfig& cfg,
                                const std::optional<PruneMask>& mask, const LossGradFn& objective) {
    cfg.validate();
    check_tasks(tasks);

    ParameterSet grad_sum = params;
    for (auto& e : grad_sum.entries) e.tensor = Tensor::zeros(e.tensor.shape());

    double loss_sum = 0.0;
    for (const Episode& task : tasks) {
        ParameterSet adapted = inner_adapt(params, task.support, cfg, objective);
        LossGrad q = objective(adapted, task.query);
        if (!std::isfinite(q.loss)) throw NumericError("meta_outer_step: non-finite query loss");
        loss_sum += q.loss;
        for (std::size_t i = 0; i < grad_sum.count(); ++i) axpy(grad_sum.tensor(i), 1.0, q.grad.tensor(i));
    }

    OuterStepResult out;
    out.params = finish_outer(params, grad_sum, cfg.beta, mask);
    out.mean_query_loss = loss_sum / static_cast<double>(tasks.size());
    return out;
}

namespace {

// Second-order path: the whole episode batch lives on one tape, the inner
// updates are tape operations, and the final backward pass differentiates
// through them.
OuterStepResult outer_step_second_order(const ModelSpec& spec, const ParameterSet& params,
                                        const std::vector<Episode>& tasks, const MetaConfig& cfg,
                                        const std::optional<PruneMask>& mask) {
    GradTape tape;
    std::vector<Var> theta = lift_params(tape, params);

    Var total{-1};
    for (const Episode& task : tasks) {
        std::vector<Var> cur = theta;
        for (int step = 0; step < cfg.inner_steps; ++step) {
            BuiltLoss inner = build_loss(tape, spec, cur, task.support);
            Gradients g = tape.backward(inner.loss);
            for (std::size_t i = 0; i < cur.size(); ++i) {
                if (auto gv = g.at(cur[i])) cur[i] = tape.sub(cur[i], tape.scale(*gv, cfg.alpha));
            }
        }
        BuiltLoss query = build_loss(tape, spec, cur, task.query);
        total = total.id < 0 ? query.loss : tape.add(total, query.loss);
    }

    const double total_loss = tape.value(total)[0];
    if (!std::isfinite(total_loss)) throw NumericError("meta_outer_step: non-finite query loss");

    Gradients g = tape.backward(total);
    ParameterSet grad_sum = params;
    for (std::size_t i = 0; i < grad_sum.count(); ++i) {
        grad_sum.entries[i].tensor = g.value_or_zero(tape, theta[i]);
    }

    OuterStepResult out;
    out.params = finish_outer(params, grad_sum, cfg.beta, mask);
    out.mean_query_loss = total_loss / static_cast<double>(tasks.size());
    return out;
}

}  // namespace

OuterStepResult meta_outer_step(const ModelSpec& spec, const ParameterSet& params, const std::vector<Episode>& tasks,
                                const MetaConfig& cfg, const std::optional<PruneMask>& mask) {
    cfg.validate();
    check_tasks(tasks);
    if (cfg.order == MetaOrder::second) {
        if (spec.kind != ModelKind::mlp) throw ConfigError("order=second is available for mlp models only");
        return outer_step_second_order(spec, params, tasks, cfg, mask);
    }
    return meta_outer_step(params, tasks, cfg, mask, model_objective(spec));
}

}  // namespace fam
