#include "fam/personalization.hpp"

#include <cmath>

namespace fam {

void PersonalizationConfig::validate() const {
    if (!(alpha > 0.0)) throw ConfigError("personalization alpha must be positive");
    if (epochs < 1) throw ConfigError("personalization epochs must be >= 1");
}

namespace {

// Shared support-set descent loop; `mask` null means every position moves.
ParameterSet descend_support(const ParameterSet& global, const PruneMask* mask, const std::vector<Episode>& episodes,
                             const PersonalizationConfig& cfg, const LossGradFn& objective) {
    cfg.validate();
    if (episodes.empty()) throw InputError("personalize: no episodes");

    ParameterSet theta = global;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const Episode& ep : episodes) {
            if (ep.support.empty()) throw InputError("personalize: episode without a support set");
            LossGrad lg = objective(theta, ep.support);
            if (!std::isfinite(lg.loss)) throw NumericError("personalize: non-finite loss");
            for (std::size_t i = 0; i < theta.count(); ++i) {
                Tensor& t = theta.tensor(i);
                const Tensor& g = lg.grad.tensor(i);
                if (mask) {
                    const Tensor& m = mask->tensor(i);
                    for (std::int64_t j = 0; j < t.size(); ++j) {
                        // Only grown (mask==0) positions move; survivors are
                        // never written, keeping them bit-identical.
                        if (m[j] == 0.0) t[j] -= cfg.alpha * g[j];
                    }
                } else {
                    for (std::int64_t j = 0; j < t.size(); ++j) t[j] -= cfg.alpha * g[j];
                }
            }
        }
    }
    if (!theta.all_finite()) throw NumericError("personalize: non-finite parameters");
    return theta;
}

}  // namespace

ParameterSet personalize(const ParameterSet& global, const PruneMask& mask, const std::vector<Episode>& episodes,
                         const PersonalizationConfig& cfg, const LossGradFn& objective) {
    if (!mask.congruent_with(global)) throw ContractViolation("personalize: mask not congruent with parameters");
    if (!respects_mask(global, mask)) {
        throw ContractViolation("personalize: global parameters carry non-zeros at masked positions");
    }
    return descend_support(global, &mask, episodes, cfg, objective);
}

ParameterSet personalize(const ModelSpec& spec, const ParameterSet& global, const PruneMask& mask,
                         const std::vector<Episode>& episodes, const PersonalizationConfig& cfg) {
    return personalize(global, mask, episodes, cfg, model_objective(spec));
}

ParameterSet adapt_all(const ParameterSet& global, const std::vector<Episode>& episodes,
                       const PersonalizationConfig& cfg, const LossGradFn& objective) {
    return descend_support(global, nullptr, episodes, cfg, objective);
}

ParameterSet adapt_all(const ModelSpec& spec, const ParameterSet& global, const std::vector<Episode>& episodes,
                       const PersonalizationConfig& cfg) {
    return adapt_all(global, episodes, cfg, model_objective(spec));
}

MetricsReport zero_shot_eval(const ModelSpec& spec, const ParameterSet& params, const std::vector<Episode>& episodes) {
    if (episodes.empty()) throw InputError("zero_shot_eval: no episodes");
    std::vector<int> predictions, labels;
    const int way = episodes.front().way;
    for (const Episode& ep : episodes) {
        if (ep.way != way) throw InputError("zero_shot_eval: episodes disagree on way");
        if (ep.query.empty()) throw InputError("zero_shot_eval: episode without a query set");
        ForwardResult r = forward_loss(spec, params, ep.query);
        for (std::size_t i = 0; i < ep.query.size(); ++i) {
            predictions.push_back(argmax_row(r.logits, static_cast<int>(i)));
            labels.push_back(ep.query[i].label);
        }
    }
    return compute_metrics(predictions, labels, way);
}

}  // namespace fam
