#include "fam/sparsity.hpp"

#include <algorithm>
#include <cmath>

namespace fam {

std::int64_t PruneMask::total_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries) n += e.tensor.size();
    return n;
}

std::int64_t PruneMask::ones_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries)
        for (std::int64_t i = 0; i < e.tensor.size(); ++i)
            if (e.tensor[i] != 0.0) ++n;
    return n;
}

bool PruneMask::congruent_with(const ParameterSet& params) const {
    if (entries.size() != params.entries.size()) return false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name != params.entries[i].name) return false;
        if (entries[i].tensor.shape() != params.entries[i].tensor.shape()) return false;
    }
    return true;
}

bool PruneMask::bitwise_equal(const PruneMask& other) const {
    if (entries.size() != other.entries.size()) return false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name != other.entries[i].name) return false;
        if (!entries[i].tensor.bitwise_equal(other.entries[i].tensor)) return false;
    }
    return true;
}

std::int64_t prune_count(std::int64_t total, std::int64_t nonzero, double prune_rate) {
    if (!(prune_rate >= 0.0 && prune_rate <= 1.0)) {
        throw InputError("prune_rate must lie in [0,1], got " + std::to_string(prune_rate));
    }
    if (nonzero < 0 || nonzero > total) throw InputError("nonzero count out of range");
    return (total - nonzero) + static_cast<std::int64_t>(std::floor(prune_rate * static_cast<double>(nonzero)));
}

PruneMask sparsify(const ParameterSet& weights, double prune_rate) {
    if (!weights.all_finite()) throw NumericError("sparsify: weights contain non-finite values");

    // Flatten the prunable portion; remember where each slot lives.
    struct Slot {
        std::size_t entry;
        std::int64_t index;
    };
    std::vector<Slot> slots;
    std::vector<double> magnitudes;
    std::int64_t nonzero = 0;
    for (std::size_t e = 0; e < weights.entries.size(); ++e) {
        if (!is_prunable_param(weights.entries[e].name)) continue;
        const Tensor& t = weights.entries[e].tensor;
        for (std::int64_t i = 0; i < t.size(); ++i) {
            slots.push_back({e, i});
            magnitudes.push_back(std::abs(t[i]));
            if (t[i] != 0.0) ++nonzero;
        }
    }
    const std::int64_t total = static_cast<std::int64_t>(slots.size());

    PruneMask mask;
    mask.entries.reserve(weights.entries.size());
    for (const auto& e : weights.entries) mask.entries.push_back({e.name, Tensor::full(e.tensor.shape(), 1.0)});

    const std::int64_t num_prune =
        static_cast<std::int64_t>(std::floor(prune_rate * static_cast<double>(nonzero)));
    if (num_prune == 0) {
        // Degenerate budget: keep exactly the current nonzero pattern.
        for (std::size_t e = 0; e < weights.entries.size(); ++e) {
            if (!is_prunable_param(weights.entries[e].name)) continue;
            const Tensor& t = weights.entries[e].tensor;
            Tensor& m = mask.entries[e].tensor;
            for (std::int64_t i = 0; i < t.size(); ++i) m[i] = t[i] != 0.0 ? 1.0 : 0.0;
        }
        return mask;
    }

    const std::int64_t p = (total - nonzero) + num_prune;

    // Order by magnitude; ties resolve to (tensor declaration order, flat
    // index) so repeated runs produce identical masks.
    std::vector<std::int64_t> order(static_cast<std::size_t>(total));
    for (std::int64_t i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        const double ma = magnitudes[static_cast<std::size_t>(a)];
        const double mb = magnitudes[static_cast<std::size_t>(b)];
        if (ma != mb) return ma < mb;
        return a < b;
    });
    for (std::int64_t r = 0; r < p; ++r) {
        const Slot& s = slots[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])];
        mask.entries[s.entry].tensor[s.index] = 0.0;
    }
    return mask;
}

ParameterSet apply_mask(const ParameterSet& params, const PruneMask& mask) {
    if (!mask.congruent_with(params)) throw ContractViolation("apply_mask: mask not congruent with parameters");
    ParameterSet out = params;
    for (std::size_t e = 0; e < out.entries.size(); ++e) {
        Tensor& t = out.entries[e].tensor;
        const Tensor& m = mask.entries[e].tensor;
        for (std::int64_t i = 0; i < t.size(); ++i) {
            if (m[i] == 0.0) t[i] = 0.0;
        }
    }
    return out;
}

bool respects_mask(const ParameterSet& params, const PruneMask& mask) {
    if (!mask.congruent_with(params)) return false;
    for (std::size_t e = 0; e < params.entries.size(); ++e) {
        const Tensor& t = params.entries[e].tensor;
        const Tensor& m = mask.entries[e].tensor;
        for (std::int64_t i = 0; i < t.size(); ++i) {
            if (m[i] == 0.0 && t[i] != 0.0) return false;
        }
    }
    return true;
}

PruneMask invert_mask(const PruneMask& mask) {
    PruneMask out = mask;
    for (auto& e : out.entries) {
        for (std::int64_t i = 0; i < e.tensor.size(); ++i) e.tensor[i] = 1.0 - e.tensor[i];
    }
    return out;
}

PruneMask all_ones_mask(const ParameterSet& shape_ref) {
    PruneMask mask;
    for (const auto& e : shape_ref.entries) mask.entries.push_back({e.name, Tensor::full(e.tensor.shape(), 1.0)});
    return mask;
}

PruneMask all_zeros_mask(const ParameterSet& shape_ref) {
    PruneMask mask;
    for (const auto& e : shape_ref.entries) mask.entries.push_back({e.name, Tensor::zeros(e.tensor.shape())});
    return mask;
}

}  // namespace fam
