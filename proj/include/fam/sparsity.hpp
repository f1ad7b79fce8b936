#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fam/model.hpp"

namespace fam {

/// Binary mask congruent with a ParameterSet: 1 keeps a weight, 0 prunes it.
/// Non-prunable tensors (biases) always carry all-ones masks.
struct PruneMask {
    std::vector<NamedTensor> entries;  // values are exactly 0.0 or 1.0

    std::size_t count() const { return entries.size(); }
    const Tensor& tensor(std::size_t i) const { return entries[i].tensor; }
    const std::string& name(std::size_t i) const { return entries[i].name; }

    std::int64_t total_count() const;
    std::int64_t ones_count() const;
    bool congruent_with(const ParameterSet& params) const;
    bool bitwise_equal(const PruneMask& other) const;
};

/// Number of connections to drop: existing zeros plus the rate share of the
/// non-zeros, floored.
std::int64_t prune_count(std::int64_t total, std::int64_t nonzero, double prune_rate);

/// Magnitude pruning over the globally flattened prunable weights. The mask
/// has exactly prune_count(...) zeros in its prunable portion, placed on the
/// smallest-magnitude entries; ties break by (tensor order, flat index).
/// Already-zero weights are always pruned. A zero prune budget degenerates
/// to the nonzero indicator.
PruneMask sparsify(const ParameterSet& weights, double prune_rate);

/// Elementwise product; masked positions come out as exact 0.0 and kept
/// positions are bit-identical to the input.
ParameterSet apply_mask(const ParameterSet& params, const PruneMask& mask);

/// Does params carry an exact 0.0 at every masked position?
bool respects_mask(const ParameterSet& params, const PruneMask& mask);

PruneMask invert_mask(const PruneMask& mask);

PruneMask all_ones_mask(const ParameterSet& shape_ref);
PruneMask all_zeros_mask(const ParameterSet& shape_ref);

}  // namespace fam
