#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fam/tensor.hpp"

namespace fam {

enum class ModelKind { mlp, conv4 };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view s);

/// Describes a network family instance. Immutable once built; every layer
/// name/shape is derived deterministically from it.
struct ModelSpec {
    ModelKind kind = ModelKind::mlp;
    std::vector<int> input_shape;   // {C,H,W}; the mlp flattens it
    std::vector<int> hidden_sizes;  // mlp hidden layer widths
    int filters = 8;                // conv4 filters per block
    int num_classes = 2;

    void validate() const;
    std::int64_t input_size() const;
    // Spatial dims after the four conv blocks (pooling halves, floor, min 1).
    std::pair<int, int> conv_output_hw() const;
    std::uint64_t hash() const;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Ordered named tensors holding all trainable weights of one model.
struct ParameterSet {
    std::vector<NamedTensor> entries;

    std::size_t count() const { return entries.size(); }
    const Tensor& tensor(std::size_t i) const { return entries[i].tensor; }
    Tensor& tensor(std::size_t i) { return entries[i].tensor; }
    const std::string& name(std::size_t i) const { return entries[i].name; }

    std::int64_t total_count() const;
    std::int64_t nonzero_count() const;
    bool congruent_with(const ParameterSet& other) const;
    bool bitwise_equal(const ParameterSet& other) const;
    bool all_finite() const;
};

// Weight matrices and conv kernels are prunable; biases are not.
bool is_prunable_param(std::string_view name);

struct Example {
    Tensor input;
    int label = 0;
};
using Batch = std::vector<Example>;

/// Deterministic fan-in-scaled uniform init; biases zero.
ParameterSet init_params(const ModelSpec& spec, std::uint64_t seed);

struct ForwardResult {
    double loss = 0.0;
    Tensor logits;
};

/// Mean cross-entropy over the batch plus per-example logits.
ForwardResult forward_loss(const ModelSpec& spec, const ParameterSet& params, const Batch& batch);

struct LossGrad {
    double loss = 0.0;
    Tensor logits;
    ParameterSet grad;
};

/// forward_loss plus d(loss)/d(params), via one reverse sweep.
LossGrad loss_and_grad(const ModelSpec& spec, const ParameterSet& params, const Batch& batch);

// Graph-building pieces, used by the second-order meta objective.
std::vector<Var> lift_params(GradTape& tape, const ParameterSet& params);
struct BuiltLoss {
    Var loss;
    Var logits;
};
BuiltLoss build_loss(GradTape& tape, const ModelSpec& spec, const std::vector<Var>& params, const Batch& batch);

struct ParamCount {
    std::int64_t total = 0;
    std::int64_t nonzero = 0;
};

ParamCount count_params(const ParameterSet& params);
// Same, restricted to prunable tensors.
ParamCount count_prunable(const ParameterSet& params);
double sparsity_fraction(std::int64_t total, std::int64_t nonzero);

std::vector<double> flatten(const ParameterSet& params);
ParameterSet unflatten(const ParameterSet& shape_ref, const std::vector<double>& values);

// Checkpoint file: "FAMC" magic, spec hash, name list + shapes, then
// little-endian 64-bit floats in declaration order.
void save_checkpoint(const std::string& path, const ModelSpec& spec, const ParameterSet& params);
ParameterSet load_checkpoint(const std::string& path, std::uint64_t* spec_hash_out = nullptr);

}  // namespace fam
