#include "fam/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fam/bytes.hpp"
#include "fam/rng.hpp"

namespace fam {

std::string to_string(ModelKind kind) { return kind == ModelKind::mlp ? "mlp" : "conv4"; }

ModelKind model_kind_from_string(std::string_view s) {
    if (s == "mlp") return ModelKind::mlp;
    if (s == "conv4") return ModelKind::conv4;
    throw ConfigError("unknown model kind '" + std::string(s) + "' (expected mlp or conv4)");
}

void ModelSpec::validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2, got " + std::to_string(num_classes));
    for (int d : input_shape) {
        if (d <= 0) throw ConfigError("input dimensions must be positive");
    }
    if (kind == ModelKind::mlp) {
        if (input_shape.empty()) throw ConfigError("mlp needs an input shape");
        for (int h : hidden_sizes) {
            if (h <= 0) throw ConfigError("hidden sizes must be positive");
        }
    } else {
        if (input_shape.size() != 3) throw ConfigError("conv4 input shape must be {C,H,W}");
        if (filters <= 0) throw ConfigError("filters must be positive");
    }
}

std::int64_t ModelSpec::input_size() const { return shape_size(input_shape); }

std::pair<int, int> ModelSpec::conv_output_hw() const {
    int h = input_shape[1], w = input_shape[2];
    for (int b = 0; b < 4; ++b) {
        h = std::max(1, h / 2);
        w = std::max(1, w / 2);
    }
    return {h, w};
}

std::uint64_t ModelSpec::hash() const {
    std::ostringstream os;
    os << to_string(kind) << '|';
    for (int d : input_shape) os << d << ',';
    os << '|';
    for (int h : hidden_sizes) os << h << ',';
    os << '|' << filters << '|' << num_classes;
    return fnv1a64(os.str());
}

std::int64_t ParameterSet::total_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries) n += e.tensor.size();
    return n;
}

std::int64_t ParameterSet::nonzero_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries)
        for (std::int64_t i = 0; i < e.tensor.size(); ++i)
            if (e.tensor[i] != 0.0) ++n;
    return n;
}

bool ParameterSet::congruent_with(const ParameterSet& other) const {
    if (entries.size() != other.entries.size()) return false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name != other.entries[i].name) return false;
        if (entries[i].tensor.shape() != other.entries[i].tensor.shape()) return false;
    }
    return true;
}

bool ParameterSet::bitwise_equal(const ParameterSet& other) const {
    if (!congruent_with(other)) return false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!entries[i].tensor.bitwise_equal(other.entries[i].tensor)) return false;
    }
    return true;
}

bool ParameterSet::all_finite() const {
    for (const auto& e : entries) {
        if (!e.tensor.all_finite()) return false;
    }
    return true;
}

bool is_prunable_param(std::string_view name) {
    return name.ends_with(".weight") || name.ends_with(".kernel");
}

namespace {

struct LayerDef {
    std::string name;
    std::vector<int> shape;
    int fan_in;  // 0 for biases (zero init)
};

std::vector<LayerDef> layer_defs(const ModelSpec& spec) {
    spec.validate();
    std::vector<LayerDef> defs;
    if (spec.kind == ModelKind::mlp) {
        int in = static_cast<int>(spec.input_size());
        std::vector<int> widths = spec.hidden_sizes;
        widths.push_back(spec.num_classes);
        for (std::size_t l = 0; l < widths.size(); ++l) {
            const std::string base = "fc" + std::to_string(l);
            defs.push_back({base + ".weight", {in, widths[l]}, in});
            defs.push_back({base + ".bias", {widths[l]}, 0});
            in = widths[l];
        }
    } else {
        int ch = spec.input_shape[0];
        for (int b = 0; b < 4; ++b) {
            const std::string base = "block" + std::to_string(b);
            defs.push_back({base + ".kernel", {spec.filters, ch, 3, 3}, ch * 9});
            defs.push_back({base + ".bias", {spec.filters}, 0});
            ch = spec.filters;
        }
        auto [h, w] = spec.conv_output_hw();
        const int fc_in = spec.filters * h * w;
        defs.push_back({"fc.weight", {fc_in, spec.num_classes}, fc_in});
        defs.push_back({"fc.bias", {spec.num_classes}, 0});
    }
    return defs;
}

}  // namespace

ParameterSet init_params(const ModelSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParameterSet params;
    for (const LayerDef& def : layer_defs(spec)) {
        Tensor t(def.shape);
        if (def.fan_in > 0) {
            const double bound = std::sqrt(6.0 / def.fan_in);
            for (std::int64_t i = 0; i < t.size(); ++i) t[i] = uniform_in(rng, -bound, bound);
        }
        params.entries.push_back({def.name, std::move(t)});
    }
    return params;
}

std::vector<Var> lift_params(GradTape& tape, const ParameterSet& params) {
    std::vector<Var> vars;
    vars.reserve(params.count());
    for (const auto& e : params.entries) vars.push_back(tape.leaf(e.tensor));
    return vars;
}

namespace {

void check_batch(const ModelSpec& spec, const Batch& batch) {
    if (batch.empty()) throw InputError("empty batch");
    for (const Example& ex : batch) {
        if (ex.label < 0 || ex.label >= spec.num_classes) {
            throw InputError("label " + std::to_string(ex.label) + " out of range [0," +
                             std::to_string(spec.num_classes) + ")");
        }
        if (ex.input.size() != spec.input_size()) {
            throw ShapeError("example size " + std::to_string(ex.input.size()) + " does not match input shape");
        }
    }
}

Tensor stack_flat(const Batch& batch) {
    const int b = static_cast<int>(batch.size());
    const int d = static_cast<int>(batch.front().input.size());
    Tensor x({b, d});
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < d; ++j) x.at(i, j) = batch[static_cast<std::size_t>(i)].input[j];
    return x;
}

Tensor stack_images(const ModelSpec& spec, const Batch& batch) {
    const int b = static_cast<int>(batch.size());
    std::vector<int> shape = {b, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
    Tensor x(shape);
    const std::int64_t per = spec.input_size();
    for (int i = 0; i < b; ++i) {
        const Tensor& src = batch[static_cast<std::size_t>(i)].input;
        for (std::int64_t j = 0; j < per; ++j) x[i * per + j] = src[j];
    }
    return x;
}

std::vector<int> batch_labels(const Batch& batch) {
    std::vector<int> labels;
    labels.reserve(batch.size());
    for (const Example& ex : batch) labels.push_back(ex.label);
    return labels;
}

}  // namespace

BuiltLoss build_loss(GradTape& tape, const ModelSpec& spec, const std::vector<Var>& params, const Batch& batch) {
    check_batch(spec, batch);
    if (params.size() != layer_defs(spec).size()) {
        throw ContractViolation("parameter count does not match model spec");
    }
    Var logits;
    if (spec.kind == ModelKind::mlp) {
        Var h = tape.constant(stack_flat(batch));
        const std::size_t layers = params.size() / 2;
        for (std::size_t l = 0; l < layers; ++l) {
            h = tape.add_rowvec(tape.matmul(h, params[2 * l]), params[2 * l + 1]);
            if (l + 1 < layers) h = tape.relu(h);
        }
        logits = h;
    } else {
        Var h = tape.constant(stack_images(spec, batch));
        for (int b = 0; b < 4; ++b) {
            h = tape.max_pool_2x2(tape.relu(tape.add_chan_bias(tape.conv2d(h, params[2 * b]), params[2 * b + 1])));
        }
        const Tensor& hv = tape.value(h);
        const int n = hv.dim(0);
        const int flat = static_cast<int>(hv.size() / n);
        logits = tape.add_rowvec(tape.matmul(tape.reshape(h, {n, flat}), params[8]), params[9]);
    }
    Var loss = tape.softmax_cross_entropy(logits, batch_labels(batch));
    return {loss, logits};
}

ForwardResult forward_loss(const ModelSpec& spec, const ParameterSet& params, const Batch& batch) {
    GradTape tape;
    std::vector<Var> vars;
    vars.reserve(params.count());
    for (const auto& e : params.entries) vars.push_back(tape.constant(e.tensor));
    BuiltLoss built = build_loss(tape, spec, vars, batch);
    const double loss = tape.value(built.loss)[0];
    if (!std::isfinite(loss)) throw NumericError("non-finite loss");
    return {loss, tape.value(built.logits)};
}

LossGrad loss_and_grad(const ModelSpec& spec, const ParameterSet& params, const Batch& batch) {
    GradTape tape;
    std::vector<Var> vars = lift_params(tape, params);
    BuiltLoss built = build_loss(tape, spec, vars, batch);
    const double loss = tape.value(built.loss)[0];
    if (!std::isfinite(loss)) throw NumericError("non-finite loss");
    Gradients grads = tape.backward(built.loss);
    LossGrad out;
    out.loss = loss;
    out.logits = tape.value(built.logits);
    out.grad.entries.reserve(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
        out.grad.entries.push_back({params.name(i), grads.value_or_zero(tape, vars[i])});
    }
    return out;
}

ParamCount count_params(const ParameterSet& params) { return {params.total_count(), params.nonzero_count()}; }

ParamCount count_prunable(const ParameterSet& params) {
    ParamCount c;
    for (const auto& e : params.entries) {
        if (!is_prunable_param(e.name)) continue;
        c.total += e.tensor.size();
        for (std::int64_t i = 0; i < e.tensor.size(); ++i)
            if (e.tensor[i] != 0.0) ++c.nonzero;
    }
    return c;
}

double sparsity_fraction(std::int64_t total, std::int64_t nonzero) {
    if (total == 0) return 0.0;
    return 1.0 - static_cast<double>(nonzero) / static_cast<double>(total);
}

std::vector<double> flatten(const ParameterSet& params) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(params.total_count()));
    for (const auto& e : params.entries) out.insert(out.end(), e.tensor.data(), e.tensor.data() + e.tensor.size());
    return out;
}

ParameterSet unflatten(const ParameterSet& shape_ref, const std::vector<double>& values) {
    if (static_cast<std::int64_t>(values.size()) != shape_ref.total_count()) {
        throw ShapeError("unflatten: value count " + std::to_string(values.size()) + " does not match parameter set");
    }
    ParameterSet out;
    std::size_t pos = 0;
    for (const auto& e : shape_ref.entries) {
        const std::size_t n = static_cast<std::size_t>(e.tensor.size());
        out.entries.push_back(
            {e.name, Tensor(e.tensor.shape(), std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(pos),
                                                                  values.begin() + static_cast<std::ptrdiff_t>(pos + n)))});
        pos += n;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[4] = {'F', 'A', 'M', 'C'};
}

ByteBuffer read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    ByteBuffer bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const ByteBuffer& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

void save_checkpoint(const std::string& path, const ModelSpec& spec, const ParameterSet& params) {
    ByteBuffer buf;
    buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 4);
    put_u64_le(buf, spec.hash());
    put_u32_le(buf, static_cast<std::uint32_t>(params.count()));
    for (const auto& e : params.entries) {
        put_u16_le(buf, static_cast<std::uint16_t>(e.name.size()));
        buf.insert(buf.end(), e.name.begin(), e.name.end());
        put_u8(buf, static_cast<std::uint8_t>(e.tensor.rank()));
        for (int d : e.tensor.shape()) put_u32_le(buf, static_cast<std::uint32_t>(d));
    }
    for (const auto& e : params.entries) {
        for (std::int64_t i = 0; i < e.tensor.size(); ++i) put_f64_le(buf, e.tensor[i]);
    }
    write_file_bytes(path, buf);
}

ParameterSet load_checkpoint(const std::string& path, std::uint64_t* spec_hash_out) {
    ByteBuffer bytes = read_file_bytes(path);
    ByteReader r(bytes);
    if (r.bytes(4) != std::string(kCheckpointMagic, 4)) throw IoError(path + " is not a checkpoint file");
    const std::uint64_t hash = r.u64_le();
    if (spec_hash_out) *spec_hash_out = hash;
    const std::uint32_t n = r.u32_le();
    ParameterSet params;
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint16_t name_len = r.u16_le();
        std::string name = r.bytes(name_len);
        const std::uint8_t ndim = r.u8();
        std::vector<int> shape;
        for (std::uint8_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(r.u32_le()));
        params.entries.push_back({std::move(name), Tensor(std::move(shape))});
    }
    for (auto& e : params.entries) {
        for (std::int64_t i = 0; i < e.tensor.size(); ++i) e.tensor[i] = r.f64_le();
    }
    return params;
}

}  // namespace fam
