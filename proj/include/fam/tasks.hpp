#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fam/model.hpp"

namespace fam {

/// One few-shot task: N-way support/query sets with episode-local labels.
struct Episode {
    int way = 0;
    Batch support;                   // way*shot examples, labels in [0,way)
    Batch query;                     // way*query examples
    std::map<int, int> relabeling;   // source class id -> episode label
};

/// Per-client rendering transform for the synthetic family.
struct ShiftParams {
    int rotation_quarters = 0;           // exact 90-degree steps
    std::vector<double> channel_scale;   // per channel, > 0
    std::vector<double> channel_offset;  // per channel
    double noise_scale = 0.0;            // >= 0, per-pixel additive

    void validate(int channels) const;
    bool operator==(const ShiftParams&) const = default;
};

/// Immutable labeled example store for one client.
struct ClientDataset {
    int client_id = 0;
    std::vector<std::string> class_names;          // index = class id
    std::vector<std::vector<Tensor>> examples;     // [class][example]
    std::optional<ShiftParams> shift;              // synthetic provenance

    int num_classes() const { return static_cast<int>(class_names.size()); }
    int class_size(int cls) const { return static_cast<int>(examples[static_cast<std::size_t>(cls)].size()); }
    std::int64_t example_count() const;
};

/// Class subset with a fixed relabeling plus shuffled per-class index pools;
/// episodes drawn from the same task share classes and never reuse examples.
struct TaskContext {
    std::vector<int> classes;                  // classes[j] = source class of label j
    std::vector<std::vector<int>> pools;       // unused example indices per label
};

TaskContext sample_task(const ClientDataset& ds, int way, std::uint64_t seed);
Episode draw_episode(const ClientDataset& ds, TaskContext& task, int shot, int query);

/// Classes chosen without replacement, then shot+query disjoint examples per
/// class. Deterministic in the seed.
Episode sample_episode(const ClientDataset& ds, int way, int shot, int query, std::uint64_t seed);

/// Synthetic task family: a shared bank of smooth class prototypes rendered
/// through per-client shifts.
struct SyntheticSpec {
    int classes = 5;
    int examples_per_class = 100;
    std::vector<int> image_shape = {1, 12, 12};  // {C,H,W}
    double shift_spread = 0.0;

    void validate() const;
};

struct PrototypeBank {
    std::vector<Tensor> prototypes;  // one per class, values in [0,1]
};

PrototypeBank make_prototype_bank(const SyntheticSpec& spec, std::uint64_t seed);
ShiftParams draw_shift_params(const SyntheticSpec& spec, int client_id, std::uint64_t seed);
ClientDataset render_client(const SyntheticSpec& spec, const PrototypeBank& bank, int client_id,
                            const ShiftParams& shift, std::uint64_t seed);
std::vector<ClientDataset> make_synthetic_clients(const SyntheticSpec& spec, int n_clients, std::uint64_t seed);

// Exact quarter-turn rotation of a {C,H,W} tensor (counterclockwise).
Tensor rotate_quarters(const Tensor& image, int quarters);
// Nearest-neighbour resize of a {C,H,W} tensor.
Tensor resize_nearest(const Tensor& image, int out_h, int out_w);

// Raster file format: "FAMR" magic, u32 width, u32 height, u32 channels
// (little-endian), then channel-planar rows of bytes, 0..255.
Tensor load_famr(const std::string& path);
void save_famr(const std::string& path, const Tensor& image);

/// Loads <root>/<class_name>/*.famr with classes and files in sorted order;
/// pixel bytes normalize to [0,1]. Optional nearest-neighbour resize.
ClientDataset load_directory(const std::string& path,
                             std::optional<std::pair<int, int>> resize_hw = std::nullopt);
/// Writes a dataset back out in the same layout (used by data generation).
void save_directory(const ClientDataset& ds, const std::string& path);

}  // namespace fam
