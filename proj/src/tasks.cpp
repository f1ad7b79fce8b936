#include "fam/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "fam/bytes.hpp"
#include "fam/rng.hpp"

namespace fs = std::filesystem;

namespace fam {

void ShiftParams::validate(int channels) const {
    if (static_cast<int>(channel_scale.size()) != channels || static_cast<int>(channel_offset.size()) != channels) {
        throw ConfigError("shift params channel count mismatch");
    }
    for (double s : channel_scale) {
        if (!(s > 0.0)) throw ConfigError("intensity scale must be positive");
    }
    if (!(noise_scale >= 0.0)) throw ConfigError("noise scale must be non-negative");
}

std::int64_t ClientDataset::example_count() const {
    std::int64_t n = 0;
    for (const auto& cls : examples) n += static_cast<std::int64_t>(cls.size());
    return n;
}

namespace {

// Partial Fisher-Yates: first k entries of a shuffled 0..n-1.
std::vector<int> choose_without_replacement(int n, int k, std::mt19937_64& rng) {
    std::vector<int> ids(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n - i)));
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
    }
    ids.resize(static_cast<std::size_t>(k));
    return ids;
}

}  // namespace

TaskContext sample_task(const ClientDataset& ds, int way, std::uint64_t seed) {
    if (way < 2) throw EpisodeError("way must be >= 2, got " + std::to_string(way));
    if (ds.num_classes() < way) {
        throw EpisodeError("client " + std::to_string(ds.client_id) + " has " + std::to_string(ds.num_classes()) +
                           " classes, need " + std::to_string(way));
    }
    std::mt19937_64 rng(seed);
    TaskContext task;
    task.classes = choose_without_replacement(ds.num_classes(), way, rng);
    task.pools.resize(static_cast<std::size_t>(way));
    for (int j = 0; j < way; ++j) {
        const int cls = task.classes[static_cast<std::size_t>(j)];
        const int n = ds.class_size(cls);
        task.pools[static_cast<std::size_t>(j)] = choose_without_replacement(n, n, rng);
    }
    return task;
}

Episode draw_episode(const ClientDataset& ds, TaskContext& task, int shot, int query) {
    if (shot < 1 || query < 1) throw EpisodeError("shot and query must be >= 1");
    const int way = static_cast<int>(task.classes.size());
    Episode ep;
    ep.way = way;
    for (int j = 0; j < way; ++j) {
        const int cls = task.classes[static_cast<std::size_t>(j)];
        auto& pool = task.pools[static_cast<std::size_t>(j)];
        const int need = shot + query;
        if (static_cast<int>(pool.size()) < need) {
            throw EpisodeError("class " + ds.class_names[static_cast<std::size_t>(cls)] + " on client " +
                               std::to_string(ds.client_id) + " has " + std::to_string(pool.size()) +
                               " unused examples, need " + std::to_string(need));
        }
        for (int s = 0; s < shot; ++s) {
            ep.support.push_back({ds.examples[static_cast<std::size_t>(cls)][static_cast<std::size_t>(pool.back())], j});
            pool.pop_back();
        }
        for (int q = 0; q < query; ++q) {
            ep.query.push_back({ds.examples[static_cast<std::size_t>(cls)][static_cast<std::size_t>(pool.back())], j});
            pool.pop_back();
        }
        ep.relabeling[cls] = j;
    }
    return ep;
}

Episode sample_episode(const ClientDataset& ds, int way, int shot, int query, std::uint64_t seed) {
    TaskContext task = sample_task(ds, way, seed);
    return draw_episode(ds, task, shot, query);
}

// ---------------------------------------------------------------------------
// Synthetic family
// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
    if (classes < 2) throw ConfigError("synthetic family needs >= 2 classes");
    if (examples_per_class < 1) throw ConfigError("examples_per_class must be positive");
    if (image_shape.size() != 3) throw ConfigError("image shape must be {C,H,W}");
    for (int d : image_shape) {
        if (d <= 0) throw ConfigError("image dims must be positive");
    }
    if (shift_spread < 0.0) throw ConfigError("shift_spread must be >= 0");
}

PrototypeBank make_prototype_bank(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed_combine(seed, "prototypes"));
    const int C = spec.image_shape[0], H = spec.image_shape[1], W = spec.image_shape[2];
    PrototypeBank bank;
    for (int cls = 0; cls < spec.classes; ++cls) {
        Tensor img({C, H, W});
        for (int c = 0; c < C; ++c) {
            // Sum of a few low-frequency waves gives a smooth class pattern.
            struct Wave {
                double fx, fy, phase, amp;
            };
            std::vector<Wave> waves;
            for (int k = 0; k < 3; ++k) {
                waves.push_back({1.0 + std::floor(uniform_in(rng, 0.0, 3.0)), 1.0 + std::floor(uniform_in(rng, 0.0, 3.0)),
                                 uniform_in(rng, 0.0, 6.283185307179586), uniform_in(rng, 0.5, 1.0)});
            }
            double lo = 1e300, hi = -1e300;
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    double v = 0.0;
                    for (const Wave& wv : waves) {
                        v += wv.amp * std::sin(6.283185307179586 * (wv.fx * x / W + wv.fy * y / H) + wv.phase);
                    }
                    img[(static_cast<std::int64_t>(c) * H + y) * W + x] = v;
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
            }
            // Affine squeeze into [0.15, 0.85] leaves headroom for shifts.
            const double span = hi > lo ? hi - lo : 1.0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double& v = img[(static_cast<std::int64_t>(c) * H + y) * W + x];
                    v = 0.15 + 0.7 * (v - lo) / span;
                }
        }
        bank.prototypes.push_back(std::move(img));
    }
    return bank;
}

ShiftParams draw_shift_params(const SyntheticSpec& spec, int client_id, std::uint64_t seed) {
    std::mt19937_64 rng(seed_combine(seed, "shift", static_cast<std::uint64_t>(client_id)));
    const int C = spec.image_shape[0];
    const double s = spec.shift_spread;
    ShiftParams p;
    // With probability s the client sits at a uniformly drawn orientation.
    p.rotation_quarters = uniform_unit(rng) < s ? static_cast<int>(uniform_index(rng, 4)) : 0;
    for (int c = 0; c < C; ++c) {
        p.channel_scale.push_back(std::exp(uniform_in(rng, -1.0, 1.0) * s * std::log(1.5)));
        p.channel_offset.push_back(uniform_in(rng, -1.0, 1.0) * s * 0.25);
    }
    p.noise_scale = 0.15 + uniform_unit(rng) * s * 0.35;
    return p;
}

Tensor rotate_quarters(const Tensor& image, int quarters) {
    if (image.rank() != 3) throw ShapeError("rotate_quarters expects {C,H,W}, got " + image.shape_str());
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    const int q = ((quarters % 4) + 4) % 4;
    if (q == 0) return image;
    if ((q == 1 || q == 3) && H != W) {
        throw ConfigError("odd quarter-turns require square images, got " + image.shape_str());
    }
    std::vector<int> out_shape = {C, H, W};
    Tensor out(out_shape);
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                int sy = y, sx = x;
                if (q == 1) {  // 90 degrees ccw: out(y,x) = in(x, W-1-y)
                    sy = x;
                    sx = W - 1 - y;
                } else if (q == 2) {
                    sy = H - 1 - y;
                    sx = W - 1 - x;
                } else {  // 270
                    sy = H - 1 - x;
                    sx = y;
                }
                out[(static_cast<std::int64_t>(c) * H + y) * W + x] =
                    image[(static_cast<std::int64_t>(c) * H + sy) * W + sx];
            }
        }
    }
    return out;
}

ClientDataset render_client(const SyntheticSpec& spec, const PrototypeBank& bank, int client_id,
                            const ShiftParams& shift, std::uint64_t seed) {
    spec.validate();
    const int C = spec.image_shape[0], H = spec.image_shape[1], W = spec.image_shape[2];
    shift.validate(C);
    std::mt19937_64 rng(seed_combine(seed, "render", static_cast<std::uint64_t>(client_id)));

    ClientDataset ds;
    ds.client_id = client_id;
    ds.shift = shift;
    for (int cls = 0; cls < spec.classes; ++cls) {
        ds.class_names.push_back("class_" + std::to_string(cls));
        Tensor base = rotate_quarters(bank.prototypes[static_cast<std::size_t>(cls)], shift.rotation_quarters);
        std::vector<Tensor> rendered;
        for (int e = 0; e < spec.examples_per_class; ++e) {
            Tensor img(base.shape());
            for (int c = 0; c < C; ++c) {
                const double sc = shift.channel_scale[static_cast<std::size_t>(c)];
                const double off = shift.channel_offset[static_cast<std::size_t>(c)];
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
                    const std::int64_t pos = static_cast<std::int64_t>(c) * H * W + i;
                    double v = sc * base[pos] + off;
                    if (shift.noise_scale > 0.0) v += shift.noise_scale * gaussian(rng);
                    img[pos] = std::clamp(v, 0.0, 1.0);
                }
            }
            rendered.push_back(std::move(img));
        }
        ds.examples.push_back(std::move(rendered));
    }
    return ds;
}

std::vector<ClientDataset> make_synthetic_clients(const SyntheticSpec& spec, int n_clients, std::uint64_t seed) {
    spec.validate();
    if (n_clients < 1) throw ConfigError("need at least one client");
    PrototypeBank bank = make_prototype_bank(spec, seed);
    std::vector<ClientDataset> clients;
    clients.reserve(static_cast<std::size_t>(n_clients));
    for (int i = 0; i < n_clients; ++i) {
        clients.push_back(render_client(spec, bank, i, draw_shift_params(spec, i, seed), seed));
    }
    return clients;
}

// ---------------------------------------------------------------------------
// Raster files
// ---------------------------------------------------------------------------

namespace {
constexpr char kRasterMagic[4] = {'F', 'A', 'M', 'R'};
}

Tensor load_famr(const std::string& path) {
    ByteBuffer bytes;
    try {
        bytes = read_file_bytes(path);
    } catch (const IoError& e) {
        throw IngestionError(std::string(e.what()));
    }
    try {
        ByteReader r(bytes);
        if (r.bytes(4) != std::string(kRasterMagic, 4)) throw IngestionError(path + ": not a FAMR raster file");
        const int w = static_cast<int>(r.u32_le());
        const int h = static_cast<int>(r.u32_le());
        const int c = static_cast<int>(r.u32_le());
        if (w <= 0 || h <= 0 || c <= 0) throw IngestionError(path + ": bad raster dimensions");
        Tensor img({c, h, w});
        for (std::int64_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(r.u8()) / 255.0;
        return img;
    } catch (const IoError&) {
        throw IngestionError(path + ": truncated raster file");
    }
}

void save_famr(const std::string& path, const Tensor& image) {
    if (image.rank() != 3) throw ShapeError("save_famr expects {C,H,W}, got " + image.shape_str());
    ByteBuffer buf;
    buf.insert(buf.end(), kRasterMagic, kRasterMagic + 4);
    put_u32_le(buf, static_cast<std::uint32_t>(image.dim(2)));
    put_u32_le(buf, static_cast<std::uint32_t>(image.dim(1)));
    put_u32_le(buf, static_cast<std::uint32_t>(image.dim(0)));
    for (std::int64_t i = 0; i < image.size(); ++i) {
        const double v = std::clamp(image[i], 0.0, 1.0);
        buf.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
    write_file_bytes(path, buf);
}

Tensor resize_nearest(const Tensor& image, int out_h, int out_w) {
    if (image.rank() != 3) throw ShapeError("resize_nearest expects {C,H,W}, got " + image.shape_str());
    if (out_h <= 0 || out_w <= 0) throw InputError("resize target must be positive");
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    if (H == out_h && W == out_w) return image;
    Tensor out({C, out_h, out_w});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < out_h; ++y) {
            const int sy = static_cast<int>(static_cast<std::int64_t>(y) * H / out_h);
            for (int x = 0; x < out_w; ++x) {
                const int sx = static_cast<int>(static_cast<std::int64_t>(x) * W / out_w);
                out[(static_cast<std::int64_t>(c) * out_h + y) * out_w + x] =
                    image[(static_cast<std::int64_t>(c) * H + sy) * W + sx];
            }
        }
    return out;
}

ClientDataset load_directory(const std::string& path, std::optional<std::pair<int, int>> resize_hw) {
    if (!fs::is_directory(path)) throw IngestionError(path + ": not a directory");
    std::vector<std::string> class_dirs;
    for (const auto& entry : fs::directory_iterator(path)) {
        if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw IngestionError(path + ": no class subdirectories");

    ClientDataset ds;
    for (const std::string& cls : class_dirs) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(fs::path(path) / cls)) {
            if (entry.is_regular_file() && entry.path().extension() == ".famr") {
                files.push_back(entry.path().string());
            }
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw IngestionError(path + "/" + cls + ": empty class directory");
        std::vector<Tensor> imgs;
        for (const std::string& f : files) {
            Tensor img = load_famr(f);
            if (resize_hw) img = resize_nearest(img, resize_hw->first, resize_hw->second);
            imgs.push_back(std::move(img));
        }
        ds.class_names.push_back(cls);
        ds.examples.push_back(std::move(imgs));
    }
    return ds;
}

void save_directory(const ClientDataset& ds, const std::string& path) {
    fs::create_directories(path);
    for (int cls = 0; cls < ds.num_classes(); ++cls) {
        const fs::path dir = fs::path(path) / ds.class_names[static_cast<std::size_t>(cls)];
        fs::create_directories(dir);
        for (int e = 0; e < ds.class_size(cls); ++e) {
            char name[32];
            std::snprintf(name, sizeof name, "ex_%04d.famr", e);
            save_famr((dir / name).string(), ds.examples[static_cast<std::size_t>(cls)][static_cast<std::size_t>(e)]);
        }
    }
}

}  // namespace fam
