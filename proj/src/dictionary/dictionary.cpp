#include "msrepaint/dictionary.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>

#include <json.hpp>

#include "msrepaint/errors.hpp"
#include "msrepaint/nifti.hpp"
#include "msrepaint/parallel.hpp"

namespace msrepaint {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t LesionDictionary::component_count() const {
    std::size_t n = 0;
    for (const auto& s : sessions) n += s.components.size();
    return n;
}

void LesionDictionary::validate() const {
    const std::size_t total = shape.size();
    std::vector<std::uint8_t> seen;
    for (std::size_t si = 0; si < sessions.size(); ++si) {
        seen.assign(total, 0);
        for (const auto& c : sessions[si].components)
            for (std::size_t v : c.voxels) {
                if (v >= total)
                    throw ValidationError("dictionary session " + std::to_string(si) + ": voxel index " +
                                          std::to_string(v) + " outside shape " + to_string(shape));
                if (seen[v])
                    throw ValidationError("dictionary session " + std::to_string(si) +
                                          ": components overlap at voxel " + std::to_string(v));
                seen[v] = 1;
            }
    }
}

LesionDictionary build_dictionary(const std::vector<NamedMask>& masks, const std::string& space_id,
                                  Connectivity connectivity) {
    LesionDictionary dict;
    dict.space_id = space_id;
    dict.connectivity = connectivity;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const auto& m = masks[i];
        if (i == 0) {
            dict.shape = m.mask.shape();
            dict.spacing = m.mask.spacing();
        } else if (!(m.mask.shape() == dict.shape)) {
            throw IngestionError("mask '" + m.source + "' has shape " + to_string(m.mask.shape()) +
                                 ", dictionary space is " + to_string(dict.shape));
        }
        try {
            require_binary(m.mask, m.source);
        } catch (const Error& e) {
            throw IngestionError("mask '" + m.source + "': " + e.what());
        }
        dict.sessions.push_back({m.source, connected_components(m.mask, connectivity)});
    }
    return dict;
}

LesionDictionary build_dictionary(const std::vector<fs::path>& files, const std::string& space_id,
                                  Connectivity connectivity) {
    std::vector<NamedMask> masks;
    masks.reserve(files.size());
    for (const auto& f : files) {
        try {
            MaskVolume m = nifti::read_mask(f);
            masks.push_back({f.filename().string(), reorient(m, Orientation::Axial)});
        } catch (const Error& e) {
            throw IngestionError("cannot ingest '" + f.string() + "': " + e.what());
        }
    }
    return build_dictionary(masks, space_id, connectivity);
}

namespace {

constexpr char kSessionMagic[4] = {'M', 'S', 'R', 'L'};
constexpr std::uint32_t kSessionVersion = 1;
constexpr int kSpaceVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::istream& in, const std::string& name) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw FormatError("payload", name + ": truncated session file");
    return v;
}

std::string session_file(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "session_%05zu.rle", i);
    return buf;
}

void write_session(const fs::path& path, const DictionarySession& s) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(kSessionMagic, 4);
    put<std::uint32_t>(out, kSessionVersion);
    put<std::uint32_t>(out, std::uint32_t(s.components.size()));
    for (const auto& c : s.components) {
        std::vector<std::pair<std::uint64_t, std::uint32_t>> runs;
        for (std::size_t v : c.voxels) {
            if (!runs.empty() && runs.back().first + runs.back().second == v)
                ++runs.back().second;
            else
                runs.emplace_back(v, 1);
        }
        put<std::uint32_t>(out, std::uint32_t(runs.size()));
        for (const auto& [start, len] : runs) {
            put<std::uint64_t>(out, start);
            put<std::uint32_t>(out, len);
        }
    }
    if (!out) throw Error("failed writing '" + path.string() + "'");
}

DictionarySession read_session(const fs::path& path, std::string source, std::size_t total) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("session", "cannot open '" + path.string() + "'");
    const std::string name = path.filename().string();
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kSessionMagic, 4) != 0)
        throw FormatError("magic", name + ": not a lesion session file");
    const auto version = take<std::uint32_t>(in, name);
    if (version != kSessionVersion)
        throw FormatError("version", name + ": unsupported session version " + std::to_string(version));
    DictionarySession s;
    s.source = std::move(source);
    const auto count = take<std::uint32_t>(in, name);
    for (std::uint32_t i = 0; i < count; ++i) {
        Component c;
        const auto runs = take<std::uint32_t>(in, name);
        for (std::uint32_t r = 0; r < runs; ++r) {
            const auto start = take<std::uint64_t>(in, name);
            const auto len = take<std::uint32_t>(in, name);
            if (len == 0 || start + len > total)
                throw FormatError("runs", name + ": run outside the dictionary grid");
            if (!c.voxels.empty() && start <= c.voxels.back())
                throw FormatError("runs", name + ": runs not in ascending order");
            for (std::uint64_t v = start; v < start + len; ++v) c.voxels.push_back(std::size_t(v));
        }
        s.components.push_back(std::move(c));
    }
    return s;
}

}  // namespace

void save_dictionary(const LesionDictionary& dict, const fs::path& dir) {
    dict.validate();
    fs::create_directories(dir);
    json meta;
    meta["format"] = "msrepaint-lesion-dictionary";
    meta["version"] = kSpaceVersion;
    meta["space_id"] = dict.space_id;
    meta["shape"] = {dict.shape.nx, dict.shape.ny, dict.shape.nz};
    meta["spacing"] = dict.spacing;
    meta["connectivity"] = int(dict.connectivity);
    json sessions = json::array();
    for (std::size_t i = 0; i < dict.sessions.size(); ++i) {
        const auto file = session_file(i);
        write_session(dir / file, dict.sessions[i]);
        sessions.push_back({{"file", file},
                            {"source", dict.sessions[i].source},
                            {"components", dict.sessions[i].components.size()}});
    }
    meta["sessions"] = sessions;
    std::ofstream out(dir / "space.json", std::ios::trunc);
    if (!out) throw Error("cannot write '" + (dir / "space.json").string() + "'");
    out << meta.dump(2) << "\n";
}

LesionDictionary load_dictionary(const fs::path& dir) {
    std::ifstream in(dir / "space.json");
    if (!in) throw FormatError("space.json", "no dictionary at '" + dir.string() + "'");
    json meta;
    try {
        meta = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("space.json", std::string("malformed dictionary metadata: ") + e.what());
    }
    auto field = [&](const char* key) -> const json& {
        if (!meta.contains(key)) throw FormatError(key, "space.json: missing field");
        return meta.at(key);
    };
    try {
        if (field("format") != "msrepaint-lesion-dictionary") throw FormatError("format", "space.json: wrong format");
        if (field("version").get<int>() != kSpaceVersion)
            throw FormatError("version", "space.json: unsupported version");
        LesionDictionary dict;
        dict.space_id = field("space_id").get<std::string>();
        const auto shape = field("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 3 || !shape[0] || !shape[1] || !shape[2])
            throw FormatError("shape", "space.json: shape must hold three positive sizes");
        dict.shape = {shape[0], shape[1], shape[2]};
        if (meta.contains("spacing")) dict.spacing = meta.at("spacing").get<std::array<double, 3>>();
        dict.connectivity = connectivity_from_int(field("connectivity").get<int>());
        for (const auto& s : field("sessions")) {
            auto session = read_session(dir / s.at("file").get<std::string>(), s.value("source", ""),
                                        dict.shape.size());
            if (s.contains("components") && s.at("components").get<std::size_t>() != session.components.size())
                throw FormatError("components", "space.json: component count disagrees with " +
                                                    s.at("file").get<std::string>());
            dict.sessions.push_back(std::move(session));
        }
        dict.validate();
        return dict;
    } catch (const json::exception& e) {
        throw FormatError("space.json", e.what());
    }
}

Fraction Fraction::parse(const std::string& text) {
    Fraction f;
    auto bad = [&] { return ParameterError("fraction must be in (0, 1], got '" + text + "'"); };
    try {
        const auto slash = text.find('/');
        if (slash != std::string::npos) {
            std::size_t used = 0;
            f.num = std::stoull(text.substr(0, slash), &used);
            if (used != slash) throw bad();
            const std::string den = text.substr(slash + 1);
            f.den = std::stoull(den, &used);
            if (used != den.size()) throw bad();
        } else {
            // Decimal: scale by a power of ten.
            const auto dot = text.find('.');
            std::string digits = text;
            f.den = 1;
            if (dot != std::string::npos) {
                digits = text.substr(0, dot) + text.substr(dot + 1);
                for (std::size_t i = dot + 1; i < text.size(); ++i) f.den *= 10;
            }
            if (digits.empty() || digits.size() > 18 ||
                !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; }))
                throw bad();
            f.num = std::stoull(digits);
        }
    } catch (const std::logic_error&) {
        throw bad();
    }
    if (f.den == 0 || f.num == 0 || f.num > f.den) throw bad();
    const auto g = std::gcd(f.num, f.den);
    f.num /= g;
    f.den /= g;
    return f;
}

std::uint64_t Fraction::round_times(std::uint64_t n) const { return (2 * num * n + den) / (2 * den); }

std::string Fraction::str() const { return std::to_string(num) + "/" + std::to_string(den); }

PoolingMode pooling_mode_from_string(const std::string& s) {
    if (s == "pooled") return PoolingMode::Pooled;
    if (s == "per-session") return PoolingMode::PerSession;
    throw ParameterError("pooling mode must be 'pooled' or 'per-session', got '" + s + "'");
}

std::string to_string(PoolingMode m) { return m == PoolingMode::Pooled ? "pooled" : "per-session"; }

namespace {

// First k entries of a uniform random permutation of [0, n).
std::vector<std::size_t> choose(std::size_t n, std::size_t k, CounterRng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(k);
    return idx;
}

std::size_t selection_size(const Fraction& f, std::size_t pool) {
    if (pool == 0) return 0;
    return std::max<std::size_t>(1, f.round_times(pool));
}

}  // namespace

CandidateMask sample_candidate_mask(const LesionDictionary& dict, const SampleOptions& options, CounterRng& rng) {
    if (dict.sessions.empty()) throw SamplingError("cannot sample from an empty lesion dictionary");
    if (options.n_sessions < 1 || std::size_t(options.n_sessions) > dict.sessions.size())
        throw ParameterError("n_sessions must be in [1, " + std::to_string(dict.sessions.size()) + "], got " +
                             std::to_string(options.n_sessions));
    if (options.fraction.num == 0 || options.fraction.num > options.fraction.den)
        throw ParameterError("fraction must be in (0, 1]");

    CandidateMask out;
    out.mask = MaskVolume(dict.shape, dict.spacing, Orientation::Axial, 0);
    out.sessions = choose(dict.sessions.size(), std::size_t(options.n_sessions), rng);

    std::vector<const Component*> picked;
    if (options.mode == PoolingMode::Pooled) {
        std::vector<const Component*> pool;
        for (std::size_t s : out.sessions)
            for (const auto& c : dict.sessions[s].components) pool.push_back(&c);
        out.pool_size = pool.size();
        for (std::size_t i : choose(pool.size(), selection_size(options.fraction, pool.size()), rng))
            picked.push_back(pool[i]);
    } else {
        for (std::size_t s : out.sessions) {
            const auto& comps = dict.sessions[s].components;
            out.pool_size += comps.size();
            for (std::size_t i : choose(comps.size(), selection_size(options.fraction, comps.size()), rng))
                picked.push_back(&comps[i]);
        }
    }
    out.components = picked.size();
    for (const Component* c : picked)
        for (std::size_t v : c->voxels) out.mask[v] = 1;
    return out;
}

std::string ManifestRow::to_json() const {
    json j;
    j["index"] = index;
    j["seed"] = seed;
    j["status"] = ok ? "ok" : "failed";
    if (!ok) j["error"] = error;
    j["components"] = components;
    j["lesion_voxels"] = lesion_voxels;
    j["sessions"] = sessions;
    if (ok) {
        j["mask"] = mask_path;
        json imgs = json::array();
        for (const auto& [c, p] : images) imgs.push_back({{"contrast", c}, {"path", p}});
        j["images"] = imgs;
    }
    return j.dump();
}

ManifestRow ManifestRow::from_json(const std::string& line) {
    try {
        const json j = json::parse(line);
        ManifestRow r;
        r.index = j.at("index").get<std::size_t>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.ok = j.at("status") == "ok";
        r.error = j.value("error", "");
        r.components = j.value("components", std::size_t(0));
        r.lesion_voxels = j.value("lesion_voxels", std::size_t(0));
        r.sessions = j.value("sessions", std::vector<std::size_t>{});
        r.mask_path = j.value("mask", "");
        if (j.contains("images"))
            for (const auto& im : j.at("images"))
                r.images.emplace_back(im.at("contrast").get<std::string>(), im.at("path").get<std::string>());
        return r;
    } catch (const json::exception& e) {
        throw FormatError("manifest", std::string("malformed manifest row: ") + e.what());
    }
}

std::vector<ManifestRow> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("manifest", "cannot open '" + path.string() + "'");
    std::vector<ManifestRow> rows;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(ManifestRow::from_json(line));
    return rows;
}

namespace {

constexpr std::uint64_t kMaskStream = 0x4D41534Bull;

void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        for (const auto& r : rows) out << r.to_json() << "\n";
        if (!out) throw Error("failed writing '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

std::string numbered(const char* prefix, std::size_t i, const std::string& suffix) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%05zu", prefix, i);
    return std::string(buf) + suffix;
}

bool files_exist(const ManifestRow& r, const fs::path& dir) {
    if (!r.ok || r.mask_path.empty() || !fs::exists(dir / r.mask_path)) return false;
    return std::all_of(r.images.begin(), r.images.end(), [&](const auto& im) { return fs::exists(dir / im.second); });
}

}  // namespace

std::vector<ManifestRow> generate_dataset(const LesionDictionary& dict, const MultiContrastVolume& base,
                                          const DatasetConfig& cfg, const Denoiser& denoiser,
                                          const NoiseSchedule& schedule, const fs::path& out_dir,
                                          const std::function<void(const ManifestRow&)>& on_row) {
    if (base.channel_count() == 0) throw ShapeError("generate_dataset: base volume has no contrasts");
    if (base.orientation() != Orientation::Axial || !(base.shape() == dict.shape))
        throw ShapeError("generate_dataset: base volume " + to_string(base.shape()) +
                         " is not in the dictionary space " + to_string(dict.shape));
    cfg.sampler.validate(schedule.steps());
    if (cfg.workers < 1) throw ParameterError("generate_dataset: workers must be >= 1");
    if (cfg.n_images == 0) return {};
    if (dict.sessions.empty()) throw SamplingError("cannot sample from an empty lesion dictionary");

    fs::create_directories(out_dir);
    const fs::path manifest = out_dir / kManifestName;

    std::vector<std::optional<ManifestRow>> rows(cfg.n_images);
    if (cfg.resume && fs::exists(manifest))
        for (auto& r : read_manifest(manifest))
            if (r.index < cfg.n_images && r.seed == derive_seed(cfg.seed, r.index) && files_exist(r, out_dir))
                rows[r.index] = std::move(r);

    std::mutex mu;
    auto flush = [&] {
        std::vector<ManifestRow> done;
        for (const auto& r : rows)
            if (r) done.push_back(*r);
        write_manifest(manifest, done);
    };
    {
        std::lock_guard lock(mu);
        flush();
    }

    SamplerConfig sampler = cfg.sampler;
    if (cfg.workers > 1) sampler.threads = 1;

    parallel_for(cfg.n_images, cfg.workers, [&](std::size_t i) {
        {
            std::lock_guard lock(mu);
            if (rows[i]) return;
        }
        ManifestRow row;
        row.index = i;
        row.seed = derive_seed(cfg.seed, i);
        try {
            CounterRng rng(row.seed, {kMaskStream});
            CandidateMask cand = sample_candidate_mask(dict, cfg.sampling, rng);
            cand.mask = MaskVolume(base.shape(), cand.mask.storage(), base.spacing(), Orientation::Axial);
            row.components = cand.components;
            row.sessions = cand.sessions;
            row.lesion_voxels = count_foreground(cand.mask);

            SamplerConfig sc = sampler;
            sc.seed = row.seed;
            const auto result = run_multiview(base, RepaintMasks::synthesis(cand.mask), sc, denoiser, schedule,
                                              cfg.multiview);
            row.mask_path = numbered("mask", i, ".nii");
            nifti::write(out_dir / row.mask_path, cand.mask);
            for (const auto& ch : result.fused.channels()) {
                if (!ch.present) continue;
                const std::string rel = numbered("image", i, "_" + ch.name + ".nii");
                nifti::write(out_dir / rel, ch.volume);
                row.images.emplace_back(ch.name, rel);
            }
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
            row.mask_path.clear();
            row.images.clear();
        }
        std::lock_guard lock(mu);
        rows[i] = row;
        flush();
        if (on_row) on_row(row);
    });

    std::vector<ManifestRow> out;
    for (auto& r : rows) out.push_back(std::move(*r));
    return out;
}

}  // namespace msrepaint
