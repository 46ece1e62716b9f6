#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "msrepaint/components.hpp"
#include "msrepaint/multiview.hpp"
#include "msrepaint/rng.hpp"

namespace msrepaint {

/// Lesion components of one scan session, in dictionary space.
struct DictionarySession {
    std::string source;                 ///< file name or label the mask came from
    std::vector<Component> components;  ///< pairwise disjoint
};

struct LesionDictionary {
    std::string space_id;
    Shape3 shape;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    Connectivity connectivity = Connectivity::Corners;
    std::vector<DictionarySession> sessions;

    std::size_t component_count() const;
    /// Checks voxel bounds and within-session disjointness; throws ValidationError.
    void validate() const;
};

struct NamedMask {
    std::string source;
    MaskVolume mask;
};

/// One session per mask, decomposed into connected components. Masks must
/// share one shape; a mismatch raises IngestionError naming the source.
LesionDictionary build_dictionary(const std::vector<NamedMask>& masks, const std::string& space_id,
                                  Connectivity connectivity = Connectivity::Corners);
/// Reads NIfTI masks and builds the dictionary. Unreadable files raise
/// IngestionError naming the file.
LesionDictionary build_dictionary(const std::vector<std::filesystem::path>& files, const std::string& space_id,
                                  Connectivity connectivity = Connectivity::Corners);

/// Directory layout: space.json plus session_NNNNN.rle per session.
void save_dictionary(const LesionDictionary& dict, const std::filesystem::path& dir);
LesionDictionary load_dictionary(const std::filesystem::path& dir);

/// Exact rational num / den with 0 < value <= 1.
struct Fraction {
    std::uint64_t num = 1, den = 8;
    /// "1/8", "0.125" or "1".
    static Fraction parse(const std::string& text);
    /// round(value * n), halves rounded up.
    std::uint64_t round_times(std::uint64_t n) const;
    double value() const { return double(num) / double(den); }
    std::string str() const;
};

enum class PoolingMode { Pooled, PerSession };
PoolingMode pooling_mode_from_string(const std::string& s);
std::string to_string(PoolingMode m);

struct SampleOptions {
    int n_sessions = 8;
    Fraction fraction{1, 8};
    PoolingMode mode = PoolingMode::Pooled;
};

struct CandidateMask {
    MaskVolume mask;
    std::vector<std::size_t> sessions;  ///< chosen session indices
    std::size_t pool_size = 0;          ///< components available in the chosen sessions
    std::size_t components = 0;         ///< components selected
};

/// Chooses n_sessions sessions without replacement, then round(fraction x
/// pool) components without replacement (at least one when the pool is not
/// empty); the composite is their voxelwise union. In per-session mode the
/// rule is applied to each chosen session separately. An empty dictionary
/// raises SamplingError.
CandidateMask sample_candidate_mask(const LesionDictionary& dict, const SampleOptions& options, CounterRng& rng);

struct DatasetConfig {
    std::size_t n_images = 0;
    std::uint64_t seed = 0;
    SampleOptions sampling;
    SamplerConfig sampler;
    MultiviewOptions multiview;
    int workers = 1;  ///< images generated concurrently
    bool resume = true;
};

struct ManifestRow {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::size_t components = 0;
    std::size_t lesion_voxels = 0;
    std::vector<std::size_t> sessions;
    std::string mask_path;                                   ///< relative to the output dir
    std::vector<std::pair<std::string, std::string>> images; ///< (contrast, relative path)

    std::string to_json() const;
    static ManifestRow from_json(const std::string& line);
};

inline constexpr const char* kManifestName = "manifest.jsonl";

/// Synthesizes n_images lesioned volumes from a lesion-free base: candidate
/// mask from the dictionary, then run_multiview with M^target = M^repaint =
/// candidate. Writes NIfTI outputs and manifest.jsonl into out_dir. Image i
/// uses derive_seed(seed, i). Engine failures become failed rows. With
/// resume set, rows already recorded as ok whose files exist are kept.
std::vector<ManifestRow> generate_dataset(const LesionDictionary& dict, const MultiContrastVolume& base,
                                          const DatasetConfig& cfg, const Denoiser& denoiser,
                                          const NoiseSchedule& schedule, const std::filesystem::path& out_dir,
                                          const std::function<void(const ManifestRow&)>& on_row = {});

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

}  // namespace msrepaint
