#include "msrepaint/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "msrepaint/dictionary.hpp"
#include "msrepaint/multiview.hpp"
#include "msrepaint/network.hpp"
#include "msrepaint/nifti.hpp"
#include "msrepaint/phantom.hpp"
#include "msrepaint/render.hpp"
#include "msrepaint/training.hpp"

namespace msrepaint::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

json default_settings() {
    return {
        {"schedule.T", 1000},
        {"schedule.s", NoiseSchedule::kDefaultOffset},
        {"sampler.ddim_stride", 10},
        {"sampler.truncation_tau", 40},
        {"sampler.repaint_repeats", 2},
        {"sampler.views", "all"},
        {"sampler.clip_x0", 1.0},
        {"train.lesion_weight", 10.0},
        {"train.learning_rate", 3e-4},
        {"train.batch_size", 32},
        {"train.epochs", 300},
        {"train.dropout_prob", 0.25},
        {"train.ema_decay", 0.999},
        {"model.base_width", 24},
        {"dict.sessions", 8},
        {"dict.fraction", "1/8"},
        {"dict.mode", "pooled"},
        {"seed", 0},
        {"threads", 1},
    };
}

const std::set<std::string> kNullable = {"sampler.truncation_tau", "sampler.clip_x0"};

// Flat dotted settings: defaults, then the config file, then flags.
class Settings {
public:
    Settings() : values_(default_settings()), defaults_(values_) {}

    void load_file(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw UsageError("cannot open config file '" + path.string() + "'");
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw UsageError("config file '" + path.string() + "' is not valid JSON: " + e.what());
        }
        if (!j.is_object()) throw UsageError("config file must hold a JSON object of dotted keys");
        for (const auto& [k, v] : j.items()) set(k, v);
    }

    void set(const std::string& key, json v) {
        if (!defaults_.contains(key)) throw UsageError("unknown config key '" + key + "'");
        const json& d = defaults_.at(key);
        if (kNullable.count(key) && (v.is_null() || v == "none")) {
            values_[key] = nullptr;
            explicit_.insert(key);
            return;
        }
        const bool ok = d.is_number_integer()  ? v.is_number_integer()
                        : d.is_number()        ? v.is_number()
                        : d.is_string()        ? v.is_string()
                                               : true;
        if (!ok) throw UsageError("config key '" + key + "' has the wrong type: " + v.dump());
        values_[key] = std::move(v);
        explicit_.insert(key);
    }

    bool is_explicit(const std::string& key) const { return explicit_.count(key) > 0; }
    int i(const std::string& key) const { return values_.at(key).get<int>(); }
    double d(const std::string& key) const { return values_.at(key).get<double>(); }
    std::string s(const std::string& key) const { return values_.at(key).get<std::string>(); }
    std::uint64_t seed() const { return values_.at("seed").get<std::uint64_t>(); }
    std::optional<double> opt_d(const std::string& key) const {
        const json& v = values_.at(key);
        return v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    }
    std::optional<int> opt_i(const std::string& key) const {
        const json& v = values_.at(key);
        return v.is_null() ? std::nullopt : std::optional<int>(v.get<int>());
    }
    const json& all() const { return values_; }
    std::string hash() const {
        char buf[24];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(values_.dump())));
        return buf;
    }

private:
    json values_, defaults_;
    std::set<std::string> explicit_;
};

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << j.dump(2) << "\n";
}

void write_sidecar(const fs::path& path, const std::string& command, const Settings& s, const json& inputs,
                   const json& outputs, const json& extra = json::object()) {
    json j = {{"tool", "msrepaint"},          {"version", kToolVersion}, {"command", command},
              {"seed", s.seed()},             {"config", s.all()},       {"config_hash", s.hash()},
              {"inputs", inputs},             {"outputs", outputs}};
    for (const auto& [k, v] : extra.items()) j[k] = v;
    write_json(path, j);
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::map<std::string, fs::path> parse_named(const std::vector<std::string>& specs, const char* flag) {
    std::map<std::string, fs::path> out;
    for (const auto& spec : specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
            throw UsageError(std::string(flag) + " expects name=path, got '" + spec + "'");
        const std::string name = spec.substr(0, eq);
        if (out.count(name)) throw UsageError(std::string(flag) + ": contrast '" + name + "' given twice");
        out[name] = spec.substr(eq + 1);
    }
    return out;
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " '" + p.string() + "' does not exist");
}

MaskVolume load_mask(const fs::path& p, const char* what) {
    require_file(p, what);
    return reorient(nifti::read_mask(p), Orientation::Axial);
}

Volume load_volume(const fs::path& p, const char* what) {
    require_file(p, what);
    return reorient(nifti::read(p), Orientation::Axial);
}

// Loads the named inputs in `order`; contrasts without a file become absent channels.
MultiContrastVolume load_contrasts(const std::map<std::string, fs::path>& inputs,
                                   const std::vector<std::string>& order) {
    if (inputs.empty()) throw UsageError("at least one --input name=path is required");
    for (const auto& [name, path] : inputs)
        if (std::find(order.begin(), order.end(), name) == order.end())
            throw UsageError("input contrast '" + name + "' is not one of the model contrasts");
    std::map<std::string, Volume> loaded;
    std::optional<Volume> first;
    for (const auto& [name, path] : inputs) {
        Volume v = load_volume(path, "input");
        if (first && !(v.shape() == first->shape()))
            throw UsageError("input '" + name + "' has shape " + to_string(v.shape()) + ", expected " +
                             to_string(first->shape()));
        if (!first) first = v;
        loaded.emplace(name, std::move(v));
    }
    MultiContrastVolume mc;
    for (const auto& name : order) {
        auto it = loaded.find(name);
        if (it != loaded.end())
            mc.add(name, it->second);
        else
            mc.add_missing(name, first->shape(), first->spacing());
    }
    return mc;
}

void require_mask_geometry(const MaskVolume& m, const MultiContrastVolume& v, const std::string& what) {
    if (!(m.shape() == v.shape()))
        throw UsageError(what + " has shape " + to_string(m.shape()) + ", inputs have " + to_string(v.shape()));
}

// Denoiser selected by --checkpoint or --analytic, with its schedule.
struct Model {
    std::unique_ptr<NoiseSchedule> schedule;
    std::unique_ptr<ConvDenoiser> net;
    std::unique_ptr<AnalyticGaussianDenoiser> analytic;
    std::vector<std::string> contrasts;

    const Denoiser& denoiser() const {
        return net ? static_cast<const Denoiser&>(*net) : static_cast<const Denoiser&>(*analytic);
    }
};

struct EngineArgs {
    std::string checkpoint;
    bool analytic = false;
    std::string contrasts = "t1,t2,flair";
};

Model load_model(const EngineArgs& a, const Settings& s) {
    if (a.checkpoint.empty() == !a.analytic)
        throw UsageError("exactly one of --checkpoint or --analytic is required");
    Model m;
    if (!a.checkpoint.empty()) {
        require_file(a.checkpoint, "checkpoint");
        m.net = std::make_unique<ConvDenoiser>(ConvDenoiser::load(a.checkpoint));
        const auto& cfg = m.net->config();
        if (s.is_explicit("schedule.T") && s.i("schedule.T") != cfg.schedule_steps)
            throw UsageError("schedule.T = " + std::to_string(s.i("schedule.T")) + " disagrees with the checkpoint (" +
                             std::to_string(cfg.schedule_steps) + ")");
        m.schedule = std::make_unique<NoiseSchedule>(cfg.schedule_steps, cfg.schedule_offset);
        m.contrasts = cfg.contrast_names.empty() ? split(a.contrasts, ',') : cfg.contrast_names;
        if (int(m.contrasts.size()) != cfg.image_channels)
            throw UsageError("the checkpoint expects " + std::to_string(cfg.image_channels) + " contrasts");
    } else {
        m.schedule = std::make_unique<NoiseSchedule>(s.i("schedule.T"), s.d("schedule.s"));
        m.analytic = std::make_unique<AnalyticGaussianDenoiser>(*m.schedule, 0.0, 1.0);
        m.contrasts = split(a.contrasts, ',');
        if (m.contrasts.empty()) throw UsageError("--contrasts must name at least one contrast");
    }
    return m;
}

SamplerConfig sampler_config(const Settings& s, const NoiseSchedule& schedule) {
    SamplerConfig c;
    try {
        c.subsequence = build_subsequence(schedule.steps(), s.i("sampler.ddim_stride"));
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
    c.truncation_tau = s.opt_i("sampler.truncation_tau");
    c.repaint_repeats = s.i("sampler.repaint_repeats");
    c.seed = s.seed();
    c.threads = s.i("threads");
    c.clip_x0 = s.opt_d("sampler.clip_x0");
    const std::string views = s.s("sampler.views");
    if (views != "all" && views != "axial") throw UsageError("--views must be 'axial' or 'all'");
    if (views == "all" && c.truncation_tau &&
        std::find(c.subsequence.begin(), c.subsequence.end(), *c.truncation_tau) == c.subsequence.end())
        throw UsageError("--tau " + std::to_string(*c.truncation_tau) + " is not on the DDIM subsequence");
    c.validate(schedule.steps());
    return c;
}

MultiviewOptions multiview_options(const Settings& s) {
    MultiviewOptions o;
    o.all_views = s.s("sampler.views") == "all";
    return o;
}

// Options shared by every subcommand.
struct Common {
    std::string config;
    std::uint64_t seed = 0;
    int threads = 1;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* threads_opt = nullptr;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "JSON file of flat dotted settings (flags take precedence)");
        seed_opt = app->add_option("--seed", seed, "Random seed");
        threads_opt = app->add_option("--threads", threads, "Worker thread cap")->check(CLI::PositiveNumber);
    }
};

// Flag bound to a dotted settings key.
struct Binding {
    CLI::Option* opt;
    std::string key;
    std::function<json()> value;
};

template <class T>
void bind_setting(std::vector<Binding>& b, CLI::App* app, const std::string& flag, T& var, const std::string& key,
          const std::string& help) {
    CLI::Option* o = app->add_option(flag, var, help);
    b.push_back({o, key, [&var] { return json(var); }});
}

Settings resolve(const Common& c, const std::vector<Binding>& bindings) {
    Settings s;
    if (!c.config.empty()) s.load_file(c.config);
    if (c.seed_opt && c.seed_opt->count()) s.set("seed", c.seed);
    if (c.threads_opt && c.threads_opt->count()) s.set("threads", c.threads);
    for (const auto& b : bindings)
        if (b.opt->count()) s.set(b.key, b.value());
    return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- engine

enum class Mode { Fill, Synth, Evolve };

struct EngineCommand {
    Common common;
    EngineArgs engine;
    std::vector<Binding> bindings;
    std::string tau, views;
    int stride = 10, repeats = 2;
    std::vector<std::string> inputs, references;
    std::string lesion_mask, target_mask, repaint_mask, nawm_mask, out_dir;
};

void attach_engine(CLI::App* app, EngineCommand& e, Mode mode) {
    e.common.attach(app);
    app->add_option("--checkpoint", e.engine.checkpoint, "Trained denoiser checkpoint");
    app->add_flag("--analytic", e.engine.analytic, "Use the analytic N(0, 1) oracle denoiser");
    app->add_option("--contrasts", e.engine.contrasts, "Comma-separated contrast order when not stored in the checkpoint");
    app->add_option("--input", e.inputs, "Input contrast as name=path (repeatable)")->required();
    bind_setting(e.bindings, app, "--views", e.views, "sampler.views", "axial | all");
    bind_setting(e.bindings, app, "--tau", e.tau, "sampler.truncation_tau", "Truncation timestep for coronal/sagittal passes, or none");
    bind_setting(e.bindings, app, "--stride", e.stride, "sampler.ddim_stride", "DDIM timestep stride");
    bind_setting(e.bindings, app, "--repeats", e.repeats, "sampler.repaint_repeats", "Repaint passes per timestep");
    app->add_option("--out-dir", e.out_dir, "Output directory")->required();
    if (mode == Mode::Fill) {
        app->add_option("--lesion-mask", e.lesion_mask, "Lesion mask to fill")->required();
        app->add_option("--reference", e.references, "Lesion-free reference as name=path, enables metrics");
        app->add_option("--nawm-mask", e.nawm_mask, "NAWM mask for metric normalization");
    } else {
        auto* t = app->add_option("--target-mask", e.target_mask, "Lesion configuration wanted in the output");
        t->required();
        auto* r = app->add_option("--repaint-mask", e.repaint_mask, "Region the sampler may modify");
        if (mode == Mode::Evolve) r->required();
    }
}

int run_engine(Mode mode, EngineCommand& e, const char* name, std::ostream& out, std::ostream& err) {
    // --tau is parsed as a string so that "none" is accepted.
    for (auto& b : e.bindings)
        if (b.key == "sampler.truncation_tau")
            b.value = [&e]() -> json {
                if (e.tau == "none") return nullptr;
                try {
                    std::size_t used = 0;
                    const int v = std::stoi(e.tau, &used);
                    if (used == e.tau.size()) return v;
                } catch (const std::logic_error&) {
                }
                throw UsageError("--tau expects an integer or 'none', got '" + e.tau + "'");
            };
    const Settings s = resolve(e.common, e.bindings);
    const auto t0 = std::chrono::steady_clock::now();
    const Model model = load_model(e.engine, s);
    const SamplerConfig cfg = sampler_config(s, *model.schedule);
    const auto input_files = parse_named(e.inputs, "--input");
    const MultiContrastVolume input = load_contrasts(input_files, model.contrasts);

    RepaintMasks masks;
    json inputs_json = json::object();
    for (const auto& [n, p] : input_files) inputs_json["contrasts"][n] = p.string();
    if (mode == Mode::Fill) {
        const MaskVolume lesions = load_mask(e.lesion_mask, "lesion mask");
        require_mask_geometry(lesions, input, "lesion mask");
        masks = RepaintMasks::filling(lesions);
        inputs_json["lesion_mask"] = e.lesion_mask;
    } else {
        const MaskVolume target = load_mask(e.target_mask, "target mask");
        require_mask_geometry(target, input, "target mask");
        inputs_json["target_mask"] = e.target_mask;
        if (mode == Mode::Synth && e.repaint_mask.empty()) {
            masks = RepaintMasks::synthesis(target);
        } else {
            const MaskVolume repaint = load_mask(e.repaint_mask, "repaint mask");
            require_mask_geometry(repaint, input, "repaint mask");
            inputs_json["repaint_mask"] = e.repaint_mask;
            masks = RepaintMasks::evolution(target, repaint);
        }
    }
    if (!model.net) inputs_json["denoiser"] = "analytic";
    else inputs_json["checkpoint"] = e.engine.checkpoint;

    MultiviewResult result;
    try {
        result = run_multiview(input, masks, cfg, model.denoiser(), *model.schedule, multiview_options(s));
    } catch (const Error& ex) {
        throw Error(std::string("sampling: ") + ex.what());
    }

    const fs::path dir = e.out_dir;
    fs::create_directories(dir);
    json outputs = json::array();
    for (const auto& ch : result.fused.channels()) {
        if (!ch.present) continue;
        nifti::write(dir / (ch.name + ".nii"), ch.volume);
        outputs.push_back(ch.name + ".nii");
    }

    json extra = {{"denoiser", model.denoiser().describe()},
                  {"repaint_voxels", count_foreground(masks.repaint)},
                  {"target_voxels", count_foreground(masks.target)}};
    if (mode == Mode::Fill && !e.references.empty()) {
        const auto refs = parse_named(e.references, "--reference");
        MaskVolume nawm;
        if (!e.nawm_mask.empty()) {
            nawm = load_mask(e.nawm_mask, "NAWM mask");
            require_mask_geometry(nawm, input, "NAWM mask");
        } else {
            // Without a tissue map the shell is not restricted to white matter.
            nawm = dilate(masks.repaint, 2);
            for (std::size_t i = 0; i < nawm.size(); ++i) nawm[i] = nawm[i] && !masks.repaint[i];
        }
        json metrics = json::object();
        for (const auto& [n, p] : refs) {
            const int c = result.fused.find(n);
            if (c < 0 || !result.fused.channel(std::size_t(c)).present)
                throw UsageError("--reference '" + n + "' has no matching input contrast");
            const Volume ref = load_volume(p, "reference");
            if (!(ref.shape() == input.shape())) throw UsageError("reference '" + n + "' has the wrong shape");
            const Volume& filled = result.fused.channel(std::size_t(c)).volume;
            const Volume baseline = constant_nawm_fill(input.channel(std::size_t(c)).volume, masks.repaint, nawm);
            metrics[n] = {{"rmse", rmse_in_mask(filled, ref, masks.repaint, nawm)},
                          {"baseline_rmse", rmse_in_mask(baseline, ref, masks.repaint, nawm)}};
        }
        write_json(dir / "metrics.json", metrics);
        outputs.push_back("metrics.json");
        out << metrics.dump(2) << "\n";
        extra["metrics"] = metrics;
    }
    write_sidecar(dir / "provenance.json", name, s, inputs_json, outputs, extra);
    err << name << ": wrote " << outputs.size() << " file(s) to " << dir.string() << " in " << seconds_since(t0)
        << " s\n";
    return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainCommand {
    Common common;
    std::vector<Binding> bindings;
    std::vector<std::string> data_dirs;
    int phantoms = 0, phantom_size = 32, phantom_lesions = 6;
    std::string contrasts = "t1,t2,flair";
    std::string out;
    double lesion_weight = 10, lr = 3e-4, dropout = 0.25, ema = 0.999;
    int batch = 32, epochs = 300, width = 24, T = 1000;
    bool quiet = false;
};

void attach_train(CLI::App* app, TrainCommand& t) {
    t.common.attach(app);
    app->add_option("--data", t.data_dirs, "Case directory holding <contrast>.nii and lesion_mask.nii (repeatable)");
    app->add_option("--phantoms", t.phantoms, "Also train on this many generated phantoms")->check(CLI::NonNegativeNumber);
    app->add_option("--phantom-size", t.phantom_size, "Edge length of generated phantoms")->check(CLI::Range(8, 512));
    app->add_option("--phantom-lesions", t.phantom_lesions, "Lesions per generated phantom")->check(CLI::NonNegativeNumber);
    app->add_option("--contrasts", t.contrasts, "Comma-separated contrast order");
    app->add_option("--out", t.out, "Checkpoint path to write")->required();
    app->add_flag("--quiet", t.quiet, "No per-epoch log");
    bind_setting(t.bindings, app, "--lesion-weight", t.lesion_weight, "train.lesion_weight", "Loss weight inside lesions");
    bind_setting(t.bindings, app, "--lr", t.lr, "train.learning_rate", "Adam learning rate");
    bind_setting(t.bindings, app, "--dropout", t.dropout, "train.dropout_prob", "Per-contrast dropout probability");
    bind_setting(t.bindings, app, "--ema", t.ema, "train.ema_decay", "Weight moving-average decay (0 keeps final weights)");
    bind_setting(t.bindings, app, "--batch-size", t.batch, "train.batch_size", "Slices per batch");
    bind_setting(t.bindings, app, "--epochs", t.epochs, "train.epochs", "Training epochs");
    bind_setting(t.bindings, app, "--base-width", t.width, "model.base_width", "Network feature width");
    bind_setting(t.bindings, app, "--steps", t.T, "schedule.T", "Diffusion steps T");
}

int run_train(TrainCommand& t, std::ostream& out, std::ostream& err) {
    const Settings s = resolve(t.common, t.bindings);
    const auto names = split(t.contrasts, ',');
    if (names.empty()) throw UsageError("--contrasts must name at least one contrast");
    if (t.data_dirs.empty() && t.phantoms == 0) throw UsageError("no training data: give --data and/or --phantoms");

    TrainConfig tc;
    tc.lesion_weight = s.d("train.lesion_weight");
    tc.learning_rate = s.d("train.learning_rate");
    tc.batch_size = s.i("train.batch_size");
    tc.epochs = s.i("train.epochs");
    tc.dropout_prob = s.d("train.dropout_prob");
    tc.ema_decay = s.d("train.ema_decay");
    tc.seed = s.seed();
    try {
        tc.validate();
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<TrainingSlice> slices;
    json inputs = json::object();
    for (const auto& dir : t.data_dirs) {
        std::map<std::string, fs::path> files;
        for (const auto& n : names)
            if (fs::exists(fs::path(dir) / (n + ".nii"))) files[n] = fs::path(dir) / (n + ".nii");
        if (files.empty()) throw UsageError("case directory '" + dir + "' holds none of the contrasts");
        const auto vol = load_contrasts(files, names);
        const MaskVolume mask = load_mask(fs::path(dir) / "lesion_mask.nii", "lesion mask");
        require_mask_geometry(mask, vol, "lesion mask");
        auto part = extract_training_slices(vol, mask);
        slices.insert(slices.end(), part.begin(), part.end());
        inputs["data"].push_back(dir);
    }
    if (t.phantoms > 0) {
        const auto profiles = default_contrast_profiles();
        for (int i = 0; i < t.phantoms; ++i) {
            PhantomConfig pc;
            pc.shape = {std::size_t(t.phantom_size), std::size_t(t.phantom_size), std::size_t(t.phantom_size)};
            pc.lesion_count = t.phantom_lesions;
            pc.seed = derive_seed(s.seed(), 0x7000 + std::uint64_t(i));
            pc.contrasts.clear();
            for (const auto& n : names) {
                auto it = std::find_if(profiles.begin(), profiles.end(), [&](const auto& p) { return p.name == n; });
                if (it == profiles.end()) throw UsageError("no phantom profile for contrast '" + n + "'");
                pc.contrasts.push_back(*it);
            }
            const Phantom ph = make_phantom(pc);
            auto part = extract_training_slices(ph.lesioned, ph.lesions);
            slices.insert(slices.end(), part.begin(), part.end());
        }
        inputs["phantoms"] = {{"count", t.phantoms}, {"size", t.phantom_size}, {"lesions", t.phantom_lesions}};
    }
    if (slices.empty()) throw UsageError("training data produced no usable slices");

    ConvNetConfig nc;
    nc.image_channels = int(names.size());
    nc.base_width = s.i("model.base_width");
    nc.schedule_steps = s.i("schedule.T");
    nc.schedule_offset = s.d("schedule.s");
    nc.contrast_names = names;
    ConvDenoiser net(nc, derive_seed(s.seed(), 0x1417));
    const NoiseSchedule schedule(nc.schedule_steps, nc.schedule_offset);
    if (!t.quiet)
        err << "train: " << slices.size() << " slices, " << net.parameter_count() << " parameters, " << tc.epochs
            << " epochs\n";
    json losses = json::array();
    const auto reports = train(net, slices, schedule, tc, [&](const EpochReport& r) {
        if (!t.quiet)
            err << "epoch " << r.epoch + 1 << "/" << tc.epochs << " loss " << r.mean_loss << " ("
                << seconds_since(t0) << " s)\n";
    });
    for (const auto& r : reports) losses.push_back(r.mean_loss);
    net.save(t.out);
    write_sidecar(fs::path(t.out).string() + ".json", "train", s, inputs, json::array({fs::path(t.out).filename().string()}),
                  {{"slices", slices.size()}, {"parameters", net.parameter_count()}, {"epoch_loss", losses}});
    out << "{\"checkpoint\": " << json(t.out).dump() << ", \"final_loss\": " << (losses.empty() ? json(nullptr) : losses.back()).dump()
        << "}\n";
    return kExitOk;
}

// ---------------------------------------------------------------- dictionary

struct BuildDictCommand {
    Common common;
    std::vector<std::string> masks;
    std::string space_id, out;
    int connectivity = 26;
};

int run_build_dict(BuildDictCommand& b, std::ostream& out, std::ostream&) {
    const Settings s = resolve(b.common, {});
    Connectivity conn;
    try {
        conn = connectivity_from_int(b.connectivity);
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
    std::vector<fs::path> files;
    for (const auto& m : b.masks) {
        require_file(m, "mask");
        files.emplace_back(m);
    }
    const LesionDictionary dict = build_dictionary(files, b.space_id, conn);
    save_dictionary(dict, b.out);
    write_sidecar(fs::path(b.out) / "provenance.json", "build-dict", s, json(b.masks), json::array({"space.json"}),
                  {{"sessions", dict.sessions.size()}, {"components", dict.component_count()}});
    out << json({{"space_id", dict.space_id},
                 {"sessions", dict.sessions.size()},
                 {"components", dict.component_count()}})
               .dump()
        << "\n";
    return kExitOk;
}

struct DictSamplingArgs {
    std::vector<Binding> bindings;
    int sessions = 8;
    std::string fraction = "1/8", mode = "pooled";

    void attach(CLI::App* app) {
        bind_setting(bindings, app, "--sessions", sessions, "dict.sessions", "Sessions drawn per candidate mask");
        bind_setting(bindings, app, "--fraction", fraction, "dict.fraction", "Fraction of pooled components, e.g. 1/8");
        bind_setting(bindings, app, "--mode", mode, "dict.mode", "pooled | per-session");
    }
};

SampleOptions sample_options(const Settings& s) {
    SampleOptions o;
    o.n_sessions = s.i("dict.sessions");
    try {
        o.fraction = Fraction::parse(s.s("dict.fraction"));
        o.mode = pooling_mode_from_string(s.s("dict.mode"));
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
    return o;
}

struct SampleMaskCommand {
    Common common;
    DictSamplingArgs sampling;
    std::string dict, out;
};

int run_sample_mask(SampleMaskCommand& c, std::ostream& out, std::ostream&) {
    const Settings s = resolve(c.common, c.sampling.bindings);
    const SampleOptions opts = sample_options(s);
    const LesionDictionary dict = load_dictionary(c.dict);
    if (opts.n_sessions < 1 || std::size_t(opts.n_sessions) > dict.sessions.size())
        throw UsageError("--sessions must be in [1, " + std::to_string(dict.sessions.size()) + "]");
    CounterRng rng(s.seed(), {0x4D41534Bull});
    const CandidateMask cand = sample_candidate_mask(dict, opts, rng);
    nifti::write(c.out, cand.mask);
    const json summary = {{"components", cand.components},
                          {"pool", cand.pool_size},
                          {"sessions", cand.sessions},
                          {"lesion_voxels", count_foreground(cand.mask)}};
    write_sidecar(c.out + ".json", "sample-mask", s, {{"dict", c.dict}}, json::array({fs::path(c.out).filename().string()}),
                  summary);
    out << summary.dump() << "\n";
    return kExitOk;
}

struct GenDatasetCommand {
    EngineCommand engine;
    DictSamplingArgs sampling;
    std::string dict;
    std::size_t n_images = 0;
    int workers = 1;
    bool no_resume = false;
};

int run_gen_dataset(GenDatasetCommand& g, std::ostream& out, std::ostream& err) {
    auto bindings = g.engine.bindings;
    bindings.insert(bindings.end(), g.sampling.bindings.begin(), g.sampling.bindings.end());
    for (auto& b : bindings)
        if (b.key == "sampler.truncation_tau")
            b.value = [&g]() -> json {
                if (g.engine.tau == "none") return nullptr;
                try {
                    std::size_t used = 0;
                    const int v = std::stoi(g.engine.tau, &used);
                    if (used == g.engine.tau.size()) return v;
                } catch (const std::logic_error&) {
                }
                throw UsageError("--tau expects an integer or 'none', got '" + g.engine.tau + "'");
            };
    const Settings s = resolve(g.engine.common, bindings);
    const Model model = load_model(g.engine.engine, s);
    DatasetConfig dc;
    dc.n_images = g.n_images;
    dc.seed = s.seed();
    dc.sampling = sample_options(s);
    dc.sampler = sampler_config(s, *model.schedule);
    dc.multiview = multiview_options(s);
    dc.workers = g.workers;
    dc.resume = !g.no_resume;
    const auto input_files = parse_named(g.engine.inputs, "--input");
    const MultiContrastVolume base = load_contrasts(input_files, model.contrasts);
    const LesionDictionary dict = load_dictionary(g.dict);
    if (!(dict.shape == base.shape()))
        throw UsageError("base volume " + to_string(base.shape()) + " is not in the dictionary space " +
                         to_string(dict.shape));
    if (dc.n_images > 0 && (dc.sampling.n_sessions < 1 || std::size_t(dc.sampling.n_sessions) > dict.sessions.size()))
        throw UsageError("--sessions must be in [1, " + std::to_string(dict.sessions.size()) + "]");

    const auto t0 = std::chrono::steady_clock::now();
    const auto rows = generate_dataset(dict, base, dc, model.denoiser(), *model.schedule, g.engine.out_dir,
                                       [&](const ManifestRow& r) {
                                           err << "image " << r.index << ": " << (r.ok ? "ok" : "failed: " + r.error)
                                               << "\n";
                                       });
    std::size_t failed = 0;
    for (const auto& r : rows) failed += r.ok ? 0 : 1;
    json inputs = json::object();
    for (const auto& [n, p] : input_files) inputs["contrasts"][n] = p.string();
    inputs["dict"] = g.dict;
    if (!rows.empty() || fs::exists(g.engine.out_dir)) {
        fs::create_directories(g.engine.out_dir);
        write_sidecar(fs::path(g.engine.out_dir) / "provenance.json", "gen-dataset", s, inputs,
                      json::array({kManifestName}),
                      {{"images", rows.size()}, {"failed", failed}, {"denoiser", model.denoiser().describe()}});
    }
    out << json({{"images", rows.size()}, {"failed", failed}}).dump() << "\n";
    err << "gen-dataset: " << rows.size() << " image(s) in " << seconds_since(t0) << " s\n";
    return failed ? kExitFailure : kExitOk;
}

// ---------------------------------------------------------------- phantom / eval / render

struct PhantomCommand {
    Common common;
    std::string shape = "32", layout = "concentric", out_dir;
    int lesions = 6;
    double gamma = 1.0, radius_min = 1.5, radius_max = 3.0;
};

Shape3 parse_shape(const std::string& text) {
    const auto parts = split(text, ',');
    std::vector<std::size_t> n;
    for (const auto& p : parts) {
        try {
            std::size_t used = 0;
            const long v = std::stol(p, &used);
            if (used != p.size() || v < 1) throw std::invalid_argument(p);
            n.push_back(std::size_t(v));
        } catch (const std::logic_error&) {
            throw UsageError("--shape expects N or NX,NY,NZ, got '" + text + "'");
        }
    }
    if (n.size() == 1) return {n[0], n[0], n[0]};
    if (n.size() == 3) return {n[0], n[1], n[2]};
    throw UsageError("--shape expects N or NX,NY,NZ, got '" + text + "'");
}

int run_phantom(PhantomCommand& p, std::ostream& out, std::ostream&) {
    const Settings s = resolve(p.common, {});
    PhantomConfig pc;
    pc.shape = parse_shape(p.shape);
    try {
        pc.layout = tissue_layout_from_string(p.layout);
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
    pc.lesion_count = p.lesions;
    pc.gamma = p.gamma;
    pc.radius_min = p.radius_min;
    pc.radius_max = p.radius_max;
    pc.seed = s.seed();
    try {
        pc.validate();
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
    const Phantom ph = make_phantom(pc);
    const fs::path dir = p.out_dir;
    fs::create_directories(dir);
    json outputs = json::array();
    for (std::size_t c = 0; c < ph.lesioned.channel_count(); ++c) {
        const std::string n = ph.lesioned.channel(c).name;
        nifti::write(dir / (n + ".nii"), ph.lesioned.channel(c).volume);
        nifti::write(dir / ("reference_" + n + ".nii"), ph.reference.channel(c).volume);
        outputs.push_back(n + ".nii");
        outputs.push_back("reference_" + n + ".nii");
    }
    nifti::write(dir / "lesion_mask.nii", ph.lesions);
    nifti::write(dir / "nawm_mask.nii", ph.nawm);
    nifti::write(dir / "tissue_labels.nii", ph.tissue);
    for (const char* f : {"lesion_mask.nii", "nawm_mask.nii", "tissue_labels.nii"}) outputs.push_back(f);
    const json summary = {{"shape", {pc.shape.nx, pc.shape.ny, pc.shape.nz}},
                          {"layout", p.layout},
                          {"lesions", pc.lesion_count},
                          {"gamma", pc.gamma},
                          {"radius", {pc.radius_min, pc.radius_max}},
                          {"lesion_voxels", count_foreground(ph.lesions)},
                          {"nawm_voxels", count_foreground(ph.nawm)}};
    write_sidecar(dir / "provenance.json", "phantom", s, json::object(), outputs, {{"phantom", summary}});
    out << summary.dump() << "\n";
    return kExitOk;
}

struct EvalCommand {
    std::string filled, reference, lesion_mask, nawm_mask, lesioned, out;
};

int run_eval(EvalCommand& e, std::ostream& out, std::ostream&) {
    const Volume filled = load_volume(e.filled, "filled volume");
    const Volume ref = load_volume(e.reference, "reference");
    const MaskVolume mask = load_mask(e.lesion_mask, "lesion mask");
    const MaskVolume nawm = load_mask(e.nawm_mask, "NAWM mask");
    for (const auto* sh : {&ref.shape(), &mask.shape(), &nawm.shape()})
        if (!(*sh == filled.shape())) throw UsageError("eval-fill: inputs differ in shape");
    double nawm_sum = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i)
        if (nawm[i]) nawm_sum += ref[i];
    json report = {{"rmse", rmse_in_mask(filled, ref, mask, nawm)},
                   {"lesion_voxels", count_foreground(mask)},
                   {"nawm_voxels", count_foreground(nawm)},
                   {"nawm_mean", nawm_sum / double(count_foreground(nawm))}};
    if (!e.lesioned.empty()) {
        const Volume les = load_volume(e.lesioned, "lesioned volume");
        if (!(les.shape() == filled.shape())) throw UsageError("eval-fill: lesioned volume differs in shape");
        report["baseline_rmse"] = rmse_in_mask(constant_nawm_fill(les, mask, nawm), ref, mask, nawm);
    }
    if (!e.out.empty()) write_json(e.out, report);
    out << report.dump(2) << "\n";
    return kExitOk;
}

struct RenderCommand {
    std::string volume, view = "axial", out;
    std::size_t slice = 0;
    double window = 0, level = 0;
    CLI::Option* window_opt = nullptr;
    CLI::Option* level_opt = nullptr;
};

int run_render(RenderCommand& r, std::ostream& out, std::ostream&) {
    Orientation view;
    try {
        view = orientation_from_string(r.view);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    const Volume v = load_volume(r.volume, "volume");
    Image8 img;
    try {
        img = render_slice(v, view, r.slice, r.window_opt->count() ? std::optional<double>(r.window) : std::nullopt,
                           r.level_opt->count() ? std::optional<double>(r.level) : std::nullopt);
    } catch (const ParameterError& e) {
        throw UsageError(e.what());
    }
    write_pgm(r.out, img);
    out << json({{"width", img.width}, {"height", img.height}, {"out", r.out}}).dump() << "\n";
    return kExitOk;
}

int classify(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
        dynamic_cast<const ParameterError*>(&e))
        return kExitUsage;
    return kExitFailure;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"msrepaint: mask-conditioned diffusion lesion filling and synthesis", "msrepaint"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    EngineCommand fill, synth, evolve;
    attach_engine(app.add_subcommand("fill", "Lesion filling: M^target = 0, M^repaint = lesion mask"), fill, Mode::Fill);
    attach_engine(app.add_subcommand("synth", "Lesion synthesis: M^target = M^repaint"), synth, Mode::Synth);
    attach_engine(app.add_subcommand("evolve", "Lesion evolution with target inside repaint"), evolve, Mode::Evolve);

    TrainCommand train_cmd;
    attach_train(app.add_subcommand("train", "Train the denoiser"), train_cmd);

    BuildDictCommand build;
    {
        auto* c = app.add_subcommand("build-dict", "Build a lesion dictionary from aligned masks");
        build.common.attach(c);
        c->add_option("--masks", build.masks, "Lesion mask files")->required();
        c->add_option("--space-id", build.space_id, "Identifier of the target space")->required();
        c->add_option("--connectivity", build.connectivity, "6, 18 or 26");
        c->add_option("--out", build.out, "Dictionary directory")->required();
    }
    SampleMaskCommand sample;
    {
        auto* c = app.add_subcommand("sample-mask", "Sample a composite candidate mask");
        sample.common.attach(c);
        sample.sampling.attach(c);
        c->add_option("--dict", sample.dict, "Dictionary directory")->required();
        c->add_option("--out", sample.out, "Output mask (NIfTI)")->required();
    }
    GenDatasetCommand gen;
    {
        auto* c = app.add_subcommand("gen-dataset", "Synthesize a dataset from a dictionary and a lesion-free base");
        EngineCommand& e = gen.engine;
        e.common.attach(c);
        c->add_option("--checkpoint", e.engine.checkpoint, "Trained denoiser checkpoint");
        c->add_flag("--analytic", e.engine.analytic, "Use the analytic N(0, 1) oracle denoiser");
        c->add_option("--contrasts", e.engine.contrasts, "Comma-separated contrast order");
        c->add_option("--input", e.inputs, "Base contrast as name=path (repeatable)")->required();
        bind_setting(e.bindings, c, "--views", e.views, "sampler.views", "axial | all");
        bind_setting(e.bindings, c, "--tau", e.tau, "sampler.truncation_tau", "Truncation timestep or none");
        bind_setting(e.bindings, c, "--stride", e.stride, "sampler.ddim_stride", "DDIM timestep stride");
        bind_setting(e.bindings, c, "--repeats", e.repeats, "sampler.repaint_repeats", "Repaint passes per timestep");
        c->add_option("--out-dir", e.out_dir, "Output directory")->required();
        gen.sampling.attach(c);
        c->add_option("--dict", gen.dict, "Dictionary directory")->required();
        c->add_option("--n-images", gen.n_images, "Images to generate")->required();
        c->add_option("--workers", gen.workers, "Images generated concurrently")->check(CLI::PositiveNumber);
        c->add_flag("--no-resume", gen.no_resume, "Regenerate rows already in the manifest");
    }
    PhantomCommand phantom;
    {
        auto* c = app.add_subcommand("phantom", "Generate a multicontrast phantom with lesions");
        phantom.common.attach(c);
        c->add_option("--shape", phantom.shape, "N or NX,NY,NZ");
        c->add_option("--lesions", phantom.lesions, "Number of lesions")->check(CLI::NonNegativeNumber);
        c->add_option("--gamma", phantom.gamma, "Lesion contrast exponent")->check(CLI::PositiveNumber);
        c->add_option("--radius-min", phantom.radius_min, "Smallest lesion radius (voxels)");
        c->add_option("--radius-max", phantom.radius_max, "Largest lesion radius (voxels)");
        c->add_option("--layout", phantom.layout, "concentric | blobs");
        c->add_option("--out-dir", phantom.out_dir, "Output directory")->required();
    }
    EvalCommand eval;
    {
        auto* c = app.add_subcommand("eval-fill", "NAWM-normalized lesion RMSE of a filled volume");
        c->add_option("--filled", eval.filled, "Filled volume")->required();
        c->add_option("--reference", eval.reference, "Lesion-free reference")->required();
        c->add_option("--lesion-mask", eval.lesion_mask, "Lesion mask")->required();
        c->add_option("--nawm-mask", eval.nawm_mask, "NAWM mask")->required();
        c->add_option("--lesioned", eval.lesioned, "Lesioned input, adds the constant-fill baseline");
        c->add_option("--out", eval.out, "Write the JSON report here as well");
    }
    RenderCommand render;
    {
        auto* c = app.add_subcommand("render", "Render one slice as a binary PGM");
        c->add_option("--volume", render.volume, "NIfTI volume")->required();
        c->add_option("--view", render.view, "axial | coronal | sagittal");
        c->add_option("--slice", render.slice, "Slice index in the view")->required();
        render.window_opt = c->add_option("--window", render.window, "Window width (default: volume range)");
        render.level_opt = c->add_option("--level", render.level, "Window centre (default: mid-range)");
        c->add_option("--out", render.out, "Output PGM")->required();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code == 0) return kExitOk;
        for (const CLI::App* sub : app.get_subcommands()) {
            err << sub->help();
            return kExitUsage;
        }
        err << app.help();
        return kExitUsage;
    }

    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    try {
        if (name == "fill") return run_engine(Mode::Fill, fill, "fill", out, err);
        if (name == "synth") return run_engine(Mode::Synth, synth, "synth", out, err);
        if (name == "evolve") return run_engine(Mode::Evolve, evolve, "evolve", out, err);
        if (name == "train") return run_train(train_cmd, out, err);
        if (name == "build-dict") return run_build_dict(build, out, err);
        if (name == "sample-mask") return run_sample_mask(sample, out, err);
        if (name == "gen-dataset") return run_gen_dataset(gen, out, err);
        if (name == "phantom") return run_phantom(phantom, out, err);
        if (name == "eval-fill") return run_eval(eval, out, err);
        if (name == "render") return run_render(render, out, err);
    } catch (const std::exception& e) {
        const int code = classify(e);
        err << "msrepaint " << name << ": " << (code == kExitUsage ? "usage error: " : "error: ") << e.what() << "\n";
        if (code == kExitUsage) err << "Run 'msrepaint " << name << " --help' for usage.\n";
        return code;
    }
    err << "msrepaint: unknown command\n";
    return kExitUsage;
}

}  // namespace msrepaint::cli
