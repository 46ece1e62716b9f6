#include "msrepaint/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "msrepaint/errors.hpp"
#include "msrepaint/rng.hpp"

namespace msrepaint {

TissueLayout tissue_layout_from_string(const std::string& s) {
    if (s == "concentric") return TissueLayout::Concentric;
    if (s == "blobs") return TissueLayout::Blobs;
    throw ParameterError("tissue layout must be 'concentric' or 'blobs', got '" + s + "'");
}

std::string to_string(TissueLayout l) { return l == TissueLayout::Concentric ? "concentric" : "blobs"; }

std::vector<ContrastProfile> default_contrast_profiles() {
    return {
        {"t1", {0.25, 0.02}, {0.55, 0.02}, {0.80, 0.02}, -12.0},
        {"t2", {0.90, 0.02}, {0.60, 0.02}, {0.45, 0.02}, 15.0},
        {"flair", {0.15, 0.02}, {0.60, 0.02}, {0.50, 0.02}, 16.0},
    };
}

void PhantomConfig::validate() const {
    if (contrasts.empty()) throw ParameterError("phantom: at least one contrast profile required");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ParameterError("phantom: gamma must be > 0");
    if (lesion_count < 0) throw ParameterError("phantom: lesion_count must be >= 0");
    if (!(radius_min > 0.0) || radius_max < radius_min)
        throw ParameterError("phantom: lesion radii must satisfy 0 < radius_min <= radius_max");
    if (shape.nx < 8 || shape.ny < 8 || shape.nz < 8)
        throw GenerationError("phantom: grid " + to_string(shape) + " is too small (minimum 8 per axis)");
    const double smallest = double(std::min({shape.nx, shape.ny, shape.nz}));
    if (lesion_count > 0 && 2.0 * radius_max + 1.0 > 0.5 * smallest)
        throw GenerationError("phantom: lesion radius " + std::to_string(radius_max) + " does not fit grid " +
                              to_string(shape));
}

namespace {

constexpr std::uint64_t kLayoutStream = 1, kLesionStream = 2, kNoiseStream = 3;

struct Ellipsoid {
    double c[3];
    double r[3];
    double rho(double x, double y, double z) const {
        const double dx = (x - c[0]) / r[0], dy = (y - c[1]) / r[1], dz = (z - c[2]) / r[2];
        return std::sqrt(dx * dx + dy * dy + dz * dz);
    }
};

Grid<std::uint8_t> make_tissue(const PhantomConfig& cfg, CounterRng& rng) {
    const Shape3& s = cfg.shape;
    const double n[3] = {double(s.nx), double(s.ny), double(s.nz)};
    auto jitter = [&](double a) { return (2.0 * rng.uniform() - 1.0) * a; };
    Ellipsoid head{}, ventricle{};
    for (int a = 0; a < 3; ++a) {
        head.c[a] = 0.5 * (n[a] - 1.0) + jitter(0.03 * n[a]);
        head.r[a] = 0.45 * n[a] * (1.0 + jitter(0.04));
    }
    const double vscale[3] = {0.40, 0.16, 0.30};
    for (int a = 0; a < 3; ++a) {
        ventricle.c[a] = head.c[a] + jitter(0.03 * n[a]);
        ventricle.r[a] = vscale[a] * head.r[a] * (1.0 + jitter(0.1));
    }
    // Cortical folding: the grey/white boundary level ripples with position.
    const double f1 = 2.0 + rng.uniform() * 2.0, f2 = 2.0 + rng.uniform() * 2.0, f3 = 2.0 + rng.uniform() * 2.0;
    const double p1 = rng.uniform() * 6.283, p2 = rng.uniform() * 6.283, p3 = rng.uniform() * 6.283;

    struct Blob {
        double c[3], r;
        std::uint8_t label;
    };
    std::vector<Blob> blobs;
    if (cfg.layout == TissueLayout::Blobs) {
        const double m = double(std::min({s.nx, s.ny, s.nz}));
        for (int i = 0; i < 10; ++i) {
            Blob b{};
            for (int a = 0; a < 3; ++a) b.c[a] = head.c[a] + jitter(0.8 * head.r[a]);
            b.r = m * (0.06 + 0.08 * rng.uniform());
            b.label = i < 7 ? GreyMatter : Csf;
            blobs.push_back(b);
        }
    }

    Grid<std::uint8_t> t(s, {1.0, 1.0, 1.0}, Orientation::Axial, Background);
    for (std::size_t z = 0; z < s.nz; ++z)
        for (std::size_t y = 0; y < s.ny; ++y)
            for (std::size_t x = 0; x < s.nx; ++x) {
                const double rho = head.rho(double(x), double(y), double(z));
                if (rho > 1.0) continue;
                std::uint8_t label = WhiteMatter;
                if (cfg.layout == TissueLayout::Concentric) {
                    const double u = (x - head.c[0]) / head.r[0], v = (y - head.c[1]) / head.r[1],
                                 w = (z - head.c[2]) / head.r[2];
                    const double ripple =
                        0.06 * std::sin(f1 * 3.14159 * u + p1) * std::sin(f2 * 3.14159 * v + p2) +
                        0.04 * std::sin(f3 * 3.14159 * w + p3);
                    if (rho > 0.9)
                        label = Csf;
                    else if (rho > 0.68 + ripple)
                        label = GreyMatter;
                    else if (ventricle.rho(double(x), double(y), double(z)) < 1.0)
                        label = Csf;
                } else {
                    if (rho > 0.92) label = Csf;
                    for (const auto& b : blobs) {
                        const double dx = x - b.c[0], dy = y - b.c[1], dz = z - b.c[2];
                        if (dx * dx + dy * dy + dz * dz < b.r * b.r) label = b.label;
                    }
                }
                t(x, y, z) = label;
            }
    return t;
}

struct Sphere {
    double c[3];
    double r;
};

std::vector<Sphere> place_lesions(const PhantomConfig& cfg, const Grid<std::uint8_t>& tissue, CounterRng& rng) {
    const Shape3& s = cfg.shape;
    std::vector<Sphere> out;
    constexpr int kAttempts = 20000;
    for (int k = 0; k < cfg.lesion_count; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < kAttempts && !placed; ++attempt) {
            Sphere sp{};
            sp.r = cfg.radius_min + (cfg.radius_max - cfg.radius_min) * rng.uniform();
            const double lo = sp.r + 1.0;
            sp.c[0] = lo + rng.uniform() * (double(s.nx) - 1.0 - 2.0 * lo);
            sp.c[1] = lo + rng.uniform() * (double(s.ny) - 1.0 - 2.0 * lo);
            sp.c[2] = lo + rng.uniform() * (double(s.nz) - 1.0 - 2.0 * lo);
            const auto cx = std::size_t(std::lround(sp.c[0])), cy = std::size_t(std::lround(sp.c[1])),
                       cz = std::size_t(std::lround(sp.c[2]));
            if (tissue(cx, cy, cz) != WhiteMatter) continue;
            bool clear = true;
            for (const auto& o : out) {
                const double dx = o.c[0] - sp.c[0], dy = o.c[1] - sp.c[1], dz = o.c[2] - sp.c[2];
                if (std::sqrt(dx * dx + dy * dy + dz * dz) < o.r + sp.r + 1.0) clear = false;
            }
            if (!clear) continue;
            // Mostly lesions touching another tissue (periventricular or
            // juxtacortical); a minority sits deep in white matter.
            bool straddles = false, inside_brain = true;
            const int reach = int(std::ceil(sp.r + 1.0));
            for (int dz = -reach; dz <= reach; ++dz)
                for (int dy = -reach; dy <= reach; ++dy)
                    for (int dx = -reach; dx <= reach; ++dx) {
                        if (dx * dx + dy * dy + dz * dz > (sp.r + 1.0) * (sp.r + 1.0)) continue;
                        const long x = long(cx) + dx, y = long(cy) + dy, z = long(cz) + dz;
                        if (x < 0 || y < 0 || z < 0 || x >= long(s.nx) || y >= long(s.ny) || z >= long(s.nz)) {
                            inside_brain = false;
                            continue;
                        }
                        const auto l = tissue(std::size_t(x), std::size_t(y), std::size_t(z));
                        if (l == Background) inside_brain = false;
                        if (l == Csf || l == GreyMatter) straddles = true;
                    }
            if (!inside_brain) continue;
            if (!straddles && rng.uniform() < 0.75) continue;
            out.push_back(sp);
            placed = true;
        }
        if (!placed)
            throw GenerationError("phantom: could not place lesion " + std::to_string(k + 1) + " of " +
                                  std::to_string(cfg.lesion_count) + " in grid " + to_string(s));
    }
    return out;
}

double tissue_value(const TissueStats& t, double n) { return t.mean + t.std * n; }

}  // namespace

Phantom make_phantom(const PhantomConfig& cfg) {
    cfg.validate();
    const Shape3& s = cfg.shape;
    Phantom p;
    CounterRng layout_rng(cfg.seed, {kLayoutStream});
    p.tissue = make_tissue(cfg, layout_rng);

    CounterRng lesion_rng(cfg.seed, {kLesionStream});
    const auto spheres = place_lesions(cfg, p.tissue, lesion_rng);
    p.lesions = MaskVolume(s, {1.0, 1.0, 1.0}, Orientation::Axial, 0);
    for (const auto& sp : spheres)
        for (std::size_t z = 0; z < s.nz; ++z)
            for (std::size_t y = 0; y < s.ny; ++y)
                for (std::size_t x = 0; x < s.nx; ++x) {
                    const double dx = x - sp.c[0], dy = y - sp.c[1], dz = z - sp.c[2];
                    if (dx * dx + dy * dy + dz * dz <= sp.r * sp.r && p.tissue(x, y, z) != Background)
                        p.lesions(x, y, z) = 1;
                }
    p.nawm = nawm_shell(p.lesions, p.tissue);

    for (std::size_t c = 0; c < cfg.contrasts.size(); ++c) {
        const auto& prof = cfg.contrasts[c];
        CounterRng noise_rng(cfg.seed, {kNoiseStream, c});
        std::vector<double> noise(s.size());
        noise_rng.fill_normal(noise);
        Volume ref(s, {1.0, 1.0, 1.0}, Orientation::Axial, 0.0f);
        Volume les = ref;
        for (std::size_t i = 0; i < ref.size(); ++i) {
            switch (p.tissue[i]) {
                case Csf: ref[i] = float(tissue_value(prof.csf, noise[i])); break;
                case GreyMatter: ref[i] = float(tissue_value(prof.gm, noise[i])); break;
                case WhiteMatter: ref[i] = float(tissue_value(prof.wm, noise[i])); break;
                default: ref[i] = 0.0f;
            }
            les[i] = p.lesions[i] ? float(tissue_value({prof.lesion_mean(), prof.wm.std}, noise[i])) : ref[i];
        }
        if (cfg.gamma != 1.0 && cfg.lesion_count > 0) les = gamma_transform(les, cfg.gamma, p.lesions);
        p.reference.add(prof.name, std::move(ref));
        p.lesioned.add(prof.name, std::move(les));
    }
    return p;
}

namespace {

float gamma_value(float x, double lo, double hi, double gamma) {
    const double u = std::clamp((double(x) - lo) / (hi - lo), 0.0, 1.0);
    return float(lo + (hi - lo) * std::pow(u, gamma));
}

}  // namespace

Volume gamma_transform(const Volume& v, double gamma) {
    MaskVolume all = v.like<std::uint8_t>(1);
    return gamma_transform(v, gamma, all);
}

Volume gamma_transform(const Volume& v, double gamma, const MaskVolume& mask) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ParameterError("gamma must be > 0");
    require_same_geometry(v, mask, "gamma_transform");
    if (v.size() == 0 || gamma == 1.0) return v;
    const auto [mn, mx] = std::minmax_element(v.data().begin(), v.data().end());
    const double lo = *mn, hi = *mx;
    if (!(hi > lo)) return v;
    Volume out = v;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) out[i] = gamma_value(v[i], lo, hi, gamma);
    return out;
}

MaskVolume dilate(const MaskVolume& m, int r) {
    if (r < 0) throw ParameterError("dilate: radius must be >= 0");
    MaskVolume out = m;
    const Shape3& s = m.shape();
    for (std::size_t z = 0; z < s.nz; ++z)
        for (std::size_t y = 0; y < s.ny; ++y)
            for (std::size_t x = 0; x < s.nx; ++x) {
                if (!m(x, y, z)) continue;
                for (int dz = -r; dz <= r; ++dz)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            if (dx * dx + dy * dy + dz * dz > r * r) continue;
                            const long xx = long(x) + dx, yy = long(y) + dy, zz = long(z) + dz;
                            if (xx < 0 || yy < 0 || zz < 0 || xx >= long(s.nx) || yy >= long(s.ny) ||
                                zz >= long(s.nz))
                                continue;
                            out(std::size_t(xx), std::size_t(yy), std::size_t(zz)) = 1;
                        }
            }
    return out;
}

MaskVolume nawm_shell(const MaskVolume& lesions, const Grid<std::uint8_t>& tissue) {
    require_same_geometry(lesions, tissue, "nawm_shell");
    MaskVolume shell = dilate(lesions, 2);
    for (std::size_t i = 0; i < shell.size(); ++i)
        shell[i] = (shell[i] && !lesions[i] && tissue[i] == WhiteMatter) ? 1 : 0;
    return shell;
}

double rmse_in_mask(const Volume& filled, const Volume& reference, const MaskVolume& mask, const MaskVolume& nawm) {
    require_same_geometry(filled, reference, "rmse_in_mask");
    require_same_geometry(filled, mask, "rmse_in_mask mask");
    require_same_geometry(filled, nawm, "rmse_in_mask nawm");
    double se = 0.0, nawm_sum = 0.0;
    std::size_t n = 0, n_nawm = 0;
    for (std::size_t i = 0; i < filled.size(); ++i) {
        if (mask[i]) {
            const double d = double(filled[i]) - double(reference[i]);
            se += d * d;
            ++n;
        }
        if (nawm[i]) {
            nawm_sum += reference[i];
            ++n_nawm;
        }
    }
    if (n == 0) throw UndefinedMetricError("rmse_in_mask: empty mask");
    if (n_nawm == 0) throw UndefinedMetricError("rmse_in_mask: empty NAWM mask");
    const double norm = nawm_sum / double(n_nawm);
    if (norm == 0.0) throw UndefinedMetricError("rmse_in_mask: NAWM mean intensity is zero");
    return std::sqrt(se / double(n)) / norm;
}

double interslice_tv(const Volume& v, int axis, const MaskVolume& mask) {
    if (axis < 0 || axis > 2) throw ParameterError("interslice_tv: axis must be 0, 1 or 2");
    const Volume c = reorient(v, Orientation::Axial);
    const MaskVolume m = reorient(mask, Orientation::Axial);
    require_same_geometry(c, m, "interslice_tv");
    const Shape3& s = c.shape();
    const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? s.nx : s.nx * s.ny);
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t z = 0; z < s.nz; ++z)
        for (std::size_t y = 0; y < s.ny; ++y)
            for (std::size_t x = 0; x < s.nx; ++x) {
                const std::size_t pos[3] = {x, y, z};
                if (pos[axis] + 1 >= s[axis]) continue;
                const std::size_t i = c.index(x, y, z), j = i + stride;
                if (!m[i] || !m[j]) continue;
                sum += std::fabs(double(c[j]) - double(c[i]));
                ++pairs;
            }
    return pairs ? sum / double(pairs) : 0.0;
}

Volume constant_nawm_fill(const Volume& v, const MaskVolume& mask, const MaskVolume& nawm) {
    require_same_geometry(v, mask, "constant_nawm_fill");
    require_same_geometry(v, nawm, "constant_nawm_fill");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (nawm[i]) {
            sum += v[i];
            ++n;
        }
    if (n == 0) throw UndefinedMetricError("constant_nawm_fill: empty NAWM mask");
    const float fill = float(sum / double(n));
    Volume out = v;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) out[i] = fill;
    return out;
}

}  // namespace msrepaint
