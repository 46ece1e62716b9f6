#include "msrepaint/components.hpp"

#include <numeric>

namespace msrepaint {

Connectivity connectivity_from_int(int n) {
    switch (n) {
        case 6: return Connectivity::Faces;
        case 18: return Connectivity::Edges;
        case 26: return Connectivity::Corners;
        default: throw ParameterError("connectivity must be 6, 18 or 26, got " + std::to_string(n));
    }
}

namespace {

class DisjointSet {
public:
    std::uint32_t make() {
        parent_.push_back(std::uint32_t(parent_.size()));
        return parent_.back();
    }
    std::uint32_t find(std::uint32_t a) {
        while (parent_[a] != a) {
            parent_[a] = parent_[parent_[a]];
            a = parent_[a];
        }
        return a;
    }
    // The smaller root wins so provisional label order is kept.
    void unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a < b) parent_[b] = a;
        else parent_[a] = b;
    }

private:
    std::vector<std::uint32_t> parent_;
};

struct Offset {
    int dx, dy, dz;
};

// Neighbours already visited in x-fastest raster order.
std::vector<Offset> backward_offsets(Connectivity c) {
    std::vector<Offset> out;
    for (int dz = -1; dz <= 0; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
                const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (c == Connectivity::Faces && manhattan > 1) continue;
                if (c == Connectivity::Edges && manhattan > 2) continue;
                out.push_back({dx, dy, dz});
            }
    return out;
}

}  // namespace

Grid<std::uint32_t> label_components(const MaskVolume& mask, Connectivity connectivity) {
    const Shape3& s = mask.shape();
    Grid<std::uint32_t> labels = mask.like<std::uint32_t>(0);
    DisjointSet sets;
    sets.make();  // label 0 = background
    const auto offsets = backward_offsets(connectivity);
    const auto nx = long(s.nx), ny = long(s.ny);

    for (long z = 0; z < long(s.nz); ++z)
        for (long y = 0; y < ny; ++y)
            for (long x = 0; x < nx; ++x) {
                const std::size_t i = mask.index(std::size_t(x), std::size_t(y), std::size_t(z));
                if (!mask[i]) continue;
                std::uint32_t label = 0;
                for (const auto& o : offsets) {
                    const long qx = x + o.dx, qy = y + o.dy, qz = z + o.dz;
                    if (qx < 0 || qx >= nx || qy < 0 || qy >= ny || qz < 0) continue;
                    const std::uint32_t q = labels(std::size_t(qx), std::size_t(qy), std::size_t(qz));
                    if (q == 0) continue;
                    if (label == 0) label = q;
                    else sets.unite(label, q);
                }
                labels[i] = label ? label : sets.make();
            }

    // Resolve to dense labels numbered by first appearance (= minimum index).
    std::vector<std::uint32_t> dense;
    std::uint32_t next = 1;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!labels[i]) continue;
        const std::uint32_t root = sets.find(labels[i]);
        if (dense.size() <= root) dense.resize(root + 1, 0);
        if (!dense[root]) dense[root] = next++;
        labels[i] = dense[root];
    }
    return labels;
}

std::vector<Component> connected_components(const MaskVolume& mask, Connectivity connectivity) {
    const auto labels = label_components(mask, connectivity);
    std::vector<Component> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::uint32_t l = labels[i];
        if (!l) continue;
        if (out.size() < l) out.resize(l);
        out[l - 1].voxels.push_back(i);
    }
    return out;
}

}  // namespace msrepaint
