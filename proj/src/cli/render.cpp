#include "msrepaint/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "msrepaint/errors.hpp"

namespace msrepaint {

Image8 render_slice(const Volume& v, Orientation view, std::size_t index, std::optional<double> window,
                    std::optional<double> level) {
    if (window && !(*window > 0.0)) throw ParameterError("render: window must be > 0");
    const Volume r = reorient(v, view);
    if (index >= r.slice_count())
        throw ParameterError("render: slice " + std::to_string(index) + " out of range [0, " +
                             std::to_string(r.slice_count()) + ") for the " + to_string(view) + " view");
    const auto [mn, mx] = std::minmax_element(v.data().begin(), v.data().end());
    const double width = window ? *window : double(*mx) - double(*mn);
    const double centre = level ? *level : 0.5 * (double(*mn) + double(*mx));
    const double lo = centre - 0.5 * width, hi = centre + 0.5 * width;

    Image8 img;
    img.width = int(r.shape().nx);
    img.height = int(r.shape().ny);
    const auto s = r.slice(index);
    img.pixels.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!(hi > lo)) {
            img.pixels[i] = 128;
            continue;
        }
        const double u = std::clamp((double(s[i]) - lo) / (hi - lo), 0.0, 1.0);
        img.pixels[i] = std::uint8_t(std::lround(255.0 * u));
    }
    return img;
}

void write_pgm(const std::filesystem::path& path, const Image8& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
    if (!out) throw Error("failed writing '" + path.string() + "'");
}

}  // namespace msrepaint
