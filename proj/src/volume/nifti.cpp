#include "msrepaint/nifti.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace msrepaint::nifti {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace {

template <class T>
T get(const std::vector<char>& buf, std::size_t offset) {
    T v;
    std::memcpy(&v, buf.data() + offset, sizeof(T));
    return v;
}

template <class T>
void put(std::vector<char>& buf, std::size_t offset, T v) {
    std::memcpy(buf.data() + offset, &v, sizeof(T));
}

struct Header {
    Shape3 shape;
    std::array<double, 3> spacing{1, 1, 1};
    std::int16_t datatype = 0;
    std::size_t offset = kVoxOffset;
    float slope = 0.0f, inter = 0.0f;
};

std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Header parse_header(const std::vector<char>& buf, const std::string& name) {
    if (buf.size() < std::size_t(kHeaderSize))
        throw FormatError("sizeof_hdr", name + ": file shorter than a NIfTI-1 header");
    const auto sizeof_hdr = get<std::int32_t>(buf, 0);
    if (sizeof_hdr != kHeaderSize) {
        if (std::int32_t(__builtin_bswap32(std::uint32_t(sizeof_hdr))) == kHeaderSize)
            throw FormatError("sizeof_hdr", name + ": big-endian files are not supported");
        throw FormatError("sizeof_hdr", name + ": expected 348, found " + std::to_string(sizeof_hdr));
    }
    if (std::memcmp(buf.data() + 344, "n+1\0", 4) != 0)
        throw FormatError("magic", name + ": expected single-file magic \"n+1\"");

    Header h;
    std::array<std::int16_t, 8> dim{};
    for (int i = 0; i < 8; ++i) dim[i] = get<std::int16_t>(buf, 40 + 2 * i);
    if (dim[0] < 3 || dim[0] > 7)
        throw FormatError("dim", name + ": dim[0] must be 3, found " + std::to_string(dim[0]));
    for (int i = 4; i <= dim[0]; ++i)
        if (dim[i] != 1)
            throw FormatError("dim", name + ": only 3D volumes are supported (dim[" +
                                         std::to_string(i) + "] = " + std::to_string(dim[i]) + ")");
    for (int i = 1; i <= 3; ++i)
        if (dim[i] < 1)
            throw FormatError("dim", name + ": dim[" + std::to_string(i) + "] must be positive");
    h.shape = {std::size_t(dim[1]), std::size_t(dim[2]), std::size_t(dim[3])};

    h.datatype = get<std::int16_t>(buf, 70);
    const auto bitpix = get<std::int16_t>(buf, 72);
    if (h.datatype != kDtFloat32 && h.datatype != kDtUint8)
        throw UnsupportedTypeError(name + ": unsupported NIfTI datatype code " +
                                   std::to_string(h.datatype));
    if ((h.datatype == kDtFloat32 && bitpix != 32) || (h.datatype == kDtUint8 && bitpix != 8))
        throw FormatError("bitpix", name + ": bitpix " + std::to_string(bitpix) +
                                        " inconsistent with datatype");

    for (int i = 0; i < 3; ++i) {
        const float p = get<float>(buf, 76 + 4 * (i + 1));
        h.spacing[i] = (std::isfinite(p) && p > 0.0f) ? double(p) : 1.0;
    }
    const float vox_offset = get<float>(buf, 108);
    if (!(vox_offset >= float(kVoxOffset)))
        throw FormatError("vox_offset", name + ": must be >= 352");
    h.offset = std::size_t(vox_offset);
    h.slope = get<float>(buf, 112);
    h.inter = get<float>(buf, 116);

    const std::size_t bytes = h.shape.size() * (h.datatype == kDtFloat32 ? 4 : 1);
    if (buf.size() < h.offset + bytes)
        throw FormatError("vox_offset", name + ": payload truncated");
    return h;
}

std::vector<char> make_header(const Shape3& s, const std::array<double, 3>& spacing,
                              std::int16_t datatype) {
    for (int a = 0; a < 3; ++a)
        if (s[a] > 32767) throw ShapeError("NIfTI-1 dimensions are limited to 32767");
    std::vector<char> buf(kVoxOffset, 0);
    put<std::int32_t>(buf, 0, kHeaderSize);
    put<char>(buf, 38, 'r');
    const std::array<std::int16_t, 8> dim{3, std::int16_t(s.nx), std::int16_t(s.ny),
                                          std::int16_t(s.nz), 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) put<std::int16_t>(buf, 40 + 2 * i, dim[i]);
    put<std::int16_t>(buf, 70, datatype);
    put<std::int16_t>(buf, 72, datatype == kDtFloat32 ? 32 : 8);
    const std::array<float, 8> pixdim{1.0f, float(spacing[0]), float(spacing[1]), float(spacing[2]),
                                      1.0f, 1.0f, 1.0f, 1.0f};
    for (int i = 0; i < 8; ++i) put<float>(buf, 76 + 4 * i, pixdim[i]);
    put<float>(buf, 108, float(kVoxOffset));
    put<float>(buf, 112, 1.0f);
    put<float>(buf, 116, 0.0f);
    put<char>(buf, 123, 2);  // mm
    std::memcpy(buf.data() + 148, "msrepaint", 9);
    put<std::int16_t>(buf, 252, 0);
    put<std::int16_t>(buf, 254, 1);
    for (int r = 0; r < 3; ++r)
        put<float>(buf, 280 + 16 * r + 4 * r, float(spacing[r]));
    std::memcpy(buf.data() + 344, "n+1\0", 4);
    return buf;
}

void write_bytes(const std::filesystem::path& path, const std::vector<char>& header,
                 const void* payload, std::size_t bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(header.data(), std::streamsize(header.size()));
    out.write(static_cast<const char*>(payload), std::streamsize(bytes));
    if (!out) throw Error("short write to '" + path.string() + "'");
}

}  // namespace

Volume read(const std::filesystem::path& path) {
    const auto buf = slurp(path);
    const Header h = parse_header(buf, path.string());
    std::vector<float> data(h.shape.size());
    if (h.datatype == kDtFloat32) {
        std::memcpy(data.data(), buf.data() + h.offset, data.size() * sizeof(float));
        const bool scaled = h.slope != 0.0f && !(h.slope == 1.0f && h.inter == 0.0f);
        if (scaled)
            for (float& x : data) x = x * h.slope + h.inter;
    } else {
        for (std::size_t i = 0; i < data.size(); ++i)
            data[i] = float(static_cast<std::uint8_t>(buf[h.offset + i]));
    }
    Volume v(h.shape, std::move(data), h.spacing, Orientation::Axial);
    require_finite(v, path.string());
    return v;
}

MaskVolume read_mask(const std::filesystem::path& path) {
    const auto buf = slurp(path);
    const Header h = parse_header(buf, path.string());
    std::vector<std::uint8_t> data(h.shape.size());
    if (h.datatype == kDtUint8) {
        std::memcpy(data.data(), buf.data() + h.offset, data.size());
    } else {
        for (std::size_t i = 0; i < data.size(); ++i) {
            const float x = get<float>(buf, h.offset + 4 * i);
            if (x != 0.0f && x != 1.0f)
                throw FormatError("mask", path.string() + ": float mask value not 0 or 1");
            data[i] = x == 1.0f ? 1 : 0;
        }
    }
    MaskVolume m(h.shape, std::move(data), h.spacing, Orientation::Axial);
    require_binary(m, path.string());
    return m;
}

void write(const std::filesystem::path& path, const Volume& v) {
    const Volume canon = reorient(v, Orientation::Axial);
    write_bytes(path, make_header(canon.shape(), canon.spacing(), kDtFloat32),
                canon.data().data(), canon.size() * sizeof(float));
}

void write(const std::filesystem::path& path, const MaskVolume& m) {
    const MaskVolume canon = reorient(m, Orientation::Axial);
    write_bytes(path, make_header(canon.shape(), canon.spacing(), kDtUint8), canon.data().data(),
                canon.size());
}

}  // namespace msrepaint::nifti
