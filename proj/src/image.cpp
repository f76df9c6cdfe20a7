#include "cosplat/image.hpp"

#include "cosplat/error.hpp"
#include "cosplat/hash.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cosplat {

const char *to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::EmptyTrajectory: return "EmptyTrajectory";
    case ErrorCode::UnknownPreset: return "UnknownPreset";
    case ErrorCode::NoValidPixels: return "NoValidPixels";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::TimestepOutOfRange: return "TimestepOutOfRange";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NumericalError: return "NumericalError";
    }
    return "Unknown";
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void require_same_shape(const Image &a, const Image &b, const char *what) {
    if (!a.same_shape(b)) {
        std::ostringstream os;
        os << what << ": " << a.channels << "x" << a.height << "x" << a.width << " vs " << b.channels << "x"
           << b.height << "x" << b.width;
        throw Error(ErrorCode::ShapeMismatch, os.str());
    }
}

Image concat_channels(std::initializer_list<const Image *> parts) {
    int c = 0;
    const Image &first = **parts.begin();
    for (const Image *p : parts) {
        if (p->height != first.height || p->width != first.width)
            throw Error(ErrorCode::ShapeMismatch, "concat_channels: spatial sizes differ");
        c += p->channels;
    }
    Image out(c, first.height, first.width);
    Eigen::Index off = 0;
    for (const Image *p : parts) {
        out.data.segment(off, p->size()) = p->data;
        off += p->size();
    }
    return out;
}

Image crop(const Image &img, int y0, int x0, int h, int w) {
    if (y0 < 0 || x0 < 0 || y0 + h > img.height || x0 + w > img.width)
        throw Error(ErrorCode::ShapeMismatch, "crop window outside image");
    Image out(img.channels, h, w);
    for (int c = 0; c < img.channels; ++c) out.plane(c) = img.plane(c).block(y0, x0, h, w);
    return out;
}

std::uint64_t content_hash(const Image &img) {
    std::uint64_t h = kFnvOffset;
    const int shape[3] = {img.channels, img.height, img.width};
    h = fnv1a(shape, sizeof shape, h);
    return fnv1a(img.data.data(), std::size_t(img.size()) * sizeof(double), h);
}

namespace {

std::ofstream open_out(const std::string &path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoError, "cannot open for writing: " + path);
    return f;
}

std::ifstream open_in(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoError, "cannot open for reading: " + path);
    return f;
}

void put_u32(std::ostream &os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char *>(b), 4);
}

std::uint32_t get_u32(std::istream &is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char *>(b), 4)) throw Error(ErrorCode::IoError, "truncated header");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

void put_f32(std::ostream &os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }

} // namespace

void write_ppm(const std::string &path, const Image &rgb) {
    if (rgb.channels != 3) throw Error(ErrorCode::ShapeMismatch, "write_ppm expects 3 channels");
    auto f = open_out(path);
    f << "P6\n" << rgb.width << " " << rgb.height << "\n255\n";
    std::vector<unsigned char> row(std::size_t(rgb.width) * 3);
    for (int y = 0; y < rgb.height; ++y) {
        for (int x = 0; x < rgb.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(rgb(c, y, x), 0.0, 1.0);
                row[std::size_t(x) * 3 + c] = static_cast<unsigned char>(std::lround(std::pow(v, 1.0 / 2.2) * 255.0));
            }
        f.write(reinterpret_cast<const char *>(row.data()), std::streamsize(row.size()));
    }
    if (!f) throw Error(ErrorCode::IoError, "write failed: " + path);
}

Image read_ppm(const std::string &path) {
    auto f = open_in(path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
        throw Error(ErrorCode::IoError, "not a P6/255 PPM: " + path);
    f.get();
    std::vector<unsigned char> bytes(std::size_t(w) * h * 3);
    if (!f.read(reinterpret_cast<char *>(bytes.data()), std::streamsize(bytes.size())))
        throw Error(ErrorCode::IoError, "truncated PPM: " + path);
    Image img(3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img(c, y, x) = std::pow(bytes[(std::size_t(y) * w + x) * 3 + c] / 255.0, 2.2);
    return img;
}

void write_fgdp(const std::string &path, const Image &plane) {
    if (plane.channels != 1) throw Error(ErrorCode::ShapeMismatch, "write_fgdp expects 1 channel");
    auto f = open_out(path);
    f.write("FGDP", 4);
    put_u32(f, std::uint32_t(plane.width));
    put_u32(f, std::uint32_t(plane.height));
    put_u32(f, 0);
    for (Eigen::Index i = 0; i < plane.size(); ++i) {
        const double v = plane.data[i];
        put_f32(f, std::isfinite(v) ? static_cast<float>(v) : 0.0f);
    }
    if (!f) throw Error(ErrorCode::IoError, "write failed: " + path);
}

Image read_fgdp(const std::string &path) {
    auto f = open_in(path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "FGDP", 4) != 0)
        throw Error(ErrorCode::IoError, "bad FGDP magic: " + path);
    const auto w = get_u32(f);
    const auto h = get_u32(f);
    get_u32(f);
    Image img(1, int(h), int(w));
    for (Eigen::Index i = 0; i < img.size(); ++i) img.data[i] = std::bit_cast<float>(get_u32(f));
    return img;
}

} // namespace cosplat
