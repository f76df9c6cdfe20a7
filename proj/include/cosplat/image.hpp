#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>

namespace cosplat {

using RowArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using PlaneMap = Eigen::Map<RowArray>;
using ConstPlaneMap = Eigen::Map<const RowArray>;

// Planar (channel-major) image / feature tensor: element (c, y, x) lives at
// data[(c * height + y) * width + x]. Depth and opacity maps are 1-channel.
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    Eigen::ArrayXd data;

    Image() = default;
    Image(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), data(Eigen::ArrayXd::Constant(Eigen::Index(c) * h * w, fill)) {}

    double &operator()(int c, int y, int x) { return data[(Eigen::Index(c) * height + y) * width + x]; }
    double operator()(int c, int y, int x) const { return data[(Eigen::Index(c) * height + y) * width + x]; }

    Eigen::Index pixels() const { return Eigen::Index(height) * width; }
    Eigen::Index size() const { return data.size(); }

    PlaneMap plane(int c) { return PlaneMap(data.data() + c * pixels(), height, width); }
    ConstPlaneMap plane(int c) const { return ConstPlaneMap(data.data() + c * pixels(), height, width); }

    bool same_shape(const Image &o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

// Throws ShapeMismatch naming `what` when shapes differ.
void require_same_shape(const Image &a, const Image &b, const char *what);

// Stacks the channels of several images of identical spatial size.
Image concat_channels(std::initializer_list<const Image *> parts);

// Copies an axis-aligned window [y0, y0+h) x [x0, x0+w).
Image crop(const Image &img, int y0, int x0, int h, int w);

// FNV-1a over the raw bytes of the tensor (shape included).
std::uint64_t content_hash(const Image &img);

// Binary PPM (P6, maxval 255). Values are linear in [0,1] and gamma-2.2 encoded on disk.
void write_ppm(const std::string &path, const Image &rgb);
Image read_ppm(const std::string &path);

// "FGDP" grid: 16-byte header (magic, u32 width, u32 height, u32 reserved) followed by
// little-endian f32 values in row-major order. Non-finite values are stored as 0.
void write_fgdp(const std::string &path, const Image &plane);
// Zeros are returned as-is; callers decide whether 0 marks invalid depth.
Image read_fgdp(const std::string &path);

} // namespace cosplat
