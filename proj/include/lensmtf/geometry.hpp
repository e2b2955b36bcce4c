#pragma once

#include <vector>

#include "lensmtf/util.hpp"

namespace lensmtf::geometry {

// Global polar position on the sensor: r in millimetres from the image center,
// phi in radians in (-pi, pi]. phi = 0 points along +x; positive phi is
// counter-clockwise when the image is viewed the usual way up (y axis of pixel
// storage points down, so phi = atan2(cy - y, x - cx)).
struct GlobalCoord {
    double r = 0.0;
    double phi = 0.0;
};

// Offset in the rotated local frame, pixels. +u points radially outward
// (away from the image center), +v tangentially, 90 degrees counter-clockwise
// from +u.
struct LocalCoord {
    double u = 0.0;
    double v = 0.0;
};

// Row-major single-channel raster with intensities in [0, 1].
// pixel_pitch is the photosite spacing in micrometres.
struct GrayImage {
    int width = 0;
    int height = 0;
    double pixel_pitch = 1.0;
    std::vector<double> data;

    GrayImage() = default;
    GrayImage(int w, int h, double fill = 0.0, double pitch_um = 1.0)
        : width(w), height(h), pixel_pitch(pitch_um), data(size_t(w) * size_t(h), fill) {}

    double& at(int x, int y) { return data[size_t(y) * width + x]; }
    double at(int x, int y) const { return data[size_t(y) * width + x]; }
    bool inside(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

// Stack of equally sized planes, one per channel; each plane row-major.
struct ChannelStack {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    ChannelStack() = default;
    ChannelStack(int h, int w, int c)
        : height(h), width(w), channels(c), data(size_t(h) * size_t(w) * size_t(c), 0.0) {}

    double& at(int c, int y, int x) { return data[(size_t(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return data[(size_t(c) * height + y) * width + x]; }
};

// Polar position of a (sub-)pixel relative to the image center (width/2, height/2).
GlobalCoord pixel_to_global(double px, double py, const GrayImage& image);

// Inverse of pixel_to_global: sub-pixel position of a global coordinate.
void global_to_pixel(const GlobalCoord& g, const GrayImage& image, double& px, double& py);

// Bilinear interpolation; exact at integer coordinates. Coordinates must lie
// in [0, width-1] x [0, height-1].
double bilinear_sample(const GrayImage& image, double x, double y);

// size x size patch around `center` resampled so that the horizontal axis is
// the radial direction u and the vertical axis the tangential direction v
// (one bilinear pass, rotation by -phi). Patch pixel (row i, col j) samples the
// source at center + (j - size/2) e_u + (i - size/2) e_v, so at phi = 0 the
// result is a plain crop.
GrayImage extract_rotated_patch(const GrayImage& image, const GlobalCoord& center, int size);

// Whether extract_rotated_patch would succeed at this center (the patch plus
// its rotation margin stays inside the image).
bool rotated_patch_fits(const GrayImage& image, const GlobalCoord& center, int size);

enum class SobelAxis { horizontal, vertical };

// 3x3 Sobel derivative along the requested axis, borders by edge replication.
// The horizontal axis responds to vertical edges with gain 8 per unit slope.
GrayImage sobel_gradient(const GrayImage& patch, SobelAxis axis);

// Rearranges MxM pixel groups into channels: (H, W, C) -> (H/M, W/M, C*M*M).
// Input pixel (i, j) of channel c lands in output channel c*M*M + (i%M)*M + (j%M)
// at (i/M, j/M).
ChannelStack subsample_to_channels(const ChannelStack& stack, int M);

// Exact inverse of subsample_to_channels.
ChannelStack inverse_subsample(const ChannelStack& stack, int M);

} // namespace lensmtf::geometry
