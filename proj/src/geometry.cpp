#include "lensmtf/geometry.hpp"

#include <cmath>

namespace lensmtf::geometry {

GlobalCoord pixel_to_global(double px, double py, const GrayImage& image) {
    if (px < 0.0 || px > image.width - 1 || py < 0.0 || py > image.height - 1)
        throw std::invalid_argument("pixel_to_global: pixel outside image bounds");
    double cx = image.width / 2.0;
    double cy = image.height / 2.0;
    double dx = px - cx;
    double dy = cy - py;  // y-up so positive phi is counter-clockwise
    GlobalCoord g;
    g.r = std::hypot(dx, dy) * image.pixel_pitch / 1000.0;
    g.phi = std::atan2(dy, dx);
    return g;
}

void global_to_pixel(const GlobalCoord& g, const GrayImage& image, double& px, double& py) {
    double r_px = g.r * 1000.0 / image.pixel_pitch;
    px = image.width / 2.0 + r_px * std::cos(g.phi);
    py = image.height / 2.0 - r_px * std::sin(g.phi);
}

double bilinear_sample(const GrayImage& image, double x, double y) {
    if (!(x >= 0.0 && x <= image.width - 1 && y >= 0.0 && y <= image.height - 1))
        throw std::invalid_argument("bilinear_sample: coordinate out of range");
    int x0 = image.width > 1 ? std::min(int(std::floor(x)), image.width - 2) : 0;
    int y0 = image.height > 1 ? std::min(int(std::floor(y)), image.height - 2) : 0;
    int x1 = std::min(x0 + 1, image.width - 1);
    int y1 = std::min(y0 + 1, image.height - 1);
    double fx = x - x0;
    double fy = y - y0;
    double top = image.at(x0, y0) * (1.0 - fx) + image.at(x1, y0) * fx;
    double bot = image.at(x0, y1) * (1.0 - fx) + image.at(x1, y1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

bool rotated_patch_fits(const GrayImage& image, const GlobalCoord& center, int size) {
    if (size <= 0) return false;
    double cx, cy;
    global_to_pixel(center, image, cx, cy);
    double half = 0.5 * (std::ceil(size * std::sqrt(2.0)) + 2.0);
    return cx - half >= 0.0 && cx + half <= image.width - 1 && cy - half >= 0.0 &&
           cy + half <= image.height - 1;
}

GrayImage extract_rotated_patch(const GrayImage& image, const GlobalCoord& center, int size) {
    if (size <= 0) throw std::invalid_argument("extract_rotated_patch: size must be positive");
    if (!rotated_patch_fits(image, center, size))
        throw std::invalid_argument("extract_rotated_patch: patch with rotation margin exceeds image");
    double cx, cy;
    global_to_pixel(center, image, cx, cy);

    // e_u, e_v in pixel storage coordinates (y down)
    double eux = std::cos(center.phi), euy = -std::sin(center.phi);
    double evx = std::sin(center.phi), evy = std::cos(center.phi);
    GrayImage patch(size, size, 0.0, image.pixel_pitch);
    int c = size / 2;
    for (int i = 0; i < size; i++) {
        double b = i - c;
        for (int j = 0; j < size; j++) {
            double a = j - c;
            double sx = cx + a * eux + b * evx;
            double sy = cy + a * euy + b * evy;
            patch.at(j, i) = bilinear_sample(image, sx, sy);
        }
    }
    return patch;
}

GrayImage sobel_gradient(const GrayImage& patch, SobelAxis axis) {
    if (patch.width < 3 || patch.height < 3)
        throw std::invalid_argument("sobel_gradient: patch must be at least 3x3");
    // correlation weights for d/dx; d/dy is the transpose
    static const double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    GrayImage out(patch.width, patch.height, 0.0, patch.pixel_pitch);
    auto clamped = [&](int x, int y) {
        x = std::max(0, std::min(patch.width - 1, x));
        y = std::max(0, std::min(patch.height - 1, y));
        return patch.at(x, y);
    };
    for (int y = 0; y < patch.height; y++)
        for (int x = 0; x < patch.width; x++) {
            double s = 0.0;
            for (int dy = -1; dy <= 1; dy++)
                for (int dx = -1; dx <= 1; dx++) {
                    double w = (axis == SobelAxis::horizontal) ? kx[dy + 1][dx + 1]
                                                               : kx[dx + 1][dy + 1];
                    s += w * clamped(x + dx, y + dy);
                }
            out.at(x, y) = s;
        }
    return out;
}

ChannelStack subsample_to_channels(const ChannelStack& stack, int M) {
    if (M <= 0) throw std::invalid_argument("subsample_to_channels: M must be positive");
    if (stack.height % M != 0 || stack.width % M != 0)
        throw std::invalid_argument("subsample_to_channels: dims not divisible by M");
    ChannelStack out(stack.height / M, stack.width / M, stack.channels * M * M);
    for (int c = 0; c < stack.channels; c++)
        for (int i = 0; i < stack.height; i++)
            for (int j = 0; j < stack.width; j++)
                out.at(c * M * M + (i % M) * M + (j % M), i / M, j / M) = stack.at(c, i, j);
    return out;
}

ChannelStack inverse_subsample(const ChannelStack& stack, int M) {
    if (M <= 0) throw std::invalid_argument("inverse_subsample: M must be positive");
    if (stack.channels % (M * M) != 0)
        throw std::invalid_argument("inverse_subsample: channels not divisible by M*M");
    ChannelStack out(stack.height * M, stack.width * M, stack.channels / (M * M));
    for (int c = 0; c < out.channels; c++)
        for (int i = 0; i < out.height; i++)
            for (int j = 0; j < out.width; j++)
                out.at(c, i, j) = stack.at(c * M * M + (i % M) * M + (j % M), i / M, j / M);
    return out;
}

} // namespace lensmtf::geometry
