#pragma once

#include <cmath>
#include <vector>

#include "lensmtf/psf_lab.hpp"

namespace lensmtf::kernel_regression {

using geometry::GlobalCoord;
using psf_lab::PsfRecord;

// Lengthscales of the product kernel, one per coordinate.
struct KrConfig {
    double ell_r = 1.0;    // mm
    double ell_phi = 0.1;  // rad
    double ell_u = 0.5;    // px
    double ell_v = 0.5;    // px
};

inline double se_kernel(double delta, double lengthscale) {
    return std::exp(-delta * delta / (2.0 * lengthscale * lengthscale));
}

// Direct evaluation of the kernel-weighted pixel average: for each output pixel
// the weighted mean over every pixel of every record, weights from the 4-factor
// product kernel (phi differences wrapped). Result normalized to sum 1.
// O(N * P^4) per query; exists as the reference the fast path is checked against.
std::vector<double> kr_naive(const std::vector<PsfRecord>& records, const GlobalCoord& query,
                             const KrConfig& cfg);

// Records whose kernels have been rotated in place by -phi (bilinear, zero
// outside the grid, renormalized); original locations retained.
struct RotatedPsfDataset {
    std::vector<PsfRecord> records;
};

RotatedPsfDataset rotate_to_common_frame(const std::vector<PsfRecord>& records);

// Same estimator on a common-frame dataset, with the per-record scalar weight
// K_r * K_phi hoisted out and the (u, v) smoothing done once as a separable
// convolution with tabulated 1-D kernels (truncated below 1e-8). Agrees with
// kr_naive on the same rotated records to ~1e-8 per pixel.
std::vector<double> kr_fast(const RotatedPsfDataset& dataset, const GlobalCoord& query,
                            const KrConfig& cfg);

// n interpolated records at r uniform on [0, max record r], phi uniform on
// (-pi, pi], kernels from kr_fast. Deterministic for a fixed seed.
std::vector<PsfRecord> resample_balanced(const RotatedPsfDataset& dataset, int n, uint64_t seed,
                                         const KrConfig& cfg);

} // namespace lensmtf::kernel_regression
