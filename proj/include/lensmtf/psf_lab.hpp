#pragma once

#include <string>
#include <vector>

#include "lensmtf/geometry.hpp"
#include "lensmtf/util.hpp"

namespace lensmtf::psf_lab {

using geometry::GlobalCoord;
using geometry::GrayImage;

// A patch contains a sample equal to the format maximum. Exposure selection
// must reject such patches; segmentation refuses them outright.
class SaturationError : public std::runtime_error {
public:
    explicit SaturationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CaptureSettings {
    std::string lens_id;
    double aperture = 0.0;   // f-number
    int exposure_index = 0;  // position in the bracketed series, ascending exposure time
};

// Normalized discrete PSF with its field position. kernel is P x P row-major
// (row = v, col = u), nonnegative, summing to 1 after normalize_psf.
struct PsfRecord {
    int P = 0;
    std::vector<double> kernel;
    GlobalCoord location;
    CaptureSettings settings;

    double at(int u, int v) const { return kernel[size_t(v) * P + u]; }
    double& at(int u, int v) { return kernel[size_t(v) * P + u]; }
};

struct PanelSpec {
    double pinhole_spacing_mm = 25.0;
    double pinhole_diameter_um = 150.0;
    int grid_cols = 80;
    int grid_rows = 60;
    double image_spacing_px = 111.0;
};

// Mixture of a narrow core and a wider wing, both elliptical Gaussians sharing
// one principal-axis rotation. weight_core is the mass fraction of the core.
struct TwoGaussianParams {
    double sigma_core_u = 1.0, sigma_core_v = 1.0;
    double sigma_wing_u = 2.0, sigma_wing_v = 2.0;
    double rotation = 0.0;
    double weight_core = 0.7;
};

struct Centroid {
    double x = 0.0, y = 0.0;  // sub-pixel image coordinates
};

// Thresholds at (global mean + 4 std), erodes with a 3x3 cross, finds connected
// regions, and returns the intensity-weighted center of mass of each region that
// survives erosion. Regions closer than image_spacing/2 are dropped as merged.
// Results are ordered row-major (top to bottom, left to right).
std::vector<Centroid> detect_psf_centroids(const GrayImage& panel_image, const PanelSpec& spec);

// Background statistics come from the four 5x5 corner areas of the patch:
// pixels below mu + 4*sigma are zeroed, the rest have mu subtracted (clipped at 0).
// Throws SaturationError if any sample in the patch equals the format maximum.
std::vector<double> segment_psf(const GrayImage& patch);

// Divides by the kernel sum; throws on a zero-sum kernel.
std::vector<double> normalize_psf(std::vector<double> kernel);

struct ExposurePatch {
    GrayImage patch;
    bool saturated = false;
    int exposure_index = 0;
};

// Longest-exposure unsaturated patch from a stack ordered by ascending exposure.
const ExposurePatch& select_best_exposure(const std::vector<ExposurePatch>& stack);

// Pixelwise mean of same-size patches.
GrayImage average_exposures(const std::vector<GrayImage>& patches);

// P x P kernel of the two-Gaussian mixture, each component normalized on the
// grid before mixing so weight_core is the exact core mass. P must be odd and
// large enough that 6 * max sigma fits.
std::vector<double> synth_two_gaussian_psf(const TwoGaussianParams& params, int P);

// Valid-mode convolution of a sharp patch with a PSF kernel, then optional iid
// Gaussian noise, clipped to [0, 1]. Output dims shrink by P - 1.
GrayImage blur_patch(const GrayImage& sharp, const std::vector<double>& psf, int P,
                     double noise_sigma, Rng& rng);

inline bool is_saturated(const GrayImage& img) {
    for (double v : img.data)
        if (v >= 1.0) return true;
    return false;
}

// On-disk dataset: <dir>/manifest.json (panel spec, capture metadata, per-record
// positions) plus <dir>/kernels.bin, count*P*P float32 little-endian values,
// row-major per record. Kernels are renormalized on load to absorb the
// float32 rounding of the blob.
struct PsfDataset {
    PanelSpec panel;
    std::string lens_id;
    double aperture = 0.0;
    int P = 0;
    std::vector<PsfRecord> records;
};

void save_psf_dataset(const std::string& dir, const PsfDataset& ds);
PsfDataset load_psf_dataset(const std::string& dir);

} // namespace lensmtf::psf_lab
