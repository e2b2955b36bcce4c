#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lensmtf/geometry.hpp"
#include "lensmtf/mtf_core.hpp"

namespace lensmtf::aggregate {

// Per-location MTF sample: one value per requested physical frequency for
// each direction, in [0, 1].
struct LocalEstimate {
    geometry::GlobalCoord location;
    std::vector<double> freqs_cy_mm;
    std::vector<double> radial;
    std::vector<double> tangential;
    int n_patches = 0;
};

struct GridConfig {
    int radii = 12;
    int angles = 16;
    std::vector<double> angle_offsets{-0.02, 0.0, 0.02};
    std::vector<double> freqs_cy_mm{10.0, 20.0, 30.0, 40.0};
    int patch_size = 48;
};

// Produces one joint estimate per patch list; the CLI plugs the network in
// here, tests can substitute an oracle.
using PatchEstimator = std::function<mtf_core::MtfLabel(const std::vector<geometry::GrayImage>&)>;

// Walks a polar grid of patch centers. At each (r, phi) the patches from every
// image at phi + {-0.02, 0, +0.02} rad feed one joint estimate; patches whose
// rotation margin leaves the image are skipped, and locations with no valid
// patch are dropped with a note on stderr. At r = 0 the angle offsets coincide,
// so only one patch per image is taken.
std::vector<LocalEstimate> collect_local_estimates(const std::vector<geometry::GrayImage>& images,
                                                   const PatchEstimator& estimator,
                                                   const GridConfig& grid);

// ---- Gaussian process over the radial coordinate ----------------------------

struct GpConfig {
    double signal_std = 0.15;
    double lengthscale_mm = -1.0;  // <= 0: 0.15 * (largest training radius)
    double noise_std = 0.05;
    bool optimize = false;         // hill-climb the log marginal likelihood
    double jitter = 1e-8;
};

struct GpModel {
    std::vector<double> r;
    Eigen::VectorXd alpha;  // K^-1 (y - prior_mean)
    Eigen::MatrixXd chol;   // lower Cholesky factor of K
    double prior_mean = 0.0;
    double signal_var = 0.0;
    double lengthscale = 0.0;
    double noise_var = 0.0;
    double log_marginal = 0.0;
};

GpModel gp_fit(const std::vector<std::pair<double, double>>& samples, const GpConfig& cfg);

// posterior mean and pointwise latent std on a grid
void gp_predict(const GpModel& model, const std::vector<double>& r_grid, std::vector<double>& mean,
                std::vector<double>& stddev);

// ---- azimuthal statistics ----------------------------------------------------

struct AzimuthalBin {
    double r = 0.0;  // mean radius of the members
    int count = 0;
    bool single = false;  // std is 0 because the bin holds one estimate
    std::vector<double> mean_radial, std_radial;
    std::vector<double> mean_tangential, std_tangential;
};

// Bins estimates by radius (edges define [e_i, e_{i+1}) intervals, last bin
// closed) and reports per-bin mean and sample std for every frequency and
// direction. Empty bins are omitted. Exactly invariant to estimate order.
std::vector<AzimuthalBin> azimuthal_average(const std::vector<LocalEstimate>& estimates,
                                            const std::vector<double>& bin_edges);

// ---- compensation ------------------------------------------------------------

// Correction for the residual blur of natural-image training sources, one
// factor per reported frequency (10, 20, 30, 40 cy/mm by default).
inline std::vector<double> default_compensation() { return {0.98, 0.95, 0.90, 0.83}; }

std::vector<double> apply_compensation(const std::vector<double>& values,
                                       const std::vector<double>& factors = default_compensation());

// ---- chart assembly ----------------------------------------------------------

enum class ChartMode { ray, azimuthal };

struct ChartConfig {
    ChartMode mode = ChartMode::azimuthal;
    bool compensate = false;
    std::vector<double> comp_factors = default_compensation();
    double ray_phi = M_PI / 4.0;   // ray mode: direction of the sampled ray
    double ray_phi_tol = 0.15;     // rad; estimates within this of ray_phi contribute
    int r_points = 200;
    double r_max_mm = -1.0;        // <= 0: largest estimate radius
    int azimuthal_bins = 12;
    bool azimuthal_use_gp = true;  // mean curve from the GP posterior, band from bin stds
    GpConfig gp;
};

struct ChartCurve {
    double freq_cy_mm = 0.0;
    mtf_core::Direction direction = mtf_core::Direction::radial;
    std::vector<double> mean;  // on MtfChart::r_grid
    std::vector<double> stddev;
    std::vector<std::pair<double, double>> samples;  // raw (r, value)
};

struct MtfChart {
    std::string lens_id;
    double aperture = 0.0;
    int n_photos = 0;
    bool compensated = false;
    ChartMode mode = ChartMode::azimuthal;
    std::vector<double> r_grid;
    std::vector<ChartCurve> curves;  // frequency-major, radial before tangential
};

MtfChart build_chart(const std::vector<LocalEstimate>& estimates, const ChartConfig& cfg);

// columns: r_mm, direction, freq_cy_mm, mtf_mean, mtf_std, n_samples, compensated
void write_chart_csv(const MtfChart& chart, const std::string& path);
void write_chart_json(const MtfChart& chart, const std::string& path);
// solid lines tangential, dashed radial
void write_chart_svg(const MtfChart& chart, const std::string& path);

} // namespace lensmtf::aggregate
