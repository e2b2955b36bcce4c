#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "lensmtf/aggregate.hpp"
#include "lensmtf/util.hpp"

using namespace lensmtf;
using namespace lensmtf::aggregate;
using geometry::GrayImage;
namespace fs = std::filesystem;

namespace {

mtf_core::MtfLabel constant_label(double v) {
    mtf_core::MtfLabel l;
    l.radial.fill(v);
    l.tangential.fill(v);
    return l;
}

LocalEstimate make_est(double r, double phi, std::vector<double> freqs, std::vector<double> rad,
                       std::vector<double> tan) {
    LocalEstimate e;
    e.location = {r, phi};
    e.freqs_cy_mm = std::move(freqs);
    e.radial = std::move(rad);
    e.tangential = std::move(tan);
    e.n_patches = 1;
    return e;
}

// Synthetic lens whose blur is a two-Gaussian mixture growing with field
// radius, so every (r, freq, direction) has a closed-form contrast.
constexpr double kPitch = 4.14;
constexpr double kRMax = 2.16;

double gauss_mtf(double sigma_px, double f_px) {
    return std::exp(-2.0 * M_PI * M_PI * sigma_px * sigma_px * f_px * f_px);
}

double lens_truth(double r, double freq_cy_mm, bool radial) {
    double t = r / kRMax;
    double core = 0.8 + 0.5 * t * t;
    double wing = core + (radial ? 0.8 : 1.1) * t;
    double w = radial ? 0.7 : 0.55;
    double f_px = freq_cy_mm * kPitch / 1000.0;
    return w * gauss_mtf(core, f_px) + (1.0 - w) * gauss_mtf(wing, f_px);
}

std::vector<LocalEstimate> lens_scene() {
    std::vector<double> freqs{10.0, 20.0, 30.0, 40.0};
    std::vector<LocalEstimate> out;
    for (int ri = 0; ri < 12; ri++) {
        double r = kRMax * ri / 11.0;
        int n_ang = ri == 0 ? 1 : 16;
        for (int ai = 0; ai < n_ang; ai++) {
            double phi = ri == 0 ? 0.0 : wrap_angle(-M_PI + 2.0 * M_PI * ai / 16.0);
            std::vector<double> rad, tan;
            for (double f : freqs) {
                rad.push_back(lens_truth(r, f, true));
                tan.push_back(lens_truth(r, f, false));
            }
            out.push_back(make_est(r, phi, freqs, rad, tan));
        }
    }
    return out;
}

// Linear-in-radius values with one estimate per (radius, angle); angle members
// of a ring agree exactly, so azimuthal bins reproduce the line.
double line_value(size_t k, bool radial, double r) {
    static const double a[2][2] = {{0.9, 0.8}, {0.85, 0.75}};
    static const double b[2][2] = {{0.1, 0.15}, {0.12, 0.18}};
    return a[radial ? 0 : 1][k] - b[radial ? 0 : 1][k] * r;
}

std::vector<LocalEstimate> line_scene(double wobble) {
    std::vector<double> freqs{10.0, 20.0};
    std::vector<LocalEstimate> out;
    for (int ri = 0; ri < 4; ri++) {
        double r = 2.1 * ri / 3.0;
        int n_ang = ri == 0 ? 1 : 3;
        for (int ai = 0; ai < n_ang; ai++) {
            double phi = ri == 0 ? 0.0 : wrap_angle(-M_PI + 2.0 * M_PI * ai / 3.0);
            std::vector<double> rad, tan;
            for (size_t k = 0; k < freqs.size(); k++) {
                double dv = ri == 0 ? 0.0 : wobble * std::sin(1.7 * ai + double(k));
                rad.push_back(line_value(k, true, r) + dv);
                tan.push_back(line_value(k, false, r) - dv);
            }
            out.push_back(make_est(r, phi, freqs, rad, tan));
        }
    }
    return out;
}

size_t count_occurrences(const std::string& text, const std::string& needle) {
    size_t n = 0;
    for (size_t pos = text.find(needle); pos != std::string::npos;
         pos = text.find(needle, pos + 1))
        n++;
    return n;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("the grid walk takes one center patch and full rings where they fit") {
    std::vector<GrayImage> imgs{GrayImage(400, 400, 0.5, 4.14), GrayImage(400, 400, 0.5, 4.14)};
    int calls = 0;
    int first_w = 0;
    double first_pitch = 0.0;
    PatchEstimator est = [&](const std::vector<GrayImage>& ps) {
        calls++;
        if (first_w == 0) {
            first_w = ps[0].width;
            first_pitch = ps[0].pixel_pitch;
        }
        return constant_label(0.5);
    };
    GridConfig grid;
    grid.radii = 3;
    grid.angles = 4;

    auto out = collect_local_estimates(imgs, est, grid);

    // the outermost ring reaches the image corners, where no rotated patch
    // fits, so only the center and the middle ring survive
    CHECK(out.size() == 5);
    CHECK(calls == 5);
    CHECK(first_w == 48);
    CHECK(first_pitch == 4.14);

    CHECK(out[0].location.r == 0.0);
    CHECK(out[0].location.phi == 0.0);
    CHECK(out[0].n_patches == 2);  // one patch per photo, offsets collapse at r = 0

    double r_corner = std::hypot(200.0, 200.0) * 4.14 / 1000.0;
    std::vector<double> phis;
    for (size_t i = 1; i < out.size(); i++) {
        CHECK(out[i].location.r == doctest::Approx(r_corner / 2.0).epsilon(1e-12));
        CHECK(out[i].n_patches == 6);  // two photos times three angle offsets
        phis.push_back(out[i].location.phi);
    }
    std::sort(phis.begin(), phis.end());
    REQUIRE(phis.size() == 4);
    CHECK(phis[0] == doctest::Approx(-M_PI / 2.0));
    CHECK(phis[1] == doctest::Approx(0.0));
    CHECK(phis[2] == doctest::Approx(M_PI / 2.0));
    CHECK(phis[3] == doctest::Approx(M_PI));

    for (const LocalEstimate& e : out) {
        CHECK(e.freqs_cy_mm == std::vector<double>{10.0, 20.0, 30.0, 40.0});
        REQUIRE(e.radial.size() == 4);
        REQUIRE(e.tangential.size() == 4);
        // a constant label interpolates to itself at every physical frequency
        for (double v : e.radial) CHECK(v == 0.5);
        for (double v : e.tangential) CHECK(v == 0.5);
    }
}

TEST_CASE("out-of-range labels clamp to the unit interval") {
    std::vector<GrayImage> imgs{GrayImage(200, 200, 0.5, 4.14)};
    GridConfig grid;
    grid.radii = 1;  // center only

    auto hot = collect_local_estimates(imgs, [](const auto&) { return constant_label(1.5); }, grid);
    REQUIRE(hot.size() == 1);
    for (double v : hot[0].radial) CHECK(v == 1.0);
    for (double v : hot[0].tangential) CHECK(v == 1.0);

    auto cold = collect_local_estimates(imgs, [](const auto&) { return constant_label(-0.2); }, grid);
    for (double v : cold[0].radial) CHECK(v == 0.0);
    for (double v : cold[0].tangential) CHECK(v == 0.0);
}

TEST_CASE("mismatched photos and hopeless grids are rejected") {
    PatchEstimator est = [](const auto&) { return constant_label(0.5); };
    GridConfig grid;

    CHECK_THROWS_AS(collect_local_estimates({}, est, grid), InputError);

    std::vector<GrayImage> mixed{GrayImage(200, 200, 0.5, 4.14), GrayImage(200, 200, 0.5, 4.0)};
    CHECK_THROWS_AS(collect_local_estimates(mixed, est, grid), InputError);

    std::vector<GrayImage> ok{GrayImage(200, 200, 0.5, 4.14)};
    GridConfig zero_radii = grid;
    zero_radii.radii = 0;
    CHECK_THROWS_AS(collect_local_estimates(ok, est, zero_radii), std::invalid_argument);
    GridConfig zero_angles = grid;
    zero_angles.angles = 0;
    CHECK_THROWS_AS(collect_local_estimates(ok, est, zero_angles), std::invalid_argument);

    // image smaller than the rotation margin of a single patch
    std::vector<GrayImage> tiny{GrayImage(40, 40, 0.5, 4.14)};
    CHECK_THROWS_AS(collect_local_estimates(tiny, est, grid), InputError);
}

TEST_CASE("gp regression pins noise-free samples and reverts to the prior far away") {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < 12; i++) {
        double r = 2.1 * i / 11.0;
        pts.emplace_back(r, 0.9 - 0.15 * (r / 2.1) * (r / 2.1) - 0.05 * (r / 2.1));
    }
    GpConfig cfg;
    cfg.signal_std = 0.3;
    cfg.lengthscale_mm = 0.3;
    cfg.noise_std = 0.0;
    cfg.jitter = 1e-10;
    GpModel m = gp_fit(pts, cfg);

    double hand_mean = 0.0;
    for (auto& [r, y] : pts) hand_mean += y;
    hand_mean /= double(pts.size());
    CHECK(m.prior_mean == doctest::Approx(hand_mean).epsilon(1e-12));
    CHECK(m.lengthscale == 0.3);
    CHECK(m.noise_var == 0.0);

    std::vector<double> r_q, mean, sd;
    for (auto& [r, y] : pts) r_q.push_back(r);
    gp_predict(m, r_q, mean, sd);
    for (size_t i = 0; i < pts.size(); i++) {
        CHECK(std::abs(mean[i] - pts[i].second) < 1e-6);
        CHECK(sd[i] < 1e-4);  // only the jitter keeps the posterior variance from zero
    }

    gp_predict(m, {50.0}, mean, sd);
    CHECK(mean[0] == doctest::Approx(m.prior_mean).epsilon(1e-12));
    CHECK(sd[0] == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("the hyperparameter search only ever improves the marginal likelihood") {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < 15; i++) {
        double r = 2.4 * i / 14.0;
        pts.emplace_back(r, 0.8 - 0.2 * (r / 2.4) * (r / 2.4) + 0.01 * std::sin(37.0 * r));
    }
    GpConfig base;
    base.signal_std = 0.15;
    base.lengthscale_mm = 0.4;
    base.noise_std = 0.05;
    double lml0 = gp_fit(pts, base).log_marginal;

    GpConfig opt = base;
    opt.optimize = true;
    GpModel m1 = gp_fit(pts, opt);
    CHECK(m1.log_marginal >= lml0 - 1e-12);
    CHECK(m1.lengthscale > 0.0);
    CHECK(m1.noise_var >= 1e-8 * (1.0 - 1e-12));  // the search never drops below its noise floor

    GpModel m2 = gp_fit(pts, opt);
    CHECK(m2.lengthscale == m1.lengthscale);
    CHECK(m2.signal_var == m1.signal_var);
    CHECK(m2.noise_var == m1.noise_var);
    CHECK(m2.log_marginal == m1.log_marginal);
}

TEST_CASE("zero-noise fits reject conflicting duplicates and starved inputs") {
    GpConfig zero;
    zero.noise_std = 0.0;

    std::vector<std::pair<double, double>> bad{{0.5, 0.2}, {0.5, 0.4}, {1.0, 0.3}};
    CHECK_THROWS_AS(gp_fit(bad, zero), NumericError);

    // agreeing duplicates are fine, the jitter keeps the kernel invertible
    std::vector<std::pair<double, double>> ok{{0.5, 0.2}, {0.5, 0.2}, {1.0, 0.3}};
    GpModel m = gp_fit(ok, zero);
    CHECK(std::isfinite(m.log_marginal));

    CHECK_THROWS_AS(gp_fit({{0.1, 0.5}}, GpConfig{}), std::invalid_argument);
}

TEST_CASE("azimuthal bins report sample statistics with the last bin closed") {
    std::vector<double> radii{0.1, 0.15, 0.5, 0.55, 0.6, 1.0};
    std::vector<double> rad{0.2, 0.3, 0.2, 0.3, 0.7, 0.4};
    std::vector<double> tan{0.1, 0.5, 0.25, 0.35, 0.45, 0.8};
    std::vector<LocalEstimate> est;
    for (size_t i = 0; i < radii.size(); i++)
        est.push_back(make_est(radii[i], 0.3 * double(i), {10.0}, {rad[i]}, {tan[i]}));

    auto bins = azimuthal_average(est, {0.0, 0.4, 0.8, 1.0});
    REQUIRE(bins.size() == 3);

    CHECK(bins[0].count == 2);
    CHECK_FALSE(bins[0].single);
    CHECK(bins[0].r == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(bins[0].mean_radial[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(bins[0].std_radial[0] == doctest::Approx(std::sqrt(0.005)).epsilon(1e-12));
    CHECK(bins[0].mean_tangential[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(bins[0].std_tangential[0] == doctest::Approx(std::sqrt(0.08)).epsilon(1e-12));

    CHECK(bins[1].count == 3);
    CHECK(bins[1].r == doctest::Approx(0.55).epsilon(1e-12));
    CHECK(bins[1].mean_radial[0] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(bins[1].std_radial[0] == doctest::Approx(std::sqrt(0.07)).epsilon(1e-12));
    CHECK(bins[1].mean_tangential[0] == doctest::Approx(0.35).epsilon(1e-12));
    CHECK(bins[1].std_tangential[0] == doctest::Approx(0.1).epsilon(1e-12));

    // r = 1.0 sits exactly on the last edge and still lands in the last bin
    CHECK(bins[2].count == 1);
    CHECK(bins[2].single);
    CHECK(bins[2].r == 1.0);
    CHECK(bins[2].mean_radial[0] == 0.4);
    CHECK(bins[2].std_radial[0] == 0.0);
    CHECK(bins[2].mean_tangential[0] == 0.8);
    CHECK(bins[2].std_tangential[0] == 0.0);
}

TEST_CASE("azimuthal statistics are exactly invariant to estimate order") {
    std::vector<double> radii{0.1, 0.15, 0.5, 0.55, 0.6, 1.0};
    std::vector<LocalEstimate> est;
    for (size_t i = 0; i < radii.size(); i++) {
        double v = 0.31 + 0.07 * std::sin(2.3 * double(i));
        double w = 0.62 - 0.05 * std::cos(1.1 * double(i));
        est.push_back(make_est(radii[i], 0.0, {10.0, 20.0}, {v, v * 0.8}, {w, w * 0.9}));
    }
    std::vector<LocalEstimate> shuffled{est[4], est[2], est[5], est[0], est[3], est[1]};

    auto a = azimuthal_average(est, {0.0, 0.4, 0.8, 1.0});
    auto b = azimuthal_average(shuffled, {0.0, 0.4, 0.8, 1.0});
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); i++) {
        CHECK(a[i].r == b[i].r);
        CHECK(a[i].count == b[i].count);
        for (size_t k = 0; k < a[i].mean_radial.size(); k++) {
            CHECK(a[i].mean_radial[k] == b[i].mean_radial[k]);
            CHECK(a[i].std_radial[k] == b[i].std_radial[k]);
            CHECK(a[i].mean_tangential[k] == b[i].mean_tangential[k]);
            CHECK(a[i].std_tangential[k] == b[i].std_tangential[k]);
        }
    }
}

TEST_CASE("empty bins drop out and malformed binning inputs are rejected") {
    std::vector<LocalEstimate> est;
    for (double r : {0.1, 0.15, 0.5}) est.push_back(make_est(r, 0.0, {10.0}, {0.5}, {0.5}));

    // nothing falls in [0, 0.05), so the first interval produces no bin
    auto bins = azimuthal_average(est, {0.0, 0.05, 0.4, 0.8});
    REQUIRE(bins.size() == 2);
    CHECK(bins[0].count == 2);
    CHECK(bins[1].count == 1);

    CHECK_THROWS_AS(azimuthal_average({}, {0.0, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(azimuthal_average(est, {0.0, 0.8, 0.4}), std::invalid_argument);
    CHECK_THROWS_AS(azimuthal_average(est, {0.5}), std::invalid_argument);

    std::vector<LocalEstimate> mixed = est;
    mixed.push_back(make_est(0.2, 0.0, {10.0, 20.0}, {0.5, 0.5}, {0.5, 0.5}));
    CHECK_THROWS_AS(azimuthal_average(mixed, {0.0, 1.0}), std::invalid_argument);
}

TEST_CASE("compensation factors scale and clamp each frequency") {
    auto unit = apply_compensation({1.0, 1.0, 1.0, 1.0});
    CHECK(unit == std::vector<double>{0.98, 0.95, 0.90, 0.83});

    auto mixed = apply_compensation({2.0, 0.5, 0.0, 1.0});
    CHECK(mixed[0] == 1.0);  // 1.96 clamps down
    CHECK(mixed[1] == 0.5 * 0.95);
    CHECK(mixed[2] == 0.0);
    CHECK(mixed[3] == 0.83);

    CHECK(apply_compensation({-0.1}, {0.9})[0] == 0.0);
    CHECK_THROWS_AS(apply_compensation({1.0, 1.0}, {0.9}), std::invalid_argument);
    CHECK_THROWS_AS(apply_compensation({1.0, 1.0}), std::invalid_argument);
}

TEST_CASE("ray charts from a synthetic lens track the analytic curves") {
    auto est = lens_scene();
    ChartConfig cfg;
    cfg.mode = ChartMode::ray;
    cfg.ray_phi = M_PI / 4.0;
    cfg.ray_phi_tol = 0.15;
    cfg.r_points = 200;
    cfg.gp.lengthscale_mm = 0.5;
    cfg.gp.noise_std = 0.0;
    cfg.gp.jitter = 1e-10;

    MtfChart chart = build_chart(est, cfg);
    CHECK(chart.mode == ChartMode::ray);
    CHECK_FALSE(chart.compensated);
    REQUIRE(chart.r_grid.size() == 200);
    CHECK(chart.r_grid.front() == 0.0);
    CHECK(chart.r_grid.back() == doctest::Approx(kRMax).epsilon(1e-12));

    REQUIRE(chart.curves.size() == 8);
    std::vector<double> freqs{10.0, 20.0, 30.0, 40.0};
    double worst = 0.0;
    for (size_t k = 0; k < freqs.size(); k++)
        for (int d = 0; d < 2; d++) {
            const ChartCurve& c = chart.curves[2 * k + size_t(d)];
            CHECK(c.freq_cy_mm == freqs[k]);
            CHECK(c.direction ==
                  (d == 0 ? mtf_core::Direction::radial : mtf_core::Direction::tangential));
            // the ray picks the center plus exactly one of the 16 ring angles
            CHECK(c.samples.size() == 12);
            for (size_t i = 0; i < chart.r_grid.size(); i++)
                worst = std::max(worst,
                                 std::abs(c.mean[i] - lens_truth(chart.r_grid[i], freqs[k], d == 0)));
        }
    CHECK(worst < 1e-3);
}

TEST_CASE("rays with no nearby estimates are rejected") {
    std::vector<LocalEstimate> est;
    for (double r : {0.5, 1.0, 1.5, 2.0})
        est.push_back(make_est(r, M_PI / 2.0, {10.0}, {0.5}, {0.5}));
    ChartConfig cfg;
    cfg.mode = ChartMode::ray;
    cfg.ray_phi = 0.0;
    cfg.ray_phi_tol = 0.15;
    CHECK_THROWS_AS(build_chart(est, cfg), InputError);

    CHECK_THROWS_AS(build_chart({}, ChartConfig{}), std::invalid_argument);
}

TEST_CASE("single-radius data produces a flat chart with an honest spread") {
    std::vector<LocalEstimate> est;
    for (int i = 0; i < 5; i++)
        est.push_back(make_est(0.3, -2.0 + double(i), {10.0, 20.0},
                               {0.50 + 0.02 * i, 0.40 + 0.01 * i},
                               {0.60 - 0.02 * i, 0.30 + 0.02 * i}));
    ChartConfig cfg;
    cfg.r_points = 7;
    MtfChart chart = build_chart(est, cfg);

    REQUIRE(chart.curves.size() == 4);
    CHECK(chart.r_grid.back() == doctest::Approx(0.3).epsilon(1e-12));
    const ChartCurve& c = chart.curves[0];  // 10 cy/mm radial
    CHECK(c.samples.size() == 5);
    for (size_t i = 0; i < chart.r_grid.size(); i++) {
        CHECK(c.mean[i] == doctest::Approx(0.54).epsilon(1e-12));
        CHECK(c.stddev[i] == doctest::Approx(std::sqrt(0.001)).epsilon(1e-12));
    }

    // a lone center estimate cannot set a range, so the axis falls back to 1 mm
    std::vector<LocalEstimate> lone{make_est(0.0, 0.0, {10.0}, {0.7}, {0.6})};
    MtfChart flat = build_chart(lone, cfg);
    CHECK(flat.r_grid.back() == 1.0);
    for (size_t i = 0; i < flat.r_grid.size(); i++) {
        CHECK(flat.curves[0].mean[i] == 0.7);
        CHECK(flat.curves[0].stddev[i] == 0.0);
    }
}

TEST_CASE("azimuthal charts interpolate the bin means exactly without the gp") {
    auto est = line_scene(0.0);
    ChartConfig cfg;
    cfg.mode = ChartMode::azimuthal;
    cfg.azimuthal_bins = 4;
    cfg.azimuthal_use_gp = false;
    cfg.r_points = 5;

    MtfChart chart = build_chart(est, cfg);
    REQUIRE(chart.curves.size() == 4);
    CHECK(chart.r_grid.back() == doctest::Approx(2.1).epsilon(1e-12));
    for (size_t k = 0; k < 2; k++)
        for (int d = 0; d < 2; d++) {
            const ChartCurve& c = chart.curves[2 * k + size_t(d)];
            CHECK(c.samples.size() == est.size());
            for (size_t i = 0; i < chart.r_grid.size(); i++) {
                // piecewise-linear interpolation of a linear profile is exact
                CHECK(c.mean[i] ==
                      doctest::Approx(line_value(k, d == 0, chart.r_grid[i])).epsilon(1e-12));
                // equal ring members leave at most a rounding-level spread
                CHECK(c.stddev[i] < 1e-12);
            }
        }
}

TEST_CASE("the gp and interpolation charts share the raw angular spread") {
    auto est = line_scene(0.01);
    ChartConfig with_gp;
    with_gp.mode = ChartMode::azimuthal;
    with_gp.azimuthal_bins = 4;
    with_gp.azimuthal_use_gp = true;
    with_gp.r_points = 60;
    ChartConfig without = with_gp;
    without.azimuthal_use_gp = false;

    MtfChart a = build_chart(est, with_gp);
    MtfChart b = build_chart(est, without);
    REQUIRE(a.curves.size() == b.curves.size());
    for (size_t c = 0; c < a.curves.size(); c++) {
        // the band always comes from the bin stds, whatever draws the mean
        for (size_t i = 0; i < a.r_grid.size(); i++)
            CHECK(a.curves[c].stddev[i] == b.curves[c].stddev[i]);
        bool radial = c % 2 == 0;
        for (size_t i = 0; i < a.r_grid.size(); i++)
            CHECK(std::abs(a.curves[c].mean[i] - line_value(c / 2, radial, a.r_grid[i])) < 0.1);
    }
}

TEST_CASE("compensated charts scale the plain curves in place") {
    auto est = line_scene(0.01);
    ChartConfig plain_cfg;
    plain_cfg.mode = ChartMode::azimuthal;
    plain_cfg.azimuthal_bins = 4;
    plain_cfg.azimuthal_use_gp = false;
    plain_cfg.r_points = 9;
    ChartConfig comp_cfg = plain_cfg;
    comp_cfg.compensate = true;
    comp_cfg.comp_factors = {0.9, 0.8};

    MtfChart plain = build_chart(est, plain_cfg);
    MtfChart comp = build_chart(est, comp_cfg);
    CHECK(comp.compensated);
    for (size_t c = 0; c < comp.curves.size(); c++) {
        double f = comp_cfg.comp_factors[c / 2];
        for (size_t i = 0; i < comp.r_grid.size(); i++) {
            CHECK(comp.curves[c].mean[i] == std::clamp(plain.curves[c].mean[i] * f, 0.0, 1.0));
            CHECK(comp.curves[c].stddev[i] == plain.curves[c].stddev[i] * f);
        }
    }

    ChartConfig bad = plain_cfg;
    bad.compensate = true;  // four default factors against two frequencies
    CHECK_THROWS_AS(build_chart(est, bad), std::invalid_argument);
}

TEST_CASE("chart files come out as csv json and svg") {
    auto est = line_scene(0.0);
    ChartConfig cfg;
    cfg.mode = ChartMode::azimuthal;
    cfg.azimuthal_bins = 4;
    cfg.azimuthal_use_gp = false;
    cfg.r_points = 5;
    MtfChart chart = build_chart(est, cfg);
    chart.lens_id = "test lens";
    chart.aperture = 2.8;
    chart.n_photos = 1;

    fs::path dir = fs::temp_directory_path() / "lensmtf_aggregate_out";
    fs::create_directories(dir);

    fs::path csv = dir / "chart.csv";
    write_chart_csv(chart, csv.string());
    std::vector<std::string> lines;
    {
        std::ifstream in(csv);
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
    }
    REQUIRE(lines.size() == 1 + chart.curves.size() * chart.r_grid.size());
    CHECK(lines[0] == "r_mm,direction,freq_cy_mm,mtf_mean,mtf_std,n_samples,compensated");
    std::vector<std::string> fields;
    {
        std::stringstream ss(lines[1]);
        std::string tok;
        while (std::getline(ss, tok, ',')) fields.push_back(tok);
    }
    REQUIRE(fields.size() == 7);
    CHECK(std::stod(fields[0]) == 0.0);
    CHECK(fields[1] == "radial");
    CHECK(fields[2] == "10.0");
    CHECK(std::stod(fields[3]) == doctest::Approx(chart.curves[0].mean[0]).epsilon(1e-5));
    CHECK(fields[5] == std::to_string(est.size()));
    CHECK(fields[6] == "0");

    fs::path jsonp = dir / "chart.json";
    write_chart_json(chart, jsonp.string());
    nlohmann::json j;
    {
        std::ifstream in(jsonp);
        in >> j;
    }
    CHECK(j["lens_id"] == "test lens");
    CHECK(j["aperture"] == 2.8);
    CHECK(j["mode"] == "azimuthal");
    CHECK(j["compensated"] == false);
    REQUIRE(j["r_grid_mm"].size() == 5);
    REQUIRE(j["curves"].size() == 4);
    CHECK(j["curves"][0]["direction"] == "radial");
    CHECK(j["curves"][0]["freq_cy_mm"] == 10.0);
    CHECK(j["curves"][0]["mean"].size() == 5);
    REQUIRE(j["curves"][0]["samples"].size() == est.size());
    CHECK(j["curves"][0]["samples"][0].size() == 2);

    fs::path svgp = dir / "chart.svg";
    write_chart_svg(chart, svgp.string());
    std::string svg = slurp(svgp);
    CHECK(count_occurrences(svg, "<svg ") == 1);
    CHECK(count_occurrences(svg, "</svg>") == 1);
    CHECK(count_occurrences(svg, "<polyline") == chart.curves.size());
    CHECK(count_occurrences(svg, "stroke-dasharray") == 2);  // one per radial curve
    CHECK(svg.find("field radius r (mm)") != std::string::npos);
    CHECK(svg.find(">MTF</text>") != std::string::npos);
    CHECK(svg.find("10 cy/mm") != std::string::npos);
    CHECK(svg.find("solid: tangential") != std::string::npos);
    CHECK(svg.find("dashed: radial") != std::string::npos);

    CHECK_THROWS_AS(write_chart_csv(chart, "/no/such/dir/chart.csv"), InputError);
    CHECK_THROWS_AS(write_chart_json(chart, "/no/such/dir/chart.json"), InputError);
    CHECK_THROWS_AS(write_chart_svg(chart, "/no/such/dir/chart.svg"), InputError);

    fs::remove_all(dir);
}
