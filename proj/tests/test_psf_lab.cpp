#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "lensmtf/pgm_io.hpp"
#include "lensmtf/psf_lab.hpp"

using namespace lensmtf;
using geometry::GrayImage;
namespace fs = std::filesystem;

namespace {

void add_spot(GrayImage& img, double cx, double cy, double amp, double sigma) {
    int x0 = std::max(0, int(cx) - 12), x1 = std::min(img.width - 1, int(cx) + 12);
    int y0 = std::max(0, int(cy) - 12), y1 = std::min(img.height - 1, int(cy) + 12);
    for (int y = y0; y <= y1; y++)
        for (int x = x0; x <= x1; x++) {
            double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            img.at(x, y) += amp * std::exp(-d2 / (2.0 * sigma * sigma));
        }
}

} // namespace

TEST_CASE("point sources are found with sub-pixel accuracy in row-major order") {
    GrayImage panel(520, 400, 0.02, 4.14);
    psf_lab::PanelSpec spec;
    spec.image_spacing_px = 120.0;

    std::vector<psf_lab::Centroid> truth;
    for (int row = 0; row < 3; row++)
        for (int col = 0; col < 4; col++) {
            double cx = 70.0 + 120.0 * col + 0.3 * (col % 2);
            double cy = 70.0 + 120.0 * row - 0.2 * (row % 2);
            add_spot(panel, cx, cy, 0.8, 2.0);
            truth.push_back({cx, cy});
        }

    std::vector<psf_lab::Centroid> got = psf_lab::detect_psf_centroids(panel, spec);
    REQUIRE(got.size() == truth.size());
    for (size_t i = 0; i < got.size(); i++) {
        CHECK(got[i].x == doctest::Approx(truth[i].x).epsilon(0.0).scale(1.0).epsilon(0.002));
        CHECK(std::abs(got[i].x - truth[i].x) < 0.1);
        CHECK(std::abs(got[i].y - truth[i].y) < 0.1);
    }
}

TEST_CASE("spots closer than half the expected spacing are dropped as merged") {
    GrayImage panel(520, 400, 0.02, 4.14);
    psf_lab::PanelSpec spec;
    spec.image_spacing_px = 120.0;
    add_spot(panel, 100.0, 100.0, 0.8, 2.0);
    add_spot(panel, 380.0, 100.0, 0.8, 2.0);
    // a split double spot: both members go
    add_spot(panel, 240.0, 260.0, 0.8, 2.0);
    add_spot(panel, 280.0, 260.0, 0.8, 2.0);

    std::vector<psf_lab::Centroid> got = psf_lab::detect_psf_centroids(panel, spec);
    REQUIRE(got.size() == 2);
    CHECK(got[0].y == doctest::Approx(100.0).epsilon(0.01));
    CHECK(got[1].y == doctest::Approx(100.0).epsilon(0.01));
}

TEST_CASE("an empty panel image yields an input error") {
    GrayImage flat(200, 200, 0.05, 4.14);
    CHECK_THROWS_AS(psf_lab::detect_psf_centroids(flat, {}), InputError);
}

TEST_CASE("segmentation thresholds against corner background statistics") {
    // constant background 0.10 in the corners puts the threshold at exactly 0.10
    GrayImage patch(21, 21, 0.10, 4.14);
    patch.at(10, 10) = 0.60;
    patch.at(11, 10) = 0.30;
    patch.at(9, 10) = 0.09;  // below background, must vanish

    std::vector<double> kernel = psf_lab::segment_psf(patch);
    CHECK(kernel[10 * 21 + 10] == doctest::Approx(0.50).epsilon(1e-12));
    CHECK(kernel[10 * 21 + 11] == doctest::Approx(0.20).epsilon(1e-12));
    CHECK(kernel[10 * 21 + 9] == 0.0);
    CHECK(kernel[0] == 0.0);  // background maps to zero after mean subtraction
}

TEST_CASE("segmentation threshold sits four sigmas above the corner mean") {
    // corner pixels alternate mu +/- delta: mean 0.10, population std 0.0125,
    // so the threshold is 0.15
    GrayImage patch(21, 21, 0.0, 4.14);
    int flip = 0;
    for (int y = 0; y < 21; y++)
        for (int x = 0; x < 21; x++) {
            bool corner = (x < 5 || x >= 16) && (y < 5 || y >= 16);
            patch.at(x, y) = corner ? (flip++ % 2 ? 0.1125 : 0.0875) : 0.0;
        }
    patch.at(10, 10) = 0.149;  // below threshold
    patch.at(10, 11) = 0.151;  // above threshold

    std::vector<double> kernel = psf_lab::segment_psf(patch);
    CHECK(kernel[10 * 21 + 10] == 0.0);
    CHECK(kernel[11 * 21 + 10] == doctest::Approx(0.151 - 0.1).epsilon(1e-9));
}

TEST_CASE("segmentation refuses saturated patches") {
    GrayImage patch(21, 21, 0.1, 4.14);
    patch.at(10, 10) = 1.0;
    CHECK_THROWS_AS(psf_lab::segment_psf(patch), psf_lab::SaturationError);
}

TEST_CASE("normalization forces unit mass and rejects empty kernels") {
    std::vector<double> k{1.0, 3.0, 0.0, 4.0};
    std::vector<double> n = psf_lab::normalize_psf(k);
    CHECK(n[0] == doctest::Approx(0.125));
    CHECK(n[1] == doctest::Approx(0.375));
    CHECK(n[3] == doctest::Approx(0.5));
    CHECK_THROWS_AS(psf_lab::normalize_psf(std::vector<double>(9, 0.0)), NumericError);
}

TEST_CASE("exposure selection takes the longest unsaturated exposure") {
    GrayImage p(21, 21, 0.2, 4.14);
    std::vector<psf_lab::ExposurePatch> stack;
    for (int i = 0; i < 4; i++) stack.push_back({p, i >= 2, i});

    const psf_lab::ExposurePatch& best = psf_lab::select_best_exposure(stack);
    CHECK(best.exposure_index == 1);

    for (auto& e : stack) e.saturated = true;
    CHECK_THROWS_AS(psf_lab::select_best_exposure(stack), InputError);
    CHECK_THROWS_AS(psf_lab::select_best_exposure({}), std::invalid_argument);
}

TEST_CASE("averaging exposures reduces iid noise by sqrt(n)") {
    Rng rng(17);
    const double sigma = 0.02;
    std::vector<GrayImage> noisy;
    for (int i = 0; i < 10; i++) {
        GrayImage p(31, 31, 0.5, 4.14);
        for (double& v : p.data) v += sigma * rng.normal();
        noisy.push_back(std::move(p));
    }
    GrayImage mean = psf_lab::average_exposures(noisy);
    double resid2 = 0.0;
    for (double v : mean.data) resid2 += (v - 0.5) * (v - 0.5);
    double resid = std::sqrt(resid2 / double(mean.data.size()));
    CHECK(resid == doctest::Approx(sigma / std::sqrt(10.0)).epsilon(0.10));

    GrayImage other(30, 31, 0.5, 4.14);
    CHECK_THROWS_AS(psf_lab::average_exposures({noisy[0], other}), std::invalid_argument);
}

TEST_CASE("two-Gaussian synthesis: mass, closed-form profile, axis swap") {
    psf_lab::TwoGaussianParams iso;
    iso.sigma_core_u = iso.sigma_core_v = 1.0;
    iso.sigma_wing_u = iso.sigma_wing_v = 2.0;
    iso.weight_core = 1.0;
    std::vector<double> k = psf_lab::synth_two_gaussian_psf(iso, 15);

    double sum = 0.0;
    for (double v : k) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

    // pure core: sample ratios follow exp(-d^2 / 2)
    double c = k[7 * 15 + 7];
    CHECK(k[7 * 15 + 9] / c == doctest::Approx(std::exp(-2.0)).epsilon(1e-9));
    CHECK(k[5 * 15 + 7] / c == doctest::Approx(std::exp(-2.0)).epsilon(1e-9));

    // collapse: equal core and wing sigmas make the weight irrelevant
    psf_lab::TwoGaussianParams col = iso;
    col.sigma_wing_u = col.sigma_wing_v = 1.0;
    col.weight_core = 0.3;
    std::vector<double> kc = psf_lab::synth_two_gaussian_psf(col, 15);
    for (size_t i = 0; i < kc.size(); i++) CHECK(std::abs(kc[i] - k[i]) < 1e-15);

    // a quarter-turn rotation of an anisotropic kernel is its transpose
    psf_lab::TwoGaussianParams an;
    an.sigma_core_u = 1.0;
    an.sigma_core_v = 3.0;
    an.sigma_wing_u = 1.5;
    an.sigma_wing_v = 3.5;
    an.weight_core = 0.6;
    std::vector<double> a0 = psf_lab::synth_two_gaussian_psf(an, 25);
    an.rotation = M_PI / 2;
    std::vector<double> a90 = psf_lab::synth_two_gaussian_psf(an, 25);
    for (int v = 0; v < 25; v++)
        for (int u = 0; u < 25; u++)
            CHECK(a90[size_t(v) * 25 + u] == doctest::Approx(a0[size_t(u) * 25 + v]).epsilon(1e-9));
}

TEST_CASE("two-Gaussian synthesis rejects invalid parameter sets") {
    psf_lab::TwoGaussianParams p;
    CHECK_THROWS_AS(psf_lab::synth_two_gaussian_psf(p, 14), std::invalid_argument);  // even P
    p.sigma_wing_u = 0.5;  // narrower than the core
    CHECK_THROWS_AS(psf_lab::synth_two_gaussian_psf(p, 21), std::invalid_argument);
    p.sigma_wing_u = 5.0;  // support does not fit
    CHECK_THROWS_AS(psf_lab::synth_two_gaussian_psf(p, 21), std::invalid_argument);
}

TEST_CASE("blurring a step edge yields the Gaussian error-function profile") {
    const int P = 21, W = 80, edge = 40;
    psf_lab::TwoGaussianParams p;
    p.sigma_core_u = p.sigma_core_v = 2.0;
    p.sigma_wing_u = p.sigma_wing_v = 3.0;
    p.weight_core = 1.0;
    std::vector<double> k = psf_lab::synth_two_gaussian_psf(p, P);

    GrayImage sharp(W, W, 0.0, 4.14);
    for (int y = 0; y < W; y++)
        for (int x = edge; x < W; x++) sharp.at(x, y) = 1.0;

    Rng rng(1);
    GrayImage blurred = psf_lab::blur_patch(sharp, k, P, 0.0, rng);
    CHECK(blurred.width == W - P + 1);
    CHECK(blurred.height == W - P + 1);

    // independent 1-D oracle: a step blurred by the kernel's horizontal marginal
    // is the discrete tail sum of that marginal
    std::vector<double> g1(P, 0.0);
    double z = 0.0;
    for (int d = -10; d <= 10; d++) z += (g1[d + 10] = std::exp(-d * d / 8.0));
    for (double& v : g1) v /= z;

    int mid = blurred.height / 2;
    for (int x = 0; x < blurred.width; x++) {
        int center = x + (P - 1) / 2;  // source position of this output pixel
        double tail = 0.0;
        for (int d = -10; d <= 10; d++)
            if (center + d >= edge) tail += g1[d + 10];
        CHECK(std::abs(blurred.at(x, mid) - tail) < 1e-12);

        // the continuum erf profile holds only to the midpoint-rule error of
        // point-sampled kernels, (1/24) z phi(z) / sigma^2, about 2.4e-3 here
        double want = 0.5 * (1.0 + std::erf((center - edge + 0.5) / (2.0 * std::sqrt(2.0))));
        CHECK(std::abs(blurred.at(x, mid) - want) < 3e-3);
    }
}

TEST_CASE("blur noise is clipped to the value range") {
    GrayImage sharp(40, 40, 1.0, 4.14);
    std::vector<double> delta(21 * 21, 0.0);
    delta[10 * 21 + 10] = 1.0;
    Rng rng(9);
    GrayImage noisy = psf_lab::blur_patch(sharp, delta, 21, 0.5, rng);
    double mx = 0.0, mn = 1.0;
    for (double v : noisy.data) {
        mx = std::max(mx, v);
        mn = std::min(mn, v);
    }
    CHECK(mx <= 1.0);
    CHECK(mn >= 0.0);
    CHECK(mx == 1.0);  // with sigma 0.5 the clip is certainly hit
}

TEST_CASE("PSF datasets survive a save/load round trip") {
    psf_lab::PsfDataset ds;
    ds.lens_id = "test-50mm";
    ds.aperture = 2.8;
    ds.P = 15;
    ds.panel.image_spacing_px = 105.0;
    Rng rng(4);
    for (int i = 0; i < 3; i++) {
        psf_lab::TwoGaussianParams p;
        p.sigma_core_u = 0.8 + 0.2 * i;
        p.sigma_core_v = 1.0;
        p.sigma_wing_u = 2.0;
        p.sigma_wing_v = 2.0;
        psf_lab::PsfRecord rec;
        rec.P = 15;
        rec.kernel = psf_lab::synth_two_gaussian_psf(p, 15);
        rec.location = {0.5 * i, 0.3 * i - 0.2};
        rec.settings = {"test-50mm", 2.8, i};
        ds.records.push_back(std::move(rec));
    }

    fs::path dir = fs::temp_directory_path() / "lensmtf_psf_ds_test";
    fs::remove_all(dir);
    psf_lab::save_psf_dataset(dir.string(), ds);
    psf_lab::PsfDataset back = psf_lab::load_psf_dataset(dir.string());

    CHECK(back.lens_id == "test-50mm");
    CHECK(back.aperture == 2.8);
    CHECK(back.P == 15);
    CHECK(back.panel.image_spacing_px == 105.0);
    REQUIRE(back.records.size() == 3);
    for (size_t i = 0; i < 3; i++) {
        CHECK(back.records[i].location.r == doctest::Approx(ds.records[i].location.r));
        CHECK(back.records[i].location.phi == doctest::Approx(ds.records[i].location.phi));
        CHECK(back.records[i].settings.exposure_index == int(i));
        double sum = 0.0, diff = 0.0;
        for (size_t j = 0; j < back.records[i].kernel.size(); j++) {
            sum += back.records[i].kernel[j];
            diff = std::max(diff, std::abs(back.records[i].kernel[j] - ds.records[i].kernel[j]));
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));  // renormalized on load
        CHECK(diff < 1e-6);                                 // float32 blob rounding
    }

    CHECK_THROWS_AS(psf_lab::load_psf_dataset("/nonexistent/dataset"), InputError);
}
