#include "doctest.h"

#include <cmath>

#include "lensmtf/kernel_regression.hpp"

using namespace lensmtf;
using geometry::GlobalCoord;
using kernel_regression::KrConfig;
using psf_lab::PsfRecord;

namespace {

PsfRecord grid_record(int i, int j, int P) {
    psf_lab::TwoGaussianParams p;
    double rr = std::hypot(i - 2.0, j - 2.0);
    p.sigma_core_u = 0.7 + 0.15 * rr;
    p.sigma_core_v = 0.8 + 0.10 * rr;
    p.sigma_wing_u = p.sigma_core_u + 1.2;
    p.sigma_wing_v = p.sigma_core_v + 1.0;
    p.weight_core = 0.65;
    p.rotation = 0.2 * (i + j);
    PsfRecord rec;
    rec.P = P;
    rec.kernel = psf_lab::synth_two_gaussian_psf(p, P);
    rec.location = {0.9 * rr, std::atan2(2.0 - j, i - 2.0)};
    return rec;
}

double second_moment_u(const PsfRecord& rec) {
    double m = 0.0;
    int half = rec.P / 2;
    for (int v = 0; v < rec.P; v++)
        for (int u = 0; u < rec.P; u++) m += rec.at(u, v) * (u - half) * (u - half);
    return m;
}

double second_moment_v(const PsfRecord& rec) {
    double m = 0.0;
    int half = rec.P / 2;
    for (int v = 0; v < rec.P; v++)
        for (int u = 0; u < rec.P; u++) m += rec.at(u, v) * (v - half) * (v - half);
    return m;
}

} // namespace

TEST_CASE("squared-exponential kernel values") {
    CHECK(kernel_regression::se_kernel(0.0, 2.0) == 1.0);
    CHECK(kernel_regression::se_kernel(2.0, 2.0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(kernel_regression::se_kernel(-2.0, 2.0) == kernel_regression::se_kernel(2.0, 2.0));
}

TEST_CASE("a single delta record regresses to the separable smoothing bump") {
    const int P = 21;
    PsfRecord rec;
    rec.P = P;
    rec.kernel.assign(size_t(P) * P, 0.0);
    rec.kernel[10 * P + 10] = 1.0;
    rec.location = {0.0, 0.0};

    KrConfig cfg;
    std::vector<double> out = kernel_regression::kr_naive({rec}, {0.0, 0.0}, cfg);

    double sum = 0.0;
    for (double v : out) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

    // expected: K_u(u-10) K_v(v-10), normalized; position weights cancel
    double z = 0.0;
    std::vector<double> want(out.size());
    for (int v = 0; v < P; v++)
        for (int u = 0; u < P; u++) {
            double w = kernel_regression::se_kernel(u - 10.0, cfg.ell_u) *
                       kernel_regression::se_kernel(v - 10.0, cfg.ell_v);
            want[size_t(v) * P + u] = w;
            z += w;
        }
    for (size_t i = 0; i < out.size(); i++) CHECK(std::abs(out[i] - want[i] / z) < 1e-12);
}

TEST_CASE("identical records at symmetric positions change nothing") {
    const int P = 15;
    psf_lab::TwoGaussianParams p;
    std::vector<double> k = psf_lab::synth_two_gaussian_psf(p, P);
    PsfRecord a{P, k, {1.0, 0.3}, {}};
    PsfRecord b{P, k, {1.0, -0.3}, {}};  // same r, mirrored phi

    KrConfig cfg;
    std::vector<double> one = kernel_regression::kr_naive({a}, {1.0, 0.0}, cfg);
    std::vector<double> two = kernel_regression::kr_naive({a, b}, {1.0, 0.0}, cfg);
    for (size_t i = 0; i < one.size(); i++) CHECK(std::abs(one[i] - two[i]) < 1e-12);
}

TEST_CASE("position weights wrap around the angular seam") {
    const int P = 15;
    psf_lab::TwoGaussianParams narrow, wide;
    wide.sigma_core_u = wide.sigma_core_v = 1.6;
    PsfRecord near_seam{P, psf_lab::synth_two_gaussian_psf(narrow, P), {1.0, M_PI - 0.05}, {}};
    PsfRecord far_away{P, psf_lab::synth_two_gaussian_psf(wide, P), {1.0, 0.0}, {}};

    // a query just across the seam is angularly close to near_seam
    KrConfig cfg;
    std::vector<double> out =
        kernel_regression::kr_naive({near_seam, far_away}, {1.0, -M_PI + 0.05}, cfg);
    PsfRecord as_rec{P, out, {}, {}};
    PsfRecord narrow_rec{P, near_seam.kernel, {}, {}};
    PsfRecord wide_rec{P, far_away.kernel, {}, {}};
    double got = second_moment_u(as_rec);
    // smoothing widens everything; compare against the two candidates smoothed alike
    std::vector<double> just_narrow = kernel_regression::kr_naive({near_seam}, {1.0, -M_PI + 0.05}, cfg);
    std::vector<double> just_wide = kernel_regression::kr_naive({far_away}, {1.0, -M_PI + 0.05}, cfg);
    double m_narrow = second_moment_u({P, just_narrow, {}, {}});
    double m_wide = second_moment_u({P, just_wide, {}, {}});
    CHECK(std::abs(got - m_narrow) < 0.5 * std::abs(m_wide - m_narrow));
}

TEST_CASE("rotation to the common frame preserves isotropic kernels") {
    // interpolation error falls with kernel width (peak curvature); sigma 2.5
    // sits comfortably under the asserted bound, sharper kernels would not
    const int P = 31;
    psf_lab::TwoGaussianParams iso;
    iso.sigma_core_u = iso.sigma_core_v = 2.5;
    iso.sigma_wing_u = iso.sigma_wing_v = 5.0;
    std::vector<double> k = psf_lab::synth_two_gaussian_psf(iso, P);

    std::vector<PsfRecord> recs;
    for (double phi : {0.0, 0.7, -2.1, 3.0}) recs.push_back({P, k, {1.0, phi}, {}});
    kernel_regression::RotatedPsfDataset rot = kernel_regression::rotate_to_common_frame(recs);
    REQUIRE(rot.records.size() == 4);
    for (const PsfRecord& r : rot.records) {
        double sum = 0.0, diff = 0.0;
        for (size_t i = 0; i < r.kernel.size(); i++) {
            sum += r.kernel[i];
            diff = std::max(diff, std::abs(r.kernel[i] - k[i]));
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(diff < 1e-3);  // bilinear resampling tolerance
    }
    // locations are retained
    CHECK(rot.records[1].location.phi == doctest::Approx(0.7));
}

TEST_CASE("rotation turns a tangentially elongated kernel into a vertical one") {
    const int P = 25;
    psf_lab::TwoGaussianParams an;
    an.sigma_core_u = 2.8;  // elongated along the horizontal grid axis
    an.sigma_core_v = 0.9;
    an.sigma_wing_u = 3.0;
    an.sigma_wing_v = 1.0;
    an.weight_core = 0.8;
    PsfRecord rec{P, psf_lab::synth_two_gaussian_psf(an, P), {1.0, M_PI / 2}, {}};

    kernel_regression::RotatedPsfDataset rot = kernel_regression::rotate_to_common_frame({rec});
    double mu = second_moment_u(rot.records[0]);
    double mv = second_moment_v(rot.records[0]);
    CHECK(mv > 2.0 * mu);  // the elongation moved to the vertical axis
}

TEST_CASE("separable fast path equals the direct evaluation") {
    const int P = 31;
    std::vector<PsfRecord> recs;
    for (int i = 0; i < 5; i++)
        for (int j = 0; j < 5; j++) recs.push_back(grid_record(i, j, P));
    kernel_regression::RotatedPsfDataset rot = kernel_regression::rotate_to_common_frame(recs);

    KrConfig cfg;
    Rng rng(12);
    double worst = 0.0;
    for (int q = 0; q < 25; q++) {
        GlobalCoord query{rng.uniform(0.0, 2.6), rng.uniform(-M_PI, M_PI)};
        std::vector<double> naive = kernel_regression::kr_naive(rot.records, query, cfg);
        std::vector<double> fast = kernel_regression::kr_fast(rot, query, cfg);
        REQUIRE(naive.size() == fast.size());
        for (size_t i = 0; i < naive.size(); i++)
            worst = std::max(worst, std::abs(naive[i] - fast[i]));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("fast path stays exact with aggressive truncation lengthscales") {
    const int P = 21;
    std::vector<PsfRecord> recs;
    for (int i = 0; i < 3; i++) recs.push_back(grid_record(i, i, P));
    kernel_regression::RotatedPsfDataset rot = kernel_regression::rotate_to_common_frame(recs);

    KrConfig cfg;
    cfg.ell_u = cfg.ell_v = 0.2;  // almost everything truncates
    GlobalCoord query{0.9, 0.4};
    std::vector<double> naive = kernel_regression::kr_naive(rot.records, query, cfg);
    std::vector<double> fast = kernel_regression::kr_fast(rot, query, cfg);
    double sum = 0.0;
    for (size_t i = 0; i < fast.size(); i++) {
        sum += fast[i];
        CHECK(std::abs(naive[i] - fast[i]) < 1e-6);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("balanced resampling is deterministic and spans the field") {
    const int P = 21;
    std::vector<PsfRecord> recs;
    for (int i = 0; i < 4; i++)
        for (int j = 0; j < 4; j++) recs.push_back(grid_record(i, j, P));
    kernel_regression::RotatedPsfDataset rot = kernel_regression::rotate_to_common_frame(recs);

    double r_max = 0.0;
    for (const PsfRecord& r : rot.records) r_max = std::max(r_max, r.location.r);

    std::vector<PsfRecord> a = kernel_regression::resample_balanced(rot, 40, 99, {});
    std::vector<PsfRecord> b = kernel_regression::resample_balanced(rot, 40, 99, {});
    std::vector<PsfRecord> c = kernel_regression::resample_balanced(rot, 40, 100, {});
    REQUIRE(a.size() == 40);
    bool identical = true, distinct = false;
    for (size_t i = 0; i < 40; i++) {
        identical = identical && a[i].kernel == b[i].kernel &&
                    a[i].location.r == b[i].location.r && a[i].location.phi == b[i].location.phi;
        distinct = distinct || a[i].location.r != c[i].location.r;
        CHECK(a[i].location.r >= 0.0);
        CHECK(a[i].location.r <= r_max + 1e-12);
        CHECK(a[i].location.phi > -M_PI - 1e-12);
        CHECK(a[i].location.phi <= M_PI + 1e-12);
        double sum = 0.0;
        for (double v : a[i].kernel) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(identical);
    CHECK(distinct);
}
