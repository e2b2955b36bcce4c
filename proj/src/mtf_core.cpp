#include "lensmtf/mtf_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>

#include <fftw3.h>

namespace lensmtf::mtf_core {

using geometry::GrayImage;
using psf_lab::blur_patch;

namespace {

// FFTW planning is not thread-safe; execution on distinct arrays is.
std::mutex plan_mutex;

fftw_plan plan_for(int n, fftw_complex* in, fftw_complex* out) {
    static std::map<int, fftw_plan> cache;
    std::lock_guard<std::mutex> lock(plan_mutex);
    auto it = cache.find(n);
    if (it == cache.end()) {
        fftw_plan p = fftw_plan_dft_2d(n, n, in, out, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
        it = cache.emplace(n, p).first;
    }
    return it->second;
}

double g_dc_scale = 1.0;

} // namespace

void set_debug_dc_scale(double scale) { g_dc_scale = scale; }
double debug_dc_scale() { return g_dc_scale; }

OtfSpectrum otf_of_psf(const std::vector<double>& psf, int P, int pad_to) {
    if (int(psf.size()) != P * P) throw std::invalid_argument("otf_of_psf: kernel size mismatch");
    if (pad_to < P) throw std::invalid_argument("otf_of_psf: pad_to smaller than kernel");
    const int n = pad_to;

    std::vector<std::complex<double>> in(size_t(n) * n, 0.0);
    // place the kernel center at the origin (wrapped) so phase refers to the centered PSF
    int half = P / 2;
    for (int v = 0; v < P; v++)
        for (int u = 0; u < P; u++) {
            int iu = ((u - half) % n + n) % n;
            int iv = ((v - half) % n + n) % n;
            in[size_t(iv) * n + iu] = psf[size_t(v) * P + u];
        }

    OtfSpectrum otf;
    otf.n = n;
    otf.f.resize(in.size());
    fftw_complex* fin = reinterpret_cast<fftw_complex*>(in.data());
    fftw_complex* fout = reinterpret_cast<fftw_complex*>(otf.f.data());
    fftw_plan plan = plan_for(n, fin, fout);
    fftw_execute_dft(plan, fin, fout);

    std::complex<double> dc = otf.f[0] * g_dc_scale;
    if (std::abs(dc) == 0.0) throw NumericError("otf_of_psf: zero DC component");
    for (auto& z : otf.f) z /= dc;
    if (g_dc_scale == 1.0) otf.f[0] = 1.0;  // dc/dc, exact by definition
    return otf;
}

MtfCurve mtf_slice(const OtfSpectrum& otf, Direction direction) {
    MtfCurve curve;
    curve.direction = direction;
    curve.unit = FreqUnit::cycles_per_pixel;
    int half = otf.n / 2;
    curve.samples.reserve(half + 1);
    for (int i = 0; i <= half; i++) {
        std::complex<double> z =
            direction == Direction::radial ? otf.at_freq(i, 0) : otf.at_freq(0, i);
        curve.samples.emplace_back(double(i) / otf.n, std::abs(z));
    }
    return curve;
}

std::vector<double> mtf_at_cycles_per_mm(const MtfCurve& curve, double pixel_pitch_um,
                                         const std::vector<double>& freqs_cy_mm) {
    if (curve.unit != FreqUnit::cycles_per_pixel)
        throw std::invalid_argument("mtf_at_cycles_per_mm: curve must be in cycles/pixel");
    if (curve.samples.empty()) throw std::invalid_argument("mtf_at_cycles_per_mm: empty curve");
    if (!(pixel_pitch_um > 0.0)) throw std::invalid_argument("mtf_at_cycles_per_mm: bad pitch");

    std::vector<std::pair<double, double>> pts;
    if (curve.samples.front().first > 0.0) pts.emplace_back(0.0, 1.0);
    pts.insert(pts.end(), curve.samples.begin(), curve.samples.end());

    double nyq = nyquist_cycles_per_mm(pixel_pitch_um);
    std::vector<double> out;
    out.reserve(freqs_cy_mm.size());
    for (double fmm : freqs_cy_mm) {
        if (fmm < 0.0 || fmm > nyq * (1.0 + 1e-12))
            throw std::invalid_argument("mtf_at_cycles_per_mm: frequency above Nyquist");
        double fpx = fmm * pixel_pitch_um / 1000.0;
        auto it = std::lower_bound(pts.begin(), pts.end(), fpx,
                                   [](const auto& s, double v) { return s.first < v; });
        if (it == pts.begin()) {
            out.push_back(it->second);
        } else if (it == pts.end()) {
            out.push_back(pts.back().second);
        } else {
            auto [f1, m1] = *it;
            auto [f0, m0] = *(it - 1);
            double t = (fpx - f0) / (f1 - f0);
            out.push_back(m0 + t * (m1 - m0));
        }
    }
    return out;
}

namespace {

// parabolic refinement of a sampled extremum at index m
double refine_extremum(const std::vector<double>& y, size_t m) {
    if (m == 0 || m + 1 >= y.size()) return y[m];
    double a = y[m - 1], b = y[m], c = y[m + 1];
    double denom = a - 2.0 * b + c;
    if (denom == 0.0) return b;
    double delta = 0.5 * (a - c) / denom;
    if (std::abs(delta) > 1.0) return b;
    return b - 0.25 * (a - c) * delta;
}

double contrast_of(const std::vector<double>& signal, size_t lo, size_t hi) {
    size_t imax = lo, imin = lo;
    for (size_t i = lo; i < hi; i++) {
        if (signal[i] > signal[imax]) imax = i;
        if (signal[i] < signal[imin]) imin = i;
    }
    double vmax = refine_extremum(signal, imax);
    double vmin = refine_extremum(signal, imin);
    return (vmax - vmin) / (vmax + vmin);
}

} // namespace

double photometric_mtf_oracle(const std::vector<double>& psf, int P, double f, Direction direction) {
    if (int(psf.size()) != P * P)
        throw std::invalid_argument("photometric_mtf_oracle: kernel size mismatch");
    if (!(f > 0.0 && f <= 0.5))
        throw std::invalid_argument("photometric_mtf_oracle: frequency must be in (0, 0.5]");

    const double period = 1.0 / f;
    const int want_periods = 10;  // 8 interior plus one guard on each side
    long length = long(std::ceil(want_periods * period)) + P;
    const long max_length = 1 << 15;
    if (length > max_length)
        throw std::invalid_argument("photometric_mtf_oracle: fewer than 8 interior periods fit");

    // grating varies along the direction under test; one output row suffices
    // fixed nonzero phase so integer-period sampling never lands on all zero crossings
    const int L = int(length);
    std::vector<double> grating(L);
    for (int i = 0; i < L; i++) grating[i] = 0.5 + 0.4 * std::sin(2.0 * M_PI * f * i + 0.7);

    GrayImage sharp = direction == Direction::radial ? GrayImage(L, P) : GrayImage(P, L);
    for (int i = 0; i < L; i++)
        for (int j = 0; j < P; j++) {
            if (direction == Direction::radial)
                sharp.at(i, j) = grating[i];
            else
                sharp.at(j, i) = grating[i];
        }

    Rng rng(0);
    GrayImage blurred = blur_patch(sharp, psf, P, 0.0, rng);
    std::vector<double> line(size_t(std::max(blurred.width, blurred.height)));
    for (size_t i = 0; i < line.size(); i++)
        line[i] = direction == Direction::radial ? blurred.at(int(i), 0) : blurred.at(0, int(i));

    // skip one period on each side, measure over the interior
    size_t guard = size_t(std::ceil(period));
    if (line.size() < 2 * guard + size_t(std::ceil(8.0 * period)))
        throw std::invalid_argument("photometric_mtf_oracle: fewer than 8 interior periods fit");
    double c_blur = contrast_of(line, guard, line.size() - guard);

    std::vector<double> sharp_line(grating.begin() + (P / 2), grating.end() - (P / 2));
    double c_sharp = contrast_of(sharp_line, guard, sharp_line.size() - guard);
    return c_blur / c_sharp;
}

MtfLabel mtf_label_of_psf(const std::vector<double>& psf, int P, int pad_to) {
    OtfSpectrum otf = otf_of_psf(psf, P, pad_to);
    MtfLabel label;
    for (Direction d : {Direction::radial, Direction::tangential}) {
        MtfCurve curve = mtf_slice(otf, d);
        for (int k = 0; k < 8; k++) {
            double f = MtfLabel::frequency(k);
            // linear interpolation on the padded grid (exact when pad_to % 32 == 0)
            double pos = f * otf.n;
            int i0 = int(std::floor(pos));
            int i1 = std::min(i0 + 1, int(curve.samples.size()) - 1);
            double t = pos - i0;
            double v = curve.samples[i0].second + t * (curve.samples[i1].second - curve.samples[i0].second);
            (d == Direction::radial ? label.radial : label.tangential)[k] = v;
        }
    }
    return label;
}

void write_curve_csv(const MtfCurve& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("write_curve_csv: cannot write " + path);
    out << "direction,frequency_unit,frequency,mtf\n";
    const char* unit = curve.unit == FreqUnit::cycles_per_pixel ? "cy/px" : "cy/mm";
    char buf[128];
    for (auto [f, m] : curve.samples) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.9g,%.9g\n", direction_name(curve.direction), unit, f, m);
        out << buf;
    }
}

} // namespace lensmtf::mtf_core
