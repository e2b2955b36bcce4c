#pragma once

#include <array>
#include <complex>
#include <string>
#include <vector>

#include "lensmtf/psf_lab.hpp"

namespace lensmtf::mtf_core {

// 2-D discrete spectrum of a PSF over frequencies in cycles/pixel, DC at index
// (0, 0), spacing 1/n. Normalized so the DC value is exactly 1 (the kernel is
// centered on the origin before the transform, so the phase is that of the
// centered PSF).
struct OtfSpectrum {
    int n = 0;
    std::vector<std::complex<double>> f;  // row-major, f[iv * n + iu]

    // iu, iv may be negative; indices are taken modulo n
    std::complex<double> at_freq(int iu, int iv) const {
        int u = ((iu % n) + n) % n;
        int v = ((iv % n) + n) % n;
        return f[size_t(v) * n + u];
    }
    std::complex<double> dc_value() const { return f[0]; }
};

enum class Direction { radial, tangential };

inline const char* direction_name(Direction d) {
    return d == Direction::radial ? "radial" : "tangential";
}

enum class FreqUnit { cycles_per_pixel, cycles_per_mm };

struct MtfCurve {
    Direction direction = Direction::radial;
    FreqUnit unit = FreqUnit::cycles_per_pixel;
    std::vector<std::pair<double, double>> samples;  // (frequency, mtf), frequency increasing
};

// MTF at nu_k = k/16 of the Nyquist frequency (k = 1..8), i.e. k/32 cycles/pixel,
// for the radial (u) and tangential (v) directions.
struct MtfLabel {
    std::array<double, 8> radial{};
    std::array<double, 8> tangential{};

    double operator[](int i) const { return i < 8 ? radial[i] : tangential[i - 8]; }
    double& operator[](int i) { return i < 8 ? radial[i] : tangential[i - 8]; }
    static constexpr int size() { return 16; }
    static double frequency(int k) { return (k + 1) / 32.0; }  // cy/px for index k = 0..7
};

inline double nyquist_cycles_per_mm(double pixel_pitch_um) { return 500.0 / pixel_pitch_um; }

// Discrete Fourier transform of the zero-padded kernel, DC-normalized.
OtfSpectrum otf_of_psf(const std::vector<double>& psf, int P, int pad_to = 256);

// Fault-injection hook for the self-check negative control: scales the DC
// value used for normalization in otf_of_psf. 1.0 in normal operation.
void set_debug_dc_scale(double scale);
double debug_dc_scale();

// |OTF| along the positive f_u axis (radial) or f_v axis (tangential),
// from 0 to 0.5 cycles/pixel.
MtfCurve mtf_slice(const OtfSpectrum& otf, Direction direction);

// Linear interpolation of a cycles/pixel curve at physical frequencies.
// An anchor (0, 1) is prepended when the curve does not start at zero.
std::vector<double> mtf_at_cycles_per_mm(const MtfCurve& curve, double pixel_pitch_um,
                                         const std::vector<double>& freqs_cy_mm);

// Contrast-ratio measurement on a rendered sine grating (mean 0.5, amplitude
// 0.4) blurred by the PSF, relative to the unblurred grating. Discrete extrema
// are refined with a 3-point parabola. Shares no code with otf_of_psf so the
// two can check each other.
double photometric_mtf_oracle(const std::vector<double>& psf, int P, double f_cy_px,
                              Direction direction);

MtfLabel mtf_label_of_psf(const std::vector<double>& psf, int P, int pad_to = 256);

// CSV with header: direction, frequency_unit, frequency, mtf
void write_curve_csv(const MtfCurve& curve, const std::string& path);

} // namespace lensmtf::mtf_core
