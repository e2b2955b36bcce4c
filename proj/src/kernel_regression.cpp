#include "lensmtf/kernel_regression.hpp"

#include <algorithm>
#include <cmath>

namespace lensmtf::kernel_regression {

namespace {

// per-record scalar weights K_r(dr) * K_phi(wrapped dphi)
std::vector<double> record_weights(const std::vector<PsfRecord>& records, const GlobalCoord& q,
                                   const KrConfig& cfg) {
    std::vector<double> w(records.size());
    for (size_t i = 0; i < records.size(); i++) {
        double dr = records[i].location.r - q.r;
        double dphi = wrap_angle(records[i].location.phi - q.phi);
        w[i] = se_kernel(dr, cfg.ell_r) * se_kernel(dphi, cfg.ell_phi);
    }
    return w;
}

} // namespace

std::vector<double> kr_naive(const std::vector<PsfRecord>& records, const GlobalCoord& query,
                             const KrConfig& cfg) {
    if (records.empty()) throw std::invalid_argument("kr_naive: empty dataset");
    const int P = records.front().P;
    for (const PsfRecord& r : records)
        if (r.P != P) throw std::invalid_argument("kr_naive: mixed kernel sizes");

    std::vector<double> w = record_weights(records, query, cfg);
    double wsum = 0.0;
    for (double v : w) wsum += v;
    if (wsum < 1e-300) throw NumericError("kr_naive: query too far from all records");

    // 1-D kernel values for every (output, input) index pair; hoisting these
    // exp calls does not change the O(N * P^4) pixel summation below
    std::vector<double> ku(size_t(P) * P), kv(size_t(P) * P);
    for (int a = 0; a < P; a++)
        for (int b = 0; b < P; b++) {
            ku[size_t(a) * P + b] = se_kernel(double(b - a), cfg.ell_u);
            kv[size_t(a) * P + b] = se_kernel(double(b - a), cfg.ell_v);
        }

    std::vector<double> out(size_t(P) * P);
    for (int v = 0; v < P; v++) {
        const double* kvrow = &kv[size_t(v) * P];
        for (int u = 0; u < P; u++) {
            const double* kurow = &ku[size_t(u) * P];
            double num = 0.0, den = 0.0;
            for (size_t i = 0; i < records.size(); i++) {
                const std::vector<double>& k = records[i].kernel;
                double acc = 0.0, mass = 0.0;
                for (int vp = 0; vp < P; vp++) {
                    const double* krow = &k[size_t(vp) * P];
                    double rowdot = 0.0, rowmass = 0.0;
                    for (int up = 0; up < P; up++) {
                        rowdot += kurow[up] * krow[up];
                        rowmass += kurow[up];
                    }
                    acc += kvrow[vp] * rowdot;
                    mass += kvrow[vp] * rowmass;
                }
                num += w[i] * acc;
                den += w[i] * mass;
            }
            out[size_t(v) * P + u] = num / den;
        }
    }
    return psf_lab::normalize_psf(std::move(out));
}

RotatedPsfDataset rotate_to_common_frame(const std::vector<PsfRecord>& records) {
    RotatedPsfDataset ds;
    ds.records.reserve(records.size());
    for (const PsfRecord& rec : records) {
        const int P = rec.P;
        if (int(rec.kernel.size()) != P * P)
            throw std::invalid_argument("rotate_to_common_frame: kernel size mismatch");
        PsfRecord out = rec;
        double c = std::cos(rec.location.phi), s = std::sin(rec.location.phi);
        int half = P / 2;
        // same resampling convention as extract_rotated_patch, zero outside the grid
        for (int i = 0; i < P; i++)
            for (int j = 0; j < P; j++) {
                double a = j - half, b = i - half;
                double x = half + a * c + b * s;
                double y = half - a * s + b * c;
                double val = 0.0;
                if (x >= 0.0 && x <= P - 1 && y >= 0.0 && y <= P - 1) {
                    int x0 = std::min(int(x), P - 2), y0 = std::min(int(y), P - 2);
                    double fx = x - x0, fy = y - y0;
                    val = rec.at(x0, y0) * (1 - fx) * (1 - fy) + rec.at(x0 + 1, y0) * fx * (1 - fy) +
                          rec.at(x0, y0 + 1) * (1 - fx) * fy + rec.at(x0 + 1, y0 + 1) * fx * fy;
                }
                out.kernel[size_t(i) * P + j] = val;
            }
        out.kernel = psf_lab::normalize_psf(std::move(out.kernel));
        ds.records.push_back(std::move(out));
    }
    return ds;
}

std::vector<double> kr_fast(const RotatedPsfDataset& dataset, const GlobalCoord& query,
                            const KrConfig& cfg) {
    const std::vector<PsfRecord>& records = dataset.records;
    if (records.empty()) throw std::invalid_argument("kr_fast: empty dataset");
    const int P = records.front().P;
    for (const PsfRecord& r : records)
        if (r.P != P) throw std::invalid_argument("kr_fast: mixed kernel sizes");

    std::vector<double> w = record_weights(records, query, cfg);
    double wsum = 0.0;
    for (double v : w) wsum += v;
    if (wsum < 1e-300) throw NumericError("kr_fast: query too far from all records");

    // tabulated 1-D kernels over integer offsets, truncated below 1e-8
    auto table = [P](double ell) {
        std::vector<double> t;
        for (int d = 0; d < P; d++) {
            double v = se_kernel(double(d), ell);
            if (v < 1e-8) break;
            t.push_back(v);
        }
        return t;
    };
    std::vector<double> tu = table(cfg.ell_u), tv = table(cfg.ell_v);

    // weighted sum of kernels, then one separable smoothing pass
    std::vector<double> f(size_t(P) * P, 0.0);
    for (size_t i = 0; i < records.size(); i++) {
        const std::vector<double>& k = records[i].kernel;
        double wi = w[i];
        for (size_t j = 0; j < f.size(); j++) f[j] += wi * k[j];
    }

    std::vector<double> tmp(size_t(P) * P, 0.0), num(size_t(P) * P, 0.0);
    int ru = int(tu.size()) - 1, rv = int(tv.size()) - 1;
    for (int v = 0; v < P; v++)
        for (int u = 0; u < P; u++) {
            double acc = 0.0;
            for (int d = std::max(-ru, -u); d <= std::min(ru, P - 1 - u); d++)
                acc += tu[std::abs(d)] * f[size_t(v) * P + (u + d)];
            tmp[size_t(v) * P + u] = acc;
        }
    for (int v = 0; v < P; v++)
        for (int u = 0; u < P; u++) {
            double acc = 0.0;
            for (int d = std::max(-rv, -v); d <= std::min(rv, P - 1 - v); d++)
                acc += tv[std::abs(d)] * tmp[size_t(v + d) * P + u];
            num[size_t(v) * P + u] = acc;
        }

    // border-corrected kernel mass factorizes into 1-D sums
    std::vector<double> su(P, 0.0), sv(P, 0.0);
    for (int u = 0; u < P; u++)
        for (int d = std::max(-ru, -u); d <= std::min(ru, P - 1 - u); d++) su[u] += tu[std::abs(d)];
    for (int v = 0; v < P; v++)
        for (int d = std::max(-rv, -v); d <= std::min(rv, P - 1 - v); d++) sv[v] += tv[std::abs(d)];

    std::vector<double> out(size_t(P) * P);
    for (int v = 0; v < P; v++)
        for (int u = 0; u < P; u++)
            out[size_t(v) * P + u] = num[size_t(v) * P + u] / (wsum * su[u] * sv[v]);
    return psf_lab::normalize_psf(std::move(out));
}

std::vector<PsfRecord> resample_balanced(const RotatedPsfDataset& dataset, int n, uint64_t seed,
                                         const KrConfig& cfg) {
    if (n < 0) throw std::invalid_argument("resample_balanced: negative count");
    if (n == 0) return {};
    if (dataset.records.empty()) throw std::invalid_argument("resample_balanced: empty dataset");

    double r_max = 0.0;
    for (const PsfRecord& r : dataset.records) r_max = std::max(r_max, r.location.r);

    Rng rng(seed);
    std::vector<PsfRecord> out;
    out.reserve(size_t(n));
    for (int i = 0; i < n; i++) {
        GlobalCoord loc;
        loc.r = rng.uniform(0.0, r_max);
        loc.phi = wrap_angle(rng.uniform(-M_PI, M_PI));
        PsfRecord rec;
        rec.P = dataset.records.front().P;
        rec.kernel = kr_fast(dataset, loc, cfg);
        rec.location = loc;
        rec.settings = dataset.records.front().settings;
        out.push_back(std::move(rec));
    }
    return out;
}

} // namespace lensmtf::kernel_regression
