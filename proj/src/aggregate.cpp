#include "lensmtf/aggregate.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "json.hpp"

namespace lensmtf::aggregate {

using geometry::GlobalCoord;
using geometry::GrayImage;
using json = nlohmann::json;

namespace {

double sorted_mean(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
}

double sorted_sample_std(std::vector<double> v, double mean) {
    if (v.size() < 2) return 0.0;
    for (double& x : v) {
        double d = x - mean;
        x = d * d;
    }
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return std::sqrt(s / double(v.size() - 1));
}

} // namespace

std::vector<LocalEstimate> collect_local_estimates(const std::vector<GrayImage>& images,
                                                   const PatchEstimator& estimator,
                                                   const GridConfig& grid) {
    if (images.empty()) throw InputError("collect_local_estimates: no images");
    if (grid.radii < 1 || grid.angles < 1)
        throw std::invalid_argument("collect_local_estimates: bad grid");
    double pitch = images[0].pixel_pitch;
    for (const GrayImage& im : images)
        if (im.pixel_pitch != pitch)
            throw InputError("collect_local_estimates: images disagree on pixel pitch");

    double r_corner = 0.0;
    for (const GrayImage& im : images)
        r_corner = std::max(r_corner, std::hypot(im.width / 2.0, im.height / 2.0) * pitch / 1000.0);

    std::vector<LocalEstimate> out;
    int skipped = 0;
    for (int ri = 0; ri < grid.radii; ri++) {
        double r = grid.radii > 1 ? r_corner * ri / (grid.radii - 1) : 0.0;
        bool center = r < 1e-12;
        int angle_count = center ? 1 : grid.angles;
        for (int ai = 0; ai < angle_count; ai++) {
            double phi = center ? 0.0 : wrap_angle(-M_PI + 2.0 * M_PI * ai / grid.angles);

            std::vector<GrayImage> patches;
            for (const GrayImage& im : images) {
                if (center) {
                    GlobalCoord loc{0.0, 0.0};
                    if (geometry::rotated_patch_fits(im, loc, grid.patch_size))
                        patches.push_back(geometry::extract_rotated_patch(im, loc, grid.patch_size));
                    continue;  // the angle offsets all coincide at r = 0
                }
                for (double d : grid.angle_offsets) {
                    GlobalCoord loc{r, wrap_angle(phi + d)};
                    if (geometry::rotated_patch_fits(im, loc, grid.patch_size))
                        patches.push_back(geometry::extract_rotated_patch(im, loc, grid.patch_size));
                }
            }
            if (patches.empty()) {
                skipped++;
                continue;
            }

            mtf_core::MtfLabel label = estimator(patches);
            mtf_core::MtfCurve rad, tan;
            rad.direction = mtf_core::Direction::radial;
            tan.direction = mtf_core::Direction::tangential;
            rad.unit = tan.unit = mtf_core::FreqUnit::cycles_per_pixel;
            for (int k = 0; k < 8; k++) {
                rad.samples.emplace_back(mtf_core::MtfLabel::frequency(k), label.radial[size_t(k)]);
                tan.samples.emplace_back(mtf_core::MtfLabel::frequency(k), label.tangential[size_t(k)]);
            }

            LocalEstimate e;
            e.location = {r, phi};
            e.freqs_cy_mm = grid.freqs_cy_mm;
            e.radial = mtf_core::mtf_at_cycles_per_mm(rad, pitch, grid.freqs_cy_mm);
            e.tangential = mtf_core::mtf_at_cycles_per_mm(tan, pitch, grid.freqs_cy_mm);
            for (double& v : e.radial) v = std::clamp(v, 0.0, 1.0);
            for (double& v : e.tangential) v = std::clamp(v, 0.0, 1.0);
            e.n_patches = int(patches.size());
            out.push_back(std::move(e));
        }
    }
    if (skipped > 0)
        std::cerr << "collect_local_estimates: skipped " << skipped
                  << " grid locations without a valid patch\n";
    if (out.empty()) throw InputError("collect_local_estimates: no grid location had a valid patch");
    return out;
}

// ---- Gaussian process --------------------------------------------------------

namespace {

struct GpFactorization {
    Eigen::MatrixXd chol;
    Eigen::VectorXd alpha;
    double lml = 0.0;
    bool ok = false;
};

GpFactorization gp_factorize(const std::vector<double>& r, const Eigen::VectorXd& y0,
                             double signal_var, double ell, double noise_var, double jitter) {
    int n = int(r.size());
    Eigen::MatrixXd K(n, n);
    for (int i = 0; i < n; i++)
        for (int j = 0; j < n; j++) {
            double d = r[size_t(i)] - r[size_t(j)];
            K(i, j) = signal_var * std::exp(-d * d / (2.0 * ell * ell));
        }
    K.diagonal().array() += noise_var + jitter;

    GpFactorization f;
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success) return f;
    f.chol = llt.matrixL();
    f.alpha = llt.solve(y0);
    double logdet = 0.0;
    for (int i = 0; i < n; i++) logdet += std::log(f.chol(i, i));
    f.lml = -0.5 * y0.dot(f.alpha) - logdet - 0.5 * n * std::log(2.0 * M_PI);
    f.ok = true;
    return f;
}

} // namespace

GpModel gp_fit(const std::vector<std::pair<double, double>>& samples, const GpConfig& cfg) {
    if (samples.size() < 2) throw std::invalid_argument("gp_fit: need at least two samples");

    std::vector<double> r(samples.size());
    std::vector<double> y(samples.size());
    for (size_t i = 0; i < samples.size(); i++) {
        r[i] = samples[i].first;
        y[i] = samples[i].second;
    }
    if (cfg.noise_std <= 0.0)
        for (size_t i = 0; i < samples.size(); i++)
            for (size_t j = i + 1; j < samples.size(); j++)
                if (std::abs(r[i] - r[j]) < 1e-12 && std::abs(y[i] - y[j]) > 1e-12)
                    throw NumericError("gp_fit: conflicting targets at one input with zero noise");

    double ell = cfg.lengthscale_mm;
    if (ell <= 0.0) ell = 0.15 * std::max(*std::max_element(r.begin(), r.end()), 1e-6);

    GpModel m;
    m.r = r;
    m.prior_mean = sorted_mean(y);
    Eigen::VectorXd y0(int(y.size()));
    for (size_t i = 0; i < y.size(); i++) y0(int(i)) = y[i] - m.prior_mean;

    double sv = cfg.signal_std * cfg.signal_std;
    double nv = cfg.noise_std * cfg.noise_std;
    GpFactorization f = gp_factorize(r, y0, sv, ell, nv, cfg.jitter);
    if (!f.ok) throw NumericError("gp_fit: kernel matrix is not positive definite");

    if (cfg.optimize) {
        // coordinate-wise hill climbing on the log marginal likelihood,
        // shrinking multiplicative steps; deterministic and good enough for
        // three hyperparameters
        double params[3] = {std::sqrt(sv), ell, std::max(std::sqrt(nv), 1e-4)};
        GpFactorization best =
            gp_factorize(r, y0, params[0] * params[0], params[1], params[2] * params[2], cfg.jitter);
        for (double step = 2.0; step > 1.02; step = 1.0 + (step - 1.0) * 0.6) {
            bool improved = true;
            while (improved) {
                improved = false;
                for (int p = 0; p < 3; p++)
                    for (double factor : {step, 1.0 / step}) {
                        double trial[3] = {params[0], params[1], params[2]};
                        trial[p] *= factor;
                        if (trial[2] < 1e-4) continue;  // keep the noise floor away from singular
                        GpFactorization cand = gp_factorize(r, y0, trial[0] * trial[0], trial[1],
                                                            trial[2] * trial[2], cfg.jitter);
                        if (cand.ok && cand.lml > best.lml + 1e-10) {
                            best = cand;
                            params[0] = trial[0];
                            params[1] = trial[1];
                            params[2] = trial[2];
                            improved = true;
                        }
                    }
            }
        }
        f = best;
        sv = params[0] * params[0];
        ell = params[1];
        nv = params[2] * params[2];
    }

    m.chol = f.chol;
    m.alpha = f.alpha;
    m.signal_var = sv;
    m.lengthscale = ell;
    m.noise_var = nv;
    m.log_marginal = f.lml;
    return m;
}

void gp_predict(const GpModel& model, const std::vector<double>& r_grid, std::vector<double>& mean,
                std::vector<double>& stddev) {
    int n = int(model.r.size());
    mean.resize(r_grid.size());
    stddev.resize(r_grid.size());
    Eigen::VectorXd ks(n);
    for (size_t g = 0; g < r_grid.size(); g++) {
        for (int i = 0; i < n; i++) {
            double d = r_grid[g] - model.r[size_t(i)];
            ks(i) = model.signal_var * std::exp(-d * d / (2.0 * model.lengthscale * model.lengthscale));
        }
        mean[g] = model.prior_mean + ks.dot(model.alpha);
        Eigen::VectorXd v = model.chol.triangularView<Eigen::Lower>().solve(ks);
        double var = model.signal_var - v.squaredNorm();
        stddev[g] = std::sqrt(std::max(var, 0.0));
    }
}

// ---- azimuthal statistics ----------------------------------------------------

std::vector<AzimuthalBin> azimuthal_average(const std::vector<LocalEstimate>& estimates,
                                            const std::vector<double>& bin_edges) {
    if (estimates.empty()) throw std::invalid_argument("azimuthal_average: no estimates");
    if (bin_edges.size() < 2 || !std::is_sorted(bin_edges.begin(), bin_edges.end()))
        throw std::invalid_argument("azimuthal_average: need sorted bin edges");
    size_t nf = estimates[0].freqs_cy_mm.size();
    for (const LocalEstimate& e : estimates)
        if (e.freqs_cy_mm.size() != nf || e.radial.size() != nf || e.tangential.size() != nf)
            throw std::invalid_argument("azimuthal_average: estimates disagree on frequencies");

    std::vector<AzimuthalBin> out;
    for (size_t b = 0; b + 1 < bin_edges.size(); b++) {
        bool last = b + 2 == bin_edges.size();
        std::vector<const LocalEstimate*> members;
        for (const LocalEstimate& e : estimates) {
            double r = e.location.r;
            if (r >= bin_edges[b] && (r < bin_edges[b + 1] || (last && r <= bin_edges[b + 1])))
                members.push_back(&e);
        }
        if (members.empty()) continue;

        AzimuthalBin bin;
        bin.count = int(members.size());
        bin.single = members.size() == 1;
        std::vector<double> radii;
        for (const LocalEstimate* e : members) radii.push_back(e->location.r);
        bin.r = sorted_mean(radii);
        for (size_t k = 0; k < nf; k++) {
            std::vector<double> vr, vt;
            for (const LocalEstimate* e : members) {
                vr.push_back(e->radial[k]);
                vt.push_back(e->tangential[k]);
            }
            double mr = sorted_mean(vr), mt = sorted_mean(vt);
            bin.mean_radial.push_back(mr);
            bin.mean_tangential.push_back(mt);
            bin.std_radial.push_back(sorted_sample_std(vr, mr));
            bin.std_tangential.push_back(sorted_sample_std(vt, mt));
        }
        out.push_back(std::move(bin));
    }
    return out;
}

// ---- compensation ------------------------------------------------------------

std::vector<double> apply_compensation(const std::vector<double>& values,
                                       const std::vector<double>& factors) {
    if (values.size() != factors.size())
        throw std::invalid_argument("apply_compensation: factor count mismatch");
    std::vector<double> out(values.size());
    for (size_t i = 0; i < values.size(); i++)
        out[i] = std::clamp(values[i] * factors[i], 0.0, 1.0);
    return out;
}

// ---- chart assembly ----------------------------------------------------------

namespace {

// piecewise linear with constant extrapolation; xs strictly increasing
double interp(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    size_t hi = size_t(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
    size_t lo = hi - 1;
    double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    return ys[lo] + t * (ys[hi] - ys[lo]);
}

} // namespace

MtfChart build_chart(const std::vector<LocalEstimate>& estimates, const ChartConfig& cfg) {
    if (estimates.empty()) throw std::invalid_argument("build_chart: no estimates");
    const std::vector<double>& freqs = estimates[0].freqs_cy_mm;
    if (freqs.empty()) throw std::invalid_argument("build_chart: estimates have no frequencies");
    if (cfg.compensate && cfg.comp_factors.size() != freqs.size())
        throw std::invalid_argument("build_chart: compensation factor count mismatch");

    double r_max = cfg.r_max_mm;
    if (r_max <= 0.0)
        for (const LocalEstimate& e : estimates) r_max = std::max(r_max, e.location.r);
    if (r_max <= 0.0) r_max = 1.0;  // every estimate sits at the center

    MtfChart chart;
    chart.mode = cfg.mode;
    chart.compensated = cfg.compensate;
    int np = std::max(cfg.r_points, 2);
    chart.r_grid.resize(size_t(np));
    for (int i = 0; i < np; i++) chart.r_grid[size_t(i)] = r_max * i / (np - 1);

    // azimuthal statistics are shared by all curves of the chart
    std::vector<AzimuthalBin> bins;
    if (cfg.mode == ChartMode::azimuthal) {
        std::vector<double> edges(size_t(cfg.azimuthal_bins) + 1);
        for (int i = 0; i <= cfg.azimuthal_bins; i++)
            edges[size_t(i)] = r_max * i / double(cfg.azimuthal_bins);
        bins = azimuthal_average(estimates, edges);
    }

    GpConfig gp = cfg.gp;
    if (gp.lengthscale_mm <= 0.0) gp.lengthscale_mm = 0.15 * r_max;

    bool warned_flat = false;
    for (size_t k = 0; k < freqs.size(); k++)
        for (mtf_core::Direction dir :
             {mtf_core::Direction::radial, mtf_core::Direction::tangential}) {
            ChartCurve curve;
            curve.freq_cy_mm = freqs[k];
            curve.direction = dir;

            for (const LocalEstimate& e : estimates) {
                if (cfg.mode == ChartMode::ray && e.location.r > 1e-12 &&
                    std::abs(wrap_angle(e.location.phi - cfg.ray_phi)) > cfg.ray_phi_tol)
                    continue;
                double v = dir == mtf_core::Direction::radial ? e.radial[k] : e.tangential[k];
                curve.samples.emplace_back(e.location.r, v);
            }

            double lo = 1e300, hi = -1e300;
            for (auto& [r, v] : curve.samples) {
                lo = std::min(lo, r);
                hi = std::max(hi, r);
            }
            bool flat = curve.samples.size() < 2 || hi - lo < 1e-12;

            if (flat) {
                if (curve.samples.empty())
                    throw InputError("build_chart: no samples on the requested ray");
                if (!warned_flat) {
                    std::cerr << "build_chart: estimates cover a single radius; chart is flat\n";
                    warned_flat = true;
                }
                std::vector<double> vals;
                for (auto& [r, v] : curve.samples) vals.push_back(v);
                double m = sorted_mean(vals);
                curve.mean.assign(size_t(np), m);
                curve.stddev.assign(size_t(np), sorted_sample_std(vals, m));
            } else if (cfg.mode == ChartMode::ray) {
                GpModel model = gp_fit(curve.samples, gp);
                gp_predict(model, chart.r_grid, curve.mean, curve.stddev);
            } else {
                std::vector<double> br, bm, bs;
                for (const AzimuthalBin& b : bins) {
                    br.push_back(b.r);
                    bm.push_back(dir == mtf_core::Direction::radial ? b.mean_radial[k]
                                                                    : b.mean_tangential[k]);
                    bs.push_back(dir == mtf_core::Direction::radial ? b.std_radial[k]
                                                                    : b.std_tangential[k]);
                }
                curve.mean.resize(size_t(np));
                curve.stddev.resize(size_t(np));
                if (cfg.azimuthal_use_gp) {
                    GpModel model = gp_fit(curve.samples, gp);
                    std::vector<double> dummy;
                    gp_predict(model, chart.r_grid, curve.mean, dummy);
                } else {
                    for (int i = 0; i < np; i++)
                        curve.mean[size_t(i)] = interp(br, bm, chart.r_grid[size_t(i)]);
                }
                // the band always shows the raw angular variability
                for (int i = 0; i < np; i++)
                    curve.stddev[size_t(i)] = interp(br, bs, chart.r_grid[size_t(i)]);
            }

            if (cfg.compensate) {
                double f = cfg.comp_factors[k];
                for (double& v : curve.mean) v = std::clamp(v * f, 0.0, 1.0);
                for (double& v : curve.stddev) v *= f;
            }
            chart.curves.push_back(std::move(curve));
        }
    return chart;
}

// ---- output ------------------------------------------------------------------

void write_chart_csv(const MtfChart& chart, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("write_chart_csv: cannot open " + path);
    out << "r_mm,direction,freq_cy_mm,mtf_mean,mtf_std,n_samples,compensated\n";
    char line[160];
    for (const ChartCurve& c : chart.curves)
        for (size_t i = 0; i < chart.r_grid.size(); i++) {
            std::snprintf(line, sizeof line, "%.4f,%s,%.1f,%.6f,%.6f,%zu,%d\n", chart.r_grid[i],
                          mtf_core::direction_name(c.direction), c.freq_cy_mm, c.mean[i],
                          c.stddev[i], c.samples.size(), chart.compensated ? 1 : 0);
            out << line;
        }
    if (!out) throw InputError("write_chart_csv: write failed for " + path);
}

void write_chart_json(const MtfChart& chart, const std::string& path) {
    json j;
    j["lens_id"] = chart.lens_id;
    j["aperture"] = chart.aperture;
    j["n_photos"] = chart.n_photos;
    j["compensated"] = chart.compensated;
    j["mode"] = chart.mode == ChartMode::ray ? "ray" : "azimuthal";
    j["r_grid_mm"] = chart.r_grid;
    json curves = json::array();
    for (const ChartCurve& c : chart.curves) {
        json jc;
        jc["freq_cy_mm"] = c.freq_cy_mm;
        jc["direction"] = mtf_core::direction_name(c.direction);
        jc["mean"] = c.mean;
        jc["std"] = c.stddev;
        json samples = json::array();
        for (auto& [r, v] : c.samples) samples.push_back({r, v});
        jc["samples"] = samples;
        curves.push_back(std::move(jc));
    }
    j["curves"] = std::move(curves);
    std::ofstream out(path);
    if (!out) throw InputError("write_chart_json: cannot open " + path);
    out << j.dump(2) << "\n";
    if (!out) throw InputError("write_chart_json: write failed for " + path);
}

void write_chart_svg(const MtfChart& chart, const std::string& path) {
    const int W = 720, H = 480;
    const double x0 = 60, x1 = 540, y0 = 430, y1 = 30;  // plot box, y grows up
    double r_max = chart.r_grid.empty() ? 1.0 : chart.r_grid.back();
    if (r_max <= 0.0) r_max = 1.0;
    auto X = [&](double r) { return x0 + (x1 - x0) * r / r_max; };
    auto Y = [&](double v) { return y0 + (y1 - y0) * std::clamp(v, 0.0, 1.0); };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#8c564b", "#e377c2"};
    std::ofstream out(path);
    if (!out) throw InputError("write_chart_svg: cannot open " + path);
    char buf[256];
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (int i = 0; i <= 5; i++) {
        double v = i / 5.0;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n",
                      x0, Y(v), x1, Y(v));
        out << buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"end\">%.1f</text>\n",
                      x0 - 6, Y(v) + 4, v);
        out << buf;
    }
    for (int i = 0; i <= 5; i++) {
        double r = r_max * i / 5.0;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n",
                      X(r), y0, X(r), y1);
        out << buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\">%.1f</text>\n",
                      X(r), y0 + 18, r);
        out << buf;
    }
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" "
                  "stroke=\"black\"/>\n",
                  x0, y1, x1 - x0, y0 - y1);
    out << buf;
    out << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << H - 10
        << "\" font-size=\"13\" text-anchor=\"middle\">field radius r (mm)</text>\n";
    out << "<text x=\"18\" y=\"" << (y0 + y1) / 2
        << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << (y0 + y1) / 2 << ")\">MTF</text>\n";

    for (const ChartCurve& c : chart.curves) {
        // curves come frequency-major, two directions each
        size_t fi = size_t(&c - chart.curves.data()) / 2;
        const char* color = palette[fi % 6];
        bool dashed = c.direction == mtf_core::Direction::radial;
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\"";
        if (dashed) out << " stroke-dasharray=\"7 4\"";
        out << " points=\"";
        for (size_t i = 0; i < chart.r_grid.size(); i++) {
            std::snprintf(buf, sizeof buf, "%.1f,%.1f ", X(chart.r_grid[i]), Y(c.mean[i]));
            out << buf;
        }
        out << "\"/>\n";
    }

    double ly = y1 + 10;
    for (size_t i = 0; i * 2 < chart.curves.size(); i++) {
        const char* color = palette[i % 6];
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" "
                      "stroke-width=\"2\"/>\n",
                      x1 + 16, ly, x1 + 44, ly, color);
        out << buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\">%.0f cy/mm</text>\n", x1 + 50,
                      ly + 4, chart.curves[i * 2].freq_cy_mm);
        out << buf;
        ly += 18;
    }
    out << "<text x=\"" << x1 + 16 << "\" y=\"" << ly + 8
        << "\" font-size=\"11\">solid: tangential</text>\n";
    out << "<text x=\"" << x1 + 16 << "\" y=\"" << ly + 24
        << "\" font-size=\"11\">dashed: radial</text>\n";
    out << "</svg>\n";
    if (!out) throw InputError("write_chart_svg: write failed for " + path);
}

} // namespace lensmtf::aggregate
