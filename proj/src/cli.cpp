#include "lensmtf/cli.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "lensmtf/aggregate.hpp"
#include "lensmtf/estimator.hpp"
#include "lensmtf/kernel_regression.hpp"
#include "lensmtf/mtf_core.hpp"
#include "lensmtf/pgm_io.hpp"
#include "lensmtf/psf_lab.hpp"
#include "lensmtf/training_data.hpp"

namespace lensmtf::cli {

namespace fs = std::filesystem;
using geometry::GrayImage;
using json = nlohmann::json;

namespace {

// decorrelated per-index seed for data streams
uint64_t mix_seed(uint64_t seed, uint64_t index) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace

// ---- panel -------------------------------------------------------------------

namespace {

// exposure index from an "exp<k>_..." filename prefix; anything else is 0
int exposure_of(const fs::path& p) {
    std::string s = p.stem().string();
    if (s.rfind("exp", 0) == 0) {
        size_t i = 3;
        long v = 0;
        bool any = false;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
            v = v * 10 + (s[i] - '0');
            any = true;
            i++;
        }
        if (any && i < s.size() && s[i] == '_') return int(v);
    }
    return 0;
}

GrayImage crop(const GrayImage& img, int x0, int y0, int size) {
    GrayImage out(size, size, 0.0, img.pixel_pitch);
    for (int y = 0; y < size; y++)
        for (int x = 0; x < size; x++) out.at(x, y) = img.at(x0 + x, y0 + y);
    return out;
}

} // namespace

int cmd_panel(const PanelOptions& opt) {
    psf_lab::PanelSpec spec;
    spec.pinhole_spacing_mm = opt.spacing_mm;
    spec.pinhole_diameter_um = opt.pinhole_um;
    spec.grid_cols = opt.grid_cols;
    spec.grid_rows = opt.grid_rows;
    spec.image_spacing_px = opt.image_spacing_px;

    std::vector<fs::path> files;
    if (fs::is_directory(opt.input_dir))
        for (const auto& e : fs::directory_iterator(opt.input_dir))
            if (e.path().extension() == ".pgm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("panel: no images in " + opt.input_dir);

    // bracketed exposures grouped by filename prefix, ascending exposure time
    std::map<int, std::vector<GrayImage>> groups;
    for (const fs::path& f : files)
        groups[exposure_of(f)].push_back(geometry::read_pgm16(f.string(), opt.pitch_um));

    std::vector<std::pair<int, GrayImage>> exposure_means;
    for (auto& [idx, imgs] : groups)
        exposure_means.emplace_back(idx, psf_lab::average_exposures(imgs));

    std::vector<GrayImage> means_only;
    for (auto& [idx, m] : exposure_means) means_only.push_back(m);
    GrayImage detection = psf_lab::average_exposures(means_only);

    std::vector<psf_lab::Centroid> centroids = psf_lab::detect_psf_centroids(detection, spec);
    std::cout << "panel: " << files.size() << " images, " << groups.size() << " exposures, "
              << centroids.size() << " detected point sources\n";

    const int P = opt.patch_px;
    psf_lab::PsfDataset ds;
    ds.panel = spec;
    ds.lens_id = opt.lens_id;
    ds.aperture = opt.aperture;
    ds.P = P;

    int skipped_border = 0, skipped_bad = 0;
    for (const psf_lab::Centroid& c : centroids) {
        int x0 = int(std::lround(c.x)) - P / 2;
        int y0 = int(std::lround(c.y)) - P / 2;
        if (x0 < 0 || y0 < 0 || x0 + P > detection.width || y0 + P > detection.height) {
            skipped_border++;
            continue;
        }

        std::vector<psf_lab::ExposurePatch> stack;
        for (auto& [idx, imgs] : groups) {
            psf_lab::ExposurePatch ep;
            ep.exposure_index = idx;
            std::vector<GrayImage> crops;
            for (const GrayImage& img : imgs) {
                crops.push_back(crop(img, x0, y0, P));
                if (psf_lab::is_saturated(crops.back())) ep.saturated = true;
            }
            ep.patch = psf_lab::average_exposures(crops);
            stack.push_back(std::move(ep));
        }

        try {
            const psf_lab::ExposurePatch& best = psf_lab::select_best_exposure(stack);
            psf_lab::PsfRecord rec;
            rec.P = P;
            rec.kernel = psf_lab::normalize_psf(psf_lab::segment_psf(best.patch));
            rec.location = geometry::pixel_to_global(c.x, c.y, detection);
            rec.settings = {opt.lens_id, opt.aperture, best.exposure_index};
            ds.records.push_back(std::move(rec));
        } catch (const std::exception& e) {
            skipped_bad++;
            std::cerr << "panel: skipping source near (" << c.x << ", " << c.y << "): " << e.what()
                      << "\n";
        }
    }

    if (ds.records.empty()) throw InputError("panel: no usable point source survived processing");
    psf_lab::save_psf_dataset(opt.output_dir, ds);
    std::cout << "panel: wrote " << ds.records.size() << " PSF records to " << opt.output_dir;
    if (skipped_border + skipped_bad > 0)
        std::cout << " (skipped " << skipped_border << " at borders, " << skipped_bad << " bad)";
    std::cout << "\n";
    return kOk;
}

// ---- train -------------------------------------------------------------------

int cmd_train(const TrainOptions& opt) {
    if (opt.source != "pattern" && opt.source != "natural")
        throw InputError("train: --source must be pattern or natural");
    if (opt.source == "natural" && opt.natural_dir.empty())
        throw InputError("train: --natural-dir required with --source natural");

    estimator::NetConfig net_cfg =
        opt.desk_scale ? estimator::NetConfig::desk() : estimator::NetConfig::full();

    const int P = 21;  // supports two-Gaussian blurs up to sigma 3.2 px
    const int source_size = net_cfg.input_size + P - 1;

    std::vector<GrayImage> sources, val_sources;
    training_data::SourceTag tag = training_data::SourceTag::pattern;
    if (opt.source == "natural") {
        tag = training_data::SourceTag::natural;
        sources = training_data::load_natural_patches(opt.natural_dir, opt.seed, 256, source_size);
        val_sources =
            training_data::load_natural_patches(opt.natural_dir, opt.seed + 101, 64, source_size);
    } else {
        sources = training_data::make_pattern_sources(64, source_size, opt.seed);
        val_sources = training_data::make_pattern_sources(16, source_size, opt.seed + 101);
    }

    training_data::PsfPool pool, val_pool;
    if (!opt.psf_dataset.empty()) {
        psf_lab::PsfDataset ds = psf_lab::load_psf_dataset(opt.psf_dataset);
        kernel_regression::RotatedPsfDataset rotated =
            kernel_regression::rotate_to_common_frame(ds.records);
        pool = training_data::make_pool_from_records(rotated.records);
        // held-out kernels interpolated between the measured ones
        std::vector<psf_lab::PsfRecord> resampled = kernel_regression::resample_balanced(
            rotated, std::max(opt.val_pool_size, 8), opt.seed + 7, {});
        val_pool = training_data::make_pool_from_records(resampled);
    } else {
        pool = training_data::make_artificial_pool(opt.pool_size, P, opt.seed + 1);
        val_pool = training_data::make_artificial_pool(opt.val_pool_size, P, opt.seed + 2);
    }

    training_data::NoiseConfig noise{opt.noise_min, opt.noise_max};
    const int n = opt.patches_per_group;
    const int input = net_cfg.input_size;

    estimator::GroupFn train_fn = [&, tag](uint64_t idx) {
        Rng rng(mix_seed(opt.seed, idx));
        return training_data::sample_training_group(sources, pool, noise, n, input, rng, tag);
    };
    estimator::GroupFn val_fn = [&, tag](uint64_t idx) {
        Rng rng(mix_seed(~opt.seed, idx));
        return training_data::sample_training_group(val_sources, val_pool, noise, n, input, rng, tag);
    };

    estimator::TrainConfig tc;
    tc.steps = opt.steps;
    tc.batch_groups = opt.batch;
    tc.patches_per_group = n;
    tc.seed = opt.seed;
    tc.lr_start = opt.lr_start;
    tc.lr_end = opt.lr_end;
    tc.val_every = opt.val_every;

    auto t0 = std::chrono::steady_clock::now();
    estimator::TrainResult result =
        estimator::train(net_cfg, tc, train_fn, val_fn, opt.val_groups);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    double final_train = result.log.empty() ? -1.0 : result.log.back().train_loss;
    double final_val = -1.0;
    for (auto it = result.log.rbegin(); it != result.log.rend(); ++it)
        if (it->val_loss >= 0.0) {
            final_val = it->val_loss;
            break;
        }

    std::map<std::string, double> meta{{"steps", double(opt.steps)},
                                       {"seed", double(opt.seed)},
                                       {"final_train_loss", final_train},
                                       {"final_val_loss", final_val},
                                       {"natural_source", opt.source == "natural" ? 1.0 : 0.0}};
    estimator::save_checkpoint(opt.checkpoint, result.net, meta);

    std::string log_path = opt.log_csv.empty() ? opt.checkpoint + ".log.csv" : opt.log_csv;
    std::ofstream log(log_path);
    if (!log) throw InputError("train: cannot open " + log_path);
    log << "step,lr,train_loss,val_loss\n";
    char line[128];
    for (const estimator::LogRow& row : result.log) {
        if (row.val_loss >= 0.0)
            std::snprintf(line, sizeof line, "%ld,%.8g,%.8g,%.8g\n", row.step, row.lr,
                          row.train_loss, row.val_loss);
        else
            std::snprintf(line, sizeof line, "%ld,%.8g,%.8g,\n", row.step, row.lr, row.train_loss);
        log << line;
    }

    std::cout << "train: " << opt.steps << " steps in " << int(secs) << " s, final train loss "
              << final_train << ", val loss " << final_val << "\n"
              << "train: checkpoint " << opt.checkpoint << ", log " << log_path << "\n";
    return kOk;
}

// ---- estimate ----------------------------------------------------------------

int cmd_estimate(const EstimateOptions& opt) {
    if (opt.images.empty()) throw InputError("estimate: no input images");
    estimator::Checkpoint ck = estimator::load_checkpoint(opt.checkpoint);

    std::vector<GrayImage> images;
    for (const std::string& path : opt.images)
        images.push_back(geometry::read_pgm16(path, opt.pitch_um));

    aggregate::GridConfig grid;
    grid.radii = opt.grid_radii;
    grid.angles = opt.grid_angles;
    grid.patch_size = ck.cfg.input_size;
    double nyq = mtf_core::nyquist_cycles_per_mm(opt.pitch_um);
    if (grid.freqs_cy_mm.back() > nyq)
        throw InputError("estimate: 40 cy/mm exceeds the Nyquist frequency of this pitch");

    aggregate::PatchEstimator est = [&](const std::vector<GrayImage>& patches) {
        return estimator::predict_multi(ck.net, patches);
    };
    std::vector<aggregate::LocalEstimate> locals =
        aggregate::collect_local_estimates(images, est, grid);

    bool natural = ck.meta.count("natural_source") && ck.meta.at("natural_source") > 0.5;
    double r_max =
        std::hypot(images[0].width / 2.0, images[0].height / 2.0) * opt.pitch_um / 1000.0;

    std::vector<std::string> modes;
    if (opt.mode == "both") {
        modes = {"azimuthal", "ray"};
    } else if (opt.mode == "azimuthal" || opt.mode == "ray") {
        modes = {opt.mode};
    } else {
        throw InputError("estimate: --mode must be azimuthal, ray or both");
    }

    json stdout_doc;
    for (const std::string& mode : modes) {
        aggregate::ChartConfig cc;
        cc.mode = mode == "ray" ? aggregate::ChartMode::ray : aggregate::ChartMode::azimuthal;
        cc.compensate = natural && !opt.no_compensation;
        cc.ray_phi = opt.ray_phi_deg * M_PI / 180.0;
        cc.r_max_mm = r_max;
        cc.azimuthal_bins = std::max(4, opt.grid_radii);

        aggregate::MtfChart chart = aggregate::build_chart(locals, cc);
        chart.lens_id = opt.lens_id.empty() ? "unknown" : opt.lens_id;
        chart.aperture = opt.aperture;
        chart.n_photos = int(images.size());

        std::string base = opt.out_prefix + "_" + mode;
        aggregate::write_chart_csv(chart, base + ".csv");
        aggregate::write_chart_json(chart, base + ".json");
        aggregate::write_chart_svg(chart, base + ".svg");
        std::cout << "estimate: " << locals.size() << " local estimates -> " << base
                  << ".{csv,json,svg}" << (chart.compensated ? " (compensated)" : "") << "\n";

        if (opt.json_stdout) {
            std::ifstream in(base + ".json");
            stdout_doc[mode] = json::parse(in);
        }
    }
    if (opt.json_stdout) std::cout << stdout_doc.dump(2) << "\n";
    return kOk;
}

// ---- oracle ------------------------------------------------------------------

namespace {

struct CheckResult {
    std::string name;
    bool pass = false;
    double value = 0.0;      // measured worst-case error or deviation
    double tolerance = 0.0;
    std::string detail;
};

// P-tap kernel whose padded DFT equals exp(-2 pi^2 sigma^2 f^2) on the n-point
// grid: inverse transform of that spectrum, evaluated by direct summation and
// cropped to P taps. Separable, so only the 1-D profile is needed.
std::vector<double> spectral_gaussian_1d(double sigma, int P, int n) {
    std::vector<double> k(size_t(P), 0.0);
    int half = P / 2;
    for (int d = -half; d <= half; d++) {
        double acc = 0.0;
        for (int j = 0; j < n; j++) {
            double f = (j <= n / 2 ? j : j - n) / double(n);
            acc += std::exp(-2.0 * M_PI * M_PI * sigma * sigma * f * f) *
                   std::cos(2.0 * M_PI * j * d / double(n));
        }
        k[size_t(d + half)] = acc / n;
    }
    return k;
}

std::vector<double> outer_square(const std::vector<double>& k1) {
    int P = int(k1.size());
    std::vector<double> k2(size_t(P) * P);
    for (int v = 0; v < P; v++)
        for (int u = 0; u < P; u++) k2[size_t(v) * P + u] = k1[size_t(v)] * k1[size_t(u)];
    return k2;
}

CheckResult check_fft_gaussian() {
    CheckResult r{"fft_gaussian_analytic", false, 0.0, 1e-3,
                  "padded-FFT MTF of Gaussian kernels vs exp(-2 pi^2 sigma^2 f^2)"};
    const int P = 31, n = 256;
    for (double sigma : {1.0, 2.0, 4.0}) {
        std::vector<double> k2 = outer_square(spectral_gaussian_1d(sigma, P, n));
        k2 = psf_lab::normalize_psf(k2);
        mtf_core::OtfSpectrum otf = mtf_core::otf_of_psf(k2, P, n);
        for (mtf_core::Direction dir :
             {mtf_core::Direction::radial, mtf_core::Direction::tangential}) {
            mtf_core::MtfCurve slice = mtf_core::mtf_slice(otf, dir);
            for (auto& [f, m] : slice.samples) {
                double want = std::exp(-2.0 * M_PI * M_PI * sigma * sigma * f * f);
                r.value = std::max(r.value, std::abs(m - want));
            }
        }
    }
    r.pass = r.value < r.tolerance;
    return r;
}

CheckResult check_photometric(uint64_t seed) {
    CheckResult r{"photometric_vs_fourier", false, 0.0, 0.02,
                  "sine-grating contrast vs Fourier magnitude on random two-Gaussian kernels"};
    Rng rng(seed);
    const int P = 21;
    for (int i = 0; i < 20; i++) {
        psf_lab::TwoGaussianParams p;
        p.sigma_core_u = rng.uniform(0.6, 1.5);
        p.sigma_core_v = rng.uniform(0.6, 1.5);
        p.sigma_wing_u = p.sigma_core_u + rng.uniform(0.0, 1.5);
        p.sigma_wing_v = p.sigma_core_v + rng.uniform(0.0, 1.5);
        p.rotation = rng.uniform(0.0, M_PI);
        p.weight_core = rng.uniform(0.4, 1.0);
        std::vector<double> k = psf_lab::synth_two_gaussian_psf(p, P);
        mtf_core::OtfSpectrum otf = mtf_core::otf_of_psf(k, P, 256);
        for (mtf_core::Direction dir :
             {mtf_core::Direction::radial, mtf_core::Direction::tangential}) {
            mtf_core::MtfCurve slice = mtf_core::mtf_slice(otf, dir);
            for (double f : {0.05, 0.10, 0.15, 0.20}) {
                double photo = mtf_core::photometric_mtf_oracle(k, P, f, dir);
                // linear interpolation of the slice at f
                double fourier = 0.0;
                for (size_t s = 1; s < slice.samples.size(); s++)
                    if (slice.samples[s].first >= f) {
                        auto [f0, m0] = slice.samples[s - 1];
                        auto [f1, m1] = slice.samples[s];
                        fourier = m0 + (m1 - m0) * (f - f0) / (f1 - f0);
                        break;
                    }
                r.value = std::max(r.value, std::abs(photo - fourier));
            }
        }
    }
    r.pass = r.value < r.tolerance;
    return r;
}

CheckResult check_kernel_regression(uint64_t seed) {
    CheckResult r{"kr_fast_vs_naive", false, 0.0, 1e-6,
                  "separable kernel regression vs direct evaluation"};
    Rng rng(seed);
    std::vector<psf_lab::PsfRecord> records;
    const int P = 31;
    for (int i = 0; i < 3; i++)
        for (int j = 0; j < 3; j++) {
            psf_lab::TwoGaussianParams p;
            double rr = std::hypot(i - 1.0, j - 1.0);
            p.sigma_core_u = 0.8 + 0.2 * rr;
            p.sigma_core_v = 0.8 + 0.1 * rr;
            p.sigma_wing_u = p.sigma_core_u + 1.0;
            p.sigma_wing_v = p.sigma_core_v + 1.2;
            p.weight_core = 0.7;
            psf_lab::PsfRecord rec;
            rec.P = P;
            rec.kernel = psf_lab::synth_two_gaussian_psf(p, P);
            rec.location = {rr * 2.0, std::atan2(j - 1.0, i - 1.0)};
            records.push_back(std::move(rec));
        }
    kernel_regression::RotatedPsfDataset common =
        kernel_regression::rotate_to_common_frame(records);
    kernel_regression::KrConfig cfg;
    for (int q = 0; q < 9; q++) {
        geometry::GlobalCoord query{rng.uniform(0.0, 2.5), rng.uniform(-M_PI, M_PI)};
        std::vector<double> naive = kernel_regression::kr_naive(common.records, query, cfg);
        std::vector<double> fast = kernel_regression::kr_fast(common, query, cfg);
        for (size_t i = 0; i < naive.size(); i++)
            r.value = std::max(r.value, std::abs(naive[i] - fast[i]));
    }
    r.pass = r.value < r.tolerance;
    return r;
}

CheckResult check_subsample_roundtrip(uint64_t seed) {
    CheckResult r{"subsample_roundtrip", false, 0.0, 0.0, "fold to channels and back, bit exact"};
    Rng rng(seed);
    geometry::ChannelStack stack(12, 12, 2);
    for (double& v : stack.data) v = rng.uniform();
    geometry::ChannelStack back =
        geometry::inverse_subsample(geometry::subsample_to_channels(stack, 3), 3);
    bool same = back.height == stack.height && back.width == stack.width &&
                back.channels == stack.channels && back.data == stack.data;
    r.pass = same;
    r.value = same ? 0.0 : 1.0;
    return r;
}

CheckResult check_compensation() {
    CheckResult r{"compensation_factors", false, 0.0, 0.0, "(1,1,1,1) maps to the factor vector"};
    std::vector<double> got = aggregate::apply_compensation({1.0, 1.0, 1.0, 1.0});
    std::vector<double> want{0.98, 0.95, 0.90, 0.83};
    r.pass = got == want;
    r.value = r.pass ? 0.0 : 1.0;
    return r;
}

CheckResult check_nyquist() {
    CheckResult r{"nyquist_conversion", false, 0.0, 0.01, "500 / 4.14 um = 120.77 cy/mm"};
    r.value = std::abs(mtf_core::nyquist_cycles_per_mm(4.14) - 120.77);
    r.pass = r.value < r.tolerance;
    return r;
}

} // namespace

int cmd_oracle(const OracleOptions& opt) {
    if (opt.break_fft) mtf_core::set_debug_dc_scale(1.02);

    std::vector<CheckResult> checks;
    checks.push_back(check_fft_gaussian());
    checks.push_back(check_photometric(opt.seed));
    checks.push_back(check_kernel_regression(opt.seed + 1));
    checks.push_back(check_subsample_roundtrip(opt.seed + 2));
    checks.push_back(check_compensation());
    checks.push_back(check_nyquist());

    if (opt.break_fft) mtf_core::set_debug_dc_scale(1.0);

    bool all = true;
    for (const CheckResult& c : checks) all = all && c.pass;

    if (opt.json) {
        json doc;
        doc["all_pass"] = all;
        json arr = json::array();
        for (const CheckResult& c : checks)
            arr.push_back({{"name", c.name},
                           {"pass", c.pass},
                           {"max_error", c.value},
                           {"tolerance", c.tolerance},
                           {"detail", c.detail}});
        doc["checks"] = std::move(arr);
        std::cout << doc.dump(2) << "\n";
    } else {
        for (const CheckResult& c : checks) {
            char line[160];
            std::snprintf(line, sizeof line, "%-24s %s  max_err=%.3g tol=%.3g\n", c.name.c_str(),
                          c.pass ? "PASS" : "FAIL", c.value, c.tolerance);
            std::cout << line;
        }
        std::cout << (all ? "all checks passed\n" : "some checks FAILED\n");
    }
    return all ? kOk : kCheckFailed;
}

// ---- pattern -----------------------------------------------------------------

int cmd_pattern(const PatternOptions& opt) {
    if (opt.width_px < 16 || opt.height_px < 16) throw InputError("pattern: size too small");
    double period_px = opt.period_mm * opt.dpi / 25.4;

    training_data::PatternParams p;
    p.period_px = period_px;
    p.rotation = opt.rotation_deg * M_PI / 180.0;
    p.low = opt.low;
    p.high = opt.high;

    int size = std::max(opt.width_px, opt.height_px);
    GrayImage square = training_data::gen_regular_pattern(p, size);
    GrayImage out(opt.width_px, opt.height_px);
    for (int y = 0; y < out.height; y++)
        for (int x = 0; x < out.width; x++) out.at(x, y) = square.at(x, y);

    geometry::write_pgm16(out, opt.out_path);
    std::cout << "pattern: " << opt.width_px << "x" << opt.height_px << " px, period "
              << period_px << " px (" << opt.period_mm << " mm at " << opt.dpi << " dpi) -> "
              << opt.out_path << "\n";
    return kOk;
}

// ---- dispatch ----------------------------------------------------------------

namespace {

// JSON config support: values from the section named like the subcommand are
// turned into flag tokens inserted before the user's flags, so explicit flags
// win. Arrays become bare (positional) tokens appended at the end.
std::vector<std::string> inject_config(const std::vector<std::string>& args) {
    std::string sub, config_path;
    for (size_t i = 0; i < args.size(); i++) {
        if (sub.empty() && !args[i].empty() && args[i][0] != '-') sub = args[i];
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (sub.empty() || config_path.empty()) return args;

    std::ifstream in(config_path);
    if (!in) throw InputError("cannot open config file " + config_path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw InputError(std::string("bad config file: ") + e.what());
    }
    if (!doc.contains(sub)) return args;

    std::vector<std::string> head, tail;
    for (const auto& [key, value] : doc.at(sub).items()) {
        if (value.is_array()) {
            for (const json& v : value)
                tail.push_back(v.is_string() ? v.get<std::string>() : v.dump());
        } else if (value.is_boolean()) {
            head.push_back("--" + key + "=" + (value.get<bool>() ? "true" : "false"));
        } else if (value.is_string()) {
            head.push_back("--" + key + "=" + value.get<std::string>());
        } else {
            head.push_back("--" + key + "=" + value.dump());
        }
    }

    std::vector<std::string> out;
    out.push_back(args[0]);  // the subcommand
    out.insert(out.end(), head.begin(), head.end());
    for (size_t i = 1; i < args.size(); i++) out.push_back(args[i]);
    out.insert(out.end(), tail.begin(), tail.end());
    return out;
}

template <typename F>
int guarded(F&& f) {
    try {
        return f();
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInputError;
    } catch (const psf_lab::SaturationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInputError;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumericError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInputError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumericError;
    }
}

} // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"lens MTF estimation from photographs"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    std::string config_dummy;

    PanelOptions po;
    CLI::App* panel = app.add_subcommand("panel", "process pinhole panel images into a PSF dataset");
    panel->add_option("--config", config_dummy, "JSON config file");
    panel->add_option("-i,--input", po.input_dir, "directory of panel PGM images")->required();
    panel->add_option("-o,--output", po.output_dir, "output dataset directory")->required();
    panel->add_option("--lens", po.lens_id, "lens identifier");
    panel->add_option("--aperture", po.aperture, "f-number");
    panel->add_option("--pitch-um", po.pitch_um, "pixel pitch in micrometres");
    panel->add_option("--patch-px", po.patch_px, "PSF patch size P (odd)");
    panel->add_option("--spacing-mm", po.spacing_mm, "pinhole spacing on the panel");
    panel->add_option("--pinhole-um", po.pinhole_um, "pinhole diameter");
    panel->add_option("--grid-cols", po.grid_cols, "panel grid columns");
    panel->add_option("--grid-rows", po.grid_rows, "panel grid rows");
    panel->add_option("--image-spacing-px", po.image_spacing_px,
                      "expected source spacing on the sensor");

    TrainOptions to;
    CLI::App* train = app.add_subcommand("train", "train the MTF regressor");
    train->add_option("--config", config_dummy, "JSON config file");
    train->add_flag("--desk-scale", to.desk_scale, "desk-scale network (48 px patches)");
    train->add_option("--source", to.source, "training sources: pattern or natural");
    train->add_option("--natural-dir", to.natural_dir, "directory of sharp PGM photographs");
    train->add_option("--psf-dataset", to.psf_dataset, "PSF dataset directory for measured blurs");
    train->add_option("--steps", to.steps, "optimization steps");
    train->add_option("--batch", to.batch, "groups per batch");
    train->add_option("--patches-per-group", to.patches_per_group,
                      "co-blurred patches per training group");
    train->add_option("--seed", to.seed, "rng seed");
    train->add_option("--noise-min", to.noise_min, "minimum noise sigma");
    train->add_option("--noise-max", to.noise_max, "maximum noise sigma");
    train->add_option("--pool-size", to.pool_size, "training PSF pool size");
    train->add_option("--val-pool-size", to.val_pool_size, "validation PSF pool size");
    train->add_option("--val-groups", to.val_groups, "validation groups");
    train->add_option("--val-every", to.val_every, "validation cadence in steps");
    train->add_option("--lr-start", to.lr_start, "initial learning rate");
    train->add_option("--lr-end", to.lr_end, "final learning rate");
    train->add_option("-o,--checkpoint", to.checkpoint, "checkpoint output path");
    train->add_option("--log", to.log_csv, "training log CSV path");
    train->add_option("--workers", to.workers, "reserved; execution is single threaded");

    EstimateOptions eo;
    CLI::App* estimate = app.add_subcommand("estimate", "estimate MTF charts from photographs");
    estimate->add_option("--config", config_dummy, "JSON config file");
    estimate->add_option("-c,--checkpoint", eo.checkpoint, "trained checkpoint")->required();
    estimate->add_option("images", eo.images, "photograph PGM files")->expected(-1);
    estimate->add_option("--pitch-um", eo.pitch_um, "pixel pitch in micrometres");
    std::string grid_str;
    estimate->add_option("--grid", grid_str, "patch grid as RxA, e.g. 12x16");
    estimate->add_option("--mode", eo.mode, "azimuthal, ray or both");
    estimate->add_option("--ray-phi-deg", eo.ray_phi_deg, "ray direction for --mode ray");
    estimate->add_flag("--no-compensation", eo.no_compensation,
                       "skip natural-source compensation factors");
    estimate->add_flag("--json", eo.json_stdout, "print chart JSON to stdout");
    estimate->add_option("-o,--out-prefix", eo.out_prefix, "output file prefix");
    estimate->add_option("--lens", eo.lens_id, "lens identifier for metadata");
    estimate->add_option("--aperture", eo.aperture, "f-number for metadata");
    estimate->add_option("--workers", eo.workers, "reserved; execution is single threaded");

    OracleOptions oo;
    CLI::App* oracle = app.add_subcommand("oracle", "run numerical self-checks");
    oracle->add_option("--config", config_dummy, "JSON config file");
    oracle->add_flag("--json", oo.json, "machine readable report");
    oracle->add_option("--seed", oo.seed, "rng seed for randomized checks");
    oracle->add_flag("--break-fft", oo.break_fft,
                     "negative control: inject a broken FFT normalization");

    PatternOptions pa;
    CLI::App* pattern = app.add_subcommand("pattern", "write a printable test pattern");
    pattern->add_option("--config", config_dummy, "JSON config file");
    pattern->add_option("-o,--out", pa.out_path, "output PGM path");
    pattern->add_option("--width-px", pa.width_px, "image width");
    pattern->add_option("--height-px", pa.height_px, "image height");
    pattern->add_option("--dpi", pa.dpi, "print resolution");
    pattern->add_option("--period-mm", pa.period_mm, "printed motif period");
    pattern->add_option("--rotation-deg", pa.rotation_deg, "pattern rotation");
    pattern->add_option("--contrast", [&pa](const std::vector<std::string>& vals) {
        if (vals.size() != 2) return false;
        pa.low = std::stod(vals[0]);
        pa.high = std::stod(vals[1]);
        return true;
    }, "low and high intensity, two values")->expected(2);

    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        args = inject_config(args);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInputError;
    }

    std::vector<const char*> cargs;
    cargs.push_back(argv[0]);
    for (const std::string& a : args) cargs.push_back(a.c_str());
    try {
        app.parse(int(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kOk : kInputError;
    }

    if (grid_str.size()) {
        int r = 0, a = 0;
        if (std::sscanf(grid_str.c_str(), "%dx%d", &r, &a) != 2 || r < 1 || a < 1) {
            std::cerr << "error: --grid expects RxA, e.g. 12x16\n";
            return kInputError;
        }
        eo.grid_radii = r;
        eo.grid_angles = a;
    }

    if (panel->parsed()) return guarded([&] { return cmd_panel(po); });
    if (train->parsed()) return guarded([&] { return cmd_train(to); });
    if (estimate->parsed()) return guarded([&] { return cmd_estimate(eo); });
    if (oracle->parsed()) return guarded([&] { return cmd_oracle(oo); });
    if (pattern->parsed()) return guarded([&] { return cmd_pattern(pa); });
    return kInputError;
}

} // namespace lensmtf::cli
