#include "lensmtf/psf_lab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace lensmtf::psf_lab {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Centroid> detect_psf_centroids(const GrayImage& img, const PanelSpec& spec) {
    const size_t n = img.data.size();
    double mean = std::accumulate(img.data.begin(), img.data.end(), 0.0) / double(n);
    double var = 0.0;
    for (double v : img.data) var += (v - mean) * (v - mean);
    double theta = mean + 4.0 * std::sqrt(var / double(n));

    std::vector<uint8_t> mask(n);
    for (size_t i = 0; i < n; i++) mask[i] = img.data[i] > theta ? 1 : 0;

    const int W = img.width, H = img.height;
    auto in_mask = [&](int x, int y) { return x >= 0 && x < W && y >= 0 && y < H && mask[size_t(y) * W + x]; };
    // 3x3 cross erosion: a pixel survives if it and its 4-neighbours are foreground
    auto survives = [&](int x, int y) {
        return in_mask(x, y) && in_mask(x - 1, y) && in_mask(x + 1, y) && in_mask(x, y - 1) &&
               in_mask(x, y + 1);
    };

    // connected components of the raw mask (8-connectivity); a component is kept
    // if at least one of its pixels survives erosion
    std::vector<uint8_t> seen(n, 0);
    std::vector<Centroid> found;
    std::vector<size_t> stack;
    for (size_t start = 0; start < n; start++) {
        if (!mask[start] || seen[start]) continue;
        stack.assign(1, start);
        seen[start] = 1;
        double wsum = 0.0, wx = 0.0, wy = 0.0;
        bool keep = false;
        while (!stack.empty()) {
            size_t p = stack.back();
            stack.pop_back();
            int x = int(p % W), y = int(p / W);
            double w = img.data[p];
            wsum += w;
            wx += w * x;
            wy += w * y;
            if (!keep && survives(x, y)) keep = true;
            for (int dy = -1; dy <= 1; dy++)
                for (int dx = -1; dx <= 1; dx++) {
                    int nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= W || ny < 0 || ny >= H) continue;
                    size_t q = size_t(ny) * W + nx;
                    if (mask[q] && !seen[q]) {
                        seen[q] = 1;
                        stack.push_back(q);
                    }
                }
        }
        if (keep && wsum > 0.0) found.push_back({wx / wsum, wy / wsum});
    }
    if (found.empty()) throw InputError("detect_psf_centroids: no regions found");

    // drop pairs closer than half the expected spacing (merged or split spots)
    double min_d2 = 0.25 * spec.image_spacing_px * spec.image_spacing_px;
    std::vector<uint8_t> merged(found.size(), 0);
    for (size_t i = 0; i < found.size(); i++)
        for (size_t j = i + 1; j < found.size(); j++) {
            double dx = found[i].x - found[j].x, dy = found[i].y - found[j].y;
            if (dx * dx + dy * dy < min_d2) merged[i] = merged[j] = 1;
        }
    std::vector<Centroid> kept;
    for (size_t i = 0; i < found.size(); i++)
        if (!merged[i]) kept.push_back(found[i]);
    if (kept.empty()) throw InputError("detect_psf_centroids: all regions flagged as merged");

    // row-major order: group into rows by y gaps, sort each row by x
    std::sort(kept.begin(), kept.end(), [](const Centroid& a, const Centroid& b) { return a.y < b.y; });
    std::vector<Centroid> out;
    size_t row_start = 0;
    for (size_t i = 1; i <= kept.size(); i++) {
        if (i == kept.size() || kept[i].y - kept[i - 1].y > 0.5 * spec.image_spacing_px) {
            std::sort(kept.begin() + row_start, kept.begin() + i,
                      [](const Centroid& a, const Centroid& b) { return a.x < b.x; });
            out.insert(out.end(), kept.begin() + row_start, kept.begin() + i);
            row_start = i;
        }
    }
    return out;
}

std::vector<double> segment_psf(const GrayImage& patch) {
    const int P = patch.width;
    if (patch.height != P || P < 11)
        throw std::invalid_argument("segment_psf: patch must be square and at least 11 px");
    if (is_saturated(patch)) throw SaturationError("segment_psf: saturated sample in patch");

    double sum = 0.0, sum2 = 0.0;
    int count = 0;
    for (int cy = 0; cy < 2; cy++)
        for (int cx = 0; cx < 2; cx++)
            for (int y = 0; y < 5; y++)
                for (int x = 0; x < 5; x++) {
                    double v = patch.at(cx ? P - 5 + x : x, cy ? P - 5 + y : y);
                    sum += v;
                    sum2 += v * v;
                    count++;
                }
    double mu = sum / count;
    double sigma = std::sqrt(std::max(0.0, sum2 / count - mu * mu));
    double theta = mu + 4.0 * sigma;

    std::vector<double> kernel(size_t(P) * P, 0.0);
    for (int y = 0; y < P; y++)
        for (int x = 0; x < P; x++) {
            double v = patch.at(x, y);
            if (v >= theta) kernel[size_t(y) * P + x] = std::max(0.0, v - mu);
        }
    return kernel;
}

std::vector<double> normalize_psf(std::vector<double> kernel) {
    double sum = std::accumulate(kernel.begin(), kernel.end(), 0.0);
    if (!(sum > 0.0)) throw NumericError("normalize_psf: zero-sum kernel");
    for (double& v : kernel) v /= sum;
    return kernel;
}

const ExposurePatch& select_best_exposure(const std::vector<ExposurePatch>& stack) {
    if (stack.empty()) throw std::invalid_argument("select_best_exposure: empty stack");
    for (auto it = stack.rbegin(); it != stack.rend(); ++it)
        if (!it->saturated) return *it;
    throw InputError("select_best_exposure: all exposures saturated");
}

GrayImage average_exposures(const std::vector<GrayImage>& patches) {
    if (patches.empty()) throw std::invalid_argument("average_exposures: empty list");
    const GrayImage& first = patches.front();
    GrayImage out(first.width, first.height, 0.0, first.pixel_pitch);
    for (const GrayImage& p : patches) {
        if (p.width != first.width || p.height != first.height)
            throw std::invalid_argument("average_exposures: dimension mismatch");
        for (size_t i = 0; i < out.data.size(); i++) out.data[i] += p.data[i];
    }
    for (double& v : out.data) v /= double(patches.size());
    return out;
}

namespace {

// rotated elliptical Gaussian on the centered P x P grid, normalized to sum 1
std::vector<double> grid_gaussian(double su, double sv, double rot, int P) {
    std::vector<double> g(size_t(P) * P);
    double c = std::cos(rot), s = std::sin(rot);
    int half = P / 2;
    double sum = 0.0;
    for (int y = 0; y < P; y++)
        for (int x = 0; x < P; x++) {
            double du = x - half, dv = y - half;
            double pu = c * du + s * dv;
            double pv = -s * du + c * dv;
            double v = std::exp(-0.5 * (pu * pu / (su * su) + pv * pv / (sv * sv)));
            g[size_t(y) * P + x] = v;
            sum += v;
        }
    for (double& v : g) v /= sum;
    return g;
}

} // namespace

std::vector<double> synth_two_gaussian_psf(const TwoGaussianParams& p, int P) {
    if (P < 1 || P % 2 == 0) throw std::invalid_argument("synth_two_gaussian_psf: P must be odd");
    if (!(p.sigma_core_u > 0 && p.sigma_core_v > 0 && p.sigma_wing_u > 0 && p.sigma_wing_v > 0))
        throw std::invalid_argument("synth_two_gaussian_psf: sigmas must be positive");
    if (p.sigma_wing_u < p.sigma_core_u || p.sigma_wing_v < p.sigma_core_v)
        throw std::invalid_argument("synth_two_gaussian_psf: wing must be at least as wide as core");
    if (!(p.weight_core >= 0.0 && p.weight_core <= 1.0))
        throw std::invalid_argument("synth_two_gaussian_psf: weight_core out of [0,1]");
    double smax = std::max({p.sigma_core_u, p.sigma_core_v, p.sigma_wing_u, p.sigma_wing_v});
    if (6.0 * smax > P) throw std::invalid_argument("synth_two_gaussian_psf: support exceeds P");

    std::vector<double> core = grid_gaussian(p.sigma_core_u, p.sigma_core_v, p.rotation, P);
    std::vector<double> wing = grid_gaussian(p.sigma_wing_u, p.sigma_wing_v, p.rotation, P);
    std::vector<double> k(core.size());
    for (size_t i = 0; i < k.size(); i++)
        k[i] = p.weight_core * core[i] + (1.0 - p.weight_core) * wing[i];
    return normalize_psf(std::move(k));
}

GrayImage blur_patch(const GrayImage& sharp, const std::vector<double>& psf, int P,
                     double noise_sigma, Rng& rng) {
    if (int(psf.size()) != P * P) throw std::invalid_argument("blur_patch: kernel size mismatch");
    int ow = sharp.width - P + 1, oh = sharp.height - P + 1;
    if (ow <= 0 || oh <= 0)
        throw std::invalid_argument("blur_patch: sharp patch smaller than PSF support");

    GrayImage out(ow, oh, 0.0, sharp.pixel_pitch);
    // convolution: the kernel is flipped relative to the sharp patch
    for (int y = 0; y < oh; y++)
        for (int x = 0; x < ow; x++) {
            double acc = 0.0;
            for (int b = 0; b < P; b++) {
                const double* krow = &psf[size_t(b) * P];
                const double* srow = &sharp.data[size_t(y + P - 1 - b) * sharp.width + x];
                double rs = 0.0;
                for (int a = 0; a < P; a++) rs += krow[a] * srow[P - 1 - a];
                acc += rs;
            }
            out.at(x, y) = acc;
        }
    if (noise_sigma > 0.0)
        for (double& v : out.data) v += noise_sigma * rng.normal();
    for (double& v : out.data) v = std::min(1.0, std::max(0.0, v));
    return out;
}

void save_psf_dataset(const std::string& dir, const PsfDataset& ds) {
    fs::create_directories(dir);
    json m;
    m["panel"] = {{"pinhole_spacing_mm", ds.panel.pinhole_spacing_mm},
                  {"pinhole_diameter_um", ds.panel.pinhole_diameter_um},
                  {"grid_cols", ds.panel.grid_cols},
                  {"grid_rows", ds.panel.grid_rows},
                  {"image_spacing_px", ds.panel.image_spacing_px}};
    m["lens_id"] = ds.lens_id;
    m["aperture"] = ds.aperture;
    m["P"] = ds.P;
    m["count"] = ds.records.size();
    m["blob"] = "kernels.bin";
    json recs = json::array();
    for (const PsfRecord& r : ds.records)
        recs.push_back({{"r_mm", r.location.r},
                        {"phi_rad", r.location.phi},
                        {"exposure_index", r.settings.exposure_index}});
    m["records"] = recs;

    std::ofstream mo(fs::path(dir) / "manifest.json");
    if (!mo) throw InputError("save_psf_dataset: cannot write manifest in " + dir);
    mo << m.dump(2) << "\n";

    std::ofstream bo(fs::path(dir) / "kernels.bin", std::ios::binary);
    if (!bo) throw InputError("save_psf_dataset: cannot write blob in " + dir);
    std::vector<float> buf;
    for (const PsfRecord& r : ds.records) {
        if (int(r.kernel.size()) != ds.P * ds.P)
            throw std::invalid_argument("save_psf_dataset: record kernel size mismatch");
        buf.assign(r.kernel.begin(), r.kernel.end());
        bo.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
    }
    if (!bo) throw InputError("save_psf_dataset: blob write failed in " + dir);
}

PsfDataset load_psf_dataset(const std::string& dir) {
    std::ifstream mi(fs::path(dir) / "manifest.json");
    if (!mi) throw InputError("load_psf_dataset: no manifest.json in " + dir);
    json m;
    try {
        mi >> m;
    } catch (const json::exception& e) {
        throw InputError("load_psf_dataset: bad manifest: " + std::string(e.what()));
    }

    PsfDataset ds;
    try {
        const json& p = m.at("panel");
        ds.panel.pinhole_spacing_mm = p.at("pinhole_spacing_mm");
        ds.panel.pinhole_diameter_um = p.at("pinhole_diameter_um");
        ds.panel.grid_cols = p.at("grid_cols");
        ds.panel.grid_rows = p.at("grid_rows");
        ds.panel.image_spacing_px = p.at("image_spacing_px");
        ds.lens_id = m.at("lens_id");
        ds.aperture = m.at("aperture");
        ds.P = m.at("P");
        size_t count = m.at("count");
        std::string blob = m.at("blob");

        std::ifstream bi(fs::path(dir) / blob, std::ios::binary);
        if (!bi) throw InputError("load_psf_dataset: missing blob " + blob + " in " + dir);
        size_t pp = size_t(ds.P) * ds.P;
        std::vector<float> buf(pp);
        for (const json& jr : m.at("records")) {
            bi.read(reinterpret_cast<char*>(buf.data()), std::streamsize(pp * 4));
            if (size_t(bi.gcount()) != pp * 4) throw InputError("load_psf_dataset: truncated blob");
            PsfRecord r;
            r.P = ds.P;
            r.kernel.assign(buf.begin(), buf.end());
            r.kernel = normalize_psf(std::move(r.kernel));
            r.location.r = jr.at("r_mm");
            r.location.phi = jr.at("phi_rad");
            r.settings.lens_id = ds.lens_id;
            r.settings.aperture = ds.aperture;
            r.settings.exposure_index = jr.value("exposure_index", 0);
            ds.records.push_back(std::move(r));
        }
        if (ds.records.size() != count)
            throw InputError("load_psf_dataset: record count does not match manifest");
    } catch (const json::exception& e) {
        throw InputError("load_psf_dataset: bad manifest: " + std::string(e.what()));
    }
    return ds;
}

} // namespace lensmtf::psf_lab
