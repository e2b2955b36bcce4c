#include "lensmtf/training_data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "lensmtf/pgm_io.hpp"

namespace lensmtf::training_data {

namespace fs = std::filesystem;

namespace {

// binary motif: checker parity flipped inside a centered disk of radius 0.35*period
int motif_bit(double x, double y, double period) {
    double cu = std::floor(x / period), cv = std::floor(y / period);
    int parity = (long(cu) + long(cv)) & 1 ? 1 : 0;
    double du = x - (cu + 0.5) * period, dv = y - (cv + 0.5) * period;
    bool in_disk = du * du + dv * dv < 0.1225 * period * period;
    return parity ^ (in_disk ? 1 : 0);
}

} // namespace

GrayImage gen_regular_pattern(const PatternParams& p, int size) {
    if (!(p.period_px >= 4.0)) throw std::invalid_argument("gen_regular_pattern: period too small");
    if (!(p.low >= 0.0 && p.low < p.high && p.high <= 1.0))
        throw std::invalid_argument("gen_regular_pattern: bad contrast range");
    if (size < 2 * p.period_px) throw std::invalid_argument("gen_regular_pattern: size too small");

    double c = std::cos(p.rotation), s = std::sin(p.rotation);
    GrayImage img(size, size);
    // 2x supersampling: average the motif at 4 sub-pixel offsets
    static const double off[2] = {-0.25, 0.25};
    for (int y = 0; y < size; y++)
        for (int x = 0; x < size; x++) {
            double acc = 0.0;
            for (double oy : off)
                for (double ox : off) {
                    double sx = x + ox, sy = y + oy;
                    double xr = c * sx + s * sy + p.phase_u;
                    double yr = -s * sx + c * sy + p.phase_v;
                    acc += motif_bit(xr, yr, p.period_px);
                }
            img.at(x, y) = p.low + (p.high - p.low) * (acc / 4.0);
        }
    return img;
}

GrayImage gen_stripe_pattern(double angle, double period_px, double low, double high, int size) {
    if (!(period_px >= 2.0)) throw std::invalid_argument("gen_stripe_pattern: period too small");
    if (!(low >= 0.0 && low < high && high <= 1.0))
        throw std::invalid_argument("gen_stripe_pattern: bad contrast range");
    if (size < 2 * period_px) throw std::invalid_argument("gen_stripe_pattern: size too small");

    double c = std::cos(angle), s = std::sin(angle);
    GrayImage img(size, size);
    static const double off[2] = {-0.25, 0.25};
    for (int y = 0; y < size; y++)
        for (int x = 0; x < size; x++) {
            double acc = 0.0;
            for (double oy : off)
                for (double ox : off) {
                    double t = (x + ox) * c + (y + oy) * s;
                    // even in t so the pattern is identical under angle + pi
                    acc += std::cos(2.0 * M_PI * t / period_px) >= 0.0 ? 1.0 : 0.0;
                }
            img.at(x, y) = low + (high - low) * (acc / 4.0);
        }
    return img;
}

std::vector<GrayImage> load_natural_patches(const std::string& directory, uint64_t seed, int count,
                                            int patch_size) {
    std::vector<std::string> files;
    if (fs::is_directory(directory))
        for (const auto& e : fs::directory_iterator(directory))
            if (e.path().extension() == ".pgm") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("load_natural_patches: no PGM images in " + directory);

    std::vector<GrayImage> downsampled;
    for (const std::string& f : files) {
        GrayImage img = geometry::read_pgm16(f);
        GrayImage half(img.width / 2, img.height / 2, 0.0, img.pixel_pitch * 2.0);
        if (half.width < 2 * patch_size || half.height < 2 * patch_size)
            throw InputError("load_natural_patches: image too small after downsampling: " + f);
        for (int y = 0; y < half.height; y++)
            for (int x = 0; x < half.width; x++)
                half.at(x, y) = 0.25 * (img.at(2 * x, 2 * y) + img.at(2 * x + 1, 2 * y) +
                                        img.at(2 * x, 2 * y + 1) + img.at(2 * x + 1, 2 * y + 1));
        downsampled.push_back(std::move(half));
    }

    Rng rng(seed);
    std::vector<GrayImage> patches;
    patches.reserve(size_t(count));
    for (int i = 0; i < count; i++) {
        const GrayImage& img = downsampled[size_t(i) % downsampled.size()];
        // central window of half the image dimensions
        int wx = img.width / 4, wy = img.height / 4;
        int ww = img.width / 2, wh = img.height / 2;
        int x0 = wx + rng.uniform_int(0, ww - patch_size);
        int y0 = wy + rng.uniform_int(0, wh - patch_size);
        GrayImage patch(patch_size, patch_size, 0.0, img.pixel_pitch);
        for (int y = 0; y < patch_size; y++)
            for (int x = 0; x < patch_size; x++) patch.at(x, y) = img.at(x0 + x, y0 + y);
        patches.push_back(std::move(patch));
    }
    return patches;
}

PsfPool make_artificial_pool(int count, int P, uint64_t seed, const TwoGaussianRanges& rr) {
    Rng rng(seed);
    PsfPool pool;
    pool.entries.reserve(size_t(count));
    for (int i = 0; i < count; i++) {
        psf_lab::TwoGaussianParams p;
        p.sigma_core_u = rng.uniform(rr.sigma_core_min, rr.sigma_core_max);
        p.sigma_core_v = rng.uniform(rr.sigma_core_min, rr.sigma_core_max);
        p.sigma_wing_u = p.sigma_core_u + rng.uniform(0.0, rr.sigma_wing_extra_max);
        p.sigma_wing_v = p.sigma_core_v + rng.uniform(0.0, rr.sigma_wing_extra_max);
        p.rotation = rng.uniform(0.0, M_PI);
        p.weight_core = rng.uniform(rr.weight_core_min, rr.weight_core_max);
        PoolEntry e;
        e.P = P;
        e.kernel = psf_lab::synth_two_gaussian_psf(p, P);
        e.label = mtf_core::mtf_label_of_psf(e.kernel, P);
        pool.entries.push_back(std::move(e));
    }
    return pool;
}

PsfPool make_pool_from_records(const std::vector<psf_lab::PsfRecord>& records) {
    PsfPool pool;
    pool.entries.reserve(records.size());
    for (const psf_lab::PsfRecord& r : records) {
        PoolEntry e;
        e.P = r.P;
        e.kernel = r.kernel;
        e.label = mtf_core::mtf_label_of_psf(e.kernel, e.P);
        pool.entries.push_back(std::move(e));
    }
    return pool;
}

TrainingExample sample_training_example(const std::vector<GrayImage>& sources, const PsfPool& pool,
                                        const NoiseConfig& noise, int input_size, Rng& rng,
                                        SourceTag tag) {
    return sample_training_group(sources, pool, noise, 1, input_size, rng, tag)[0];
}

std::vector<TrainingExample> sample_training_group(const std::vector<GrayImage>& sources,
                                                   const PsfPool& pool, const NoiseConfig& noise,
                                                   int n_patches, int input_size, Rng& rng,
                                                   SourceTag tag) {
    if (sources.empty()) throw std::invalid_argument("sample_training_group: no sources");
    if (pool.entries.empty()) throw std::invalid_argument("sample_training_group: empty PSF pool");
    if (n_patches < 1) throw std::invalid_argument("sample_training_group: need at least one patch");

    int psf_id = rng.uniform_int(0, int(pool.entries.size()) - 1);
    const PoolEntry& e = pool.entries[size_t(psf_id)];
    double sigma = rng.uniform(noise.sigma_min, noise.sigma_max);

    std::vector<TrainingExample> group;
    group.reserve(size_t(n_patches));
    for (int j = 0; j < n_patches; j++) {
        const GrayImage& sharp = sources[size_t(rng.uniform_int(0, int(sources.size()) - 1))];
        GrayImage blurred = psf_lab::blur_patch(sharp, e.kernel, e.P, sigma, rng);
        if (blurred.width < input_size || blurred.height < input_size)
            throw std::invalid_argument("sample_training_group: source too small for input size");

        int x0 = (blurred.width - input_size) / 2, y0 = (blurred.height - input_size) / 2;
        TrainingExample ex;
        ex.input = GrayImage(input_size, input_size, 0.0, sharp.pixel_pitch);
        for (int y = 0; y < input_size; y++)
            for (int x = 0; x < input_size; x++) ex.input.at(x, y) = blurred.at(x0 + x, y0 + y);
        ex.label = e.label;
        ex.psf_id = psf_id;
        ex.source = tag;
        group.push_back(std::move(ex));
    }
    return group;
}

std::vector<GrayImage> make_pattern_sources(int count, int source_size, uint64_t seed) {
    Rng rng(seed);
    std::vector<GrayImage> out;
    out.reserve(size_t(count));
    for (int i = 0; i < count; i++) {
        PatternParams p;
        p.period_px = rng.uniform(5.0, 14.0);
        p.rotation = rng.uniform(0.0, M_PI);
        p.low = rng.uniform(0.05, 0.3);
        p.high = rng.uniform(0.7, 0.95);
        p.phase_u = rng.uniform(0.0, p.period_px);
        p.phase_v = rng.uniform(0.0, p.period_px);
        out.push_back(gen_regular_pattern(p, source_size));
    }
    return out;
}

} // namespace lensmtf::training_data
