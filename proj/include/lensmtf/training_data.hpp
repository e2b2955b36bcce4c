#pragma once

#include <string>
#include <vector>

#include "lensmtf/kernel_regression.hpp"
#include "lensmtf/mtf_core.hpp"
#include "lensmtf/psf_lab.hpp"

namespace lensmtf::training_data {

using geometry::GrayImage;
using mtf_core::MtfLabel;

struct PatternParams {
    double period_px = 16.0;
    double rotation = 0.0;
    double low = 0.0, high = 1.0;
    double phase_u = 0.0, phase_v = 0.0;  // offset inside the motif cell, pixels
};

enum class SourceTag { pattern, natural, stripe };

struct TrainingExample {
    GrayImage input;  // blurred patch at the regressor's input size
    MtfLabel label;
    int psf_id = -1;
    SourceTag source = SourceTag::pattern;
};

// Checkerboard with a disk of the opposite colour inscribed in every cell,
// rotated and phase-shifted, contrast-mapped to [low, high]. Edges appear in
// all orientations. Anti-aliased by 2x supersampling.
GrayImage gen_regular_pattern(const PatternParams& params, int size);

// Bars whose intensity varies along `angle` (angle 0: variation along x, so the
// visible edges are vertical). Anti-aliased by 2x supersampling.
GrayImage gen_stripe_pattern(double angle, double period_px, double low, double high, int size);

// Random patches from sharp PGM images: each image is 2x2 box downsampled,
// then patches are drawn from the central rectangle of half the downsampled
// dimensions. Images are cycled round-robin.
std::vector<GrayImage> load_natural_patches(const std::string& directory, uint64_t seed, int count,
                                            int patch_size);

// Blur kernel plus its precomputed frequency response; the label attached to a
// training example is always the label of the exact kernel used for blurring.
struct PoolEntry {
    int P = 0;
    std::vector<double> kernel;
    MtfLabel label;
};

struct PsfPool {
    std::vector<PoolEntry> entries;
};

struct TwoGaussianRanges {
    double sigma_core_min = 0.4, sigma_core_max = 1.6;
    double sigma_wing_extra_max = 1.6;  // wing sigma = core sigma + U[0, extra]
    double weight_core_min = 0.4, weight_core_max = 1.0;
};

// Random two-Gaussian kernels with labels.
PsfPool make_artificial_pool(int count, int P, uint64_t seed,
                             const TwoGaussianRanges& ranges = {});

// Pool built from measured or interpolated records (common-frame kernels).
PsfPool make_pool_from_records(const std::vector<psf_lab::PsfRecord>& records);

struct NoiseConfig {
    double sigma_min = 0.0, sigma_max = 0.02;
};

// One supervised example: random sharp source x random pool PSF, blurred with
// random noise, center-cropped to input_size. Sources must be at least
// input_size + P - 1 on each side.
TrainingExample sample_training_example(const std::vector<GrayImage>& sources, const PsfPool& pool,
                                        const NoiseConfig& noise, int input_size, Rng& rng,
                                        SourceTag tag = SourceTag::pattern);

// n_patches examples sharing one pool PSF (and therefore one label), with
// independent sources and noise realizations.
std::vector<TrainingExample> sample_training_group(const std::vector<GrayImage>& sources,
                                                   const PsfPool& pool, const NoiseConfig& noise,
                                                   int n_patches, int input_size, Rng& rng,
                                                   SourceTag tag = SourceTag::pattern);

// Random pattern sources sized for valid convolution margins.
std::vector<GrayImage> make_pattern_sources(int count, int source_size, uint64_t seed);

} // namespace lensmtf::training_data
