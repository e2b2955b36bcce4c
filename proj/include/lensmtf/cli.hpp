#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lensmtf::cli {

// exit codes shared by every subcommand
inline constexpr int kOk = 0;
inline constexpr int kCheckFailed = 1;
inline constexpr int kInputError = 2;
inline constexpr int kNumericError = 3;

struct PanelOptions {
    std::string input_dir;
    std::string output_dir;
    std::string lens_id = "unknown";
    double aperture = 0.0;
    double pitch_um = 4.14;
    int patch_px = 31;
    double spacing_mm = 25.0;
    double pinhole_um = 150.0;
    int grid_cols = 80;
    int grid_rows = 60;
    double image_spacing_px = 111.0;
};

struct TrainOptions {
    bool desk_scale = false;
    std::string source = "pattern";  // pattern | natural
    std::string natural_dir;
    std::string psf_dataset;  // common-frame pool from measured kernels instead of synthetic ones
    long steps = 20000;
    int batch = 32;
    int patches_per_group = 1;
    uint64_t seed = 1;
    double noise_min = 0.0;
    double noise_max = 0.02;
    int pool_size = 400;
    int val_pool_size = 80;
    int val_groups = 64;
    long val_every = 500;
    double lr_start = 1e-4;
    double lr_end = 1e-6;
    std::string checkpoint = "checkpoint.lmtf";
    std::string log_csv;  // default: checkpoint + ".log.csv"
    int workers = 1;
};

struct EstimateOptions {
    std::string checkpoint;
    std::vector<std::string> images;
    double pitch_um = 4.14;
    int grid_radii = 12;
    int grid_angles = 16;
    std::string mode = "azimuthal";  // azimuthal | ray | both
    double ray_phi_deg = 45.0;
    bool no_compensation = false;
    bool json_stdout = false;
    std::string out_prefix = "chart";
    std::string lens_id;
    double aperture = 0.0;
    int workers = 1;
};

struct OracleOptions {
    bool json = false;
    uint64_t seed = 7;
    bool break_fft = false;  // negative control: inject a broken FFT normalization
};

struct PatternOptions {
    std::string out_path = "pattern.pgm";
    int width_px = 2048;
    int height_px = 2048;
    double dpi = 300.0;
    double period_mm = 8.5;
    double rotation_deg = 0.0;
    double low = 0.05;
    double high = 0.95;
};

int cmd_panel(const PanelOptions& opt);
int cmd_train(const TrainOptions& opt);
int cmd_estimate(const EstimateOptions& opt);
int cmd_oracle(const OracleOptions& opt);
int cmd_pattern(const PatternOptions& opt);

// parses argv and dispatches; returns the process exit code
int run(int argc, const char* const* argv);

} // namespace lensmtf::cli
