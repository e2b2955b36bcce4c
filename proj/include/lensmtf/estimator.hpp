#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lensmtf/geometry.hpp"
#include "lensmtf/mtf_core.hpp"
#include "lensmtf/net.hpp"
#include "lensmtf/training_data.hpp"

namespace lensmtf::estimator {

// Turns a raw patch into the two network input tensors: copy A as-is, copy B
// transposed so the u and v axes trade places. Each copy is range-scaled to
// [0,1], has its mean removed, gains a horizontal gradient channel, and is
// folded subsample x subsample into channels. Feeding copy B through the same
// trunk yields the tangential prediction.
std::pair<geometry::ChannelStack, geometry::ChannelStack> preprocess(const geometry::GrayImage& patch,
                                                                     const NetConfig& cfg);

// copy a preprocessed stack into `dst` starting at image slot `image_index`
// (activation layout: channels x images*S*S)
template <typename T>
void stack_to_input(const geometry::ChannelStack& stack, Mat<T>& dst, int image_index) {
    int hw = stack.height * stack.width;
    for (int c = 0; c < stack.channels; c++)
        for (int y = 0; y < stack.height; y++)
            for (int x = 0; x < stack.width; x++)
                dst(c, Eigen::Index(image_index) * hw + y * stack.width + x) = T(stack.at(c, y, x));
}

struct SinglePass {
    std::array<double, 8> values;  // sigmoid outputs for this copy
    std::vector<double> feature;   // trunk output, before the fully connected head
};

// one copy through trunk + head (no averaging); building block for the tests
SinglePass forward_single(const Net<float>& net, const geometry::ChannelStack& stack);

std::vector<double> average_features(const std::vector<std::vector<double>>& feats);

// joint estimate from several patches that share the same blur: per-patch
// trunk features are averaged per copy, then the head runs once per direction
mtf_core::MtfLabel predict_multi(const Net<float>& net, const std::vector<geometry::GrayImage>& patches);

inline mtf_core::MtfLabel predict_one(const Net<float>& net, const geometry::GrayImage& patch) {
    return predict_multi(net, {patch});
}

double label_loss(const mtf_core::MtfLabel& pred, const mtf_core::MtfLabel& target);

// ---- training ---------------------------------------------------------------

struct TrainConfig {
    long steps = 20000;
    int batch_groups = 32;
    int patches_per_group = 1;  // >1 trains the feature-averaging path
    double lr_start = 1e-4;
    double lr_end = 1e-6;
    int lr_stages = 3;          // geometric decay, equal-length stages
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    uint64_t seed = 1;
    long val_every = 500;
};

struct LogRow {
    long step = 0;
    double lr = 0;
    double train_loss = 0;
    double val_loss = -1;  // negative when not evaluated this step
};

// produces the patches of one training group; all patches in a group must
// share one blur so their labels agree
using GroupFn = std::function<std::vector<training_data::TrainingExample>(uint64_t group_index)>;

struct TrainResult {
    Net<float> net;
    std::vector<LogRow> log;
};

TrainResult train(const NetConfig& net_cfg, const TrainConfig& cfg, const GroupFn& train_groups,
                  const GroupFn& val_groups = nullptr, int val_group_count = 0);

double lr_at_step(const TrainConfig& cfg, long step);

// ---- checkpoints -------------------------------------------------------------

struct Checkpoint {
    NetConfig cfg;
    Net<float> net;
    std::map<std::string, double> meta;
};

void save_checkpoint(const std::filesystem::path& path, const Net<float>& net,
                     const std::map<std::string, double>& meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace lensmtf::estimator
