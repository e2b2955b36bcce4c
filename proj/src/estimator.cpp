#include "lensmtf/estimator.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace lensmtf::estimator {

using geometry::ChannelStack;
using geometry::GrayImage;
using json = nlohmann::json;

std::pair<ChannelStack, ChannelStack> preprocess(const GrayImage& patch, const NetConfig& cfg) {
    if (patch.width != cfg.input_size || patch.height != cfg.input_size)
        throw std::invalid_argument("preprocess: patch must be " + std::to_string(cfg.input_size) +
                                    " pixels square");

    GrayImage norm = patch;
    auto [mn_it, mx_it] = std::minmax_element(norm.data.begin(), norm.data.end());
    double mn = *mn_it, range = *mx_it - *mn_it;
    if (range > 0.0)
        for (double& v : norm.data) v = (v - mn) / range;
    else
        for (double& v : norm.data) v = 0.0;

    // mean over the sorted values: summation order, and therefore the result,
    // is identical for the patch and its transpose
    std::vector<double> sorted = norm.data;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    double mean = sum / double(sorted.size());
    for (double& v : norm.data) v -= mean;

    GrayImage flipped(norm.height, norm.width, 0.0, norm.pixel_pitch);
    for (int y = 0; y < flipped.height; y++)
        for (int x = 0; x < flipped.width; x++) flipped.at(x, y) = norm.at(y, x);

    auto build = [&](const GrayImage& img) {
        GrayImage grad = geometry::sobel_gradient(img, geometry::SobelAxis::horizontal);
        ChannelStack two(img.height, img.width, 2);
        for (int y = 0; y < img.height; y++)
            for (int x = 0; x < img.width; x++) {
                two.at(0, y, x) = img.at(x, y);
                two.at(1, y, x) = grad.at(x, y);
            }
        return geometry::subsample_to_channels(two, cfg.subsample);
    };
    return {build(norm), build(flipped)};
}

namespace {

// Inference always pushes one image at a time through the trunk and one
// column at a time through the head. Keeping the matrix shapes fixed keeps
// the floating-point result independent of how many patches arrive together;
// batched shapes would change the BLAS kernel selection and with it the
// rounding, breaking the exact single/multi-patch agreement.
Mat<float> stack_feature(const Net<float>& net, const ChannelStack& stack) {
    const NetConfig& cfg = net.config();
    int s = cfg.net_input();
    if (stack.height != s || stack.width != s || stack.channels != cfg.in_channels())
        throw std::invalid_argument("estimator: stack shape does not match the network");
    Mat<float> input(cfg.in_channels(), Eigen::Index(s) * s);
    stack_to_input(stack, input, 0);
    return net.trunk(input, 1);
}

std::array<double, 8> head_values(const Net<float>& net, const std::vector<double>& feature) {
    Mat<float> col(Eigen::Index(feature.size()), 1);
    for (size_t i = 0; i < feature.size(); i++) col(Eigen::Index(i), 0) = float(feature[i]);
    Mat<float> pred = net.head(col, nullptr);
    std::array<double, 8> out{};
    for (int k = 0; k < 8; k++) out[size_t(k)] = double(pred(k, 0));
    return out;
}

} // namespace

SinglePass forward_single(const Net<float>& net, const ChannelStack& stack) {
    Mat<float> feat = stack_feature(net, stack);
    Mat<float> pred = net.head(feat, nullptr);

    SinglePass out;
    out.feature.resize(size_t(feat.rows()));
    for (int i = 0; i < feat.rows(); i++) out.feature[size_t(i)] = double(feat(i, 0));
    for (int k = 0; k < 8; k++) out.values[size_t(k)] = double(pred(k, 0));
    return out;
}

std::vector<double> average_features(const std::vector<std::vector<double>>& feats) {
    if (feats.empty()) throw std::invalid_argument("average_features: empty list");
    size_t dim = feats[0].size();
    for (const auto& f : feats)
        if (f.size() != dim) throw std::invalid_argument("average_features: length mismatch");
    std::vector<double> avg(dim, 0.0);
    std::vector<double> vals(feats.size());
    for (size_t i = 0; i < dim; i++) {
        for (size_t j = 0; j < feats.size(); j++) vals[j] = feats[j][i];
        std::sort(vals.begin(), vals.end());
        double s = 0.0;
        for (double v : vals) s += v;
        avg[i] = s / double(feats.size());
    }
    return avg;
}

mtf_core::MtfLabel predict_multi(const Net<float>& net, const std::vector<GrayImage>& patches) {
    if (patches.empty()) throw std::invalid_argument("predict_multi: no patches");
    const NetConfig& cfg = net.config();

    std::vector<std::vector<double>> feats_a, feats_b;
    feats_a.reserve(patches.size());
    feats_b.reserve(patches.size());
    auto feature_of = [&](const ChannelStack& stack) {
        Mat<float> feat = stack_feature(net, stack);
        std::vector<double> f(size_t(feat.rows()));
        for (int i = 0; i < feat.rows(); i++) f[size_t(i)] = double(feat(i, 0));
        return f;
    };
    for (const GrayImage& patch : patches) {
        auto stacks = preprocess(patch, cfg);
        feats_a.push_back(feature_of(stacks.first));
        feats_b.push_back(feature_of(stacks.second));
    }

    mtf_core::MtfLabel label;
    label.radial = head_values(net, average_features(feats_a));
    label.tangential = head_values(net, average_features(feats_b));
    return label;
}

double label_loss(const mtf_core::MtfLabel& pred, const mtf_core::MtfLabel& target) {
    double s = 0.0;
    for (int i = 0; i < mtf_core::MtfLabel::size(); i++) {
        double d = pred[i] - target[i];
        s += d * d;
    }
    return s / mtf_core::MtfLabel::size();
}

// ---- training ---------------------------------------------------------------

double lr_at_step(const TrainConfig& cfg, long step) {
    if (cfg.lr_stages <= 1 || cfg.steps <= 0) return cfg.lr_start;
    long stage_len = (cfg.steps + cfg.lr_stages - 1) / cfg.lr_stages;
    long stage = std::min<long>(step / stage_len, cfg.lr_stages - 1);
    return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, double(stage) / (cfg.lr_stages - 1));
}

TrainResult train(const NetConfig& net_cfg, const TrainConfig& cfg, const GroupFn& train_groups,
                  const GroupFn& val_groups, int val_group_count) {
    net_cfg.validate();
    if (cfg.batch_groups < 1 || cfg.patches_per_group < 1)
        throw std::invalid_argument("train: bad batch configuration");

    Net<float> net(net_cfg);
    net.init_params(cfg.seed);

    const int S = net_cfg.net_input();
    const int Cin = net_cfg.in_channels();
    const int G = cfg.batch_groups;
    const int n = cfg.patches_per_group;
    const int images = 2 * G * n;

    auto fill_batch = [&](const GroupFn& fn, uint64_t base, int groups, Mat<float>& in,
                          Mat<float>& tgt) {
        for (int g = 0; g < groups; g++) {
            std::vector<training_data::TrainingExample> group = fn(base + uint64_t(g));
            if (int(group.size()) != n)
                throw std::invalid_argument("train: group size does not match patches_per_group");
            for (int j = 0; j < n; j++) {
                auto stacks = preprocess(group[size_t(j)].input, net_cfg);
                stack_to_input(stacks.first, in, g * n + j);
                stack_to_input(stacks.second, in, groups * n + g * n + j);
            }
            for (int k = 0; k < 8; k++) {
                tgt(k, g) = float(group[0].label.radial[size_t(k)]);
                tgt(k, groups + g) = float(group[0].label.tangential[size_t(k)]);
            }
        }
    };

    // the validation set is fixed, so build its input tensor once
    Mat<float> val_in, val_tgt;
    int val_images = 0;
    if (val_groups && val_group_count > 0) {
        val_images = 2 * val_group_count * n;
        val_in.resize(Cin, Eigen::Index(val_images) * S * S);
        val_tgt.resize(net_cfg.outputs, Eigen::Index(2) * val_group_count);
        fill_batch(val_groups, 0, val_group_count, val_in, val_tgt);
    }

    Mat<float> input(Cin, Eigen::Index(images) * S * S);
    Mat<float> targets(net_cfg.outputs, Eigen::Index(2) * G);
    typename Net<float>::Cache cache;
    typename Net<float>::AdamState adam;
    std::vector<LogRow> log;
    log.reserve(size_t(std::max<long>(cfg.steps, 0)));

    for (long step = 0; step < cfg.steps; step++) {
        fill_batch(train_groups, uint64_t(step) * uint64_t(G), G, input, targets);

        double lr = lr_at_step(cfg, step);
        float loss = net.forward_loss(input, images, n, targets, &cache);
        if (!std::isfinite(loss))
            throw NumericError("train: loss diverged at step " + std::to_string(step));
        net.zero_grads();
        net.backward(cache, targets);
        net.adam_step(adam, float(lr), float(cfg.beta1), float(cfg.beta2), float(cfg.eps));

        LogRow row{step, lr, double(loss), -1.0};
        if (val_images > 0 && cfg.val_every > 0 &&
            ((step + 1) % cfg.val_every == 0 || step + 1 == cfg.steps))
            row.val_loss = double(net.forward_loss(val_in, val_images, n, val_tgt, nullptr));
        log.push_back(row);
    }
    return {std::move(net), std::move(log)};
}

// ---- checkpoints -------------------------------------------------------------

namespace {

constexpr char kMagic[] = "LMTFCKP1\n";
constexpr size_t kMagicLen = 9;

// weight matrices serialize row by row; for a convolution that is
// (out channel, kernel row, kernel col, in channel) order
template <typename NetT, typename FM, typename FV>
void visit_params(NetT&& net, FM&& fm, FV&& fv) {
    fm(net.initial_conv().W);
    fv(net.initial_conv().b);
    for (auto& b : net.blocks()) {
        fm(b.c1.W);
        fv(b.c1.b);
        fm(b.c2.W);
        fv(b.c2.b);
        if (b.has_proj) fm(b.proj.W);
    }
    for (auto& f : net.fc_layers()) {
        fm(f.W);
        fv(f.b);
    }
    fm(net.out_layer().W);
    fv(net.out_layer().b);
}

json spec_to_json(const ConvSpec& s) {
    return json{{"k", s.k}, {"channels", s.channels}, {"stride", s.stride}};
}

ConvSpec spec_from_json(const json& j) {
    return ConvSpec{j.at("k").get<int>(), j.at("channels").get<int>(), j.at("stride").get<int>()};
}

json config_to_json(const NetConfig& c) {
    json blocks = json::array();
    for (const ConvSpec& b : c.blocks) blocks.push_back(spec_to_json(b));
    return json{{"input_size", c.input_size}, {"subsample", c.subsample},
                {"initial", spec_to_json(c.initial)}, {"blocks", blocks},
                {"fc", c.fc},           {"outputs", c.outputs},
                {"desk_scale", c.desk_scale}};
}

NetConfig config_from_json(const json& j) {
    NetConfig c;
    c.input_size = j.at("input_size").get<int>();
    c.subsample = j.at("subsample").get<int>();
    c.initial = spec_from_json(j.at("initial"));
    c.blocks.clear();
    for (const json& b : j.at("blocks")) c.blocks.push_back(spec_from_json(b));
    c.fc = j.at("fc").get<std::vector<int>>();
    c.outputs = j.at("outputs").get<int>();
    c.desk_scale = j.value("desk_scale", false);
    return c;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Net<float>& net,
                     const std::map<std::string, double>& meta) {
    std::vector<float> blob;
    blob.reserve(net.param_count());
    visit_params(
        net,
        [&](const Mat<float>& W) {
            for (int r = 0; r < W.rows(); r++)
                for (int c = 0; c < W.cols(); c++) blob.push_back(W(r, c));
        },
        [&](const Vec<float>& b) {
            for (int i = 0; i < b.size(); i++) blob.push_back(b(i));
        });

    json header{{"config", config_to_json(net.config())},
                {"meta", meta},
                {"param_count", blob.size()}};
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("save_checkpoint: cannot open " + path.string());
    out.write(kMagic, std::streamsize(kMagicLen));
    uint64_t len = hs.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hs.data(), std::streamsize(hs.size()));
    out.write(reinterpret_cast<const char*>(blob.data()),
              std::streamsize(blob.size() * sizeof(float)));
    if (!out) throw InputError("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("load_checkpoint: cannot open " + path.string());

    char magic[kMagicLen];
    in.read(magic, std::streamsize(kMagicLen));
    if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw InputError("load_checkpoint: not a checkpoint file: " + path.string());

    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len == 0 || len > (1u << 20))
        throw InputError("load_checkpoint: corrupt header length");
    std::string hs(len, '\0');
    in.read(hs.data(), std::streamsize(len));
    if (!in) throw InputError("load_checkpoint: truncated header");

    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw InputError(std::string("load_checkpoint: bad header: ") + e.what());
    }

    NetConfig cfg = config_from_json(header.at("config"));
    cfg.validate();
    uint64_t count = header.at("param_count").get<uint64_t>();

    std::vector<float> blob(count);
    in.read(reinterpret_cast<char*>(blob.data()), std::streamsize(count * sizeof(float)));
    if (!in) throw InputError("load_checkpoint: truncated parameter blob");

    Checkpoint ck{cfg, Net<float>(cfg), {}};
    if (ck.net.param_count() != count)
        throw InputError("load_checkpoint: parameter count does not match the architecture");
    size_t pos = 0;
    visit_params(
        ck.net,
        [&](Mat<float>& W) {
            for (int r = 0; r < W.rows(); r++)
                for (int c = 0; c < W.cols(); c++) W(r, c) = blob[pos++];
        },
        [&](Vec<float>& b) {
            for (int i = 0; i < b.size(); i++) b(i) = blob[pos++];
        });

    if (header.contains("meta"))
        for (auto& [k, v] : header.at("meta").items()) ck.meta[k] = v.get<double>();
    return ck;
}

} // namespace lensmtf::estimator
