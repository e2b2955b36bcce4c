#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lensmtf/util.hpp"

namespace lensmtf::estimator {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

struct ConvSpec {
    int k = 3;
    int channels = 64;
    int stride = 1;
};

// Architecture description. The trunk is an initial convolution followed by
// residual blocks (two same-size convolutions each; a strided 1x1 projection
// carries the shortcut when the stride or width changes), then a fully
// connected head ending in a sigmoid. There are no normalization layers.
struct NetConfig {
    int input_size = 192;
    int subsample = 6;
    ConvSpec initial{5, 128, 1};
    std::vector<ConvSpec> blocks{{5, 128, 1}, {3, 128, 2}, {3, 256, 2},
                                 {3, 256, 2}, {3, 256, 2}, {2, 256, 2}};
    std::vector<int> fc{256, 256, 128};
    int outputs = 8;
    bool desk_scale = false;
    bool use_batch_norm = false;  // rejected by validate(); exists so the refusal is testable

    int net_input() const { return input_size / subsample; }
    int in_channels() const { return 2 * subsample * subsample; }

    static NetConfig full() { return NetConfig{}; }

    // Quarter widths, 48 px input, and one fewer downsampling stage so the
    // 16 x 16 post-subsample grid still ends at 1 x 1. Runs in minutes on a CPU.
    static NetConfig desk() {
        NetConfig c;
        c.input_size = 48;
        c.subsample = 3;
        c.initial = {3, 32, 1};
        c.blocks = {{3, 32, 2}, {3, 64, 2}, {3, 64, 2}, {2, 64, 2}};
        c.fc = {64, 64, 32};
        c.desk_scale = true;
        return c;
    }

    void validate() const {
        if (use_batch_norm)
            throw std::invalid_argument("NetConfig: batch normalization is not part of this architecture");
        if (input_size <= 0 || subsample <= 0 || input_size % subsample != 0)
            throw std::invalid_argument("NetConfig: input_size must be a positive multiple of subsample");
        if (outputs <= 0 || blocks.empty())
            throw std::invalid_argument("NetConfig: need outputs and at least one block");
        int s = net_input();
        if (initial.stride != 1) throw std::invalid_argument("NetConfig: initial conv must be stride 1");
        for (const ConvSpec& b : blocks) {
            if (b.stride < 1 || b.k < 1 || b.channels < 1)
                throw std::invalid_argument("NetConfig: bad block spec");
            s = (s + b.stride - 1) / b.stride;
        }
        if (s != 1)
            throw std::invalid_argument("NetConfig: spatial size must reach 1x1 through the blocks");
        for (int f : fc)
            if (f < 1) throw std::invalid_argument("NetConfig: bad fc width");
    }
};

namespace detail {

// TF-style SAME padding: output ceil(in/stride), surplus padding on the bottom/right.
inline int same_out(int in, int stride) { return (in + stride - 1) / stride; }
inline int same_pad_begin(int in, int k, int stride) {
    int out = same_out(in, stride);
    int total = std::max((out - 1) * stride + k - in, 0);
    return total / 2;
}

} // namespace detail

// CNN regressor with explicit forward/backward passes. Activations are stored
// as (channels x images*height*width) matrices, one column per pixel, so a
// convolution is one im2col plus one GEMM. The scalar type is a template
// parameter: float for training and inference, double for gradient checks.
template <typename T>
class Net {
public:
    using M = Mat<T>;
    using V = Vec<T>;

    struct Conv {
        int k = 0, cin = 0, cout = 0, stride = 1;
        bool has_bias = true;
        M W;  // cout x k*k*cin, row co, column (ky*k + kx)*cin + ci
        V b;
        M gW;
        V gb;
    };

    struct Block {
        Conv c1, c2;
        bool has_proj = false;
        Conv proj;
        int h_in = 0, w_in = 0, h_out = 0, w_out = 0;
    };

    struct Fc {
        int nin = 0, nout = 0;
        M W;
        V b;
        M gW;
        V gb;
    };

    // everything the backward pass and the finite-difference path need to
    // restart computation mid-network
    struct Cache {
        int images = 0;      // trunk batch size
        int n_patches = 1;   // group size for feature averaging
        M x0;
        M col0, a0;          // initial conv
        struct BlockCache {
            M in, col1, a1, col2, colp, out;
        };
        std::vector<BlockCache> blocks;
        M feat;              // trunk output, channels x images
        M feat_avg;          // channels x groups
        std::vector<M> fc_in;  // input to each fc layer (fc_in[0] == feat_avg)
        M pred;              // post-sigmoid
    };

    explicit Net(const NetConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        int s = cfg.net_input();
        initial_ = make_conv(cfg.initial.k, cfg.in_channels(), cfg.initial.channels, 1, true);
        int ch = cfg.initial.channels;
        for (const ConvSpec& bs : cfg.blocks) {
            Block b;
            b.h_in = b.w_in = s;
            b.h_out = b.w_out = detail::same_out(s, bs.stride);
            b.c1 = make_conv(bs.k, ch, bs.channels, bs.stride, true);
            b.c2 = make_conv(bs.k, bs.channels, bs.channels, 1, true);
            b.has_proj = bs.stride != 1 || ch != bs.channels;
            if (b.has_proj) b.proj = make_conv(1, ch, bs.channels, bs.stride, false);
            blocks_.push_back(std::move(b));
            ch = bs.channels;
            s = detail::same_out(s, bs.stride);
        }
        feat_dim_ = ch;
        int nin = ch;
        for (int width : cfg.fc) {
            fcs_.push_back(make_fc(nin, width));
            nin = width;
        }
        out_ = make_fc(nin, cfg.outputs);
        build_param_index();
    }

    const NetConfig& config() const { return cfg_; }
    int feature_dim() const { return feat_dim_; }

    // He initialization, single deterministic stream over the canonical
    // parameter order
    void init_params(uint64_t seed) {
        Rng rng(seed);
        auto fill = [&](M& W, int fan_in) {
            T s = T(std::sqrt(2.0 / fan_in));
            for (int r = 0; r < W.rows(); r++)
                for (int c = 0; c < W.cols(); c++) W(r, c) = T(rng.normal()) * s;
        };
        fill(initial_.W, initial_.k * initial_.k * initial_.cin);
        initial_.b.setZero();
        for (Block& b : blocks_) {
            fill(b.c1.W, b.c1.k * b.c1.k * b.c1.cin);
            b.c1.b.setZero();
            fill(b.c2.W, b.c2.k * b.c2.k * b.c2.cin);
            b.c2.b.setZero();
            if (b.has_proj) fill(b.proj.W, b.proj.cin);
        }
        for (Fc& f : fcs_) {
            fill(f.W, f.nin);
            f.b.setZero();
        }
        fill(out_.W, out_.nin);
        out_.b.setZero();
    }

    // ---- forward -----------------------------------------------------------

    // input: (in_channels x images*S*S); images must be groups*n_patches*2
    // with the two direction copies direction-major. Returns predictions
    // (outputs x 2*groups).
    M predict(const M& input, int images, int n_patches, Cache* cache = nullptr) const {
        M feat = trunk(input, images, cache);
        M avg = group_average(feat, n_patches);
        if (cache) {
            cache->images = images;
            cache->n_patches = n_patches;
            cache->feat = feat;
            cache->feat_avg = avg;
        }
        return head(avg, cache);
    }

    T loss_value(const M& pred, const M& targets) const {
        return (pred - targets).squaredNorm() / T(pred.size());
    }

    T forward_loss(const M& input, int images, int n_patches, const M& targets,
                   Cache* cache = nullptr) const {
        return loss_value(predict(input, images, n_patches, cache), targets);
    }

    // ---- backward ----------------------------------------------------------

    void zero_grads() {
        for (auto& p : params_) std::memset(p.g, 0, p.n * sizeof(T));
    }

    // fills parameter gradients of the mean squared error; requires the cache
    // of the matching forward pass
    void backward(const Cache& cache, const M& targets) {
        const int n = cache.n_patches;
        M dpred = T(2) / T(cache.pred.size()) * (cache.pred - targets);
        M davg = head_backward(cache, dpred);
        // feature averaging distributes 1/n to every contributing patch
        M dfeat(feat_dim_, cache.images);
        int groups = int(cache.feat_avg.cols());
        for (int g = 0; g < groups; g++)
            for (int j = 0; j < n; j++) dfeat.col(size_t(g) * n + j) = davg.col(g) / T(n);
        trunk_backward(cache, dfeat);
    }

    // ---- finite-difference support ----------------------------------------

    // stage 0: initial conv; stages 1..blocks: residual blocks; last stage: head.
    int stages() const { return int(blocks_.size()) + 2; }

    // recompute the loss from the cached input of `stage` onward; exact because
    // parameters of earlier stages are untouched by construction
    T loss_from_stage(const Cache& cache, int stage, const M& targets) const {
        int nb = int(blocks_.size());
        M x;
        if (stage <= 0) {
            x = conv_relu(initial_, cache.x0, cache.images, cfg_.net_input(), cfg_.net_input(), nullptr,
                          nullptr);
            stage = 1;
        } else if (stage <= nb) {
            x = cache.blocks[size_t(stage) - 1].in;
        } else {
            x = cache.feat;
        }
        for (int i = stage - 1; i < nb && stage <= nb; i++)
            x = block_forward(blocks_[i], x, cache.images, nullptr);
        M avg = group_average(x, cache.n_patches);
        return loss_value(head(avg, nullptr), targets);
    }

    struct ParamInfo {
        T* w;
        T* g;
        size_t n;
        int stage;
        std::string name;
    };
    const std::vector<ParamInfo>& params() const { return params_; }
    std::vector<ParamInfo>& params() { return params_; }
    size_t param_count() const {
        size_t n = 0;
        for (const auto& p : params_) n += p.n;
        return n;
    }

    // ---- Adam --------------------------------------------------------------

    struct AdamState {
        std::vector<std::vector<T>> m, v;
        long t = 0;
    };

    void adam_step(AdamState& st, T lr, T beta1, T beta2, T eps) {
        if (st.m.empty()) {
            st.m.resize(params_.size());
            st.v.resize(params_.size());
            for (size_t i = 0; i < params_.size(); i++) {
                st.m[i].assign(params_[i].n, T(0));
                st.v[i].assign(params_[i].n, T(0));
            }
        }
        st.t++;
        T c1 = T(1) - std::pow(beta1, T(st.t));
        T c2 = T(1) - std::pow(beta2, T(st.t));
        for (size_t i = 0; i < params_.size(); i++) {
            T* w = params_[i].w;
            T* g = params_[i].g;
            T* m = st.m[i].data();
            T* v = st.v[i].data();
            for (size_t j = 0; j < params_[i].n; j++) {
                m[j] = beta1 * m[j] + (T(1) - beta1) * g[j];
                v[j] = beta2 * v[j] + (T(1) - beta2) * g[j] * g[j];
                w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
            }
        }
    }

    // ---- layer access for serialization ------------------------------------

    const Conv& initial_conv() const { return initial_; }
    Conv& initial_conv() { return initial_; }
    const std::vector<Block>& blocks() const { return blocks_; }
    std::vector<Block>& blocks() { return blocks_; }
    const std::vector<Fc>& fc_layers() const { return fcs_; }
    std::vector<Fc>& fc_layers() { return fcs_; }
    const Fc& out_layer() const { return out_; }
    Fc& out_layer() { return out_; }

    // trunk output per image (before averaging); used by the multi-patch path
    M trunk(const M& input, int images, Cache* cache = nullptr) const {
        if (input.rows() != cfg_.in_channels() ||
            input.cols() != Eigen::Index(images) * cfg_.net_input() * cfg_.net_input())
            throw std::invalid_argument("Net: input shape mismatch");
        if (cache) {
            cache->images = images;
            cache->x0 = input;
            cache->blocks.resize(blocks_.size());
        }
        int s = cfg_.net_input();
        M x = conv_relu(initial_, input, images, s, s, cache ? &cache->col0 : nullptr,
                        cache ? &cache->a0 : nullptr);
        for (size_t i = 0; i < blocks_.size(); i++)
            x = block_forward(blocks_[i], x, images, cache ? &cache->blocks[i] : nullptr);
        return x;  // channels x images (spatial collapsed to 1x1)
    }

    // mean over groups of n consecutive columns; addends are sorted before
    // summation so the result is exactly invariant to patch order
    static M group_average(const M& feat, int n) {
        if (n <= 0 || feat.cols() % n != 0)
            throw std::invalid_argument("Net: feature count not divisible by group size");
        int groups = int(feat.cols()) / n;
        M avg(feat.rows(), groups);
        std::vector<T> vals(size_t(n), T(0));
        for (int g = 0; g < groups; g++)
            for (int r = 0; r < feat.rows(); r++) {
                for (int j = 0; j < n; j++) vals[size_t(j)] = feat(r, size_t(g) * n + j);
                std::sort(vals.begin(), vals.end());
                T s = T(0);
                for (T v : vals) s += v;
                avg(r, g) = s / T(n);
            }
        return avg;
    }

    M head(const M& feat_avg, Cache* cache) const {
        if (cache) {
            cache->fc_in.clear();
            cache->fc_in.reserve(fcs_.size() + 1);
        }
        M x = feat_avg;
        for (const Fc& f : fcs_) {
            if (cache) cache->fc_in.push_back(x);
            x = ((f.W * x).colwise() + f.b).cwiseMax(T(0));
        }
        if (cache) cache->fc_in.push_back(x);
        M z = (out_.W * x).colwise() + out_.b;
        M pred = z.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
        if (cache) cache->pred = pred;
        return pred;
    }

private:
    static Conv make_conv(int k, int cin, int cout, int stride, bool bias) {
        Conv c;
        c.k = k;
        c.cin = cin;
        c.cout = cout;
        c.stride = stride;
        c.has_bias = bias;
        c.W = M::Zero(cout, k * k * cin);
        c.b = V::Zero(cout);
        c.gW = M::Zero(cout, k * k * cin);
        c.gb = V::Zero(cout);
        return c;
    }

    static Fc make_fc(int nin, int nout) {
        Fc f;
        f.nin = nin;
        f.nout = nout;
        f.W = M::Zero(nout, nin);
        f.b = V::Zero(nout);
        f.gW = M::Zero(nout, nin);
        f.gb = V::Zero(nout);
        return f;
    }

    void build_param_index() {
        params_.clear();
        auto add = [&](M& W, M& gW, int stage, const std::string& name) {
            params_.push_back({W.data(), gW.data(), size_t(W.size()), stage, name});
        };
        auto addv = [&](V& b, V& gb, int stage, const std::string& name) {
            params_.push_back({b.data(), gb.data(), size_t(b.size()), stage, name});
        };
        add(initial_.W, initial_.gW, 0, "initial.W");
        addv(initial_.b, initial_.gb, 0, "initial.b");
        int head_stage = int(blocks_.size()) + 1;
        for (size_t i = 0; i < blocks_.size(); i++) {
            Block& b = blocks_[i];
            std::string p = "block" + std::to_string(i);
            int stage = int(i) + 1;
            add(b.c1.W, b.c1.gW, stage, p + ".c1.W");
            addv(b.c1.b, b.c1.gb, stage, p + ".c1.b");
            add(b.c2.W, b.c2.gW, stage, p + ".c2.W");
            addv(b.c2.b, b.c2.gb, stage, p + ".c2.b");
            if (b.has_proj) add(b.proj.W, b.proj.gW, stage, p + ".proj.W");
        }
        for (size_t i = 0; i < fcs_.size(); i++) {
            add(fcs_[i].W, fcs_[i].gW, head_stage, "fc" + std::to_string(i) + ".W");
            addv(fcs_[i].b, fcs_[i].gb, head_stage, "fc" + std::to_string(i) + ".b");
        }
        add(out_.W, out_.gW, head_stage, "out.W");
        addv(out_.b, out_.gb, head_stage, "out.b");
    }

    // ---- conv plumbing -----------------------------------------------------

    static void im2col(const M& in, int images, int H, int W, int cin, int k, int stride,
                       int pad_beg, int Ho, int Wo, M& col) {
        col.resize(Eigen::Index(k) * k * cin, Eigen::Index(images) * Ho * Wo);
        for (int b = 0; b < images; b++)
            for (int oy = 0; oy < Ho; oy++)
                for (int ox = 0; ox < Wo; ox++) {
                    Eigen::Index cidx = (Eigen::Index(b) * Ho + oy) * Wo + ox;
                    T* dst = col.data() + cidx * col.rows();
                    for (int ky = 0; ky < k; ky++) {
                        int iy = oy * stride - pad_beg + ky;
                        for (int kx = 0; kx < k; kx++) {
                            int ix = ox * stride - pad_beg + kx;
                            T* seg = dst + (Eigen::Index(ky) * k + kx) * cin;
                            if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
                                const T* src = in.data() + ((Eigen::Index(b) * H + iy) * W + ix) * cin;
                                std::memcpy(seg, src, size_t(cin) * sizeof(T));
                            } else {
                                std::memset(seg, 0, size_t(cin) * sizeof(T));
                            }
                        }
                    }
                }
    }

    static void col2im_add(const M& dcol, int images, int H, int W, int cin, int k, int stride,
                           int pad_beg, int Ho, int Wo, M& din) {
        for (int b = 0; b < images; b++)
            for (int oy = 0; oy < Ho; oy++)
                for (int ox = 0; ox < Wo; ox++) {
                    Eigen::Index cidx = (Eigen::Index(b) * Ho + oy) * Wo + ox;
                    const T* src = dcol.data() + cidx * dcol.rows();
                    for (int ky = 0; ky < k; ky++) {
                        int iy = oy * stride - pad_beg + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < k; kx++) {
                            int ix = ox * stride - pad_beg + kx;
                            if (ix < 0 || ix >= W) continue;
                            T* dst = din.data() + ((Eigen::Index(b) * H + iy) * W + ix) * cin;
                            const T* seg = src + (Eigen::Index(ky) * k + kx) * cin;
                            for (int c = 0; c < cin; c++) dst[c] += seg[c];
                        }
                    }
                }
    }

    // conv + optional ReLU; caches the column matrix and the activation
    static M conv_apply(const Conv& c, const M& in, int images, int H, int W, bool relu, M* col_cache,
                        M* act_cache) {
        int Ho = detail::same_out(H, c.stride);
        int Wo = detail::same_out(W, c.stride);
        int pad = detail::same_pad_begin(H, c.k, c.stride);
        M local_col;
        M& col = col_cache ? *col_cache : local_col;
        im2col(in, images, H, W, c.cin, c.k, c.stride, pad, Ho, Wo, col);
        M out;
        out.noalias() = c.W * col;
        if (c.has_bias) out.colwise() += c.b;
        if (relu) out = out.cwiseMax(T(0));
        if (act_cache) *act_cache = out;
        return out;
    }

    M conv_relu(const Conv& c, const M& in, int images, int H, int W, M* col_cache,
                M* act_cache) const {
        return conv_apply(c, in, images, H, W, true, col_cache, act_cache);
    }

    // dOut -> accumulates gW/gb, returns dIn
    static M conv_backward(Conv& c, const M& dout, const M& col, int images, int H, int W) {
        int Ho = detail::same_out(H, c.stride);
        int Wo = detail::same_out(W, c.stride);
        int pad = detail::same_pad_begin(H, c.k, c.stride);
        c.gW.noalias() += dout * col.transpose();
        if (c.has_bias) c.gb.noalias() += dout.rowwise().sum();
        M dcol;
        dcol.noalias() = c.W.transpose() * dout;
        M din = M::Zero(c.cin, Eigen::Index(images) * H * W);
        col2im_add(dcol, images, H, W, c.cin, c.k, c.stride, pad, Ho, Wo, din);
        return din;
    }

    M block_forward(const Block& blk, const M& in, int images, typename Cache::BlockCache* bc) const {
        if (bc) bc->in = in;
        M a1 = conv_apply(blk.c1, in, images, blk.h_in, blk.w_in, true, bc ? &bc->col1 : nullptr,
                          bc ? &bc->a1 : nullptr);
        M z2 = conv_apply(blk.c2, a1, images, blk.h_out, blk.w_out, false, bc ? &bc->col2 : nullptr,
                          nullptr);
        M sc;
        if (blk.has_proj)
            sc = conv_apply(blk.proj, in, images, blk.h_in, blk.w_in, false,
                            bc ? &bc->colp : nullptr, nullptr);
        else
            sc = in;
        M out = (z2 + sc).cwiseMax(T(0));
        if (bc) bc->out = out;
        return out;
    }

    M block_backward(Block& blk, const typename Cache::BlockCache& bc, const M& dout, int images) {
        M dz = dout.cwiseProduct((bc.out.array() > T(0)).template cast<T>().matrix());
        M da1 = conv_backward(blk.c2, dz, bc.col2, images, blk.h_out, blk.w_out);
        M dz1 = da1.cwiseProduct((bc.a1.array() > T(0)).template cast<T>().matrix());
        M din = conv_backward(blk.c1, dz1, bc.col1, images, blk.h_in, blk.w_in);
        if (blk.has_proj)
            din += conv_backward(blk.proj, dz, bc.colp, images, blk.h_in, blk.w_in);
        else
            din += dz;
        return din;
    }

    // returns gradient w.r.t. the averaged features
    M head_backward(const Cache& cache, const M& dpred) {
        M dz = dpred.cwiseProduct(cache.pred.cwiseProduct(M::Ones(cache.pred.rows(), cache.pred.cols()) - cache.pred));
        const M& last_in = cache.fc_in.back();
        out_.gW.noalias() += dz * last_in.transpose();
        out_.gb.noalias() += dz.rowwise().sum();
        M dx;
        dx.noalias() = out_.W.transpose() * dz;
        for (int i = int(fcs_.size()) - 1; i >= 0; i--) {
            const M& post = cache.fc_in[size_t(i) + 1];  // post-relu output of layer i
            M dzi = dx.cwiseProduct((post.array() > T(0)).template cast<T>().matrix());
            fcs_[size_t(i)].gW.noalias() += dzi * cache.fc_in[size_t(i)].transpose();
            fcs_[size_t(i)].gb.noalias() += dzi.rowwise().sum();
            dx.noalias() = fcs_[size_t(i)].W.transpose() * dzi;
        }
        return dx;
    }

    void trunk_backward(const Cache& cache, const M& dfeat) {
        M dx = dfeat;
        for (int i = int(blocks_.size()) - 1; i >= 0; i--)
            dx = block_backward(blocks_[size_t(i)], cache.blocks[size_t(i)], dx, cache.images);
        M dz0 = dx.cwiseProduct((cache.a0.array() > T(0)).template cast<T>().matrix());
        conv_backward(initial_, dz0, cache.col0, cache.images, cfg_.net_input(), cfg_.net_input());
    }

    NetConfig cfg_;
    Conv initial_;
    std::vector<Block> blocks_;
    std::vector<Fc> fcs_;
    Fc out_;
    int feat_dim_ = 0;
    std::vector<ParamInfo> params_;
};

} // namespace lensmtf::estimator
