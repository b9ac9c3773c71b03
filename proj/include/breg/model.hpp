#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "breg/bypass.hpp"
#include "breg/error.hpp"
#include "breg/layers.hpp"
#include "breg/rng.hpp"
#include "breg/tape.hpp"

namespace breg {

struct BlockConfig {
    BypassKind bypass = BypassKind::H3;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    bool downsample = false;
    bool use_batch_norm = true;
};

struct StageConfig {
    std::size_t blocks = 0;
    std::size_t channels = 0;
};

enum class HeadKind { Classification, Regression };

// Everything needed to build a network deterministically.
struct NetworkConfig {
    std::size_t stem_channels = 16;
    std::vector<StageConfig> stages;
    BypassKind bypass = BypassKind::H3;
    HeadKind head = HeadKind::Classification;
    std::size_t classes = 2; // classification head width; regression is fixed at 2
    std::size_t in_channels = 1;
    std::size_t in_height = 48;
    std::size_t in_width = 48;
    bool use_batch_norm = true;
    std::uint64_t seed = 0;

    std::size_t head_outputs() const {
        return head == HeadKind::Classification ? classes : 2;
    }

    void validate() const {
        if (stages.empty()) throw ContractError("network config: no stages");
        if (stem_channels == 0 || in_channels == 0 || in_height == 0 || in_width == 0) {
            throw ContractError("network config: zero extent");
        }
        if (stem_channels != stages.front().channels) {
            throw ContractError(
                "network config: stem channels must equal the first stage's "
                "channels (non-downsampling blocks preserve shape)");
        }
        std::size_t prev = 0;
        for (std::size_t s = 0; s < stages.size(); ++s) {
            if (stages[s].blocks == 0) {
                throw ContractError("network config: stage " + std::to_string(s + 1) +
                                    " has no blocks");
            }
            if (stages[s].channels < prev) {
                throw ContractError("network config: stage channel counts must be "
                                    "non-decreasing");
            }
            prev = stages[s].channels;
        }
        if (head == HeadKind::Classification && classes < 2) {
            throw ContractError("network config: classification needs >= 2 classes");
        }
        // Every stage after the first halves the spatial extent once.
        std::size_t h = in_height, w = in_width;
        for (std::size_t s = 1; s < stages.size(); ++s) {
            if (h < 2 || w < 2) {
                throw ContractError("network config: input too small to downsample at "
                                    "stage " + std::to_string(s + 1));
            }
            h = conv_out_extent(h, 3, 2, 1);
            w = conv_out_extent(w, 3, 2, 1);
        }
    }
};

// Parameters of one residual block.
struct BlockParams {
    BlockConfig config;
    ConvParams conv1; // 3x3, stride 2 when downsampling
    ConvParams conv2; // 3x3, stride 1
    ConvParams proj;  // 1x1 stride-2 shortcut projection (downsampling only)
    BatchNormParams bn1, bn2;

    static BlockParams init(const BlockConfig& cfg, Rng& rng) {
        if (!cfg.downsample && cfg.in_channels != cfg.out_channels) {
            throw ContractError("block config: non-downsampling block must preserve "
                                "channel count");
        }
        if (cfg.downsample && cfg.out_channels < cfg.in_channels) {
            throw ContractError("block config: downsampling block must not shrink "
                                "channel count");
        }
        BlockParams p;
        p.config = cfg;
        p.conv1 = ConvParams::init(cfg.out_channels, cfg.in_channels, 3, 3, rng);
        p.conv2 = ConvParams::init(cfg.out_channels, cfg.out_channels, 3, 3, rng);
        if (cfg.downsample) {
            p.proj = ConvParams::init(cfg.out_channels, cfg.in_channels, 1, 1, rng);
        }
        if (cfg.use_batch_norm) {
            p.bn1 = BatchNormParams::init(cfg.out_channels);
            p.bn2 = BatchNormParams::init(cfg.out_channels);
        }
        return p;
    }
};

// One block: y = ReLU(H(x)~ + F(x)) with F = conv-[BN]-ReLU-conv-[BN].
// When downsampling, F's first conv has stride 2 and the bypass result goes
// through a learned 1x1 stride-2 projection.
inline Var breg_block_forward(Var x, BlockParams& block, bool training,
                              bool params_require_grad = false,
                              std::vector<Var>* trainable_vars = nullptr) {
    const BlockConfig& cfg = block.config;
    if (x.value().rank() != 4 || x.value().extent(1) != cfg.in_channels) {
        throw ContractError("breg_block_forward: input must be [n," +
                            std::to_string(cfg.in_channels) + ",h,w], got " +
                            shape_str(x.value().shape()));
    }
    Tape& t = *x.tape;
    const auto bind = [&](Tensor& param) {
        Tensor copy = param;
        copy.set_requires_grad(params_require_grad);
        Var v = t.leaf(std::move(copy));
        if (trainable_vars) trainable_vars->push_back(v);
        return v;
    };

    Var c1k = bind(block.conv1.kernel), c1b = bind(block.conv1.bias);
    Var f = conv2d(x, c1k, c1b, cfg.downsample ? 2 : 1, 1);
    if (cfg.use_batch_norm) {
        Var g1 = bind(block.bn1.gamma), b1 = bind(block.bn1.beta);
        f = batch_norm(f, g1, b1, block.bn1.running_mean, block.bn1.running_var,
                       training);
    }
    f = relu(f);
    Var c2k = bind(block.conv2.kernel), c2b = bind(block.conv2.bias);
    f = conv2d(f, c2k, c2b, 1, 1);
    if (cfg.use_batch_norm) {
        Var g2 = bind(block.bn2.gamma), b2 = bind(block.bn2.beta);
        f = batch_norm(f, g2, b2, block.bn2.running_mean, block.bn2.running_var,
                       training);
    }

    Var shortcut = bypass_apply(cfg.bypass, x);
    if (cfg.downsample) {
        Var pk = bind(block.proj.kernel), pb = bind(block.proj.bias);
        shortcut = conv2d(shortcut, pk, pb, 2, 0);
    }
    return relu(add(shortcut, f));
}

struct NamedParam {
    std::string name;
    Tensor* tensor;
    bool trainable;
};

// Stem conv, stages of BReG blocks (the first block of every stage after the
// first downsamples), global average pooling, fully connected head.
class Network {
public:
    explicit Network(NetworkConfig cfg) : config_(std::move(cfg)) {
        config_.validate();
        Rng rng(config_.seed);
        stem_ = ConvParams::init(config_.stem_channels, config_.in_channels, 3, 3, rng);
        if (config_.use_batch_norm) stem_bn_ = BatchNormParams::init(config_.stem_channels);
        std::size_t in_ch = config_.stem_channels;
        for (std::size_t s = 0; s < config_.stages.size(); ++s) {
            for (std::size_t b = 0; b < config_.stages[s].blocks; ++b) {
                BlockConfig bc;
                bc.bypass = config_.bypass;
                bc.in_channels = in_ch;
                bc.out_channels = config_.stages[s].channels;
                bc.downsample = (s > 0 && b == 0);
                bc.use_batch_norm = config_.use_batch_norm;
                blocks_.push_back(BlockParams::init(bc, rng));
                in_ch = bc.out_channels;
            }
        }
        head_ = DenseParams::init(config_.head_outputs(), in_ch, rng);
    }

    const NetworkConfig& config() const { return config_; }
    std::vector<BlockParams>& blocks() { return blocks_; }

    struct Binding {
        Var output;
        std::vector<Var> trainable_vars; // aligned with trainable parameters()
    };

    Binding forward(Tape& tape, const Tensor& batch, bool training,
                    bool params_require_grad = false) {
        return forward_var(tape.leaf(batch), training, params_require_grad);
    }

    // Forward from a Var already on a tape (lets callers differentiate with
    // respect to the input).
    Binding forward_var(Var input, bool training, bool params_require_grad = false) {
        const Tensor& batch = input.value();
        if (batch.rank() != 4 || batch.extent(1) != config_.in_channels ||
            batch.extent(2) != config_.in_height || batch.extent(3) != config_.in_width) {
            throw ContractError("network forward: batch shape " +
                                shape_str(batch.shape()) + " does not match the "
                                "configured input");
        }
        Tape& tape = *input.tape;
        Binding bind;
        Var x = input;
        const auto leaf_param = [&](Tensor& param) {
            Tensor copy = param;
            copy.set_requires_grad(params_require_grad);
            Var v = tape.leaf(std::move(copy));
            bind.trainable_vars.push_back(v);
            return v;
        };

        Var sk = leaf_param(stem_.kernel), sb = leaf_param(stem_.bias);
        x = conv2d(x, sk, sb, 1, 1);
        if (config_.use_batch_norm) {
            Var g = leaf_param(stem_bn_.gamma), b = leaf_param(stem_bn_.beta);
            x = batch_norm(x, g, b, stem_bn_.running_mean, stem_bn_.running_var,
                           training);
        }
        x = relu(x);
        for (BlockParams& block : blocks_) {
            x = breg_block_forward(x, block, training, params_require_grad,
                                   &bind.trainable_vars);
        }
        x = global_avg_pool(x);
        Var hw = leaf_param(head_.weight), hb = leaf_param(head_.bias);
        bind.output = fully_connected(x, hw, hb);
        return bind;
    }

    // Raw head outputs in inference mode: logits [n,K] or [n,2].
    Tensor predict(const Tensor& batch) {
        Tape tape;
        return forward(tape, batch, /*training=*/false).output.value();
    }

    // Stable construction-order listing. Running statistics are listed (they
    // are checkpoint state) but flagged non-trainable.
    std::vector<NamedParam> parameters() {
        std::vector<NamedParam> out;
        const auto add_bn = [&out](const std::string& prefix, BatchNormParams& bn) {
            out.push_back({prefix + ".gamma", &bn.gamma, true});
            out.push_back({prefix + ".beta", &bn.beta, true});
            out.push_back({prefix + ".running_mean", &bn.running_mean, false});
            out.push_back({prefix + ".running_var", &bn.running_var, false});
        };
        out.push_back({"stem.kernel", &stem_.kernel, true});
        out.push_back({"stem.bias", &stem_.bias, true});
        if (config_.use_batch_norm) add_bn("stem.bn", stem_bn_);
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            const std::string p = "block" + std::to_string(i + 1);
            BlockParams& blk = blocks_[i];
            out.push_back({p + ".conv1.kernel", &blk.conv1.kernel, true});
            out.push_back({p + ".conv1.bias", &blk.conv1.bias, true});
            if (config_.use_batch_norm) add_bn(p + ".bn1", blk.bn1);
            out.push_back({p + ".conv2.kernel", &blk.conv2.kernel, true});
            out.push_back({p + ".conv2.bias", &blk.conv2.bias, true});
            if (config_.use_batch_norm) add_bn(p + ".bn2", blk.bn2);
            if (blk.config.downsample) {
                out.push_back({p + ".proj.kernel", &blk.proj.kernel, true});
                out.push_back({p + ".proj.bias", &blk.proj.bias, true});
            }
        }
        out.push_back({"head.weight", &head_.weight, true});
        out.push_back({"head.bias", &head_.bias, true});
        return out;
    }

    // Element count over trainable tensors; running statistics excluded.
    std::size_t count_parameters() {
        std::size_t total = 0;
        for (const NamedParam& p : parameters()) {
            if (p.trainable) total += p.tensor->numel();
        }
        return total;
    }

    // Depth as weighted layers: every conv (projections included) plus the
    // final fully connected layer.
    std::size_t weighted_depth() const {
        std::size_t depth = 1; // stem
        for (const BlockParams& blk : blocks_) {
            depth += 2;
            if (blk.config.downsample) depth += 1;
        }
        return depth + 1; // head
    }

private:
    NetworkConfig config_;
    ConvParams stem_;
    BatchNormParams stem_bn_;
    std::vector<BlockParams> blocks_;
    DenseParams head_;
};

// Reference 39-layer configuration: 4 stages of (5,4,4,4) blocks doubling
// from 32 channels, so convs + projections + head count to exactly 39.
inline NetworkConfig breg_net_39_config(std::size_t in_channels, std::size_t in_height,
                                        std::size_t in_width, HeadKind head,
                                        std::size_t classes, BypassKind bypass,
                                        std::uint64_t seed) {
    NetworkConfig cfg;
    cfg.stem_channels = 32;
    cfg.stages = {{5, 32}, {4, 64}, {4, 128}, {4, 256}};
    cfg.bypass = bypass;
    cfg.head = head;
    cfg.classes = classes;
    cfg.in_channels = in_channels;
    cfg.in_height = in_height;
    cfg.in_width = in_width;
    cfg.use_batch_norm = true;
    cfg.seed = seed;
    return cfg;
}

} // namespace breg
