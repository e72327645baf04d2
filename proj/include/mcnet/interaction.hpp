#pragma once

#include "mcnet/backbone.hpp"

namespace mcnet {

// How the two streams exchange information at each pyramid level. The
// non-default modes exist only as ablation switches; they mirror the variants
// compared in the architecture study.
enum class InteractionMode {
    Full,            // channel-aware interaction on shared features + spatial-cross guidance
    Share,           // channel then spatial attention on the shared features only
    Cross,           // per-stream channel+spatial attention, maps cross-added
    NonInteraction,  // per-stream attention added back to its own stream
};

InteractionMode interaction_mode_from_string(const std::string& name);
std::string to_string(InteractionMode mode);

// 3x3 then 1x1 convolution (each conv-BN-ReLU) taking a backbone level down
// to the common 64-channel width.
class Squeeze : public Module {
public:
    Squeeze(int64_t cin, Rng& rng);
    ag::Var forward(const ag::Var& x);

    nn::ConvBnRelu c3, c1;
};

// Gate = sigmoid(MLP(max-pool) + MLP(avg-pool)); one MLP shared by both
// pooling branches, bottleneck c/reduction.
class ChannelAttention : public Module {
public:
    ChannelAttention(int64_t c, int64_t reduction, Rng& rng);
    ag::Var gate(const ag::Var& x);     // (N,C,1,1), values in (0,1)
    ag::Var forward(const ag::Var& x);  // x gated channel-wise

    nn::Linear fc1, fc2;

private:
    int64_t c_;
};

// Gate = sigmoid(conv7x7 over [channel-max, channel-mean]) broadcast over
// channels.
class SpatialAttention : public Module {
public:
    explicit SpatialAttention(Rng& rng);
    ag::Var gate(const ag::Var& x);     // (N,1,H,W), values in (0,1)
    ag::Var forward(const ag::Var& x);  // x gated spatially

    nn::Conv2d conv;
};

// One pyramid level of the attention-based feature interaction module.
class LevelInteraction : public Module {
public:
    LevelInteraction(InteractionMode mode, Rng& rng);

    // Shared channel-wise features: Concat(hat_rgb * hat_t, hat_rgb, hat_t),
    // 192 channels. Only used by Full/Share modes.
    ag::Var shared_fuse(const ag::Var& f_rgb, const ag::Var& f_t);

    // Attention interaction maps (Att_rgb, Att_t), each 64 channels.
    std::pair<ag::Var, ag::Var> attention_maps(const ag::Var& f_rgb, const ag::Var& f_t);

    // (LF_rgb, LF_t) = (F_rgb + Att_rgb, F_t + Att_t) except in Cross mode,
    // where the maps are cross-added.
    std::pair<ag::Var, ag::Var> forward(const ag::Var& f_rgb, const ag::Var& f_t);

    InteractionMode mode() const { return mode_; }

    // Full/Share path
    std::unique_ptr<nn::ConvBnRelu> hat_rgb, hat_t;
    std::unique_ptr<ChannelAttention> cai;           // on the 192-ch shared feature
    std::unique_ptr<SpatialAttention> satt;          // shared across the two cross applications
    std::unique_ptr<nn::ConvBnRelu> conv_rgb, conv_t;  // 192 -> 64 reductions

    // Cross/NonInteraction path: per-stream attention stacks
    std::unique_ptr<ChannelAttention> ca_rgb, ca_t;  // on the 64-ch stream
    std::unique_ptr<SpatialAttention> sa_rgb, sa_t;

private:
    InteractionMode mode_;
};

// Squeezes levels 2..5 of both pyramids to 64 channels and interacts them
// level by level with independent parameters per level.
class InteractionModule : public Module {
public:
    struct Output {
        std::vector<ag::Var> f_rgb, f_t;    // squeezed features, 4 levels
        std::vector<ag::Var> lf_rgb, lf_t;  // low-level interaction features
    };

    InteractionModule(const std::vector<int64_t>& level_channels, InteractionMode mode, Rng& rng);

    Output forward(const FeaturePyramid& rgb, const FeaturePyramid& t);

    std::vector<std::unique_ptr<Squeeze>> squeeze_rgb, squeeze_t;  // levels 2..5
    std::vector<std::unique_ptr<LevelInteraction>> levels;

private:
    InteractionMode mode_;
};

}  // namespace mcnet
