#include "mcnet/interaction.hpp"

namespace mcnet {

using ag::Var;

InteractionMode interaction_mode_from_string(const std::string& name) {
    if (name == "full") return InteractionMode::Full;
    if (name == "share") return InteractionMode::Share;
    if (name == "cross") return InteractionMode::Cross;
    if (name == "noninteraction") return InteractionMode::NonInteraction;
    throw std::invalid_argument("unknown interaction mode: " + name);
}

std::string to_string(InteractionMode mode) {
    switch (mode) {
        case InteractionMode::Full: return "full";
        case InteractionMode::Share: return "share";
        case InteractionMode::Cross: return "cross";
        case InteractionMode::NonInteraction: return "noninteraction";
    }
    return "?";
}

Squeeze::Squeeze(int64_t cin, Rng& rng)
    : c3(cin, 64, 3, rng, /*stride=*/1, /*pad=*/1), c1(64, 64, 1, rng) {
    register_module("c3", c3);
    register_module("c1", c1);
}

Var Squeeze::forward(const Var& x) { return c1.forward(c3.forward(x)); }

ChannelAttention::ChannelAttention(int64_t c, int64_t reduction, Rng& rng)
    : fc1(c, std::max<int64_t>(1, c / reduction), rng),
      fc2(std::max<int64_t>(1, c / reduction), c, rng),
      c_(c) {
    register_module("fc1", fc1);
    register_module("fc2", fc2);
}

Var ChannelAttention::gate(const Var& x) {
    const int64_t N = x.shape()[0];
    auto mlp = [&](const Var& pooled) {
        Var v = ag::reshape(pooled, {N, c_});
        return fc2.forward(ag::relu(fc1.forward(v)));
    };
    Var sum = ag::add(mlp(ag::global_max_pool(x)), mlp(ag::global_avg_pool(x)));
    return ag::reshape(ag::sigmoid(sum), {N, c_, 1, 1});
}

Var ChannelAttention::forward(const Var& x) { return ag::mul(x, gate(x)); }

SpatialAttention::SpatialAttention(Rng& rng)
    : conv(2, 1, 7, rng, /*stride=*/1, /*pad=*/3) {
    register_module("conv", conv);
}

Var SpatialAttention::gate(const Var& x) {
    Var maps = ag::concat<float>({ag::channel_max(x), ag::channel_mean(x)}, 1);
    return ag::sigmoid(conv.forward(maps));
}

Var SpatialAttention::forward(const Var& x) { return ag::mul(x, gate(x)); }

LevelInteraction::LevelInteraction(InteractionMode mode, Rng& rng) : mode_(mode) {
    const bool shared_path = mode == InteractionMode::Full || mode == InteractionMode::Share;
    if (shared_path) {
        hat_rgb = std::make_unique<nn::ConvBnRelu>(64, 64, 3, rng, 1, 1);
        hat_t = std::make_unique<nn::ConvBnRelu>(64, 64, 3, rng, 1, 1);
        cai = std::make_unique<ChannelAttention>(192, 16, rng);
        conv_rgb = std::make_unique<nn::ConvBnRelu>(192, 64, 3, rng, 1, 1);
        conv_t = std::make_unique<nn::ConvBnRelu>(192, 64, 3, rng, 1, 1);
        register_module("hat_rgb", *hat_rgb);
        register_module("hat_t", *hat_t);
        register_module("cai", *cai);
        register_module("conv_rgb", *conv_rgb);
        register_module("conv_t", *conv_t);
        if (mode == InteractionMode::Full) {
            satt = std::make_unique<SpatialAttention>(rng);
            register_module("satt", *satt);
        } else {
            sa_rgb = std::make_unique<SpatialAttention>(rng);  // applied to the shared feature
            register_module("sa_shared", *sa_rgb);
        }
    } else {
        ca_rgb = std::make_unique<ChannelAttention>(64, 16, rng);
        ca_t = std::make_unique<ChannelAttention>(64, 16, rng);
        sa_rgb = std::make_unique<SpatialAttention>(rng);
        sa_t = std::make_unique<SpatialAttention>(rng);
        register_module("ca_rgb", *ca_rgb);
        register_module("ca_t", *ca_t);
        register_module("sa_rgb", *sa_rgb);
        register_module("sa_t", *sa_t);
    }
}

Var LevelInteraction::shared_fuse(const Var& f_rgb, const Var& f_t) {
    check_shape(f_rgb.shape() == f_t.shape(), "shared_fuse expects equal shapes");
    Var hr = hat_rgb->forward(f_rgb);
    Var ht = hat_t->forward(f_t);
    return ag::concat<float>({ag::mul(hr, ht), hr, ht}, 1);
}

std::pair<Var, Var> LevelInteraction::attention_maps(const Var& f_rgb, const Var& f_t) {
    switch (mode_) {
        case InteractionMode::Full: {
            Var c_att = cai->forward(shared_fuse(f_rgb, f_t));
            Var att_rgb = ag::add(satt->forward(f_t), conv_rgb->forward(c_att));
            Var att_t = ag::add(satt->forward(f_rgb), conv_t->forward(c_att));
            return {att_rgb, att_t};
        }
        case InteractionMode::Share: {
            Var shared = sa_rgb->forward(cai->forward(shared_fuse(f_rgb, f_t)));
            return {conv_rgb->forward(shared), conv_t->forward(shared)};
        }
        case InteractionMode::Cross:
        case InteractionMode::NonInteraction:
            return {sa_rgb->forward(ca_rgb->forward(f_rgb)), sa_t->forward(ca_t->forward(f_t))};
    }
    throw std::logic_error("unreachable interaction mode");
}

std::pair<Var, Var> LevelInteraction::forward(const Var& f_rgb, const Var& f_t) {
    auto [att_rgb, att_t] = attention_maps(f_rgb, f_t);
    if (mode_ == InteractionMode::Cross) std::swap(att_rgb, att_t);
    return {ag::add(f_rgb, att_rgb), ag::add(f_t, att_t)};
}

InteractionModule::InteractionModule(const std::vector<int64_t>& level_channels,
                                     InteractionMode mode, Rng& rng)
    : mode_(mode) {
    check_shape(level_channels.size() == 5, "expected a 5-level channel list");
    for (size_t i = 1; i < 5; ++i) {
        const std::string lvl = std::to_string(i + 1);  // levels named 2..5
        squeeze_rgb.push_back(std::make_unique<Squeeze>(level_channels[i], rng));
        register_module("squeeze_rgb." + lvl, *squeeze_rgb.back());
        squeeze_t.push_back(std::make_unique<Squeeze>(level_channels[i], rng));
        register_module("squeeze_t." + lvl, *squeeze_t.back());
        levels.push_back(std::make_unique<LevelInteraction>(mode, rng));
        register_module("interact." + lvl, *levels.back());
    }
}

InteractionModule::Output InteractionModule::forward(const FeaturePyramid& rgb,
                                                     const FeaturePyramid& t) {
    check_shape(rgb.levels.size() == 5 && t.levels.size() == 5, "expected 5-level pyramids");
    Output out;
    for (size_t i = 0; i < 4; ++i) {
        Var fr = squeeze_rgb[i]->forward(rgb.levels[i + 1]);
        Var ft = squeeze_t[i]->forward(t.levels[i + 1]);
        auto [lr, lt] = levels[i]->forward(fr, ft);
        out.f_rgb.push_back(fr);
        out.f_t.push_back(ft);
        out.lf_rgb.push_back(lr);
        out.lf_t.push_back(lt);
    }
    return out;
}

}  // namespace mcnet
