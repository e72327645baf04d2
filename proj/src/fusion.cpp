#include "mcnet/fusion.hpp"

namespace mcnet {

using ag::Var;

Decoder::Decoder(Rng& rng)
    : head16(64, 16, 3, rng, /*stride=*/1, /*pad=*/1), head1(16, 1, 1, rng) {
    for (int i = 0; i < 3; ++i) {
        steps.push_back(std::make_unique<nn::ConvBnRelu>(64, 64, 3, rng, 1, 1));
        register_module("step" + std::to_string(i), *steps.back());
    }
    register_module("head16", head16);
    register_module("head1", head1);
}

Decoder::Out Decoder::forward(const std::vector<Var>& pyramid, int64_t out_h, int64_t out_w) {
    check_shape(pyramid.size() == 4, "decoder expects a 4-level pyramid");
    Var x = pyramid[3];
    for (int i = 2; i >= 0; --i) {
        const auto& next = pyramid[static_cast<size_t>(i)];
        Var up = ag::upsample_bilinear(x, next.shape()[2], next.shape()[3]);
        x = steps[static_cast<size_t>(2 - i)]->forward(ag::add(up, next));
    }
    Var reduced = head1.forward(head16.forward(x));
    return {x, ag::upsample_bilinear(reduced, out_h, out_w)};
}

SdcModule::SdcModule(bool use_sdc, Rng& rng) : use_sdc_(use_sdc) {
    for (int i = 0; i < 4; ++i) {
        const int64_t g = kGamma[i];
        const std::string lvl = std::to_string(i + 2);
        if (use_sdc_) {
            pre.push_back(std::make_unique<nn::ConvBnRelu>(128, 128, g, rng, 1, g / 2));
            mid.push_back(std::make_unique<nn::ConvBnRelu>(128, 128, 1, rng));
            dil.push_back(std::make_unique<nn::ConvBnRelu>(128, 128, 3, rng, 1, g, g));
            register_module("pre." + lvl, *pre.back());
            register_module("mid." + lvl, *mid.back());
            register_module("dil." + lvl, *dil.back());
        } else {
            plain.push_back(std::make_unique<nn::ConvBnRelu>(128, 128, 3, rng, 1, 1));
            register_module("plain." + lvl, *plain.back());
        }
        head_rgb.push_back(std::make_unique<nn::ConvBnRelu>(128, 64, 3, rng, 1, 1));
        head_t.push_back(std::make_unique<nn::ConvBnRelu>(128, 64, 3, rng, 1, 1));
        register_module("head_rgb." + lvl, *head_rgb.back());
        register_module("head_t." + lvl, *head_t.back());
    }
}

SdcModule::Out SdcModule::forward(const Var& agg_rgb, const Var& agg_t) {
    check_shape(agg_rgb.shape() == agg_t.shape(), "sdc_fuse expects equal aggregate shapes");
    Out out;
    out.sdc_in = ag::concat<float>({agg_rgb, agg_t}, 1);
    Var x = out.sdc_in;
    for (size_t i = 0; i < 4; ++i) {
        x = use_sdc_ ? dil[i]->forward(mid[i]->forward(pre[i]->forward(x)))
                     : plain[i]->forward(x);
        out.sdc_out.push_back(x);
        out.df_rgb.push_back(head_rgb[i]->forward(x));
        out.df_t.push_back(head_t[i]->forward(x));
        if (i < 3) x = ag::maxpool2x2(x);
    }
    return out;
}

}  // namespace mcnet
