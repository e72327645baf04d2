#pragma once

#include "mcnet/interaction.hpp"

namespace mcnet {

// Four-layer top-down decoder: start from the deepest level, then repeatedly
// upsample x2, add the next shallower level and refine with conv-BN-ReLU.
// The 64-channel aggregate is reduced to single-channel logits at image
// resolution.
class Decoder : public Module {
public:
    struct Out {
        ag::Var agg;     // (N,64,H/4,W/4)
        ag::Var logits;  // (N,1,H,W)
    };

    explicit Decoder(Rng& rng);

    // pyramid: 4 levels of 64 channels, shallowest first; out_h/out_w is the
    // image size the logits are upsampled to.
    Out forward(const std::vector<ag::Var>& pyramid, int64_t out_h, int64_t out_w);

    std::vector<std::unique_ptr<nn::ConvBnRelu>> steps;  // 3 refinement convs
    nn::ConvBnRelu head16;                               // 64 -> 16
    nn::Conv2d head1;                                    // 16 -> 1 logits
};

// Serial multiscale dilated convolution block. Takes the concatenation of the
// two decoder aggregates and emits one fused feature per pyramid stride plus
// per-modality deep interactive features.
class SdcModule : public Module {
public:
    struct Out {
        ag::Var sdc_in;                        // (N,128,H/4,W/4)
        std::vector<ag::Var> sdc_out;          // strides 4,8,16,32; 128 channels
        std::vector<ag::Var> df_rgb, df_t;     // 64 channels, level-aligned
    };

    // use_sdc=false swaps every multiscale block for one plain 3x3
    // convolution, keeping the serial pooling chain and the heads.
    SdcModule(bool use_sdc, Rng& rng);

    Out forward(const ag::Var& agg_rgb, const ag::Var& agg_t);

    bool use_sdc() const { return use_sdc_; }

    static constexpr int64_t kGamma[4] = {1, 3, 5, 7};

    // per scale: gamma x gamma conv, 1x1 conv, dilated 3x3 conv (dilation
    // gamma) when use_sdc; a single plain 3x3 conv otherwise
    std::vector<std::unique_ptr<nn::ConvBnRelu>> pre, mid, dil, plain;
    std::vector<std::unique_ptr<nn::ConvBnRelu>> head_rgb, head_t;  // 128 -> 64

private:
    bool use_sdc_;
};

}  // namespace mcnet
