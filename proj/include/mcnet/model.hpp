#pragma once

#include <map>

#include "mcnet/fusion.hpp"

namespace mcnet {

struct ModelConfig {
    BackboneConfig backbone = BackboneConfig::swin_b();
    InteractionMode interaction = InteractionMode::Full;
    bool use_sdc = true;

    static ModelConfig swin_b() { return {}; }
    static ModelConfig toy() {
        ModelConfig cfg;
        cfg.backbone = BackboneConfig::toy();
        return cfg;
    }
};

// Named intermediates captured during a forward pass for visualization.
using FeatureDump = std::map<std::string, Tensor>;

// The full two-stream network: mirror encoders, attention interaction,
// per-stream decoders, SDC fusion and the final fused prediction.
class McnetModel : public Module {
public:
    struct Output {
        ag::Var pred_rgb, pred_t, pred_fusion;        // probabilities in [0,1]
        ag::Var logits_rgb, logits_t, logits_fusion;  // pre-sigmoid
    };

    McnetModel(const ModelConfig& cfg, Rng& rng);

    // rgb: (N,3,H,W); thermal: (N,3,H,W) or (N,1,H,W), replicated to 3
    // channels. When dump is non-null, named intermediates (F/LF/SDC_out/DF
    // per level and stream) are copied into it.
    Output forward(const ag::Var& rgb, const ag::Var& thermal, FeatureDump* dump = nullptr);

    const ModelConfig& config() const { return cfg_; }

    // Trainable parameters split into the two learning-rate groups: the two
    // encoders versus everything else.
    std::vector<std::pair<std::string, ag::Var*>> backbone_parameters();
    std::vector<std::pair<std::string, ag::Var*>> other_parameters();

    SwinEncoder encoder_rgb, encoder_t;
    InteractionModule interact;
    Decoder decoder_rgb, decoder_t;
    SdcModule sdc;
    nn::ConvBnRelu fuse16;  // 2 -> 16 on the concatenated branch logits
    nn::Conv2d fuse1;       // 16 -> 1 fusion logits

private:
    ModelConfig cfg_;
};

}  // namespace mcnet
