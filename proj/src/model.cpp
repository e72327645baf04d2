#include "mcnet/model.hpp"

namespace mcnet {

using ag::Var;

McnetModel::McnetModel(const ModelConfig& cfg, Rng& rng)
    : encoder_rgb(cfg.backbone, rng),
      encoder_t(cfg.backbone, rng),
      interact(encoder_rgb.level_channels(), cfg.interaction, rng),
      decoder_rgb(rng),
      decoder_t(rng),
      sdc(cfg.use_sdc, rng),
      fuse16(2, 16, 3, rng, /*stride=*/1, /*pad=*/1),
      fuse1(16, 1, 1, rng),
      cfg_(cfg) {
    register_module("encoder_rgb", encoder_rgb);
    register_module("encoder_t", encoder_t);
    register_module("interact", interact);
    register_module("decoder_rgb", decoder_rgb);
    register_module("decoder_t", decoder_t);
    register_module("sdc", sdc);
    register_module("fuse16", fuse16);
    register_module("fuse1", fuse1);
}

McnetModel::Output McnetModel::forward(const Var& rgb, const Var& thermal, FeatureDump* dump) {
    check_shape(rgb.value().rank() == 4 && thermal.value().rank() == 4,
                "model expects NCHW image batches");
    check_shape(rgb.shape()[0] == thermal.shape()[0] && rgb.shape()[2] == thermal.shape()[2] &&
                    rgb.shape()[3] == thermal.shape()[3],
                "rgb and thermal batches must be aligned");
    Var t3 = thermal;
    if (thermal.shape()[1] == 1) t3 = ag::concat<float>({thermal, thermal, thermal}, 1);
    check_shape(t3.shape()[1] == 3, "thermal input must have 1 or 3 channels");

    const int64_t H = rgb.shape()[2], W = rgb.shape()[3];
    auto pyr_rgb = encoder_rgb.encode(rgb);
    auto pyr_t = encoder_t.encode(t3);
    auto ia = interact.forward(pyr_rgb, pyr_t);

    auto first_rgb = decoder_rgb.forward(ia.lf_rgb, H, W);
    auto first_t = decoder_t.forward(ia.lf_t, H, W);
    auto fused = sdc.forward(first_rgb.agg, first_t.agg);

    // direct superposition, then a second pass through the same decoders
    std::vector<Var> pyr2_rgb, pyr2_t;
    for (size_t i = 0; i < 4; ++i) {
        pyr2_rgb.push_back(ag::add(ia.lf_rgb[i], fused.df_rgb[i]));
        pyr2_t.push_back(ag::add(ia.lf_t[i], fused.df_t[i]));
    }
    Var logits_rgb = decoder_rgb.forward(pyr2_rgb, H, W).logits;
    Var logits_t = decoder_t.forward(pyr2_t, H, W).logits;
    Var logits_fusion =
        fuse1.forward(fuse16.forward(ag::concat<float>({logits_rgb, logits_t}, 1)));

    if (dump) {
        for (size_t i = 0; i < 4; ++i) {
            const std::string lvl = std::to_string(i + 2);
            (*dump)["F" + lvl + "_rgb"] = ia.f_rgb[i].value();
            (*dump)["F" + lvl + "_t"] = ia.f_t[i].value();
            (*dump)["LF" + lvl + "_rgb"] = ia.lf_rgb[i].value();
            (*dump)["LF" + lvl + "_t"] = ia.lf_t[i].value();
            (*dump)["SDC_out" + lvl] = fused.sdc_out[i].value();
            (*dump)["DF" + lvl + "_rgb"] = fused.df_rgb[i].value();
            (*dump)["DF" + lvl + "_t"] = fused.df_t[i].value();
        }
    }

    Output out;
    out.logits_rgb = logits_rgb;
    out.logits_t = logits_t;
    out.logits_fusion = logits_fusion;
    out.pred_rgb = ag::sigmoid(logits_rgb);
    out.pred_t = ag::sigmoid(logits_t);
    out.pred_fusion = ag::sigmoid(logits_fusion);
    return out;
}

std::vector<std::pair<std::string, Var*>> McnetModel::backbone_parameters() {
    std::vector<std::pair<std::string, Var*>> out;
    for (auto& [name, p] : named_parameters())
        if (name.rfind("encoder_", 0) == 0) out.emplace_back(name, p);
    return out;
}

std::vector<std::pair<std::string, Var*>> McnetModel::other_parameters() {
    std::vector<std::pair<std::string, Var*>> out;
    for (auto& [name, p] : named_parameters())
        if (name.rfind("encoder_", 0) != 0) out.emplace_back(name, p);
    return out;
}

}  // namespace mcnet
