#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mcnet/core/nn.hpp"
#include "mcnet/core/serialize.hpp"

namespace mcnet {

struct BackboneConfig {
    int64_t patch_size = 4;
    int64_t embed_dim = 128;                       // C at stage 1
    std::vector<int64_t> depths = {2, 2, 18, 2};   // blocks per stage
    std::vector<int64_t> num_heads = {4, 8, 16, 32};
    int64_t window_size = 12;
    int64_t input_size = 384;
    std::string pretrained_path;

    static BackboneConfig swin_b();
    // Small preset that runs the whole network on CPU in seconds; used by
    // every test.
    static BackboneConfig toy();

    void validate() const;
};

// Five-level feature stack per modality: level 0 is the patch embedding
// (produced but not consumed downstream), levels 1..4 are the stage outputs.
struct FeaturePyramid {
    std::vector<ag::Var> levels;  // size 5, NCHW
    static constexpr int64_t kStrides[5] = {4, 4, 8, 16, 32};
};

// One pre-norm windowed-attention block: windowed MHSA with relative
// position bias (cyclically shifted on odd blocks) followed by a 2-layer MLP,
// both residual.
class SwinBlock : public Module {
public:
    SwinBlock(int64_t dim, int64_t heads, int64_t window, bool shift, Rng& rng);

    // attn_probs, when non-null, receives the post-softmax attention weights
    // of shape (windows*heads, tokens, tokens).
    ag::Var forward(const ag::Var& x, Tensor* attn_probs = nullptr);

    nn::LayerNorm norm1, norm2;
    nn::Linear qkv, proj, fc1, fc2;
    ag::Var rel_bias_table;  // ((2w-1)^2, heads)

private:
    int64_t dim_, heads_, window_, head_dim_;
    bool shift_;
    std::vector<int64_t> rel_index_;  // (window^2)^2 lookups into the table
};

// Concatenates each 2x2 neighborhood, normalizes and projects 4C -> 2C.
class PatchMerge : public Module {
public:
    PatchMerge(int64_t dim, Rng& rng);
    ag::Var forward(const ag::Var& x);

    nn::LayerNorm norm;
    nn::Linear reduction;

private:
    int64_t dim_;
};

class PatchEmbed : public Module {
public:
    PatchEmbed(int64_t patch, int64_t embed_dim, Rng& rng);
    ag::Var forward(const ag::Var& image);

    nn::Conv2d proj;
    nn::LayerNorm norm;

private:
    int64_t patch_;
};

class SwinStage : public Module {
public:
    SwinStage(int64_t dim, int64_t depth, int64_t heads, int64_t window, Rng& rng);
    ag::Var forward(const ag::Var& x);

    std::vector<std::unique_ptr<SwinBlock>> blocks;
};

struct LoadReport {
    std::vector<std::string> missing;     // wanted but absent in the file
    std::vector<std::string> unexpected;  // present in the file, unused
    std::vector<std::string> mismatched;  // name matched, shape did not
    bool clean() const { return missing.empty() && unexpected.empty() && mismatched.empty(); }
};

class SwinEncoder : public Module {
public:
    SwinEncoder(const BackboneConfig& cfg, Rng& rng);

    FeaturePyramid encode(const ag::Var& image);

    const BackboneConfig& config() const { return cfg_; }
    // Channel widths of the five pyramid levels.
    std::vector<int64_t> level_channels() const;

    PatchEmbed patch_embed;
    std::vector<std::unique_ptr<SwinStage>> stages;
    std::vector<std::unique_ptr<PatchMerge>> merges;       // between stages
    std::vector<std::unique_ptr<nn::LayerNorm>> out_norms;  // per stage output

private:
    BackboneConfig cfg_;
};

// Copies tensors from `file` into the module's parameters and buffers by
// name. In strict mode any discrepancy throws; otherwise it is reported.
LoadReport load_state(Module& m, const BlobFile& file, bool strict, const std::string& prefix = "");
void save_state(const Module& m, BlobFile& file, const std::string& prefix = "");

// Key translation for checkpoints exported from the reference Swin
// implementation (see tools/convert_swin_checkpoint.py): renames keys onto
// this module's layout and transposes linear weights from (out,in) to
// (in,out). Unknown keys are passed through untouched so load_state can
// report them.
BlobFile translate_swin_checkpoint(const BlobFile& external);

}  // namespace mcnet
