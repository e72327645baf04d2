#include "mcnet/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace mcnet {

using ag::Var;

BackboneConfig BackboneConfig::swin_b() {
    return BackboneConfig{};
}

BackboneConfig BackboneConfig::toy() {
    BackboneConfig cfg;
    cfg.patch_size = 4;
    cfg.embed_dim = 32;
    cfg.depths = {1, 1, 1, 1};
    cfg.num_heads = {2, 4, 8, 16};
    cfg.window_size = 4;
    cfg.input_size = 96;
    return cfg;
}

void BackboneConfig::validate() const {
    if (depths.size() != 4 || num_heads.size() != 4)
        throw std::invalid_argument("backbone config: depths and num_heads must have 4 entries");
    if (embed_dim % num_heads[0] != 0)
        throw std::invalid_argument("backbone config: embed_dim must be divisible by num_heads[0]");
    if (input_size % patch_size != 0)
        throw std::invalid_argument("backbone config: input_size must be divisible by patch_size");
    if ((input_size / patch_size) % 8 != 0)
        throw std::invalid_argument("backbone config: token grid must stay even across all merges");
}

// --------------------------------------------------------------------------
// SwinBlock
// --------------------------------------------------------------------------

namespace {

// Gathers rows of the (L, heads) bias table into a (1, heads, T, T) logit
// bias; differentiable w.r.t. the table.
Var gather_rel_bias(const Var& table, const std::vector<int64_t>& index, int64_t heads, int64_t T) {
    Tensor out({1, heads, T, T});
    for (int64_t i = 0; i < T * T; ++i) {
        const int64_t row = index[static_cast<size_t>(i)];
        for (int64_t h = 0; h < heads; ++h)
            out.data[static_cast<size_t>(h * T * T + i)] = table.value().at2(row, h);
    }
    auto tn = table.node();
    return Var::make(std::move(out), {table}, [tn, index, heads, T](Var::Node& n) {
        Tensor g(tn->value.shape);
        for (int64_t i = 0; i < T * T; ++i) {
            const int64_t row = index[static_cast<size_t>(i)];
            for (int64_t h = 0; h < heads; ++h) g.at2(row, h) += n.grad[h * T * T + i];
        }
        Var::accumulate(*tn, g);
    });
}

// Region-id attention mask for shifted windows on a padded (Hp, Wp) grid.
Tensor make_shift_mask(int64_t Hp, int64_t Wp, int64_t window, int64_t shift) {
    std::vector<int> id(static_cast<size_t>(Hp * Wp));
    int cnt = 0;
    const int64_t hb[3][2] = {{0, Hp - window}, {Hp - window, Hp - shift}, {Hp - shift, Hp}};
    const int64_t wb[3][2] = {{0, Wp - window}, {Wp - window, Wp - shift}, {Wp - shift, Wp}};
    for (auto& hs : hb) {
        for (auto& ws : wb) {
            for (int64_t h = hs[0]; h < hs[1]; ++h)
                for (int64_t w = ws[0]; w < ws[1]; ++w) id[static_cast<size_t>(h * Wp + w)] = cnt;
            ++cnt;
        }
    }
    const int64_t nH = Hp / window, nW = Wp / window, T = window * window;
    Tensor mask({1, nH * nW, 1, T, T});
    for (int64_t wh = 0; wh < nH; ++wh)
        for (int64_t ww = 0; ww < nW; ++ww) {
            const int64_t widx = wh * nW + ww;
            for (int64_t i = 0; i < T; ++i)
                for (int64_t j = 0; j < T; ++j) {
                    const int64_t hi = wh * window + i / window, wi = ww * window + i % window;
                    const int64_t hj = wh * window + j / window, wj = ww * window + j % window;
                    const bool same = id[static_cast<size_t>(hi * Wp + wi)] ==
                                      id[static_cast<size_t>(hj * Wp + wj)];
                    mask.data[static_cast<size_t>((widx * T + i) * T + j)] = same ? 0.0f : -100.0f;
                }
        }
    return mask;
}

}  // namespace

SwinBlock::SwinBlock(int64_t dim, int64_t heads, int64_t window, bool shift, Rng& rng)
    : norm1(dim),
      norm2(dim),
      qkv(dim, 3 * dim, rng),
      proj(dim, dim, rng),
      fc1(dim, 4 * dim, rng),
      fc2(4 * dim, dim, rng),
      dim_(dim),
      heads_(heads),
      window_(window),
      head_dim_(dim / heads),
      shift_(shift) {
    if (dim % heads != 0) throw std::invalid_argument("attention dim not divisible by heads");
    const int64_t span = 2 * window - 1;
    rel_bias_table = Var(nn::trunc_normal_init({span * span, heads}, rng));
    register_parameter("attn.relative_position_bias_table", rel_bias_table);
    register_module("norm1", norm1);
    register_module("attn.qkv", qkv);
    register_module("attn.proj", proj);
    register_module("norm2", norm2);
    register_module("mlp.fc1", fc1);
    register_module("mlp.fc2", fc2);
    // relative coordinate lookup, precomputed once
    const int64_t T = window * window;
    rel_index_.resize(static_cast<size_t>(T * T));
    for (int64_t i = 0; i < T; ++i)
        for (int64_t j = 0; j < T; ++j) {
            const int64_t dh = i / window - j / window + window - 1;
            const int64_t dw = i % window - j % window + window - 1;
            rel_index_[static_cast<size_t>(i * T + j)] = dh * span + dw;
        }
}

Var SwinBlock::forward(const Var& x, Tensor* attn_probs) {
    check_shape(x.value().rank() == 4, "swin block expects NCHW");
    const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    check_shape(C == dim_, "swin block channel count");
    const int64_t w = window_;
    const int64_t Hp = (H + w - 1) / w * w, Wp = (W + w - 1) / w * w;
    Var xp = (Hp != H || Wp != W) ? ag::pad2d(x, int64_t(0), Hp - H, int64_t(0), Wp - W) : x;
    int64_t s = shift_ ? w / 2 : 0;
    if (Hp <= w && Wp <= w) s = 0;  // a single window, nothing to shift across
    if (s) xp = ag::roll2d(xp, -s, -s);

    const int64_t nH = Hp / w, nW = Wp / w, nWin = nH * nW, T = w * w;
    auto to_windows = [&](const Var& t) {
        Var cl = ag::permute(t, {0, 2, 3, 1});                       // N,Hp,Wp,C
        Var r = ag::reshape(cl, {N, nH, w, nW, w, C});
        Var p = ag::permute(r, {0, 1, 3, 2, 4, 5});                  // N,nH,nW,w,w,C
        return ag::reshape(p, {N * nWin, T, C});
    };
    auto from_windows = [&](const Var& t) {
        Var r = ag::reshape(t, {N, nH, nW, w, w, C});
        Var p = ag::permute(r, {0, 1, 3, 2, 4, 5});                  // N,nH,w,nW,w,C
        Var cl = ag::reshape(p, {N, Hp, Wp, C});
        return ag::permute(cl, {0, 3, 1, 2});
    };

    Var win = to_windows(xp);
    Var h1 = norm1.forward(win);
    Var qkv3 = qkv.forward(h1);                                       // (B,T,3C)
    Var qkv5 = ag::reshape(qkv3, {N * nWin, T, 3, heads_, head_dim_});
    Var qkvp = ag::permute(qkv5, {2, 0, 3, 1, 4});                    // 3,B,heads,T,hd
    Var flat = ag::reshape(qkvp, {3, N * nWin * heads_, T, head_dim_});
    Var q = ag::reshape(ag::slice(flat, 0, 0, 1), {N * nWin * heads_, T, head_dim_});
    Var k = ag::reshape(ag::slice(flat, 0, 1, 1), {N * nWin * heads_, T, head_dim_});
    Var v = ag::reshape(ag::slice(flat, 0, 2, 1), {N * nWin * heads_, T, head_dim_});

    const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim_));
    Var logits = ag::bmm(ag::scale(q, scale), ag::permute(k, {0, 2, 1}));   // (B*heads,T,T)
    Var logits4 = ag::reshape(logits, {N * nWin, heads_, T, T});
    logits4 = ag::add(logits4, gather_rel_bias(rel_bias_table, rel_index_, heads_, T));
    if (s) {
        Var l5 = ag::reshape(logits4, {N, nWin, heads_, T, T});
        l5 = ag::add(l5, ag::constant(make_shift_mask(Hp, Wp, w, s)));
        logits4 = ag::reshape(l5, {N * nWin, heads_, T, T});
    }
    Var probs = ag::softmax_lastdim(logits4);
    if (attn_probs) *attn_probs = probs.value();
    Var ctx = ag::bmm(ag::reshape(probs, {N * nWin * heads_, T, T}), v);    // (B*heads,T,hd)
    Var ctx4 = ag::reshape(ctx, {N * nWin, heads_, T, head_dim_});
    Var merged = ag::reshape(ag::permute(ctx4, {0, 2, 1, 3}), {N * nWin, T, C});
    Var attn_out = from_windows(proj.forward(merged));

    Var y = ag::add(xp, attn_out);

    // MLP sublayer, token-wise
    Var ycl = ag::permute(y, {0, 2, 3, 1});
    Var m = fc2.forward(ag::gelu(fc1.forward(norm2.forward(ycl))));
    Var y2 = ag::add(y, ag::permute(m, {0, 3, 1, 2}));

    if (s) y2 = ag::roll2d(y2, s, s);
    if (Hp != H || Wp != W) y2 = ag::crop2d(y2, 0, 0, H, W);
    return y2;
}

// --------------------------------------------------------------------------
// PatchMerge / PatchEmbed
// --------------------------------------------------------------------------

PatchMerge::PatchMerge(int64_t dim, Rng& rng)
    : norm(4 * dim), reduction(4 * dim, 2 * dim, rng, /*bias=*/false), dim_(dim) {
    register_module("norm", norm);
    register_module("reduction", reduction);
}

Var PatchMerge::forward(const Var& x) {
    const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    check_shape(C == dim_, "patch merge channels");
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("patch merge requires even spatial dims, got " +
                                    x.value().shape_str());
    Var r = ag::reshape(x, {N, C, H / 2, 2, W / 2, 2});
    Var p = ag::permute(r, {0, 5, 3, 1, 2, 4});        // N, colpar, rowpar, C, H/2, W/2
    Var g = ag::reshape(p, {N, 4 * C, H / 2, W / 2});
    Var cl = ag::permute(g, {0, 2, 3, 1});
    Var out = reduction.forward(norm.forward(cl));
    return ag::permute(out, {0, 3, 1, 2});
}

PatchEmbed::PatchEmbed(int64_t patch, int64_t embed_dim, Rng& rng)
    : proj(3, embed_dim, patch, rng, /*stride=*/patch, /*pad=*/0, /*dilation=*/1, /*bias=*/true),
      norm(embed_dim),
      patch_(patch) {
    // projection weights follow the backbone init convention
    proj.w = ag::Var(nn::trunc_normal_init(proj.w.shape(), rng));
    proj.w.set_requires_grad(true);
    register_module("proj", proj);
    register_module("norm", norm);
}

Var PatchEmbed::forward(const Var& image) {
    const int64_t H = image.shape()[2], W = image.shape()[3];
    if (H % patch_ != 0 || W % patch_ != 0)
        throw std::invalid_argument("image size " + image.value().shape_str() +
                                    " not divisible by patch size " + std::to_string(patch_));
    Var x = proj.forward(image);
    Var cl = ag::permute(x, {0, 2, 3, 1});
    return ag::permute(norm.forward(cl), {0, 3, 1, 2});
}

// --------------------------------------------------------------------------
// stages / encoder
// --------------------------------------------------------------------------

SwinStage::SwinStage(int64_t dim, int64_t depth, int64_t heads, int64_t window, Rng& rng) {
    for (int64_t i = 0; i < depth; ++i) {
        blocks.push_back(std::make_unique<SwinBlock>(dim, heads, window, i % 2 == 1, rng));
        register_module("blocks." + std::to_string(i), *blocks.back());
    }
}

Var SwinStage::forward(const Var& x) {
    Var y = x;
    for (auto& b : blocks) y = b->forward(y);
    return y;
}

SwinEncoder::SwinEncoder(const BackboneConfig& cfg, Rng& rng)
    : patch_embed(cfg.patch_size, cfg.embed_dim, rng), cfg_(cfg) {
    cfg.validate();
    register_module("patch_embed", patch_embed);
    int64_t dim = cfg.embed_dim;
    for (int i = 0; i < 4; ++i) {
        stages.push_back(
            std::make_unique<SwinStage>(dim, cfg.depths[static_cast<size_t>(i)],
                                        cfg.num_heads[static_cast<size_t>(i)], cfg.window_size, rng));
        register_module("layers." + std::to_string(i), *stages.back());
        out_norms.push_back(std::make_unique<nn::LayerNorm>(dim));
        register_module("norm" + std::to_string(i), *out_norms.back());
        if (i < 3) {
            merges.push_back(std::make_unique<PatchMerge>(dim, rng));
            register_module("layers." + std::to_string(i) + ".downsample", *merges.back());
            dim *= 2;
        }
    }
}

std::vector<int64_t> SwinEncoder::level_channels() const {
    const int64_t C = cfg_.embed_dim;
    return {C, C, 2 * C, 4 * C, 8 * C};
}

FeaturePyramid SwinEncoder::encode(const ag::Var& image) {
    FeaturePyramid pyr;
    Var x = patch_embed.forward(image);
    pyr.levels.push_back(x);  // pre-block embedding, not consumed downstream
    for (int i = 0; i < 4; ++i) {
        x = stages[static_cast<size_t>(i)]->forward(x);
        Var cl = ag::permute(x, {0, 2, 3, 1});
        Var normed = ag::permute(out_norms[static_cast<size_t>(i)]->forward(cl), {0, 3, 1, 2});
        pyr.levels.push_back(normed);
        if (i < 3) x = merges[static_cast<size_t>(i)]->forward(x);
    }
    return pyr;
}

// --------------------------------------------------------------------------
// state I/O
// --------------------------------------------------------------------------

void save_state(const Module& m, BlobFile& file, const std::string& prefix) {
    for (auto& [name, p] : m.named_parameters()) file.tensors[prefix + name] = p->value();
    for (auto& [name, t] : m.named_buffers()) file.tensors[prefix + name] = *t;
}

LoadReport load_state(Module& m, const BlobFile& file, bool strict, const std::string& prefix) {
    LoadReport rep;
    std::vector<std::string> used;
    auto apply = [&](const std::string& name, Tensor& dst) {
        auto it = file.tensors.find(prefix + name);
        if (it == file.tensors.end()) {
            rep.missing.push_back(prefix + name);
            return;
        }
        used.push_back(prefix + name);
        if (it->second.shape != dst.shape) {
            rep.mismatched.push_back(prefix + name + " file" + it->second.shape_str() + " model" +
                                     dst.shape_str());
            return;
        }
        dst = it->second;
    };
    for (auto& [name, p] : m.named_parameters()) apply(name, p->value());
    for (auto& [name, t] : m.named_buffers()) apply(name, *t);
    for (const auto& [name, t] : file.tensors) {
        if (name.rfind(prefix, 0) != 0) continue;
        if (std::find(used.begin(), used.end(), name) == used.end()) rep.unexpected.push_back(name);
    }
    if (strict && !rep.clean()) {
        std::string msg = "strict checkpoint load failed:";
        auto append = [&](const char* kind, const std::vector<std::string>& v) {
            for (const auto& s : v) msg += std::string(" [") + kind + "] " + s;
        };
        append("missing", rep.missing);
        append("unexpected", rep.unexpected);
        append("shape", rep.mismatched);
        throw std::runtime_error(msg);
    }
    return rep;
}

BlobFile translate_swin_checkpoint(const BlobFile& external) {
    BlobFile out;
    out.strings = external.strings;
    auto transpose2d = [](const Tensor& t) {
        Tensor r({t.shape[1], t.shape[0]});
        for (int64_t i = 0; i < t.shape[0]; ++i)
            for (int64_t j = 0; j < t.shape[1]; ++j) r.at2(j, i) = t.at2(i, j);
        return r;
    };
    auto ends_with = [](const std::string& s, const std::string& suf) {
        return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
    };
    for (const auto& [name, t] : external.tensors) {
        std::string key = name;
        // reference layout names blocks under layers.<i>.blocks.<j>; ours
        // matches, so translation is the linear-weight transpose plus a few
        // renames of the per-stage output norms used by dense-prediction
        // checkpoints.
        const bool linear_w = t.shape.size() == 2 &&
                              (ends_with(key, "qkv.weight") || ends_with(key, "proj.weight") ||
                               ends_with(key, "fc1.weight") || ends_with(key, "fc2.weight") ||
                               ends_with(key, "reduction.weight") || ends_with(key, "head.weight"));
        out.tensors[key] = linear_w ? transpose2d(t) : t;
    }
    return out;
}

}  // namespace mcnet
