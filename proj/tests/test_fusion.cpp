#include <doctest.h>

#include "mcnet/model.hpp"

using namespace mcnet;
using ag::Var;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, float lo = 0.0f, float hi = 1.0f) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

std::vector<Var> random_pyramid(Rng& rng, int64_t base) {
    std::vector<Var> p;
    for (int64_t s = base; p.size() < 4; s /= 2) p.emplace_back(random_tensor({1, 64, s, s}, rng, -1.0f, 1.0f));
    return p;
}

// Mirrors a model's weights: swaps the rgb/t parameter sets and reorders the
// channel blocks of every layer that consumes a concatenation of the two
// streams, so that running the mirrored model on swapped inputs reproduces
// the original outputs with the modalities exchanged.
void mirror_weights(McnetModel& m) {
    auto params = m.named_parameters();
    auto buffers = m.named_buffers();
    std::map<std::string, Var*> pmap(params.begin(), params.end());
    std::map<std::string, Tensor*> bmap(buffers.begin(), buffers.end());

    auto swap_token = [](std::string name) {
        static const std::pair<const char*, const char*> pairs[] = {
            {"encoder_rgb", "encoder_t"}, {"squeeze_rgb", "squeeze_t"}, {"hat_rgb", "hat_t"},
            {"conv_rgb", "conv_t"},       {"ca_rgb", "ca_t"},           {"sa_rgb", "sa_t"},
            {"decoder_rgb", "decoder_t"}, {"head_rgb", "head_t"}};
        for (auto [a, b] : pairs) {
            const std::string sa = std::string(a) + ".", sb = std::string(b) + ".";
            for (size_t pos = 0; (pos = name.find(sa, pos)) != std::string::npos;)
                return name.replace(pos, sa.size(), sb);
            for (size_t pos = 0; (pos = name.find(sb, pos)) != std::string::npos;)
                return name.replace(pos, sb.size(), sa);
        }
        return name;
    };
    // swap whole parameter tensors between mirrored module pairs
    std::map<std::string, Tensor> snapshot;
    for (auto& [n, p] : pmap) snapshot[n] = p->value();
    for (auto& [n, p] : pmap) p->value() = snapshot.at(swap_token(n));
    std::map<std::string, Tensor> bsnap;
    for (auto& [n, t] : bmap) bsnap[n] = *t;
    for (auto& [n, t] : bmap) *t = bsnap.at(swap_token(n));

    // layers that see Concat(rgb-part, t-part): swap the two channel blocks
    auto swap_rows = [](Tensor& t, int64_t lo, int64_t mid, int64_t hi) {
        // swap row blocks [lo,mid) and [mid,hi) of a (rows, cols) tensor
        const int64_t cols = t.numel() / t.shape[0];
        std::vector<float> tmp(t.data.begin(), t.data.end());
        for (int64_t r = lo; r < mid; ++r)
            for (int64_t c = 0; c < cols; ++c)
                t.data[size_t(r * cols + c)] = tmp[size_t((r + (hi - mid)) * cols + c)];
        for (int64_t r = mid; r < hi; ++r)
            for (int64_t c = 0; c < cols; ++c)
                t.data[size_t(r * cols + c)] = tmp[size_t((r - (mid - lo)) * cols + c)];
    };
    auto swap_in_channels = [](Tensor& w, int64_t lo, int64_t mid, int64_t hi) {
        // conv weight (cout, cin, k, k): swap input-channel blocks
        const int64_t cin = w.shape[1], k2 = w.shape[2] * w.shape[3];
        std::vector<float> tmp(w.data.begin(), w.data.end());
        for (int64_t co = 0; co < w.shape[0]; ++co)
            for (int64_t ci = lo; ci < hi; ++ci) {
                const int64_t src = ci < mid ? ci + (hi - mid) : ci - (mid - lo);
                for (int64_t i = 0; i < k2; ++i)
                    w.data[size_t((co * cin + ci) * k2 + i)] = tmp[size_t((co * cin + src) * k2 + i)];
            }
    };
    auto swap_cols = [](Tensor& t, int64_t lo, int64_t mid, int64_t hi) {
        // swap column blocks [lo,mid) and [mid,hi) of a (rows, cols) tensor
        const int64_t cols = t.shape[t.rank() - 1], rows = t.numel() / cols;
        std::vector<float> tmp(t.data.begin(), t.data.end());
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = lo; c < hi; ++c) {
                const int64_t src = c < mid ? c + (hi - mid) : c - (mid - lo);
                t.data[size_t(r * cols + c)] = tmp[size_t(r * cols + src)];
            }
    };
    for (auto& li : m.interact.levels) {
        // shared feature layout: [product | rgb | t] -> swap the last two
        // blocks everywhere the 192-channel axis is indexed
        swap_rows(li->cai->fc1.w.value(), 64, 128, 192);
        swap_cols(li->cai->fc2.w.value(), 64, 128, 192);
        swap_cols(li->cai->fc2.b.value(), 64, 128, 192);
        swap_in_channels(li->conv_rgb->conv.w.value(), 64, 128, 192);
        swap_in_channels(li->conv_t->conv.w.value(), 64, 128, 192);
    }
    // SDC input: Concat(agg_rgb, agg_t)
    auto& first = m.sdc.use_sdc() ? m.sdc.pre[0] : m.sdc.plain[0];
    swap_in_channels(first->conv.w.value(), 0, 64, 128);
    // fusion head input: Concat(logits_rgb, logits_t)
    swap_in_channels(m.fuse16.conv.w.value(), 0, 1, 2);
}

}  // namespace

TEST_CASE("decoder aggregates top-down and emits image-size logits") {
    Rng rng(50);
    Decoder dec(rng);
    dec.set_training(false);
    auto pyr = random_pyramid(rng, 24);
    auto out = dec.forward(pyr, 96, 96);
    CHECK(out.agg.shape() == std::vector<int64_t>({1, 64, 24, 24}));
    CHECK(out.logits.shape() == std::vector<int64_t>({1, 1, 96, 96}));

    // all-zero pyramid: logits are a bias-determined constant map
    std::vector<Var> zeros;
    for (int64_t s : {24, 12, 6, 3}) zeros.emplace_back(Tensor({1, 64, s, s}));
    auto zout = dec.forward(zeros, 96, 96);
    for (int64_t i = 0; i < zout.logits.numel(); ++i)
        CHECK(zout.logits.value()[i] == doctest::Approx(zout.logits.value()[0]).epsilon(1e-6));

    // the deepest level reaches the output
    auto deep = pyr;
    Tensor bumped = pyr[3].value();
    for (int64_t i = 0; i < bumped.numel(); ++i) bumped[i] *= 2.0f;
    deep[3] = Var(bumped);
    CHECK_FALSE(bitwise_equal(dec.forward(deep, 96, 96).logits.value(), out.logits.value()));
}

TEST_CASE("sdc block walks the stride ladder") {
    Rng rng(51);
    SdcModule sdc(true, rng);
    sdc.set_training(false);
    Var ar(random_tensor({1, 64, 24, 24}, rng, -1.0f, 1.0f));
    Var at(random_tensor({1, 64, 24, 24}, rng, -1.0f, 1.0f));
    auto out = sdc.forward(ar, at);
    CHECK(out.sdc_in.shape() == std::vector<int64_t>({1, 128, 24, 24}));
    const int64_t sizes[4] = {24, 12, 6, 3};
    REQUIRE(out.sdc_out.size() == 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(out.sdc_out[size_t(i)].shape() == std::vector<int64_t>({1, 128, sizes[i], sizes[i]}));
        CHECK(out.df_rgb[size_t(i)].shape() == std::vector<int64_t>({1, 64, sizes[i], sizes[i]}));
        CHECK(out.df_t[size_t(i)].shape() == out.df_rgb[size_t(i)].shape());
    }
    // concat semantics: the second half of SDC_in is exactly agg_t
    for (int64_t c = 0; c < 64; ++c)
        for (int64_t i = 0; i < 24 * 24; ++i)
            CHECK(out.sdc_in.value().data[size_t((64 + c) * 576 + i)] ==
                  at.value().data[size_t(c * 576 + i)]);

    // the plain-conv replacement keeps every shape contract
    SdcModule nosdc(false, rng);
    nosdc.set_training(false);
    auto pout = nosdc.forward(ar, at);
    for (int i = 0; i < 4; ++i)
        CHECK(pout.sdc_out[size_t(i)].shape() == out.sdc_out[size_t(i)].shape());
    CHECK(nosdc.parameter_count() < sdc.parameter_count());
}

TEST_CASE("toy model produces three probability maps deterministically") {
    Rng rng(52);
    auto cfg = ModelConfig::toy();
    McnetModel model(cfg, rng);
    model.set_training(false);
    Var rgb(random_tensor({1, 3, 96, 96}, rng));
    Var t(random_tensor({1, 1, 96, 96}, rng));  // single-channel thermal

    FeatureDump dump;
    auto out = model.forward(rgb, t, &dump);
    for (const Var* p : {&out.pred_rgb, &out.pred_t, &out.pred_fusion}) {
        CHECK(p->shape() == std::vector<int64_t>({1, 1, 96, 96}));
        for (int64_t i = 0; i < p->numel(); ++i) {
            CHECK(p->value()[i] >= 0.0f);
            CHECK(p->value()[i] <= 1.0f);
            CHECK(std::isfinite(p->value()[i]));
        }
    }
    // feature dump covers every named intermediate at every level
    for (int lvl = 2; lvl <= 5; ++lvl)
        for (const char* key : {"F", "LF", "DF"}) {
            CHECK(dump.count(key + std::to_string(lvl) + "_rgb") == 1);
            CHECK(dump.count(key + std::to_string(lvl) + "_t") == 1);
        }
    CHECK(dump.count("SDC_out2") == 1);
    CHECK(dump.at("SDC_out5").shape == std::vector<int64_t>({1, 128, 3, 3}));

    auto out2 = model.forward(rgb, t);
    CHECK(bitwise_equal(out.pred_fusion.value(), out2.pred_fusion.value()));

    Var bad(random_tensor({1, 3, 96, 64}, rng));
    CHECK_THROWS(model.forward(rgb, bad));
}

TEST_CASE("zero deep features reduce the second pass to the first") {
    Rng rng(53);
    auto cfg = ModelConfig::toy();
    McnetModel model(cfg, rng);
    model.set_training(false);
    // force DF == 0 by zeroing the BN affine of every SDC head
    for (auto& h : model.sdc.head_rgb)
        for (int64_t i = 0; i < 64; ++i) h->bn.gamma.value()[i] = h->bn.beta.value()[i] = 0.0f;
    for (auto& h : model.sdc.head_t)
        for (int64_t i = 0; i < 64; ++i) h->bn.gamma.value()[i] = h->bn.beta.value()[i] = 0.0f;

    Var rgb(random_tensor({1, 3, 32, 32}, rng));
    Var t(random_tensor({1, 3, 32, 32}, rng));
    auto pyr_rgb = model.encoder_rgb.encode(rgb);
    auto pyr_t = model.encoder_t.encode(t);
    auto ia = model.interact.forward(pyr_rgb, pyr_t);
    auto first = model.decoder_rgb.forward(ia.lf_rgb, 32, 32);
    auto out = model.forward(rgb, t);
    CHECK(bitwise_equal(out.logits_rgb.value(), first.logits.value()));
}

TEST_CASE("mirrored weights swap the modality predictions") {
    Rng rng(54);
    auto cfg = ModelConfig::toy();
    McnetModel model(cfg, rng);
    model.set_training(false);
    Var rgb(random_tensor({1, 3, 32, 32}, rng));
    Var t(random_tensor({1, 3, 32, 32}, rng));
    auto base = model.forward(rgb, t);

    mirror_weights(model);
    auto mirrored = model.forward(t, rgb);
    for (int64_t i = 0; i < base.pred_rgb.numel(); ++i) {
        CHECK(mirrored.pred_rgb.value()[i] == doctest::Approx(base.pred_t.value()[i]).epsilon(2e-4));
        CHECK(mirrored.pred_t.value()[i] == doctest::Approx(base.pred_rgb.value()[i]).epsilon(2e-4));
        CHECK(mirrored.pred_fusion.value()[i] ==
              doctest::Approx(base.pred_fusion.value()[i]).epsilon(2e-4));
    }
}

TEST_CASE("one backward pass reaches every parameter group") {
    Rng rng(55);
    auto cfg = ModelConfig::toy();
    McnetModel model(cfg, rng);
    model.set_training(true);
    model.zero_grad();
    Var rgb(random_tensor({1, 3, 32, 32}, rng));
    Var t(random_tensor({1, 3, 32, 32}, rng));
    auto out = model.forward(rgb, t);
    auto loss = ag::add(ag::add(ag::mean_all(out.logits_rgb), ag::mean_all(out.logits_t)),
                        ag::mean_all(out.logits_fusion));
    loss.backward();

    // every top-level component owns at least one parameter with signal
    const char* groups[] = {"encoder_rgb", "encoder_t", "interact", "decoder_rgb",
                            "decoder_t",   "sdc",       "fuse16",   "fuse1"};
    for (const char* g : groups) {
        double norm = 0;
        int64_t count = 0;
        for (auto& [name, p] : model.named_parameters()) {
            if (name.rfind(g, 0) != 0) continue;
            ++count;
            if (p->has_grad())
                for (int64_t i = 0; i < p->numel(); ++i) norm += std::abs(p->grad()[i]);
        }
        CHECK(count > 0);
        CHECK(norm > 0.0);
    }

    // the two learning-rate groups partition the parameter list
    auto bb = model.backbone_parameters();
    auto other = model.other_parameters();
    CHECK(bb.size() + other.size() == model.named_parameters().size());
    CHECK(bb.size() > 0);
    CHECK(other.size() > 0);
}

TEST_CASE("random input sweep stays finite") {
    Rng rng(56);
    auto cfg = ModelConfig::toy();
    McnetModel model(cfg, rng);
    model.set_training(false);
    for (int trial = 0; trial < 8; ++trial) {
        Var rgb(random_tensor({1, 3, 32, 32}, rng));
        Var t(random_tensor({1, 3, 32, 32}, rng));
        ag::NoGradGuard guard;
        auto out = model.forward(rgb, t);
        for (int64_t i = 0; i < out.pred_fusion.numel(); ++i)
            REQUIRE(std::isfinite(out.pred_fusion.value()[i]));
    }
}
