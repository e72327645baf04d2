// Acceptance gate: one pass/fail line per release criterion. Exits nonzero
// if any criterion fails. Designed for a single CPU core; the heaviest
// criterion (the overfit run) takes a couple of minutes.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>

#include "mcnet/labels.hpp"
#include "mcnet/losses.hpp"
#include "mcnet/metrics.hpp"
#include "mcnet/pipeline.hpp"

using namespace mcnet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << ": " << detail << "\n";
    if (!ok) ++g_failures;
}

void run(const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
    try {
        auto [ok, detail] = fn();
        report(name, ok, detail);
    } catch (const std::exception& e) {
        report(name, false, std::string("exception: ") + e.what());
    }
}

// ---------------------------------------------------------------------- data

fs::path blob_dataset(const std::string& tag, int n, uint64_t seed) {
    const fs::path root = fs::temp_directory_path() / ("mcnet_accept_" + tag);
    fs::remove_all(root);
    for (const char* sub : {"RGB", "T", "GT"}) fs::create_directories(root / sub);
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        const int h = 32, w = 32;
        cv::Mat rgb(h, w, CV_8UC3), th(h, w, CV_8UC3), gt(h, w, CV_8UC1, cv::Scalar(0));
        const int cy = 10 + int(rng.uniform_int(0, 11)), cx = 10 + int(rng.uniform_int(0, 11));
        const int r = 5 + int(rng.uniform_int(0, 3));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const bool in = (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r;
                if (in) gt.at<uint8_t>(y, x) = 255;
                const int base = in ? 200 : 60;
                for (int c = 0; c < 3; ++c) {
                    rgb.at<cv::Vec3b>(y, x)[c] = uint8_t(base + rng.uniform_int(-15, 15));
                    th.at<cv::Vec3b>(y, x)[c] = uint8_t(base + rng.uniform_int(-15, 15));
                }
            }
        const std::string name = "img" + std::to_string(i);
        cv::imwrite((root / "RGB" / (name + ".png")).string(), rgb);
        cv::imwrite((root / "T" / (name + ".png")).string(), th);
        cv::imwrite((root / "GT" / (name + ".png")).string(), gt);
    }
    return root;
}

Tensor random_blob_mask(int h, int w, Rng& rng) {
    Tensor m({h, w});
    const int blobs = 1 + int(rng.uniform_int(0, 2));
    for (int b = 0; b < blobs; ++b) {
        const int cy = int(rng.uniform_int(2, h - 3)), cx = int(rng.uniform_int(2, w - 3));
        const int r = 1 + int(rng.uniform_int(0, std::min(h, w) / 3));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m.at2(y, x) = 1.0f;
    }
    return m;
}

// ------------------------------------------------------------- loss FD check

// max relative error between analytic and central-difference gradients
template <class Fn>
double fd_relative_error(Fn&& build, ag::VarT<double>& leaf) {
    leaf.zero_grad();
    auto loss = build();
    loss.backward();
    if (!leaf.has_grad()) return 1.0;
    const double eps = 1e-6;
    double worst = 0;
    for (int64_t i = 0; i < leaf.numel(); ++i) {
        const double orig = leaf.value()[i];
        leaf.value()[i] = orig + eps;
        const double up = build().value()[0];
        leaf.value()[i] = orig - eps;
        const double dn = build().value()[0];
        leaf.value()[i] = orig;
        const double fd = (up - dn) / (2 * eps);
        const double an = leaf.grad()[i];
        worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
    }
    return worst;
}

// ----------------------------------------------------------- metric oracles
// independent literal transcriptions, same as the unit-test oracles

constexpr double kEps = 2.220446049250313e-16;

void brute_pr(const Tensor& pred, const Tensor& gt, int t, double& p, double& r) {
    long tp = 0, fp = 0, fn = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const bool on = double(pred[i]) >= double(t) / 255.0;
        const bool pos = gt[i] >= 0.5f;
        if (on && pos) ++tp;
        if (on && !pos) ++fp;
        if (!on && pos) ++fn;
    }
    p = (tp + fp) == 0 ? 1.0 : double(tp) / double(tp + fp);
    r = double(tp) / double(tp + fn);
}

double oracle_weighted_f(const Tensor& pred, const Tensor& gt) {
    const int h = int(gt.shape[0]), w = int(gt.shape[1]);
    std::vector<double> E(size_t(h) * w), Et, B(size_t(h) * w, 1.0);
    for (int i = 0; i < h * w; ++i)
        E[size_t(i)] = std::abs(double(pred[i]) - (gt[i] >= 0.5f ? 1.0 : 0.0));
    Et = E;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (gt.at2(y, x) >= 0.5f) continue;
            long best = std::numeric_limits<long>::max();
            int by = -1, bx = -1;
            for (int ny = 0; ny < h; ++ny)
                for (int nx = 0; nx < w; ++nx) {
                    if (gt.at2(ny, nx) < 0.5f) continue;
                    const long d2 = long(ny - y) * (ny - y) + long(nx - x) * (nx - x);
                    if (d2 < best) {
                        best = d2;
                        by = ny;
                        bx = nx;
                    }
                }
            Et[size_t(y) * w + x] = E[size_t(by) * w + bx];
            B[size_t(y) * w + x] = std::exp(std::log(0.5) / 5.0 * std::sqrt(double(best)));
        }
    double K[7][7], ks = 0;
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
            K[i][j] = std::exp(-((i - 3.0) * (i - 3.0) + (j - 3.0) * (j - 3.0)) / 50.0);
            ks += K[i][j];
        }
    for (auto& row : K)
        for (auto& v : row) v /= ks;
    double tp_loss = 0, fpw = 0, nfg = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double ea = 0;
            for (int i = 0; i < 7; ++i)
                for (int j = 0; j < 7; ++j) {
                    const int sy = y + i - 3, sx = x + j - 3;
                    if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                    ea += K[i][j] * Et[size_t(sy) * w + sx];
                }
            const size_t idx = size_t(y) * w + x;
            double min_e_ea = E[idx];
            if (gt[int64_t(idx)] >= 0.5f && ea < min_e_ea) min_e_ea = ea;
            const double ew = min_e_ea * B[idx];
            if (gt[int64_t(idx)] >= 0.5f) {
                tp_loss += ew;
                nfg += 1;
            } else {
                fpw += ew;
            }
        }
    const double tpw = nfg - tp_loss;
    const double r = 1.0 - tp_loss / nfg;
    const double p = tpw / (kEps + tpw + fpw);
    return 2.0 * r * p / (kEps + r + p);
}

double oracle_region_ssim(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = double(x.size());
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sx = 0, sy = 0, sxy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sx += (x[i] - mx) * (x[i] - mx);
        sy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    const double dn = n - 1 > 0 ? n - 1 : 1;
    sx /= dn;
    sy /= dn;
    sxy /= dn;
    const double alpha = 4 * mx * my * sxy, beta = (mx * mx + my * my) * (sx + sy);
    if (alpha != 0) return alpha / (beta + kEps);
    return beta == 0 ? 1.0 : 0.0;
}

double oracle_s_measure(const Tensor& pred, const Tensor& gt) {
    const int h = int(gt.shape[0]), w = int(gt.shape[1]);
    double mean_gt = 0, mean_pred = 0;
    for (int64_t i = 0; i < gt.numel(); ++i) {
        mean_gt += gt[i] >= 0.5f ? 1.0 : 0.0;
        mean_pred += pred[i];
    }
    mean_gt /= double(h * w);
    mean_pred /= double(h * w);
    if (mean_gt == 0.0) return 1.0 - mean_pred;
    if (mean_gt == 1.0) return mean_pred;

    auto object_score = [&](bool fgpart) {
        std::vector<double> vals;
        for (int64_t i = 0; i < gt.numel(); ++i)
            if ((gt[i] >= 0.5f) == fgpart) vals.push_back(fgpart ? pred[i] : 1.0 - pred[i]);
        if (vals.empty()) return 0.0;
        double m = 0;
        for (double v : vals) m += v;
        m /= double(vals.size());
        double var = 0;
        for (double v : vals) var += (v - m) * (v - m);
        const double sd = vals.size() > 1 ? std::sqrt(var / double(vals.size() - 1)) : 0.0;
        return 2.0 * m / (m * m + 1.0 + sd + kEps);
    };
    const double s_obj = mean_gt * object_score(true) + (1 - mean_gt) * object_score(false);

    double total = 0, sumx = 0, sumy = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (gt.at2(y, x) >= 0.5f) {
                total += 1;
                sumx += x + 1;
                sumy += y + 1;
            }
    const int X = int(std::lround(sumx / total)), Y = int(std::lround(sumy / total));
    auto region = [&](int y0, int y1, int x0, int x1) {
        std::vector<double> xs, ys;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                xs.push_back(pred.at2(y, x));
                ys.push_back(gt.at2(y, x) >= 0.5f ? 1.0 : 0.0);
            }
        if (xs.empty()) return 1.0;
        return oracle_region_ssim(xs, ys);
    };
    const double area = double(h * w);
    const double w1 = double(X * Y) / area, w2 = double((w - X) * Y) / area,
                 w3 = double(X * (h - Y)) / area, w4 = 1.0 - w1 - w2 - w3;
    const double s_reg = w1 * region(0, Y, 0, X) + w2 * region(0, Y, X, w) +
                         w3 * region(Y, h, 0, X) + w4 * region(Y, h, X, w);
    return std::max(0.0, 0.5 * s_obj + 0.5 * s_reg);
}

double oracle_e_measure(const Tensor& pred, const Tensor& gt) {
    const int64_t n = gt.numel();
    double mp = 0;
    for (int64_t i = 0; i < n; ++i) mp += pred[i];
    const double tau = std::min(2.0 * mp / double(n), 1.0);
    double nfg = 0, mfm = 0;
    std::vector<double> fm(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        fm[size_t(i)] = double(pred[i]) >= tau ? 1.0 : 0.0;
        mfm += fm[size_t(i)];
        nfg += gt[i] >= 0.5f ? 1.0 : 0.0;
    }
    mfm /= double(n);
    double s = 0;
    if (nfg == 0) {
        for (int64_t i = 0; i < n; ++i) s += 1.0 - fm[size_t(i)];
    } else if (nfg == double(n)) {
        for (int64_t i = 0; i < n; ++i) s += fm[size_t(i)];
    } else {
        const double mgt = nfg / double(n);
        for (int64_t i = 0; i < n; ++i) {
            const double a = fm[size_t(i)] - mfm, b = (gt[i] >= 0.5f ? 1.0 : 0.0) - mgt;
            const double xi = 2.0 * a * b / (a * a + b * b + kEps);
            s += (xi + 1.0) * (xi + 1.0) / 4.0;
        }
    }
    return s / (double(n) - 1.0 + kEps);
}

// --------------------------------------------------------------- criteria

std::pair<bool, std::string> criterion_scope() {
    std::ostringstream os;
    os << "full-scale scores (e.g. VT5000 Favg 0.892, MAE 0.021) need the 22k-pretrained "
          "swin_b encoder and multi-day GPU training; not desk-reproducible, so the property "
          "suites below are the gate";
    const char* maps = std::getenv("MCNET_RELEASED_MAPS");
    const char* gts = std::getenv("MCNET_RELEASED_GT");
    if (maps && gts) {
        auto rep = evaluate_dataset(maps, gts);
        const bool ok = std::abs(rep.f_avg - 0.892) <= 0.005 && std::abs(rep.mae - 0.021) <= 0.005;
        os.str("");
        os << "released maps evaluated: Favg=" << rep.f_avg << " MAE=" << rep.mae
           << " (tolerance 0.005)";
        return {ok, os.str()};
    }
    return {true, os.str()};
}

std::pair<bool, std::string> criterion_shapes() {
    const auto t0 = Clock::now();
    Rng rng(1);
    McnetModel model(ModelConfig::toy(), rng);
    model.set_training(false);
    Tensor rgb({1, 3, 96, 96}), th({1, 3, 96, 96});
    Rng img(2);
    for (auto& v : rgb.data) v = float(img.uniform());
    for (auto& v : th.data) v = float(img.uniform());
    FeatureDump dump;
    ag::NoGradGuard no_grad;
    auto out = model.forward(ag::Var(rgb), ag::Var(th), &dump);
    const double dt = seconds_since(t0);

    const std::vector<int64_t> want{1, 1, 96, 96};
    for (const auto* p : {&out.pred_rgb, &out.pred_t, &out.pred_fusion}) {
        if (p->shape() != want) return {false, "prediction shape " + p->value().shape_str()};
        for (int64_t i = 0; i < p->numel(); ++i)
            if (p->value()[i] < 0.0f || p->value()[i] > 1.0f)
                return {false, "probability out of [0,1]"};
    }
    // squeeze pyramid: 64 channels at strides 4/8/16/32
    const int64_t side[4] = {24, 12, 6, 3};
    for (int lvl = 0; lvl < 4; ++lvl) {
        const auto& f = dump.at("F" + std::to_string(lvl + 2) + "_rgb");
        const std::vector<int64_t> expect{1, 64, side[lvl], side[lvl]};
        if (f.shape != expect)
            return {false, "pyramid level " + std::to_string(lvl + 2) + " is " + f.shape_str()};
    }
    std::ostringstream os;
    os << "toy 96x96 forward gives three (1,96,96) maps, 64-ch pyramid at strides 4/8/16/32, in "
       << dt << " s (budget 10)";
    return {dt < 10.0, os.str()};
}

std::pair<bool, std::string> criterion_gradients() {
    Rng rng(3);
    TensorD p({1, 1, 5, 5}), t({1, 1, 5, 5}), bt({1, 1, 5, 5});
    for (int64_t i = 0; i < 25; ++i) {
        p[i] = 0.05 + 0.9 * rng.uniform();
        t[i] = 0.05 + 0.9 * rng.uniform();
        bt[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    }
    ag::VarT<double> pred(p, true), target(t), btarget(bt);
    double worst = 0;
    worst = std::max(worst, fd_relative_error([&] { return bce_loss(pred, target); }, pred));
    worst = std::max(worst, fd_relative_error([&] { return ssim_loss(pred, target); }, pred));
    worst = std::max(worst, fd_relative_error([&] { return iou_loss(pred, btarget); }, pred));
    if (worst >= 1e-4) {
        std::ostringstream os;
        os << "loss kernel FD relative error " << worst;
        return {false, os.str()};
    }

    // every parameter block must receive gradient from one backward pass.
    // 64x64 is the smallest input whose top stage is larger than 1x1; at 1x1
    // batch-norm of a single element is identically its bias, which blocks
    // gradient flow for degenerate-size reasons unrelated to connectivity.
    Rng mrng(4);
    McnetModel model(ModelConfig::toy(), mrng);
    model.set_training(true);
    Tensor rgb({1, 3, 64, 64}), th({1, 3, 64, 64}), gt({1, 1, 64, 64});
    Rng img(5);
    for (auto& v : rgb.data) v = float(img.uniform());
    for (auto& v : th.data) v = float(img.uniform());
    for (int64_t i = 0; i < gt.numel(); ++i) gt[i] = img.uniform() < 0.4 ? 1.0f : 0.0f;
    auto dec = decouple([&] {
        Tensor g({64, 64});
        std::copy_n(gt.data.begin(), g.numel(), g.data.begin());
        return g;
    }());
    Tensor sk({1, 1, 64, 64}), ct({1, 1, 64, 64});
    std::copy_n(dec.skeleton.data.begin(), sk.numel(), sk.data.begin());
    std::copy_n(dec.contour.data.begin(), ct.numel(), ct.data.begin());

    model.zero_grad();
    auto out = model.forward(ag::Var(rgb), ag::Var(th));
    auto loss = total_loss<float>(out.pred_rgb, out.pred_t, out.pred_fusion, ag::Var(sk),
                                  ag::Var(ct), ag::Var(gt));
    loss.total.backward();
    int zero_blocks = 0;
    std::string first;
    for (auto& [name, param] : model.named_parameters()) {
        double norm = 0;
        if (param->has_grad())
            for (int64_t i = 0; i < param->grad().numel(); ++i)
                norm += double(param->grad()[i]) * double(param->grad()[i]);
        if (norm == 0.0) {
            ++zero_blocks;
            if (first.empty()) first = name;
        }
    }
    if (zero_blocks > 0)
        return {false, std::to_string(zero_blocks) + " parameter blocks with zero gradient, e.g. " +
                           first};
    std::ostringstream os;
    os << "bce/ssim/iou FD max rel err " << worst << " (<1e-4); all "
       << model.named_parameters().size() << " parameter blocks have nonzero gradient";
    return {true, os.str()};
}

std::pair<bool, std::string> criterion_labels() {
    const auto t0 = Clock::now();
    // 5x5 solid square against the all-pairs oracle (border = background)
    Tensor square({5, 5}, 1.0f);
    Tensor dist = distance_transform(square);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) {
            float best = std::numeric_limits<float>::max();
            for (int by = -1; by <= 5; ++by)
                for (int bx = -1; bx <= 5; ++bx) {
                    const bool inside = by >= 0 && by < 5 && bx >= 0 && bx < 5;
                    if (inside) continue;  // solid square: all outside is background
                    best = std::min(best, float(std::sqrt(double((by - y) * (by - y) +
                                                                 (bx - x) * (bx - x)))));
                }
            if (std::abs(dist.at2(y, x) - best) > 1e-5f)
                return {false, "5x5 square EDT mismatch against the brute-force oracle"};
        }
    if (dist.at2(2, 2) != 3.0f) return {false, "5x5 square center distance != 3.0"};

    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor mask = random_blob_mask(16 + trial % 17, 16 + (trial * 7) % 17, rng);
        auto dec = decouple(mask);
        float worst = 0, maxdist = 0, skel_at_max = 0;
        Tensor d = distance_transform(mask);
        for (int64_t i = 0; i < mask.numel(); ++i) {
            worst = std::max(worst, std::abs(dec.skeleton[i] + dec.contour[i] - mask[i]));
            if (d[i] > maxdist) {
                maxdist = d[i];
                skel_at_max = dec.skeleton[i];
            }
        }
        if (worst > 1e-6f) return {false, "skeleton+contour reconstruction error " +
                                              std::to_string(worst)};
        if (maxdist > 0 && skel_at_max != 1.0f)
            return {false, "skeleton is not 1 at the max-distance pixel"};
    }
    const double dt = seconds_since(t0);
    std::ostringstream os;
    os << "100 blob masks reconstruct within 1e-6, skeleton peaks at the EDT max, 5x5 center = "
          "3.0, in "
       << dt << " s (budget 5)";
    return {dt < 5.0, os.str()};
}

std::pair<bool, std::string> criterion_metrics() {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor pred({8, 8}), gt({8, 8});
        for (int64_t i = 0; i < 64; ++i) {
            pred[i] = float(rng.uniform_int(0, 255)) / 255.0f;
            gt[i] = rng.uniform() < 0.4 ? 1.0f : 0.0f;
        }
        bool any = false;
        for (int64_t i = 0; i < 64; ++i) any |= gt[i] == 1.0f;
        if (!any) gt[0] = 1.0f;
        auto curve = pr_curve(pred, gt);
        for (int t = 0; t < 256; ++t) {
            double p, r;
            brute_pr(pred, gt, t, p, r);
            if (curve.precision[size_t(t)] != p || curve.recall[size_t(t)] != r)
                return {false, "PR curve differs from exhaustive counting at threshold " +
                                   std::to_string(t)};
        }
    }
    for (int trial = 0; trial < 25; ++trial) {
        Tensor pred({16, 16}), gt({16, 16});
        for (int64_t i = 0; i < 256; ++i) {
            pred[i] = float(rng.uniform_int(0, 255)) / 255.0f;
            gt[i] = rng.uniform() < 0.35 ? 1.0f : 0.0f;
        }
        gt[0] = 1.0f;
        if (std::abs(weighted_f(pred, gt) - oracle_weighted_f(pred, gt)) > 1e-9)
            return {false, "weighted F differs from the transcription oracle"};
        if (std::abs(s_measure(pred, gt) - oracle_s_measure(pred, gt)) > 1e-9)
            return {false, "S-measure differs from the transcription oracle"};
        if (std::abs(e_measure(pred, gt) - oracle_e_measure(pred, gt)) > 1e-9)
            return {false, "E-measure differs from the transcription oracle"};
    }

    // self-evaluation of a directory against itself
    const fs::path dir = fs::temp_directory_path() / "mcnet_accept_self";
    fs::remove_all(dir);
    fs::create_directories(dir);
    Rng mrng(8);
    for (int i = 0; i < 3; ++i) {
        Tensor mask = random_blob_mask(32, 32, mrng);
        mask.at2(16, 16) = 1.0f;
        cv::Mat img(32, 32, CV_8UC1);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) img.at<uint8_t>(y, x) = mask.at2(y, x) > 0 ? 255 : 0;
        cv::imwrite((dir / ("m" + std::to_string(i) + ".png")).string(), img);
    }
    auto rep = evaluate_dataset(dir.string(), dir.string());
    fs::remove_all(dir);
    const bool ok = rep.f_max == 1.0 && rep.mae == 0.0 && std::abs(rep.s_m - 1.0) < 1e-6 &&
                    std::abs(rep.e_m - 1.0) < 0.01 && std::abs(rep.f_weighted - 1.0) < 1e-9;
    std::ostringstream os;
    os << "PR/F exact on 50x8x8; Fw/Sm/Em within 1e-9 of transcription oracles; self-eval "
          "Fmax="
       << rep.f_max << " MAE=" << rep.mae << " Sm=" << rep.s_m << " Em=" << rep.e_m
       << " Fw=" << rep.f_weighted;
    return {ok, os.str()};
}

std::pair<bool, std::string> criterion_overfit() {
    const auto t0 = Clock::now();
    const fs::path root = blob_dataset("overfit", 8, 9);
    const fs::path ckpt = fs::temp_directory_path() / "mcnet_accept_overfit_ckpt";
    const fs::path pred_dir = fs::temp_directory_path() / "mcnet_accept_overfit_pred";
    fs::remove_all(ckpt);
    fs::remove_all(pred_dir);

    TrainConfig cfg;
    cfg.backbone_preset = "toy";
    cfg.input_size = 32;
    cfg.batch_size = 4;
    cfg.epochs = 150;  // 2 steps/epoch -> 300 steps, well under the 1000 allowed
    cfg.seed = 5;
    cfg.dataset_root = root.string();
    cfg.checkpoint_dir = ckpt.string();
    cfg.augment = false;
    cfg.epoch_checkpoints = false;
    auto res = train(cfg);

    predict(res.final_checkpoint, root.string(), pred_dir.string());
    auto rep = evaluate_dataset(pred_dir.string(), (root / "GT").string());
    const double dt = seconds_since(t0);
    fs::remove_all(root);
    fs::remove_all(ckpt);
    fs::remove_all(pred_dir);

    std::ostringstream os;
    os << res.steps_run << " steps: train-set MAE=" << rep.mae << " (<0.05), Fmax=" << rep.f_max
       << " (>0.95), " << dt << " s (budget 600)";
    return {res.steps_run <= 1000 && rep.mae < 0.05 && rep.f_max > 0.95 && dt < 600.0, os.str()};
}

std::pair<bool, std::string> criterion_determinism() {
    const fs::path root = blob_dataset("det", 8, 10);
    const fs::path a = fs::temp_directory_path() / "mcnet_accept_det_a";
    const fs::path b = fs::temp_directory_path() / "mcnet_accept_det_b";
    const fs::path full = fs::temp_directory_path() / "mcnet_accept_det_full";
    const fs::path split = fs::temp_directory_path() / "mcnet_accept_det_split";
    for (const auto& d : {a, b, full, split}) fs::remove_all(d);

    TrainConfig cfg;
    cfg.backbone_preset = "toy";
    cfg.input_size = 32;
    cfg.batch_size = 4;
    cfg.epochs = 1;
    cfg.seed = 11;
    cfg.dataset_root = root.string();
    cfg.checkpoint_dir = a.string();
    auto read = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(is), {});
    };

    train(cfg);
    cfg.checkpoint_dir = b.string();
    train(cfg);
    const bool logs_equal = read(a / "loss_log.csv") == read(b / "loss_log.csv");

    // stop after 1 of 2 steps, resume, compare against the uninterrupted run
    cfg.checkpoint_dir = full.string();
    auto res_full = train(cfg);
    cfg.checkpoint_dir = split.string();
    cfg.max_steps = 1;
    auto res_half = train(cfg);
    cfg.max_steps = 0;
    auto res_rest = train(cfg, res_half.final_checkpoint);

    auto bf = BlobFile::load(res_full.final_checkpoint);
    auto bs = BlobFile::load(res_rest.final_checkpoint);
    bool resumed_equal = bf.tensors.size() == bs.tensors.size();
    for (const auto& [name, t] : bf.tensors) {
        auto it = bs.tensors.find(name);
        resumed_equal = resumed_equal && it != bs.tensors.end() && it->second.data == t.data;
    }
    for (const auto& d : {a, b, full, split}) fs::remove_all(d);
    fs::remove_all(root);

    std::ostringstream os;
    os << "fixed-seed loss logs " << (logs_equal ? "identical" : "DIFFER")
       << "; stop/resume checkpoint " << (resumed_equal ? "bit-for-bit equal" : "DIFFERS")
       << " to the uninterrupted run";
    return {logs_equal && resumed_equal, os.str()};
}

std::pair<bool, std::string> criterion_ablations() {
    auto count = [](const std::string& interaction, bool use_sdc) {
        TrainConfig cfg;
        cfg.backbone_preset = "toy";
        cfg.interaction = interaction;
        cfg.use_sdc = use_sdc;
        Rng rng(12);
        McnetModel model(cfg.model_config(), rng);
        return model.parameter_count();
    };
    const int64_t full = count("full", true);
    const int64_t share = count("share", true);
    const int64_t cross = count("cross", true);
    const int64_t noninter = count("noninteraction", true);
    const int64_t no_sdc = count("full", false);
    std::ostringstream os;
    os << "parameter counts full=" << full << " share=" << share << " cross=" << cross
       << " noninteraction=" << noninter << " no-sdc=" << no_sdc;
    // share replaces the cross-guidance spatial attention with one on the
    // shared feature; that conv is channel-agnostic (2->1, 7x7), so the count
    // legitimately equals full and the two are distinguished structurally
    const bool counts_ok = cross != full && noninter != full && no_sdc != full;
    if (!counts_ok) return {false, os.str() + " (an ablation matches the full model)"};
    {
        TrainConfig fc, sc;
        fc.backbone_preset = sc.backbone_preset = "toy";
        sc.interaction = "share";
        Rng r1(12), r2(12);
        McnetModel mf(fc.model_config(), r1), ms(sc.model_config(), r2);
        std::set<std::string> nf, ns;
        for (auto& [n, p] : mf.named_parameters()) nf.insert(n);
        for (auto& [n, p] : ms.named_parameters()) ns.insert(n);
        if (nf == ns) return {false, os.str() + " (share has the same parameter set as full)"};
        mf.set_training(false);
        ms.set_training(false);
        Tensor rgb({1, 3, 32, 32}), th({1, 3, 32, 32});
        Rng img(15);
        for (auto& v : rgb.data) v = float(img.uniform());
        for (auto& v : th.data) v = float(img.uniform());
        ag::NoGradGuard ng;
        auto of = mf.forward(ag::Var(rgb), ag::Var(th));
        auto osh = ms.forward(ag::Var(rgb), ag::Var(th));
        if (of.pred_fusion.value().data == osh.pred_fusion.value().data)
            return {false, os.str() + " (share and full computed identical outputs)"};
    }

    // superposition identity: kill the detail heads, the branch logits must
    // equal a plain first-pass decode of the LF pyramid bitwise
    Rng rng(13);
    ModelConfig mc = ModelConfig::toy();
    mc.use_sdc = false;
    McnetModel model(mc, rng);
    for (auto& [name, p] : model.named_parameters())
        if (name.rfind("sdc.head_", 0) == 0 && name.find(".bn.") != std::string::npos)
            for (auto& v : p->value().data) v = 0.0f;  // BN affine to zero -> DF = 0
    model.set_training(false);
    Tensor rgb({1, 3, 32, 32}), th({1, 3, 32, 32});
    Rng img(14);
    for (auto& v : rgb.data) v = float(img.uniform());
    for (auto& v : th.data) v = float(img.uniform());
    ag::NoGradGuard no_grad;
    FeatureDump dump;
    auto out = model.forward(ag::Var(rgb), ag::Var(th), &dump);
    std::vector<ag::Var> lf;
    for (int lvl = 2; lvl <= 5; ++lvl) lf.emplace_back(dump.at("LF" + std::to_string(lvl) + "_rgb"));
    auto first = model.decoder_rgb.forward(lf, 32, 32);
    if (first.logits.value().data != out.logits_rgb.value().data)
        return {false, os.str() + "; superposition identity violated"};
    return {true, os.str() + "; zero-DF branch logits match the first-pass decode bitwise"};
}

}  // namespace

int main() {
    std::cout << "MCNet acceptance suite\n";
    run("scope", criterion_scope);
    run("shape suite", criterion_shapes);
    run("gradient suite", criterion_gradients);
    run("label decoupling suite", criterion_labels);
    run("metrics oracle suite", criterion_metrics);
    run("overfit sanity", criterion_overfit);
    run("determinism & resume", criterion_determinism);
    run("ablation switches", criterion_ablations);
    if (g_failures) {
        std::cout << g_failures << " criterion(s) failed\n";
        return 1;
    }
    std::cout << "all criteria passed\n";
    return 0;
}
