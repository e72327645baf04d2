#include "mcnet/metrics.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mcnet/core/edt.hpp"

namespace mcnet {

namespace {

constexpr double kEps = DBL_EPSILON;
constexpr double kBeta2 = 0.3;

void check_pair(const Tensor& pred, const Tensor& gt) {
    check_shape(pred.rank() == 2 && gt.rank() == 2, "metrics expect (H,W) maps");
    check_shape(pred.shape == gt.shape, "pred/gt shape mismatch");
}

int64_t gt_area(const Tensor& gt) {
    int64_t n = 0;
    for (int64_t i = 0; i < gt.numel(); ++i) n += gt[i] >= 0.5f ? 1 : 0;
    return n;
}

double mean_of(const Tensor& t) {
    double s = 0;
    for (int64_t i = 0; i < t.numel(); ++i) s += t[i];
    return s / double(t.numel());
}

double fbeta(double p, double r) {
    return p + r > 0 ? (1 + kBeta2) * p * r / (kBeta2 * p + r) : 0.0;
}

}  // namespace

double mae(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    double s = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) s += std::abs(double(pred[i]) - double(gt[i]));
    return s / double(pred.numel());
}

PrCurve pr_curve(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    const int64_t total_fg = gt_area(gt);
    if (total_fg == 0) throw std::invalid_argument("pr_curve: empty ground truth");

    PrCurve out;
    for (int t = 0; t < 256; ++t) {
        int64_t tp = 0, fp = 0;
        for (int64_t i = 0; i < pred.numel(); ++i) {
            const bool on = double(pred[i]) >= double(t) / 255.0;
            if (!on) continue;
            (gt[i] >= 0.5f ? tp : fp)++;
        }
        out.precision[size_t(t)] = (tp + fp) == 0 ? 1.0 : double(tp) / double(tp + fp);
        out.recall[size_t(t)] = double(tp) / double(total_fg);
    }
    return out;
}

FMeasures f_measures(const Tensor& pred, const Tensor& gt) {
    auto pr = pr_curve(pred, gt);
    FMeasures out;
    for (int t = 0; t < 256; ++t) {
        out.curve[size_t(t)] = fbeta(pr.precision[size_t(t)], pr.recall[size_t(t)]);
        out.f_max = std::max(out.f_max, out.curve[size_t(t)]);
    }
    const double tau = std::min(2.0 * mean_of(pred), 1.0);
    int64_t tp = 0, fp = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        if (double(pred[i]) < tau) continue;
        (gt[i] >= 0.5f ? tp : fp)++;
    }
    const double p = (tp + fp) == 0 ? 1.0 : double(tp) / double(tp + fp);
    const double r = double(tp) / double(gt_area(gt));
    out.f_avg = fbeta(p, r);
    return out;
}

double weighted_f(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    const int h = int(gt.shape[0]), w = int(gt.shape[1]);
    if (gt_area(gt) == 0) throw std::invalid_argument("weighted_f: empty ground truth");

    std::vector<char> fg(size_t(h) * w);
    for (int64_t i = 0; i < gt.numel(); ++i) fg[size_t(i)] = gt[i] >= 0.5f ? 1 : 0;
    auto dist2 = detail::squared_distance_field(fg, h, w);

    std::vector<double> E(size_t(h) * w);
    for (int64_t i = 0; i < gt.numel(); ++i)
        E[size_t(i)] = std::abs(double(pred[i]) - (fg[size_t(i)] ? 1.0 : 0.0));

    // Et: on background pixels, substitute the error at the nearest
    // foreground pixel (ties: smallest squared distance, then row, then
    // column). Only background pixels within Chebyshev distance 3 of the
    // foreground can influence the 7x7 blur at foreground pixels, and their
    // nearest foreground pixel lies within a radius-5 window.
    std::vector<double> Et = E;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t idx = size_t(y) * w + x;
            if (fg[idx]) continue;
            if (dist2[idx] > 18.0f) continue;  // farther than sqrt(18): blur never sees it
            long best_d2 = std::numeric_limits<long>::max();
            int best_y = -1, best_x = -1;
            for (int ny = std::max(0, y - 5); ny <= std::min(h - 1, y + 5); ++ny)
                for (int nx = std::max(0, x - 5); nx <= std::min(w - 1, x + 5); ++nx) {
                    if (!fg[size_t(ny) * w + nx]) continue;
                    const long d2 = long(ny - y) * (ny - y) + long(nx - x) * (nx - x);
                    if (d2 < best_d2) {
                        best_d2 = d2;
                        best_y = ny;
                        best_x = nx;
                    }
                }
            if (best_y >= 0) Et[idx] = E[size_t(best_y) * w + best_x];
        }

    // 7x7 Gaussian (sigma 5) blur of Et, zero padding, evaluated only where
    // it is consumed (foreground pixels)
    std::array<double, 7> g{};
    double gs = 0;
    for (int i = 0; i < 7; ++i) {
        const double d = i - 3.0;
        g[size_t(i)] = std::exp(-d * d / (2.0 * 5.0 * 5.0));
        gs += g[size_t(i)];
    }
    for (auto& v : g) v /= gs;

    double sum_min_fg = 0;  // sum over fg of min(E, EA)
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t idx = size_t(y) * w + x;
            if (!fg[idx]) continue;
            double ea = 0;
            for (int i = 0; i < 7; ++i)
                for (int j = 0; j < 7; ++j) {
                    const int sy = y + i - 3, sx = x + j - 3;
                    if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                    ea += g[size_t(i)] * g[size_t(j)] * Et[size_t(sy) * w + sx];
                }
            sum_min_fg += std::min(E[idx], ea);
        }

    // importance weights: 1 on foreground, distance decay on background
    double sum_ew_bg = 0;
    for (size_t i = 0; i < fg.size(); ++i) {
        if (fg[i]) continue;
        const double b = std::exp(std::log(0.5) / 5.0 * std::sqrt(double(dist2[i])));
        sum_ew_bg += E[i] * b;
    }

    const double n_fg = double(gt_area(gt));
    const double tpw = n_fg - sum_min_fg;
    const double fpw = sum_ew_bg;
    const double r = 1.0 - sum_min_fg / n_fg;
    const double p = tpw / (kEps + tpw + fpw);
    return 2.0 * r * p / (kEps + r + p);
}

namespace {

// object-aware similarity of the masked prediction inside a region
double s_object_term(const Tensor& pred, const Tensor& gt, bool foreground) {
    double sum = 0, n = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const bool in = (gt[i] >= 0.5f) == foreground;
        if (!in) continue;
        sum += foreground ? pred[i] : 1.0 - pred[i];
        n += 1;
    }
    if (n == 0) return 0.0;
    const double x = sum / n;
    double var = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const bool in = (gt[i] >= 0.5f) == foreground;
        if (!in) continue;
        const double v = (foreground ? pred[i] : 1.0 - pred[i]) - x;
        var += v * v;
    }
    const double sigma = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
    return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

// region similarity of one sub-rectangle per the structure-measure SSIM form
double s_region_ssim(const Tensor& pred, const Tensor& gt, int y0, int y1, int x0, int x1) {
    const double n = double(y1 - y0) * double(x1 - x0);
    if (n <= 0) return 1.0;
    double mx = 0, my = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            mx += pred.at2(y, x);
            my += gt.at2(y, x) >= 0.5f ? 1.0 : 0.0;
        }
    mx /= n;
    my /= n;
    double sx = 0, sy = 0, sxy = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const double dx = pred.at2(y, x) - mx;
            const double dy = (gt.at2(y, x) >= 0.5f ? 1.0 : 0.0) - my;
            sx += dx * dx;
            sy += dy * dy;
            sxy += dx * dy;
        }
    const double denom_n = n - 1 > 0 ? n - 1 : 1;
    sx /= denom_n;
    sy /= denom_n;
    sxy /= denom_n;
    const double alpha = 4.0 * mx * my * sxy;
    const double beta = (mx * mx + my * my) * (sx + sy);
    if (alpha != 0.0) return alpha / (beta + kEps);
    return beta == 0.0 ? 1.0 : 0.0;
}

}  // namespace

double s_measure(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    const int h = int(gt.shape[0]), w = int(gt.shape[1]);
    const double y_mean = mean_of(gt);
    if (y_mean == 0.0) return 1.0 - mean_of(pred);
    if (y_mean == 1.0) return mean_of(pred);

    // object-aware term
    const double u = y_mean;
    const double s_obj =
        u * s_object_term(pred, gt, true) + (1.0 - u) * s_object_term(pred, gt, false);

    // region-aware term: split at the foreground centroid (1-based rounding
    // per the reference convention)
    double total = 0, cx = 0, cy = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (gt.at2(y, x) >= 0.5f) {
                total += 1;
                cx += x + 1;
                cy += y + 1;
            }
    const int X = int(std::lround(cx / total));
    const int Y = int(std::lround(cy / total));

    const double area = double(h) * w;
    const double w1 = double(X) * Y / area;
    const double w2 = double(w - X) * Y / area;
    const double w3 = double(X) * (h - Y) / area;
    const double w4 = 1.0 - w1 - w2 - w3;
    const double s_reg = w1 * s_region_ssim(pred, gt, 0, Y, 0, X) +
                         w2 * s_region_ssim(pred, gt, 0, Y, X, w) +
                         w3 * s_region_ssim(pred, gt, Y, h, 0, X) +
                         w4 * s_region_ssim(pred, gt, Y, h, X, w);

    return std::max(0.0, 0.5 * s_obj + 0.5 * s_reg);
}

double e_measure(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    const int64_t n = gt.numel();
    const int64_t fg = gt_area(gt);
    const double tau = std::min(2.0 * mean_of(pred), 1.0);

    std::vector<double> bin(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) bin[size_t(i)] = double(pred[i]) >= tau ? 1.0 : 0.0;

    double enhanced_sum = 0;
    if (fg == 0) {
        for (int64_t i = 0; i < n; ++i) enhanced_sum += 1.0 - bin[size_t(i)];
    } else if (fg == n) {
        for (int64_t i = 0; i < n; ++i) enhanced_sum += bin[size_t(i)];
    } else {
        double mean_fm = 0;
        for (int64_t i = 0; i < n; ++i) mean_fm += bin[size_t(i)];
        mean_fm /= double(n);
        const double mean_gt = double(fg) / double(n);
        for (int64_t i = 0; i < n; ++i) {
            const double afm = bin[size_t(i)] - mean_fm;
            const double agt = (gt[i] >= 0.5f ? 1.0 : 0.0) - mean_gt;
            const double align = 2.0 * agt * afm / (agt * agt + afm * afm + kEps);
            enhanced_sum += (align + 1.0) * (align + 1.0) / 4.0;
        }
    }
    return enhanced_sum / (double(n) - 1.0 + kEps);
}

namespace {

Tensor load_gray(const std::string& path, bool binarize) {
    cv::Mat img = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (img.empty()) throw std::runtime_error("cannot read image: " + path);
    Tensor t({img.rows, img.cols});
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x) {
            const uint8_t v = img.at<uint8_t>(y, x);
            t.at2(y, x) = binarize ? (v >= 128 ? 1.0f : 0.0f) : float(v) / 255.0f;
        }
    return t;
}

Tensor resize_bilinear(const Tensor& t, int h, int w) {
    cv::Mat src(int(t.shape[0]), int(t.shape[1]), CV_32FC1);
    for (int y = 0; y < src.rows; ++y)
        for (int x = 0; x < src.cols; ++x) src.at<float>(y, x) = t.at2(y, x);
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at2(y, x) = std::clamp(dst.at<float>(y, x), 0.0f, 1.0f);
    return out;
}

}  // namespace

MetricsReport evaluate_dataset(const std::string& pred_dir, const std::string& gt_dir) {
    namespace fs = std::filesystem;
    MetricsReport rep;

    std::map<std::string, fs::path> gts;
    for (const auto& e : fs::directory_iterator(gt_dir))
        if (e.is_regular_file()) gts[e.path().stem().string()] = e.path();

    std::map<std::string, fs::path> preds;  // sorted: fixed processing order
    for (const auto& e : fs::directory_iterator(pred_dir))
        if (e.is_regular_file()) preds[e.path().stem().string()] = e.path();

    for (const auto& [stem, gt_path] : gts)
        if (!preds.count(stem)) rep.issues.push_back("missing prediction: " + stem);

    double sum_favg = 0, sum_fw = 0, sum_mae = 0, sum_em = 0, sum_sm = 0;
    std::array<double, 256> sum_p{}, sum_r{};

    for (const auto& [stem, pred_path] : preds) {
        auto it = gts.find(stem);
        if (it == gts.end()) {
            rep.issues.push_back("missing ground truth: " + stem);
            continue;
        }
        Tensor gt = load_gray(it->second.string(), /*binarize=*/true);
        Tensor pred = load_gray(pred_path.string(), /*binarize=*/false);
        if (pred.shape != gt.shape) {
            rep.issues.push_back("resized prediction: " + stem);
            pred = resize_bilinear(pred, int(gt.shape[0]), int(gt.shape[1]));
        }
        sum_mae += mae(pred, gt);
        sum_sm += s_measure(pred, gt);
        sum_em += e_measure(pred, gt);
        ++rep.images;

        if (gt_area(gt) == 0) {
            rep.issues.push_back("empty ground truth (excluded from curves): " + stem);
            continue;
        }
        auto fm = f_measures(pred, gt);
        auto pr = pr_curve(pred, gt);
        sum_favg += fm.f_avg;
        sum_fw += weighted_f(pred, gt);
        for (int t = 0; t < 256; ++t) {
            sum_p[size_t(t)] += pr.precision[size_t(t)];
            sum_r[size_t(t)] += pr.recall[size_t(t)];
        }
        ++rep.curve_images;
    }

    if (rep.images > 0) {
        rep.mae = sum_mae / rep.images;
        rep.s_m = sum_sm / rep.images;
        rep.e_m = sum_em / rep.images;
    }
    if (rep.curve_images > 0) {
        rep.f_avg = sum_favg / rep.curve_images;
        rep.f_weighted = sum_fw / rep.curve_images;
        for (int t = 0; t < 256; ++t) {
            rep.precision[size_t(t)] = sum_p[size_t(t)] / rep.curve_images;
            rep.recall[size_t(t)] = sum_r[size_t(t)] / rep.curve_images;
            rep.f_curve[size_t(t)] = fbeta(rep.precision[size_t(t)], rep.recall[size_t(t)]);
            rep.f_max = std::max(rep.f_max, rep.f_curve[size_t(t)]);
        }
    }
    return rep;
}

void write_report_csv(const MetricsReport& report, const std::string& path,
                      const std::string& dataset, const std::string& method) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write report: " + path);
    os << "dataset,method,Favg,Fmax,Fw,MAE,Em,Sm\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", dataset.c_str(),
                  method.c_str(), report.f_avg, report.f_max, report.f_weighted, report.mae,
                  report.e_m, report.s_m);
    os << buf;
}

void write_curves_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write curves: " + path);
    os << "threshold,precision,recall,fmeasure\n";
    for (int t = 0; t < 256; ++t) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f\n", t, report.precision[size_t(t)],
                      report.recall[size_t(t)], report.f_curve[size_t(t)]);
        os << buf;
    }
}

}  // namespace mcnet
