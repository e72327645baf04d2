#pragma once

#include <array>
#include <string>
#include <vector>

#include "mcnet/core/tensor.hpp"

namespace mcnet {

// All per-image metrics take a saliency map in [0,1] and a binary ground
// truth of the same (H,W) shape, and compute in double precision.

double mae(const Tensor& pred, const Tensor& gt);

struct PrCurve {
    std::array<double, 256> precision{}, recall{};
};

// Binarizes pred at thresholds t/255 for t = 0..255 (pred >= t). Precision
// is 1 when nothing is predicted positive. Throws std::invalid_argument on
// an empty ground truth, where recall is undefined.
PrCurve pr_curve(const Tensor& pred, const Tensor& gt);

struct FMeasures {
    double f_avg = 0, f_max = 0;
    std::array<double, 256> curve{};
};

// F_beta with beta^2 = 0.3; f_avg uses the adaptive threshold
// min(2*mean(pred), 1).
FMeasures f_measures(const Tensor& pred, const Tensor& gt);

// Dependency-weighted F-measure. Throws on empty ground truth.
double weighted_f(const Tensor& pred, const Tensor& gt);

// Structure measure, alpha = 0.5 between object- and region-aware terms.
double s_measure(const Tensor& pred, const Tensor& gt);

// Enhanced-alignment measure of the adaptively binarized prediction.
double e_measure(const Tensor& pred, const Tensor& gt);

struct MetricsReport {
    double f_avg = 0, f_max = 0, f_weighted = 0, mae = 0, e_m = 0, s_m = 0;
    std::array<double, 256> precision{}, recall{}, f_curve{};
    int images = 0;           // images contributing to mae/s_m/e_m
    int curve_images = 0;     // images with nonempty gt (curves, F, F^w)
    std::vector<std::string> issues;  // missing counterparts, resizes, empty gts
};

// Evaluates every prediction in pred_dir against the same-named ground truth
// in gt_dir (extension-insensitive). Predictions are bilinearly resized to
// the ground-truth size when they disagree.
MetricsReport evaluate_dataset(const std::string& pred_dir, const std::string& gt_dir);

// CSV: header "dataset,method,Favg,Fmax,Fw,MAE,Em,Sm", values at 6 decimals.
void write_report_csv(const MetricsReport& report, const std::string& path,
                      const std::string& dataset, const std::string& method);

// CSV: 256 rows of "threshold,precision,recall,fmeasure".
void write_curves_csv(const MetricsReport& report, const std::string& path);

}  // namespace mcnet
