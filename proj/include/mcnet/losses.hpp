#pragma once

#include "mcnet/core/ops.hpp"

namespace mcnet {

// Loss kernels, templated on the scalar type so gradient tests can run the
// exact same code in double precision.

template <class T>
ag::VarT<T> bce_loss(const ag::VarT<T>& pred, const ag::VarT<T>& target) {
    check_shape(pred.shape() == target.shape(), "bce_loss shape mismatch");
    const T eps = static_cast<T>(1e-7);
    auto p = ag::clamp(pred, eps, T(1) - eps);
    auto one_minus_t = ag::add_scalar(ag::scale(target, T(-1)), T(1));
    auto one_minus_p = ag::add_scalar(ag::scale(p, T(-1)), T(1));
    auto ll = ag::add(ag::mul(target, ag::log_op(p)), ag::mul(one_minus_t, ag::log_op(one_minus_p)));
    return ag::scale(ag::mean_all(ll), T(-1));
}

namespace detail {

template <class T>
TensorT<T> gaussian_window(int64_t size, T sigma) {
    std::vector<T> g(static_cast<size_t>(size));
    T sum = 0;
    for (int64_t i = 0; i < size; ++i) {
        const T d = static_cast<T>(i) - static_cast<T>(size - 1) / 2;
        g[static_cast<size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
        sum += g[static_cast<size_t>(i)];
    }
    TensorT<T> w({1, 1, size, size});
    for (int64_t i = 0; i < size; ++i)
        for (int64_t j = 0; j < size; ++j)
            w.at4(0, 0, i, j) = g[static_cast<size_t>(i)] * g[static_cast<size_t>(j)] / (sum * sum);
    return w;
}

}  // namespace detail

// 1 - mean windowed SSIM with an 11x11 Gaussian window (sigma 1.5) and the
// standard stability constants for unit dynamic range.
template <class T>
ag::VarT<T> ssim_loss(const ag::VarT<T>& pred, const ag::VarT<T>& target) {
    check_shape(pred.shape() == target.shape(), "ssim_loss shape mismatch");
    constexpr int64_t kWindow = 11;
    const T c1 = static_cast<T>(0.01 * 0.01), c2 = static_cast<T>(0.03 * 0.03);
    auto w = ag::constant(detail::gaussian_window<T>(kWindow, static_cast<T>(1.5)));
    ag::VarT<T> none;
    auto blur = [&](const ag::VarT<T>& x) {
        return ag::conv2d(x, w, none, /*stride=*/1, /*pad=*/kWindow / 2);
    };
    auto mu1 = blur(pred), mu2 = blur(target);
    auto mu1sq = ag::mul(mu1, mu1), mu2sq = ag::mul(mu2, mu2), mu12 = ag::mul(mu1, mu2);
    auto s1 = ag::sub(blur(ag::mul(pred, pred)), mu1sq);
    auto s2 = ag::sub(blur(ag::mul(target, target)), mu2sq);
    auto s12 = ag::sub(blur(ag::mul(pred, target)), mu12);
    auto num = ag::mul(ag::add_scalar(ag::scale(mu12, T(2)), c1),
                       ag::add_scalar(ag::scale(s12, T(2)), c2));
    auto den = ag::mul(ag::add_scalar(ag::add(mu1sq, mu2sq), c1),
                       ag::add_scalar(ag::add(s1, s2), c2));
    auto ssim = ag::mean_all(ag::div(num, den));
    return ag::add_scalar(ag::scale(ssim, T(-1)), T(1));
}

// Soft IoU with +1 smoothing, averaged per sample.
template <class T>
ag::VarT<T> iou_loss(const ag::VarT<T>& pred, const ag::VarT<T>& target) {
    check_shape(pred.shape() == target.shape(), "iou_loss shape mismatch");
    auto inter = ag::sum_per_row(ag::mul(pred, target));
    auto uni = ag::sub(ag::add(ag::sum_per_row(pred), ag::sum_per_row(target)), inter);
    auto ratio = ag::div(ag::add_scalar(inter, T(1)), ag::add_scalar(uni, T(1)));
    return ag::add_scalar(ag::scale(ag::mean_all(ratio), T(-1)), T(1));
}

// Branch supervision: BCE + SSIM against a soft skeleton/contour target.
template <class T>
ag::VarT<T> branch_loss(const ag::VarT<T>& pred, const ag::VarT<T>& soft_target) {
    return ag::add(bce_loss(pred, soft_target), ssim_loss(pred, soft_target));
}

template <class T>
struct LossBundleT {
    ag::VarT<T> l_rgb, l_thermal, l_fusion, total;
};
using LossBundle = LossBundleT<float>;

// The hybrid objective: skeleton supervises the RGB branch, contour the
// thermal branch, and the fused prediction carries the extra IoU term
// against the full ground truth.
template <class T>
LossBundleT<T> total_loss(const ag::VarT<T>& pred_rgb, const ag::VarT<T>& pred_t,
                          const ag::VarT<T>& pred_fusion, const ag::VarT<T>& skeleton,
                          const ag::VarT<T>& contour, const ag::VarT<T>& gt) {
    LossBundleT<T> b;
    b.l_rgb = branch_loss(pred_rgb, skeleton);
    b.l_thermal = branch_loss(pred_t, contour);
    b.l_fusion = ag::add(ag::add(bce_loss(pred_fusion, gt), ssim_loss(pred_fusion, gt)),
                         iou_loss(pred_fusion, gt));
    b.total = ag::add(ag::add(b.l_rgb, b.l_thermal), b.l_fusion);
    return b;
}

}  // namespace mcnet
