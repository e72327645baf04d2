#include "mcnet/labels.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <queue>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/core.hpp>

#include "mcnet/core/edt.hpp"

namespace mcnet {

namespace {

void require_binary(const Tensor& mask) {
    check_shape(mask.rank() == 2, "expected a (H,W) mask");
    for (int64_t i = 0; i < mask.numel(); ++i)
        if (mask[i] != 0.0f && mask[i] != 1.0f)
            throw std::invalid_argument("mask is not binary at index " + std::to_string(i));
}

}  // namespace

Tensor distance_transform(const Tensor& mask) {
    require_binary(mask);
    const int h = static_cast<int>(mask.shape[0]), w = static_cast<int>(mask.shape[1]);
    // pad with a one-pixel background ring so the border acts as background
    const int hp = h + 2, wp = w + 2;
    std::vector<char> bg(static_cast<size_t>(hp) * wp, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            bg[size_t(y + 1) * wp + (x + 1)] = mask.at2(y, x) == 1.0f ? 0 : 1;
    auto sq = detail::squared_distance_field(bg, hp, wp);
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float s = sq[size_t(y + 1) * wp + (x + 1)];
            out.at2(y, x) = mask.at2(y, x) == 1.0f ? std::sqrt(s) : 0.0f;
        }
    return out;
}

DecoupledLabels decouple(const Tensor& gt, bool per_component) {
    DecoupledLabels out;
    out.gt = gt;
    Tensor dist = distance_transform(gt);
    const int h = static_cast<int>(gt.shape[0]), w = static_cast<int>(gt.shape[1]);
    out.skeleton = Tensor({h, w});

    if (!per_component) {
        float mx = 0.0f;
        for (int64_t i = 0; i < dist.numel(); ++i) mx = std::max(mx, dist[i]);
        if (mx > 0.0f)
            for (int64_t i = 0; i < dist.numel(); ++i) out.skeleton[i] = dist[i] / mx;
    } else {
        // 4-connected component labelling, each normalized on its own
        std::vector<int> comp(static_cast<size_t>(h) * w, -1);
        int ncomp = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (gt.at2(y, x) != 1.0f || comp[size_t(y) * w + x] >= 0) continue;
                std::queue<std::pair<int, int>> q;
                q.emplace(y, x);
                comp[size_t(y) * w + x] = ncomp;
                while (!q.empty()) {
                    auto [cy, cx] = q.front();
                    q.pop();
                    const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
                    for (int k = 0; k < 4; ++k) {
                        const int ny = cy + dy[k], nx = cx + dx[k];
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        if (gt.at2(ny, nx) != 1.0f || comp[size_t(ny) * w + nx] >= 0) continue;
                        comp[size_t(ny) * w + nx] = ncomp;
                        q.emplace(ny, nx);
                    }
                }
                ++ncomp;
            }
        std::vector<float> cmax(static_cast<size_t>(ncomp), 0.0f);
        for (int64_t i = 0; i < dist.numel(); ++i)
            if (comp[size_t(i)] >= 0) cmax[size_t(comp[size_t(i)])] = std::max(cmax[size_t(comp[size_t(i)])], dist[i]);
        for (int64_t i = 0; i < dist.numel(); ++i)
            if (comp[size_t(i)] >= 0 && cmax[size_t(comp[size_t(i)])] > 0.0f)
                out.skeleton[i] = dist[i] / cmax[size_t(comp[size_t(i)])];
    }

    out.contour = Tensor({h, w});
    for (int64_t i = 0; i < gt.numel(); ++i) out.contour[i] = gt[i] - out.skeleton[i];
    return out;
}

DecoupleStats decouple_directory(const std::string& gt_dir, const std::string& out_dir,
                                 bool per_component) {
    namespace fs = std::filesystem;
    DecoupleStats stats;
    fs::create_directories(out_dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(gt_dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
        cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
        if (img.empty()) {
            std::cerr << "warning: cannot read mask " << path << ", skipping\n";
            ++stats.skipped;
            continue;
        }
        Tensor gt({img.rows, img.cols});
        for (int y = 0; y < img.rows; ++y)
            for (int x = 0; x < img.cols; ++x)
                gt.at2(y, x) = img.at<uint8_t>(y, x) >= 128 ? 1.0f : 0.0f;
        auto dec = decouple(gt, per_component);
        auto write_map = [&](const Tensor& t, const std::string& suffix) {
            cv::Mat m(img.rows, img.cols, CV_8UC1);
            for (int y = 0; y < img.rows; ++y)
                for (int x = 0; x < img.cols; ++x)
                    m.at<uint8_t>(y, x) = static_cast<uint8_t>(
                        std::lround(255.0f * std::clamp(t.at2(y, x), 0.0f, 1.0f)));
            const std::string name = path.stem().string() + "_" + suffix + ".png";
            cv::imwrite((fs::path(out_dir) / name).string(), m);
        };
        write_map(dec.skeleton, "skeleton");
        write_map(dec.contour, "contour");
        ++stats.processed;
    }
    return stats;
}

}  // namespace mcnet
