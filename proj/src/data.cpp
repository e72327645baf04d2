#include "mcnet/data.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <thread>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mcnet/labels.hpp"

namespace mcnet {

namespace fs = std::filesystem;

namespace {

std::map<std::string, fs::path> index_by_stem(const fs::path& dir) {
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        auto [it, fresh] = out.emplace(e.path().stem().string(), e.path());
        if (!fresh && e.path() < it->second) it->second = e.path();
    }
    return out;
}

cv::Mat read_color(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);  // gray sources come back replicated
    if (img.empty()) throw std::runtime_error("cannot read image: " + path);
    return img;
}

Tensor to_chw(const cv::Mat& bgr) {
    Tensor t({3, bgr.rows, bgr.cols});
    for (int y = 0; y < bgr.rows; ++y)
        for (int x = 0; x < bgr.cols; ++x) {
            const auto& px = bgr.at<cv::Vec3b>(y, x);
            t.at3(0, y, x) = float(px[2]) / 255.0f;  // BGR -> RGB
            t.at3(1, y, x) = float(px[1]) / 255.0f;
            t.at3(2, y, x) = float(px[0]) / 255.0f;
        }
    return t;
}

// (H,W) plane resize via OpenCV; nearest for label maps, bilinear otherwise
Tensor resize_plane(const Tensor& in, int oh, int ow, bool nearest) {
    cv::Mat src(int(in.shape[0]), int(in.shape[1]), CV_32FC1,
                const_cast<float*>(in.data.data()));
    Tensor out({oh, ow});
    cv::Mat dst(oh, ow, CV_32FC1, out.data.data());
    cv::resize(src, dst, dst.size(), 0, 0, nearest ? cv::INTER_NEAREST : cv::INTER_LINEAR);
    return out;
}

Tensor flip_plane(const Tensor& in) {
    const int64_t h = in.shape[0], w = in.shape[1];
    Tensor out({h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) out.at2(y, x) = in.at2(y, w - 1 - x);
    return out;
}

Tensor rot90_plane(const Tensor& in) {  // one counter-clockwise quarter turn
    const int64_t h = in.shape[0], w = in.shape[1];
    Tensor out({w, h});
    for (int64_t r = 0; r < w; ++r)
        for (int64_t c = 0; c < h; ++c) out.at2(r, c) = in.at2(c, w - 1 - r);
    return out;
}

Tensor crop_plane(const Tensor& in, const AugmentParams& p, bool nearest) {
    const int h = int(in.shape[0]), w = int(in.shape[1]);
    const int y0 = int(p.crop_top * float(h)), y1 = h - int(p.crop_bottom * float(h));
    const int x0 = int(p.crop_left * float(w)), x1 = w - int(p.crop_right * float(w));
    if (y0 == 0 && x0 == 0 && y1 == h && x1 == w) return in;
    Tensor window({y1 - y0, x1 - x0});
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) window.at2(y - y0, x - x0) = in.at2(y, x);
    return resize_plane(window, h, w, nearest);
}

Tensor transform_plane(const Tensor& in, const AugmentParams& p, bool nearest) {
    Tensor t = in;
    if (p.hflip) t = flip_plane(t);
    for (int k = 0; k < (p.rot_quarters % 4 + 4) % 4; ++k) t = rot90_plane(t);
    return crop_plane(t, p, nearest);
}

Tensor transform_image(const Tensor& in, const AugmentParams& p) {
    std::vector<Tensor> planes;
    for (int64_t c = 0; c < in.shape[0]; ++c) {
        Tensor plane({in.shape[1], in.shape[2]});
        std::copy_n(in.data.begin() + c * plane.numel(), plane.numel(), plane.data.begin());
        planes.push_back(transform_plane(plane, p, /*nearest=*/false));
    }
    Tensor out({in.shape[0], planes[0].shape[0], planes[0].shape[1]});
    for (size_t c = 0; c < planes.size(); ++c)
        std::copy_n(planes[c].data.begin(), planes[c].numel(),
                    out.data.begin() + int64_t(c) * planes[c].numel());
    return out;
}

int worker_count() {
    if (const char* env = std::getenv("MCNET_NUM_WORKERS")) {
        const int n = std::atoi(env);
        if (n >= 1) return std::min(n, 16);
    }
    return 1;
}

}  // namespace

DatasetManifest scan_dataset(const std::string& root) {
    DatasetManifest m;
    m.root = root;
    const fs::path base(root);
    for (const char* sub : {"RGB", "T", "GT"})
        if (!fs::is_directory(base / sub))
            throw std::runtime_error("dataset root is missing subdirectory " + std::string(sub) +
                                     ": " + root);
    auto rgb = index_by_stem(base / "RGB");
    auto th = index_by_stem(base / "T");
    auto gt = index_by_stem(base / "GT");

    for (const auto& [stem, path] : rgb) {
        auto ti = th.find(stem);
        auto gi = gt.find(stem);
        if (ti == th.end() || gi == gt.end()) {
            m.orphans.push_back("RGB/" + path.filename().string());
            continue;
        }
        m.entries.push_back({path.string(), ti->second.string(), gi->second.string(), stem});
    }
    for (const auto& [stem, path] : th)
        if (!rgb.count(stem) || !gt.count(stem)) m.orphans.push_back("T/" + path.filename().string());
    for (const auto& [stem, path] : gt)
        if (!rgb.count(stem) || !th.count(stem)) m.orphans.push_back("GT/" + path.filename().string());
    // std::map iteration already sorts entries by name
    return m;
}

void normalize_channels(Tensor& t) {
    check_shape(t.rank() == 3 || t.rank() == 4, "normalize_channels expects (C,H,W) or (N,C,H,W)");
    const int64_t channels = t.shape[size_t(t.rank() - 3)];
    check_shape(channels == 3, "normalize_channels expects 3 channels");
    const int64_t plane = t.shape[size_t(t.rank() - 2)] * t.shape[size_t(t.rank() - 1)];
    const int64_t images = t.numel() / (3 * plane);
    for (int64_t n = 0; n < images; ++n)
        for (int64_t c = 0; c < 3; ++c) {
            float* p = t.data.data() + (n * 3 + c) * plane;
            for (int64_t i = 0; i < plane; ++i)
                p[i] = (p[i] - kChannelMean[size_t(c)]) / kChannelStd[size_t(c)];
        }
}

RgbtPair load_pair(const ManifestEntry& entry, int size) {
    if (size < 1) throw std::invalid_argument("load_pair: size must be positive");
    RgbtPair pair;
    pair.name = entry.name;

    for (auto [path, dst] : {std::pair{&entry.rgb_path, &pair.rgb},
                             std::pair{&entry.thermal_path, &pair.thermal}}) {
        cv::Mat img = read_color(*path);
        cv::Mat resized;
        cv::resize(img, resized, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
        *dst = to_chw(resized);
    }

    cv::Mat gt = cv::imread(entry.gt_path, cv::IMREAD_GRAYSCALE);
    if (gt.empty()) throw std::runtime_error("cannot read mask: " + entry.gt_path);
    cv::Mat gtr;
    cv::resize(gt, gtr, cv::Size(size, size), 0, 0, cv::INTER_NEAREST);
    pair.gt = Tensor({size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            pair.gt.at2(y, x) = gtr.at<uint8_t>(y, x) >= 128 ? 1.0f : 0.0f;

    auto dec = decouple(pair.gt);
    pair.skeleton = std::move(dec.skeleton);
    pair.contour = std::move(dec.contour);
    return pair;
}

AugmentParams draw_augment_params(Rng& rng) {
    AugmentParams p;
    p.hflip = rng.uniform() < 0.5;
    p.rot_quarters = int(rng.uniform_int(0, 3));
    p.crop_top = float(rng.uniform(0.0, 0.1));
    p.crop_bottom = float(rng.uniform(0.0, 0.1));
    p.crop_left = float(rng.uniform(0.0, 0.1));
    p.crop_right = float(rng.uniform(0.0, 0.1));
    return p;
}

RgbtPair apply_augment(const RgbtPair& pair, const AugmentParams& p) {
    RgbtPair out;
    out.name = pair.name;
    out.rgb = transform_image(pair.rgb, p);
    out.thermal = transform_image(pair.thermal, p);
    out.gt = transform_plane(pair.gt, p, /*nearest=*/true);
    for (auto& v : out.gt.data) v = v >= 0.5f ? 1.0f : 0.0f;  // nearest keeps it binary; be explicit
    auto dec = decouple(out.gt);
    out.skeleton = std::move(dec.skeleton);
    out.contour = std::move(dec.contour);
    return out;
}

RgbtPair augment(const RgbtPair& pair, uint64_t seed) {
    Rng rng(seed);
    return apply_augment(pair, draw_augment_params(rng));
}

BatchIterator::BatchIterator(const DatasetManifest& manifest, Options opt)
    : manifest_(&manifest), opt_(opt), num_workers_(worker_count()) {
    if (manifest.entries.empty()) throw std::invalid_argument("empty dataset manifest");
    if (opt_.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    start_epoch(0);
}

void BatchIterator::start_epoch(int epoch) {
    epoch_ = epoch;
    cursor_ = 0;
    order_.resize(manifest_->entries.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = int64_t(i);
    if (opt_.shuffle) {
        Rng rng(opt_.seed, uint64_t(epoch) << 1);  // even streams: shuffle
        rng.shuffle(order_.begin(), order_.end());
    }
}

void BatchIterator::skip(int64_t batches) {
    const int64_t n = int64_t(manifest_->entries.size());
    cursor_ = std::min(n, cursor_ + batches * opt_.batch_size);
}

int64_t BatchIterator::batches_per_epoch() const {
    const int64_t n = int64_t(manifest_->entries.size());
    return (n + opt_.batch_size - 1) / opt_.batch_size;
}

bool BatchIterator::next(Batch& out) {
    const int64_t n = int64_t(manifest_->entries.size());
    if (cursor_ >= n) return false;
    const int64_t count = std::min<int64_t>(opt_.batch_size, n - cursor_);

    std::vector<RgbtPair> pairs(static_cast<size_t>(count));
    auto load_slot = [&](int64_t slot) {
        const int64_t idx = order_[size_t(cursor_ + slot)];
        RgbtPair p = load_pair(manifest_->entries[size_t(idx)], opt_.input_size);
        if (opt_.augment) {
            // odd streams: per-sample augmentation keyed by (epoch, index)
            Rng rng(opt_.seed, ((uint64_t(uint32_t(epoch_)) << 32) | uint64_t(idx)) * 2 + 1);
            p = apply_augment(p, draw_augment_params(rng));
        }
        pairs[size_t(slot)] = std::move(p);
    };
    if (num_workers_ > 1) {
        std::vector<std::thread> pool;
        for (int w = 0; w < num_workers_; ++w)
            pool.emplace_back([&, w] {
                for (int64_t s = w; s < count; s += num_workers_) load_slot(s);
            });
        for (auto& t : pool) t.join();
    } else {
        for (int64_t s = 0; s < count; ++s) load_slot(s);
    }
    cursor_ += count;

    const int64_t sz = opt_.input_size;
    out.rgb = Tensor({count, 3, sz, sz});
    out.thermal = Tensor({count, 3, sz, sz});
    out.gt = Tensor({count, 1, sz, sz});
    out.skeleton = Tensor({count, 1, sz, sz});
    out.contour = Tensor({count, 1, sz, sz});
    out.names.clear();
    const int64_t plane = sz * sz;
    for (int64_t s = 0; s < count; ++s) {
        const auto& p = pairs[size_t(s)];
        std::copy_n(p.rgb.data.begin(), 3 * plane, out.rgb.data.begin() + s * 3 * plane);
        std::copy_n(p.thermal.data.begin(), 3 * plane, out.thermal.data.begin() + s * 3 * plane);
        std::copy_n(p.gt.data.begin(), plane, out.gt.data.begin() + s * plane);
        std::copy_n(p.skeleton.data.begin(), plane, out.skeleton.data.begin() + s * plane);
        std::copy_n(p.contour.data.begin(), plane, out.contour.data.begin() + s * plane);
        out.names.push_back(p.name);
    }
    normalize_channels(out.rgb);
    normalize_channels(out.thermal);
    return true;
}

}  // namespace mcnet
