#pragma once

#include <algorithm>
#include <limits>
#include <vector>

namespace mcnet {
namespace detail {

inline constexpr float kEdtInf = std::numeric_limits<float>::max() / 4;

// Felzenszwalb-Huttenlocher 1-D squared distance transform (lower envelope
// of parabolas).
inline void edt_1d(const std::vector<float>& f, std::vector<float>& d, int n) {
    std::vector<int> v(static_cast<size_t>(n));
    std::vector<float> z(static_cast<size_t>(n) + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -kEdtInf;
    z[1] = kEdtInf;
    for (int q = 1; q < n; ++q) {
        float s;
        for (;;) {
            const int p = v[static_cast<size_t>(k)];
            s = ((f[size_t(q)] + float(q) * q) - (f[size_t(p)] + float(p) * p)) / (2.0f * (q - p));
            if (s > z[size_t(k)]) break;
            --k;
        }
        ++k;
        v[size_t(k)] = q;
        z[size_t(k)] = s;
        z[size_t(k) + 1] = kEdtInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[size_t(k) + 1] < float(q)) ++k;
        const int p = v[size_t(k)];
        d[size_t(q)] = float(q - p) * float(q - p) + f[size_t(p)];
    }
}

// Exact squared Euclidean distance of every cell to the nearest seed cell.
inline std::vector<float> squared_distance_field(const std::vector<char>& seed, int h, int w) {
    std::vector<float> dist(static_cast<size_t>(h) * w);
    for (size_t i = 0; i < dist.size(); ++i) dist[i] = seed[i] ? 0.0f : kEdtInf;
    std::vector<float> f(static_cast<size_t>(std::max(h, w)));
    std::vector<float> d(static_cast<size_t>(std::max(h, w)));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) f[size_t(y)] = dist[size_t(y) * w + x];
        edt_1d(f, d, h);
        for (int y = 0; y < h; ++y) dist[size_t(y) * w + x] = d[size_t(y)];
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) f[size_t(x)] = dist[size_t(y) * w + x];
        edt_1d(f, d, w);
        for (int x = 0; x < w; ++x) dist[size_t(y) * w + x] = d[size_t(x)];
    }
    return dist;
}

}  // namespace detail
}  // namespace mcnet
