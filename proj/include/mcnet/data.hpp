#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mcnet/core/rng.hpp"
#include "mcnet/core/tensor.hpp"

namespace mcnet {

// One aligned RGB-thermal training sample. Images are kept in [0,1];
// normalization happens when a batch is stacked, so augmentation always
// operates on plain image data.
struct RgbtPair {
    Tensor rgb;       // (3,H,W)
    Tensor thermal;   // (3,H,W), single-channel sources replicated
    Tensor gt;        // (H,W) binary
    Tensor skeleton;  // (H,W)
    Tensor contour;   // (H,W)
    std::string name;
};

struct ManifestEntry {
    std::string rgb_path, thermal_path, gt_path;
    std::string name;  // shared basename without extension
};

struct DatasetManifest {
    std::string root;
    std::vector<ManifestEntry> entries;  // sorted by name
    std::vector<std::string> orphans;    // files lacking a full triple
};

// Scans <root>/RGB, <root>/T, <root>/GT and pairs files by basename
// (extension-insensitive). Missing subdirectories are an error; unmatched
// basenames land in `orphans`.
DatasetManifest scan_dataset(const std::string& root);

// Channel statistics applied when stacking batches (both modalities).
inline constexpr std::array<float, 3> kChannelMean = {0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kChannelStd = {0.229f, 0.224f, 0.225f};

// (C,H,W) or (N,C,H,W) in [0,1] -> standardized channels.
void normalize_channels(Tensor& t);

// Loads one entry: images bilinearly resized to size x size, gt
// nearest-neighbor resized and binarized at 128, skeleton/contour decoupled
// from the resized gt. Deterministic.
RgbtPair load_pair(const ManifestEntry& entry, int size);

// A concrete geometric transform; drawn randomly for training, but exposed
// so properties (involution, marker consistency) can force specific values.
struct AugmentParams {
    bool hflip = false;
    int rot_quarters = 0;  // number of 90-degree counter-clockwise turns
    float crop_top = 0, crop_bottom = 0, crop_left = 0, crop_right = 0;  // fractions
};

AugmentParams draw_augment_params(Rng& rng);

// Applies the same geometry to every map in the pair, then recomputes the
// skeleton/contour decoupling on the transformed gt.
RgbtPair apply_augment(const RgbtPair& pair, const AugmentParams& p);

// Seeded convenience wrapper: flip p=0.5, each right-angle rotation p=0.25,
// per-side border crop uniform in [0, 10%].
RgbtPair augment(const RgbtPair& pair, uint64_t seed);

struct Batch {
    Tensor rgb, thermal;           // (N,3,S,S), channel-normalized
    Tensor gt, skeleton, contour;  // (N,1,S,S)
    std::vector<std::string> names;
};

// Deterministic epoch-wise batch stream. The shuffle order depends only on
// (seed, epoch); per-sample augmentation depends only on (seed, epoch,
// sample index), so a resumed run sees the exact same data. Loading fans out
// over MCNET_NUM_WORKERS threads with fixed slot placement.
class BatchIterator {
public:
    struct Options {
        int batch_size = 16;
        int input_size = 384;
        bool shuffle = false;
        bool augment = false;
        uint64_t seed = 0;
    };

    BatchIterator(const DatasetManifest& manifest, Options opt);

    void start_epoch(int epoch);           // resets the cursor, reshuffles
    bool next(Batch& out);                 // false when the epoch is done
    void skip(int64_t batches);            // advance without loading (resume)
    int64_t batches_per_epoch() const;

private:
    const DatasetManifest* manifest_;
    Options opt_;
    int num_workers_;
    std::vector<int64_t> order_;
    int64_t cursor_ = 0;
    int epoch_ = 0;
};

}  // namespace mcnet
