#pragma once

#include <string>

#include "mcnet/core/tensor.hpp"

namespace mcnet {

// Exact Euclidean distance from every foreground pixel to the nearest
// background pixel. The image border counts as background, so a mask of all
// ones still has finite distances. Background pixels map to 0.
// Throws std::invalid_argument when the mask is not strictly {0,1}.
Tensor distance_transform(const Tensor& mask);

struct DecoupledLabels {
    Tensor gt;        // binary {0,1}
    Tensor skeleton;  // [0,1], peaks at the innermost foreground pixels
    Tensor contour;   // gt - skeleton, emphasizes the object boundary
};

// Splits a binary mask into the complementary skeleton/contour supervision
// pair. With per_component, each connected component's skeleton is
// normalized by that component's own maximal distance instead of the global
// maximum.
DecoupledLabels decouple(const Tensor& gt, bool per_component = false);

struct DecoupleStats {
    int processed = 0;
    int skipped = 0;  // unreadable inputs
};

// Decouples every mask image in gt_dir, writing <stem>_skeleton.png and
// <stem>_contour.png into out_dir (8-bit grayscale, round(255*v)).
DecoupleStats decouple_directory(const std::string& gt_dir, const std::string& out_dir,
                                 bool per_component = false);

}  // namespace mcnet
