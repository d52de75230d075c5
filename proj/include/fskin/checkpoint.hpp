#pragma once

#include <string>

#include "fskin/geometry.hpp"
#include "fskin/shape.hpp"
#include "fskin/skinning.hpp"

namespace fskin {

/// Trained model bundle: the occupancy net, the skinning net, and the voxel
/// grid distilled from it. The grid carries the canonical bounding box all
/// three live on.
struct Checkpoint {
    OccupancyMlp occupancy;
    SkinningMlp skinning;
    SkinningVoxelGrid grid;

    const Aabb& bbox() const { return grid.bbox(); }
};

/// Binary checkpoint: magic "FSNF", u32 version=1, occupancy net, skinning
/// net (network wire format), u32 nx ny nz n_b, f64 bbox[6], f64 grid
/// payload x-fastest with the bone index innermost. Little-endian. The grid
/// is stored at full precision so a saved model reloads bit-for-bit.
void save_fsnf(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_fsnf(const std::string& path);

}  // namespace fskin
