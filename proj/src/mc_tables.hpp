#pragma once

namespace fskin::detail {

// Cube corner i occupies offset kCornerOffset[i] within a cell; edge e joins
// corners kEdgeCorner[e][0..1]. Numbering follows the classic marching-cubes
// tabulation.
inline constexpr int kCornerOffset[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
    {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
};
inline constexpr int kEdgeCorner[12][2] = {
    {0, 1}, {1, 2}, {2, 3}, {3, 0},
    {4, 5}, {5, 6}, {6, 7}, {7, 4},
    {0, 4}, {1, 5}, {2, 6}, {3, 7},
};

extern const signed char kTriTable[256][16];

}  // namespace fskin::detail
