#pragma once

#include <cstdint>
#include <vector>

namespace segdetail {

/// Mask value for pixels that carry no class label. Excluded from loss and
/// evaluation; stored as 255 in PGM files regardless of the class count.
inline constexpr int kIgnoreLabel = 255;

/// 2-D grid of class indices in [0, C) plus the distinguished ignore value.
struct LabelMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;

    LabelMask() = default;
    LabelMask(int h_, int w_, std::uint8_t fill = 0)
        : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

    std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }

    bool operator==(const LabelMask&) const = default;
};

}  // namespace segdetail
