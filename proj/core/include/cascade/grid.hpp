#pragma once

#include <cstdint>
#include <vector>

namespace cascade {

/// Plain row-major 2-D array for images and masks.
template <typename T>
struct Grid {
    std::size_t h = 0, w = 0;
    std::vector<T> v;

    Grid() = default;
    Grid(std::size_t height, std::size_t width, T fill = T())
        : h(height), w(width), v(height * width, fill) {}

    T& at(std::size_t y, std::size_t x) { return v[y * w + x]; }
    const T& at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
    std::size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    bool operator==(const Grid&) const = default;
};

using ImageGrid = Grid<float>;
using MaskGrid = Grid<std::uint8_t>;

}  // namespace cascade
