#pragma once

#include <vector>

#include "uqseg/voxvol.hpp"

namespace uqseg {

// Double-precision multi-channel field used inside the network and the
// training-side loss kernels. Same layout as VoxelGrid; float grids are the
// interchange format, doubles keep finite-difference checks clean.
struct Tensor {
    uint32_t channels = 0;
    Dims dims;
    std::vector<double> v;

    Tensor() = default;
    Tensor(uint32_t ch, Dims d, double fill = 0.0)
        : channels(ch), dims(d), v(size_t(ch) * d.voxels(), fill) {}

    size_t size() const { return v.size(); }
    double* channel(uint32_t c) { return v.data() + size_t(c) * dims.voxels(); }
    const double* channel(uint32_t c) const { return v.data() + size_t(c) * dims.voxels(); }

    double& at(uint32_t c, uint32_t x, uint32_t y, uint32_t z) {
        return v[size_t(c) * dims.voxels() + dims.index(x, y, z)];
    }
    double at(uint32_t c, uint32_t x, uint32_t y, uint32_t z) const {
        return v[size_t(c) * dims.voxels() + dims.index(x, y, z)];
    }

    void zero() { std::fill(v.begin(), v.end(), 0.0); }

    VoxelGrid to_grid() const {
        VoxelGrid g(dims, channels);
        for (size_t i = 0; i < v.size(); ++i) g.data[i] = float(v[i]);
        return g;
    }

    static Tensor from_grid(const VoxelGrid& g) {
        Tensor t(g.channels, g.dims);
        for (size_t i = 0; i < g.data.size(); ++i) t.v[i] = g.data[i];
        return t;
    }
};

}  // namespace uqseg
