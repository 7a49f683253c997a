#include "uqseg/unctarget.hpp"

#include <algorithm>

#include "uqseg/error.hpp"

namespace uqseg {

VoxelGrid UncertaintyTarget::to_grid() const {
    VoxelGrid g(dims, 1);
    g.data = values;
    return g;
}

ErrorMap error_map(const LabelVolume& pred, const LabelVolume& gt,
                   const std::vector<uint16_t>& tumor_labels) {
    require(pred.dims == gt.dims, ErrKind::shape,
            "error_map: pred dims " + to_string(pred.dims) + " != gt dims " + to_string(gt.dims));
    std::vector<uint8_t> in_tumor(65536, 0);
    for (uint16_t id : tumor_labels) in_tumor[id] = 1;
    ErrorMap e(pred.dims);
    const size_t n = e.mask.size();
    for (size_t i = 0; i < n; ++i)
        e.mask[i] = uint8_t(in_tumor[pred.labels[i]] != in_tumor[gt.labels[i]]);
    return e;
}

template <typename T>
void box_smooth_3_field(const T* in, T* out, const Dims& dims) {
    const int nx = int(dims.nx), ny = int(dims.ny), nz = int(dims.nz);
    const T inv27 = T(1) / T(27);
    for (int z = 0; z < nz; ++z) {
        const int z0 = std::max(z - 1, 0), z1 = std::min(z + 1, nz - 1);
        for (int y = 0; y < ny; ++y) {
            const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, ny - 1);
            for (int x = 0; x < nx; ++x) {
                const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, nx - 1);
                T sum = 0;
                for (int zz = z0; zz <= z1; ++zz)
                    for (int yy = y0; yy <= y1; ++yy) {
                        const T* row = in + (size_t(zz) * ny + yy) * nx;
                        for (int xx = x0; xx <= x1; ++xx) sum += row[xx];
                    }
                out[(size_t(z) * ny + y) * nx + x] = sum * inv27;
            }
        }
    }
}

template void box_smooth_3_field<float>(const float*, float*, const Dims&);
template void box_smooth_3_field<double>(const double*, double*, const Dims&);

UncertaintyTarget box_smooth_3(const ErrorMap& x) {
    UncertaintyTarget t;
    t.dims = x.dims;
    t.values.resize(x.mask.size());
    // binary input: the box sum is an integer count, so value = count / 27 exactly
    std::vector<float> in(x.mask.begin(), x.mask.end());
    box_smooth_3_field(in.data(), t.values.data(), x.dims);
    return t;
}

MaskVolume dilate_mask(const MaskVolume& m, int radius) {
    require(radius >= 0, ErrKind::config, "dilate_mask: negative radius");
    if (radius == 0) return m;
    const int nx = int(m.dims.nx), ny = int(m.dims.ny), nz = int(m.dims.nz);
    // separable max filter along each axis in turn
    MaskVolume a = m, b(m.dims);
    auto pass = [&](const MaskVolume& src, MaskVolume& dst, int ax) {
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x) {
                    uint8_t v = 0;
                    for (int d = -radius; d <= radius && !v; ++d) {
                        int xx = x + (ax == 0 ? d : 0);
                        int yy = y + (ax == 1 ? d : 0);
                        int zz = z + (ax == 2 ? d : 0);
                        if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz) continue;
                        v = src.mask[(size_t(zz) * ny + yy) * nx + xx];
                    }
                    dst.mask[(size_t(z) * ny + y) * nx + x] = v;
                }
    };
    pass(a, b, 0);
    pass(b, a, 1);
    pass(a, b, 2);
    return b;
}

}  // namespace uqseg
