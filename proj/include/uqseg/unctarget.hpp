#pragma once

#include <cstdint>
#include <vector>

#include "uqseg/voxvol.hpp"

namespace uqseg {

// Binary field marking voxels whose combined-tumor membership differs
// between prediction and ground truth.
using ErrorMap = MaskVolume;

// Box-averaged error map; every value is count-of-set-neighbors / 27.
struct UncertaintyTarget {
    Dims dims;
    std::vector<float> values;

    float at(uint32_t x, uint32_t y, uint32_t z) const { return values[dims.index(x, y, z)]; }
    VoxelGrid to_grid() const;
};

// 1 where exactly one of pred/gt lies in tumor_labels. Confusions between
// two tumor subregions are not errors: both sides are inside the combined
// mask. Error(shape) when dims differ.
ErrorMap error_map(const LabelVolume& pred, const LabelVolume& gt,
                   const std::vector<uint16_t>& tumor_labels);

// 3x3x3 mean filter with zero padding; the divisor stays 27 at borders.
UncertaintyTarget box_smooth_3(const ErrorMap& x);

// Same filter over an arbitrary scalar field, for callers that keep the
// training pipeline in doubles. in and out must each hold dims.voxels()
// elements and must not alias.
template <typename T>
void box_smooth_3_field(const T* in, T* out, const Dims& dims);

// Chebyshev-ball dilation (box structuring element) used by the dilated
// uncertainty-loss mask option.
MaskVolume dilate_mask(const MaskVolume& m, int radius);

extern template void box_smooth_3_field<float>(const float*, float*, const Dims&);
extern template void box_smooth_3_field<double>(const double*, double*, const Dims&);

}  // namespace uqseg
