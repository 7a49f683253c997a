#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "uqseg/labelspace.hpp"

namespace uqseg {

struct Dims {
    uint32_t nx = 0, ny = 0, nz = 0;

    uint64_t voxels() const { return uint64_t(nx) * ny * nz; }
    bool operator==(const Dims&) const = default;

    size_t index(uint32_t x, uint32_t y, uint32_t z) const {
        return (size_t(z) * ny + y) * nx + x;
    }
};

std::string to_string(const Dims& d);

// Dense multi-channel scalar field. Layout: channel-major, then z, y, x with
// x fastest -- the same order the VXV1 payload uses.
struct VoxelGrid {
    Dims dims;
    uint32_t channels = 0;
    std::vector<float> data;

    VoxelGrid() = default;
    VoxelGrid(Dims d, uint32_t ch, float fill = 0.0f);

    float& at(uint32_t c, uint32_t x, uint32_t y, uint32_t z) {
        return data[size_t(c) * dims.voxels() + dims.index(x, y, z)];
    }
    float at(uint32_t c, uint32_t x, uint32_t y, uint32_t z) const {
        return data[size_t(c) * dims.voxels() + dims.index(x, y, z)];
    }
    const float* channel(uint32_t c) const { return data.data() + size_t(c) * dims.voxels(); }
    float* channel(uint32_t c) { return data.data() + size_t(c) * dims.voxels(); }

    void validate() const;  // shape/finiteness invariants
};

// Dense integer label field. schema_id records which LabelSchema the ids are
// drawn from; it may be empty for a volume read from a bare .vxv file.
struct LabelVolume {
    Dims dims;
    std::vector<uint16_t> labels;
    std::string schema_id;

    LabelVolume() = default;
    LabelVolume(Dims d, uint16_t fill = 0, std::string schema = {});

    uint16_t& at(uint32_t x, uint32_t y, uint32_t z) { return labels[dims.index(x, y, z)]; }
    uint16_t at(uint32_t x, uint32_t y, uint32_t z) const { return labels[dims.index(x, y, z)]; }

    void validate() const;
    void validate_against(const LabelSchema& schema) const;  // every voxel label in schema
};

struct MaskVolume {
    Dims dims;
    std::vector<uint8_t> mask;

    MaskVolume() = default;
    MaskVolume(Dims d, uint8_t fill = 0);

    uint8_t& at(uint32_t x, uint32_t y, uint32_t z) { return mask[dims.index(x, y, z)]; }
    uint8_t at(uint32_t x, uint32_t y, uint32_t z) const { return mask[dims.index(x, y, z)]; }

    uint64_t count() const;  // number of set voxels
    void validate() const;
};

using Volume = std::variant<VoxelGrid, LabelVolume>;

// VXV1 container (little-endian, 24-byte header):
//   magic "VXV1" | kind u8 (0 = scalar f32, 1 = label u16) | channels u32 |
//   nx u32 | ny u32 | nz u32 | reserved 3x u8 zero | payload
Volume read_vxv(const std::string& path);
void write_vxv(const VoxelGrid& grid, const std::string& path);
void write_vxv(const LabelVolume& labels, const std::string& path);

VoxelGrid read_vxv_grid(const std::string& path);    // Error(format) if the file holds labels
LabelVolume read_vxv_labels(const std::string& path);

// mask = 1 exactly where the voxel label is in label_set. When a schema is
// given, every id in label_set must exist in it (Error(schema) otherwise).
MaskVolume labels_to_mask(const LabelVolume& lv, const std::vector<uint16_t>& label_set,
                          const LabelSchema* schema = nullptr);

enum class Axis { axial, coronal, sagittal };

Axis axis_from_string(const std::string& s);
std::string axis_name(Axis axis);
uint32_t axis_extent(const Dims& dims, Axis axis);

template <typename T>
struct Slice2D {
    uint32_t width = 0, height = 0;
    std::vector<T> values;

    T at(uint32_t col, uint32_t row) const { return values[size_t(row) * width + col]; }
};

// Copies one plane: axial fixes z (x across, y down), coronal fixes y
// (x across, z down), sagittal fixes x (y across, z down).
Slice2D<float> extract_slice(const VoxelGrid& grid, Axis axis, uint32_t index, uint32_t channel = 0);
Slice2D<uint16_t> extract_slice(const LabelVolume& labels, Axis axis, uint32_t index);

}  // namespace uqseg
