#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uqseg/labelspace.hpp"
#include "uqseg/voxvol.hpp"

namespace uqseg {

struct Rgb {
    uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

// Deterministic label coloring: golden-angle hue sequence keyed by label id,
// tumor labels fixed to yellow, background to black.
struct Palette {
    std::map<uint16_t, Rgb> colors;

    Rgb color(uint16_t label) const;
};

Palette make_palette(const LabelSchema& schema);

// Composite-region coloring for ground-truth / prediction panels on
// CM-style schemas: whole tumor cyan, tumor core purple, enhancing green.
// Schemas without those groups fall back to the anatomy palette.
Palette panel_palette(const LabelSchema& schema);

struct RgbImage {
    uint32_t width = 0, height = 0;
    std::vector<uint8_t> pixels;  // rgb triplets, row-major

    Rgb at(uint32_t col, uint32_t row) const {
        const size_t i = (size_t(row) * width + col) * 3;
        return {pixels[i], pixels[i + 1], pixels[i + 2]};
    }
};

// Binary PPM (P6), byte-deterministic.
void write_ppm(const RgbImage& img, const std::string& path);
RgbImage read_ppm(const std::string& path);

struct OverlaySpec {
    Axis axis = Axis::axial;
    uint32_t index = 0;
    // restrict the red hue to voxels the prediction labels as tumor
    bool mask_to_labels = false;
};

// Per pixel: base = palette color of the label, u = clamp(unc, 0, 1),
// out = (1-u) * base + u * (255,0,0) with half-up rounding per channel.
RgbImage render_slice(const LabelVolume& labels, const VoxelGrid& unc, const OverlaySpec& spec,
                      const Palette& palette);

struct RenderCaseOptions {
    std::vector<Axis> axes{Axis::axial};
    int index = -1;  // -1 = central slice per axis
    bool overlay_mask = false;
};

// Reads gt.vxv / pred.vxv / unc.vxv (+ schema.json) from case_dir and emits
// per-axis panels case_<axis>_{gt,pred,error,overlay}.ppm into out_dir.
std::vector<std::string> render_case(const std::string& case_dir, const std::string& out_dir,
                                     const RenderCaseOptions& opts);

}  // namespace uqseg
