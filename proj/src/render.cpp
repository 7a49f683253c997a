#include "uqseg/render.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "uqseg/error.hpp"
#include "uqseg/unctarget.hpp"

namespace fs = std::filesystem;

namespace uqseg {

Rgb Palette::color(uint16_t label) const {
    const auto it = colors.find(label);
    return it == colors.end() ? Rgb{0, 0, 0} : it->second;
}

namespace {

Rgb hsv_to_rgb(double h_deg, double s, double v) {
    const double c = v * s;
    const double hp = h_deg / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    auto to_byte = [](double f) { return uint8_t(std::floor(f * 255.0 + 0.5)); };
    return {to_byte(r + m), to_byte(g + m), to_byte(b + m)};
}

constexpr Rgb kRed{255, 0, 0};
constexpr Rgb kYellow{255, 255, 0};

uint8_t blend_channel(uint8_t base, uint8_t top, double u) {
    return uint8_t(std::floor((1.0 - u) * base + u * top + 0.5));
}

Rgb blend(Rgb base, Rgb top, double u) {
    return {blend_channel(base.r, top.r, u), blend_channel(base.g, top.g, u),
            blend_channel(base.b, top.b, u)};
}

}  // namespace

Palette make_palette(const LabelSchema& schema) {
    Palette p;
    p.colors[0] = {0, 0, 0};
    std::vector<uint8_t> tumor(size_t(schema.max_label()) + 1, 0);
    for (uint16_t id : tumor_labels(schema)) tumor[id] = 1;
    for (const auto& e : schema.entries) {
        if (tumor[e.id]) {
            p.colors[e.id] = kYellow;
        } else {
            const double hue = std::fmod(100.0 + 137.50776405003785 * double(e.id), 360.0);
            p.colors[e.id] = hsv_to_rgb(hue, 0.62, 0.86);
        }
    }
    return p;
}

Palette panel_palette(const LabelSchema& schema) {
    if (!schema.has_group("whole_tumor") || !schema.has_group("tumor_core") ||
        !schema.has_group("enhancing_tumor"))
        return make_palette(schema);
    Palette p;
    p.colors[0] = {0, 0, 0};
    for (uint16_t id : resolve_group(schema, "whole_tumor")) p.colors[id] = {0, 255, 255};
    for (uint16_t id : resolve_group(schema, "tumor_core")) p.colors[id] = {160, 32, 240};
    for (uint16_t id : resolve_group(schema, "enhancing_tumor")) p.colors[id] = {0, 200, 0};
    return p;
}

void write_ppm(const RgbImage& img, const std::string& path) {
    require(img.pixels.size() == size_t(img.width) * img.height * 3, ErrKind::length,
            "ppm: pixel buffer does not match dimensions");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrKind::io, "cannot write image: " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
    require(out.good(), ErrKind::io, "short write on image: " + path);
}

RgbImage read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrKind::io, "cannot open image: " + path);
    std::string magic;
    in >> magic;
    require(magic == "P6", ErrKind::format, path + ": not a binary PPM");
    RgbImage img;
    uint32_t maxval = 0;
    in >> img.width >> img.height >> maxval;
    require(maxval == 255, ErrKind::format, path + ": unsupported max value");
    in.get();  // single whitespace after the header
    img.pixels.resize(size_t(img.width) * img.height * 3);
    in.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
    require(in.gcount() == std::streamsize(img.pixels.size()), ErrKind::length,
            path + ": truncated pixel data");
    return img;
}

RgbImage render_slice(const LabelVolume& labels, const VoxelGrid& unc, const OverlaySpec& spec,
                      const Palette& palette) {
    require(labels.dims == unc.dims, ErrKind::shape, "render_slice: label/uncertainty dims differ");
    require(unc.channels == 1, ErrKind::shape, "render_slice: uncertainty grid must have one channel");
    const Slice2D<uint16_t> lab = extract_slice(labels, spec.axis, spec.index);
    const Slice2D<float> u = extract_slice(unc, spec.axis, spec.index);
    RgbImage img;
    img.width = lab.width;
    img.height = lab.height;
    img.pixels.resize(size_t(img.width) * img.height * 3);
    for (uint32_t row = 0; row < img.height; ++row)
        for (uint32_t col = 0; col < img.width; ++col) {
            const uint16_t label = lab.at(col, row);
            const Rgb base = palette.color(label);
            double uv = std::clamp(double(u.at(col, row)), 0.0, 1.0);
            if (spec.mask_to_labels && label == 0) uv = 0.0;
            const Rgb out = blend(base, kRed, uv);
            const size_t i = (size_t(row) * img.width + col) * 3;
            img.pixels[i] = out.r;
            img.pixels[i + 1] = out.g;
            img.pixels[i + 2] = out.b;
        }
    return img;
}

namespace {

RgbImage render_error_panel(const ErrorMap& err, Axis axis, uint32_t index) {
    MaskVolume copy = err;
    const Slice2D<uint16_t> plane = [&] {
        LabelVolume as_labels(copy.dims);
        for (size_t i = 0; i < copy.mask.size(); ++i) as_labels.labels[i] = copy.mask[i];
        return extract_slice(as_labels, axis, index);
    }();
    RgbImage img;
    img.width = plane.width;
    img.height = plane.height;
    img.pixels.resize(size_t(img.width) * img.height * 3);
    constexpr Rgb certain{0, 0, 176};
    for (uint32_t row = 0; row < img.height; ++row)
        for (uint32_t col = 0; col < img.width; ++col) {
            const Rgb c = plane.at(col, row) ? kRed : certain;
            const size_t i = (size_t(row) * img.width + col) * 3;
            img.pixels[i] = c.r;
            img.pixels[i + 1] = c.g;
            img.pixels[i + 2] = c.b;
        }
    return img;
}

}  // namespace

std::vector<std::string> render_case(const std::string& case_dir, const std::string& out_dir,
                                     const RenderCaseOptions& opts) {
    const auto need = [&](const std::string& name) {
        const fs::path p = fs::path(case_dir) / name;
        require(fs::exists(p), ErrKind::io, "render: missing " + p.string());
        return p.string();
    };
    const LabelVolume gt = read_vxv_labels(need("gt.vxv"));
    const LabelVolume pred = read_vxv_labels(need("pred.vxv"));
    const VoxelGrid unc = read_vxv_grid(need("unc.vxv"));
    const LabelSchema schema = load_schema(need("schema.json"));
    require(gt.dims == pred.dims && gt.dims == unc.dims, ErrKind::shape,
            "render: case volumes disagree on dims");

    const Palette anatomy = make_palette(schema);
    const Palette panels = panel_palette(schema);
    const ErrorMap err = error_map(pred, gt, tumor_labels(schema));
    const VoxelGrid zero_unc(gt.dims, 1, 0.0f);

    fs::create_directories(out_dir);
    std::vector<std::string> written;
    for (Axis axis : opts.axes) {
        const uint32_t extent = axis_extent(gt.dims, axis);
        const uint32_t index = opts.index >= 0 ? uint32_t(opts.index) : extent / 2;
        require(index < extent, ErrKind::usage, "render: slice index out of range");

        OverlaySpec flat{axis, index, false};
        OverlaySpec overlay{axis, index, opts.overlay_mask};
        const std::string prefix = (fs::path(out_dir) / ("case_" + axis_name(axis))).string();

        write_ppm(render_slice(gt, zero_unc, flat, panels), prefix + "_gt.ppm");
        write_ppm(render_slice(pred, zero_unc, flat, panels), prefix + "_pred.ppm");
        write_ppm(render_error_panel(err, axis, index), prefix + "_error.ppm");
        write_ppm(render_slice(pred, unc, overlay, anatomy), prefix + "_overlay.ppm");
        written.push_back(prefix + "_gt.ppm");
        written.push_back(prefix + "_pred.ppm");
        written.push_back(prefix + "_error.ppm");
        written.push_back(prefix + "_overlay.ppm");
    }
    return written;
}

}  // namespace uqseg
