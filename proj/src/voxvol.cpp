#include "uqseg/voxvol.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "uqseg/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "VXV1 I/O assumes a little-endian host");

namespace uqseg {

std::string to_string(const Dims& d) {
    return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

namespace {

void check_dims(const Dims& d) {
    require(d.nx >= 1 && d.ny >= 1 && d.nz >= 1, ErrKind::shape,
            "dims must be positive, got " + to_string(d));
    // product must fit a 64-bit count including the channel factor
    require(uint64_t(d.nx) <= (uint64_t(1) << 21) && uint64_t(d.ny) <= (uint64_t(1) << 21) &&
                uint64_t(d.nz) <= (uint64_t(1) << 21),
            ErrKind::shape, "dims too large: " + to_string(d));
}

}  // namespace

VoxelGrid::VoxelGrid(Dims d, uint32_t ch, float fill) : dims(d), channels(ch) {
    check_dims(d);
    require(ch >= 1, ErrKind::shape, "voxel grid needs at least one channel");
    data.assign(size_t(ch) * d.voxels(), fill);
}

void VoxelGrid::validate() const {
    check_dims(dims);
    require(channels >= 1, ErrKind::shape, "voxel grid needs at least one channel");
    require(data.size() == size_t(channels) * dims.voxels(), ErrKind::length,
            "voxel grid data length " + std::to_string(data.size()) + " != channels*voxels");
    for (float v : data)
        require(std::isfinite(v), ErrKind::data, "voxel grid contains a non-finite value");
}

LabelVolume::LabelVolume(Dims d, uint16_t fill, std::string schema) : dims(d), schema_id(std::move(schema)) {
    check_dims(d);
    labels.assign(d.voxels(), fill);
}

void LabelVolume::validate() const {
    check_dims(dims);
    require(labels.size() == dims.voxels(), ErrKind::length,
            "label volume length " + std::to_string(labels.size()) + " != voxel count");
}

void LabelVolume::validate_against(const LabelSchema& schema) const {
    validate();
    std::vector<uint8_t> known(size_t(schema.max_label()) + 1, 0);
    known[0] = 1;
    for (const auto& e : schema.entries) known[e.id] = 1;
    for (uint16_t l : labels)
        require(l < known.size() && known[l], ErrKind::schema,
                "label " + std::to_string(l) + " not in schema '" + schema.schema_id + "'");
}

MaskVolume::MaskVolume(Dims d, uint8_t fill) : dims(d) {
    check_dims(d);
    mask.assign(d.voxels(), fill);
}

uint64_t MaskVolume::count() const {
    uint64_t n = 0;
    for (uint8_t m : mask) n += m;
    return n;
}

void MaskVolume::validate() const {
    check_dims(dims);
    require(mask.size() == dims.voxels(), ErrKind::length, "mask length != voxel count");
    for (uint8_t m : mask)
        require(m == 0 || m == 1, ErrKind::data, "mask value outside {0,1}");
}

// ---------------------------------------------------------------------------
// VXV1 container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'V', 'X', 'V', '1'};
constexpr uint8_t kKindScalar = 0;
constexpr uint8_t kKindLabel = 1;
constexpr size_t kHeaderSize = 24;

struct Header {
    uint8_t kind = 0;
    uint32_t channels = 0;
    Dims dims;
};

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
    buf.push_back(uint8_t(v & 0xff));
    buf.push_back(uint8_t((v >> 8) & 0xff));
    buf.push_back(uint8_t((v >> 16) & 0xff));
    buf.push_back(uint8_t((v >> 24) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
    return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

std::vector<uint8_t> encode_header(const Header& h) {
    std::vector<uint8_t> buf;
    buf.reserve(kHeaderSize);
    buf.insert(buf.end(), kMagic, kMagic + 4);
    buf.push_back(h.kind);
    put_u32(buf, h.channels);
    put_u32(buf, h.dims.nx);
    put_u32(buf, h.dims.ny);
    put_u32(buf, h.dims.nz);
    buf.insert(buf.end(), {0, 0, 0});
    return buf;
}

Header decode_header(const uint8_t* buf, size_t len, const std::string& path) {
    require(len >= kHeaderSize, ErrKind::length, path + ": file shorter than VXV1 header");
    require(std::memcmp(buf, kMagic, 4) == 0, ErrKind::format, path + ": bad magic, not a VXV1 file");
    Header h;
    h.kind = buf[4];
    require(h.kind == kKindScalar || h.kind == kKindLabel, ErrKind::format,
            path + ": unknown VXV1 kind " + std::to_string(h.kind));
    h.channels = get_u32(buf + 5);
    h.dims = {get_u32(buf + 9), get_u32(buf + 13), get_u32(buf + 17)};
    require(buf[21] == 0 && buf[22] == 0 && buf[23] == 0, ErrKind::format,
            path + ": reserved header bytes not zero");
    return h;
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrKind::io, "cannot open file: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(!in.bad(), ErrKind::io, "read failure on: " + path);
    return buf;
}

void write_file(const std::string& path, const std::vector<uint8_t>& header,
                const void* payload, size_t payload_bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrKind::io, "cannot write file: " + path);
    out.write(reinterpret_cast<const char*>(header.data()), std::streamsize(header.size()));
    out.write(static_cast<const char*>(payload), std::streamsize(payload_bytes));
    out.flush();
    require(out.good(), ErrKind::io, "short write on: " + path);
}

}  // namespace

Volume read_vxv(const std::string& path) {
    const std::vector<uint8_t> buf = read_file(path);
    const Header h = decode_header(buf.data(), buf.size(), path);
    check_dims(h.dims);
    const uint8_t* payload = buf.data() + kHeaderSize;
    const size_t payload_len = buf.size() - kHeaderSize;

    if (h.kind == kKindScalar) {
        require(h.channels >= 1, ErrKind::format, path + ": scalar volume with zero channels");
        const uint64_t n = uint64_t(h.channels) * h.dims.voxels();
        require(payload_len == n * 4, ErrKind::length,
                path + ": payload holds " + std::to_string(payload_len / 4) + " floats, expected " +
                    std::to_string(n));
        VoxelGrid g;
        g.dims = h.dims;
        g.channels = h.channels;
        g.data.resize(n);
        std::memcpy(g.data.data(), payload, n * 4);
        for (float v : g.data)
            require(std::isfinite(v), ErrKind::data, path + ": payload contains a non-finite float");
        return g;
    }

    require(h.channels == 1, ErrKind::format, path + ": label volume must have exactly one channel");
    const uint64_t n = h.dims.voxels();
    require(payload_len == n * 2, ErrKind::length,
            path + ": payload holds " + std::to_string(payload_len / 2) + " labels, expected " +
                std::to_string(n));
    LabelVolume lv;
    lv.dims = h.dims;
    lv.labels.resize(n);
    std::memcpy(lv.labels.data(), payload, n * 2);
    return lv;
}

void write_vxv(const VoxelGrid& grid, const std::string& path) {
    grid.validate();
    const auto header = encode_header({kKindScalar, grid.channels, grid.dims});
    write_file(path, header, grid.data.data(), grid.data.size() * 4);
}

void write_vxv(const LabelVolume& labels, const std::string& path) {
    labels.validate();
    const auto header = encode_header({kKindLabel, 1, labels.dims});
    write_file(path, header, labels.labels.data(), labels.labels.size() * 2);
}

VoxelGrid read_vxv_grid(const std::string& path) {
    Volume v = read_vxv(path);
    require(std::holds_alternative<VoxelGrid>(v), ErrKind::format,
            path + ": expected a scalar volume, found labels");
    return std::get<VoxelGrid>(std::move(v));
}

LabelVolume read_vxv_labels(const std::string& path) {
    Volume v = read_vxv(path);
    require(std::holds_alternative<LabelVolume>(v), ErrKind::format,
            path + ": expected a label volume, found scalars");
    return std::get<LabelVolume>(std::move(v));
}

// ---------------------------------------------------------------------------
// Mask algebra and slicing
// ---------------------------------------------------------------------------

MaskVolume labels_to_mask(const LabelVolume& lv, const std::vector<uint16_t>& label_set,
                          const LabelSchema* schema) {
    if (schema) {
        for (uint16_t id : label_set)
            require(schema->has_label(id) && id != 0, ErrKind::schema,
                    "label " + std::to_string(id) + " not in schema '" + schema->schema_id + "'");
    }
    std::vector<uint8_t> in_set(65536, 0);
    for (uint16_t id : label_set) in_set[id] = 1;
    MaskVolume m(lv.dims);
    const size_t n = lv.labels.size();
    for (size_t i = 0; i < n; ++i) m.mask[i] = in_set[lv.labels[i]];
    return m;
}

Axis axis_from_string(const std::string& s) {
    if (s == "axial") return Axis::axial;
    if (s == "coronal") return Axis::coronal;
    if (s == "sagittal") return Axis::sagittal;
    fail(ErrKind::usage, "unknown axis '" + s + "' (expected axial, coronal or sagittal)");
}

std::string axis_name(Axis axis) {
    switch (axis) {
        case Axis::axial: return "axial";
        case Axis::coronal: return "coronal";
        case Axis::sagittal: return "sagittal";
    }
    return "?";
}

uint32_t axis_extent(const Dims& dims, Axis axis) {
    switch (axis) {
        case Axis::axial: return dims.nz;
        case Axis::coronal: return dims.ny;
        case Axis::sagittal: return dims.nx;
    }
    return 0;
}

namespace {

template <typename T, typename Fetch>
Slice2D<T> slice_plane(const Dims& dims, Axis axis, uint32_t index, Fetch fetch) {
    require(index < axis_extent(dims, axis), ErrKind::shape,
            "slice index " + std::to_string(index) + " out of range for axis " + axis_name(axis));
    Slice2D<T> s;
    switch (axis) {
        case Axis::axial:
            s.width = dims.nx;
            s.height = dims.ny;
            s.values.resize(size_t(s.width) * s.height);
            for (uint32_t y = 0; y < dims.ny; ++y)
                for (uint32_t x = 0; x < dims.nx; ++x)
                    s.values[size_t(y) * s.width + x] = fetch(x, y, index);
            break;
        case Axis::coronal:
            s.width = dims.nx;
            s.height = dims.nz;
            s.values.resize(size_t(s.width) * s.height);
            for (uint32_t z = 0; z < dims.nz; ++z)
                for (uint32_t x = 0; x < dims.nx; ++x)
                    s.values[size_t(z) * s.width + x] = fetch(x, index, z);
            break;
        case Axis::sagittal:
            s.width = dims.ny;
            s.height = dims.nz;
            s.values.resize(size_t(s.width) * s.height);
            for (uint32_t z = 0; z < dims.nz; ++z)
                for (uint32_t y = 0; y < dims.ny; ++y)
                    s.values[size_t(z) * s.width + y] = fetch(index, y, z);
            break;
    }
    return s;
}

}  // namespace

Slice2D<float> extract_slice(const VoxelGrid& grid, Axis axis, uint32_t index, uint32_t channel) {
    require(channel < grid.channels, ErrKind::shape,
            "channel " + std::to_string(channel) + " out of range");
    return slice_plane<float>(grid.dims, axis, index,
                              [&](uint32_t x, uint32_t y, uint32_t z) { return grid.at(channel, x, y, z); });
}

Slice2D<uint16_t> extract_slice(const LabelVolume& labels, Axis axis, uint32_t index) {
    return slice_plane<uint16_t>(labels.dims, axis, index,
                                 [&](uint32_t x, uint32_t y, uint32_t z) { return labels.at(x, y, z); });
}

}  // namespace uqseg
