#include <cstring>

#include "doctest.h"
#include "test_helpers.hpp"
#include "uqseg/error.hpp"
#include "uqseg/voxvol.hpp"

using namespace uqseg;
using namespace uqseg::test;

TEST_CASE("vxv round trip is bit-exact for random scalar and label volumes") {
    const std::string dir = scratch_dir("vxv_roundtrip");
    Rng rng(41);
    for (int trial = 0; trial < 25; ++trial) {
        const Dims d{uint32_t(1 + rng.below(6)), uint32_t(1 + rng.below(6)),
                     uint32_t(1 + rng.below(6))};
        const uint32_t ch = uint32_t(1 + rng.below(3));
        const VoxelGrid g = random_grid(rng, d, ch);
        const std::string path = dir + "/g.vxv";
        write_vxv(g, path);
        const VoxelGrid back = read_vxv_grid(path);
        REQUIRE(back.dims == g.dims);
        REQUIRE(back.channels == g.channels);
        REQUIRE(std::memcmp(back.data.data(), g.data.data(), g.data.size() * 4) == 0);

        const LabelVolume lv = random_labels(rng, d, 54);
        write_vxv(lv, path);
        const LabelVolume lback = read_vxv_labels(path);
        REQUIRE(lback.dims == lv.dims);
        REQUIRE(lback.labels == lv.labels);
    }
}

TEST_CASE("vxv writing is byte-deterministic") {
    const std::string dir = scratch_dir("vxv_determinism");
    Rng rng(7);
    const VoxelGrid g = random_grid(rng, {4, 4, 4}, 2);
    write_vxv(g, dir + "/a.vxv");
    write_vxv(g, dir + "/b.vxv");
    REQUIRE(read_bytes(dir + "/a.vxv") == read_bytes(dir + "/b.vxv"));
}

TEST_CASE("vxv header layout: 1x1x1 single float payload after 24-byte header") {
    const std::string dir = scratch_dir("vxv_header");
    VoxelGrid g({1, 1, 1}, 1, 0.5f);
    write_vxv(g, dir + "/one.vxv");
    const auto bytes = read_bytes(dir + "/one.vxv");
    REQUIRE(bytes.size() == 28);  // 24 header + one f32
    REQUIRE(bytes[0] == 'V');
    REQUIRE(bytes[1] == 'X');
    REQUIRE(bytes[2] == 'V');
    REQUIRE(bytes[3] == '1');
    REQUIRE(bytes[4] == 0);  // scalar kind
    // channels, nx, ny, nz all 1, little-endian
    for (size_t off : {5, 9, 13, 17}) {
        REQUIRE(bytes[off] == 1);
        REQUIRE(bytes[off + 1] == 0);
        REQUIRE(bytes[off + 2] == 0);
        REQUIRE(bytes[off + 3] == 0);
    }
    REQUIRE(bytes[21] == 0);
    REQUIRE(bytes[22] == 0);
    REQUIRE(bytes[23] == 0);
    float payload;
    std::memcpy(&payload, bytes.data() + 24, 4);
    REQUIRE(payload == 0.5f);
}

TEST_CASE("vxv read errors: magic, truncation, non-finite") {
    const std::string dir = scratch_dir("vxv_errors");
    VoxelGrid g({2, 2, 2}, 1, 1.0f);
    write_vxv(g, dir + "/ok.vxv");
    auto bytes = read_bytes(dir + "/ok.vxv");

    SUBCASE("bad magic is a format error") {
        auto bad = bytes;
        bad[0] = 'X';
        bad[1] = 'X';
        bad[2] = 'X';
        bad[3] = 'X';
        write_bytes(dir + "/bad_magic.vxv", bad);
        try {
            read_vxv(dir + "/bad_magic.vxv");
            FAIL("expected a format error");
        } catch (const Error& e) {
            REQUIRE(e.kind() == ErrKind::format);
        }
    }

    SUBCASE("truncated payload is a length error") {
        auto bad = bytes;
        bad.pop_back();
        write_bytes(dir + "/short.vxv", bad);
        try {
            read_vxv(dir + "/short.vxv");
            FAIL("expected a length error");
        } catch (const Error& e) {
            REQUIRE(e.kind() == ErrKind::length);
        }
    }

    SUBCASE("header declaring more voxels than the payload is a length error") {
        // header says 2x2x2x1 but only 7 floats follow
        auto bad = bytes;
        bad.resize(24 + 7 * 4);
        write_bytes(dir + "/seven.vxv", bad);
        try {
            read_vxv(dir + "/seven.vxv");
            FAIL("expected a length error");
        } catch (const Error& e) {
            REQUIRE(e.kind() == ErrKind::length);
        }
    }

    SUBCASE("non-finite float is a data error") {
        auto bad = bytes;
        const uint32_t inf = 0x7f800000u;
        std::memcpy(bad.data() + 24, &inf, 4);
        write_bytes(dir + "/inf.vxv", bad);
        try {
            read_vxv(dir + "/inf.vxv");
            FAIL("expected a data error");
        } catch (const Error& e) {
            REQUIRE(e.kind() == ErrKind::data);
        }
    }

    SUBCASE("unknown kind byte is a format error") {
        auto bad = bytes;
        bad[4] = 7;
        write_bytes(dir + "/kind.vxv", bad);
        try {
            read_vxv(dir + "/kind.vxv");
            FAIL("expected a format error");
        } catch (const Error& e) {
            REQUIRE(e.kind() == ErrKind::format);
        }
    }
}

TEST_CASE("writing an invalid volume is rejected before any I/O") {
    const std::string dir = scratch_dir("vxv_invalid");
    VoxelGrid g({2, 2, 2}, 1, 0.0f);
    g.channels = 0;  // breaks the invariant
    REQUIRE_THROWS_AS(write_vxv(g, dir + "/never.vxv"), Error);
    REQUIRE(!std::filesystem::exists(dir + "/never.vxv"));

    VoxelGrid nan_grid({2, 2, 2}, 1, 0.0f);
    nan_grid.data[3] = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS_AS(write_vxv(nan_grid, dir + "/nan.vxv"), Error);
}

TEST_CASE("unwritable path raises an io error") {
    VoxelGrid g({1, 1, 1}, 1, 0.0f);
    try {
        write_vxv(g, "/nonexistent_dir_zzz/out.vxv");
        FAIL("expected an io error");
    } catch (const Error& e) {
        REQUIRE(e.kind() == ErrKind::io);
    }
}

TEST_CASE("labels_to_mask basics") {
    LabelVolume lv({3, 1, 1});
    lv.labels = {0, 2, 3};

    SUBCASE("empty set gives an all-zero mask") {
        const MaskVolume m = labels_to_mask(lv, {});
        REQUIRE(m.count() == 0);
    }

    SUBCASE("tumor subregions combine into one binary mask") {
        const MaskVolume m = labels_to_mask(lv, {1, 2, 3});
        REQUIRE(m.mask == std::vector<uint8_t>{0, 1, 1});
    }

    SUBCASE("all nonzero labels on a volume with no background give all ones") {
        LabelVolume full({2, 2, 1});
        full.labels = {1, 2, 3, 1};
        const MaskVolume m = labels_to_mask(full, {1, 2, 3});
        REQUIRE(m.count() == 4);
    }

    SUBCASE("unknown label in the set is a schema error when a schema is given") {
        const LabelSchema schema = builtin_schema(SchemaKind::CM);
        try {
            labels_to_mask(lv, {9}, &schema);
            FAIL("expected a schema error");
        } catch (const Error& e) {
            REQUIRE(e.kind() == ErrKind::schema);
        }
    }
}

TEST_CASE("labels_to_mask union and disjointness properties") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const LabelVolume lv = random_labels(rng, {5, 4, 3}, 9);
        std::vector<uint16_t> s1, s2;
        for (uint16_t id = 1; id <= 9; ++id) {
            const auto bucket = rng.below(3);
            if (bucket == 0) s1.push_back(id);
            if (bucket == 1) s2.push_back(id);
        }
        std::vector<uint16_t> s_union = s1;
        s_union.insert(s_union.end(), s2.begin(), s2.end());
        const MaskVolume m1 = labels_to_mask(lv, s1);
        const MaskVolume m2 = labels_to_mask(lv, s2);
        const MaskVolume mu = labels_to_mask(lv, s_union);
        for (size_t i = 0; i < mu.mask.size(); ++i) {
            REQUIRE(mu.mask[i] == (m1.mask[i] | m2.mask[i]));
            REQUIRE((m1.mask[i] & m2.mask[i]) == 0);  // s1 and s2 are disjoint
        }
    }
}

TEST_CASE("extract_slice copies the requested plane") {
    VoxelGrid g({4, 4, 4}, 1);
    for (uint32_t z = 0; z < 4; ++z)
        for (uint32_t y = 0; y < 4; ++y)
            for (uint32_t x = 0; x < 4; ++x) g.at(0, x, y, z) = float(100 * z + 10 * y + x);

    SUBCASE("axial index 0 equals the z = 0 plane") {
        const auto s = extract_slice(g, Axis::axial, 0);
        REQUIRE(s.width == 4);
        REQUIRE(s.height == 4);
        for (uint32_t y = 0; y < 4; ++y)
            for (uint32_t x = 0; x < 4; ++x) REQUIRE(s.at(x, y) == doctest::Approx(10.0 * y + x));
    }

    SUBCASE("index == extent is a bounds error") {
        try {
            extract_slice(g, Axis::axial, 4);
            FAIL("expected a bounds error");
        } catch (const Error& e) {
            REQUIRE(e.kind() == ErrKind::shape);
        }
    }

    SUBCASE("a constant grid slices to a constant plane") {
        VoxelGrid c({3, 3, 3}, 1, 7.0f);
        for (Axis axis : {Axis::axial, Axis::coronal, Axis::sagittal}) {
            const auto s = extract_slice(c, axis, 1);
            for (float v : s.values) REQUIRE(v == 7.0f);
        }
    }

    SUBCASE("values are copied, not aliased") {
        auto s = extract_slice(g, Axis::axial, 0);
        s.values[0] = -999.0f;
        REQUIRE(g.at(0, 0, 0, 0) == 0.0f);
    }
}
