#include <map>
#include <set>

#include "doctest.h"
#include "test_helpers.hpp"
#include "uqseg/error.hpp"
#include "uqseg/synthdata.hpp"

using namespace uqseg;
using namespace uqseg::test;

namespace {

PhantomConfig cm_config(uint64_t seed) {
    PhantomConfig cfg;
    cfg.dims = {24, 24, 24};
    cfg.modalities = 4;
    cfg.schema = builtin_schema(SchemaKind::CM);
    cfg.tumor_count_range = {1, 2};
    cfg.tumor_radius_range = {3.0, 6.0};
    cfg.noise_sigma = 0.08;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("generate_phantom is deterministic in the seed") {
    const PhantomConfig cfg = cm_config(99);
    const auto [img1, lab1] = generate_phantom(cfg);
    const auto [img2, lab2] = generate_phantom(cfg);
    REQUIRE(img1.data == img2.data);
    REQUIRE(lab1.labels == lab2.labels);

    PhantomConfig other = cfg;
    other.seed = 100;
    const auto [img3, lab3] = generate_phantom(other);
    REQUIRE(img1.data != img3.data);
}

TEST_CASE("tumor_count_range [1,1] produces at least one tumor voxel") {
    PhantomConfig cfg = cm_config(3);
    cfg.tumor_count_range = {1, 1};
    const auto [img, lab] = generate_phantom(cfg);
    uint64_t tumor_voxels = 0;
    for (uint16_t l : lab.labels)
        if (l != 0) ++tumor_voxels;
    REQUIRE(tumor_voxels > 0);
}

TEST_CASE("noiseless phantoms give identical intensities for equal labels") {
    PhantomConfig cfg = cm_config(17);
    cfg.noise_sigma = 0.0;
    const auto [img, lab] = generate_phantom(cfg);
    for (uint32_t c = 0; c < img.channels; ++c) {
        std::map<uint16_t, float> seen;
        for (size_t i = 0; i < lab.labels.size(); ++i) {
            const float v = img.channel(c)[i];
            const auto [it, fresh] = seen.emplace(lab.labels[i], v);
            if (!fresh) REQUIRE(it->second == v);
        }
    }
}

TEST_CASE("phantom labels always come from the schema") {
    for (SchemaKind kind : {SchemaKind::CM, SchemaKind::UM}) {
        PhantomConfig cfg = cm_config(23);
        cfg.schema = builtin_schema(kind);
        cfg.modalities = kind == SchemaKind::UM ? 1 : 4;
        const auto [img, lab] = generate_phantom(cfg);
        lab.validate_against(cfg.schema);  // throws on an unknown label
    }
}

TEST_CASE("UM phantoms draw every region group somewhere") {
    PhantomConfig cfg = cm_config(77);
    cfg.schema = builtin_schema(SchemaKind::UM);
    cfg.modalities = 1;
    cfg.dims = {32, 32, 32};
    const auto [img, lab] = generate_phantom(cfg);
    std::set<uint16_t> seen(lab.labels.begin(), lab.labels.end());
    // cortical, subcortical and tumor labels all present
    bool any_cortical = false, any_subcortical = false, any_tumor = false;
    for (uint16_t id : resolve_group(cfg.schema, "cortical")) any_cortical |= seen.count(id) > 0;
    for (uint16_t id : resolve_group(cfg.schema, "subcortical"))
        any_subcortical |= seen.count(id) > 0;
    for (uint16_t id : resolve_group(cfg.schema, "tumor_all")) any_tumor |= seen.count(id) > 0;
    REQUIRE(any_cortical);
    REQUIRE(any_subcortical);
    REQUIRE(any_tumor);
}

TEST_CASE("tumors stay inside the brain interior") {
    // tumor voxels must never touch the volume boundary (the brain ellipsoid
    // is strictly interior by construction)
    for (uint64_t seed = 0; seed < 20; ++seed) {
        PhantomConfig cfg = cm_config(seed);
        cfg.tumor_count_range = {2, 3};
        const auto [img, lab] = generate_phantom(cfg);
        const Dims d = lab.dims;
        for (uint32_t z = 0; z < d.nz; ++z)
            for (uint32_t y = 0; y < d.ny; ++y)
                for (uint32_t x = 0; x < d.nx; ++x) {
                    if (lab.at(x, y, z) == 0) continue;
                    REQUIRE(x > 0);
                    REQUIRE(y > 0);
                    REQUIRE(z > 0);
                    REQUIRE(x < d.nx - 1);
                    REQUIRE(y < d.ny - 1);
                    REQUIRE(z < d.nz - 1);
                }
    }
}

TEST_CASE("split_dataset arithmetic and disjointness") {
    SUBCASE("10 cases at 0.2 split 8/2") {
        const auto refs = split_dataset(7, 10, 0.2);
        int train = 0, val = 0;
        for (const auto& r : refs) (r.validation ? val : train)++;
        REQUIRE(train == 8);
        REQUIRE(val == 2);
    }

    SUBCASE("5 cases at 0.2 split 4/1") {
        const auto refs = split_dataset(7, 5, 0.2);
        int val = 0;
        for (const auto& r : refs) val += r.validation;
        REQUIRE(val == 1);
    }

    SUBCASE("case seeds follow seed + i and ids never repeat") {
        const auto refs = split_dataset(100, 6, 0.5);
        std::set<std::string> ids;
        for (size_t i = 0; i < refs.size(); ++i) {
            REQUIRE(refs[i].seed == 100 + i);
            ids.insert(refs[i].id);
        }
        REQUIRE(ids.size() == refs.size());
    }

    SUBCASE("degenerate splits are config errors") {
        REQUIRE_THROWS_AS(split_dataset(1, 1, 0.2), Error);   // too few cases
        REQUIRE_THROWS_AS(split_dataset(1, 2, 0.1), Error);   // empty validation
        REQUIRE_THROWS_AS(split_dataset(1, 2, 0.95), Error);  // empty train
        REQUIRE_THROWS_AS(split_dataset(1, 10, 0.0), Error);
        REQUIRE_THROWS_AS(split_dataset(1, 10, 1.0), Error);
    }
}

TEST_CASE("schema/config mismatch is a config error") {
    PhantomConfig cfg = cm_config(1);
    cfg.schema = builtin_schema(SchemaKind::UM);
    cfg.tumor_style = TumorStyle::subregions;  // CM structure under a UM schema
    REQUIRE_THROWS_AS(generate_phantom(cfg), Error);
}

TEST_CASE("dataset writing and loading round trip") {
    const std::string dir = scratch_dir("synth_ds");
    PhantomConfig cfg = cm_config(42);
    write_dataset(cfg, 5, 0.2, dir);

    REQUIRE(std::filesystem::exists(dir + "/manifest.json"));
    REQUIRE(std::filesystem::exists(dir + "/schema.json"));
    REQUIRE(std::filesystem::exists(dir + "/case_0000_img.vxv"));
    REQUIRE(std::filesystem::exists(dir + "/case_0004_lab.vxv"));

    const Dataset ds = load_dataset(dir);
    REQUIRE(ds.train.size() == 4);
    REQUIRE(ds.val.size() == 1);
    REQUIRE(ds.modalities == 4);
    REQUIRE(ds.schema.schema_id == "cm");

    // loaded volumes equal regenerated ones
    const Dataset mem = generate_dataset(cfg, 5, 0.2);
    for (size_t i = 0; i < ds.train.size(); ++i) {
        REQUIRE(ds.train[i].image.data == mem.train[i].image.data);
        REQUIRE(ds.train[i].labels.labels == mem.train[i].labels.labels);
    }
}

TEST_CASE("dataset writes are byte-deterministic") {
    const std::string a = scratch_dir("synth_det_a");
    const std::string b = scratch_dir("synth_det_b");
    const PhantomConfig cfg = cm_config(7);
    write_dataset(cfg, 4, 0.25, a);
    write_dataset(cfg, 4, 0.25, b);
    for (const char* name : {"manifest.json", "schema.json", "case_0000_img.vxv",
                             "case_0003_lab.vxv"})
        REQUIRE(read_bytes(a + "/" + name) == read_bytes(b + "/" + name));
}
