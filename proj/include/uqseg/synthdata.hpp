#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uqseg/labelspace.hpp"
#include "uqseg/voxvol.hpp"

namespace uqseg {

enum class TumorStyle {
    auto_detect,  // subregions when the schema has CM-style groups, else single
    subregions,   // necrotic core / enhancing rim / edema halo spheres
    single,       // one combined tumor label
};

struct PhantomConfig {
    Dims dims{32, 32, 32};
    uint32_t modalities = 4;
    LabelSchema schema;
    std::array<int, 2> tumor_count_range{1, 2};
    std::array<double, 2> tumor_radius_range{3.0, 7.0};
    double noise_sigma = 0.08;
    // 0 = auto: max(3 * noise_sigma, 0.05), keeping class means separable
    double intensity_spacing = 0.0;
    // scales the contrast between the outermost tumor subregion (the halo
    // that forms the whole-tumor boundary) and the background rung; < 1
    // keeps the boundary ambiguous so segmentation errors persist there
    double boundary_contrast = 1.0;
    TumorStyle tumor_style = TumorStyle::auto_detect;
    uint64_t seed = 0;

    void validate() const;
    double spacing() const;
    TumorStyle resolved_style() const;
};

// Deterministic in cfg.seed. Healthy anatomy (when the schema declares
// cortical/subcortical groups) is built from an ellipsoidal shell split into
// angular sectors; tumors are spheres overwriting healthy labels. Image
// channels carry per-label mean intensity plus Gaussian noise.
std::pair<VoxelGrid, LabelVolume> generate_phantom(const PhantomConfig& cfg);

struct CaseRef {
    std::string id;
    uint64_t seed = 0;
    bool validation = false;
};

// Case i gets seed cfg.seed + i; the final round(split_fraction * n_cases)
// cases form the validation split. Error(config) when either side is empty.
std::vector<CaseRef> split_dataset(uint64_t seed, int n_cases, double split_fraction);

struct CaseData {
    std::string id;
    VoxelGrid image;
    LabelVolume labels;
};

struct Dataset {
    LabelSchema schema;
    uint32_t modalities = 0;
    Dims dims;
    std::vector<CaseData> train;
    std::vector<CaseData> val;
};

// In-memory dataset for tests and the trainer.
Dataset generate_dataset(const PhantomConfig& cfg, int n_cases, double split_fraction);

// CLI-facing: writes case_XXXX_img.vxv / case_XXXX_lab.vxv, schema.json and
// manifest.json into out_dir.
void write_dataset(const PhantomConfig& cfg, int n_cases, double split_fraction,
                   const std::string& out_dir);

Dataset load_dataset(const std::string& dir);

}  // namespace uqseg
