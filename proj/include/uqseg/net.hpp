#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uqseg/tensor.hpp"
#include "uqseg/voxvol.hpp"

namespace uqseg {

struct NetConfig {
    uint32_t in_channels = 1;
    uint32_t num_classes = 2;  // includes background
    int depth = 3;             // encoder levels
    int base_width = 8;        // channels at the top level, doubling per level
    uint64_t seed = 0;

    void validate() const;
    int downsample_factor() const { return 1 << (depth - 1); }
};

enum class Part { trunk, seg_head, unc_head };

std::string part_name(Part p);
Part part_from_string(const std::string& s);

struct ConvSpec {
    std::string name;
    Part part = Part::trunk;
    int co = 0, ci = 0;
    int k = 3;       // kernel edge (3 for trunk convs, 1 for heads)
    int stride = 1;  // 2 for downsampling convs
    size_t weight_count() const { return size_t(co) * ci * k * k * k; }
};

struct ConvParam {
    ConvSpec spec;
    std::vector<double> w;  // (co, ci, kz, ky, kx)
    std::vector<double> b;  // (co)
};

// Named weight tensors partitioned into trunk / seg_head / unc_head. Values
// are kept exactly representable in f32 so checkpoints round-trip bit-exactly.
struct Parameters {
    NetConfig cfg;
    std::vector<ConvParam> convs;

    size_t flat_size() const;
    double flat_get(size_t i) const;
    void flat_add(size_t i, double delta);  // exact double add, no f32 rounding
    Part flat_part(size_t i) const;
};

// Per-tensor gradient buffers indexed like Parameters::convs.
struct Gradients {
    std::vector<std::vector<double>> w;
    std::vector<std::vector<double>> b;

    void init_like(const Parameters& p);
    void zero();
    void add_scaled(const Gradients& other, double scale);
    double flat_get(const Parameters& p, size_t i) const;
};

// Everything forward() computed, retained for backward(). features is the
// final decoder activation both heads read.
struct ForwardState {
    Tensor input;
    std::vector<Tensor> enc_pre0, enc_post0, enc_pre1, enc_post1;
    std::vector<Tensor> down_pre, down_post;
    std::vector<Tensor> ups, up_pre, up_post, cat, dec_pre0, dec_post0, dec_pre1, dec_post1;
    Tensor features;
    Tensor seg_logits;
    Tensor unc_logit;
    Tensor unc_prob;
};

struct NetOutput {
    VoxelGrid seg_logits;
    VoxelGrid unc_logit;
    VoxelGrid unc_prob;
};

// Deterministic in cfg.seed: He-scaled normal weights, zero biases.
Parameters init_params(const NetConfig& cfg);

// Encoder: two 3x3x3 conv+ReLU per level, stride-2 conv doubling width
// between levels. Decoder: nearest x2 upsample + conv, skip concat, two
// conv+ReLU. Heads: parallel 1x1x1 convs; the uncertainty logit passes
// through a logistic.
ForwardState forward(const Parameters& params, const Tensor& image);
ForwardState forward(const Parameters& params, const VoxelGrid& image);

NetOutput output_of(const ForwardState& state);

// Gradients of a loss given d(loss)/d(seg_logits) and d(loss)/d(unc_prob).
// The uncertainty path stops at the feature boundary: d_unc_prob reaches the
// unc_head weights only, never the trunk or seg_head. Either gradient input
// may be empty (treated as zero).
Gradients backward(const Parameters& params, const ForwardState& state,
                   const Tensor& d_seg_logits, const Tensor& d_unc_prob);

// The uncertainty head alone on a frozen feature tensor, as the uncertainty
// loss sees it during training.
Tensor unc_head_forward(const Parameters& params, const Tensor& features);

// Per-voxel argmax over logit channels (ties break toward the lower id).
LabelVolume argmax_labels(const Tensor& seg_logits, const std::string& schema_id = {});

// Checkpoint: one VXV1 scalar volume per tensor plus an index entry giving
// name, partition tag and shape. save writes <dir>/<name>.vxv files.
struct TensorIndexEntry {
    std::string name;
    Part part = Part::trunk;
    std::vector<uint32_t> shape;
    std::string file;
};

void save_params(const Parameters& params, const std::string& dir);
Parameters load_params(const NetConfig& cfg, const std::string& dir);

}  // namespace uqseg
