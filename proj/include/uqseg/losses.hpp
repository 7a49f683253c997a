#pragma once

#include <cstdint>
#include <vector>

#include "uqseg/tensor.hpp"
#include "uqseg/unctarget.hpp"
#include "uqseg/voxvol.hpp"

namespace uqseg {

struct LossWeights {
    double lambda_rmsd = 0.1;
    double lambda_corr = 0.01;
    double epsilon = 1e-6;
};

// total = dce + lambda_rmsd * rmsd + lambda_corr * (1 - corr)
struct LossBreakdown {
    double dce = 0.0;
    double rmsd = 0.0;
    double corr = 0.0;
    double total = 0.0;
};

// ---------------------------------------------------------------------------
// Scalar kernels. The metrics module evaluates the same functions, so train
// and eval cannot drift apart.
// ---------------------------------------------------------------------------

// sqrt( sum_v M (U - E)^2 / (sum_v M + eps) )
template <typename T>
double rmsd_masked(const T* u, const T* e, const uint8_t* m, size_t n, double eps);

// Masked Pearson r with masked means; 0 when either masked variance is zero.
// Denominator is sqrt(var_u * var_e) + eps.
template <typename T>
double pearson_masked(const T* u, const T* e, const uint8_t* m, size_t n, double eps);

// Gradient variants accumulate d(value)/dU into du (du += scale * grad).
double rmsd_masked_grad(const double* u, const double* e, const uint8_t* m, size_t n, double eps,
                        double scale, double* du);
double pearson_masked_grad(const double* u, const double* e, const uint8_t* m, size_t n, double eps,
                           double scale, double* du);

// ---------------------------------------------------------------------------
// Segmentation loss: soft Dice over foreground classes plus mean voxel
// cross-entropy, both on softmax probabilities.
// ---------------------------------------------------------------------------

// foreground_classes lists the class indices entering the Dice mean
// (normally the schema's label ids). logits has num_classes channels.
double dice_ce(const Tensor& logits, const std::vector<uint16_t>& gt,
               const std::vector<uint16_t>& foreground_classes, double eps);

// Value plus gradient w.r.t. logits (dlogits is overwritten, same shape).
double dice_ce_grad(const Tensor& logits, const std::vector<uint16_t>& gt,
                    const std::vector<uint16_t>& foreground_classes, double eps, Tensor& dlogits);

// ---------------------------------------------------------------------------
// Spec-facing wrappers over float volumes.
// ---------------------------------------------------------------------------

double dice_ce_loss(const VoxelGrid& seg_logits, const LabelVolume& gt, const LabelSchema& schema,
                    double eps = 1e-6);

double rmsd_loss(const VoxelGrid& u, const UncertaintyTarget& e_target, const MaskVolume& m,
                 double eps);

double corr_coeff(const VoxelGrid& u, const UncertaintyTarget& e_target, const MaskVolume& m,
                  double eps);

LossBreakdown combined_loss(const VoxelGrid& seg_logits, const LabelVolume& gt,
                            const LabelSchema& schema, const VoxelGrid& u,
                            const UncertaintyTarget& e_target, const MaskVolume& m,
                            const LossWeights& weights);

double combine_total(double dce, double rmsd, double corr, const LossWeights& w);

extern template double rmsd_masked<float>(const float*, const float*, const uint8_t*, size_t, double);
extern template double rmsd_masked<double>(const double*, const double*, const uint8_t*, size_t, double);
extern template double pearson_masked<float>(const float*, const float*, const uint8_t*, size_t, double);
extern template double pearson_masked<double>(const double*, const double*, const uint8_t*, size_t, double);

}  // namespace uqseg
