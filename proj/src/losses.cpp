#include "uqseg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "uqseg/error.hpp"

namespace uqseg {

// ---------------------------------------------------------------------------
// Masked RMSD
// ---------------------------------------------------------------------------

template <typename T>
double rmsd_masked(const T* u, const T* e, const uint8_t* m, size_t n, double eps) {
    double sum_sq = 0.0, cnt = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (!m[i]) continue;
        const double d = double(u[i]) - double(e[i]);
        sum_sq += d * d;
        cnt += 1.0;
    }
    return std::sqrt(sum_sq / (cnt + eps));
}

template double rmsd_masked<float>(const float*, const float*, const uint8_t*, size_t, double);
template double rmsd_masked<double>(const double*, const double*, const uint8_t*, size_t, double);

double rmsd_masked_grad(const double* u, const double* e, const uint8_t* m, size_t n, double eps,
                        double scale, double* du) {
    double sum_sq = 0.0, cnt = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (!m[i]) continue;
        const double d = u[i] - e[i];
        sum_sq += d * d;
        cnt += 1.0;
    }
    const double denom = cnt + eps;
    const double value = std::sqrt(sum_sq / denom);
    // d value / d u_i = m_i (u_i - e_i) / (denom * value); flat at value == 0
    if (value > 1e-300) {
        const double k = scale / (denom * value);
        for (size_t i = 0; i < n; ++i)
            if (m[i]) du[i] += k * (u[i] - e[i]);
    }
    return value;
}

// ---------------------------------------------------------------------------
// Masked Pearson correlation
// ---------------------------------------------------------------------------

namespace {

struct PearsonSums {
    double cnt = 0.0, mean_u = 0.0, mean_e = 0.0;
    double cov = 0.0, var_u = 0.0, var_e = 0.0;
    bool u_constant = true, e_constant = true;
};

template <typename T>
PearsonSums pearson_sums(const T* u, const T* e, const uint8_t* m, size_t n) {
    PearsonSums s;
    double su = 0.0, se = 0.0;
    double u0 = 0.0, e0 = 0.0;
    bool first = true;
    for (size_t i = 0; i < n; ++i) {
        if (!m[i]) continue;
        const double ui = double(u[i]), ei = double(e[i]);
        su += ui;
        se += ei;
        s.cnt += 1.0;
        if (first) {
            u0 = ui;
            e0 = ei;
            first = false;
        } else {
            if (ui != u0) s.u_constant = false;
            if (ei != e0) s.e_constant = false;
        }
    }
    if (s.cnt == 0.0) return s;
    s.mean_u = su / s.cnt;
    s.mean_e = se / s.cnt;
    for (size_t i = 0; i < n; ++i) {
        if (!m[i]) continue;
        const double du = double(u[i]) - s.mean_u;
        const double de = double(e[i]) - s.mean_e;
        s.cov += du * de;
        s.var_u += du * du;
        s.var_e += de * de;
    }
    return s;
}

}  // namespace

template <typename T>
double pearson_masked(const T* u, const T* e, const uint8_t* m, size_t n, double eps) {
    const PearsonSums s = pearson_sums(u, e, m, n);
    if (s.cnt == 0.0 || s.u_constant || s.e_constant) return 0.0;
    return s.cov / (std::sqrt(s.var_u * s.var_e) + eps);
}

template double pearson_masked<float>(const float*, const float*, const uint8_t*, size_t, double);
template double pearson_masked<double>(const double*, const double*, const uint8_t*, size_t, double);

double pearson_masked_grad(const double* u, const double* e, const uint8_t* m, size_t n, double eps,
                           double scale, double* du) {
    const PearsonSums s = pearson_sums(u, e, m, n);
    if (s.cnt == 0.0 || s.u_constant || s.e_constant) return 0.0;
    const double root = std::sqrt(s.var_u * s.var_e);
    const double denom = root + eps;
    const double r = s.cov / denom;
    // d r / d u_i = [ (e_i - mean_e) - r * sqrt(var_e / var_u) * (u_i - mean_u) ] / denom
    // for masked i; masked-mean terms cancel because sum of centered e is zero.
    const double ratio = r * std::sqrt(s.var_e / s.var_u);
    const double k = scale / denom;
    for (size_t i = 0; i < n; ++i) {
        if (!m[i]) continue;
        du[i] += k * ((e[i] - s.mean_e) - ratio * (u[i] - s.mean_u));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Soft Dice + cross-entropy
// ---------------------------------------------------------------------------

namespace {

// softmax over the channel axis into probs (may be empty to skip storing)
void softmax_accumulate(const Tensor& logits, const std::vector<uint16_t>& gt,
                        const std::vector<uint16_t>& fg, double eps, Tensor* probs_out,
                        double& ce_out, std::vector<double>& sum_p, std::vector<double>& sum_py,
                        std::vector<double>& sum_y) {
    const uint32_t k = logits.channels;
    const size_t n = logits.dims.voxels();
    sum_p.assign(k, 0.0);
    sum_py.assign(k, 0.0);
    sum_y.assign(k, 0.0);
    double ce = 0.0;
    std::vector<double> p(k);
    for (size_t v = 0; v < n; ++v) {
        double mx = logits.v[v];
        for (uint32_t c = 1; c < k; ++c) mx = std::max(mx, logits.v[size_t(c) * n + v]);
        double z = 0.0;
        for (uint32_t c = 0; c < k; ++c) {
            p[c] = std::exp(logits.v[size_t(c) * n + v] - mx);
            z += p[c];
        }
        const double inv_z = 1.0 / z;
        for (uint32_t c = 0; c < k; ++c) {
            p[c] *= inv_z;
            sum_p[c] += p[c];
            if (probs_out) probs_out->v[size_t(c) * n + v] = p[c];
        }
        const uint16_t y = gt[v];
        sum_y[y] += 1.0;
        sum_py[y] += p[y];
        ce -= std::log(std::max(p[y], 1e-300));
    }
    ce_out = ce / double(n);
    (void)fg;
    (void)eps;
}

}  // namespace

double dice_ce(const Tensor& logits, const std::vector<uint16_t>& gt,
               const std::vector<uint16_t>& foreground_classes, double eps) {
    require(gt.size() == logits.dims.voxels(), ErrKind::shape, "dice_ce: gt size != voxel count");
    require(!foreground_classes.empty(), ErrKind::config, "dice_ce: no foreground classes");
    double ce = 0.0;
    std::vector<double> sum_p, sum_py, sum_y;
    softmax_accumulate(logits, gt, foreground_classes, eps, nullptr, ce, sum_p, sum_py, sum_y);
    double dice_mean = 0.0;
    for (uint16_t c : foreground_classes) {
        require(c < logits.channels, ErrKind::shape, "dice_ce: class id exceeds logit channels");
        const double num = 2.0 * sum_py[c] + eps;
        const double den = sum_p[c] + sum_y[c] + eps;
        dice_mean += num / den;
    }
    dice_mean /= double(foreground_classes.size());
    return (1.0 - dice_mean) + ce;
}

double dice_ce_grad(const Tensor& logits, const std::vector<uint16_t>& gt,
                    const std::vector<uint16_t>& foreground_classes, double eps, Tensor& dlogits) {
    require(gt.size() == logits.dims.voxels(), ErrKind::shape, "dice_ce: gt size != voxel count");
    require(!foreground_classes.empty(), ErrKind::config, "dice_ce: no foreground classes");
    const uint32_t k = logits.channels;
    const size_t n = logits.dims.voxels();
    dlogits = Tensor(k, logits.dims);

    Tensor probs(k, logits.dims);
    double ce = 0.0;
    std::vector<double> sum_p, sum_py, sum_y;
    softmax_accumulate(logits, gt, foreground_classes, eps, &probs, ce, sum_p, sum_py, sum_y);

    std::vector<uint8_t> is_fg(k, 0);
    std::vector<double> num(k, 0.0), den(k, 0.0);
    double dice_mean = 0.0;
    for (uint16_t c : foreground_classes) {
        require(c < k, ErrKind::shape, "dice_ce: class id exceeds logit channels");
        is_fg[c] = 1;
        num[c] = 2.0 * sum_py[c] + eps;
        den[c] = sum_p[c] + sum_y[c] + eps;
        dice_mean += num[c] / den[c];
    }
    dice_mean /= double(foreground_classes.size());
    const double value = (1.0 - dice_mean) + ce;

    // dice part: dL/dp_c(v) = -(1/|fg|) * (2*y_c(v)*den_c - num_c) / den_c^2
    const double inv_fg = 1.0 / double(foreground_classes.size());
    const double inv_n = 1.0 / double(n);
    std::vector<double> g(k);
    for (size_t v = 0; v < n; ++v) {
        const uint16_t y = gt[v];
        double s = 0.0;
        for (uint32_t c = 0; c < k; ++c) {
            if (is_fg[c]) {
                const double yc = (c == y) ? 1.0 : 0.0;
                g[c] = -inv_fg * (2.0 * yc * den[c] - num[c]) / (den[c] * den[c]);
            } else {
                g[c] = 0.0;
            }
            s += g[c] * probs.v[size_t(c) * n + v];
        }
        for (uint32_t c = 0; c < k; ++c) {
            const double pc = probs.v[size_t(c) * n + v];
            const double yc = (c == y) ? 1.0 : 0.0;
            dlogits.v[size_t(c) * n + v] = pc * (g[c] - s) + (pc - yc) * inv_n;
        }
    }
    return value;
}

// ---------------------------------------------------------------------------
// Spec-facing wrappers
// ---------------------------------------------------------------------------

namespace {

void check_unc_shapes(const VoxelGrid& u, const UncertaintyTarget& e, const MaskVolume& m) {
    require(u.channels == 1, ErrKind::shape, "uncertainty grid must have one channel");
    require(u.dims == e.dims && u.dims == m.dims, ErrKind::shape,
            "uncertainty loss inputs disagree on dims");
}

}  // namespace

double dice_ce_loss(const VoxelGrid& seg_logits, const LabelVolume& gt, const LabelSchema& schema,
                    double eps) {
    require(seg_logits.dims == gt.dims, ErrKind::shape, "dice_ce_loss: logits dims != gt dims");
    require(seg_logits.channels >= uint32_t(schema.max_label()) + 1, ErrKind::shape,
            "dice_ce_loss: fewer logit channels than schema labels");
    std::vector<uint16_t> fg;
    for (const auto& e : schema.entries) fg.push_back(e.id);
    return dice_ce(Tensor::from_grid(seg_logits), gt.labels, fg, eps);
}

double rmsd_loss(const VoxelGrid& u, const UncertaintyTarget& e_target, const MaskVolume& m,
                 double eps) {
    check_unc_shapes(u, e_target, m);
    return rmsd_masked(u.data.data(), e_target.values.data(), m.mask.data(), m.mask.size(), eps);
}

double corr_coeff(const VoxelGrid& u, const UncertaintyTarget& e_target, const MaskVolume& m,
                  double eps) {
    check_unc_shapes(u, e_target, m);
    return pearson_masked(u.data.data(), e_target.values.data(), m.mask.data(), m.mask.size(), eps);
}

double combine_total(double dce, double rmsd, double corr, const LossWeights& w) {
    return dce + w.lambda_rmsd * rmsd + w.lambda_corr * (1.0 - corr);
}

LossBreakdown combined_loss(const VoxelGrid& seg_logits, const LabelVolume& gt,
                            const LabelSchema& schema, const VoxelGrid& u,
                            const UncertaintyTarget& e_target, const MaskVolume& m,
                            const LossWeights& weights) {
    LossBreakdown b;
    b.dce = dice_ce_loss(seg_logits, gt, schema, weights.epsilon);
    b.rmsd = rmsd_loss(u, e_target, m, weights.epsilon);
    b.corr = corr_coeff(u, e_target, m, weights.epsilon);
    b.total = combine_total(b.dce, b.rmsd, b.corr, weights);
    return b;
}

}  // namespace uqseg
