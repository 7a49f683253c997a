#pragma once

#include <map>
#include <string>
#include <vector>

#include "uqseg/labelspace.hpp"
#include "uqseg/voxvol.hpp"

namespace uqseg {

struct CaseMetrics {
    std::string case_id;
    // keyed "dsc_<group>" plus "unc_rmsd" / "unc_corr"; ordered map keeps
    // column order deterministic, callers emit columns via metric_columns()
    std::map<std::string, double> values;
};

struct RunSummary {
    int epochs = 0;
    int window = 0;
    std::vector<std::string> columns;
    std::map<std::string, double> final_means;
};

// 2|A^B| / (|A|+|B|); 1.0 when both masks are empty. Error(shape) on
// mismatched dims.
double dsc(const MaskVolume& pred_mask, const MaskVolume& gt_mask);

// Composite groups (whole_tumor, tumor_core, ...) use the union mask;
// cortical / subcortical / whole_brain report the unweighted mean of
// per-label DSC over the group's members.
double group_dsc(const LabelVolume& pred, const LabelVolume& gt, const LabelSchema& schema,
                 const std::string& group_name);

// Rebuilds the error map and its smoothed target from (pred, gt) and
// evaluates the loss-module RMSD / Pearson kernels on the true-tumor mask.
struct UncMetrics {
    double rmsd = 0.0;
    double corr = 0.0;
};
UncMetrics unc_metrics(const VoxelGrid& u, const LabelVolume& pred, const LabelVolume& gt,
                       const LabelSchema& schema);

// Column order used for CSV output: dsc_<group> in schema declaration
// order, then unc_rmsd, unc_corr.
std::vector<std::string> metric_columns(const LabelSchema& schema);

// Per-group DSC plus uncertainty metrics for one case.
CaseMetrics evaluate_case(const std::string& case_id, const VoxelGrid& u, const LabelVolume& pred,
                          const LabelVolume& gt, const LabelSchema& schema);

// Arithmetic means per column over the final min(window, epochs) rows.
// Error(usage) on an empty history.
RunSummary summarize_run(const std::vector<std::map<std::string, double>>& per_epoch, int window);

// Deterministic float formatting shared by every CSV/JSON writer.
std::string format_double(double v);

void write_metrics_csv(const std::string& path, const std::vector<std::string>& columns,
                       const std::vector<CaseMetrics>& rows);
void write_summary_json(const std::string& path, const RunSummary& summary);

}  // namespace uqseg
