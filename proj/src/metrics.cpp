#include "uqseg/metrics.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "uqseg/error.hpp"
#include "uqseg/losses.hpp"
#include "uqseg/unctarget.hpp"

namespace uqseg {

double dsc(const MaskVolume& pred_mask, const MaskVolume& gt_mask) {
    require(pred_mask.dims == gt_mask.dims, ErrKind::shape,
            "dsc: pred dims " + to_string(pred_mask.dims) + " != gt dims " + to_string(gt_mask.dims));
    uint64_t a = 0, b = 0, both = 0;
    const size_t n = pred_mask.mask.size();
    for (size_t i = 0; i < n; ++i) {
        a += pred_mask.mask[i];
        b += gt_mask.mask[i];
        both += uint64_t(pred_mask.mask[i]) & gt_mask.mask[i];
    }
    if (a + b == 0) return 1.0;  // 2|A^B|/(|A|+|B|) is 0/0 for two empty masks
    return 2.0 * double(both) / double(a + b);
}

namespace {

bool label_averaged_group(const std::string& name) {
    return name == "cortical" || name == "subcortical" || name == "whole_brain";
}

}  // namespace

double group_dsc(const LabelVolume& pred, const LabelVolume& gt, const LabelSchema& schema,
                 const std::string& group_name) {
    require(pred.dims == gt.dims, ErrKind::shape, "group_dsc: pred dims != gt dims");
    const std::vector<uint16_t>& members = resolve_group(schema, group_name);
    if (label_averaged_group(group_name)) {
        double sum = 0.0;
        for (uint16_t id : members) {
            const std::vector<uint16_t> single{id};
            sum += dsc(labels_to_mask(pred, single), labels_to_mask(gt, single));
        }
        return sum / double(members.size());
    }
    return dsc(labels_to_mask(pred, members), labels_to_mask(gt, members));
}

UncMetrics unc_metrics(const VoxelGrid& u, const LabelVolume& pred, const LabelVolume& gt,
                       const LabelSchema& schema) {
    require(u.channels == 1, ErrKind::shape, "unc_metrics: uncertainty grid must have one channel");
    require(u.dims == pred.dims && u.dims == gt.dims, ErrKind::shape,
            "unc_metrics: inputs disagree on dims");
    const std::vector<uint16_t>& tumor = tumor_labels(schema);
    const UncertaintyTarget target = box_smooth_3(error_map(pred, gt, tumor));
    const MaskVolume m = labels_to_mask(gt, tumor);
    constexpr double eps = 1e-6;
    UncMetrics out;
    out.rmsd = rmsd_masked(u.data.data(), target.values.data(), m.mask.data(), m.mask.size(), eps);
    out.corr = pearson_masked(u.data.data(), target.values.data(), m.mask.data(), m.mask.size(), eps);
    return out;
}

std::vector<std::string> metric_columns(const LabelSchema& schema) {
    std::vector<std::string> cols;
    for (const auto& g : schema.groups) cols.push_back("dsc_" + g.name);
    cols.push_back("unc_rmsd");
    cols.push_back("unc_corr");
    return cols;
}

CaseMetrics evaluate_case(const std::string& case_id, const VoxelGrid& u, const LabelVolume& pred,
                          const LabelVolume& gt, const LabelSchema& schema) {
    CaseMetrics cm;
    cm.case_id = case_id;
    for (const auto& g : schema.groups)
        cm.values["dsc_" + g.name] = group_dsc(pred, gt, schema, g.name);
    const UncMetrics um = unc_metrics(u, pred, gt, schema);
    cm.values["unc_rmsd"] = um.rmsd;
    cm.values["unc_corr"] = um.corr;
    return cm;
}

RunSummary summarize_run(const std::vector<std::map<std::string, double>>& per_epoch, int window) {
    require(!per_epoch.empty(), ErrKind::usage, "summarize_run: no epochs recorded");
    require(window >= 1, ErrKind::usage, "summarize_run: window must be >= 1");
    RunSummary s;
    s.epochs = int(per_epoch.size());
    s.window = std::min<int>(window, s.epochs);
    for (const auto& [key, _] : per_epoch.front()) s.columns.push_back(key);
    const size_t first = per_epoch.size() - size_t(s.window);
    for (const auto& key : s.columns) {
        double sum = 0.0;
        for (size_t i = first; i < per_epoch.size(); ++i) sum += per_epoch[i].at(key);
        s.final_means[key] = sum / double(s.window);
    }
    return s;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void write_metrics_csv(const std::string& path, const std::vector<std::string>& columns,
                       const std::vector<CaseMetrics>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrKind::io, "cannot write metrics csv: " + path);
    out << "case_id";
    for (const auto& c : columns) out << "," << c;
    out << "\n";
    for (const auto& row : rows) {
        out << row.case_id;
        for (const auto& c : columns) out << "," << format_double(row.values.at(c));
        out << "\n";
    }
    require(out.good(), ErrKind::io, "short write on metrics csv: " + path);
}

void write_summary_json(const std::string& path, const RunSummary& summary) {
    nlohmann::ordered_json j;
    j["epochs"] = summary.epochs;
    j["window"] = summary.window;
    j["final_means"] = nlohmann::ordered_json::object();
    for (const auto& c : summary.columns) j["final_means"][c] = summary.final_means.at(c);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrKind::io, "cannot write summary json: " + path);
    out << j.dump(2) << "\n";
    require(out.good(), ErrKind::io, "short write on summary json: " + path);
}

}  // namespace uqseg
