#include "uqseg/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "uqseg/error.hpp"
#include "uqseg/metrics.hpp"
#include "uqseg/render.hpp"
#include "uqseg/synthdata.hpp"
#include "uqseg/trainer.hpp"
#include "uqseg/unctarget.hpp"

namespace fs = std::filesystem;

namespace uqseg {

namespace {

nlohmann::json load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrKind::io, "cannot open config: " + path);
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrKind::format, path + ": " + e.what());
    }
}

Dims dims_from_json(const nlohmann::json& a) {
    require(a.is_array() && a.size() == 3, ErrKind::config, "dims must be a 3-element array");
    return {a.at(0).get<uint32_t>(), a.at(1).get<uint32_t>(), a.at(2).get<uint32_t>()};
}

LabelSchema schema_from_spec(const std::string& spec) {
    if (spec == "CM" || spec == "cm") return builtin_schema(SchemaKind::CM);
    if (spec == "UM" || spec == "um") return builtin_schema(SchemaKind::UM);
    return load_schema(spec);
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int run_synth(const std::string& config_path, const std::string& out_override) {
    const nlohmann::json j = load_config(config_path);
    PhantomConfig cfg;
    if (j.contains("dims")) cfg.dims = dims_from_json(j.at("dims"));
    cfg.schema = schema_from_spec(get_or<std::string>(j, "schema", "CM"));
    cfg.modalities = get_or<uint32_t>(j, "modalities", cfg.schema.has_group("tumor_all") ? 1 : 4);
    if (j.contains("tumor-count-range")) {
        cfg.tumor_count_range[0] = j.at("tumor-count-range").at(0).get<int>();
        cfg.tumor_count_range[1] = j.at("tumor-count-range").at(1).get<int>();
    }
    if (j.contains("tumor-radius-range")) {
        cfg.tumor_radius_range[0] = j.at("tumor-radius-range").at(0).get<double>();
        cfg.tumor_radius_range[1] = j.at("tumor-radius-range").at(1).get<double>();
    }
    cfg.noise_sigma = get_or<double>(j, "noise-sigma", cfg.noise_sigma);
    cfg.intensity_spacing = get_or<double>(j, "intensity-spacing", cfg.intensity_spacing);
    cfg.boundary_contrast = get_or<double>(j, "boundary-contrast", cfg.boundary_contrast);
    cfg.seed = get_or<uint64_t>(j, "seed", 0);
    const int n_cases = get_or<int>(j, "n-cases", 10);
    const double split = get_or<double>(j, "split-fraction", 0.2);
    const std::string out = out_override.empty() ? get_or<std::string>(j, "out", "") : out_override;
    require(!out.empty(), ErrKind::usage, "synth: no output directory (config key 'out' or --out)");
    write_dataset(cfg, n_cases, split, out);
    std::printf("synth: wrote %d cases to %s\n", n_cases, out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.run_kind = run_kind_from_string(get_or<std::string>(j, "run-kind", "CM1"));
    cfg.epochs = get_or<int>(j, "epochs", cfg.epochs);
    cfg.train_batches_per_epoch = get_or<int>(j, "train-batches-per-epoch", cfg.train_batches_per_epoch);
    cfg.val_batches_per_epoch = get_or<int>(j, "val-batches-per-epoch", cfg.val_batches_per_epoch);
    cfg.batch_size = get_or<int>(j, "batch-size", cfg.batch_size);
    if (j.contains("patch-dims")) cfg.patch_dims = dims_from_json(j.at("patch-dims"));
    cfg.lr_start = get_or<double>(j, "lr-start", cfg.lr_start);
    cfg.weights.lambda_rmsd = get_or<double>(j, "lambda-rmsd", cfg.weights.lambda_rmsd);
    cfg.weights.lambda_corr = get_or<double>(j, "lambda-corr", cfg.weights.lambda_corr);
    cfg.weights.epsilon = get_or<double>(j, "epsilon", cfg.weights.epsilon);
    cfg.seed = get_or<uint64_t>(j, "seed", 0);
    const std::string refresh = get_or<std::string>(j, "target-refresh", "step");
    if (refresh == "step") cfg.target_refresh = TargetRefresh::step;
    else if (refresh == "epoch") cfg.target_refresh = TargetRefresh::epoch;
    else fail(ErrKind::config, "target-refresh must be 'step' or 'epoch'");
    const std::string mask = get_or<std::string>(j, "unc-loss-mask", "tumor");
    if (mask == "tumor") cfg.unc_loss_mask = UncLossMask::tumor;
    else if (mask == "dilated") cfg.unc_loss_mask = UncLossMask::dilated;
    else if (mask == "global") cfg.unc_loss_mask = UncLossMask::global;
    else fail(ErrKind::config, "unc-loss-mask must be 'tumor', 'dilated' or 'global'");
    cfg.unc_mask_dilation = get_or<int>(j, "unc-mask-dilation", cfg.unc_mask_dilation);
    cfg.depth = get_or<int>(j, "depth", cfg.depth);
    cfg.base_width = get_or<int>(j, "base-width", cfg.base_width);
    cfg.threads = get_or<int>(j, "threads", cfg.threads);
    cfg.summary_window = get_or<int>(j, "summary-window", cfg.summary_window);
    return cfg;
}

int run_train(const std::string& config_path, const std::string& resume) {
    const nlohmann::json j = load_config(config_path);
    TrainConfig cfg = train_config_from_json(j);
    const std::string data_dir = get_or<std::string>(j, "data", "");
    require(!data_dir.empty(), ErrKind::usage, "train: config key 'data' is required");
    cfg.out_dir = get_or<std::string>(j, "out", "");
    require(!cfg.out_dir.empty(), ErrKind::usage, "train: config key 'out' is required");
    const Dataset data = load_dataset(data_dir);
    const FitResult result = fit(cfg, data, resume);
    std::printf("train: %s finished %d epochs, final window means:\n",
                run_kind_name(cfg.run_kind).c_str(), result.summary.epochs);
    for (const auto& [key, value] : result.summary.final_means)
        if (key != "epoch") std::printf("  %s = %s\n", key.c_str(), format_double(value).c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int run_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& out_dir,
             const std::string& split, bool dump_volumes) {
    const Dataset data = load_dataset(data_dir);

    std::ifstream in(fs::path(checkpoint) / "state.json", std::ios::binary);
    require(in.good(), ErrKind::io, "cannot open state.json in " + checkpoint);
    nlohmann::json st;
    try {
        in >> st;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrKind::format, std::string("state.json: ") + e.what());
    }
    NetConfig net_cfg;
    try {
        const auto& n = st.at("net");
        net_cfg.in_channels = n.at("in-channels").get<uint32_t>();
        net_cfg.num_classes = n.at("num-classes").get<uint32_t>();
        net_cfg.depth = n.at("depth").get<int>();
        net_cfg.base_width = n.at("base-width").get<int>();
        net_cfg.seed = n.at("seed").get<uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrKind::format, std::string("state.json: ") + e.what());
    }
    const Parameters params = load_params(net_cfg, (fs::path(checkpoint) / "params").string());

    std::vector<const CaseData*> cases;
    if (split == "val" || split == "all")
        for (const auto& c : data.val) cases.push_back(&c);
    if (split == "train" || split == "all")
        for (const auto& c : data.train) cases.push_back(&c);
    require(!cases.empty(), ErrKind::usage, "eval: split '" + split + "' selected no cases");

    fs::create_directories(out_dir);
    std::vector<CaseMetrics> rows;
    std::vector<std::map<std::string, double>> maps;
    for (const CaseData* c : cases) {
        ForwardState fwd = forward(params, c->image);
        const LabelVolume pred = argmax_labels(fwd.seg_logits, c->labels.schema_id);
        const VoxelGrid unc = fwd.unc_prob.to_grid();
        rows.push_back(evaluate_case(c->id, unc, pred, c->labels, data.schema));
        maps.push_back(rows.back().values);
        if (dump_volumes) {
            const fs::path cdir = fs::path(out_dir) / "cases" / c->id;
            fs::create_directories(cdir);
            write_vxv(c->labels, (cdir / "gt.vxv").string());
            write_vxv(pred, (cdir / "pred.vxv").string());
            write_vxv(unc, (cdir / "unc.vxv").string());
            save_schema(data.schema, (cdir / "schema.json").string());
        }
    }
    write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), metric_columns(data.schema), rows);
    write_summary_json((fs::path(out_dir) / "summary.json").string(),
                       summarize_run(maps, int(maps.size())));
    std::printf("eval: %zu cases -> %s\n", rows.size(), out_dir.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// target
// ---------------------------------------------------------------------------

int run_target(const std::string& pred_path, const std::string& gt_path,
               const std::string& schema_path, const std::string& group,
               const std::string& out_path) {
    const LabelVolume pred = read_vxv_labels(pred_path);
    const LabelVolume gt = read_vxv_labels(gt_path);
    const LabelSchema schema = schema_from_spec(schema_path);
    const std::vector<uint16_t>& labels =
        group.empty() ? tumor_labels(schema) : resolve_group(schema, group);
    const UncertaintyTarget target = box_smooth_3(error_map(pred, gt, labels));
    write_vxv(target.to_grid(), out_path);
    std::printf("target: wrote %s\n", out_path.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

int run_render(const std::string& case_dir, const std::string& out_dir, const std::string& axes_csv,
               int index, bool overlay_mask) {
    RenderCaseOptions opts;
    opts.axes.clear();
    std::stringstream ss(axes_csv);
    std::string token;
    while (std::getline(ss, token, ','))
        if (!token.empty()) opts.axes.push_back(axis_from_string(token));
    require(!opts.axes.empty(), ErrKind::usage, "render: no axes selected");
    opts.index = index;
    opts.overlay_mask = overlay_mask;
    const auto files = render_case(case_dir, out_dir, opts);
    std::printf("render: wrote %zu images to %s\n", files.size(), out_dir.c_str());
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"uncertainty-aware volumetric tumor segmentation toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_override, resume;
    auto* synth = app.add_subcommand("synth", "generate a phantom dataset");
    synth->add_option("--config", config_path, "JSON config")->required();
    synth->add_option("--out", out_override, "output directory (overrides config)");

    auto* train = app.add_subcommand("train", "train a model");
    std::string train_config;
    train->add_option("--config", train_config, "JSON config")->required();
    train->add_option("--resume", resume, "checkpoint directory to resume from");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ckpt, data_dir, eval_out, split = "val";
    bool no_dump = false;
    eval->add_option("--checkpoint", ckpt, "checkpoint directory (epoch_NNN)")->required();
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--out", eval_out, "output directory")->required();
    eval->add_option("--split", split, "val | train | all");
    eval->add_flag("--no-dump-volumes", no_dump, "skip writing per-case volumes");

    auto* target = app.add_subcommand("target", "compute an uncertainty target from labels");
    std::string pred_path, gt_path, schema_path = "CM", group, target_out;
    target->add_option("--pred", pred_path, "predicted label volume")->required();
    target->add_option("--gt", gt_path, "ground-truth label volume")->required();
    target->add_option("--schema", schema_path, "CM | UM | schema.json path");
    target->add_option("--group", group, "label group (default: combined tumor)");
    target->add_option("--out", target_out, "output .vxv path")->required();

    auto* render = app.add_subcommand("render", "render overlay panels for a case");
    std::string case_dir, render_out, axes = "axial";
    int index = -1;
    bool overlay_mask = false;
    render->add_option("--case", case_dir, "case directory (gt/pred/unc volumes)")->required();
    render->add_option("--out", render_out, "output directory")->required();
    render->add_option("--axes", axes, "comma-separated: axial,coronal,sagittal");
    render->add_option("--index", index, "slice index (default: central)");
    render->add_flag("--overlay-mask", overlay_mask, "restrict the red hue to predicted tumor");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help() << std::flush;
        return 1;
    }

    try {
        if (synth->parsed()) return run_synth(config_path, out_override);
        if (train->parsed()) return run_train(train_config, resume);
        if (eval->parsed()) return run_eval(ckpt, data_dir, eval_out, split, !no_dump);
        if (target->parsed()) return run_target(pred_path, gt_path, schema_path, group, target_out);
        if (render->parsed()) return run_render(case_dir, render_out, axes, index, overlay_mask);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return e.kind() == ErrKind::usage ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
    return 1;
}

}  // namespace uqseg
