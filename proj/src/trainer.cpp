#include "uqseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "uqseg/error.hpp"
#include "uqseg/unctarget.hpp"

namespace fs = std::filesystem;

namespace uqseg {

RunKind run_kind_from_string(const std::string& s) {
    if (s == "CM1") return RunKind::CM1;
    if (s == "CM2") return RunKind::CM2;
    if (s == "UM1") return RunKind::UM1;
    if (s == "UM2") return RunKind::UM2;
    fail(ErrKind::config, "unknown run kind '" + s + "'");
}

std::string run_kind_name(RunKind k) {
    switch (k) {
        case RunKind::CM1: return "CM1";
        case RunKind::CM2: return "CM2";
        case RunKind::UM1: return "UM1";
        case RunKind::UM2: return "UM2";
    }
    return "?";
}

LossWeights TrainConfig::effective_weights() const {
    LossWeights w = weights;
    if (!unc_active()) {
        w.lambda_rmsd = 0.0;
        w.lambda_corr = 0.0;
    }
    return w;
}

void TrainConfig::validate() const {
    require(epochs >= 1, ErrKind::config, "train: epochs must be >= 1");
    require(train_batches_per_epoch >= 1, ErrKind::config, "train: need at least one train batch");
    require(val_batches_per_epoch >= 0, ErrKind::config, "train: negative val batch count");
    require(batch_size >= 1, ErrKind::config, "train: batch size must be >= 1");
    require(lr_start > 0.0, ErrKind::config, "train: lr_start must be positive");
    require(weights.lambda_rmsd >= 0.0 && weights.lambda_corr >= 0.0, ErrKind::config,
            "train: loss weights must be non-negative");
    require(weights.epsilon > 0.0, ErrKind::config, "train: epsilon must be positive");
    require(unc_mask_dilation >= 0, ErrKind::config, "train: negative mask dilation");
    require(summary_window >= 1, ErrKind::config, "train: summary window must be >= 1");
}

double lr_at(int epoch, const TrainConfig& cfg) {
    require(epoch >= 0 && epoch <= cfg.epochs, ErrKind::usage,
            "lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) +
                "]");
    return cfg.lr_start * (1.0 - double(epoch) / double(cfg.epochs));
}

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

double round_f32(double v) { return double(float(v)); }

}  // namespace

void adam_update(double& p, double& m, double& v, double g, double lr, int64_t t) {
    m = round_f32(kBeta1 * m + (1.0 - kBeta1) * g);
    v = round_f32(kBeta2 * v + (1.0 - kBeta2) * g * g);
    const double m_hat = m / (1.0 - std::pow(kBeta1, double(t)));
    const double v_hat = v / (1.0 - std::pow(kBeta2, double(t)));
    p = round_f32(p - lr * m_hat / (std::sqrt(v_hat) + kAdamEps));
}

// ---------------------------------------------------------------------------
// TrainRun
// ---------------------------------------------------------------------------

TrainRun::TrainRun(const TrainConfig& cfg, const Dataset& data) : cfg_(cfg), data_(data) {
    cfg_.validate();
    require(!data.train.empty() && !data.val.empty(), ErrKind::config,
            "train: dataset has an empty split");
    const bool cm = cfg.run_kind == RunKind::CM1 || cfg.run_kind == RunKind::CM2;
    if (cm)
        require(data.schema.has_group("whole_tumor"), ErrKind::config,
                "CM runs need a schema with a whole_tumor group");
    else
        require(data.schema.has_group("tumor_all"), ErrKind::config,
                "UM runs need a schema with a tumor_all group");
    tumor_set_ = tumor_labels(data.schema);

    net_cfg_.in_channels = data.modalities;
    net_cfg_.num_classes = uint32_t(data.schema.max_label()) + 1;
    net_cfg_.depth = cfg.depth;
    net_cfg_.base_width = cfg.base_width;
    net_cfg_.seed = cfg.seed;
    net_cfg_.validate();

    const int f = net_cfg_.downsample_factor();
    const Dims pd = cfg_.patch_dims;
    require(pd.nx % f == 0 && pd.ny % f == 0 && pd.nz % f == 0, ErrKind::config,
            "train: patch dims " + to_string(pd) + " not divisible by " + std::to_string(f));
    for (const auto& c : data.train)
        require(pd.nx <= c.image.dims.nx && pd.ny <= c.image.dims.ny && pd.nz <= c.image.dims.nz,
                ErrKind::config, "train: patch dims exceed case dims");
    for (const auto& c : data.val) {
        require(c.image.dims.nx % f == 0 && c.image.dims.ny % f == 0 && c.image.dims.nz % f == 0,
                ErrKind::config, "train: validation case dims not divisible by net factor");
    }

    // voxel indices of tumor labels per training case, for biased cropping
    std::vector<uint8_t> in_tumor(65536, 0);
    for (uint16_t id : tumor_set_) in_tumor[id] = 1;
    tumor_voxels_.resize(data.train.size());
    for (size_t i = 0; i < data.train.size(); ++i) {
        const auto& lab = data.train[i].labels.labels;
        for (uint64_t v = 0; v < lab.size(); ++v)
            if (in_tumor[lab[v]]) tumor_voxels_[i].push_back(v);
    }
}

TrainState TrainRun::init_state() const {
    TrainState st;
    st.params = init_params(net_cfg_);
    st.moment1.init_like(st.params);
    st.moment2.init_like(st.params);
    st.rng = Rng(cfg_.seed + 0x5DEECE66DULL);
    return st;
}

PatchSample TrainRun::crop_case(const CaseData& c, size_t case_idx, uint32_t ox, uint32_t oy,
                                uint32_t oz) const {
    const Dims pd = cfg_.patch_dims;
    PatchSample s;
    s.image = Tensor(c.image.channels, pd);
    s.labels = LabelVolume(pd, 0, c.labels.schema_id);
    for (uint32_t ch = 0; ch < c.image.channels; ++ch)
        for (uint32_t z = 0; z < pd.nz; ++z)
            for (uint32_t y = 0; y < pd.ny; ++y)
                for (uint32_t x = 0; x < pd.nx; ++x)
                    s.image.at(ch, x, y, z) = c.image.at(ch, ox + x, oy + y, oz + z);
    for (uint32_t z = 0; z < pd.nz; ++z)
        for (uint32_t y = 0; y < pd.ny; ++y)
            for (uint32_t x = 0; x < pd.nx; ++x)
                s.labels.at(x, y, z) = c.labels.at(ox + x, oy + y, oz + z);
    if (!epoch_targets_.empty()) {
        const auto& full = epoch_targets_[case_idx];
        const Dims cd = c.labels.dims;
        s.frozen_target.resize(pd.voxels());
        for (uint32_t z = 0; z < pd.nz; ++z)
            for (uint32_t y = 0; y < pd.ny; ++y)
                for (uint32_t x = 0; x < pd.nx; ++x)
                    s.frozen_target[pd.index(x, y, z)] = full[cd.index(ox + x, oy + y, oz + z)];
    }
    return s;
}

Batch TrainRun::sample_batch(TrainState& state) const {
    Batch batch;
    const Dims pd = cfg_.patch_dims;
    for (int b = 0; b < cfg_.batch_size; ++b) {
        const size_t ci = size_t(state.rng.below(data_.train.size()));
        const CaseData& c = data_.train[ci];
        const Dims cd = c.image.dims;
        uint32_t ox = 0, oy = 0, oz = 0;
        const bool biased = state.rng.uniform() < 0.5 && !tumor_voxels_[ci].empty();
        if (biased) {
            // crop window must contain a randomly chosen tumor voxel
            const uint64_t v = tumor_voxels_[ci][state.rng.below(tumor_voxels_[ci].size())];
            const uint32_t vx = uint32_t(v % cd.nx);
            const uint32_t vy = uint32_t((v / cd.nx) % cd.ny);
            const uint32_t vz = uint32_t(v / (uint64_t(cd.nx) * cd.ny));
            auto pick = [&](uint32_t vi, uint32_t n, uint32_t p) {
                const uint32_t lo = vi + 1 > p ? vi + 1 - p : 0;
                const uint32_t hi = std::min(n - p, vi);
                return lo + uint32_t(state.rng.below(uint64_t(hi - lo + 1)));
            };
            ox = pick(vx, cd.nx, pd.nx);
            oy = pick(vy, cd.ny, pd.ny);
            oz = pick(vz, cd.nz, pd.nz);
        } else {
            ox = uint32_t(state.rng.below(uint64_t(cd.nx - pd.nx + 1)));
            oy = uint32_t(state.rng.below(uint64_t(cd.ny - pd.ny + 1)));
            oz = uint32_t(state.rng.below(uint64_t(cd.nz - pd.nz + 1)));
        }
        batch.push_back(crop_case(c, ci, ox, oy, oz));
    }
    return batch;
}

namespace {

struct SampleResult {
    Gradients grads;
    double dce = 0.0, rmsd = 0.0, corr = 0.0;
};

}  // namespace

LossBreakdown TrainRun::step_losses(const TrainState& state, const Batch& batch,
                                    Gradients& grads) const {
    const LossWeights w = cfg_.effective_weights();
    std::vector<uint16_t> fg;
    for (const auto& e : data_.schema.entries) fg.push_back(e.id);

    std::vector<SampleResult> results(batch.size());
    auto run_sample = [&](size_t si) {
        const PatchSample& smp = batch[si];
        SampleResult& r = results[si];
        ForwardState fwd = forward(state.params, smp.image);

        // uncertainty target from the current prediction, detached
        std::vector<double> target;
        if (!smp.frozen_target.empty()) {
            target = smp.frozen_target;
        } else {
            const LabelVolume pred = argmax_labels(fwd.seg_logits, smp.labels.schema_id);
            const ErrorMap err = error_map(pred, smp.labels, tumor_set_);
            target.resize(err.mask.size());
            std::vector<double> raw(err.mask.begin(), err.mask.end());
            box_smooth_3_field(raw.data(), target.data(), err.dims);
        }

        MaskVolume mask = labels_to_mask(smp.labels, tumor_set_);
        if (cfg_.unc_loss_mask == UncLossMask::dilated)
            mask = dilate_mask(mask, cfg_.unc_mask_dilation);
        else if (cfg_.unc_loss_mask == UncLossMask::global)
            mask = MaskVolume(mask.dims, 1);

        Tensor d_seg;
        r.dce = dice_ce_grad(fwd.seg_logits, smp.labels.labels, fg, w.epsilon, d_seg);

        Tensor d_unc;
        const size_t n = target.size();
        if (cfg_.unc_active()) {
            d_unc = Tensor(1, fwd.unc_prob.dims);
            r.rmsd = rmsd_masked_grad(fwd.unc_prob.v.data(), target.data(), mask.mask.data(), n,
                                      w.epsilon, w.lambda_rmsd, d_unc.v.data());
            // the correlation enters the total as (1 - corr)
            r.corr = pearson_masked_grad(fwd.unc_prob.v.data(), target.data(), mask.mask.data(), n,
                                         w.epsilon, -w.lambda_corr, d_unc.v.data());
        } else {
            r.rmsd = rmsd_masked(fwd.unc_prob.v.data(), target.data(), mask.mask.data(), n,
                                 w.epsilon);
            r.corr = pearson_masked(fwd.unc_prob.v.data(), target.data(), mask.mask.data(), n,
                                    w.epsilon);
        }

        r.grads = backward(state.params, fwd, d_seg, d_unc);
    };

    int threads = cfg_.threads;
    if (threads <= 0)
        threads = int(std::min<size_t>(batch.size(), std::thread::hardware_concurrency()));
    threads = std::max(1, std::min<int>(threads, int(batch.size())));
    if (threads == 1) {
        for (size_t i = 0; i < batch.size(); ++i) run_sample(i);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                for (size_t i = size_t(t); i < batch.size(); i += size_t(threads)) run_sample(i);
            });
        for (auto& th : pool) th.join();
    }

    // fixed-order combination keeps the step bit-deterministic
    grads.init_like(state.params);
    const double inv_b = 1.0 / double(batch.size());
    LossBreakdown out;
    for (const SampleResult& r : results) {
        grads.add_scaled(r.grads, inv_b);
        out.dce += r.dce * inv_b;
        out.rmsd += r.rmsd * inv_b;
        out.corr += r.corr * inv_b;
    }
    out.total = combine_total(out.dce, out.rmsd, out.corr, w);
    return out;
}

LossBreakdown TrainRun::train_step(TrainState& state, const Batch& batch) const {
    require(!batch.empty(), ErrKind::usage, "train_step: empty batch");
    Gradients grads;
    const LossBreakdown breakdown = step_losses(state, batch, grads);
    if (!std::isfinite(breakdown.total)) {
        if (!cfg_.out_dir.empty()) {
            fs::create_directories(cfg_.out_dir);
            nlohmann::ordered_json diag;
            diag["epoch"] = state.epoch;
            diag["step"] = state.step_count;
            diag["dce"] = breakdown.dce;
            diag["rmsd"] = breakdown.rmsd;
            diag["corr"] = breakdown.corr;
            std::ofstream out(fs::path(cfg_.out_dir) / "diverged.json",
                              std::ios::binary | std::ios::trunc);
            out << diag.dump(2) << "\n";
        }
        fail(ErrKind::divergence, "training diverged: non-finite loss at step " +
                                      std::to_string(state.step_count));
    }

    const double lr = lr_at(state.epoch, cfg_);
    const int64_t t = ++state.step_count;
    for (size_t ci = 0; ci < state.params.convs.size(); ++ci) {
        auto& conv = state.params.convs[ci];
        for (size_t j = 0; j < conv.w.size(); ++j)
            adam_update(conv.w[j], state.moment1.w[ci][j], state.moment2.w[ci][j], grads.w[ci][j],
                        lr, t);
        for (size_t j = 0; j < conv.b.size(); ++j)
            adam_update(conv.b[j], state.moment1.b[ci][j], state.moment2.b[ci][j], grads.b[ci][j],
                        lr, t);
    }
    return breakdown;
}

std::vector<CaseMetrics> TrainRun::evaluate_validation(const TrainState& state) const {
    std::vector<CaseMetrics> rows;
    for (const auto& c : data_.val) {
        ForwardState fwd = forward(state.params, c.image);
        const LabelVolume pred = argmax_labels(fwd.seg_logits, c.labels.schema_id);
        rows.push_back(evaluate_case(c.id, fwd.unc_prob.to_grid(), pred, c.labels, data_.schema));
    }
    return rows;
}

void TrainRun::refresh_epoch_targets(const TrainState& state) {
    epoch_targets_.assign(data_.train.size(), {});
    for (size_t i = 0; i < data_.train.size(); ++i) {
        const CaseData& c = data_.train[i];
        ForwardState fwd = forward(state.params, c.image);
        const LabelVolume pred = argmax_labels(fwd.seg_logits, c.labels.schema_id);
        const ErrorMap err = error_map(pred, c.labels, tumor_set_);
        std::vector<double> raw(err.mask.begin(), err.mask.end());
        epoch_targets_[i].resize(raw.size());
        box_smooth_3_field(raw.data(), epoch_targets_[i].data(), err.dims);
    }
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

namespace {

Parameters moments_as_params(const Gradients& g, const Parameters& like) {
    Parameters p;
    p.cfg = like.cfg;
    for (size_t i = 0; i < like.convs.size(); ++i) {
        ConvParam cp;
        cp.spec = like.convs[i].spec;
        cp.w = g.w[i];
        cp.b = g.b[i];
        p.convs.push_back(std::move(cp));
    }
    return p;
}

Gradients params_as_moments(const Parameters& p) {
    Gradients g;
    g.init_like(p);
    for (size_t i = 0; i < p.convs.size(); ++i) {
        g.w[i] = p.convs[i].w;
        g.b[i] = p.convs[i].b;
    }
    return g;
}

}  // namespace

void TrainRun::save_state(const TrainState& state, const std::string& dir) const {
    fs::create_directories(dir);
    save_params(state.params, (fs::path(dir) / "params").string());
    save_params(moments_as_params(state.moment1, state.params), (fs::path(dir) / "moment1").string());
    save_params(moments_as_params(state.moment2, state.params), (fs::path(dir) / "moment2").string());
    nlohmann::ordered_json j;
    j["epoch"] = state.epoch;
    j["step-count"] = state.step_count;
    j["rng-state"] = state.rng.state();
    j["run-kind"] = run_kind_name(cfg_.run_kind);
    j["net"] = {{"in-channels", net_cfg_.in_channels},
                {"num-classes", net_cfg_.num_classes},
                {"depth", net_cfg_.depth},
                {"base-width", net_cfg_.base_width},
                {"seed", net_cfg_.seed}};
    std::ofstream out(fs::path(dir) / "state.json", std::ios::binary | std::ios::trunc);
    require(out.good(), ErrKind::io, "cannot write state.json in " + dir);
    out << j.dump(2) << "\n";
    require(out.good(), ErrKind::io, "short write on state.json in " + dir);
}

TrainState TrainRun::load_state(const std::string& dir) const {
    std::ifstream in(fs::path(dir) / "state.json", std::ios::binary);
    require(in.good(), ErrKind::io, "cannot open state.json in " + dir);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrKind::format, std::string("state.json: ") + e.what());
    }
    TrainState st;
    st.params = load_params(net_cfg_, (fs::path(dir) / "params").string());
    st.moment1 = params_as_moments(load_params(net_cfg_, (fs::path(dir) / "moment1").string()));
    st.moment2 = params_as_moments(load_params(net_cfg_, (fs::path(dir) / "moment2").string()));
    try {
        st.epoch = j.at("epoch").get<int>();
        st.step_count = j.at("step-count").get<int64_t>();
        std::array<uint64_t, 4> s{};
        for (size_t i = 0; i < 4; ++i) s[i] = j.at("rng-state").at(i).get<uint64_t>();
        st.rng.set_state(s);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrKind::format, std::string("state.json: ") + e.what());
    }
    return st;
}

uint64_t TrainRun::param_digest(const TrainState& state, bool trunk_and_seg_only) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const std::vector<double>& vals) {
        for (double d : vals) {
            const float f = float(d);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            for (int k = 0; k < 4; ++k) {
                h ^= (bits >> (8 * k)) & 0xff;
                h *= 0x100000001b3ULL;
            }
        }
    };
    for (const auto& c : state.params.convs) {
        if (trunk_and_seg_only && c.spec.part == Part::unc_head) continue;
        feed(c.w);
        feed(c.b);
    }
    return h;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

FitResult fit(const TrainConfig& cfg, const Dataset& data, const std::string& resume_checkpoint) {
    TrainRun run(cfg, data);
    TrainState state = resume_checkpoint.empty() ? run.init_state()
                                                 : run.load_state(resume_checkpoint);

    const bool files = !cfg.out_dir.empty();
    std::ofstream csv, digests;
    const std::vector<std::string> metric_cols = metric_columns(data.schema);
    if (files) {
        fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");
        csv.open(fs::path(cfg.out_dir) / "metrics.csv", std::ios::binary | std::ios::trunc);
        require(csv.good(), ErrKind::io, "cannot write metrics.csv in " + cfg.out_dir);
        csv << "epoch,lr,dce,rmsd,corr,total";
        for (const auto& c : metric_cols) csv << "," << c;
        csv << "\n";
        digests.open(fs::path(cfg.out_dir) / "digests.csv", std::ios::binary | std::ios::trunc);
        require(digests.good(), ErrKind::io, "cannot write digests.csv in " + cfg.out_dir);
        digests << "epoch,seg_params,all_params\n";
    }

    std::vector<std::map<std::string, double>> rows;
    for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        if (cfg.target_refresh == TargetRefresh::epoch) run.refresh_epoch_targets(state);

        double dce = 0, rmsd = 0, corr = 0, total = 0;
        for (int b = 0; b < cfg.train_batches_per_epoch; ++b) {
            Batch batch = run.sample_batch(state);
            const LossBreakdown lb = run.train_step(state, batch);
            dce += lb.dce;
            rmsd += lb.rmsd;
            corr += lb.corr;
            total += lb.total;
        }
        const double inv = 1.0 / double(cfg.train_batches_per_epoch);

        std::map<std::string, double> row;
        row["epoch"] = double(epoch);
        row["lr"] = lr_at(epoch, cfg);
        row["dce"] = dce * inv;
        row["rmsd"] = rmsd * inv;
        row["corr"] = corr * inv;
        row["total"] = total * inv;

        // validation means; the split is id-disjoint by construction and
        // asserted again here
        for (const auto& tc : data.train)
            for (const auto& vc : data.val)
                require(tc.id != vc.id, ErrKind::config, "train/val splits share case " + tc.id);
        const auto val_rows = run.evaluate_validation(state);
        for (const auto& col : metric_cols) {
            double sum = 0;
            for (const auto& r : val_rows) sum += r.values.at(col);
            row[col] = val_rows.empty() ? 0.0 : sum / double(val_rows.size());
        }
        rows.push_back(row);

        state.epoch = epoch + 1;
        if (files) {
            csv << epoch << "," << format_double(row.at("lr")) << "," << format_double(row.at("dce"))
                << "," << format_double(row.at("rmsd")) << "," << format_double(row.at("corr"))
                << "," << format_double(row.at("total"));
            for (const auto& c : metric_cols) csv << "," << format_double(row.at(c));
            csv << "\n";
            csv.flush();
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03d", epoch);
            run.save_state(state, (fs::path(cfg.out_dir) / "checkpoints" / name).string());
            char seg_hex[20], all_hex[20];
            std::snprintf(seg_hex, sizeof(seg_hex), "%016llx",
                          (unsigned long long)run.param_digest(state, true));
            std::snprintf(all_hex, sizeof(all_hex), "%016llx",
                          (unsigned long long)run.param_digest(state, false));
            digests << epoch << "," << seg_hex << "," << all_hex << "\n";
            digests.flush();
        }
    }

    FitResult result{std::move(state), summarize_run(rows, cfg.summary_window), std::move(rows)};
    if (files) write_summary_json((fs::path(cfg.out_dir) / "summary.json").string(), result.summary);
    return result;
}

}  // namespace uqseg
