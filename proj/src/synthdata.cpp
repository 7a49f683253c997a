#include "uqseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "uqseg/error.hpp"
#include "uqseg/rng.hpp"

namespace fs = std::filesystem;

namespace uqseg {

void PhantomConfig::validate() const {
    require(dims.nx >= 4 && dims.ny >= 4 && dims.nz >= 4, ErrKind::config,
            "phantom dims must be at least 4 per axis");
    require(modalities >= 1, ErrKind::config, "phantom needs at least one modality");
    require(tumor_count_range[0] >= 0 && tumor_count_range[0] <= tumor_count_range[1],
            ErrKind::config, "bad tumor count range");
    require(tumor_radius_range[0] > 0.0 && tumor_radius_range[0] <= tumor_radius_range[1],
            ErrKind::config, "tumor radii must be positive");
    const double min_half = 0.5 * double(std::min({dims.nx, dims.ny, dims.nz}));
    require(tumor_radius_range[1] < min_half, ErrKind::config,
            "tumor radius does not fit inside the volume");
    require(noise_sigma >= 0.0, ErrKind::config, "noise sigma must be non-negative");
    require(boundary_contrast >= 0.0, ErrKind::config, "boundary contrast must be non-negative");
    schema.validate();
    if (tumor_style == TumorStyle::subregions) {
        require(schema.has_group("whole_tumor") && schema.has_group("tumor_core") &&
                    schema.has_group("enhancing_tumor"),
                ErrKind::config, "subregion tumors need CM-style groups in the schema");
    }
    if (resolved_style() == TumorStyle::single)
        require(schema.has_group("tumor_all"), ErrKind::config,
                "single-label tumors need a tumor_all group in the schema");
}

double PhantomConfig::spacing() const {
    if (intensity_spacing > 0.0) return intensity_spacing;
    return std::max(3.0 * noise_sigma, 0.05);
}

TumorStyle PhantomConfig::resolved_style() const {
    if (tumor_style != TumorStyle::auto_detect) return tumor_style;
    if (schema.has_group("enhancing_tumor")) return TumorStyle::subregions;
    return TumorStyle::single;
}

namespace {

// Per-label mean intensity: a ladder with fixed spacing, permuted per
// modality so that the channels carry distinct but consistent contrasts.
double label_intensity(uint16_t label, uint32_t modality, uint16_t n_levels, double spacing) {
    static constexpr uint32_t mults[] = {1, 3, 7, 11, 13, 17, 19, 23};
    uint32_t a = mults[modality % 8];
    while (std::gcd(a, uint32_t(n_levels)) != 1) a += 2;
    const uint32_t rank = (a * uint32_t(label) + modality) % n_levels;
    return double(rank) * spacing;
}

struct BrainGeometry {
    double cx, cy, cz;  // center
    double ax, ay, az;  // semi-axes
};

// normalized ellipsoid radius; <= 1 inside the brain
double rho(const BrainGeometry& g, double x, double y, double z) {
    const double dx = (x - g.cx) / g.ax, dy = (y - g.cy) / g.ay, dz = (z - g.cz) / g.az;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

constexpr double kCorticalInner = 0.72;  // cortical band spans (0.72, 1]

uint16_t sector_label(const std::vector<uint16_t>& members, double phi, double elev) {
    const int k = int(members.size());
    const int n_el = std::max(1, (k + 7) / 8);
    const int n_az = (k + n_el - 1) / n_el;
    const double t_az = phi / (2.0 * std::numbers::pi);
    int ia = std::min(n_az - 1, int(t_az * n_az));
    int ie = std::min(n_el - 1, int((elev + 1.0) * 0.5 * n_el));
    const int cell = std::min(k - 1, ie * n_az + ia);
    return members[size_t(cell)];
}

struct TumorSphere {
    double x, y, z;
    double r_core, r_enh, r_edema;  // nested radii; only r_edema used for single-label tumors
};

}  // namespace

std::pair<VoxelGrid, LabelVolume> generate_phantom(const PhantomConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const Dims d = cfg.dims;
    const TumorStyle style = cfg.resolved_style();

    BrainGeometry brain;
    brain.cx = 0.5 * d.nx + rng.uniform(-0.03, 0.03) * d.nx;
    brain.cy = 0.5 * d.ny + rng.uniform(-0.03, 0.03) * d.ny;
    brain.cz = 0.5 * d.nz + rng.uniform(-0.03, 0.03) * d.nz;
    brain.ax = rng.uniform(0.36, 0.44) * d.nx;
    brain.ay = rng.uniform(0.36, 0.44) * d.ny;
    brain.az = rng.uniform(0.36, 0.44) * d.nz;

    // Tumor placement: centers stay deep enough that the whole sphere fits
    // inside the brain ellipsoid.
    const int tumor_count =
        int(rng.range(cfg.tumor_count_range[0], cfg.tumor_count_range[1]));
    const double min_axis = std::min({brain.ax, brain.ay, brain.az});
    std::vector<TumorSphere> tumors;
    for (int t = 0; t < tumor_count; ++t) {
        TumorSphere ts{};
        double radius = rng.uniform(cfg.tumor_radius_range[0], cfg.tumor_radius_range[1]);
        double rc = 0.0;
        for (int attempt = 0; attempt < 16; ++attempt) {
            rc = rng.uniform(0.0, 0.55);
            const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double cos_th = rng.uniform(-1.0, 1.0);
            const double sin_th = std::sqrt(std::max(0.0, 1.0 - cos_th * cos_th));
            ts.x = brain.cx + rc * brain.ax * sin_th * std::cos(phi);
            ts.y = brain.cy + rc * brain.ay * sin_th * std::sin(phi);
            ts.z = brain.cz + rc * brain.az * cos_th;
            if ((1.0 - rc) * min_axis > radius + 1.0) break;
        }
        radius = std::min(radius, std::max(1.0, (1.0 - rc) * min_axis - 1.0));
        ts.r_edema = radius;
        // per-tumor subregion fractions: the visible core/rim must not give
        // away the halo extent
        ts.r_enh = rng.uniform(0.35, 0.9) * radius;
        ts.r_core = rng.uniform(0.4, 0.8) * ts.r_enh;
        tumors.push_back(ts);
    }

    // Resolve the label ids the tumor style needs.
    uint16_t lab_core = 0, lab_edema = 0, lab_enh = 0, lab_single = 0;
    if (style == TumorStyle::subregions) {
        const auto& wt = resolve_group(cfg.schema, "whole_tumor");
        const auto& tc = resolve_group(cfg.schema, "tumor_core");
        const auto& et = resolve_group(cfg.schema, "enhancing_tumor");
        require(et.size() == 1, ErrKind::config, "enhancing_tumor group must be a single label");
        lab_enh = et[0];
        for (uint16_t id : tc)
            if (id != lab_enh) lab_core = id;
        for (uint16_t id : wt)
            if (std::find(tc.begin(), tc.end(), id) == tc.end()) lab_edema = id;
        require(lab_core != 0 && lab_edema != 0, ErrKind::config,
                "schema tumor groups do not form core/edema/enhancing subregions");
    } else {
        const auto& ta = resolve_group(cfg.schema, "tumor_all");
        require(ta.size() == 1, ErrKind::config, "tumor_all group must be a single label");
        lab_single = ta[0];
    }

    const bool has_anatomy = cfg.schema.has_group("cortical") && cfg.schema.has_group("subcortical");
    const std::vector<uint16_t>* cortical = has_anatomy ? &resolve_group(cfg.schema, "cortical") : nullptr;
    const std::vector<uint16_t>* subcortical =
        has_anatomy ? &resolve_group(cfg.schema, "subcortical") : nullptr;

    LabelVolume labels(d, 0, cfg.schema.schema_id);
    for (uint32_t z = 0; z < d.nz; ++z)
        for (uint32_t y = 0; y < d.ny; ++y)
            for (uint32_t x = 0; x < d.nx; ++x) {
                const double fx = x + 0.5, fy = y + 0.5, fz = z + 0.5;
                uint16_t lab = 0;
                if (has_anatomy) {
                    const double r = rho(brain, fx, fy, fz);
                    if (r <= 1.0) {
                        double phi = std::atan2(fy - brain.cy, fx - brain.cx);
                        if (phi < 0) phi += 2.0 * std::numbers::pi;
                        const double elev =
                            std::clamp((fz - brain.cz) / brain.az, -1.0, 1.0);
                        lab = (r > kCorticalInner) ? sector_label(*cortical, phi, elev)
                                                   : sector_label(*subcortical, phi, elev);
                    }
                }
                for (const auto& t : tumors) {
                    const double dx = fx - t.x, dy = fy - t.y, dz = fz - t.z;
                    const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
                    if (dist > t.r_edema) continue;
                    if (style == TumorStyle::single) {
                        lab = lab_single;
                    } else if (dist <= t.r_core) {
                        lab = lab_core;
                    } else if (dist <= t.r_enh) {
                        lab = lab_enh;
                    } else {
                        lab = lab_edema;
                    }
                }
                labels.at(x, y, z) = lab;
            }

    const uint16_t n_levels = uint16_t(cfg.schema.max_label() + 1);
    const double spacing = cfg.spacing();
    // the halo label forms the whole-tumor boundary against background
    const uint16_t halo_label = (style == TumorStyle::subregions) ? lab_edema : lab_single;
    VoxelGrid image(d, cfg.modalities);
    for (uint32_t c = 0; c < cfg.modalities; ++c) {
        std::vector<double> mean(n_levels);
        for (uint16_t l = 0; l < n_levels; ++l) mean[l] = label_intensity(l, c, n_levels, spacing);
        if (cfg.boundary_contrast != 1.0)
            mean[halo_label] = mean[0] + cfg.boundary_contrast * (mean[halo_label] - mean[0]);
        float* out = image.channel(c);
        const size_t n = d.voxels();
        for (size_t i = 0; i < n; ++i)
            out[i] = float(mean[labels.labels[i]] + cfg.noise_sigma * rng.normal());
    }

    return {std::move(image), std::move(labels)};
}

std::vector<CaseRef> split_dataset(uint64_t seed, int n_cases, double split_fraction) {
    require(n_cases >= 2, ErrKind::config, "dataset needs at least two cases");
    require(split_fraction > 0.0 && split_fraction < 1.0, ErrKind::config,
            "split fraction must lie in (0, 1)");
    const int n_val = int(std::llround(split_fraction * n_cases));
    require(n_val >= 1 && n_val < n_cases, ErrKind::config,
            "split leaves an empty train or validation set");
    std::vector<CaseRef> cases;
    cases.reserve(size_t(n_cases));
    char buf[32];
    for (int i = 0; i < n_cases; ++i) {
        std::snprintf(buf, sizeof(buf), "case_%04d", i);
        cases.push_back({buf, seed + uint64_t(i), i >= n_cases - n_val});
    }
    return cases;
}

Dataset generate_dataset(const PhantomConfig& cfg, int n_cases, double split_fraction) {
    cfg.validate();
    Dataset ds;
    ds.schema = cfg.schema;
    ds.modalities = cfg.modalities;
    ds.dims = cfg.dims;
    for (const CaseRef& ref : split_dataset(cfg.seed, n_cases, split_fraction)) {
        PhantomConfig case_cfg = cfg;
        case_cfg.seed = ref.seed;
        auto [img, lab] = generate_phantom(case_cfg);
        auto& bucket = ref.validation ? ds.val : ds.train;
        bucket.push_back({ref.id, std::move(img), std::move(lab)});
    }
    return ds;
}

void write_dataset(const PhantomConfig& cfg, int n_cases, double split_fraction,
                   const std::string& out_dir) {
    cfg.validate();
    const auto refs = split_dataset(cfg.seed, n_cases, split_fraction);
    fs::create_directories(out_dir);

    nlohmann::ordered_json manifest;
    manifest["seed"] = cfg.seed;
    manifest["n-cases"] = n_cases;
    manifest["split-fraction"] = split_fraction;
    manifest["schema-id"] = cfg.schema.schema_id;
    manifest["dims"] = {cfg.dims.nx, cfg.dims.ny, cfg.dims.nz};
    manifest["modalities"] = cfg.modalities;
    manifest["noise-sigma"] = cfg.noise_sigma;
    manifest["intensity-spacing"] = cfg.intensity_spacing;
    manifest["boundary-contrast"] = cfg.boundary_contrast;
    manifest["tumor-count-range"] = cfg.tumor_count_range;
    manifest["tumor-radius-range"] = cfg.tumor_radius_range;
    manifest["cases"] = nlohmann::ordered_json::array();

    for (const CaseRef& ref : refs) {
        PhantomConfig case_cfg = cfg;
        case_cfg.seed = ref.seed;
        auto [img, lab] = generate_phantom(case_cfg);
        write_vxv(img, (fs::path(out_dir) / (ref.id + "_img.vxv")).string());
        write_vxv(lab, (fs::path(out_dir) / (ref.id + "_lab.vxv")).string());
        manifest["cases"].push_back({{"id", ref.id},
                                     {"seed", ref.seed},
                                     {"split", ref.validation ? "val" : "train"}});
    }

    save_schema(cfg.schema, (fs::path(out_dir) / "schema.json").string());
    std::ofstream out(fs::path(out_dir) / "manifest.json", std::ios::binary | std::ios::trunc);
    require(out.good(), ErrKind::io, "cannot write manifest in " + out_dir);
    out << manifest.dump(2) << "\n";
    require(out.good(), ErrKind::io, "short write on manifest in " + out_dir);
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json", std::ios::binary);
    require(in.good(), ErrKind::io, "cannot open manifest in " + dir);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrKind::format, std::string("manifest json: ") + e.what());
    }
    Dataset ds;
    ds.schema = load_schema((fs::path(dir) / "schema.json").string());
    try {
        ds.modalities = manifest.at("modalities").get<uint32_t>();
        const auto dims = manifest.at("dims");
        ds.dims = {dims.at(0).get<uint32_t>(), dims.at(1).get<uint32_t>(), dims.at(2).get<uint32_t>()};
        for (const auto& c : manifest.at("cases")) {
            CaseData data;
            data.id = c.at("id").get<std::string>();
            data.image = read_vxv_grid((fs::path(dir) / (data.id + "_img.vxv")).string());
            data.labels = read_vxv_labels((fs::path(dir) / (data.id + "_lab.vxv")).string());
            data.labels.schema_id = ds.schema.schema_id;
            data.labels.validate_against(ds.schema);
            auto& bucket = (c.at("split").get<std::string>() == "val") ? ds.val : ds.train;
            bucket.push_back(std::move(data));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrKind::format, std::string("manifest json: ") + e.what());
    }
    require(!ds.train.empty() && !ds.val.empty(), ErrKind::config,
            "dataset in " + dir + " has an empty split");
    return ds;
}

}  // namespace uqseg
