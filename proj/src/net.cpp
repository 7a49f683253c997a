#include "uqseg/net.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "uqseg/error.hpp"
#include "uqseg/rng.hpp"

namespace fs = std::filesystem;

namespace uqseg {

void NetConfig::validate() const {
    require(in_channels >= 1, ErrKind::config, "net: in_channels must be >= 1");
    require(num_classes >= 2, ErrKind::config, "net: num_classes must be >= 2");
    require(depth >= 1 && depth <= 6, ErrKind::config, "net: depth must be in [1, 6]");
    require(base_width >= 1, ErrKind::config, "net: base_width must be >= 1");
}

std::string part_name(Part p) {
    switch (p) {
        case Part::trunk: return "trunk";
        case Part::seg_head: return "seg_head";
        case Part::unc_head: return "unc_head";
    }
    return "?";
}

Part part_from_string(const std::string& s) {
    if (s == "trunk") return Part::trunk;
    if (s == "seg_head") return Part::seg_head;
    if (s == "unc_head") return Part::unc_head;
    fail(ErrKind::format, "unknown partition tag '" + s + "'");
}

// ---------------------------------------------------------------------------
// Architecture layout
// ---------------------------------------------------------------------------

namespace {

int width_at(const NetConfig& cfg, int level) { return cfg.base_width << level; }

std::vector<ConvSpec> make_conv_specs(const NetConfig& cfg) {
    std::vector<ConvSpec> specs;
    for (int l = 0; l < cfg.depth; ++l) {
        const int w = width_at(cfg, l);
        const int ci0 = (l == 0) ? int(cfg.in_channels) : w;
        specs.push_back({"enc" + std::to_string(l) + ".conv0", Part::trunk, w, ci0, 3, 1});
        specs.push_back({"enc" + std::to_string(l) + ".conv1", Part::trunk, w, w, 3, 1});
    }
    for (int l = 0; l + 1 < cfg.depth; ++l)
        specs.push_back({"down" + std::to_string(l), Part::trunk, width_at(cfg, l + 1),
                         width_at(cfg, l), 3, 2});
    for (int l = cfg.depth - 2; l >= 0; --l) {
        const int w = width_at(cfg, l);
        specs.push_back({"dec" + std::to_string(l) + ".up", Part::trunk, w, width_at(cfg, l + 1), 3, 1});
        specs.push_back({"dec" + std::to_string(l) + ".conv0", Part::trunk, w, 2 * w, 3, 1});
        specs.push_back({"dec" + std::to_string(l) + ".conv1", Part::trunk, w, w, 3, 1});
    }
    specs.push_back({"seg_head", Part::seg_head, int(cfg.num_classes), cfg.base_width, 1, 1});
    specs.push_back({"unc_head", Part::unc_head, 1, cfg.base_width, 1, 1});
    return specs;
}

// indices into Parameters::convs, mirroring make_conv_specs order
size_t idx_enc(const NetConfig& cfg, int level, int c) {
    (void)cfg;
    return size_t(2 * level + c);
}
size_t idx_down(const NetConfig& cfg, int level) { return size_t(2 * cfg.depth + level); }
size_t idx_dec(const NetConfig& cfg, int level, int c) {
    const size_t base = size_t(2 * cfg.depth + (cfg.depth - 1));
    const size_t j = size_t(cfg.depth - 2 - level);
    return base + 3 * j + size_t(c);  // c: 0 = up, 1 = conv0, 2 = conv1
}
size_t idx_seg(const NetConfig& cfg) { return make_conv_specs(cfg).size() - 2; }
size_t idx_unc(const NetConfig& cfg) { return make_conv_specs(cfg).size() - 1; }

double round_f32(double v) { return double(float(v)); }

}  // namespace

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

Parameters init_params(const NetConfig& cfg) {
    cfg.validate();
    Parameters p;
    p.cfg = cfg;
    Rng rng(cfg.seed);
    for (const ConvSpec& spec : make_conv_specs(cfg)) {
        ConvParam cp;
        cp.spec = spec;
        cp.w.resize(spec.weight_count());
        cp.b.assign(size_t(spec.co), 0.0);
        const double scale = std::sqrt(2.0 / (double(spec.ci) * spec.k * spec.k * spec.k));
        for (double& w : cp.w) w = round_f32(scale * rng.normal());
        p.convs.push_back(std::move(cp));
    }
    return p;
}

size_t Parameters::flat_size() const {
    size_t n = 0;
    for (const auto& c : convs) n += c.w.size() + c.b.size();
    return n;
}

double Parameters::flat_get(size_t i) const {
    for (const auto& c : convs) {
        if (i < c.w.size()) return c.w[i];
        i -= c.w.size();
        if (i < c.b.size()) return c.b[i];
        i -= c.b.size();
    }
    fail(ErrKind::usage, "flat parameter index out of range");
}

void Parameters::flat_add(size_t i, double delta) {
    for (auto& c : convs) {
        if (i < c.w.size()) {
            c.w[i] += delta;
            return;
        }
        i -= c.w.size();
        if (i < c.b.size()) {
            c.b[i] += delta;
            return;
        }
        i -= c.b.size();
    }
    fail(ErrKind::usage, "flat parameter index out of range");
}

Part Parameters::flat_part(size_t i) const {
    for (const auto& c : convs) {
        if (i < c.w.size() + c.b.size()) return c.spec.part;
        i -= c.w.size() + c.b.size();
    }
    fail(ErrKind::usage, "flat parameter index out of range");
}

void Gradients::init_like(const Parameters& p) {
    w.resize(p.convs.size());
    b.resize(p.convs.size());
    for (size_t i = 0; i < p.convs.size(); ++i) {
        w[i].assign(p.convs[i].w.size(), 0.0);
        b[i].assign(p.convs[i].b.size(), 0.0);
    }
}

void Gradients::zero() {
    for (auto& v : w) std::fill(v.begin(), v.end(), 0.0);
    for (auto& v : b) std::fill(v.begin(), v.end(), 0.0);
}

void Gradients::add_scaled(const Gradients& other, double scale) {
    for (size_t i = 0; i < w.size(); ++i) {
        for (size_t j = 0; j < w[i].size(); ++j) w[i][j] += scale * other.w[i][j];
        for (size_t j = 0; j < b[i].size(); ++j) b[i][j] += scale * other.b[i][j];
    }
}

double Gradients::flat_get(const Parameters& p, size_t i) const {
    for (size_t t = 0; t < p.convs.size(); ++t) {
        if (i < w[t].size()) return w[t][i];
        i -= w[t].size();
        if (i < b[t].size()) return b[t][i];
        i -= b[t].size();
    }
    fail(ErrKind::usage, "flat gradient index out of range");
}

// ---------------------------------------------------------------------------
// Convolution kernels (3x3x3 zero-padded, stride 1 or 2; 1x1x1 heads)
// ---------------------------------------------------------------------------

namespace {

// One output row at a time: all 9 * ci contributing input rows fold into a
// register-resident accumulator, with the three x taps fused per row.
void conv3_fwd_s1(const Tensor& in, const ConvParam& p, Tensor& out) {
    const int nx = int(in.dims.nx), ny = int(in.dims.ny), nz = int(in.dims.nz);
    std::vector<double> acc(static_cast<size_t>(nx), 0.0);
    for (int o = 0; o < p.spec.co; ++o) {
        double* outc = out.channel(uint32_t(o));
        const double* wko = p.w.data() + size_t(o) * p.spec.ci * 27;
        for (int z = 0; z < nz; ++z) {
            for (int y = 0; y < ny; ++y) {
                std::fill(acc.begin(), acc.end(), p.b[size_t(o)]);
                for (int i = 0; i < p.spec.ci; ++i) {
                    const double* inc = in.channel(uint32_t(i));
                    const double* wk = wko + size_t(i) * 27;
                    for (int dz = 0; dz < 3; ++dz) {
                        const int zi = z + dz - 1;
                        if (zi < 0 || zi >= nz) continue;
                        for (int dy = 0; dy < 3; ++dy) {
                            const int yi = y + dy - 1;
                            if (yi < 0 || yi >= ny) continue;
                            const double* irow = inc + (size_t(zi) * ny + yi) * nx;
                            const double w0 = wk[(dz * 3 + dy) * 3 + 0];
                            const double w1 = wk[(dz * 3 + dy) * 3 + 1];
                            const double w2 = wk[(dz * 3 + dy) * 3 + 2];
                            acc[0] += w1 * irow[0];
                            if (nx > 1) acc[0] += w2 * irow[1];
                            for (int x = 1; x < nx - 1; ++x)
                                acc[size_t(x)] +=
                                    w0 * irow[x - 1] + w1 * irow[x] + w2 * irow[x + 1];
                            if (nx > 1)
                                acc[size_t(nx - 1)] +=
                                    w0 * irow[nx - 2] + w1 * irow[nx - 1];
                        }
                    }
                }
                std::copy(acc.begin(), acc.end(), outc + (size_t(z) * ny + y) * nx);
            }
        }
    }
}

// Full correlation with the flipped kernel, same row-accumulator shape as
// the forward pass: g_in[i](zi, yi, xi) = sum w[o][i][oz][oy][ox] *
// g_out[o](zi - oz + 1, yi - oy + 1, xi - ox + 1).
void conv3_back_input_s1(const ConvParam& p, const Tensor& g_out, Tensor& g_in) {
    const int nx = int(g_in.dims.nx), ny = int(g_in.dims.ny), nz = int(g_in.dims.nz);
    std::vector<double> acc(static_cast<size_t>(nx), 0.0);
    for (int i = 0; i < p.spec.ci; ++i) {
        double* gic = g_in.channel(uint32_t(i));
        for (int z = 0; z < nz; ++z) {
            for (int y = 0; y < ny; ++y) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int o = 0; o < p.spec.co; ++o) {
                    const double* goc = g_out.channel(uint32_t(o));
                    const double* wk = p.w.data() + (size_t(o) * p.spec.ci + i) * 27;
                    for (int dz = 0; dz < 3; ++dz) {
                        const int zo = z - (dz - 1);
                        if (zo < 0 || zo >= nz) continue;
                        for (int dy = 0; dy < 3; ++dy) {
                            const int yo = y - (dy - 1);
                            if (yo < 0 || yo >= ny) continue;
                            const double* grow = goc + (size_t(zo) * ny + yo) * nx;
                            // tap dx contributes at xo = x - (dx - 1)
                            const double w0 = wk[(dz * 3 + dy) * 3 + 0];
                            const double w1 = wk[(dz * 3 + dy) * 3 + 1];
                            const double w2 = wk[(dz * 3 + dy) * 3 + 2];
                            acc[0] += w1 * grow[0];
                            if (nx > 1) acc[0] += w0 * grow[1];
                            for (int x = 1; x < nx - 1; ++x)
                                acc[size_t(x)] +=
                                    w2 * grow[x - 1] + w1 * grow[x] + w0 * grow[x + 1];
                            if (nx > 1)
                                acc[size_t(nx - 1)] +=
                                    w2 * grow[nx - 2] + w1 * grow[nx - 1];
                        }
                    }
                }
                std::copy(acc.begin(), acc.end(), gic + (size_t(z) * ny + y) * nx);
            }
        }
    }
}

void conv3_back_weights_s1(const Tensor& in, const Tensor& g_out, const ConvSpec& spec,
                           std::vector<double>& gw, std::vector<double>& gb) {
    const int nx = int(in.dims.nx), ny = int(in.dims.ny), nz = int(in.dims.nz);
    const size_t plane = size_t(nx) * ny * nz;
    for (int o = 0; o < spec.co; ++o) {
        const double* goc = g_out.channel(uint32_t(o));
        double bs = 0.0;
        for (size_t v = 0; v < plane; ++v) bs += goc[v];
        gb[size_t(o)] += bs;
        for (int i = 0; i < spec.ci; ++i) {
            const double* inc = in.channel(uint32_t(i));
            double* wk = gw.data() + (size_t(o) * spec.ci + i) * 27;
            // one pass per (dz, dy) row pair, the three x taps fused
            for (int dz = 0; dz < 3; ++dz) {
                const int oz = dz - 1;
                const int z0 = std::max(0, -oz), z1 = nz - std::max(0, oz);
                for (int dy = 0; dy < 3; ++dy) {
                    const int oy = dy - 1;
                    const int y0 = std::max(0, -oy), y1 = ny - std::max(0, oy);
                    double a0 = 0.0, a1 = 0.0, a2 = 0.0;
                    for (int z = z0; z < z1; ++z) {
                        for (int y = y0; y < y1; ++y) {
                            const double* gorow = goc + (size_t(z) * ny + y) * nx;
                            const double* irow = inc + (size_t(z + oz) * ny + (y + oy)) * nx;
                            a1 += gorow[0] * irow[0];
                            if (nx > 1) a2 += gorow[0] * irow[1];
                            for (int x = 1; x < nx - 1; ++x) {
                                const double g = gorow[x];
                                a0 += g * irow[x - 1];
                                a1 += g * irow[x];
                                a2 += g * irow[x + 1];
                            }
                            if (nx > 1) {
                                a0 += gorow[nx - 1] * irow[nx - 2];
                                a1 += gorow[nx - 1] * irow[nx - 1];
                            }
                        }
                    }
                    wk[(dz * 3 + dy) * 3 + 0] += a0;
                    wk[(dz * 3 + dy) * 3 + 1] += a1;
                    wk[(dz * 3 + dy) * 3 + 2] += a2;
                }
            }
        }
    }
}

void conv3_fwd_s2(const Tensor& in, const ConvParam& p, Tensor& out) {
    const int nx = int(in.dims.nx), ny = int(in.dims.ny), nz = int(in.dims.nz);
    const int mx = int(out.dims.nx), my = int(out.dims.ny), mz = int(out.dims.nz);
    for (int o = 0; o < p.spec.co; ++o) {
        double* outc = out.channel(uint32_t(o));
        std::fill_n(outc, size_t(mx) * my * mz, p.b[size_t(o)]);
        for (int i = 0; i < p.spec.ci; ++i) {
            const double* inc = in.channel(uint32_t(i));
            const double* wk = p.w.data() + (size_t(o) * p.spec.ci + i) * 27;
            for (int zo = 0; zo < mz; ++zo)
                for (int yo = 0; yo < my; ++yo) {
                    double* orow = outc + (size_t(zo) * my + yo) * mx;
                    for (int xo = 0; xo < mx; ++xo) {
                        double acc = 0.0;
                        for (int dz = 0; dz < 3; ++dz) {
                            const int zi = 2 * zo + dz - 1;
                            if (zi < 0 || zi >= nz) continue;
                            for (int dy = 0; dy < 3; ++dy) {
                                const int yi = 2 * yo + dy - 1;
                                if (yi < 0 || yi >= ny) continue;
                                const double* irow = inc + (size_t(zi) * ny + yi) * nx;
                                for (int dx = 0; dx < 3; ++dx) {
                                    const int xi = 2 * xo + dx - 1;
                                    if (xi < 0 || xi >= nx) continue;
                                    acc += wk[(dz * 3 + dy) * 3 + dx] * irow[xi];
                                }
                            }
                        }
                        orow[xo] += acc;
                    }
                }
        }
    }
}

void conv3_back_s2(const Tensor& in, const ConvParam& p, const Tensor& g_out, Tensor& g_in,
                   std::vector<double>& gw, std::vector<double>& gb) {
    const int nx = int(in.dims.nx), ny = int(in.dims.ny), nz = int(in.dims.nz);
    const int mx = int(g_out.dims.nx), my = int(g_out.dims.ny), mz = int(g_out.dims.nz);
    g_in.zero();
    for (int o = 0; o < p.spec.co; ++o) {
        const double* goc = g_out.channel(uint32_t(o));
        double bs = 0.0;
        for (size_t v = 0; v < size_t(mx) * my * mz; ++v) bs += goc[v];
        gb[size_t(o)] += bs;
        for (int i = 0; i < p.spec.ci; ++i) {
            const double* inc = in.channel(uint32_t(i));
            double* gic = g_in.channel(uint32_t(i));
            const double* wk = p.w.data() + (size_t(o) * p.spec.ci + i) * 27;
            double* gwk = gw.data() + (size_t(o) * p.spec.ci + i) * 27;
            for (int zo = 0; zo < mz; ++zo)
                for (int yo = 0; yo < my; ++yo) {
                    const double* gorow = goc + (size_t(zo) * my + yo) * mx;
                    for (int xo = 0; xo < mx; ++xo) {
                        const double g = gorow[xo];
                        if (g == 0.0) continue;
                        for (int dz = 0; dz < 3; ++dz) {
                            const int zi = 2 * zo + dz - 1;
                            if (zi < 0 || zi >= nz) continue;
                            for (int dy = 0; dy < 3; ++dy) {
                                const int yi = 2 * yo + dy - 1;
                                if (yi < 0 || yi >= ny) continue;
                                const size_t row = (size_t(zi) * ny + yi) * nx;
                                for (int dx = 0; dx < 3; ++dx) {
                                    const int xi = 2 * xo + dx - 1;
                                    if (xi < 0 || xi >= nx) continue;
                                    const size_t wi = size_t(dz * 3 + dy) * 3 + size_t(dx);
                                    gic[row + xi] += wk[wi] * g;
                                    gwk[wi] += g * inc[row + xi];
                                }
                            }
                        }
                    }
                }
        }
    }
}

void conv1_fwd(const Tensor& in, const ConvParam& p, Tensor& out) {
    const size_t n = in.dims.voxels();
    for (int o = 0; o < p.spec.co; ++o) {
        double* outc = out.channel(uint32_t(o));
        std::fill_n(outc, n, p.b[size_t(o)]);
        for (int i = 0; i < p.spec.ci; ++i) {
            const double w = p.w[size_t(o) * p.spec.ci + i];
            const double* inc = in.channel(uint32_t(i));
            for (size_t v = 0; v < n; ++v) outc[v] += w * inc[v];
        }
    }
}

void conv1_back_input(const ConvParam& p, const Tensor& g_out, Tensor& g_in) {
    const size_t n = g_in.dims.voxels();
    g_in.zero();
    for (int o = 0; o < p.spec.co; ++o) {
        const double* goc = g_out.channel(uint32_t(o));
        for (int i = 0; i < p.spec.ci; ++i) {
            const double w = p.w[size_t(o) * p.spec.ci + i];
            double* gic = g_in.channel(uint32_t(i));
            for (size_t v = 0; v < n; ++v) gic[v] += w * goc[v];
        }
    }
}

void conv1_back_weights(const Tensor& in, const Tensor& g_out, const ConvSpec& spec,
                        std::vector<double>& gw, std::vector<double>& gb) {
    const size_t n = in.dims.voxels();
    for (int o = 0; o < spec.co; ++o) {
        const double* goc = g_out.channel(uint32_t(o));
        double bs = 0.0;
        for (size_t v = 0; v < n; ++v) bs += goc[v];
        gb[size_t(o)] += bs;
        for (int i = 0; i < spec.ci; ++i) {
            const double* inc = in.channel(uint32_t(i));
            double acc = 0.0;
            for (size_t v = 0; v < n; ++v) acc += goc[v] * inc[v];
            gw[size_t(o) * spec.ci + i] += acc;
        }
    }
}

Tensor relu(const Tensor& pre) {
    Tensor out(pre.channels, pre.dims);
    for (size_t i = 0; i < pre.v.size(); ++i) out.v[i] = pre.v[i] > 0.0 ? pre.v[i] : 0.0;
    return out;
}

void relu_back(const Tensor& pre, Tensor& g) {
    for (size_t i = 0; i < g.v.size(); ++i)
        if (pre.v[i] <= 0.0) g.v[i] = 0.0;
}

Tensor upsample2(const Tensor& in) {
    const Dims od{in.dims.nx * 2, in.dims.ny * 2, in.dims.nz * 2};
    Tensor out(in.channels, od);
    const int nx = int(od.nx), ny = int(od.ny), nz = int(od.nz);
    for (uint32_t c = 0; c < in.channels; ++c) {
        const double* inc = in.channel(c);
        double* outc = out.channel(c);
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y) {
                const double* irow =
                    inc + (size_t(z >> 1) * in.dims.ny + uint32_t(y >> 1)) * in.dims.nx;
                double* orow = outc + (size_t(z) * ny + y) * nx;
                for (int x = 0; x < nx; ++x) orow[x] = irow[x >> 1];
            }
    }
    return out;
}

Tensor upsample2_back(const Tensor& g_out, const Dims& in_dims) {
    Tensor g_in(g_out.channels, in_dims);
    const int nx = int(g_out.dims.nx), ny = int(g_out.dims.ny), nz = int(g_out.dims.nz);
    for (uint32_t c = 0; c < g_out.channels; ++c) {
        const double* goc = g_out.channel(c);
        double* gic = g_in.channel(c);
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y) {
                const double* gorow = goc + (size_t(z) * ny + y) * nx;
                double* girow = gic + (size_t(z >> 1) * in_dims.ny + uint32_t(y >> 1)) * in_dims.nx;
                for (int x = 0; x < nx; ++x) girow[x >> 1] += gorow[x];
            }
    }
    return g_in;
}

Tensor concat(const Tensor& a, const Tensor& b) {
    Tensor out(a.channels + b.channels, a.dims);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + ptrdiff_t(a.v.size()));
    return out;
}

Dims half(const Dims& d) { return {d.nx / 2, d.ny / 2, d.nz / 2}; }

}  // namespace

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

ForwardState forward(const Parameters& params, const Tensor& image) {
    const NetConfig& cfg = params.cfg;
    require(image.channels == cfg.in_channels, ErrKind::shape,
            "forward: image has " + std::to_string(image.channels) + " channels, net expects " +
                std::to_string(cfg.in_channels));
    const int f = cfg.downsample_factor();
    require(image.dims.nx % f == 0 && image.dims.ny % f == 0 && image.dims.nz % f == 0,
            ErrKind::shape,
            "forward: dims " + to_string(image.dims) + " not divisible by " + std::to_string(f));
    require(image.dims.nx >= uint32_t(f) && image.dims.ny >= uint32_t(f) &&
                image.dims.nz >= uint32_t(f),
            ErrKind::shape, "forward: dims too small for depth");

    ForwardState s;
    s.input = image;
    const int depth = cfg.depth;
    s.enc_pre0.resize(size_t(depth));
    s.enc_post0.resize(size_t(depth));
    s.enc_pre1.resize(size_t(depth));
    s.enc_post1.resize(size_t(depth));
    s.down_pre.resize(size_t(std::max(0, depth - 1)));
    s.down_post.resize(size_t(std::max(0, depth - 1)));

    const Tensor* cur = &s.input;
    Dims d = image.dims;
    for (int l = 0; l < depth; ++l) {
        const int w = width_at(cfg, l);
        const ConvParam& c0 = params.convs[idx_enc(cfg, l, 0)];
        const ConvParam& c1 = params.convs[idx_enc(cfg, l, 1)];
        s.enc_pre0[size_t(l)] = Tensor(uint32_t(w), d);
        conv3_fwd_s1(*cur, c0, s.enc_pre0[size_t(l)]);
        s.enc_post0[size_t(l)] = relu(s.enc_pre0[size_t(l)]);
        s.enc_pre1[size_t(l)] = Tensor(uint32_t(w), d);
        conv3_fwd_s1(s.enc_post0[size_t(l)], c1, s.enc_pre1[size_t(l)]);
        s.enc_post1[size_t(l)] = relu(s.enc_pre1[size_t(l)]);
        if (l + 1 < depth) {
            const ConvParam& dn = params.convs[idx_down(cfg, l)];
            d = half(d);
            s.down_pre[size_t(l)] = Tensor(uint32_t(width_at(cfg, l + 1)), d);
            conv3_fwd_s2(s.enc_post1[size_t(l)], dn, s.down_pre[size_t(l)]);
            s.down_post[size_t(l)] = relu(s.down_pre[size_t(l)]);
            cur = &s.down_post[size_t(l)];
        }
    }

    const size_t n_dec = size_t(std::max(0, depth - 1));
    s.ups.resize(n_dec);
    s.up_pre.resize(n_dec);
    s.up_post.resize(n_dec);
    s.cat.resize(n_dec);
    s.dec_pre0.resize(n_dec);
    s.dec_post0.resize(n_dec);
    s.dec_pre1.resize(n_dec);
    s.dec_post1.resize(n_dec);

    const Tensor* deep = &s.enc_post1[size_t(depth - 1)];
    for (int l = depth - 2; l >= 0; --l) {
        const int w = width_at(cfg, l);
        const Dims od = s.enc_post1[size_t(l)].dims;
        s.ups[size_t(l)] = upsample2(*deep);
        const ConvParam& up = params.convs[idx_dec(cfg, l, 0)];
        s.up_pre[size_t(l)] = Tensor(uint32_t(w), od);
        conv3_fwd_s1(s.ups[size_t(l)], up, s.up_pre[size_t(l)]);
        s.up_post[size_t(l)] = relu(s.up_pre[size_t(l)]);
        s.cat[size_t(l)] = concat(s.up_post[size_t(l)], s.enc_post1[size_t(l)]);
        const ConvParam& c0 = params.convs[idx_dec(cfg, l, 1)];
        s.dec_pre0[size_t(l)] = Tensor(uint32_t(w), od);
        conv3_fwd_s1(s.cat[size_t(l)], c0, s.dec_pre0[size_t(l)]);
        s.dec_post0[size_t(l)] = relu(s.dec_pre0[size_t(l)]);
        const ConvParam& c1 = params.convs[idx_dec(cfg, l, 2)];
        s.dec_pre1[size_t(l)] = Tensor(uint32_t(w), od);
        conv3_fwd_s1(s.dec_post0[size_t(l)], c1, s.dec_pre1[size_t(l)]);
        s.dec_post1[size_t(l)] = relu(s.dec_pre1[size_t(l)]);
        deep = &s.dec_post1[size_t(l)];
    }

    s.features = *deep;
    const ConvParam& seg = params.convs[idx_seg(cfg)];
    s.seg_logits = Tensor(cfg.num_classes, image.dims);
    conv1_fwd(s.features, seg, s.seg_logits);
    const ConvParam& unc = params.convs[idx_unc(cfg)];
    s.unc_logit = Tensor(1, image.dims);
    conv1_fwd(s.features, unc, s.unc_logit);
    s.unc_prob = Tensor(1, image.dims);
    for (size_t i = 0; i < s.unc_logit.v.size(); ++i)
        s.unc_prob.v[i] = 1.0 / (1.0 + std::exp(-s.unc_logit.v[i]));
    return s;
}

ForwardState forward(const Parameters& params, const VoxelGrid& image) {
    return forward(params, Tensor::from_grid(image));
}

NetOutput output_of(const ForwardState& state) {
    return {state.seg_logits.to_grid(), state.unc_logit.to_grid(), state.unc_prob.to_grid()};
}

Tensor unc_head_forward(const Parameters& params, const Tensor& features) {
    const ConvParam& unc = params.convs[idx_unc(params.cfg)];
    require(int(features.channels) == unc.spec.ci, ErrKind::shape,
            "unc_head_forward: feature channels mismatch");
    Tensor logit(1, features.dims);
    conv1_fwd(features, unc, logit);
    Tensor prob(1, features.dims);
    for (size_t i = 0; i < logit.v.size(); ++i) prob.v[i] = 1.0 / (1.0 + std::exp(-logit.v[i]));
    return prob;
}

Gradients backward(const Parameters& params, const ForwardState& state,
                   const Tensor& d_seg_logits, const Tensor& d_unc_prob) {
    const NetConfig& cfg = params.cfg;
    const int depth = cfg.depth;
    Gradients g;
    g.init_like(params);

    // uncertainty head: gradients stop at the feature boundary
    if (!d_unc_prob.v.empty()) {
        require(d_unc_prob.dims == state.unc_prob.dims && d_unc_prob.channels == 1, ErrKind::shape,
                "backward: d_unc_prob shape mismatch");
        Tensor d_logit(1, state.unc_logit.dims);
        for (size_t i = 0; i < d_logit.v.size(); ++i) {
            const double p = state.unc_prob.v[i];
            d_logit.v[i] = d_unc_prob.v[i] * p * (1.0 - p);
        }
        const size_t ui = idx_unc(cfg);
        conv1_back_weights(state.features, d_logit, params.convs[ui].spec, g.w[ui], g.b[ui]);
    }

    Tensor d_feat(state.features.channels, state.features.dims);
    if (!d_seg_logits.v.empty()) {
        require(d_seg_logits.dims == state.seg_logits.dims &&
                    d_seg_logits.channels == state.seg_logits.channels,
                ErrKind::shape, "backward: d_seg_logits shape mismatch");
        const size_t si = idx_seg(cfg);
        conv1_back_weights(state.features, d_seg_logits, params.convs[si].spec, g.w[si], g.b[si]);
        conv1_back_input(params.convs[si], d_seg_logits, d_feat);
    }

    // grad accumulators on encoder level outputs
    std::vector<Tensor> d_enc_out;
    d_enc_out.resize(size_t(depth));
    for (int l = 0; l < depth; ++l)
        d_enc_out[size_t(l)] =
            Tensor(state.enc_post1[size_t(l)].channels, state.enc_post1[size_t(l)].dims);

    if (depth == 1) {
        for (size_t i = 0; i < d_feat.v.size(); ++i) d_enc_out[0].v[i] += d_feat.v[i];
    } else {
        Tensor d_dec = std::move(d_feat);  // grad w.r.t. dec_post1[l], starting at l = 0
        for (int l = 0; l <= depth - 2; ++l) {
            const size_t sl = size_t(l);
            relu_back(state.dec_pre1[sl], d_dec);
            const size_t i_c1 = idx_dec(cfg, l, 2);
            conv3_back_weights_s1(state.dec_post0[sl], d_dec, params.convs[i_c1].spec, g.w[i_c1],
                                  g.b[i_c1]);
            Tensor d0(state.dec_post0[sl].channels, state.dec_post0[sl].dims);
            conv3_back_input_s1(params.convs[i_c1], d_dec, d0);

            relu_back(state.dec_pre0[sl], d0);
            const size_t i_c0 = idx_dec(cfg, l, 1);
            conv3_back_weights_s1(state.cat[sl], d0, params.convs[i_c0].spec, g.w[i_c0], g.b[i_c0]);
            Tensor d_cat(state.cat[sl].channels, state.cat[sl].dims);
            conv3_back_input_s1(params.convs[i_c0], d0, d_cat);

            // split the concat: first half is the up path, second the skip
            const uint32_t w = state.up_post[sl].channels;
            Tensor d_up(w, d_cat.dims);
            const size_t voxels = d_cat.dims.voxels();
            std::copy_n(d_cat.v.begin(), size_t(w) * voxels, d_up.v.begin());
            for (size_t i = 0; i < size_t(w) * voxels; ++i)
                d_enc_out[sl].v[i] += d_cat.v[size_t(w) * voxels + i];

            relu_back(state.up_pre[sl], d_up);
            const size_t i_up = idx_dec(cfg, l, 0);
            conv3_back_weights_s1(state.ups[sl], d_up, params.convs[i_up].spec, g.w[i_up],
                                  g.b[i_up]);
            Tensor d_ups(state.ups[sl].channels, state.ups[sl].dims);
            conv3_back_input_s1(params.convs[i_up], d_up, d_ups);
            Tensor d_deep = upsample2_back(d_ups, half(d_ups.dims));

            if (l + 1 <= depth - 2) {
                d_dec = std::move(d_deep);
            } else {
                for (size_t i = 0; i < d_deep.v.size(); ++i)
                    d_enc_out[size_t(depth - 1)].v[i] += d_deep.v[i];
            }
        }
    }

    for (int l = depth - 1; l >= 0; --l) {
        const size_t sl = size_t(l);
        Tensor d_out = std::move(d_enc_out[sl]);
        relu_back(state.enc_pre1[sl], d_out);
        const size_t i_c1 = idx_enc(cfg, l, 1);
        conv3_back_weights_s1(state.enc_post0[sl], d_out, params.convs[i_c1].spec, g.w[i_c1],
                              g.b[i_c1]);
        Tensor d0(state.enc_post0[sl].channels, state.enc_post0[sl].dims);
        conv3_back_input_s1(params.convs[i_c1], d_out, d0);

        relu_back(state.enc_pre0[sl], d0);
        const size_t i_c0 = idx_enc(cfg, l, 0);
        const Tensor& conv0_in = (l == 0) ? state.input : state.down_post[size_t(l - 1)];
        conv3_back_weights_s1(conv0_in, d0, params.convs[i_c0].spec, g.w[i_c0], g.b[i_c0]);
        if (l > 0) {
            Tensor d_in(conv0_in.channels, conv0_in.dims);
            conv3_back_input_s1(params.convs[i_c0], d0, d_in);
            relu_back(state.down_pre[size_t(l - 1)], d_in);
            const size_t i_dn = idx_down(cfg, l - 1);
            Tensor d_prev(state.enc_post1[size_t(l - 1)].channels,
                          state.enc_post1[size_t(l - 1)].dims);
            conv3_back_s2(state.enc_post1[size_t(l - 1)], params.convs[i_dn], d_in, d_prev,
                          g.w[i_dn], g.b[i_dn]);
            for (size_t i = 0; i < d_prev.v.size(); ++i) d_enc_out[size_t(l - 1)].v[i] += d_prev.v[i];
        }
    }

    return g;
}

LabelVolume argmax_labels(const Tensor& seg_logits, const std::string& schema_id) {
    LabelVolume lv(seg_logits.dims, 0, schema_id);
    const size_t n = seg_logits.dims.voxels();
    for (size_t v = 0; v < n; ++v) {
        uint16_t best = 0;
        double best_val = seg_logits.v[v];
        for (uint32_t c = 1; c < seg_logits.channels; ++c) {
            const double val = seg_logits.v[size_t(c) * n + v];
            if (val > best_val) {
                best_val = val;
                best = uint16_t(c);
            }
        }
        lv.labels[v] = best;
    }
    return lv;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

VoxelGrid flat_grid(const std::vector<double>& v) {
    VoxelGrid g(Dims{uint32_t(std::max<size_t>(v.size(), 1)), 1, 1}, 1);
    for (size_t i = 0; i < v.size(); ++i) g.data[i] = float(v[i]);
    return g;
}

void load_flat(const std::string& path, std::vector<double>& out, size_t expected) {
    const VoxelGrid g = read_vxv_grid(path);
    require(g.data.size() >= expected, ErrKind::length, path + ": tensor shorter than expected");
    out.resize(expected);
    for (size_t i = 0; i < expected; ++i) out[i] = g.data[i];
}

}  // namespace

void save_params(const Parameters& params, const std::string& dir) {
    fs::create_directories(dir);
    nlohmann::ordered_json index;
    index["tensors"] = nlohmann::ordered_json::array();
    for (const auto& c : params.convs) {
        const std::string wfile = c.spec.name + ".w.vxv";
        const std::string bfile = c.spec.name + ".b.vxv";
        write_vxv(flat_grid(c.w), (fs::path(dir) / wfile).string());
        write_vxv(flat_grid(c.b), (fs::path(dir) / bfile).string());
        index["tensors"].push_back({{"name", c.spec.name + ".w"},
                                    {"partition", part_name(c.spec.part)},
                                    {"shape", {c.spec.co, c.spec.ci, c.spec.k, c.spec.k, c.spec.k}},
                                    {"file", wfile}});
        index["tensors"].push_back({{"name", c.spec.name + ".b"},
                                    {"partition", part_name(c.spec.part)},
                                    {"shape", {c.spec.co}},
                                    {"file", bfile}});
    }
    std::ofstream out(fs::path(dir) / "tensors.json", std::ios::binary | std::ios::trunc);
    require(out.good(), ErrKind::io, "cannot write tensor index in " + dir);
    out << index.dump(2) << "\n";
    require(out.good(), ErrKind::io, "short write on tensor index in " + dir);
}

Parameters load_params(const NetConfig& cfg, const std::string& dir) {
    Parameters p;
    p.cfg = cfg;
    for (const ConvSpec& spec : make_conv_specs(cfg)) {
        ConvParam cp;
        cp.spec = spec;
        load_flat((fs::path(dir) / (spec.name + ".w.vxv")).string(), cp.w, spec.weight_count());
        load_flat((fs::path(dir) / (spec.name + ".b.vxv")).string(), cp.b, size_t(spec.co));
        p.convs.push_back(std::move(cp));
    }
    return p;
}

}  // namespace uqseg
