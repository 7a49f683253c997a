#include <cmath>

#include "doctest.h"
#include "test_helpers.hpp"
#include "uqseg/error.hpp"
#include "uqseg/losses.hpp"
#include "uqseg/net.hpp"
#include "uqseg/unctarget.hpp"

using namespace uqseg;
using namespace uqseg::test;

namespace {

Tensor random_input(Rng& rng, uint32_t channels, Dims d) {
    Tensor t(channels, d);
    for (auto& v : t.v) v = rng.uniform(-1.0, 1.0);
    return t;
}

std::vector<uint16_t> random_gt(Rng& rng, Dims d, uint32_t k) {
    std::vector<uint16_t> gt(d.voxels());
    for (auto& g : gt) g = uint16_t(rng.below(k));
    return gt;
}

// |a - f| <= rtol * max(|a|, |f|) + atol
bool grad_close(double analytic, double fd, double rtol = 1e-3, double atol = 1e-6) {
    return std::fabs(analytic - fd) <= rtol * std::max(std::fabs(analytic), std::fabs(fd)) + atol;
}

// Central differences start at h = 1e-3. A coordinate whose +-h interval
// straddles a ReLU kink carries O(1) quadrature error there, so on mismatch
// the step shrinks; a genuinely wrong analytic gradient fails at every h.
template <typename LossFn>
bool fd_matches(const Parameters& params, size_t i, double analytic, LossFn&& loss) {
    for (const double h : {1e-3, 1e-5}) {
        Parameters up = params, dn = params;
        up.flat_add(i, h);
        dn.flat_add(i, -h);
        const double fd = (loss(up) - loss(dn)) / (2.0 * h);
        if (grad_close(analytic, fd)) return true;
    }
    return false;
}

struct TinyProblem {
    NetConfig cfg;
    Parameters params;
    Tensor image;
    std::vector<uint16_t> gt;
    std::vector<uint16_t> fg;
    MaskVolume mask;
    std::vector<double> target;

    static TinyProblem make(uint64_t seed, Dims d = {6, 6, 6}) {
        TinyProblem p;
        p.cfg = {1, 2, 2, 2, seed};
        p.params = init_params(p.cfg);
        Rng rng(seed + 1000);
        // move biases off zero so no preactivation sits exactly on the ReLU
        // kink (dead input neighborhoods make that exact with zero biases)
        for (auto& c : p.params.convs)
            for (auto& b : c.b) b = double(float(rng.uniform(-0.05, 0.05)));
        p.image = random_input(rng, 1, d);
        p.gt = random_gt(rng, d, 2);
        p.fg = {1};
        p.mask = MaskVolume(d);
        for (auto& m : p.mask.mask) m = rng.uniform() < 0.5 ? 1 : 0;
        p.target.resize(d.voxels());
        for (auto& t : p.target) t = rng.uniform() < 0.6 ? 0.0 : rng.uniform();
        return p;
    }

    double seg_loss(const Parameters& pr) const {
        return dice_ce(forward(pr, image).seg_logits, gt, fg, 1e-6);
    }

    // uncertainty loss under the stop-gradient contract: the feature tensor
    // stays frozen at the operating point
    double unc_loss(const Parameters& pr, const Tensor& frozen_features, double lr_w,
                    double lc_w) const {
        const Tensor u = unc_head_forward(pr, frozen_features);
        const double r =
            rmsd_masked(u.v.data(), target.data(), mask.mask.data(), u.v.size(), 1e-6);
        const double c =
            pearson_masked(u.v.data(), target.data(), mask.mask.data(), u.v.size(), 1e-6);
        return lr_w * r + lc_w * (1.0 - c);
    }

    Gradients analytic_grads(double lr_w, double lc_w, bool seg, bool unc) const {
        const ForwardState fwd = forward(params, image);
        Tensor d_seg, d_unc;
        if (seg) dice_ce_grad(fwd.seg_logits, gt, fg, 1e-6, d_seg);
        if (unc) {
            d_unc = Tensor(1, fwd.unc_prob.dims);
            rmsd_masked_grad(fwd.unc_prob.v.data(), target.data(), mask.mask.data(),
                             d_unc.v.size(), 1e-6, lr_w, d_unc.v.data());
            pearson_masked_grad(fwd.unc_prob.v.data(), target.data(), mask.mask.data(),
                                d_unc.v.size(), 1e-6, -lc_w, d_unc.v.data());
        }
        return backward(params, fwd, d_seg, d_unc);
    }
};

}  // namespace

TEST_CASE("init_params is deterministic with zero biases") {
    const NetConfig cfg{4, 4, 3, 8, 11};
    const Parameters a = init_params(cfg);
    const Parameters b = init_params(cfg);
    REQUIRE(a.convs.size() == b.convs.size());
    for (size_t i = 0; i < a.convs.size(); ++i) {
        REQUIRE(a.convs[i].w == b.convs[i].w);
        for (double bias : a.convs[i].b) REQUIRE(bias == 0.0);
    }

    NetConfig other = cfg;
    other.seed = 12;
    const Parameters c = init_params(other);
    bool any_diff = false;
    for (size_t i = 0; i < a.convs.size() && !any_diff; ++i) any_diff = a.convs[i].w != c.convs[i].w;
    REQUIRE(any_diff);
}

TEST_CASE("parameter partition covers trunk and both heads") {
    const Parameters p = init_params({1, 3, 2, 2, 0});
    size_t trunk = 0, seg = 0, unc = 0;
    for (const auto& c : p.convs) {
        if (c.spec.part == Part::trunk) ++trunk;
        if (c.spec.part == Part::seg_head) ++seg;
        if (c.spec.part == Part::unc_head) ++unc;
    }
    REQUIRE(trunk == p.convs.size() - 2);
    REQUIRE(seg == 1);
    REQUIRE(unc == 1);
}

TEST_CASE("forward shape contract and logistic range") {
    const NetConfig cfg{1, 4, 3, 4, 5};
    const Parameters p = init_params(cfg);
    Rng rng(2);
    const Tensor img = random_input(rng, 1, {16, 16, 16});
    const ForwardState s = forward(p, img);
    REQUIRE(s.seg_logits.channels == 4);
    REQUIRE(s.seg_logits.dims == img.dims);
    REQUIRE(s.unc_prob.channels == 1);
    REQUIRE(s.unc_prob.dims == img.dims);
    for (double v : s.unc_prob.v) {
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("forward output dims equal input dims across random valid shapes") {
    Rng rng(14);
    for (int trial = 0; trial < 5; ++trial) {
        const NetConfig cfg{2, 3, 2, 2, uint64_t(trial)};
        const Parameters p = init_params(cfg);
        const Dims d{uint32_t(2 + 2 * rng.below(5)), uint32_t(2 + 2 * rng.below(5)),
                     uint32_t(2 + 2 * rng.below(5))};
        const Tensor img = random_input(rng, 2, d);
        const ForwardState s = forward(p, img);
        REQUIRE(s.seg_logits.dims == d);
        REQUIRE(s.unc_prob.dims == d);
    }
}

TEST_CASE("forward rejects bad shapes") {
    const Parameters p = init_params({2, 3, 3, 4, 0});
    Rng rng(3);

    SUBCASE("wrong channel count") {
        const Tensor img = random_input(rng, 1, {8, 8, 8});
        REQUIRE_THROWS_AS(forward(p, img), Error);
    }

    SUBCASE("dims not divisible by the downsample factor") {
        const Tensor img = random_input(rng, 2, {6, 6, 6});  // depth 3 needs /4
        REQUIRE_THROWS_AS(forward(p, img), Error);
    }
}

TEST_CASE("doubling unc_head weights changes unc_prob but not seg_logits") {
    const NetConfig cfg{1, 3, 2, 3, 21};
    Parameters p = init_params(cfg);
    Rng rng(4);
    const Tensor img = random_input(rng, 1, {8, 8, 8});
    const ForwardState before = forward(p, img);
    for (auto& c : p.convs)
        if (c.spec.part == Part::unc_head) {
            for (auto& w : c.w) w *= 2.0;
            for (auto& b : c.b) b += 0.1;
        }
    const ForwardState after = forward(p, img);
    REQUIRE(before.seg_logits.v == after.seg_logits.v);
    REQUIRE(before.unc_prob.v != after.unc_prob.v);
}

TEST_CASE("zero uncertainty gradient leaves unc_head gradients zero") {
    const TinyProblem p = TinyProblem::make(8);
    const Gradients g = p.analytic_grads(0.0, 0.0, true, false);
    for (size_t i = 0; i < p.params.convs.size(); ++i) {
        if (p.params.convs[i].spec.part != Part::unc_head) continue;
        for (double v : g.w[i]) REQUIRE(v == 0.0);
        for (double v : g.b[i]) REQUIRE(v == 0.0);
    }
}

TEST_CASE("segmentation gradients match central finite differences") {
    const TinyProblem p = TinyProblem::make(42);
    const Gradients g = p.analytic_grads(0.0, 0.0, true, false);
    const size_t n = p.params.flat_size();
    size_t checked = 0;
    for (size_t i = 0; i < n; ++i) {
        if (p.params.flat_part(i) == Part::unc_head) continue;
        const double analytic = g.flat_get(p.params, i);
        INFO("flat index ", i, " analytic ", analytic);
        REQUIRE(fd_matches(p.params, i, analytic,
                           [&](const Parameters& pr) { return p.seg_loss(pr); }));
        ++checked;
    }
    REQUIRE(checked > 100);
}

TEST_CASE("uncertainty gradients stop at the feature boundary") {
    const TinyProblem p = TinyProblem::make(3);
    const double lr_w = 0.1, lc_w = 0.01;
    const ForwardState fwd = forward(p.params, p.image);
    const Tensor frozen = fwd.features;
    const Gradients g = p.analytic_grads(lr_w, lc_w, false, true);

    const double h = 1e-3;
    for (size_t i = 0; i < p.params.flat_size(); ++i) {
        const Part part = p.params.flat_part(i);
        Parameters up = p.params, dn = p.params;
        up.flat_add(i, h);
        dn.flat_add(i, -h);
        const double fd =
            (p.unc_loss(up, frozen, lr_w, lc_w) - p.unc_loss(dn, frozen, lr_w, lc_w)) / (2.0 * h);
        const double analytic = g.flat_get(p.params, i);
        if (part == Part::unc_head) {
            INFO("unc flat index ", i, " analytic ", analytic, " fd ", fd);
            REQUIRE(grad_close(analytic, fd));
        } else {
            // the isolation contract: both the implementation and the
            // stop-gradient oracle see exactly zero
            REQUIRE(analytic == 0.0);
            REQUIRE(std::fabs(fd) <= 1e-6);
        }
    }
}

TEST_CASE("argmax_labels breaks ties toward the lower class id") {
    Tensor logits(3, {2, 1, 1});
    // voxel 0: classes 0/1 tie at 1.0; voxel 1: class 2 wins
    logits.v = {1.0, 0.0, 1.0, 0.0, 0.5, 2.0};
    const LabelVolume lv = argmax_labels(logits);
    REQUIRE(lv.labels[0] == 0);
    REQUIRE(lv.labels[1] == 2);
}

TEST_CASE("checkpoint round trip restores parameters exactly") {
    const std::string dir = scratch_dir("net_ckpt");
    const NetConfig cfg{2, 4, 3, 4, 77};
    Parameters p = init_params(cfg);
    // push the parameters away from init to make the test non-trivial
    Rng rng(5);
    for (auto& c : p.convs)
        for (auto& w : c.w) w = double(float(w + rng.uniform(-0.1, 0.1)));
    save_params(p, dir);
    const Parameters q = load_params(cfg, dir);
    for (size_t i = 0; i < p.convs.size(); ++i) {
        REQUIRE(p.convs[i].w == q.convs[i].w);
        REQUIRE(p.convs[i].b == q.convs[i].b);
    }

    Rng rng2(6);
    const Tensor img = random_input(rng2, 2, {8, 8, 8});
    REQUIRE(forward(p, img).seg_logits.v == forward(q, img).seg_logits.v);
}

TEST_CASE("depth-1 degenerate net still honors the shape contract") {
    const NetConfig cfg{1, 2, 1, 3, 9};
    const Parameters p = init_params(cfg);
    Rng rng(7);
    const Tensor img = random_input(rng, 1, {5, 4, 3});
    const ForwardState s = forward(p, img);
    REQUIRE(s.seg_logits.dims == img.dims);

    // gradients still flow
    const TinyProblem tiny = [&] {
        TinyProblem t;
        t.cfg = cfg;
        t.params = p;
        t.image = img;
        Rng r(8);
        t.gt = random_gt(r, img.dims, 2);
        t.fg = {1};
        return t;
    }();
    const Gradients g = tiny.analytic_grads(0, 0, true, false);
    double norm = 0.0;
    for (const auto& w : g.w)
        for (double v : w) norm += v * v;
    REQUIRE(norm > 0.0);
}
