#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tailor/digest.hpp"
#include "tailor/errors.hpp"
#include "tailor/rng.hpp"
#include "tailor/tensor.hpp"

namespace tailor {

// Frozen differentiable image source: Gaussian noise -> mapping network ->
// truncated per-layer codes -> staged procedural avatar renderer. The
// renderer replaces learned convolutions with soft-rasterized geometry so
// it stays exact, fast, and analytically parsable, while keeping the same
// interface a style-based generator exposes: per-layer codes in, per-stage
// feature maps plus an image out.

enum class Group { coarse, medium, fine };

struct GroupRanges {
    std::size_t n_coarse = 4, n_medium = 4, n_fine = 8;

    std::size_t total() const { return n_coarse + n_medium + n_fine; }
    std::size_t begin(Group g) const {
        switch (g) {
            case Group::coarse: return 0;
            case Group::medium: return n_coarse;
            case Group::fine: return n_coarse + n_medium;
        }
        return 0;
    }
    std::size_t end(Group g) const {
        switch (g) {
            case Group::coarse: return n_coarse;
            case Group::medium: return n_coarse + n_medium;
            case Group::fine: return total();
        }
        return 0;
    }
    std::size_t size(Group g) const { return end(g) - begin(g); }
};

inline constexpr std::array<Group, 3> kAllGroups{Group::coarse, Group::medium, Group::fine};

inline const char* group_name(Group g) {
    switch (g) {
        case Group::coarse: return "coarse";
        case Group::medium: return "medium";
        case Group::fine: return "fine";
    }
    return "?";
}

// The extended latent representation: one code per generator layer plus the
// coarse/medium/fine group boundaries.
struct LatentStack {
    Tensor codes;  // [N, D]
    GroupRanges groups;

    Tensor group_rows(Group g) const { return slice_rows(codes, groups.begin(g), groups.end(g)); }
};

// Region labels of the analytic parser. The compositing stack below is an
// exact partition over these.
enum class RegionLabel : std::size_t {
    background = 0,
    hair = 1,
    face = 2,
    arms = 3,
    legs = 4,
    upper_clothes = 5,
    lower_clothes = 6,
};
inline constexpr std::size_t kRegionCount = 7;

struct RegionMaps {
    Tensor soft;                       // [7, H, W], pointwise in [0,1], sums to 1
    std::vector<std::uint8_t> binary;  // H*W argmax labels
    std::size_t height = 0, width = 0;
};

enum class BodyPart { upper, lower };
enum class EditKind { shape, texture };

struct EditTarget {
    BodyPart body_part = BodyPart::upper;
    EditKind edit_kind = EditKind::texture;
};

// Decoded semantic parameters. Every field is a tensor inside its declared
// range (squashing sigmoids enforce this), so downstream geometry stays
// differentiable with respect to the latent stack.
struct AvatarParams {
    // body (coarse group only)
    Tensor torso_width;    // [1], height units
    Tensor torso_length;   // [1]
    Tensor leg_separation; // [1]
    Tensor head_radius;    // [1]
    // garment shape (medium group only)
    Tensor sleeve_length;  // [1] in [0,1]
    Tensor pant_length;    // [1] in [0,1]
    Tensor skirt_blend;    // [1] in [0,1], 0 = pants silhouette, 1 = skirt
    // colors (fine group only), each [3] in [0,1]
    Tensor upper_color;
    Tensor lower_color;
    Tensor skin_color;
    Tensor hair_color;
    Tensor background_color;
};

// Renderer stage ids. Stage 2 (region stack) and stage 3 (pre-smoothing
// paint) accept feature injection; stage 1 is a constant coordinate field.
inline constexpr int kStageCoords = 1;
inline constexpr int kStageRegions = 2;
inline constexpr int kStagePaint = 3;

struct FeatureInjection {
    std::map<int, Tensor> stage_features;  // stage id -> feature map from the other render
    std::vector<std::uint8_t> mask;        // H*W binary, full canvas resolution
};

struct RenderResult {
    Tensor image;                 // [3, H, W] in [0,1]
    std::map<int, Tensor> stages; // stage id -> feature map
    RegionMaps regions;
};

struct GeneratorParams {
    std::size_t latent_dim = 32;
    GroupRanges groups;
    std::size_t width = 64, height = 128;
    real_t softness = 40.0;  // sigmoid steepness, 1/canvas-height units
    real_t psi = 0.7;

    // mapping network z -> w (4 tanh layers)
    std::vector<Tensor> mlp_weights;  // [D, D] each
    std::vector<Tensor> mlp_biases;   // [1, D] each
    Tensor w_avg;                     // [1, D]

    // style heads: one shared direction per semantic family, routed to
    // slots by striping the group's rows. Sharing the direction is what
    // couples slots under a row-uniform latent shift.
    Tensor body_head;   // [D, 1]
    Tensor shape_head;  // [D, 1]
    Tensor color_head;  // [D, 3]
    std::vector<real_t> body_bias;                // 4
    std::vector<real_t> shape_bias;               // 3
    std::vector<std::array<real_t, 3>> color_bias;  // 4 slots
    real_t body_scale = 2.0, shape_scale = 5.0, color_scale = 8.0;
    // studio backdrop: constant, not latent-controlled
    std::array<real_t, 3> background_color{0.92, 0.93, 0.95};

    // cached constant coordinate grids (height units; x spans [0, W/H])
    Tensor grid_x;  // [P]
    Tensor grid_y;  // [P]

    std::size_t pixels() const { return width * height; }

    static GeneratorParams build(std::uint64_t seed, std::size_t latent_dim = 32,
                                 std::size_t width = 64, std::size_t height = 128,
                                 GroupRanges groups = {});

    std::uint64_t digest() const {
        std::uint64_t h = fnv1a64(&latent_dim, sizeof(latent_dim));
        for (const Tensor& t : mlp_weights) h = fnv1a64(t, h);
        for (const Tensor& t : mlp_biases) h = fnv1a64(t, h);
        h = fnv1a64(w_avg, h);
        h = fnv1a64(body_head, h);
        h = fnv1a64(shape_head, h);
        h = fnv1a64(color_head, h);
        h = fnv1a64(body_bias.data(), body_bias.size() * sizeof(real_t), h);
        h = fnv1a64(shape_bias.data(), shape_bias.size() * sizeof(real_t), h);
        for (const auto& cb : color_bias) h = fnv1a64(cb.data(), 3 * sizeof(real_t), h);
        h = fnv1a64(background_color.data(), 3 * sizeof(real_t), h);
        h = fnv1a64(&psi, sizeof(psi), h);
        return h;
    }
};

inline GeneratorParams GeneratorParams::build(std::uint64_t seed, std::size_t latent_dim,
                                              std::size_t width, std::size_t height,
                                              GroupRanges groups) {
    GeneratorParams p;
    p.latent_dim = latent_dim;
    p.groups = groups;
    p.width = width;
    p.height = height;

    CounterRng rng(seed);
    const std::size_t D = latent_dim;
    std::uint64_t ctr = 0;
    const real_t gain = real_t(1.2) / std::sqrt(static_cast<real_t>(D));
    for (int layer = 0; layer < 4; ++layer) {
        std::vector<real_t> w(D * D), b(D);
        for (auto& v : w) v = gain * rng.normal(rng_stream::kGeneratorWeights, ctr++);
        for (auto& v : b) v = real_t(0.1) * rng.normal(rng_stream::kGeneratorWeights, ctr++);
        p.mlp_weights.push_back(Tensor::from({D, D}, std::move(w)));
        p.mlp_biases.push_back(Tensor::from({1, D}, std::move(b)));
    }

    std::uint64_t hctr = 0;
    const real_t head_gain = real_t(1) / std::sqrt(static_cast<real_t>(D));
    auto head = [&](std::size_t cols) {
        std::vector<real_t> v(D * cols);
        for (auto& x : v) x = head_gain * rng.normal(rng_stream::kGeneratorHeads, hctr++);
        return Tensor::from({D, cols}, std::move(v));
    };
    p.body_head = head(1);
    p.shape_head = head(1);
    p.color_head = head(3);
    for (int i = 0; i < 4; ++i)
        p.body_bias.push_back(real_t(0.5) * rng.normal(rng_stream::kGeneratorHeads, hctr++));
    for (int i = 0; i < 3; ++i)
        p.shape_bias.push_back(real_t(0.6) * rng.normal(rng_stream::kGeneratorHeads, hctr++));
    for (int i = 0; i < 4; ++i) {
        std::array<real_t, 3> cb;
        for (auto& v : cb) v = real_t(0.8) * rng.normal(rng_stream::kGeneratorHeads, hctr++);
        p.color_bias.push_back(cb);
    }

    // coordinate grids in height units, pixel centers
    const std::size_t P = width * height;
    std::vector<real_t> gx(P), gy(P);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            gx[y * width + x] = (static_cast<real_t>(x) + real_t(0.5)) / static_cast<real_t>(height);
            gy[y * width + x] = (static_cast<real_t>(y) + real_t(0.5)) / static_cast<real_t>(height);
        }
    }
    p.grid_x = Tensor::from({P}, std::move(gx));
    p.grid_y = Tensor::from({P}, std::move(gy));

    // empirical mean latent from 1e4 mapped samples (frozen into the params)
    const std::size_t samples = 10000;
    std::vector<real_t> acc(D, 0);
    for (std::size_t s = 0; s < samples; ++s) {
        std::vector<real_t> z(D);
        for (std::size_t j = 0; j < D; ++j) {
            z[j] = rng.normal(rng_stream::kWAvgEstimate, s * D + j);
        }
        Tensor h = Tensor::from({1, D}, std::move(z));
        for (int layer = 0; layer < 4; ++layer) {
            h = tanh(add(matmul(h, p.mlp_weights[layer]), p.mlp_biases[layer]));
        }
        for (std::size_t j = 0; j < D; ++j) acc[j] += h.at(j);
    }
    for (auto& v : acc) v /= static_cast<real_t>(samples);
    p.w_avg = Tensor::from({1, D}, std::move(acc));
    return p;
}

// ---------------------------------------------------------------------------
// sampling and mapping
// ---------------------------------------------------------------------------

// Standard normal batch [count, D], fully determined by (seed, index).
inline Tensor sample_z(std::uint64_t seed, std::size_t count, std::size_t latent_dim) {
    if (count < 1) throw Error("sample_z: count must be >= 1");
    CounterRng rng(seed);
    std::vector<real_t> v(count * latent_dim);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.normal(rng_stream::kSampleZ, i);
    return Tensor::from({count, latent_dim}, std::move(v));
}

// z -> w through the frozen mapping network, truncated toward w_avg by psi,
// then broadcast to every layer row.
inline LatentStack map_to_w(const Tensor& z, const GeneratorParams& params,
                            std::optional<real_t> psi_override = std::nullopt) {
    if (z.numel() != params.latent_dim) {
        throw ShapeMismatch("map_to_w expects a single D-vector");
    }
    const real_t psi = psi_override.value_or(params.psi);
    Tensor h = reshape(z, {1, params.latent_dim});
    for (std::size_t layer = 0; layer < params.mlp_weights.size(); ++layer) {
        h = tanh(add(matmul(h, params.mlp_weights[layer]), params.mlp_biases[layer]));
    }
    Tensor w_trunc = add(params.w_avg, mul(sub(h, params.w_avg), Tensor::scalar(psi)));
    std::vector<Tensor> rows(params.groups.total(), w_trunc);
    LatentStack stack;
    stack.codes = concat_rows(rows);
    stack.groups = params.groups;
    return stack;
}

// ---------------------------------------------------------------------------
// decoding
// ---------------------------------------------------------------------------

namespace detail {

// Rows of one group striped across semantic slots: slot j of n gets rows
// whose in-group index is congruent to j mod n.
inline std::vector<std::size_t> slot_rows(const GroupRanges& groups, Group g, std::size_t slot,
                                          std::size_t n_slots) {
    std::vector<std::size_t> rows;
    for (std::size_t i = groups.begin(g); i < groups.end(g); ++i) {
        if ((i - groups.begin(g)) % n_slots == slot) rows.push_back(i);
    }
    return rows;
}

// Mean of head(w_i) over the slot's rows; empty slots decode to the bias
// alone (constant, still differentiable-by-construction downstream).
inline Tensor slot_preactivation(const LatentStack& w, const Tensor& head,
                                 const std::vector<std::size_t>& rows) {
    const std::size_t cols = head.shape()[1];
    if (rows.empty()) return Tensor::zeros({1, cols});
    Tensor sum;
    for (std::size_t r : rows) {
        Tensor term = matmul(slice_rows(w.codes, r, r + 1), head);  // [1, cols]
        sum = sum.defined() ? add(sum, term) : term;
    }
    return mul(sum, Tensor::scalar(real_t(1) / static_cast<real_t>(rows.size())));
}

inline Tensor squash_range(const Tensor& pre, real_t scale, real_t bias, real_t lo, real_t hi) {
    Tensor s = sigmoid(add(mul(pre, Tensor::scalar(scale)), Tensor::scalar(bias)));
    return add(mul(s, Tensor::scalar(hi - lo)), Tensor::scalar(lo));
}

}  // namespace detail

// Decodes the latent stack into avatar parameters. Wiring is group-local by
// construction: coarse rows feed only body, medium only garment shape, fine
// only colors.
inline AvatarParams decode_params(const LatentStack& w, const GeneratorParams& params) {
    if (w.codes.rank() != 2 || w.codes.shape()[0] != params.groups.total() ||
        w.codes.shape()[1] != params.latent_dim) {
        throw ShapeMismatch("decode_params: latent stack must be [N, D]");
    }
    AvatarParams a;

    auto scalar_slot = [&](Group g, const Tensor& head, std::size_t slot, std::size_t n_slots,
                           real_t scale, real_t bias, real_t lo, real_t hi) {
        Tensor pre = detail::slot_preactivation(w, head, detail::slot_rows(params.groups, g, slot, n_slots));
        return reshape(detail::squash_range(pre, scale, bias, lo, hi), {1});
    };

    a.torso_width = scalar_slot(Group::coarse, params.body_head, 0, 4, params.body_scale,
                                params.body_bias[0], real_t(0.13), real_t(0.17));
    a.torso_length = scalar_slot(Group::coarse, params.body_head, 1, 4, params.body_scale,
                                 params.body_bias[1], real_t(0.28), real_t(0.32));
    a.leg_separation = scalar_slot(Group::coarse, params.body_head, 2, 4, params.body_scale,
                                   params.body_bias[2], real_t(0.015), real_t(0.055));
    a.head_radius = scalar_slot(Group::coarse, params.body_head, 3, 4, params.body_scale,
                                params.body_bias[3], real_t(0.045), real_t(0.075));

    a.sleeve_length = scalar_slot(Group::medium, params.shape_head, 0, 3, params.shape_scale,
                                  params.shape_bias[0], real_t(0), real_t(1));
    a.pant_length = scalar_slot(Group::medium, params.shape_head, 1, 3, params.shape_scale,
                                params.shape_bias[1], real_t(0), real_t(1));
    a.skirt_blend = scalar_slot(Group::medium, params.shape_head, 2, 3, params.shape_scale,
                                params.shape_bias[2], real_t(0), real_t(1));

    auto color_slot = [&](std::size_t slot) {
        Tensor pre = detail::slot_preactivation(w, params.color_head,
                                                detail::slot_rows(params.groups, Group::fine, slot, 4));
        // per-channel bias, shared scale
        Tensor scaled = mul(pre, Tensor::scalar(params.color_scale));
        Tensor bias = Tensor::from({1, 3}, {params.color_bias[slot][0], params.color_bias[slot][1],
                                            params.color_bias[slot][2]});
        return reshape(sigmoid(add(scaled, bias)), {3});
    };
    a.upper_color = color_slot(0);
    a.lower_color = color_slot(1);
    a.skin_color = color_slot(2);
    a.hair_color = color_slot(3);
    a.background_color = Tensor::from({3}, {params.background_color[0], params.background_color[1],
                                            params.background_color[2]});
    return a;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

namespace detail {

// `softness` counts boundary widths per canvas height: the 1%-99% sigmoid
// transition spans 1/softness of the canvas, ~3 px at the default raster.
inline real_t steepness(real_t softness) { return real_t(9.2) * softness; }

inline constexpr real_t kSdfBlend = 300.0;  // softmin tightness (1/height units)

// sigma(k * v) over a [P] tensor expression
inline Tensor soft_step(const Tensor& v, real_t k) { return sigmoid(mul(v, Tensor::scalar(k))); }

// Soft axis-aligned box from the smooth minimum of the four edge distances;
// bounds may be scalar tensors or [P] fields (for flared silhouettes).
inline Tensor soft_box(const Tensor& x, const Tensor& y, const Tensor& x0, const Tensor& x1,
                       const Tensor& y0, const Tensor& y1, real_t k) {
    Tensor sdf = softmin({sub(x, x0), sub(x1, x), sub(y, y0), sub(y1, y)}, kSdfBlend);
    return soft_step(sdf, k);
}

inline Tensor soft_circle(const Tensor& x, const Tensor& y, const Tensor& cx, const Tensor& cy,
                          const Tensor& r, real_t k) {
    Tensor dx = sub(x, cx);
    Tensor dy = sub(y, cy);
    Tensor dist = sqrt(add(add(mul(dx, dx), mul(dy, dy)), Tensor::scalar(real_t(1e-12))));
    return soft_step(sub(r, dist), k);
}

// soft union: a + b - a*b, stays in [0,1]
inline Tensor soft_or(const Tensor& a, const Tensor& b) { return sub(add(a, b), mul(a, b)); }

}  // namespace detail

// Renders the avatar. Stage 1 is a constant coordinate/Fourier field,
// stage 2 the composited region-indicator stack (an exact partition),
// stage 3 the colorized paint; the output image is the paint after a fixed
// 3x3 binomial smoothing. When `inject` is present the designated stage's
// map is replaced by mask-blended features before the pipeline continues.
inline RenderResult render(const AvatarParams& avatar, const GeneratorParams& params,
                           const FeatureInjection* inject = nullptr) {
    const std::size_t H = params.height, W = params.width, P = params.pixels();
    const real_t k = detail::steepness(params.softness);
    const Tensor& x = params.grid_x;
    const Tensor& y = params.grid_y;
    const real_t xc = real_t(0.5) * static_cast<real_t>(W) / static_cast<real_t>(H);

    if (inject) {
        for (const auto& [stage, f] : inject->stage_features) {
            if (stage != kStageRegions && stage != kStagePaint) {
                throw InvalidInjectionStage("stage " + std::to_string(stage) +
                                            " does not accept injection");
            }
            (void)f;
        }
        if (inject->mask.size() != P) {
            throw ShapeMismatch("injection mask must match canvas resolution");
        }
    }

    // Blends the freshly computed stage map with the injected one under the
    // (resolution-matched) binary mask.
    auto maybe_inject = [&](int stage, Tensor current) {
        if (!inject) return current;
        auto it = inject->stage_features.find(stage);
        if (it == inject->stage_features.end()) return current;
        const Tensor& other = it->second;
        if (other.shape() != current.shape()) {
            throw ShapeMismatch("injected feature shape differs from stage shape");
        }
        const std::size_t C = current.shape()[0];
        std::vector<real_t> m(C * P);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < P; ++i)
                m[c * P + i] = inject->mask[i] ? real_t(1) : real_t(0);
        Tensor mask_t = Tensor::from(current.shape(), std::move(m));
        return add(mul(mask_t, other), mul(sub(Tensor::scalar(1), mask_t), current));
    };

    RenderResult out;

    // stage 1: coordinate / Fourier features (constant field)
    {
        std::vector<real_t> f(6 * P);
        const auto& gx = x.data();
        const auto& gy = y.data();
        for (std::size_t i = 0; i < P; ++i) {
            f[0 * P + i] = gx[i] / xc * real_t(0.5);
            f[1 * P + i] = gy[i];
            f[2 * P + i] = std::sin(2 * M_PI * gx[i]);
            f[3 * P + i] = std::cos(2 * M_PI * gx[i]);
            f[4 * P + i] = std::sin(2 * M_PI * gy[i]);
            f[5 * P + i] = std::cos(2 * M_PI * gy[i]);
        }
        out.stages[kStageCoords] = Tensor::from({6, H, W}, std::move(f));
    }

    // fixed body layout constants (height units)
    const Tensor head_cy = Tensor::scalar(0.11);
    const Tensor y_shoulder = Tensor::scalar(0.20);
    const Tensor y_arm_top = Tensor::scalar(0.21);
    const Tensor y_wrist = Tensor::scalar(0.56);
    const Tensor y_ankle = Tensor::scalar(0.94);
    const Tensor arm_w = Tensor::scalar(0.045);
    const Tensor cx = Tensor::scalar(xc);

    const Tensor half_tw = mul(avatar.torso_width, Tensor::scalar(0.5));
    const Tensor y_hip = add(y_shoulder, avatar.torso_length);

    // head + hair (hair caps the upper half of the head)
    Tensor alpha_face = detail::soft_circle(x, y, cx, head_cy, avatar.head_radius, k);
    Tensor hair_cy = sub(head_cy, mul(avatar.head_radius, Tensor::scalar(0.45)));
    Tensor alpha_hair = detail::soft_circle(x, y, cx, hair_cy, avatar.head_radius, k);

    // torso and arms
    Tensor torso_x0 = sub(cx, half_tw), torso_x1 = add(cx, half_tw);
    Tensor alpha_torso = detail::soft_box(x, y, torso_x0, torso_x1, y_shoulder, y_hip, k);

    Tensor arm_lx0 = sub(torso_x0, arm_w), arm_rx1 = add(torso_x1, arm_w);
    Tensor alpha_arm_l = detail::soft_box(x, y, arm_lx0, torso_x0, y_arm_top, y_wrist, k);
    Tensor alpha_arm_r = detail::soft_box(x, y, torso_x1, arm_rx1, y_arm_top, y_wrist, k);
    Tensor alpha_arms = detail::soft_or(alpha_arm_l, alpha_arm_r);

    // sleeves: arm coverage down to the sleeve fraction
    Tensor sleeve_end = add(y_arm_top, mul(avatar.sleeve_length, sub(y_wrist, y_arm_top)));
    Tensor alpha_sleeve_l = detail::soft_box(x, y, arm_lx0, torso_x0, y_arm_top, sleeve_end, k);
    Tensor alpha_sleeve_r = detail::soft_box(x, y, torso_x1, arm_rx1, y_arm_top, sleeve_end, k);
    Tensor alpha_upper =
        detail::soft_or(alpha_torso, detail::soft_or(alpha_sleeve_l, alpha_sleeve_r));

    // legs
    Tensor half_gap = mul(avatar.leg_separation, Tensor::scalar(0.5));
    Tensor alpha_leg_l = detail::soft_box(x, y, torso_x0, sub(cx, half_gap), y_hip, y_ankle, k);
    Tensor alpha_leg_r = detail::soft_box(x, y, add(cx, half_gap), torso_x1, y_hip, y_ankle, k);
    Tensor alpha_legs = detail::soft_or(alpha_leg_l, alpha_leg_r);

    // lower garment: convex blend of a pant block and a flared skirt
    Tensor hem = add(y_hip, mul(avatar.pant_length, sub(y_ankle, y_hip)));
    Tensor pant_hw = add(half_tw, Tensor::scalar(0.012));
    Tensor alpha_pants = detail::soft_box(x, y, sub(cx, pant_hw), add(cx, pant_hw), y_hip, hem, k);
    // skirt half-width grows linearly below the hip
    Tensor flare = mul(sub(y, y_hip), Tensor::scalar(0.22));
    Tensor skirt_hw = add(add(half_tw, Tensor::scalar(0.02)), flare);
    Tensor alpha_skirt = detail::soft_box(x, y, sub(cx, skirt_hw), add(cx, skirt_hw), y_hip, hem, k);
    Tensor alpha_lower = add(mul(avatar.skirt_blend, alpha_skirt),
                             mul(sub(Tensor::scalar(1), avatar.skirt_blend), alpha_pants));

    // alpha-over compositing, top to bottom: hair, face, upper, lower, arms,
    // legs; background takes the residual, so the stack sums to one exactly.
    Tensor one = Tensor::scalar(1);
    std::array<Tensor, kRegionCount> vis;
    Tensor remaining = Tensor::ones({P});
    const std::array<std::pair<RegionLabel, Tensor>, 6> zorder{{
        {RegionLabel::hair, alpha_hair},
        {RegionLabel::face, alpha_face},
        {RegionLabel::upper_clothes, alpha_upper},
        {RegionLabel::lower_clothes, alpha_lower},
        {RegionLabel::arms, alpha_arms},
        {RegionLabel::legs, alpha_legs},
    }};
    for (const auto& [label, alpha] : zorder) {
        vis[static_cast<std::size_t>(label)] = mul(alpha, remaining);
        remaining = mul(remaining, sub(one, alpha));
    }
    vis[static_cast<std::size_t>(RegionLabel::background)] = remaining;

    Tensor region_stack = reshape(
        concat_rows({reshape(vis[0], {1, P}), reshape(vis[1], {1, P}), reshape(vis[2], {1, P}),
                     reshape(vis[3], {1, P}), reshape(vis[4], {1, P}), reshape(vis[5], {1, P}),
                     reshape(vis[6], {1, P})}),
        {kRegionCount, H, W});
    region_stack = maybe_inject(kStageRegions, region_stack);
    out.stages[kStageRegions] = region_stack;

    // stage 3: colorize — paint[c, p] = sum_r vis[r, p] * color[r, c]
    const std::array<std::pair<RegionLabel, const Tensor*>, kRegionCount> region_colors{{
        {RegionLabel::background, &avatar.background_color},
        {RegionLabel::hair, &avatar.hair_color},
        {RegionLabel::face, &avatar.skin_color},
        {RegionLabel::arms, &avatar.skin_color},
        {RegionLabel::legs, &avatar.skin_color},
        {RegionLabel::upper_clothes, &avatar.upper_color},
        {RegionLabel::lower_clothes, &avatar.lower_color},
    }};
    Tensor flat_regions = reshape(region_stack, {kRegionCount, P});
    Tensor paint;
    for (const auto& [label, color] : region_colors) {
        const std::size_t r = static_cast<std::size_t>(label);
        Tensor vis_row = slice_rows(flat_regions, r, r + 1);        // [1, P]
        Tensor contrib = matmul(reshape(*color, {3, 1}), vis_row);  // [3, P]
        paint = paint.defined() ? add(paint, contrib) : contrib;
    }
    Tensor paint_chw = reshape(paint, {3, H, W});
    paint_chw = maybe_inject(kStagePaint, paint_chw);
    out.stages[kStagePaint] = paint_chw;

    out.image = blur3x3(paint_chw);

    // analytic parse of the (possibly injected) region stack
    out.regions.soft = region_stack;
    out.regions.height = H;
    out.regions.width = W;
    out.regions.binary.resize(P);
    const auto& rs = region_stack.data();
    for (std::size_t i = 0; i < P; ++i) {
        std::size_t best = 0;
        real_t best_v = rs[i];
        for (std::size_t r = 1; r < kRegionCount; ++r) {
            const real_t v = rs[r * P + i];
            if (v > best_v) {
                best_v = v;
                best = r;
            }
        }
        out.regions.binary[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

// Target mask per the region-selection table: shape edits take the garment
// plus the exposed limbs, texture edits the garment alone. The summed soft
// maps are thresholded at 0.5.
inline std::vector<std::uint8_t> parse(const RegionMaps& regions, const EditTarget& target) {
    std::vector<RegionLabel> selected;
    if (target.body_part == BodyPart::upper && target.edit_kind == EditKind::shape) {
        selected = {RegionLabel::upper_clothes, RegionLabel::arms};
    } else if (target.body_part == BodyPart::lower && target.edit_kind == EditKind::shape) {
        selected = {RegionLabel::lower_clothes, RegionLabel::legs};
    } else if (target.body_part == BodyPart::upper && target.edit_kind == EditKind::texture) {
        selected = {RegionLabel::upper_clothes};
    } else if (target.body_part == BodyPart::lower && target.edit_kind == EditKind::texture) {
        selected = {RegionLabel::lower_clothes};
    } else {
        throw UnknownTarget("unsupported body part / edit kind combination");
    }
    const std::size_t P = regions.height * regions.width;
    if (!regions.soft.defined() || regions.soft.numel() != kRegionCount * P) {
        throw ShapeMismatch("parse: region maps not from render()");
    }
    const auto& s = regions.soft.data();
    std::vector<std::uint8_t> mask(P, 0);
    for (std::size_t i = 0; i < P; ++i) {
        bool in = false;
        for (RegionLabel l : selected) {
            in = in || s[static_cast<std::size_t>(l) * P + i] > real_t(0.5);
        }
        mask[i] = in ? 1 : 0;
    }
    return mask;
}

}  // namespace tailor
