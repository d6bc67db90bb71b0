#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "tailor/embedding.hpp"
#include "tailor/errors.hpp"
#include "tailor/generator.hpp"
#include "tailor/tensor.hpp"

namespace tailor {

// Training losses, mask algebra, and the two inference-time masking modes.

struct LossWeights {
    real_t clip = 1.0;
    real_t direct = 2.0;
    real_t bg = 5.0;
    real_t norm = 1.0;
};

using Mask = std::vector<std::uint8_t>;

// Pixelwise union.
inline Mask merge_masks(const Mask& m1, const Mask& m2) {
    if (m1.size() != m2.size()) throw ShapeMismatch("merge_masks size mismatch");
    Mask out(m1.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (m1[i] || m2[i]) ? 1 : 0;
    return out;
}

inline std::size_t mask_area(const Mask& m) {
    std::size_t c = 0;
    for (auto v : m) c += v;
    return c;
}

// Average-pool a binary mask to a stage resolution, then re-binarize at 0.5.
// Stages at full resolution pass through unchanged.
inline Mask pool_mask(const Mask& m, std::size_t h, std::size_t w, std::size_t sh, std::size_t sw) {
    if (m.size() != h * w) throw ShapeMismatch("pool_mask input size");
    if (h % sh != 0 || w % sw != 0) throw ShapeMismatch("stage resolution must divide the canvas");
    const std::size_t fy = h / sh, fx = w / sw;
    if (fy == 1 && fx == 1) return m;
    Mask out(sh * sw);
    for (std::size_t y = 0; y < sh; ++y) {
        for (std::size_t x = 0; x < sw; ++x) {
            std::size_t sum = 0;
            for (std::size_t dy = 0; dy < fy; ++dy)
                for (std::size_t dx = 0; dx < fx; ++dx) sum += m[(y * fy + dy) * w + (x * fx + dx)];
            out[y * sw + x] = 2 * sum >= fy * fx ? 1 : 0;
        }
    }
    return out;
}

// Mask as a [H, W] constant tensor; broadcasts against [3, H, W] images.
inline Tensor mask_tensor(const Mask& m, std::size_t h, std::size_t w) {
    std::vector<real_t> d(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) d[i] = m[i] ? real_t(1) : real_t(0);
    return Tensor::from({h, w}, std::move(d));
}

// ---------------------------------------------------------------------------
// edit context
// ---------------------------------------------------------------------------

// Everything one training example's losses need. The original render and
// its embedding are constants; the edited path stays on the caller's tape.
struct EditContext {
    LatentStack w, w_edited;  // w_edited = w + delta_w
    Tensor delta_w;
    PromptEmbedding prompt, source_prompt;
    EditTarget target;
    RenderResult original, edited;
    ImageEmbedding original_embed, edited_embed;
};

inline EditContext make_edit_context(const LatentStack& w, const Tensor& delta_w,
                                     const PromptEmbedding& prompt,
                                     const PromptEmbedding& source_prompt, const EditTarget& target,
                                     const GeneratorParams& gen, const EmbedNet& embed) {
    EditContext ctx;
    ctx.w = w;
    ctx.delta_w = delta_w;
    ctx.w_edited = LatentStack{add(w.codes, delta_w), w.groups};
    ctx.prompt = prompt;
    ctx.source_prompt = source_prompt;
    ctx.target = target;
    {
        // the unedited branch carries no gradient
        TapeSuspend off;
        LatentStack w_const{w.codes.detached(), w.groups};
        ctx.original = render(decode_params(w_const, gen), gen);
        ctx.original_embed = embed.embed_image(ctx.original.image);
    }
    ctx.edited = render(decode_params(ctx.w_edited, gen), gen);
    ctx.edited_embed = embed.embed_image(ctx.edited.image);
    return ctx;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// 1 - cos(image embedding of the edit, text embedding).
inline Tensor clip_loss_from(const Tensor& edited_vec, const Tensor& text_vec) {
    return sub(Tensor::scalar(1), cosine(edited_vec, text_vec));
}

inline Tensor clip_loss(const EditContext& ctx) {
    return clip_loss_from(ctx.edited_embed.vector, ctx.prompt.vector);
}

// 1 - cos(text displacement, image displacement). The image displacement
// collapses when the edit is a no-op; that degenerate case returns the
// constant 1 with no gradient contribution instead of dividing by zero.
inline Tensor directional_loss_from(const Tensor& edited_vec, const Tensor& original_vec,
                                    const Tensor& text_vec, const Tensor& source_vec) {
    Tensor delta_t = sub(text_vec, source_vec).detached();
    real_t t_norm = 0;
    for (real_t v : delta_t.data()) t_norm += v * v;
    if (std::sqrt(t_norm) <= real_t(1e-8)) {
        throw SourceEqualsTarget("directional loss needs a prompt distinct from the source");
    }
    Tensor delta_i = sub(edited_vec, original_vec);
    real_t i_norm = 0;
    for (real_t v : delta_i.data()) i_norm += v * v;
    if (std::sqrt(i_norm) < real_t(1e-8)) {
        return Tensor::scalar(1);  // degenerate-edit guard
    }
    return sub(Tensor::scalar(1), cosine(delta_t, delta_i));
}

inline Tensor directional_loss(const EditContext& ctx) {
    return directional_loss_from(ctx.edited_embed.vector, ctx.original_embed.vector,
                                 ctx.prompt.vector, ctx.source_prompt.vector);
}

// L2 norm of the pixel difference restricted to the pixels outside the
// target region in BOTH parses. Masks are constants: no gradient flows
// through the parser threshold.
inline Tensor background_loss_from(const Tensor& original_img, const Tensor& edited_img,
                                   const Mask& outside_orig, const Mask& outside_edit,
                                   std::size_t h, std::size_t w) {
    Mask both(outside_orig.size());
    for (std::size_t i = 0; i < both.size(); ++i) both[i] = outside_orig[i] && outside_edit[i];
    Tensor m = mask_tensor(both, h, w);
    return l2norm(mul(m, sub(original_img.detached(), edited_img)));
}

// Loss-side "outside of target garment areas": the complement of the
// garment's soft support (any visibility above threshold), dilated by the
// output smoothing radius. The 0.5-contour parse would leave the garment's
// own soft boundary tails in the "background", and the L2 norm's gradient
// does not vanish for small differences, so those tails would pin every
// garment edit to zero.
inline Mask loss_outside_mask(const RenderResult& r, const EditTarget& target,
                              real_t support_threshold = real_t(1e-6)) {
    std::vector<RegionLabel> selected;
    if (target.edit_kind == EditKind::shape) {
        selected = target.body_part == BodyPart::upper
                       ? std::vector<RegionLabel>{RegionLabel::upper_clothes, RegionLabel::arms}
                       : std::vector<RegionLabel>{RegionLabel::lower_clothes, RegionLabel::legs};
    } else {
        selected = {target.body_part == BodyPart::upper ? RegionLabel::upper_clothes
                                                        : RegionLabel::lower_clothes};
    }
    const std::size_t H = r.regions.height, W = r.regions.width, P = H * W;
    const auto& s = r.regions.soft.data();
    Mask support(P, 0);
    for (std::size_t i = 0; i < P; ++i) {
        real_t cov = 0;
        for (RegionLabel l : selected) cov += s[static_cast<std::size_t>(l) * P + i];
        support[i] = cov > support_threshold ? 1 : 0;
    }
    // one-pixel dilation for the 3x3 output smoothing
    Mask outside(P, 1);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            bool near_support = false;
            for (int dy = -1; dy <= 1 && !near_support; ++dy) {
                for (int dx = -1; dx <= 1 && !near_support; ++dx) {
                    const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
                    const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
                    if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(H) ||
                        xx >= static_cast<std::ptrdiff_t>(W))
                        continue;
                    near_support =
                        support[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)];
                }
            }
            if (near_support) outside[y * W + x] = 0;
        }
    }
    return outside;
}

inline Tensor background_loss(const EditContext& ctx, const GeneratorParams& gen) {
    return background_loss_from(ctx.original.image, ctx.edited.image,
                                loss_outside_mask(ctx.original, ctx.target),
                                loss_outside_mask(ctx.edited, ctx.target), gen.height, gen.width);
}

// L2 regularization of the residual.
inline Tensor norm_loss(const Tensor& delta_w) { return l2norm(delta_w); }

struct LossBreakdown {
    Tensor total;
    real_t clip = 0, direct = 0, bg = 0, norm = 0;

    real_t weighted(const LossWeights& w) const {
        return w.clip * clip + w.direct * direct + w.bg * bg + w.norm * norm;
    }
};

inline Tensor weighted_total(const LossWeights& w, const Tensor& clip, const Tensor& direct,
                             const Tensor& bg, const Tensor& norm) {
    Tensor total = mul(clip, Tensor::scalar(w.clip));
    total = add(total, mul(direct, Tensor::scalar(w.direct)));
    total = add(total, mul(bg, Tensor::scalar(w.bg)));
    total = add(total, mul(norm, Tensor::scalar(w.norm)));
    return total;
}

inline LossBreakdown total_loss(const EditContext& ctx, const LossWeights& weights,
                                const GeneratorParams& gen) {
    LossBreakdown out;
    Tensor lc = clip_loss(ctx);
    Tensor ld = directional_loss(ctx);
    Tensor lb = background_loss(ctx, gen);
    Tensor ln = norm_loss(ctx.delta_w);
    out.clip = lc.item();
    out.direct = ld.item();
    out.bg = lb.item();
    out.norm = ln.item();
    out.total = weighted_total(weights, lc, ld, lb, ln);
    return out;
}

// ---------------------------------------------------------------------------
// masking modes
// ---------------------------------------------------------------------------

inline const std::set<int>& default_stage_set() {
    static const std::set<int> s{kStageRegions, kStagePaint};
    return s;
}

struct MaskedEditResult {
    Tensor image;
    Mask mask;
    RenderResult original, edited;
};

// Core of feature-space masking: re-render from the original codes while
// blending each designated stage's map toward the edited render's under the
// mask (pooled to the stage's resolution).
inline Tensor blend_render(const LatentStack& w, const RenderResult& edited_render, const Mask& m,
                           const std::set<int>& stage_set, const GeneratorParams& gen) {
    FeatureInjection inj;
    inj.mask = m;
    for (int stage : stage_set) {
        auto it = edited_render.stages.find(stage);
        if (it == edited_render.stages.end()) {
            throw InvalidInjectionStage("stage " + std::to_string(stage) + " not rendered");
        }
        inj.stage_features[stage] = it->second;
    }
    return render(decode_params(w, gen), gen, &inj).image;
}

// Chicken-and-egg resolution: render both images unmasked, parse both for
// the target, merge the masks (a smaller edited garment would otherwise let
// the original garment show through), then re-render with stage blending.
inline MaskedEditResult feature_space_edit(const LatentStack& w, const LatentStack& w_edited,
                                           const EditTarget& target, const GeneratorParams& gen,
                                           const std::set<int>& stage_set = default_stage_set()) {
    TapeSuspend off;
    MaskedEditResult out;
    out.original = render(decode_params(w, gen), gen);
    out.edited = render(decode_params(w_edited, gen), gen);
    out.mask = merge_masks(parse(out.original.regions, target), parse(out.edited.regions, target));
    out.image = blend_render(w, out.edited, out.mask, stage_set, gen);
    return out;
}

// The comparison baseline: hard pixel compositing of the two final images.
inline MaskedEditResult pixel_space_edit(const LatentStack& w, const LatentStack& w_edited,
                                         const EditTarget& target, const GeneratorParams& gen) {
    TapeSuspend off;
    MaskedEditResult out;
    out.original = render(decode_params(w, gen), gen);
    out.edited = render(decode_params(w_edited, gen), gen);
    out.mask = merge_masks(parse(out.original.regions, target), parse(out.edited.regions, target));
    Tensor m = mask_tensor(out.mask, gen.height, gen.width);
    out.image = add(mul(m, out.edited.image), mul(sub(Tensor::scalar(1), m), out.original.image));
    return out;
}

}  // namespace tailor
