#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tailor/editing.hpp"
#include "tailor/embedding.hpp"
#include "tailor/errors.hpp"
#include "tailor/generator.hpp"
#include "tailor/rng.hpp"
#include "tailor/tensor.hpp"
#include "tailor/trainer.hpp"

namespace tailor {

// Evaluation: retrieval accuracy plus a perceptual-style background
// distance. The perceptual stand-in projects 3x3 windows through a fixed
// random filter bank; trends under it and under raw MSE are both reported.

enum class EditMode { none, feature, pixel };

inline const char* edit_mode_name(EditMode m) {
    switch (m) {
        case EditMode::none: return "unmasked";
        case EditMode::feature: return "feature-masked";
        case EditMode::pixel: return "pixel-masked";
    }
    return "?";
}

struct SampleRecord {
    std::size_t index = 0;
    std::string prompt;
    real_t cos_edited = 0;
    real_t cos_original = 0;
    bool hit = false;
    real_t bg_mse = 0;
    real_t bg_proj = 0;
};

struct EvalReport {
    real_t clip_acc = 0;       // percentage in [0, 100]
    real_t bg_dist_proj = 0;   // mean projection-feature distance outside M
    real_t bg_dist_mse = 0;    // mean raw MSE outside M
    std::string method;        // "<arch> <mode>"
    std::vector<SampleRecord> samples;

    void aggregate() {
        if (samples.empty()) throw Error("eval with no samples");
        std::size_t hits = 0;
        real_t mse = 0, proj = 0;
        for (const auto& s : samples) {
            hits += s.hit ? 1 : 0;
            mse += s.bg_mse;
            proj += s.bg_proj;
        }
        clip_acc = real_t(100) * static_cast<real_t>(hits) / static_cast<real_t>(samples.size());
        bg_dist_mse = mse / static_cast<real_t>(samples.size());
        bg_dist_proj = proj / static_cast<real_t>(samples.size());
    }
};

// Fixed random 3x3x3 -> F filter bank (seeded, frozen per process use).
class ProjectionFeatures {
public:
    explicit ProjectionFeatures(std::uint64_t seed = 2024, std::size_t filters = 8)
        : filters_(filters), weights_(filters * 27) {
        CounterRng rng(seed);
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            weights_[i] = rng.normal(rng_stream::kMetricProjection, i) / std::sqrt(real_t(27));
        }
    }

    // Mean squared feature difference over valid 3x3 windows fully outside
    // the mask; raw masked MSE comes along for free.
    struct Distances {
        real_t proj = 0;
        real_t mse = 0;
    };

    Distances masked_distance(const Tensor& a, const Tensor& b, const Mask& inside_mask,
                              std::size_t h, std::size_t w) const {
        if (a.shape() != b.shape()) throw ShapeMismatch("masked_distance images differ in shape");
        const std::size_t P = h * w;
        Distances out;

        // raw MSE over complement pixels
        std::size_t n_out = 0;
        real_t mse = 0;
        for (std::size_t i = 0; i < P; ++i) {
            if (inside_mask[i]) continue;
            ++n_out;
            for (std::size_t c = 0; c < 3; ++c) {
                const real_t d = a.at(c * P + i) - b.at(c * P + i);
                mse += d * d;
            }
        }
        out.mse = n_out ? mse / static_cast<real_t>(3 * n_out) : real_t(0);

        // projection features over windows whose 3x3 support avoids the mask
        std::size_t n_win = 0;
        real_t proj = 0;
        for (std::size_t y = 1; y + 1 < h; ++y) {
            for (std::size_t x = 1; x + 1 < w; ++x) {
                bool clear = true;
                for (int dy = -1; dy <= 1 && clear; ++dy)
                    for (int dx = -1; dx <= 1 && clear; ++dx)
                        clear = !inside_mask[(y + static_cast<std::size_t>(dy + 1) - 1) * w +
                                             (x + static_cast<std::size_t>(dx + 1) - 1)];
                if (!clear) continue;
                ++n_win;
                for (std::size_t f = 0; f < filters_; ++f) {
                    real_t fa = 0, fb = 0;
                    std::size_t k = 0;
                    for (std::size_t c = 0; c < 3; ++c) {
                        for (int dy = -1; dy <= 1; ++dy) {
                            for (int dx = -1; dx <= 1; ++dx, ++k) {
                                const std::size_t idx =
                                    c * P + (y + static_cast<std::size_t>(dy + 1) - 1) * w +
                                    (x + static_cast<std::size_t>(dx + 1) - 1);
                                fa += weights_[f * 27 + k] * a.at(idx);
                                fb += weights_[f * 27 + k] * b.at(idx);
                            }
                        }
                    }
                    proj += (fa - fb) * (fa - fb);
                }
            }
        }
        out.proj = n_win ? proj / static_cast<real_t>(n_win * filters_) : real_t(0);
        return out;
    }

private:
    std::size_t filters_;
    std::vector<real_t> weights_;
};

// Full evaluation pass over the test stream: edit each sample with the
// given mode, count retrieval hits (strict inequality), and measure the
// background distance outside the merged target mask.
inline EvalReport evaluate(MapperVariant& params, const TrainConfig& config,
                           const GeneratorParams& gen, const EmbedNet& embed,
                           const Lexicon& lexicon, std::size_t n_test, EditMode mode) {
    TapeSuspend off;
    Dataset dataset(config.seed, config.n_train, std::max<std::size_t>(n_test, 1), lexicon,
                    config.target_part, config.prompt_kinds, config.latent_dim);
    ProjectionFeatures features;
    EvalReport report;
    report.method = std::string(config.arch == MapperArch::attention ? "attention" : "baseline") +
                    " " + edit_mode_name(mode);

    for (std::size_t i = 0; i < n_test; ++i) {
        const Sample sample = dataset.test_sample(i);
        const PromptEmbedding prompt = embed_text(sample.prompt, lexicon);
        const EditTarget target = target_of_prompt(sample.prompt, lexicon);
        LatentStack w = map_to_w(sample.z, gen, config.psi);

        Tensor delta = detail::forward_variant(params, w, prompt);
        delta = detail::apply_group_mask(delta, w.groups, config.edit_groups);
        LatentStack w_edited{add(w.codes, delta), w.groups};

        RenderResult original = render(decode_params(w, gen), gen);
        RenderResult edited_raw = render(decode_params(w_edited, gen), gen);
        Mask merged =
            merge_masks(parse(original.regions, target), parse(edited_raw.regions, target));

        Tensor final_image;
        switch (mode) {
            case EditMode::none: final_image = edited_raw.image; break;
            case EditMode::feature:
                final_image = blend_render(w, edited_raw, merged, default_stage_set(), gen);
                break;
            case EditMode::pixel: {
                Tensor m = mask_tensor(merged, gen.height, gen.width);
                final_image = add(mul(m, edited_raw.image),
                                  mul(sub(Tensor::scalar(1), m), original.image));
                break;
            }
        }

        SampleRecord rec;
        rec.index = i;
        rec.prompt = sample.prompt;
        rec.cos_edited = cosine(embed.embed_image(final_image).vector, prompt.vector).item();
        rec.cos_original = cosine(embed.embed_image(original.image).vector, prompt.vector).item();
        rec.hit = rec.cos_edited > rec.cos_original;
        const auto d = features.masked_distance(original.image, final_image, merged, gen.height,
                                                gen.width);
        rec.bg_mse = d.mse;
        rec.bg_proj = d.proj;
        report.samples.push_back(std::move(rec));
    }
    report.aggregate();
    return report;
}

}  // namespace tailor
