#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "tailor/checkpoint.hpp"
#include "tailor/editing.hpp"
#include "tailor/embedding.hpp"
#include "tailor/errors.hpp"
#include "tailor/generator.hpp"
#include "tailor/mapper.hpp"
#include "tailor/optimizer.hpp"
#include "tailor/rng.hpp"
#include "tailor/tensor.hpp"

namespace tailor {

enum class MapperArch { attention, baseline };
enum class PromptKinds { texture, shape, mixed };

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 8;
    OptimizerConfig optimizer;  // lr 5e-4, betas (0.95, 0.9), lookahead 5/0.5
    std::uint64_t seed = 1;
    std::uint64_t generator_seed = 77;
    LossWeights loss_weights;  // 1, 2, 5, 1
    std::string lexicon_path;  // empty: built-in lexicon
    BodyPart target_part = BodyPart::upper;
    PromptKinds prompt_kinds = PromptKinds::mixed;
    std::size_t n_train = 2000;
    std::size_t n_test = 200;
    MapperArch arch = MapperArch::attention;
    std::size_t latent_dim = 32;
    std::size_t heads = 4;
    std::size_t depth = 6;
    std::size_t width = 64, height = 128;
    real_t psi = 0.7;
    // groups whose residual rows are applied; others are zeroed (and their
    // mappers therefore receive no gradient)
    std::set<Group> edit_groups{Group::coarse, Group::medium, Group::fine};

    void validate() const {
        optimizer.validate();
        if (steps < 1) throw ConfigError("steps must be >= 1");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (n_train < 1 || n_test < 1) throw ConfigError("dataset sizes must be >= 1");
        if (psi < 0 || psi > 1) throw ConfigError("psi must lie in [0,1]");
        if (edit_groups.empty()) throw ConfigError("at least one edit group");
    }

    std::string to_text() const {
        std::ostringstream os;
        os << "steps = " << steps << "\n";
        os << "batch_size = " << batch_size << "\n";
        os << "lr = " << optimizer.lr << "\n";
        os << "beta1 = " << optimizer.beta1 << "\n";
        os << "beta2 = " << optimizer.beta2 << "\n";
        os << "lookahead_k = " << optimizer.lookahead_k << "\n";
        os << "lookahead_alpha = " << optimizer.lookahead_alpha << "\n";
        os << "seed = " << seed << "\n";
        os << "generator_seed = " << generator_seed << "\n";
        os << "lambda_clip = " << loss_weights.clip << "\n";
        os << "lambda_direct = " << loss_weights.direct << "\n";
        os << "lambda_bg = " << loss_weights.bg << "\n";
        os << "lambda_norm = " << loss_weights.norm << "\n";
        os << "target_part = " << (target_part == BodyPart::upper ? "upper" : "lower") << "\n";
        os << "prompt_kinds = "
           << (prompt_kinds == PromptKinds::texture
                   ? "texture"
                   : prompt_kinds == PromptKinds::shape ? "shape" : "mixed")
           << "\n";
        os << "n_train = " << n_train << "\n";
        os << "n_test = " << n_test << "\n";
        os << "arch = " << (arch == MapperArch::attention ? "attention" : "baseline") << "\n";
        os << "latent_dim = " << latent_dim << "\n";
        os << "heads = " << heads << "\n";
        os << "depth = " << depth << "\n";
        os << "width = " << width << "\n";
        os << "height = " << height << "\n";
        os << "psi = " << psi << "\n";
        std::string groups;
        for (Group g : edit_groups) {
            if (!groups.empty()) groups += ",";
            groups += group_name(g);
        }
        os << "edit_groups = " << groups << "\n";
        return os.str();
    }
};

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

struct Sample {
    Tensor z;            // [D]
    std::string prompt;  // parses under embed_text by construction
};

// Deterministic (z, prompt) streams. Train and test draw from separate
// counter streams of one seeded generator, so they are disjoint by
// construction and each sample is a pure function of (seed, index).
class Dataset {
public:
    Dataset(std::uint64_t seed, std::size_t n_train, std::size_t n_test, const Lexicon& lexicon,
            BodyPart part, PromptKinds kinds, std::size_t latent_dim)
        : rng_(seed), n_train_(n_train), n_test_(n_test), lexicon_(&lexicon), part_(part),
          kinds_(kinds), latent_dim_(latent_dim) {
        if (lexicon.textures.empty() && lexicon.shapes_for(part).empty()) {
            throw EmptyLexicon("lexicon has no labels for the selected task");
        }
        if (kinds != PromptKinds::shape && lexicon.textures.empty()) {
            throw EmptyLexicon("texture prompts requested but the lexicon has no colors");
        }
        if (kinds != PromptKinds::texture && lexicon.shapes_for(part).empty()) {
            throw EmptyLexicon("shape prompts requested but the lexicon has no shape labels");
        }
    }

    std::size_t train_size() const { return n_train_; }
    std::size_t test_size() const { return n_test_; }

    Sample train_sample(std::size_t i) const {
        if (i >= n_train_) throw Error("train index out of range");
        return make_sample(rng_stream::kTrainZ, rng_stream::kTrainPrompt, i);
    }

    Sample test_sample(std::size_t i) const {
        if (i >= n_test_) throw Error("test index out of range");
        return make_sample(rng_stream::kTestZ, rng_stream::kTestPrompt, i);
    }

private:
    Sample make_sample(std::uint64_t z_stream, std::uint64_t prompt_stream, std::size_t i) const {
        Sample s;
        std::vector<real_t> z(latent_dim_);
        for (std::size_t j = 0; j < latent_dim_; ++j) {
            z[j] = rng_.normal(z_stream, i * latent_dim_ + j);
        }
        s.z = Tensor::from({latent_dim_}, std::move(z));

        bool texture = kinds_ == PromptKinds::texture;
        if (kinds_ == PromptKinds::mixed) {
            texture = rng_.uniform(prompt_stream, 3 * i) < 0.5;
        }
        const std::string part_word = part_ == BodyPart::upper ? "upper" : "lower";
        if (texture) {
            const auto& colors = lexicon_->textures;
            const std::size_t c = rng_.uniform_index(prompt_stream, 3 * i + 1, colors.size());
            s.prompt = "a human wearing " + colors[c].label + " " + part_word + " body clothes";
        } else {
            const auto shapes = lexicon_->shapes_for(part_);
            const std::size_t c = rng_.uniform_index(prompt_stream, 3 * i + 2, shapes.size());
            s.prompt = "a human wearing " + shapes[c]->label;
        }
        return s;
    }

    CounterRng rng_;
    std::size_t n_train_, n_test_;
    const Lexicon* lexicon_;
    BodyPart part_;
    PromptKinds kinds_;
    std::size_t latent_dim_;
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct StepLog {
    std::size_t step = 0;
    real_t clip = 0, direct = 0, bg = 0, norm = 0, total = 0;
    double wall_ms = 0;
};

using MapperVariant = std::variant<MapperParams, BaselineMapperParams>;

struct TrainResult {
    CheckpointBundle checkpoint;
    std::vector<StepLog> log;
    MapperVariant params;
    std::uint64_t generator_digest = 0;
    std::uint64_t embednet_digest = 0;
};

namespace detail {

// Zeroes residual rows outside the configured edit groups; the excluded
// groups' parameters then receive exactly zero gradient through the
// constant mask.
inline Tensor apply_group_mask(const Tensor& delta, const GroupRanges& groups,
                               const std::set<Group>& edit_groups) {
    if (edit_groups.size() == 3) return delta;
    std::vector<real_t> mask(delta.shape()[0], 0);
    for (Group g : edit_groups) {
        for (std::size_t r = groups.begin(g); r < groups.end(g); ++r) mask[r] = 1;
    }
    return mul(delta, Tensor::from({delta.shape()[0], 1}, std::move(mask)));
}

inline Tensor forward_variant(MapperVariant& params, const LatentStack& w,
                              const PromptEmbedding& e, AttentionTrace* trace = nullptr) {
    if (auto* attn = std::get_if<MapperParams>(&params)) {
        return mapper_forward(w, e, *attn, trace);
    }
    return baseline_forward(w, e, std::get<BaselineMapperParams>(params));
}

template <typename F>
void visit_variant(MapperVariant& params, F&& fn) {
    std::visit([&](auto& p) { p.visit(fn); }, params);
}

// Adapter giving a MapperVariant the visit() surface the optimizer expects.
struct VariantParams {
    MapperVariant* v;
    template <typename F>
    void visit(F&& fn) {
        visit_variant(*v, std::forward<F>(fn));
    }
};

}  // namespace detail

inline MapperVariant init_mapper_variant(const TrainConfig& config) {
    if (config.arch == MapperArch::attention) {
        return MapperParams::init(config.seed, config.latent_dim, config.heads, config.depth);
    }
    return BaselineMapperParams::init(config.seed, config.latent_dim, config.depth);
}

inline CheckpointBundle bundle_params(MapperVariant& params, const AdamLookahead& optimizer,
                                      const TrainConfig& config, std::uint64_t step) {
    CheckpointBundle b;
    b.step = step;
    b.config_text = config.to_text();
    detail::visit_variant(params, [&](const std::string& name, Tensor& t) {
        b.arrays.emplace_back(name, t.detached());
    });
    optimizer.visit_state([&](const std::string& key, const std::vector<real_t>& values) {
        b.arrays.emplace_back("opt." + key,
                              Tensor::from({values.size()}, values));
    });
    return b;
}

// Runs the training loop: sample a batch, map noise to codes at the frozen
// truncation, run the mapper, form w' = w + dw, take the weighted loss,
// backpropagate, and step the optimizer. Only mapper parameters ever
// update; the generator and embedding digests are asserted unchanged.
inline TrainResult train(const TrainConfig& config, const GeneratorParams& gen,
                         const EmbedNet& embed, const Lexicon& lexicon,
                         const std::function<void(const StepLog&)>& on_step = {}) {
    config.validate();
    if (gen.latent_dim != config.latent_dim || gen.width != config.width ||
        gen.height != config.height) {
        throw ConfigError("generator dimensions do not match the training config");
    }

    const std::uint64_t gen_digest_before = gen.digest();
    const std::uint64_t net_digest_before = embed.digest();

    Dataset dataset(config.seed, config.n_train, config.n_test, lexicon, config.target_part,
                    config.prompt_kinds, config.latent_dim);
    MapperVariant params = init_mapper_variant(config);
    AdamLookahead optimizer(config.optimizer);
    const PromptEmbedding source_prompt = embed_text("a human", lexicon);

    std::map<std::string, PromptEmbedding> prompt_cache;
    TrainResult result;

    for (std::size_t step = 0; step < config.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();

        Tape tape;
        MapperVariant watched = params;
        std::vector<std::pair<std::string, const Tensor*>> watched_refs;
        detail::visit_variant(watched, [&](const std::string& name, Tensor& t) {
            t = tape.watch(t);
        });

        Tensor batch_total;
        StepLog log;
        log.step = step;
        for (std::size_t j = 0; j < config.batch_size; ++j) {
            const std::size_t idx = (step * config.batch_size + j) % config.n_train;
            const Sample sample = dataset.train_sample(idx);

            auto pit = prompt_cache.find(sample.prompt);
            if (pit == prompt_cache.end()) {
                pit = prompt_cache.emplace(sample.prompt, embed_text(sample.prompt, lexicon)).first;
            }
            const PromptEmbedding& prompt = pit->second;
            const EditTarget target = target_of_prompt(sample.prompt, lexicon);

            LatentStack w;
            {
                TapeSuspend off;  // frozen mapping network: no gradient
                w = map_to_w(sample.z, gen, config.psi);
            }
            Tensor delta = detail::forward_variant(watched, w, prompt);
            delta = detail::apply_group_mask(delta, w.groups, config.edit_groups);
            EditContext ctx = make_edit_context(w, delta, prompt, source_prompt, target, gen, embed);
            LossBreakdown breakdown = total_loss(ctx, config.loss_weights, gen);

            log.clip += breakdown.clip;
            log.direct += breakdown.direct;
            log.bg += breakdown.bg;
            log.norm += breakdown.norm;
            batch_total = batch_total.defined() ? add(batch_total, breakdown.total)
                                                : breakdown.total;
        }
        batch_total = div(batch_total, Tensor::scalar(static_cast<real_t>(config.batch_size)));
        const real_t total_value = batch_total.item();
        log.clip /= static_cast<real_t>(config.batch_size);
        log.direct /= static_cast<real_t>(config.batch_size);
        log.bg /= static_cast<real_t>(config.batch_size);
        log.norm /= static_cast<real_t>(config.batch_size);
        log.total = total_value;

        if (!std::isfinite(total_value)) {
            std::ostringstream os;
            os << "step " << step << ": total=" << total_value << " clip=" << log.clip
               << " direct=" << log.direct << " bg=" << log.bg << " norm=" << log.norm;
            throw NonFiniteLoss(os.str());
        }

        GradientMap grads = tape.backward(batch_total);
        std::map<std::string, Tensor> named_grads;
        detail::visit_variant(watched, [&](const std::string& name, Tensor& t) {
            auto it = grads.find(t.node());
            if (it != grads.end()) named_grads.emplace(name, it->second);
        });
        detail::VariantParams stepper{&params};
        optimizer.step(stepper, named_grads);

        log.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        result.log.push_back(log);
        if (on_step) on_step(log);
    }

    if (gen.digest() != gen_digest_before || embed.digest() != net_digest_before) {
        throw Error("frozen module digest changed during training");
    }
    result.generator_digest = gen_digest_before;
    result.embednet_digest = net_digest_before;
    result.checkpoint = bundle_params(params, optimizer, config, config.steps);
    result.params = std::move(params);
    return result;
}

// Rebuilds mapper parameters from a checkpoint (architecture taken from the
// stored config snapshot).
inline MapperVariant load_mapper(const CheckpointBundle& bundle, const TrainConfig& config) {
    MapperVariant params = init_mapper_variant(config);
    std::visit([&](auto& p) { bundle.apply_to(p); }, params);
    return params;
}

}  // namespace tailor
