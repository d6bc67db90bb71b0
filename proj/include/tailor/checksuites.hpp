#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tailor/editing.hpp"
#include "tailor/embedding.hpp"
#include "tailor/generator.hpp"
#include "tailor/gradcheck.hpp"
#include "tailor/mapper.hpp"
#include "tailor/tensor.hpp"

namespace tailor {

// The registered finite-difference suites behind the gradcheck command.
// Each entry checks one analytic-gradient path against central differences
// computed through forward evaluation only.

namespace checksuites {

inline Tensor seeded_tensor(Shape shape, real_t lo, real_t hi, std::uint64_t seed) {
    CounterRng rng(seed);
    std::vector<real_t> v(detail::numel_of(shape));
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = lo + (hi - lo) * static_cast<real_t>(rng.uniform(0, i));
    }
    return Tensor::from(std::move(shape), std::move(v));
}

inline Tensor fixed_weights(const Shape& shape, std::uint64_t seed) {
    return seeded_tensor(shape, 0.3, 1.7, seed);
}

// generic single-input check through a tensor-expression objective
inline GradCheckResult check_expression(const std::string& name, const Tensor& input,
                                        const std::function<Tensor(const Tensor&)>& expr,
                                        double tolerance,
                                        std::size_t max_coords = 64) {
    auto objective = [&](const Tensor& probe) { return expr(probe).item(); };
    Tape tape;
    Tensor watched = tape.watch(Tensor::from(input.shape(), input.data(), true));
    auto grads = tape.backward(expr(watched));
    return gradcheck::check_input(name, input, gradcheck::spread_coords(input.numel(), max_coords),
                                  objective, grads.at(watched.node()), tolerance);
}

inline std::vector<GradCheckResult> ops_suite() {
    std::vector<GradCheckResult> results;
    struct Case {
        const char* name;
        Ew kind;
        bool binary;
        real_t lo, hi;
    };
    const Case cases[] = {
        {"elementwise/add", Ew::add, true, -2, 2},
        {"elementwise/sub", Ew::sub, true, -2, 2},
        {"elementwise/mul", Ew::mul, true, -2, 2},
        {"elementwise/div", Ew::div, true, 0.2, 2},
        {"elementwise/pow", Ew::pow, true, 0.2, 2},
        {"elementwise/exp", Ew::exp, false, -2, 2},
        {"elementwise/log", Ew::log, false, 0.1, 2},
        {"elementwise/tanh", Ew::tanh, false, -2, 2},
        {"elementwise/sigmoid", Ew::sigmoid, false, -2, 2},
        {"elementwise/sqrt", Ew::sqrt, false, 0.05, 2},
        {"elementwise/relu", Ew::relu, false, 0.01, 2},
    };
    std::uint64_t seed = 9000;
    for (const Case& c : cases) {
        Tensor a = seeded_tensor({3, 4}, c.lo, c.hi, seed++);
        Tensor b = seeded_tensor({3, 4}, c.lo, c.hi, seed++);
        Tensor wts = fixed_weights({3, 4}, seed++);
        results.push_back(check_expression(
            c.name, a,
            [&](const Tensor& probe) {
                Tensor out = c.binary ? elementwise(c.kind, probe, &b) : elementwise(c.kind, probe);
                return reduce_sum(mul(out, wts));
            },
            1e-4));
    }

    Tensor ma = seeded_tensor({3, 4}, -2, 2, seed++);
    Tensor mb = seeded_tensor({4, 2}, -2, 2, seed++);
    Tensor mw = fixed_weights({3, 2}, seed++);
    results.push_back(check_expression(
        "matmul", ma, [&](const Tensor& p) { return reduce_sum(mul(matmul(p, mb), mw)); }, 1e-4));

    Tensor sx = seeded_tensor({4, 3}, -2, 2, seed++);
    Tensor sw = fixed_weights({4, 3}, seed++);
    results.push_back(check_expression(
        "softmax_axis", sx, [&](const Tensor& p) { return reduce_sum(mul(softmax_axis(p, 0), sw)); },
        1e-4));

    Tensor rx = seeded_tensor({3, 4}, -2, 2, seed++);
    results.push_back(check_expression(
        "reduce/sum", rx, [&](const Tensor& p) { return reduce_sum(p); }, 1e-4));
    results.push_back(check_expression(
        "reduce/mean", rx, [&](const Tensor& p) { return reduce_mean(p); }, 1e-4));
    results.push_back(check_expression(
        "reduce/l2norm", rx, [&](const Tensor& p) { return l2norm(p); }, 1e-4));
    return results;
}

inline std::vector<GradCheckResult> generator_suite(const GeneratorParams& gen) {
    std::vector<GradCheckResult> results;
    Tensor codes = seeded_tensor({gen.groups.total(), gen.latent_dim}, -0.8, 0.8, 9100);
    results.push_back(check_expression(
        "generator/image_from_codes", codes,
        [&](const Tensor& p) {
            return reduce_mean(render(decode_params({p, gen.groups}, gen), gen).image);
        },
        1e-3, 32));

    LatentStack base{codes, gen.groups};
    AvatarParams avatar = decode_params(base, gen);
    Tensor upper0 = avatar.upper_color.detached();
    results.push_back(check_expression(
        "generator/image_from_upper_color", upper0,
        [&](const Tensor& p) {
            AvatarParams a = avatar;
            a.upper_color = p;
            return reduce_mean(render(a, gen).image);
        },
        1e-4, 3));

    results.push_back(check_expression(
        "generator/avatar_from_codes", codes,
        [&](const Tensor& p) {
            AvatarParams a = decode_params({p, gen.groups}, gen);
            Tensor s = add(mul(a.torso_width, 1.3), mul(a.sleeve_length, 0.7));
            return reduce_sum(add(s, reduce_sum(a.upper_color)));
        },
        1e-4, 48));
    return results;
}

inline std::vector<GradCheckResult> mapper_suite() {
    std::vector<GradCheckResult> results;
    const std::size_t D = 4;
    const GroupRanges groups{2, 1, 1};
    MapperParams mp = MapperParams::init(9200, D, 2, 1, groups);
    // nonzero projection so gradients reach every block parameter
    CounterRng rng(9201);
    mp.visit([&](const std::string& name, Tensor& t) {
        if (name.find("proj") != std::string::npos) {
            std::vector<real_t> v(t.numel());
            for (std::size_t i = 0; i < v.size(); ++i) {
                v[i] = real_t(0.4) * (static_cast<real_t>(rng.uniform(1, i)) - real_t(0.5));
            }
            t = Tensor::from(t.shape(), std::move(v), true);
        }
    });
    Tensor codes = seeded_tensor({groups.total(), D}, -0.8, 0.8, 9202);
    PromptEmbedding prompt = embed_text("a human wearing red upper body clothes", Lexicon::builtin());

    // d ||dw||^2 / d(params), every parameter, spread coordinates
    double worst = 0;
    std::size_t coords = 0;
    auto objective = [&](MapperParams& p) {
        Tensor dw = mapper_forward({codes, groups}, prompt, p);
        return reduce_sum(mul(dw, dw)).item();
    };
    Tape tape;
    MapperParams watched = mp;
    watched.visit([&](const std::string&, Tensor& t) { t = tape.watch(t); });
    Tensor dw = mapper_forward({codes, groups}, prompt, watched);
    auto grads = tape.backward(reduce_sum(mul(dw, dw)));
    watched.visit([&](const std::string& name, Tensor& t) {
        const Tensor& analytic = grads.at(t.node());
        for (std::size_t i : gradcheck::spread_coords(t.numel(), 4)) {
            const real_t x0 = t.at(i);
            auto probe_at = [&](real_t v) {
                MapperParams probe = mp;
                probe.visit([&](const std::string& pn, Tensor& pt) {
                    if (pn == name) pt = pt.with_value(i, v);
                });
                return objective(probe);
            };
            const double numeric =
                (probe_at(x0 + gradcheck::kStep) - probe_at(x0 - gradcheck::kStep)) /
                (2 * gradcheck::kStep);
            worst = std::max(worst, gradcheck::rel_err(analytic.at(i), numeric));
            ++coords;
        }
    });
    GradCheckResult r;
    r.name = "mapper/all_parameters";
    r.max_rel_err = worst;
    r.coords_checked = coords;
    r.tolerance = 1e-4;
    r.passed = worst < r.tolerance;
    results.push_back(r);

    // the latent stack input path
    results.push_back(check_expression(
        "mapper/dw_from_codes", codes,
        [&](const Tensor& p) {
            Tensor out = mapper_forward({p, groups}, prompt, mp);
            return reduce_sum(mul(out, out));
        },
        1e-4, 16));
    return results;
}

inline std::vector<GradCheckResult> losses_suite(const GeneratorParams& gen, const EmbedNet& net) {
    std::vector<GradCheckResult> results;
    const Lexicon lexicon = Lexicon::builtin();
    const PromptEmbedding prompt = embed_text("a human wearing red upper body clothes", lexicon);
    const PromptEmbedding source = embed_text("a human", lexicon);
    const EditTarget target{BodyPart::upper, EditKind::texture};
    const LossWeights weights;

    LatentStack w = map_to_w(sample_z(9300, 1, gen.latent_dim), gen);
    Tensor delta0 = seeded_tensor(w.codes.shape(), -0.05, 0.05, 9301);

    auto ctx_of = [&](const Tensor& delta) {
        return make_edit_context(w, delta, prompt, source, target, gen, net);
    };

    results.push_back(check_expression(
        "loss/clip", delta0, [&](const Tensor& d) { return clip_loss(ctx_of(d)); }, 1e-3, 10));
    results.push_back(check_expression(
        "loss/directional", delta0, [&](const Tensor& d) { return directional_loss(ctx_of(d)); },
        1e-3, 10));
    results.push_back(check_expression(
        "loss/background", delta0,
        [&](const Tensor& d) { return background_loss(ctx_of(d), gen); }, 1e-3, 10));
    results.push_back(check_expression(
        "loss/norm", delta0, [&](const Tensor& d) { return norm_loss(d); }, 1e-4, 10));

    // composite weighted loss through a tiny end-to-end mapper instance
    {
        const std::size_t D = 4;
        const GroupRanges groups{2, 1, 1};
        GeneratorParams tiny = GeneratorParams::build(9400, D, 16, 32, groups);
        EmbedNet tiny_net = EmbedNet::build(tiny);
        MapperParams mp = MapperParams::init(9401, D, 2, 1, groups);
        CounterRng rng(9402);
        mp.visit([&](const std::string& name, Tensor& t) {
            if (name.find("proj") != std::string::npos) {
                std::vector<real_t> v(t.numel());
                for (std::size_t i = 0; i < v.size(); ++i) {
                    v[i] = real_t(0.2) * (static_cast<real_t>(rng.uniform(2, i)) - real_t(0.5));
                }
                t = Tensor::from(t.shape(), std::move(v), true);
            }
        });
        LatentStack tw = map_to_w(sample_z(9403, 1, D), tiny);

        auto total_of = [&](MapperParams& p) {
            Tensor dw = mapper_forward(tw, prompt, p);
            EditContext ctx = make_edit_context(tw, dw, prompt, source, target, tiny, tiny_net);
            return total_loss(ctx, weights, tiny).total.item();
        };
        Tape tape;
        MapperParams watched = mp;
        watched.visit([&](const std::string&, Tensor& t) { t = tape.watch(t); });
        Tensor dw = mapper_forward(tw, prompt, watched);
        EditContext ctx = make_edit_context(tw, dw, prompt, source, target, tiny, tiny_net);
        auto grads = tape.backward(total_loss(ctx, weights, tiny).total);

        double worst = 0;
        std::size_t coords = 0;
        watched.visit([&](const std::string& name, Tensor& t) {
            const Tensor& analytic = grads.at(t.node());
            for (std::size_t i : gradcheck::spread_coords(t.numel(), 3)) {
                const real_t x0 = t.at(i);
                auto probe_at = [&](real_t v) {
                    MapperParams probe = mp;
                    probe.visit([&](const std::string& pn, Tensor& pt) {
                        if (pn == name) pt = pt.with_value(i, v);
                    });
                    return total_of(probe);
                };
                const double numeric =
                    (probe_at(x0 + gradcheck::kStep) - probe_at(x0 - gradcheck::kStep)) /
                    (2 * gradcheck::kStep);
                worst = std::max(worst, gradcheck::rel_err(analytic.at(i), numeric));
                ++coords;
            }
        });
        GradCheckResult r;
        r.name = "loss/composite_total_tiny_mapper";
        r.max_rel_err = worst;
        r.coords_checked = coords;
        r.tolerance = 1e-4;
        r.passed = worst < r.tolerance;
        results.push_back(r);
    }
    return results;
}

}  // namespace checksuites
}  // namespace tailor
