#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tailor/embedding.hpp"
#include "tailor/errors.hpp"
#include "tailor/generator.hpp"
#include "tailor/rng.hpp"
#include "tailor/tensor.hpp"

namespace tailor {

// Latent-code mappers: given the per-layer codes and a prompt embedding,
// produce the residual that edits the image, one independent parameter set
// per layer group. Two architectures share the interface:
//   - the attention mapper: positional encoding, then L blocks of modulated
//     norm + multi-head cross-attention + MLP with residual connections;
//   - the baseline mapper: L blocks of {linear, modulation, activation},
//     row-wise only, which cannot tell layers apart.
//
// The text side contributes a single token, so K and V have one row and a
// row-direction softmax would be constant 1. The softmax here runs along
// the column direction — down the latent positions — so the weights over
// the group's layers sum to 1. That normalization is what makes single-
// token cross-attention informative.

// Per-head column-softmax diagnostics, filled when a trace is requested.
struct AttentionTrace {
    // weight sums over positions, one entry per (group, block, head)
    std::vector<real_t> weight_sums;
};

struct MapperBlockParams {
    Tensor gamma_w, gamma_b;  // [E, D], [1, D]
    Tensor beta_w, beta_b;    // [E, D], [1, D]
    Tensor wq;                // [D, D]
    Tensor wk, wv;            // [E, D] (text side is E-dimensional)
    Tensor wo;                // [D, D]
    Tensor mlp_w1, mlp_b1;    // [D, 4D], [1, 4D]
    Tensor mlp_w2, mlp_b2;    // [4D, D], [1, D]
};

struct GroupMapperParams {
    std::vector<MapperBlockParams> blocks;
    Tensor proj_w, proj_b;  // final projection, zero-initialized
};

struct MapperParams {
    std::size_t latent_dim = 32;
    std::size_t embed_dim = kEmbedDim;
    std::size_t heads = 4;
    std::size_t depth = 6;
    GroupRanges groups;
    std::array<GroupMapperParams, 3> per_group;

    static MapperParams init(std::uint64_t seed, std::size_t latent_dim,
                             std::size_t heads = 4, std::size_t depth = 6,
                             GroupRanges groups = {});

    template <typename F>
    void visit(F&& fn) {
        for (std::size_t g = 0; g < 3; ++g) {
            const std::string base = std::string("mapper.") + group_name(static_cast<Group>(g));
            auto& gp = per_group[g];
            for (std::size_t b = 0; b < gp.blocks.size(); ++b) {
                const std::string blk = base + ".block" + std::to_string(b);
                auto& p = gp.blocks[b];
                fn(blk + ".gamma_w", p.gamma_w);
                fn(blk + ".gamma_b", p.gamma_b);
                fn(blk + ".beta_w", p.beta_w);
                fn(blk + ".beta_b", p.beta_b);
                fn(blk + ".wq", p.wq);
                fn(blk + ".wk", p.wk);
                fn(blk + ".wv", p.wv);
                fn(blk + ".wo", p.wo);
                fn(blk + ".mlp_w1", p.mlp_w1);
                fn(blk + ".mlp_b1", p.mlp_b1);
                fn(blk + ".mlp_w2", p.mlp_w2);
                fn(blk + ".mlp_b2", p.mlp_b2);
            }
            fn(base + ".proj_w", gp.proj_w);
            fn(base + ".proj_b", gp.proj_b);
        }
    }
};

struct BaselineBlockParams {
    Tensor w, b;              // [D, D], [1, D]
    Tensor gamma_w, gamma_b;  // [E, D], [1, D]
    Tensor beta_w, beta_b;    // [E, D], [1, D]
};

struct BaselineGroupParams {
    std::vector<BaselineBlockParams> blocks;
    Tensor proj_w, proj_b;
};

struct BaselineMapperParams {
    std::size_t latent_dim = 32;
    std::size_t embed_dim = kEmbedDim;
    std::size_t depth = 6;
    GroupRanges groups;
    std::array<BaselineGroupParams, 3> per_group;

    static BaselineMapperParams init(std::uint64_t seed, std::size_t latent_dim,
                                     std::size_t depth = 6, GroupRanges groups = {});

    template <typename F>
    void visit(F&& fn) {
        for (std::size_t g = 0; g < 3; ++g) {
            const std::string base = std::string("baseline.") + group_name(static_cast<Group>(g));
            auto& gp = per_group[g];
            for (std::size_t b = 0; b < gp.blocks.size(); ++b) {
                const std::string blk = base + ".block" + std::to_string(b);
                auto& p = gp.blocks[b];
                fn(blk + ".w", p.w);
                fn(blk + ".b", p.b);
                fn(blk + ".gamma_w", p.gamma_w);
                fn(blk + ".gamma_b", p.gamma_b);
                fn(blk + ".beta_w", p.beta_w);
                fn(blk + ".beta_b", p.beta_b);
            }
            fn(base + ".proj_w", gp.proj_w);
            fn(base + ".proj_b", gp.proj_b);
        }
    }
};

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor rand_matrix(const CounterRng& rng, std::uint64_t& ctr, std::size_t rows,
                          std::size_t cols, real_t scale) {
    std::vector<real_t> v(rows * cols);
    for (auto& x : v) x = scale * rng.normal(rng_stream::kMapperInit, ctr++);
    return Tensor::from({rows, cols}, std::move(v), /*requires_grad=*/true);
}

inline Tensor zero_param(std::size_t rows, std::size_t cols) {
    return Tensor::full({rows, cols}, real_t(0), /*requires_grad=*/true);
}

}  // namespace detail

inline MapperParams MapperParams::init(std::uint64_t seed, std::size_t latent_dim,
                                       std::size_t heads, std::size_t depth, GroupRanges groups) {
    if (latent_dim % heads != 0) {
        throw ShapeMismatch("latent dim must be divisible by the head count");
    }
    MapperParams mp;
    mp.latent_dim = latent_dim;
    mp.heads = heads;
    mp.depth = depth;
    mp.groups = groups;

    CounterRng rng(seed);
    std::uint64_t ctr = 0;
    const std::size_t D = latent_dim, E = kEmbedDim;
    const real_t sd = real_t(1) / std::sqrt(static_cast<real_t>(D));
    const real_t se = real_t(1) / std::sqrt(static_cast<real_t>(E));

    for (std::size_t g = 0; g < 3; ++g) {
        GroupMapperParams gp;
        for (std::size_t b = 0; b < depth; ++b) {
            MapperBlockParams p;
            // modulation starts neutral: scale 1+0, shift 0
            p.gamma_w = detail::rand_matrix(rng, ctr, E, D, real_t(0.2) * se);
            p.gamma_b = detail::zero_param(1, D);
            p.beta_w = detail::rand_matrix(rng, ctr, E, D, real_t(0.2) * se);
            p.beta_b = detail::zero_param(1, D);
            p.wq = detail::rand_matrix(rng, ctr, D, D, sd);
            p.wk = detail::rand_matrix(rng, ctr, E, D, se);
            p.wv = detail::rand_matrix(rng, ctr, E, D, se);
            p.wo = detail::rand_matrix(rng, ctr, D, D, sd);
            p.mlp_w1 = detail::rand_matrix(rng, ctr, D, 4 * D, sd);
            p.mlp_b1 = detail::zero_param(1, 4 * D);
            p.mlp_w2 = detail::rand_matrix(rng, ctr, 4 * D, D, real_t(0.5) / std::sqrt(static_cast<real_t>(4 * D)));
            p.mlp_b2 = detail::zero_param(1, D);
            gp.blocks.push_back(std::move(p));
        }
        // identity at initialization: the final projection is all zeros, so
        // the residual is exactly zero before the first optimizer step
        gp.proj_w = detail::zero_param(D, D);
        gp.proj_b = detail::zero_param(1, D);
        mp.per_group[g] = std::move(gp);
    }
    return mp;
}

inline BaselineMapperParams BaselineMapperParams::init(std::uint64_t seed, std::size_t latent_dim,
                                                       std::size_t depth, GroupRanges groups) {
    BaselineMapperParams mp;
    mp.latent_dim = latent_dim;
    mp.depth = depth;
    mp.groups = groups;

    CounterRng rng(seed ^ 0x5a5a5a5aULL);
    std::uint64_t ctr = 0;
    const std::size_t D = latent_dim, E = kEmbedDim;
    const real_t sd = real_t(1) / std::sqrt(static_cast<real_t>(D));
    const real_t se = real_t(1) / std::sqrt(static_cast<real_t>(E));

    for (std::size_t g = 0; g < 3; ++g) {
        BaselineGroupParams gp;
        for (std::size_t b = 0; b < depth; ++b) {
            BaselineBlockParams p;
            p.w = detail::rand_matrix(rng, ctr, D, D, sd);
            p.b = detail::zero_param(1, D);
            p.gamma_w = detail::rand_matrix(rng, ctr, E, D, real_t(0.2) * se);
            p.gamma_b = detail::zero_param(1, D);
            p.beta_w = detail::rand_matrix(rng, ctr, E, D, real_t(0.2) * se);
            p.beta_b = detail::zero_param(1, D);
            gp.blocks.push_back(std::move(p));
        }
        gp.proj_w = detail::zero_param(D, D);
        gp.proj_b = detail::zero_param(1, D);
        mp.per_group[g] = std::move(gp);
    }
    return mp;
}

// ---------------------------------------------------------------------------
// forward pieces
// ---------------------------------------------------------------------------

// Fixed sinusoidal encoding row for an absolute layer index. The encoding
// is keyed by the layer's index in the full stack, not within its group.
inline Tensor positional_encoding_rows(std::size_t begin, std::size_t end, std::size_t dim) {
    std::vector<real_t> v((end - begin) * dim);
    for (std::size_t i = begin; i < end; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            const real_t freq =
                std::pow(real_t(10000), -static_cast<real_t>(2 * (j / 2)) / static_cast<real_t>(dim));
            const real_t angle = static_cast<real_t>(i) * freq;
            v[(i - begin) * dim + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor::from({end - begin, dim}, std::move(v));
}

// Adds the group's positional rows to X.
inline Tensor positional_encode(const Tensor& x, const GroupRanges& groups, Group g) {
    if (x.rank() != 2 || x.shape()[0] != groups.size(g)) {
        throw ShapeMismatch("positional_encode: rows must match the group size");
    }
    return add(x, positional_encoding_rows(groups.begin(g), groups.end(g), x.shape()[1]));
}

namespace detail {

// e_t as a [1, E] row.
inline Tensor text_row(const PromptEmbedding& e) { return reshape(e.vector, {1, e.vector.numel()}); }

}  // namespace detail

// Per-row standardization (mean 0, std 1 across D, eps = 1e-6), then the
// text-conditioned affine: xhat * (1 + gamma(e)) - beta(e).
inline Tensor mod_norm(const Tensor& x, const Tensor& e_row, const Tensor& gamma_w,
                       const Tensor& gamma_b, const Tensor& beta_w, const Tensor& beta_b) {
    const std::size_t cols = x.shape()[1];
    Tensor mean = reshape(reduce_mean(x, 1), {x.shape()[0], 1});
    Tensor centered = sub(x, mean);
    Tensor var = reshape(reduce_mean(mul(centered, centered), 1), {x.shape()[0], 1});
    Tensor xhat = div(centered, sqrt(add(var, Tensor::scalar(real_t(1e-6)))));

    Tensor gamma = add(matmul(e_row, gamma_w), gamma_b);  // [1, D]
    Tensor beta = add(matmul(e_row, beta_w), beta_b);     // [1, D]
    (void)cols;
    return sub(mul(xhat, add(Tensor::scalar(1), gamma)), beta);
}

inline Tensor mod_norm(const Tensor& x, const PromptEmbedding& e, const MapperBlockParams& p) {
    return mod_norm(x, detail::text_row(e), p.gamma_w, p.gamma_b, p.beta_w, p.beta_b);
}

// Multi-head cross-attention against the single text token. Scores are
// softmax-normalized along the column (position) direction, so each head
// distributes one unit of weight across the group's layers.
inline Tensor cross_attention(const Tensor& x, const Tensor& e_row, const MapperBlockParams& p,
                              std::size_t heads, AttentionTrace* trace = nullptr) {
    const std::size_t D = x.shape()[1];
    if (D % heads != 0) throw ShapeMismatch("head count must divide D");
    const std::size_t d = D / heads;
    const real_t inv_sqrt_d = real_t(1) / std::sqrt(static_cast<real_t>(d));

    Tensor q = matmul(x, p.wq);      // [N_g, D]
    Tensor k = matmul(e_row, p.wk);  // [1, D]
    Tensor v = matmul(e_row, p.wv);  // [1, D]

    std::vector<Tensor> head_outputs;
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qi = slice_cols(q, h * d, (h + 1) * d);  // [N_g, d]
        Tensor ki = slice_cols(k, h * d, (h + 1) * d);  // [1, d]
        Tensor vi = slice_cols(v, h * d, (h + 1) * d);  // [1, d]
        Tensor scores = mul(matmul(qi, transpose(ki)), Tensor::scalar(inv_sqrt_d));  // [N_g, 1]
        Tensor weights = softmax_axis(scores, 0);
        if (trace) {
            real_t sum = 0;
            for (std::size_t i = 0; i < weights.numel(); ++i) sum += weights.at(i);
            trace->weight_sums.push_back(sum);
        }
        head_outputs.push_back(matmul(weights, vi));  // [N_g, d]
    }
    return matmul(concat_cols(head_outputs), p.wo);
}

inline Tensor cross_attention(const Tensor& x, const PromptEmbedding& e,
                              const MapperBlockParams& p, std::size_t heads,
                              AttentionTrace* trace = nullptr) {
    return cross_attention(x, detail::text_row(e), p, heads, trace);
}

// ---------------------------------------------------------------------------
// full forwards
// ---------------------------------------------------------------------------

// Attention mapper: per group, positionally encoded codes pass through L
// blocks of X += CrossAttn(ModNorm(X)); X += MLP(ModNorm(X)); the residual
// is the zero-initialized final projection of the result.
inline Tensor mapper_forward(const LatentStack& w, const PromptEmbedding& e,
                             const MapperParams& params, AttentionTrace* trace = nullptr) {
    if (w.codes.rank() != 2 || w.codes.shape()[1] != params.latent_dim) {
        throw ShapeMismatch("mapper_forward: latent stack must be [N, D]");
    }
    Tensor e_row = detail::text_row(e);
    std::vector<Tensor> group_residuals;
    for (std::size_t g = 0; g < 3; ++g) {
        const Group group = static_cast<Group>(g);
        const GroupMapperParams& gp = params.per_group[g];
        Tensor x = positional_encode(w.group_rows(group), params.groups, group);
        for (const MapperBlockParams& blk : gp.blocks) {
            Tensor normed = mod_norm(x, e_row, blk.gamma_w, blk.gamma_b, blk.beta_w, blk.beta_b);
            x = add(x, cross_attention(normed, e_row, blk, params.heads, trace));
            Tensor normed2 = mod_norm(x, e_row, blk.gamma_w, blk.gamma_b, blk.beta_w, blk.beta_b);
            Tensor hidden = tanh(add(matmul(normed2, blk.mlp_w1), blk.mlp_b1));
            x = add(x, add(matmul(hidden, blk.mlp_w2), blk.mlp_b2));
        }
        group_residuals.push_back(add(matmul(x, gp.proj_w), gp.proj_b));
    }
    return concat_rows(group_residuals);
}

// Baseline mapper: row-wise {linear, modulation, activation} blocks. No
// attention and no positional encoding, so its output commutes with row
// permutations within each group.
inline Tensor baseline_forward(const LatentStack& w, const PromptEmbedding& e,
                               const BaselineMapperParams& params) {
    if (w.codes.rank() != 2 || w.codes.shape()[1] != params.latent_dim) {
        throw ShapeMismatch("baseline_forward: latent stack must be [N, D]");
    }
    Tensor e_row = detail::text_row(e);
    std::vector<Tensor> group_residuals;
    for (std::size_t g = 0; g < 3; ++g) {
        const Group group = static_cast<Group>(g);
        const BaselineGroupParams& gp = params.per_group[g];
        Tensor x = w.group_rows(group);
        for (const BaselineBlockParams& blk : gp.blocks) {
            Tensor lin = add(matmul(x, blk.w), blk.b);
            x = tanh(mod_norm(lin, e_row, blk.gamma_w, blk.gamma_b, blk.beta_w, blk.beta_b));
        }
        group_residuals.push_back(add(matmul(x, gp.proj_w), gp.proj_b));
    }
    return concat_rows(group_residuals);
}

}  // namespace tailor
