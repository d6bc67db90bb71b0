#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tailor/digest.hpp"
#include "tailor/errors.hpp"
#include "tailor/generator.hpp"
#include "tailor/tensor.hpp"

namespace tailor {

// Frozen joint embedding: template prompts and rendered images map into one
// 12-dim attribute space where cosine similarity is meaningful. Layout:
//   0-2  upper garment color (centered RGB)
//   3-5  lower garment color (centered RGB)
//   6    sleeve length (centered)
//   7    lower garment length (centered)
//   8    skirt-vs-pants silhouette (centered)
//   9-11 reserved body dims (zero; dim 9 carries the neutral prompt)
inline constexpr std::size_t kEmbedDim = 12;

// Color coordinates are centered at mid-gray before normalization. Raw RGB
// would make dark and uniform colors (black, gray, white) collinear or
// degenerate under cosine; centering gives every palette entry its own
// direction.
inline constexpr real_t kAttrCenter = 0.5;

// Each garment's 3-dim color block is softly normalized to its direction,
// u / sqrt(|u|^2 + eps^2), on both the text and image sides. Cosine then
// compares hue directions first; without this, any low-saturation prompt
// scores higher against a saturated shirt of a correlated hue than against
// its own color. eps keeps a saturation incentive: pale tints of the right
// hue score below a full match.
inline constexpr real_t kBlockEps = 0.15;

struct PromptEmbedding {
    Tensor vector;                       // [12] unit (or the stored neutral)
    std::array<int, kEmbedDim> relevance{};  // 0/1 per dim
    std::string source_text;
};

struct ImageEmbedding {
    Tensor vector;          // [12] unit, differentiable w.r.t. pixels
    Tensor raw_attributes;  // [9] pre-normalization estimates in [0,1]
};

// ---------------------------------------------------------------------------
// lexicon
// ---------------------------------------------------------------------------

struct Lexicon {
    struct ShapeLabel {
        std::string label;  // e.g. "a sleeveless shirt"
        BodyPart part = BodyPart::upper;
        real_t sleeve = 0;  // upper labels
        real_t pant = 0;    // lower labels: hem length
        real_t skirt = 0;   //               silhouette blend
    };
    struct TextureLabel {
        std::string label;  // e.g. "red"
        std::array<real_t, 3> rgb{};
    };

    std::vector<ShapeLabel> shapes;
    std::vector<TextureLabel> textures;

    std::vector<const ShapeLabel*> shapes_for(BodyPart part) const {
        std::vector<const ShapeLabel*> out;
        for (const auto& s : shapes) {
            if (s.part == part) out.push_back(&s);
        }
        return out;
    }

    const ShapeLabel* find_shape(const std::string& label) const {
        for (const auto& s : shapes) {
            if (s.label == label) return &s;
        }
        return nullptr;
    }

    const TextureLabel* find_texture(const std::string& label) const {
        for (const auto& t : textures) {
            if (t.label == label) return &t;
        }
        return nullptr;
    }

    // Scaled-down label set: 3 upper shapes, 4 lower shapes, 10 colors.
    // Grayscale entries carry a slight tint so no two palette directions
    // coincide after centering.
    static Lexicon builtin() {
        Lexicon lex;
        lex.shapes = {
            {"a sleeveless shirt", BodyPart::upper, 0.0, 0, 0},
            {"a long-sleeve T-shirt", BodyPart::upper, 1.0, 0, 0},
            {"a hoodie", BodyPart::upper, 1.0, 0, 0},
            {"pants", BodyPart::lower, 0, 0.90, 0.0},
            {"shorts", BodyPart::lower, 0, 0.30, 0.0},
            {"a long skirt", BodyPart::lower, 0, 0.85, 1.0},
            {"a miniskirt", BodyPart::lower, 0, 0.45, 1.0},
        };
        lex.textures = {
            {"red", {0.90, 0.10, 0.10}},    {"green", {0.10, 0.80, 0.15}},
            {"blue", {0.10, 0.15, 0.85}},   {"yellow", {0.95, 0.90, 0.10}},
            {"black", {0.05, 0.05, 0.10}},  {"white", {0.95, 0.95, 0.88}},
            {"gray", {0.46, 0.55, 0.55}},   {"purple", {0.55, 0.10, 0.60}},
            {"orange", {0.95, 0.50, 0.08}}, {"pink", {0.95, 0.55, 0.65}},
        };
        return lex;
    }

    // Text format, one entry per line:
    //   shape   upper|lower  "label"  sleeve=V | pant=V skirt=V
    //   texture *            "label"  rgb=R,G,B
    // '#' starts a comment.
    static Lexicon load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IOError("cannot open lexicon file: " + path);
        Lexicon lex;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

            std::istringstream ls(line);
            std::string kind, part;
            ls >> kind >> part;
            std::string label = read_quoted(ls, path, lineno);

            if (kind == "shape") {
                ShapeLabel s;
                s.label = label;
                if (part == "upper") {
                    s.part = BodyPart::upper;
                } else if (part == "lower") {
                    s.part = BodyPart::lower;
                } else {
                    throw IOError(path + ":" + std::to_string(lineno) + ": bad body part");
                }
                std::string kv;
                while (ls >> kv) {
                    const auto eq = kv.find('=');
                    if (eq == std::string::npos) {
                        throw IOError(path + ":" + std::to_string(lineno) + ": expected key=value");
                    }
                    const std::string key = kv.substr(0, eq);
                    const real_t v = static_cast<real_t>(std::stod(kv.substr(eq + 1)));
                    if (key == "sleeve") s.sleeve = v;
                    else if (key == "pant") s.pant = v;
                    else if (key == "skirt") s.skirt = v;
                    else throw IOError(path + ":" + std::to_string(lineno) + ": unknown key " + key);
                }
                lex.shapes.push_back(std::move(s));
            } else if (kind == "texture") {
                TextureLabel t;
                t.label = label;
                std::string kv;
                ls >> kv;
                if (kv.rfind("rgb=", 0) != 0) {
                    throw IOError(path + ":" + std::to_string(lineno) + ": expected rgb=R,G,B");
                }
                std::istringstream cs(kv.substr(4));
                std::string c;
                for (int i = 0; i < 3; ++i) {
                    if (!std::getline(cs, c, ',')) {
                        throw IOError(path + ":" + std::to_string(lineno) + ": expected 3 channels");
                    }
                    t.rgb[static_cast<std::size_t>(i)] = static_cast<real_t>(std::stod(c));
                }
                lex.textures.push_back(std::move(t));
            } else {
                throw IOError(path + ":" + std::to_string(lineno) + ": unknown kind " + kind);
            }
        }
        if (lex.shapes.empty() && lex.textures.empty()) {
            throw EmptyLexicon("no entries in " + path);
        }
        return lex;
    }

private:
    static std::string read_quoted(std::istringstream& ls, const std::string& path,
                                   std::size_t lineno) {
        std::string tok;
        ls >> tok;
        if (tok.empty() || tok.front() != '"') {
            throw IOError(path + ":" + std::to_string(lineno) + ": label must be quoted");
        }
        std::string label = tok.substr(1);
        while (!label.empty() && label.back() != '"') {
            std::string more;
            if (!(ls >> more)) {
                throw IOError(path + ":" + std::to_string(lineno) + ": unterminated label");
            }
            label += " " + more;
        }
        if (label.empty() || label.back() != '"') {
            throw IOError(path + ":" + std::to_string(lineno) + ": unterminated label");
        }
        label.pop_back();
        return label;
    }
};

// ---------------------------------------------------------------------------
// text side
// ---------------------------------------------------------------------------

namespace detail {

inline const std::string kHuman = "a human";
inline const std::string kWearing = "a human wearing ";
inline const std::string kUpperSuffix = " upper body clothes";
inline const std::string kLowerSuffix = " lower body clothes";

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct PromptParts {
    const Lexicon::ShapeLabel* shape = nullptr;
    const Lexicon::TextureLabel* texture = nullptr;
    std::optional<BodyPart> texture_part;
    bool neutral = false;
};

// Template grammar: "a human", "a human wearing {shape label}",
// "a human wearing {color} upper/lower body clothes", and the two-clause
// extension "a human wearing {shape label} and {color} upper/lower body
// clothes" for simultaneous edits.
inline PromptParts parse_prompt(const std::string& t, const Lexicon& lex) {
    PromptParts parts;
    if (t == kHuman) {
        parts.neutral = true;
        return parts;
    }
    if (t.rfind(kWearing, 0) != 0) {
        throw UnparseablePrompt("'" + t + "' does not match the prompt templates");
    }
    std::string rest = t.substr(kWearing.size());

    std::optional<BodyPart> tex_part;
    if (ends_with(rest, kUpperSuffix)) {
        tex_part = BodyPart::upper;
        rest = rest.substr(0, rest.size() - kUpperSuffix.size());
    } else if (ends_with(rest, kLowerSuffix)) {
        tex_part = BodyPart::lower;
        rest = rest.substr(0, rest.size() - kLowerSuffix.size());
    }

    if (!tex_part) {
        // pure shape form
        parts.shape = lex.find_shape(rest);
        if (!parts.shape) throw UnknownLabel("'" + rest + "' is not a shape label");
        return parts;
    }

    const auto and_pos = rest.find(" and ");
    if (and_pos != std::string::npos) {
        const std::string shape_label = rest.substr(0, and_pos);
        const std::string color_label = rest.substr(and_pos + 5);
        parts.shape = lex.find_shape(shape_label);
        if (!parts.shape) throw UnknownLabel("'" + shape_label + "' is not a shape label");
        parts.texture = lex.find_texture(color_label);
        if (!parts.texture) throw UnknownLabel("'" + color_label + "' is not a texture label");
        if (parts.shape->part != *tex_part) {
            throw UnparseablePrompt("shape label and clothes clause disagree on the body part");
        }
        parts.texture_part = tex_part;
        return parts;
    }

    parts.texture = lex.find_texture(rest);
    if (!parts.texture) throw UnknownLabel("'" + rest + "' is not a texture label");
    parts.texture_part = tex_part;
    return parts;
}

}  // namespace detail

// The neutral prompt's stored embedding: a unit vector in the first reserved
// dim, orthogonal to every color and shape dim by construction.
inline Tensor neutral_embedding() {
    std::vector<real_t> v(kEmbedDim, 0);
    v[9] = 1;
    return Tensor::from({kEmbedDim}, std::move(v));
}

inline PromptEmbedding embed_text(const std::string& t, const Lexicon& lex) {
    const auto parts = detail::parse_prompt(t, lex);
    PromptEmbedding out;
    out.source_text = t;
    if (parts.neutral) {
        out.vector = neutral_embedding();
        out.relevance.fill(0);
        return out;
    }

    std::vector<real_t> v(kEmbedDim, 0);
    out.relevance.fill(0);
    if (parts.shape) {
        if (parts.shape->part == BodyPart::upper) {
            v[6] = parts.shape->sleeve - kAttrCenter;
            out.relevance[6] = 1;
        } else {
            v[7] = parts.shape->pant - kAttrCenter;
            v[8] = parts.shape->skirt - kAttrCenter;
            out.relevance[7] = out.relevance[8] = 1;
        }
    }
    if (parts.texture) {
        const std::size_t base = (*parts.texture_part == BodyPart::upper) ? 0 : 3;
        real_t block = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            const real_t x = parts.texture->rgb[c] - kAttrCenter;
            v[base + c] = x;
            block += x * x;
        }
        const real_t scale = real_t(1) / std::sqrt(block + kBlockEps * kBlockEps);
        for (std::size_t c = 0; c < 3; ++c) {
            v[base + c] *= scale;
            out.relevance[base + c] = 1;
        }
    }

    real_t norm = 0;
    for (real_t x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < real_t(1e-8)) {
        throw DegenerateVector("prompt '" + t + "' maps to a zero attribute vector");
    }
    for (real_t& x : v) x /= norm;
    out.vector = Tensor::from({kEmbedDim}, std::move(v));
    return out;
}

// Edit target implied by a prompt; combined shape+texture prompts take the
// shape target (its mask is the superset).
inline EditTarget target_of_prompt(const std::string& t, const Lexicon& lex) {
    const auto parts = detail::parse_prompt(t, lex);
    if (parts.neutral) throw UnknownTarget("the neutral prompt has no edit target");
    EditTarget target;
    if (parts.shape) {
        target.body_part = parts.shape->part;
        target.edit_kind = EditKind::shape;
    } else {
        target.body_part = *parts.texture_part;
        target.edit_kind = EditKind::texture;
    }
    return target;
}

// ---------------------------------------------------------------------------
// image side
// ---------------------------------------------------------------------------

// Frozen image encoder. All pooling windows are fixed at construction from
// the mean-body layout — never from the per-image parser — so the encoder
// stays honestly image-only and the retrieval metric is not circular.
struct EmbedNet {
    std::size_t width = 0, height = 0;
    std::vector<std::size_t> torso_idx;   // upper-color pooling window
    std::vector<std::size_t> thigh_idx;   // lower-color pooling window
    std::vector<std::size_t> arm_idx;     // sleeve band (both arms)
    std::vector<std::size_t> leg_idx;     // hem band (both legs)
    std::vector<std::size_t> flare_idx;   // skirt flare band
    real_t tau = 0.05;                    // color-similarity kernel width
    Tensor neutral;                       // stored neutral prompt vector

    static EmbedNet build(const GeneratorParams& gen) {
        EmbedNet net;
        net.width = gen.width;
        net.height = gen.height;
        net.neutral = neutral_embedding();

        // mean-body layout
        LatentStack mean_stack;
        std::vector<Tensor> rows(gen.groups.total(), gen.w_avg);
        mean_stack.codes = concat_rows(rows);
        mean_stack.groups = gen.groups;
        const AvatarParams mean = decode_params(mean_stack, gen);

        const real_t xc = real_t(0.5) * static_cast<real_t>(gen.width) / static_cast<real_t>(gen.height);
        const real_t tw = mean.torso_width.item();
        const real_t gap = mean.leg_separation.item();
        const real_t y_hip = real_t(0.20) + mean.torso_length.item();

        // The arm band stops above the hip line so lower-body pixels cannot
        // move upper attribute estimates.
        net.torso_idx = net.box_idx(xc - 0.7 * tw / 2, xc + 0.7 * tw / 2, 0.24, y_hip - 0.05);
        net.thigh_idx = net.box_idx(xc - 0.5 * tw / 2, xc + 0.5 * tw / 2, y_hip + 0.035, y_hip + 0.085);
        net.arm_idx = net.column_pair_idx(xc, tw / 2 + 0.0225, 0.23, 0.46);
        net.leg_idx = net.column_pair_idx(xc, (tw + gap) / 4, y_hip + 0.03, 0.90);
        net.flare_idx = net.column_pair_idx(xc, tw / 2 + 0.035, y_hip + 0.10, y_hip + 0.17);
        return net;
    }

    // Differentiable attribute extraction; the vector is the centered,
    // zero-padded, L2-normalized attribute estimate.
    ImageEmbedding embed_image(const Tensor& image) const {
        const std::size_t P = width * height;
        if (image.rank() != 3 || image.shape()[0] != 3 || image.shape()[1] != height ||
            image.shape()[2] != width) {
            throw ShapeMismatch("embed_image expects [3," + std::to_string(height) + "," +
                                std::to_string(width) + "]");
        }
        for (real_t v : image.data()) {
            if (v < real_t(-1e-9) || v > real_t(1) + real_t(1e-9)) {
                throw BadImageRange("pixels must lie in [0,1]");
            }
        }
        Tensor flat = reshape(image, {3, P});

        Tensor upper = reduce_mean(gather_cols(flat, torso_idx), 1);  // [3]
        Tensor lower = reduce_mean(gather_cols(flat, thigh_idx), 1);  // [3]
        Tensor sleeve = band_similarity(flat, arm_idx, upper);
        Tensor pant = band_similarity(flat, leg_idx, lower);
        Tensor skirt = band_similarity(flat, flare_idx, lower);

        Tensor raw = concat_rows({reshape(upper, {3, 1}), reshape(lower, {3, 1}),
                                  reshape(sleeve, {1, 1}), reshape(pant, {1, 1}),
                                  reshape(skirt, {1, 1})});  // [9,1]
        Tensor centered = sub(raw, Tensor::scalar(kAttrCenter));
        auto soft_dir = [](const Tensor& u) {
            Tensor ss = reduce_sum(mul(u, u));
            return div(u, sqrt(add(ss, Tensor::scalar(kBlockEps * kBlockEps))));
        };
        Tensor padded = concat_rows({soft_dir(slice_rows(centered, 0, 3)),
                                     soft_dir(slice_rows(centered, 3, 6)),
                                     slice_rows(centered, 6, 9), Tensor::zeros({3, 1})});  // [12,1]
        Tensor norm = l2norm(padded);
        if (norm.item() < real_t(1e-8)) {
            throw DegenerateVector("image attributes collapse to the center point");
        }
        ImageEmbedding out;
        out.vector = reshape(div(padded, norm), {kEmbedDim});
        out.raw_attributes = reshape(raw, {9});
        return out;
    }

    std::uint64_t digest() const {
        std::uint64_t h = fnv1a64(&tau, sizeof(tau));
        for (const auto* idx : {&torso_idx, &thigh_idx, &arm_idx, &leg_idx, &flare_idx}) {
            h = fnv1a64(idx->data(), idx->size() * sizeof(std::size_t), h);
        }
        return fnv1a64(neutral, h);
    }

private:
    // Fraction of band pixels whose color matches the pooled reference,
    // under a Gaussian kernel — a soft coverage integral.
    Tensor band_similarity(const Tensor& flat, const std::vector<std::size_t>& idx,
                           const Tensor& pooled) const {
        Tensor band = gather_cols(flat, idx);                   // [3, R]
        Tensor diff = sub(band, reshape(pooled, {3, 1}));       // broadcast
        Tensor ssq = reduce_sum(mul(diff, diff), 0);            // [R]
        Tensor sim = exp(mul(ssq, Tensor::scalar(-real_t(1) / tau)));
        return reduce_mean(sim);                                // [1]
    }

    std::size_t pixel_index(real_t x, real_t y) const {
        const real_t h = static_cast<real_t>(height);
        auto px = static_cast<std::ptrdiff_t>(std::lround(x * h - 0.5));
        auto py = static_cast<std::ptrdiff_t>(std::lround(y * h - 0.5));
        px = std::clamp<std::ptrdiff_t>(px, 0, static_cast<std::ptrdiff_t>(width) - 1);
        py = std::clamp<std::ptrdiff_t>(py, 0, static_cast<std::ptrdiff_t>(height) - 1);
        return static_cast<std::size_t>(py) * width + static_cast<std::size_t>(px);
    }

    std::vector<std::size_t> box_idx(real_t x0, real_t x1, real_t y0, real_t y1) const {
        std::vector<std::size_t> idx;
        const real_t h = static_cast<real_t>(height);
        for (std::size_t py = 0; py < height; ++py) {
            const real_t y = (static_cast<real_t>(py) + real_t(0.5)) / h;
            if (y < y0 || y > y1) continue;
            for (std::size_t px = 0; px < width; ++px) {
                const real_t x = (static_cast<real_t>(px) + real_t(0.5)) / h;
                if (x < x0 || x > x1) continue;
                idx.push_back(py * width + px);
            }
        }
        if (idx.empty()) throw Error("empty pooling window");
        return idx;
    }

    // One pixel column on each side of the body axis.
    std::vector<std::size_t> column_pair_idx(real_t xc, real_t dx, real_t y0, real_t y1) const {
        std::vector<std::size_t> idx;
        const real_t h = static_cast<real_t>(height);
        for (std::size_t py = 0; py < height; ++py) {
            const real_t y = (static_cast<real_t>(py) + real_t(0.5)) / h;
            if (y < y0 || y > y1) continue;
            idx.push_back(pixel_index(xc - dx, y));
            idx.push_back(pixel_index(xc + dx, y));
        }
        if (idx.empty()) throw Error("empty band");
        return idx;
    }
};

// Cosine similarity of two embedding vectors; differentiable. Inputs must
// be non-degenerate before normalization.
inline Tensor cosine(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw ShapeMismatch("cosine operands differ in size");
    Tensor na = l2norm(a);
    Tensor nb = l2norm(b);
    if (na.item() < real_t(1e-8) || nb.item() < real_t(1e-8)) {
        throw DegenerateVector("cosine of a near-zero vector");
    }
    Tensor dot = reduce_sum(mul(a, b));
    return div(dot, mul(na, nb));
}

}  // namespace tailor
