#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tailor/errors.hpp"
#include "tailor/trainer.hpp"

namespace tailor {

// Flat key-value configuration: `key = value` lines, '#' comments. Reads
// are tracked so unknown keys can be rejected after a consumer has pulled
// everything it understands.
class KeyValueConfig {
public:
    static KeyValueConfig parse_text(const std::string& text, const std::string& origin = "<text>") {
        KeyValueConfig cfg;
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            }
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return cfg;
    }

    static KeyValueConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IOError("cannot open config file: " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_text(ss.str(), path);
    }

    void set(const std::string& key, const std::string& value) {
        if (key.empty()) throw ConfigError("empty config key");
        values_[key] = value;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        consumed_.insert(key);
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    real_t get_real(const std::string& key, real_t fallback) const {
        consumed_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing junk");
            return static_cast<real_t>(v);
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': '" + it->second + "' is not a number");
        }
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        consumed_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const unsigned long long v = std::stoull(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing junk");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': '" + it->second + "' is not an integer");
        }
    }

    // Throws if the file contained keys nothing ever read.
    void reject_unknown() const {
        std::vector<std::string> unknown;
        for (const auto& [k, v] : values_) {
            if (!consumed_.count(k)) unknown.push_back(k);
        }
        if (!unknown.empty()) {
            std::string msg = "unknown config keys:";
            for (const auto& k : unknown) msg += " " + k;
            throw ConfigError(msg);
        }
    }

    std::string echo() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? "" : s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
};

// TrainConfig from flat keys; every key optional, defaults as declared.
inline TrainConfig train_config_from(const KeyValueConfig& cfg) {
    TrainConfig c;
    c.steps = cfg.get_u64("steps", c.steps);
    c.batch_size = cfg.get_u64("batch_size", c.batch_size);
    c.optimizer.lr = cfg.get_real("lr", c.optimizer.lr);
    c.optimizer.beta1 = cfg.get_real("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = cfg.get_real("beta2", c.optimizer.beta2);
    c.optimizer.lookahead_k = cfg.get_u64("lookahead_k", c.optimizer.lookahead_k);
    c.optimizer.lookahead_alpha = cfg.get_real("lookahead_alpha", c.optimizer.lookahead_alpha);
    c.seed = cfg.get_u64("seed", c.seed);
    c.generator_seed = cfg.get_u64("generator_seed", c.generator_seed);
    c.loss_weights.clip = cfg.get_real("lambda_clip", c.loss_weights.clip);
    c.loss_weights.direct = cfg.get_real("lambda_direct", c.loss_weights.direct);
    c.loss_weights.bg = cfg.get_real("lambda_bg", c.loss_weights.bg);
    c.loss_weights.norm = cfg.get_real("lambda_norm", c.loss_weights.norm);
    c.lexicon_path = cfg.get_string("lexicon", c.lexicon_path);
    const std::string part = cfg.get_string("target_part", "upper");
    if (part == "upper") c.target_part = BodyPart::upper;
    else if (part == "lower") c.target_part = BodyPart::lower;
    else throw ConfigError("target_part must be upper or lower");
    const std::string kinds = cfg.get_string("prompt_kinds", "mixed");
    if (kinds == "texture") c.prompt_kinds = PromptKinds::texture;
    else if (kinds == "shape") c.prompt_kinds = PromptKinds::shape;
    else if (kinds == "mixed") c.prompt_kinds = PromptKinds::mixed;
    else throw ConfigError("prompt_kinds must be texture, shape, or mixed");
    c.n_train = cfg.get_u64("n_train", c.n_train);
    c.n_test = cfg.get_u64("n_test", c.n_test);
    const std::string arch = cfg.get_string("arch", "attention");
    if (arch == "attention") c.arch = MapperArch::attention;
    else if (arch == "baseline") c.arch = MapperArch::baseline;
    else throw ConfigError("arch must be attention or baseline");
    c.latent_dim = cfg.get_u64("latent_dim", c.latent_dim);
    c.heads = cfg.get_u64("heads", c.heads);
    c.depth = cfg.get_u64("depth", c.depth);
    c.width = cfg.get_u64("width", c.width);
    c.height = cfg.get_u64("height", c.height);
    c.psi = cfg.get_real("psi", c.psi);
    const std::string groups = cfg.get_string("edit_groups", "coarse,medium,fine");
    c.edit_groups.clear();
    std::istringstream gs(groups);
    std::string tok;
    while (std::getline(gs, tok, ',')) {
        if (tok == "coarse") c.edit_groups.insert(Group::coarse);
        else if (tok == "medium") c.edit_groups.insert(Group::medium);
        else if (tok == "fine") c.edit_groups.insert(Group::fine);
        else throw ConfigError("edit_groups: unknown group '" + tok + "'");
    }
    return c;
}

}  // namespace tailor
