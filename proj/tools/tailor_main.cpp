// tailor — text-guided garment editing on a procedural avatar generator.
//
// Subcommands: gen (render samples), train (fit a latent mapper), edit
// (apply a trained mapper to one sample), eval (retrieval accuracy and
// background distance), gradcheck (finite-difference suites).
//
// Exit codes: 0 success, 1 usage error, 2 runtime error, 3 check failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tailor/checksuites.hpp"
#include "tailor/config.hpp"
#include "tailor/editing.hpp"
#include "tailor/embedding.hpp"
#include "tailor/generator.hpp"
#include "tailor/image_io.hpp"
#include "tailor/mapper.hpp"
#include "tailor/metrics.hpp"
#include "tailor/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tailor;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::vector<std::string> overrides;
    std::uint64_t seed = 1;
    bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "flat key=value config file");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--set", args.overrides, "override: key=value (repeatable)");
    cmd->add_option("--seed", args.seed, "seed override")->each([&](const std::string&) {
        args.seed_given = true;
    });
}

KeyValueConfig load_config(const CommonArgs& args) {
    KeyValueConfig cfg = args.config_path.empty() ? KeyValueConfig{}
                                                  : KeyValueConfig::parse_file(args.config_path);
    for (const std::string& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + kv);
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (args.seed_given) cfg.set("seed", std::to_string(args.seed));
    return cfg;
}

Lexicon load_lexicon(const std::string& path) {
    return path.empty() ? Lexicon::builtin() : Lexicon::load(path);
}

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IOError("cannot create output directory " + dir);
}

std::string joined(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

// ---------------------------------------------------------------------------

int cmd_gen(const CommonArgs& args, std::size_t count) {
    KeyValueConfig cfg = load_config(args);
    TrainConfig tc = train_config_from(cfg);
    count = cfg.get_u64("count", count);
    cfg.reject_unknown();
    std::cout << "# effective config\n" << tc.to_text() << "count = " << count << "\n";

    ensure_out_dir(args.out_dir);
    GeneratorParams gen = GeneratorParams::build(tc.generator_seed, tc.latent_dim, tc.width,
                                                 tc.height);
    Tensor zs = sample_z(tc.seed, count, tc.latent_dim);
    for (std::size_t i = 0; i < count; ++i) {
        Tensor z = reshape(slice_rows(reshape(zs, {count, tc.latent_dim}), i, i + 1),
                           {tc.latent_dim});
        RenderResult r = render(decode_params(map_to_w(z, gen, tc.psi), gen), gen);
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%06zu.ppm", i);
        write_ppm(joined(args.out_dir, name), r.image);
        std::snprintf(name, sizeof(name), "sample_%06zu_parse.pgm", i);
        write_pgm(joined(args.out_dir, name), r.regions.binary, gen.height, gen.width);
    }
    std::cout << "wrote " << count << " sample(s) to " << args.out_dir << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    KeyValueConfig cfg = load_config(args);
    TrainConfig tc = train_config_from(cfg);
    cfg.reject_unknown();
    std::cout << "# effective config\n" << tc.to_text();

    ensure_out_dir(args.out_dir);
    GeneratorParams gen = GeneratorParams::build(tc.generator_seed, tc.latent_dim, tc.width,
                                                 tc.height);
    EmbedNet net = EmbedNet::build(gen);
    Lexicon lexicon = load_lexicon(tc.lexicon_path);

    std::ofstream metrics(joined(args.out_dir, "metrics.ndjson"), std::ios::trunc);
    if (!metrics) throw IOError("cannot open metrics log");

    TrainResult result = train(tc, gen, net, lexicon, [&](const StepLog& log) {
        json j{{"step", log.step},     {"clip", log.clip},   {"direct", log.direct},
               {"bg", log.bg},         {"norm", log.norm},   {"total", log.total},
               {"wall_ms", log.wall_ms}};
        metrics << j.dump() << "\n";
        if (log.step % 50 == 0) {
            std::cout << "step " << log.step << " total " << log.total << " clip " << log.clip
                      << " direct " << log.direct << " bg " << log.bg << " norm " << log.norm
                      << "\n";
        }
    });

    const std::string ckpt_path = joined(args.out_dir, "checkpoint.bin");
    result.checkpoint.save(ckpt_path);
    std::cout << "checkpoint " << ckpt_path << " digest " << std::hex
              << result.checkpoint.content_digest() << std::dec << "\n";
    return 0;
}

int cmd_edit(const CommonArgs& args, const std::string& ckpt_path, const std::string& prompt,
             const std::string& mode) {
    CheckpointBundle bundle = CheckpointBundle::load(ckpt_path);
    KeyValueConfig snapshot = KeyValueConfig::parse_text(bundle.config_text, ckpt_path);
    TrainConfig tc = train_config_from(snapshot);
    KeyValueConfig cfg = load_config(args);
    tc.seed = cfg.get_u64("seed", tc.seed);
    cfg.reject_unknown();

    ensure_out_dir(args.out_dir);
    GeneratorParams gen = GeneratorParams::build(tc.generator_seed, tc.latent_dim, tc.width,
                                                 tc.height);
    Lexicon lexicon = load_lexicon(tc.lexicon_path);
    MapperVariant params = load_mapper(bundle, tc);

    PromptEmbedding text = embed_text(prompt, lexicon);
    EditTarget target = target_of_prompt(prompt, lexicon);

    TapeSuspend off;
    Tensor z = reshape(sample_z(tc.seed, 1, tc.latent_dim), {tc.latent_dim});
    LatentStack w = map_to_w(z, gen, tc.psi);
    Tensor delta = detail::forward_variant(params, w, text);
    delta = detail::apply_group_mask(delta, w.groups, tc.edit_groups);
    LatentStack w_edited{add(w.codes, delta), w.groups};

    RenderResult original = render(decode_params(w, gen), gen);
    RenderResult raw_edit = render(decode_params(w_edited, gen), gen);
    write_ppm(joined(args.out_dir, "edit_original.ppm"), original.image);
    write_ppm(joined(args.out_dir, "edit_raw.ppm"), raw_edit.image);

    if (mode != "none") {
        MaskedEditResult r = mode == "feature" ? feature_space_edit(w, w_edited, target, gen)
                                               : pixel_space_edit(w, w_edited, target, gen);
        write_ppm(joined(args.out_dir, "edit_masked.ppm"), r.image);
        Mask scaled = r.mask;
        for (auto& v : scaled) v = v ? 255 : 0;
        write_pgm(joined(args.out_dir, "edit_mask.pgm"), scaled, gen.height, gen.width);
    }
    std::cout << "edited '" << prompt << "' (" << mode << ") into " << args.out_dir << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& ckpt_path, std::size_t n_test,
             const std::string& mode) {
    CheckpointBundle bundle = CheckpointBundle::load(ckpt_path);
    KeyValueConfig snapshot = KeyValueConfig::parse_text(bundle.config_text, ckpt_path);
    TrainConfig tc = train_config_from(snapshot);
    KeyValueConfig cfg = load_config(args);
    if (n_test == 0) n_test = tc.n_test;
    cfg.reject_unknown();

    ensure_out_dir(args.out_dir);
    GeneratorParams gen = GeneratorParams::build(tc.generator_seed, tc.latent_dim, tc.width,
                                                 tc.height);
    EmbedNet net = EmbedNet::build(gen);
    Lexicon lexicon = load_lexicon(tc.lexicon_path);
    MapperVariant params = load_mapper(bundle, tc);

    EditMode em = EditMode::none;
    if (mode == "feature") em = EditMode::feature;
    else if (mode == "pixel") em = EditMode::pixel;
    else if (mode != "none") throw ConfigError("mode must be none, feature, or pixel");

    EvalReport report = evaluate(params, tc, gen, net, lexicon, n_test, em);

    json samples = json::array();
    for (const auto& s : report.samples) {
        samples.push_back(json{{"index", s.index},
                               {"prompt", s.prompt},
                               {"cos_edited", s.cos_edited},
                               {"cos_original", s.cos_original},
                               {"hit", s.hit},
                               {"bg_mse", s.bg_mse},
                               {"bg_proj", s.bg_proj}});
    }
    json j{{"method", report.method},
           {"clip_acc", report.clip_acc},
           {"bg_dist_proj", report.bg_dist_proj},
           {"bg_dist_mse", report.bg_dist_mse},
           {"samples", samples}};
    std::ofstream out(joined(args.out_dir, "report.json"), std::ios::trunc);
    out << j.dump(2) << "\n";

    std::cout << report.method << ": clip_acc " << report.clip_acc << "% bg_proj "
              << report.bg_dist_proj << " bg_mse " << report.bg_dist_mse << " over "
              << report.samples.size() << " samples\n";
    return 0;
}

int cmd_gradcheck(const CommonArgs& args, const std::string& scope) {
    KeyValueConfig cfg = load_config(args);
    TrainConfig tc = train_config_from(cfg);
    cfg.reject_unknown();

    std::vector<GradCheckResult> results;
    const bool all = scope == "all";
    if (all || scope == "ops") {
        auto r = checksuites::ops_suite();
        results.insert(results.end(), r.begin(), r.end());
    }
    if (all || scope == "generator") {
        GeneratorParams gen = GeneratorParams::build(tc.generator_seed, tc.latent_dim, tc.width,
                                                     tc.height);
        auto r = checksuites::generator_suite(gen);
        results.insert(results.end(), r.begin(), r.end());
    }
    if (all || scope == "mapper") {
        auto r = checksuites::mapper_suite();
        results.insert(results.end(), r.begin(), r.end());
    }
    if (all || scope == "losses") {
        GeneratorParams gen = GeneratorParams::build(tc.generator_seed, tc.latent_dim, tc.width,
                                                     tc.height);
        EmbedNet net = EmbedNet::build(gen);
        auto r = checksuites::losses_suite(gen, net);
        results.insert(results.end(), r.begin(), r.end());
    }
    if (results.empty()) throw ConfigError("scope must be ops, generator, mapper, losses, or all");

    bool any_failed = false;
    std::printf("%-36s %12s %12s %8s %s\n", "check", "max_rel_err", "tolerance", "coords", "status");
    for (const auto& r : results) {
        std::printf("%-36s %12.3e %12.1e %8zu %s\n", r.name.c_str(), r.max_rel_err, r.tolerance,
                    r.coords_checked, r.passed ? "PASS" : "FAIL");
        any_failed = any_failed || !r.passed;
    }
    return any_failed ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"text-guided garment editing on a procedural avatar generator"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, edit_args, eval_args, check_args;
    std::size_t gen_count = 1;
    std::string edit_ckpt, edit_prompt, edit_mode = "feature";
    std::string eval_ckpt, eval_mode = "none";
    std::size_t eval_n = 0;
    std::string check_scope = "all";

    CLI::App* gen_cmd = app.add_subcommand("gen", "render avatar samples with parse maps");
    add_common(gen_cmd, gen_args);
    gen_cmd->add_option("--count", gen_count, "number of samples");

    CLI::App* train_cmd = app.add_subcommand("train", "train a latent mapper");
    add_common(train_cmd, train_args);

    CLI::App* edit_cmd = app.add_subcommand("edit", "edit one sample with a trained mapper");
    add_common(edit_cmd, edit_args);
    edit_cmd->add_option("--checkpoint", edit_ckpt, "trained checkpoint")->required();
    edit_cmd->add_option("--prompt", edit_prompt, "edit prompt")->required();
    edit_cmd->add_option("--mode", edit_mode, "none | feature | pixel");

    CLI::App* eval_cmd = app.add_subcommand("eval", "retrieval accuracy and background distance");
    add_common(eval_cmd, eval_args);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
    eval_cmd->add_option("--n-test", eval_n, "test sample count (0: config value)");
    eval_cmd->add_option("--mode", eval_mode, "none | feature | pixel");

    CLI::App* check_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suites");
    add_common(check_cmd, check_args);
    check_cmd->add_option("--scope", check_scope, "ops | generator | mapper | losses | all");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen(gen_args, gen_count);
        if (train_cmd->parsed()) return cmd_train(train_args);
        if (edit_cmd->parsed()) return cmd_edit(edit_args, edit_ckpt, edit_prompt, edit_mode);
        if (eval_cmd->parsed()) return cmd_eval(eval_args, eval_ckpt, eval_n, eval_mode);
        if (check_cmd->parsed()) return cmd_gradcheck(check_args, check_scope);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
