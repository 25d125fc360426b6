#include "swtt/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "swtt/analysis.hpp"
#include "swtt/checkpoint.hpp"
#include "swtt/config_file.hpp"
#include "swtt/errors.hpp"
#include "swtt/image_io.hpp"
#include "swtt/log.hpp"
#include "swtt/sampler.hpp"
#include "swtt/token_file.hpp"
#include "swtt/toy_corpus.hpp"
#include "swtt/trainer.hpp"

namespace fs = std::filesystem;

namespace swtt {

namespace {

const std::map<std::string, std::vector<std::string>> kKnownKeys{
    {"", {"seed"}},
    {"data", {"image_size", "latent_size"}},
    {"codec", {"vocab", "scales", "rounds", "lloyd_iters"}},
    {"model",
     {"depth", "width", "heads", "ffn_hidden", "text_width", "regime", "rope_theta", "rope_max_size",
      "high_precision_head", "sandwich_norm", "swiglu"}},
    {"train", {"steps", "batch", "lr_start", "lr_end", "beta1", "beta2", "sigma", "drop_prob", "log_every"}},
    {"sample", {"cfg", "cfg_off_last", "top_k", "top_p", "nucleus_scales", "temperatures", "cache"}},
    {"bench", {"reps", "warmup", "scales", "latent_size", "width", "depth", "heads", "vocab", "cfg_off_last"}},
    {"gradcheck", {"width", "depth", "heads", "scales", "latent_size", "step", "threshold"}},
};

struct Settings {
    ConfigFile file;
    std::uint64_t seed = 0;
};

Settings load_settings(const std::string& config_path, const std::vector<std::string>& overrides,
                       const std::optional<std::uint64_t>& seed) {
    Settings s;
    if (!config_path.empty()) s.file = ConfigFile::load(config_path);
    for (const std::string& o : overrides) s.file.apply_override(o);
    s.file.check_known(kKnownKeys);
    s.seed = seed ? *seed : s.file.get_size("", "seed", 0);
    return s;
}

// ---- data directory: <label>.png plus index.txt ("label<TAB>prompt<TAB>file") ----

struct DataItem {
    std::string label;
    std::string prompt;
    Image image;
};

void write_dataset(const fs::path& dir, const ToyCorpus& corpus) {
    fs::create_directories(dir);
    std::ofstream index(dir / "index.txt");
    if (!index) throw FormatError("cannot write " + (dir / "index.txt").string());
    for (const ToyExample& e : corpus.examples) {
        const std::string file = e.label + ".png";
        write_image(dir / file, e.image);
        index << e.label << '\t' << e.prompt << '\t' << file << '\n';
    }
}

std::vector<DataItem> read_dataset(const fs::path& dir) {
    std::ifstream index(dir / "index.txt");
    if (!index) throw DataError("no index.txt in data directory " + dir.string());
    std::vector<DataItem> items;
    for (std::string line; std::getline(index, line);) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        DataItem it;
        std::string file;
        if (!std::getline(ls, it.label, '\t') || !std::getline(ls, it.prompt, '\t') || !std::getline(ls, file)) {
            throw DataError("malformed index line '" + line + "'");
        }
        it.image = read_image(dir / file);
        items.push_back(std::move(it));
    }
    if (items.empty()) throw DataError("data directory " + dir.string() + " lists no images");
    return items;
}

std::size_t latent_size(const Settings& s) { return s.file.get_size("data", "latent_size", 16); }

std::vector<FeatureMap> dataset_latents(const std::vector<DataItem>& items, std::size_t size) {
    std::vector<FeatureMap> out;
    for (const DataItem& it : items) {
        if (it.image.channels != 3) throw DataError("training images must be RGB");
        out.push_back(image_to_latent(it.image, {size, size}));
    }
    return out;
}

ModelConfig model_config(const Settings& s, const ScaleSchedule& sched, std::size_t vocab) {
    const ConfigFile& f = s.file;
    ModelConfig mc;
    mc.depth = f.get_size("model", "depth", mc.depth);
    mc.width = f.get_size("model", "width", mc.width);
    mc.heads = f.get_size("model", "heads", mc.heads);
    mc.ffn_hidden = f.get_size("model", "ffn_hidden", mc.ffn_hidden);
    mc.text_width = f.get_size("model", "text_width", mc.text_width);
    mc.regime = parse_regime(f.get("model", "regime", to_string(mc.regime)));
    mc.rope_theta = f.get_double("model", "rope_theta", mc.rope_theta);
    mc.rope_max_size = f.get_size("model", "rope_max_size", mc.rope_max_size);
    mc.variant.high_precision_head = f.get_bool("model", "high_precision_head", true);
    mc.variant.sandwich_norm = f.get_bool("model", "sandwich_norm", true);
    mc.variant.swiglu = f.get_bool("model", "swiglu", true);
    mc.vocab = vocab;
    mc.channels = 3;
    mc.prompt_vocab = ToyCorpus::prompt_vocab();
    mc.schedule = sched;
    mc.seed = derive_seed(s.seed, 2);
    mc.validate();
    return mc;
}

SamplerConfig sampler_config(const Settings& s) {
    const ConfigFile& f = s.file;
    SamplerConfig sc;
    sc.guidance = f.get_double("sample", "cfg", sc.guidance);
    sc.cfg_off_last = f.get_size("sample", "cfg_off_last", sc.cfg_off_last);
    sc.top_k = f.get_size("sample", "top_k", sc.top_k);
    sc.top_p = f.get_double("sample", "top_p", sc.top_p);
    sc.nucleus_scales = f.get_size("sample", "nucleus_scales", sc.nucleus_scales);
    sc.temperatures = f.get_doubles("sample", "temperatures");
    sc.use_cache = f.get_bool("sample", "cache", true);
    sc.seed = s.seed;
    return sc;
}

Checkpoint require_checkpoint(const std::string& path) {
    if (path.empty()) throw UsageError("--checkpoint is required");
    return load_checkpoint(path);
}

const CodeBook& require_codebook(const Checkpoint& ck) {
    if (!ck.codebook) throw UsageError("checkpoint has no codebook; run fit-codebook first");
    return *ck.codebook;
}

ConditionBundle condition_for(const Model& model, const std::string& cond) {
    if (cond.empty()) return model.null_condition();
    return model.encode_prompt(make_toy_corpus(0).resolve(cond));
}

void write_matrix(const fs::path& path, const Tensor& m, const std::vector<std::string>& col_names) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write " + path.string());
    os << "scale";
    for (const std::string& c : col_names) os << ' ' << c;
    os << '\n' << std::setprecision(9);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        os << r + 1;
        for (double v : m.row(r)) os << ' ' << v;
        os << '\n';
    }
}

void write_sample_outputs(const GenerationResult& res, const fs::path& out, const std::string& tokens,
                          std::size_t vocab) {
    write_image(out, res.image);
    if (!tokens.empty()) write_token_file(tokens, res.pyramid, vocab);
    std::cout << "wrote " << out.string() << " (" << res.stats.cond_passes << " conditional, "
              << res.stats.uncond_passes << " unconditional passes)\n";
}

// ---- subcommands ----

int cmd_make_data(const Settings& s, const std::string& out) {
    const ToyCorpus corpus = make_toy_corpus(s.seed, s.file.get_size("data", "image_size", 16));
    write_dataset(out, corpus);
    std::cout << "wrote " << corpus.examples.size() << " images to " << out << '\n';
    return 0;
}

int cmd_fit_codebook(const Settings& s, const std::string& data, const std::string& out) {
    const auto items = read_dataset(data);
    const std::size_t size = latent_size(s);
    const auto latents = dataset_latents(items, size);
    const ScaleSchedule sched = build_scale_schedule(s.file.get_size("codec", "scales", 5), {size, size});
    FitOptions opts;
    opts.lloyd_iters = s.file.get_size("codec", "lloyd_iters", opts.lloyd_iters);
    const std::size_t vocab = s.file.get_size("codec", "vocab", 32);
    const FitResult fit =
        fit_codebook(latents, vocab, s.file.get_size("codec", "rounds", 3), derive_seed(s.seed, 1), sched, opts);
    const Model model(model_config(s, sched, vocab));
    save_checkpoint(out, model, &fit.codebook);
    std::cout << "codebook mse per round:";
    for (double m : fit.mse_history) std::cout << ' ' << m;
    std::cout << "\nwrote " << out << '\n';
    return 0;
}

int cmd_train(const Settings& s, const std::string& ckpt, const std::string& data, const std::string& out,
              const std::string& log_path) {
    Checkpoint ck = require_checkpoint(ckpt);
    const CodeBook& cb = require_codebook(ck);
    const auto items = read_dataset(data);
    const GridSize final = ck.model.config().schedule.final_size();
    if (final.h != final.w) throw DataError("checkpoint latent grid is not square");
    TrainData td;
    td.latents = dataset_latents(items, final.h);
    td.codebook = cb;
    for (const DataItem& it : items) td.cond_ids.push_back(ck.model.tokenize(it.prompt));

    const ConfigFile& f = s.file;
    TrainConfig tc;
    tc.steps = f.get_size("train", "steps", tc.steps);
    tc.batch = f.get_size("train", "batch", items.size());
    tc.lr_start = f.get_double("train", "lr_start", tc.lr_start);
    tc.lr_end = f.get_double("train", "lr_end", tc.lr_end);
    tc.beta1 = f.get_double("train", "beta1", tc.beta1);
    tc.beta2 = f.get_double("train", "beta2", tc.beta2);
    tc.sigma = f.get_double("train", "sigma", tc.sigma);
    tc.drop_prob = f.get_double("train", "drop_prob", tc.drop_prob);
    tc.log_every = f.get_size("train", "log_every", tc.log_every);
    tc.seed = derive_seed(s.seed, 3);

    std::ofstream log_file;
    std::ostream* log_stream = nullptr;
    if (!log_path.empty()) {
        log_file.open(log_path);
        if (!log_file) throw FormatError("cannot write " + log_path);
        log_stream = &log_file;
    }
    const TrainResult r = train_loop(ck.model, td, tc, log_stream);
    save_checkpoint(out, ck.model, &cb);
    std::cout << "final loss " << r.log.back().loss << ", teacher-forced accuracy " << r.final_accuracy << "\nwrote "
              << out << '\n';
    return 0;
}

int cmd_sample(const Settings& s, const std::string& ckpt, const std::string& cond, const std::string& out,
               const std::string& tokens) {
    const Checkpoint ck = require_checkpoint(ckpt);
    const GenerationResult res = generate(ck.model, require_codebook(ck), condition_for(ck.model, cond),
                                          sampler_config(s));
    write_sample_outputs(res, out, tokens, ck.model.config().vocab);
    return 0;
}

int cmd_switch(const Settings& s, const std::string& ckpt, const std::string& a, const std::string& b,
               std::size_t at, const std::string& out, const std::string& tokens) {
    const Checkpoint ck = require_checkpoint(ckpt);
    const GenerationResult res = switch_condition(ck.model, require_codebook(ck), condition_for(ck.model, a),
                                                  condition_for(ck.model, b), at, sampler_config(s));
    write_sample_outputs(res, out, tokens, ck.model.config().vocab);
    return 0;
}

int cmd_analyze(const Settings& s, const std::string& ckpt, const std::string& data, const std::string& cond,
                const std::string& out_dir) {
    const Checkpoint ck = require_checkpoint(ckpt);
    const Model& model = ck.model;
    const CodeBook& cb = require_codebook(ck);
    const ScaleSchedule& sched = model.config().schedule;
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);

    const ConditionBundle c = condition_for(model, cond);
    const GenerationResult gen = generate(model, cb, c, sampler_config(s));
    const Tensor cross = cross_attention_scale_map(model, c, pyramid_inputs(gen.pyramid, cb, sched));
    std::vector<std::string> words;
    for (std::size_t id : c.ids) words.push_back(model.config().prompt_vocab[id]);
    write_matrix(dir / "cross_attention.txt", cross, words);
    write_image(dir / "cross_attention.pgm", heatmap(cross, 16));

    const auto items = read_dataset(data);
    const GridSize final = sched.final_size();
    const auto latents = dataset_latents(items, final.h);
    std::vector<ConditionBundle> conds;
    std::vector<ScaleInputs> inputs;
    for (std::size_t i = 0; i < items.size(); ++i) {
        conds.push_back(model.encode_prompt(items[i].prompt));
        inputs.push_back(pyramid_inputs(encode_pyramid(latents[i], cb, sched), cb, sched));
    }
    const Tensor self_map = self_attention_scale_map(model, conds, inputs);
    std::vector<std::string> scales;
    for (std::size_t j = 1; j <= sched.size(); ++j) scales.push_back("s" + std::to_string(j));
    write_matrix(dir / "self_attention.txt", self_map, scales);
    write_image(dir / "self_attention.pgm", heatmap(self_map, 16));

    const std::vector<double> norms = activation_norm_probe(model, conds, inputs);
    std::ofstream ns(dir / "activation_norms.txt");
    ns << "block norm\n" << std::setprecision(9);
    for (std::size_t i = 0; i < norms.size(); ++i) ns << i + 1 << ' ' << norms[i] << '\n';
    std::cout << "wrote attention maps and activation norms to " << out_dir << '\n';
    return 0;
}

int cmd_bench(const Settings& s, const std::string& regimes, const std::string& out, bool single) {
    const ConfigFile& f = s.file;
    const std::size_t size = f.get_size("bench", "latent_size", 16);
    const ScaleSchedule sched = build_scale_schedule(f.get_size("bench", "scales", 10), {size, size});
    BenchConfig bc;
    bc.model.depth = f.get_size("bench", "depth", 2);
    bc.model.width = f.get_size("bench", "width", 32);
    bc.model.heads = f.get_size("bench", "heads", 2);
    bc.model.ffn_hidden = 2 * bc.model.width;
    bc.model.vocab = f.get_size("bench", "vocab", 32);
    bc.model.prompt_vocab = ToyCorpus::prompt_vocab();
    bc.model.schedule = sched;
    bc.model.seed = derive_seed(s.seed, 4);
    bc.model.validate();
    bc.reps = f.get_size("bench", "reps", 20);
    bc.warmup = f.get_size("bench", "warmup", 2);
    bc.cfg_off_last = f.get_size("bench", "cfg_off_last", 2);
    bc.guidance = f.get_double("sample", "cfg", 4.0);
    bc.prompt = "red circle";
    bc.precision = single ? Precision::Single : Precision::Double;
    bc.seed = s.seed;
    if (regimes != "all" && regimes != "causal" && regimes != "diagonal") {
        throw UsageError("--regimes must be all, causal or diagonal");
    }
    Rng rng(derive_seed(s.seed, 5));
    Tensor codes({bc.model.vocab, 3});
    for (double& x : codes.data()) x = rng.uniform() * 2.0 - 1.0;
    std::vector<BenchRow> rows = latency_bench(bc, CodeBook(codes));
    if (regimes != "all") {
        const AttentionRegime keep = regimes == "causal" ? AttentionRegime::BlockCausal : AttentionRegime::BlockDiagonal;
        std::erase_if(rows, [&](const BenchRow& r) { return r.bench.regime != keep; });
    }
    write_bench_table(std::cout, rows);
    if (!out.empty()) {
        std::ofstream os(out);
        if (!os) throw FormatError("cannot write " + out);
        write_bench_table(os, rows);
    }
    const auto violations = bench_ordering_violations(rows);
    for (const std::string& v : violations) std::cerr << "ordering violated: " << v << '\n';
    return violations.empty() ? 0 : 2;
}

int cmd_gradcheck(const Settings& s, std::optional<std::size_t> width, std::optional<std::size_t> depth) {
    const ConfigFile& f = s.file;
    ModelConfig mc;
    mc.width = width ? *width : f.get_size("gradcheck", "width", 8);
    mc.depth = depth ? *depth : f.get_size("gradcheck", "depth", 2);
    mc.heads = f.get_size("gradcheck", "heads", 2);
    mc.ffn_hidden = 2 * mc.width;
    mc.text_width = mc.width;
    mc.vocab = 8;
    mc.prompt_vocab = ToyCorpus::prompt_vocab();
    const std::size_t size = f.get_size("gradcheck", "latent_size", 4);
    mc.schedule = build_scale_schedule(f.get_size("gradcheck", "scales", 3), {size, size});
    mc.regime = parse_regime(f.get("model", "regime", "block-causal"));
    mc.seed = derive_seed(s.seed, 6);
    mc.validate();
    const double threshold = f.get_double("gradcheck", "threshold", 1e-4);
    const ModelGradCheck r = model_gradient_check(mc, s.seed, f.get_double("gradcheck", "step", 1e-3));
    std::cout << "checked " << r.result.checked << " entries, max rel. error " << r.result.max_rel_error << " at "
              << r.worst_name << "[" << r.result.worst_index << "] (analytic " << r.result.analytic << ", numeric "
              << r.result.numeric << ")\n";
    if (r.result.max_rel_error >= threshold) {
        std::cerr << "gradient check failed: " << r.result.max_rel_error << " >= " << threshold << '\n';
        return 2;
    }
    return 0;
}

}  // namespace

int cli_dispatch(int argc, char** argv) {
    CLI::App app{"swtt: scale-wise next-scale prediction transformer toolkit"};
    app.require_subcommand(1);
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "key = value config file with [sections]");
    app.add_option("--set", overrides, "override one config key, section.key=value");
    app.add_option("--seed", seed, "seed for every random choice");

    std::string out, data, ckpt, cond, cond_b, tokens, log_path, regimes = "all";
    std::size_t switch_scale = 1;
    std::optional<double> cfg_scale;
    std::optional<std::size_t> cfg_off, steps, width, depth, reps;
    bool no_cache = false, single = false;

    auto* make_data = app.add_subcommand("make-data", "write the toy image corpus");
    make_data->add_option("--out", out, "output directory")->required();

    auto* fit = app.add_subcommand("fit-codebook", "fit the residual-quantization codebook; writes a fresh model file");
    fit->add_option("--data", data, "data directory")->required();
    fit->add_option("--out", out, "model file to write")->required();

    auto* train = app.add_subcommand("train", "teacher-forced training");
    train->add_option("--checkpoint", ckpt, "model file with codebook")->required();
    train->add_option("--data", data, "data directory")->required();
    train->add_option("--out", out, "trained model file")->required();
    train->add_option("--log", log_path, "training log table");
    train->add_option("--steps", steps, "optimizer steps");

    auto add_sampling = [&](CLI::App* sub) {
        sub->add_option("--checkpoint", ckpt, "model file")->required();
        sub->add_option("--out", out, "output image (.png, .ppm)")->required();
        sub->add_option("--tokens", tokens, "also write the token pyramid");
        sub->add_option("--cfg", cfg_scale, "guidance scale");
        sub->add_option("--cfg-off-last", cfg_off, "disable guidance at the last K scales");
        sub->add_flag("--no-cache", no_cache, "recompute the prefix instead of using a KV cache");
    };
    auto* sample = app.add_subcommand("sample", "generate one image");
    add_sampling(sample);
    sample->add_option("--cond", cond, "class label or prompt; empty for unconditional");

    auto* sw = app.add_subcommand("switch", "switch the prompt from a given scale on");
    add_sampling(sw);
    sw->add_option("--cond-a", cond, "prompt for the early scales")->required();
    sw->add_option("--cond-b", cond_b, "prompt from the switch scale on")->required();
    sw->add_option("--switch-scale", switch_scale, "first scale (1-based) using --cond-b")->required();

    auto* analyze = app.add_subcommand("analyze", "attention maps and activation norms");
    analyze->add_option("--checkpoint", ckpt, "model file")->required();
    analyze->add_option("--data", data, "data directory for the self-attention batch")->required();
    analyze->add_option("--cond", cond, "prompt for the cross-attention map")->required();
    analyze->add_option("--out-dir", out, "output directory")->required();

    auto* bench = app.add_subcommand("bench", "latency benchmark of the attention regimes and late CFG");
    bench->add_option("--regimes", regimes, "all, causal or diagonal");
    bench->add_option("--reps", reps, "timed repetitions per configuration");
    bench->add_option("--width", width, "model width");
    bench->add_option("--out", out, "also write the table here");
    bench->add_flag("--single", single, "run blocks in single precision");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the model gradients");
    gradcheck->add_option("--width", width, "model width");
    gradcheck->add_option("--depth", depth, "number of blocks");

    for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        Settings s = load_settings(config_path, overrides, seed);
        if (cfg_scale) s.file.set("sample", "cfg", std::to_string(*cfg_scale));
        if (cfg_off) s.file.set("sample", "cfg_off_last", std::to_string(*cfg_off));
        if (no_cache) s.file.set("sample", "cache", "false");
        if (steps) s.file.set("train", "steps", std::to_string(*steps));
        if (reps) s.file.set("bench", "reps", std::to_string(*reps));
        if (width && bench->parsed()) s.file.set("bench", "width", std::to_string(*width));

        if (make_data->parsed()) return cmd_make_data(s, out);
        if (fit->parsed()) return cmd_fit_codebook(s, data, out);
        if (train->parsed()) return cmd_train(s, ckpt, data, out, log_path);
        if (sample->parsed()) return cmd_sample(s, ckpt, cond, out, tokens);
        if (sw->parsed()) return cmd_switch(s, ckpt, cond, cond_b, switch_scale, out, tokens);
        if (analyze->parsed()) return cmd_analyze(s, ckpt, data, cond, out);
        if (bench->parsed()) return cmd_bench(s, regimes, out, single);
        if (gradcheck->parsed()) return cmd_gradcheck(s, width, depth);
    } catch (const UsageError& e) {
        log::error(e.what());
        return 1;
    } catch (const ConfigError& e) {
        log::error(e.what());
        return 1;
    } catch (const Error& e) {
        log::error(e.what());
        return 2;
    } catch (const std::exception& e) {
        log::error(e.what());
        return 2;
    }
    return 1;
}

}  // namespace swtt
