// advhaze: command-line front end for haze attacks and their evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "advhaze/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace advhaze;

namespace {

struct AttackFlags {
    std::string config, corpus_dir, depth_dir, depth_fallback, attack, weights, model_id, output_dir;
    std::uint64_t seed = 0;
    std::size_t parallelism = 1, max_images = 0, n = 0;
    bool save_params = false, early_stop = false;
    double eps_a = 0, eps_b = 0, a0 = 0, b0 = 0, alpha_a = 0, alpha_b = 0, mu = 0, sigma_a = 0, sigma_b = 0, eps = 0;
};

void add_attack(CLI::App& app, AttackFlags& f, std::map<std::string, CLI::Option*>& opts) {
    auto* cmd = app.add_subcommand("attack", "Run an attack over a corpus directory");
    opts["config"] = cmd->add_option("--config", f.config, "JSON run configuration; other flags override it")->check(CLI::ExistingFile);
    opts["corpus-dir"] = cmd->add_option("--corpus-dir", f.corpus_dir, "Corpus with images/, labels.csv");
    opts["depth-dir"] = cmd->add_option("--depth-dir", f.depth_dir, "Directory of <image_id>.pfm depth maps");
    opts["depth-fallback"] = cmd->add_option("--depth-fallback", f.depth_fallback, "Synthetic depth when no file matches (default v-ramp)");
    opts["attack"] = cmd->add_option("--attack", f.attack, "hadvhaze, iadvhaze, fgsm, ifgsm or mifgsm (default iadvhaze)");
    opts["weights"] = cmd->add_option("--weights", f.weights, "Reference CNN weight file");
    opts["model-id"] = cmd->add_option("--model-id", f.model_id, "Name recorded for the attacked model");
    opts["output-dir"] = cmd->add_option("--output-dir", f.output_dir, "Run directory to create");
    opts["seed"] = cmd->add_option("--seed", f.seed, "Seed for corpus subsampling");
    opts["parallelism"] = cmd->add_option("--parallelism", f.parallelism, "Worker threads (0 = all cores)");
    opts["max-images"] = cmd->add_option("--max-images", f.max_images, "Attack a seeded sample of this many images");
    opts["save-params"] = cmd->add_flag("--save-params", f.save_params, "Dump optimized haze fields as PFM");
    opts["eps-a"] = cmd->add_option("--eps-a", f.eps_a, "Radius of the A box");
    opts["eps-b"] = cmd->add_option("--eps-b", f.eps_b, "Radius of the beta box");
    opts["a0"] = cmd->add_option("--a0", f.a0, "Initial atmospheric light");
    opts["b0"] = cmd->add_option("--b0", f.b0, "Initial scattering coefficient");
    opts["alpha-a"] = cmd->add_option("--alpha-a", f.alpha_a, "Step size for A");
    opts["alpha-b"] = cmd->add_option("--alpha-b", f.alpha_b, "Step size for beta");
    opts["n"] = cmd->add_option("--n", f.n, "Iterations");
    opts["mu"] = cmd->add_option("--mu", f.mu, "Momentum");
    opts["sigma-a"] = cmd->add_option("--sigma-a", f.sigma_a, "Gaussian width for A' (px)");
    opts["sigma-b"] = cmd->add_option("--sigma-b", f.sigma_b, "Gaussian width for beta' (px)");
    opts["early-stop"] = cmd->add_flag("--early-stop", f.early_stop, "Stop once the image is misclassified");
    opts["eps"] = cmd->add_option("--eps", f.eps, "Pixel budget of the noise attacks");
}

RunConfig resolve_run_config(const AttackFlags& f, const std::map<std::string, CLI::Option*>& opts) {
    json j = json::object();
    if (!f.config.empty()) j = harness_detail::parse_json_file(f.config);
    auto given = [&](const char* k) { return opts.at(k)->count() > 0; };
    if (given("corpus-dir")) j["corpus-dir"] = f.corpus_dir;
    if (given("depth-dir")) j["depth-dir"] = f.depth_dir;
    if (given("depth-fallback")) j["depth-fallback"] = f.depth_fallback;
    if (given("attack")) j["attack"] = f.attack;
    if (given("output-dir")) j["output-dir"] = f.output_dir;
    if (given("seed")) j["seed"] = f.seed;
    if (given("parallelism")) j["parallelism"] = f.parallelism;
    if (given("max-images")) j["max-images"] = f.max_images;
    if (given("save-params")) j["save-params"] = f.save_params;
    if (given("weights")) {
        json c = j.value("classifier", json::object());
        c.erase("adapter");
        c["weights"] = f.weights;
        j["classifier"] = c;
    }
    if (given("model-id")) j["classifier"]["id"] = f.model_id;

    json p = j.value("attack-params", json::object());
    const std::map<std::string, json> params = {
        {"eps-a", f.eps_a}, {"eps-b", f.eps_b}, {"a0", f.a0},           {"b0", f.b0},           {"alpha-a", f.alpha_a},
        {"alpha-b", f.alpha_b}, {"n", f.n},     {"mu", f.mu},           {"sigma-a", f.sigma_a}, {"sigma-b", f.sigma_b},
        {"early-stop", f.early_stop},           {"eps", f.eps}};
    for (const auto& [k, v] : params) {
        if (given(k.c_str())) p[k] = v;
    }
    if (!p.empty()) j["attack-params"] = p;
    return RunConfig::from_json(j);
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("not a number: '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError("empty value list");
    return out;
}

std::pair<std::string, std::string> split_named(const std::string& s, const char* what) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
        throw ConfigError(std::string(what) + " must look like <id>=<value>, got '" + s + "'");
    }
    return {s.substr(0, eq), s.substr(eq + 1)};
}

void print_logits(const Logits& l) {
    json arr = json::array();
    for (double v : l.values) arr.push_back(v);
    std::cout << arr.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial haze synthesis and evaluation"};
    app.require_subcommand(1);

    AttackFlags af;
    std::map<std::string, CLI::Option*> attack_opts;
    add_attack(app, af, attack_opts);

    std::string grid_image, grid_depth, grid_synth = "v-ramp", grid_a = "0.8,0.9,1.0", grid_b = "0.05,0.10,0.15,0.20", grid_out;
    auto* grid = app.add_subcommand("grid", "Render a grid of homogeneous haze settings");
    grid->add_option("--image", grid_image, "Input PNG")->required()->check(CLI::ExistingFile);
    auto* grid_depth_opt = grid->add_option("--depth", grid_depth, "Depth PFM")->check(CLI::ExistingFile);
    grid->add_option("--depth-synthetic", grid_synth, "Synthetic depth when --depth is absent")->excludes(grid_depth_opt);
    grid->add_option("--a-values", grid_a, "Comma-separated values of A (rows)")->capture_default_str();
    grid->add_option("--b-values", grid_b, "Comma-separated values of beta (columns)")->capture_default_str();
    grid->add_option("--out", grid_out, "Output PNG")->required();

    std::vector<std::string> corr_runs;
    std::string corr_out;
    auto* corr = app.add_subcommand("correlate", "IoU matrix of success sets across runs");
    corr->add_option("--runs", corr_runs, "Run directories")->required()->check(CLI::ExistingDirectory);
    corr->add_option("--out", corr_out, "Output prefix; writes <prefix>.csv and <prefix>.png")->required();

    std::vector<std::string> tr_runs, tr_models, tr_adapters;
    std::size_t tr_classes = scene_class_count;
    long tr_timeout = 30000;
    std::string tr_out;
    auto* tr = app.add_subcommand("transfer", "Evaluate persisted adversarial images on other models");
    tr->add_option("--runs", tr_runs, "Run directories")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--model", tr_models, "Destination reference model as <id>=<weight file>");
    tr->add_option("--adapter", tr_adapters, "Destination external model as <id>=<command>");
    tr->add_option("--classes", tr_classes, "Class count expected from adapters")->capture_default_str();
    tr->add_option("--timeout-ms", tr_timeout, "Adapter timeout per image")->capture_default_str();
    tr->add_option("--out", tr_out, "Output directory")->required();

    std::string tr_corpus, tr_weights, tr_test;
    std::size_t tr_side = 32, tr_epochs = 10;
    double tr_lr = 0.01;
    std::uint64_t tr_seed = 7;
    auto* train = app.add_subcommand("train-ref", "Train the reference CNN on a corpus directory");
    train->add_option("--corpus", tr_corpus, "Training corpus")->required()->check(CLI::ExistingDirectory);
    train->add_option("--out", tr_weights, "Weight file to write")->required();
    train->add_option("--test-corpus", tr_test, "Held-out corpus to report accuracy on")->check(CLI::ExistingDirectory);
    train->add_option("--side", tr_side, "Network input side")->capture_default_str();
    train->add_option("--epochs", tr_epochs, "SGD epochs")->capture_default_str();
    train->add_option("--lr", tr_lr, "Learning rate")->capture_default_str();
    train->add_option("--seed", tr_seed, "Initialization and shuffling seed")->capture_default_str();

    std::string ev_corpus, ev_weights, ev_adapter;
    std::size_t ev_classes = scene_class_count;
    long ev_timeout = 30000;
    auto* ev = app.add_subcommand("eval", "Clean accuracy of a classifier on a corpus");
    ev->add_option("--corpus", ev_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    auto* ev_w = ev->add_option("--weights", ev_weights, "Reference weight file")->check(CLI::ExistingFile);
    ev->add_option("--adapter", ev_adapter, "External classifier command")->excludes(ev_w);
    ev->add_option("--classes", ev_classes, "Class count expected from the adapter")->capture_default_str();
    ev->add_option("--timeout-ms", ev_timeout, "Adapter timeout per image")->capture_default_str();

    std::string gc_out;
    std::size_t gc_count = 200, gc_size = 128;
    std::uint64_t gc_seed = 1;
    bool gc_no_depth = false;
    auto* gc = app.add_subcommand("gen-corpus", "Render a procedural 10-class scene corpus");
    gc->add_option("--out", gc_out, "Corpus directory to create")->required();
    gc->add_option("--count", gc_count, "Number of images")->capture_default_str();
    gc->add_option("--size", gc_size, "Image side in pixels")->capture_default_str();
    gc->add_option("--seed", gc_seed, "Generator seed")->capture_default_str();
    gc->add_flag("--no-depth", gc_no_depth, "Do not write depth maps");

    std::string cl_weights;
    std::vector<std::string> cl_images;
    auto* cl = app.add_subcommand("classify", "Print reference CNN logits for PNG files, one JSON array per line");
    cl->add_option("--weights", cl_weights, "Reference weight file")->required()->check(CLI::ExistingFile);
    cl->add_option("images", cl_images, "PNG files")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("attack")) {
            const RunConfig cfg = resolve_run_config(af, attack_opts);
            const RunSummary s = run_attack_batch(cfg);
            json out{{"output_dir", cfg.output_dir.string()},
                     {"images", s.attempted},
                     {"completed", s.completed},
                     {"failed", s.failed},
                     {"success_rate_overall", s.success_rate_overall}};
            out["success_rate_initially_correct"] =
                s.success_rate_initially_correct ? json(*s.success_rate_initially_correct) : json(nullptr);
            std::cout << out.dump(2) << '\n';
        } else if (app.got_subcommand("grid")) {
            const Image img = load_image(grid_image);
            const DepthMap d = grid_depth.empty() ? synthetic_depth(SyntheticDepth::parse(grid_synth), img.height(), img.width())
                                                  : DepthMap(load_depth(grid_depth));
            save_image(haze_grid(img, d, parse_list(grid_a), parse_list(grid_b)), grid_out);
        } else if (app.got_subcommand("correlate")) {
            const auto rep = correlation_report({corr_runs.begin(), corr_runs.end()}, corr_out);
            std::ifstream csv(corr_out + ".csv");
            std::cout << csv.rdbuf();
        } else if (app.got_subcommand("transfer")) {
            std::vector<NamedModel> models;
            for (const auto& m : tr_models) {
                const auto [id, path] = split_named(m, "--model");
                models.push_back(make_model({id, path, std::nullopt}));
            }
            for (const auto& a : tr_adapters) {
                const auto [id, command] = split_named(a, "--adapter");
                models.push_back(make_model({id, {}, AdapterConfig{command, tr_classes, std::chrono::milliseconds(tr_timeout)}}));
            }
            const auto table = transfer_report({tr_runs.begin(), tr_runs.end()}, models, tr_out);
            table.write_csv(std::cout);
        } else if (app.got_subcommand("train-ref")) {
            const auto data = load_examples(tr_corpus, tr_side);
            if (data.empty()) throw ConfigError("training corpus is empty");
            std::size_t classes = 0;
            for (const auto& ex : data) classes = std::max(classes, ex.label + 1);
            const TrainResult res = train_reference(data, {tr_seed, tr_epochs, tr_lr, std::max<std::size_t>(classes, 2)});
            save_weights(res.weights, tr_weights);
            json out{{"weights", tr_weights}, {"train_accuracy", res.train_accuracy}, {"classes", res.weights.num_classes}};
            if (!tr_test.empty()) {
                // Accuracy of the weights as stored, i.e. after rounding to 32-bit floats.
                out["test_accuracy"] = accuracy(load_weights(tr_weights), load_examples(tr_test, tr_side));
            }
            std::cout << out.dump(2) << '\n';
        } else if (app.got_subcommand("eval")) {
            if (ev_weights.empty() == ev_adapter.empty()) throw ConfigError("eval: give exactly one of --weights or --adapter");
            ClassifierSpec spec{ev_weights.empty() ? "external" : fs::path(ev_weights).stem().string(), ev_weights, std::nullopt};
            if (!ev_adapter.empty()) spec.adapter = AdapterConfig{ev_adapter, ev_classes, std::chrono::milliseconds(ev_timeout)};
            const NamedModel model = make_model(spec);
            std::size_t correct = 0, total = 0;
            for (const auto& e : read_labels(ev_corpus)) {
                correct += model.logits(load_image(corpus_image_path(ev_corpus, e.id))).argmax() == e.label;
                ++total;
            }
            if (total == 0) throw ConfigError("eval: corpus is empty");
            std::cout << json{{"model", model.id},
                              {"images", total},
                              {"correct", correct},
                              {"accuracy", static_cast<double>(correct) / static_cast<double>(total)}}
                             .dump(2)
                      << '\n';
        } else if (app.got_subcommand("gen-corpus")) {
            write_corpus(gc_out, generate_scenes(gc_count, gc_size, gc_seed), !gc_no_depth);
        } else if (app.got_subcommand("classify")) {
            const ReferenceClassifier clf(load_weights(cl_weights));
            for (const auto& p : cl_images) print_logits(clf.logits(load_image(p)));
        }
    } catch (const advhaze::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
