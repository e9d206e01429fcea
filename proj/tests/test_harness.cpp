#include <gtest/gtest.h>

#include <random>

#include "advhaze/harness.hpp"
#include "support.hpp"

using namespace advhaze;
using namespace advhaze::testing;
namespace fs = std::filesystem;

namespace {

// Six 32 px scenes on disk plus random reference weights.
struct Fixture {
    TempDir tmp;
    fs::path corpus = tmp / "corpus";
    fs::path weights = tmp / "w.bin";

    explicit Fixture(std::size_t count = 6, bool with_depth = true) {
        write_corpus(corpus, generate_scenes(count, 32, 5), with_depth);
        save_weights(init_reference(16, 10, 3), weights);
    }

    RunConfig config(const std::string& out, AttackKind kind = AttackKind::iadvhaze) const {
        RunConfig c;
        c.corpus_dir = corpus;
        c.depth_dir = corpus / "depth";
        c.attack = kind;
        c.classifier.id = "ref";
        c.classifier.weights = weights;
        c.output_dir = tmp / out;
        c.haze.n = 3;
        return c;
    }
};

std::vector<std::string> lines(const fs::path& p) {
    std::istringstream in(read_file(p));
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);)
        if (!l.empty()) out.push_back(l);
    return out;
}

// Minimal run directory with one record per id; `hits` marks successes.
void fake_run(const fs::path& dir, const std::string& model, const std::vector<std::string>& ids, const std::set<std::string>& hits) {
    fs::create_directories(dir);
    std::ofstream(dir / "summary.json") << nlohmann::json{{"schema", run_summary_schema}, {"attack", "fgsm"}, {"model", model}}.dump();
    std::ofstream res(dir / "results.jsonl");
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const bool hit = hits.count(ids[i]) > 0;
        res << nlohmann::json{{"schema", run_record_schema}, {"index", i},          {"image_id", ids[i]},
                              {"true_label", 0},            {"pred_clean", 0},      {"pred_adv", hit ? 1 : 0},
                              {"success", hit},             {"adv_png", "adv/" + ids[i] + ".png"}}
                   .dump()
            << '\n';
    }
}

}  // namespace

TEST(RunConfig, JsonRoundTrip) {
    Fixture fx(1);
    RunConfig c = fx.config("out");
    c.seed = 42;
    c.parallelism = 3;
    c.max_images = 5;
    c.save_params = true;
    c.haze.sigma_a = 2.0;
    c.haze.early_stop = true;
    c.depth_fallback = SyntheticDepth::parse("h-ramp");
    const RunConfig back = RunConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    EXPECT_EQ(back.haze.sigma_a, 2.0);
    EXPECT_TRUE(back.haze.early_stop);
    EXPECT_NO_THROW(back.validate());

    RunConfig n = fx.config("out", AttackKind::mifgsm);
    n.noise.eps = 0.02;
    EXPECT_EQ(RunConfig::from_json(n.to_json()).noise.eps, 0.02);
}

TEST(RunConfig, RejectsUnknownAndMissingKeys) {
    Fixture fx(1);
    nlohmann::json j = fx.config("out").to_json();
    j["colour"] = 1;
    EXPECT_THROW(RunConfig::from_json(j), ConfigError);

    j = fx.config("out").to_json();
    j["attack-params"]["eps"] = 0.1;  // noise key on a haze attack
    EXPECT_THROW(RunConfig::from_json(j), ConfigError);

    for (const char* key : {"corpus-dir", "output-dir", "classifier"}) {
        j = fx.config("out").to_json();
        j.erase(key);
        EXPECT_THROW(RunConfig::from_json(j), ConfigError) << key;
    }
    j = fx.config("out").to_json();
    j["attack"] = "pgd";
    EXPECT_THROW(RunConfig::from_json(j), ConfigError);
    j = fx.config("out").to_json();
    j["classifier"]["adapter"] = {{"command", "true"}};
    EXPECT_THROW(RunConfig::from_json(j), ConfigError);
    j = fx.config("out").to_json();
    j["seed"] = "seven";
    EXPECT_THROW(RunConfig::from_json(j), ConfigError);
}

TEST(RunConfig, ValidateChecksPathsAndAdapter) {
    Fixture fx(1);
    RunConfig c = fx.config("out");
    c.corpus_dir = fx.tmp / "nope";
    EXPECT_THROW(c.validate(), ConfigError);
    c = fx.config("out");
    c.classifier.weights = fx.tmp / "missing.bin";
    EXPECT_THROW(c.validate(), ConfigError);
    c = fx.config("out");
    c.classifier.adapter = AdapterConfig{"true", 10, std::chrono::milliseconds(100)};
    EXPECT_THROW(c.validate(), ConfigError);
    c = fx.config("out", AttackKind::fgsm);
    c.noise.eps = -1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Corpus, LabelsFileRules) {
    TempDir tmp;
    fs::create_directories(tmp / "c");
    write_file(tmp / "c" / "labels.csv", "image_id,label\na,1\nb,2\n");
    const auto e = read_labels(tmp / "c");
    ASSERT_EQ(e.size(), 2u);
    EXPECT_EQ(e[1].id, "b");
    EXPECT_EQ(e[1].label, 2u);
    write_file(tmp / "c" / "labels.csv", "image_id,label\na,1\na,2\n");
    EXPECT_THROW(read_labels(tmp / "c"), FormatError);
    write_file(tmp / "c" / "labels.csv", "id,label\na,1\n");
    EXPECT_THROW(read_labels(tmp / "c"), FormatError);
    write_file(tmp / "c" / "labels.csv", "image_id,label\n../x,1\n");
    EXPECT_THROW(read_labels(tmp / "c"), FormatError);
    write_file(tmp / "c" / "labels.csv", "image_id,label\na,-1\n");
    EXPECT_THROW(read_labels(tmp / "c"), FormatError);
}

TEST(Batch, EmptyCorpusIsAnError) {
    Fixture fx(1);
    write_file(fx.corpus / "labels.csv", "image_id,label\n");
    EXPECT_THROW(run_attack_batch(fx.config("out")), ConfigError);
}

TEST(Batch, ZeroRadiusFgsmLeavesImageUnchanged) {
    Fixture fx(1);
    RunConfig c = fx.config("out", AttackKind::fgsm);
    c.noise.eps = 0.0;
    const RunSummary s = run_attack_batch(c);
    EXPECT_EQ(s.completed, 1u);
    EXPECT_EQ(read_file(c.output_dir / "adv" / "img00000.png"), read_file(corpus_image_path(fx.corpus, "img00000")));
    const auto rec = nlohmann::json::parse(lines(c.output_dir / "results.jsonl").at(0));
    EXPECT_EQ(rec["linf"], 0.0);
    EXPECT_TRUE(rec["depth_source"].is_null());
    EXPECT_EQ(rec["success"], rec["true_label"] != rec["pred_adv"]);
}

TEST(Batch, RerunAndParallelismGiveIdenticalRecords) {
    Fixture fx;
    RunConfig a = fx.config("a"), b = fx.config("b"), p = fx.config("p");
    p.parallelism = 4;
    run_attack_batch(a);
    run_attack_batch(b);
    run_attack_batch(p);
    const std::string ra = strip_nondeterministic(read_file(a.output_dir / "results.jsonl"));
    EXPECT_FALSE(ra.empty());
    EXPECT_EQ(ra, strip_nondeterministic(read_file(b.output_dir / "results.jsonl")));
    EXPECT_EQ(ra, strip_nondeterministic(read_file(p.output_dir / "results.jsonl")));
    for (const auto& e : fs::directory_iterator(a.output_dir / "adv"))
        EXPECT_EQ(read_file(e.path()), read_file(p.output_dir / "adv" / e.path().filename()));

    auto summary = [](const fs::path& dir) {
        auto j = nlohmann::json::parse(read_file(dir / "summary.json"));
        j.erase("wall_time_ms");
        j["config"].erase("output-dir");
        j["config"].erase("parallelism");
        return j;
    };
    EXPECT_EQ(summary(a.output_dir), summary(p.output_dir));
}

TEST(Batch, FailuresAreRecordedAndCounted) {
    Fixture fx;
    write_file(corpus_image_path(fx.corpus, "img00002"), "not a png");
    fs::remove(fx.corpus / "depth" / "img00004.pfm");
    RunConfig c = fx.config("out");
    c.save_params = true;
    const RunSummary s = run_attack_batch(c);
    EXPECT_EQ(s.attempted, 6u);
    EXPECT_EQ(s.completed, 5u);
    EXPECT_EQ(s.failed, 1u);
    const auto ok = lines(c.output_dir / "results.jsonl");
    const auto bad = lines(c.output_dir / "failures.jsonl");
    EXPECT_EQ(ok.size() + bad.size(), 6u);
    const auto f = nlohmann::json::parse(bad.at(0));
    EXPECT_EQ(f["schema"], run_failure_schema);
    EXPECT_EQ(f["image_id"], "img00002");
    EXPECT_FALSE(f["error"].get<std::string>().empty());

    for (const auto& l : ok) {
        const auto r = nlohmann::json::parse(l);
        EXPECT_EQ(r["depth_source"], r["image_id"] == "img00004" ? "synthetic:v-ramp" : "file");
        EXPECT_EQ(r["iterations_run"], 3);
        EXPECT_TRUE(fs::exists(c.output_dir / "params" / (r["image_id"].get<std::string>() + ".a.pfm")));
    }
    const auto sum = nlohmann::json::parse(read_file(c.output_dir / "summary.json"));
    EXPECT_EQ(sum["failed"], 1);
    EXPECT_EQ(sum["completed"], 5);
}

TEST(Batch, AdversarialPngMatchesRecordedMetrics) {
    Fixture fx(2);
    RunConfig c = fx.config("out", AttackKind::hadvhaze);
    run_attack_batch(c);
    for (const auto& l : lines(c.output_dir / "results.jsonl")) {
        const auto r = nlohmann::json::parse(l);
        const Image clean = load_image(corpus_image_path(fx.corpus, r["image_id"]));
        const Image adv = load_image(c.output_dir / r["adv_png"].get<std::string>());
        const DepthMap d(load_depth(fx.corpus / "depth" / (r["image_id"].get<std::string>() + ".pfm")));
        const Image exact = haze_homogeneous(clean, d, {r["haze_a"].get<double>(), r["haze_beta"].get<double>()});
        for (std::size_t i = 0; i < adv.size(); ++i) EXPECT_LE(std::abs(adv[i] - exact[i]), 0.5 / 255.0 + 1e-12);
        EXPECT_NEAR(r["linf"].get<double>(), linf(clean, exact), 1e-12);
    }
}

TEST(Batch, MaxImagesSubsamplesDeterministically) {
    Fixture fx;
    RunConfig c = fx.config("a", AttackKind::fgsm);
    c.max_images = 3;
    c.seed = 9;
    EXPECT_EQ(run_attack_batch(c).attempted, 3u);
    RunConfig d = c;
    d.output_dir = fx.tmp / "b";
    run_attack_batch(d);
    EXPECT_EQ(strip_nondeterministic(read_file(c.output_dir / "results.jsonl")),
              strip_nondeterministic(read_file(d.output_dir / "results.jsonl")));
}

TEST(Correlate, HandBuiltRuns) {
    TempDir tmp;
    const std::vector<std::string> ids{"1", "2", "3", "4", "5"};
    fake_run(tmp / "r1", "m", ids, {"1", "2", "3"});
    fake_run(tmp / "r2", "m", ids, {"2", "3", "4"});
    fake_run(tmp / "r3", "m", ids, {"5"});
    const auto rep = correlation_report({tmp / "r1", tmp / "r2", tmp / "r3"}, tmp / "out" / "corr");
    const std::vector<std::vector<double>> expect{{1, 0.5, 0}, {0.5, 1, 0}, {0, 0, 1}};
    EXPECT_EQ(rep.matrix, expect);
    EXPECT_EQ(rep.labels[0], "fgsm@r1");
    EXPECT_EQ(read_file(tmp / "out" / "corr.csv"),
              "run,fgsm@r1,fgsm@r2,fgsm@r3\nfgsm@r1,1.0,0.5,0.0\nfgsm@r2,0.5,1.0,0.0\nfgsm@r3,0.0,0.0,1.0\n");
    EXPECT_EQ(load_image(tmp / "out" / "corr.png").height(), 72u);
}

TEST(Correlate, IdenticalAndComplementaryRuns) {
    TempDir tmp;
    const std::vector<std::string> ids{"a", "b", "c", "d"};
    fake_run(tmp / "x", "m", ids, {"a", "b"});
    fake_run(tmp / "y", "m", ids, {"a", "b"});
    fake_run(tmp / "z", "m", ids, {"c", "d"});
    const auto m = correlation_report({tmp / "x", tmp / "y", tmp / "z"}, tmp / "c").matrix;
    EXPECT_EQ(m[0][1], 1.0);
    EXPECT_EQ(m[0][2], 0.0);
    fake_run(tmp / "other", "m2", ids, {});
    EXPECT_THROW(correlation_report({tmp / "x", tmp / "other"}, tmp / "c"), DomainError);
    fake_run(tmp / "short", "m", {"a", "b"}, {});
    EXPECT_THROW(correlation_report({tmp / "x", tmp / "short"}, tmp / "c"), DomainError);
    EXPECT_THROW(load_run(tmp / "missing"), Error);
}

TEST(Grid, LayoutAndCells) {
    std::mt19937_64 rng(1);
    const Image img = random_image(32, 32, rng);
    const DepthMap d = synthetic_depth(SyntheticDepth::parse("v-ramp"), 32, 32);
    const Image sheet = haze_grid(img, d, {0.8, 0.9, 1.0}, {0.05, 0.10, 0.15, 0.20});
    const std::size_t gap = 2, caption = 9;
    EXPECT_EQ(sheet.height(), 3 * (32 + caption) + gap);
    EXPECT_EQ(sheet.width(), 4 * (32 + gap) + gap);
    // Top-left cell is the A=0.8, beta=0.05 rendering.
    const Image cell = haze_homogeneous(img, d, {0.8, 0.05});
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x)
            for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(sheet(gap + y, gap + x, c), cell(y, x, c));

    const Image clear = haze_grid(img, d, {0.9}, {0.0});
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x)
            for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(clear(gap + y, gap + x, c), img(y, x, c));
    EXPECT_THROW(haze_grid(img, d, {}, {0.1}), DomainError);
}

TEST(Transfer, LoopbackAdapterAgainstReference) {
    Fixture fx(3);
    RunConfig c = fx.config("src", AttackKind::fgsm);
    run_attack_batch(c);
    const ClassifierSpec same{"ref", fx.weights, std::nullopt};
    const ClassifierSpec loop{"loop", {}, AdapterConfig{std::string(ADVHAZE_CLI) + " classify --weights " + fx.weights.string(), 10,
                                                        std::chrono::milliseconds(20000)}};
    const ClassifierSpec dead{"dead", {}, AdapterConfig{"false", 10, std::chrono::milliseconds(5000)}};
    const TransferTable t = transfer_report({c.output_dir}, {make_model(same), make_model(loop), make_model(dead)}, fx.tmp / "t");
    const auto& row = t.rows.at(0);
    EXPECT_FALSE(row.cells[0].has_value());
    ASSERT_TRUE(row.cells[1].has_value());
    const auto sum = nlohmann::json::parse(read_file(c.output_dir / "summary.json"));
    EXPECT_EQ(*row.cells[1], sum["success_rate_overall"].get<double>());
    EXPECT_FALSE(row.cells[2].has_value());
    EXPECT_FALSE(row.errors[2].empty());
    EXPECT_TRUE(fs::exists(fx.tmp / "t" / "transfer.csv"));
    EXPECT_TRUE(fs::exists(fx.tmp / "t" / "transfer.json"));
}

TEST(Cli, AttackConfigFileAndFlags) {
    Fixture fx(2);
    const RunConfig c = fx.config("cli", AttackKind::hadvhaze);
    std::ofstream(fx.tmp / "cfg.json") << c.to_json().dump();
    const std::string cmd = std::string(ADVHAZE_CLI) + " attack --config " + (fx.tmp / "cfg.json").string() + " --n 2 --output-dir " +
                            (fx.tmp / "cli2").string() + " > " + (fx.tmp / "stdout.txt").string();
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    const auto sum = nlohmann::json::parse(read_file(fx.tmp / "cli2" / "summary.json"));
    EXPECT_EQ(sum["config"]["attack-params"]["n"], 2);
    EXPECT_EQ(sum["attack"], "hadvhaze");
    EXPECT_EQ(nlohmann::json::parse(read_file(fx.tmp / "stdout.txt"))["images"], 2);

    const std::string bad = std::string(ADVHAZE_CLI) + " attack --config " + (fx.tmp / "cfg.json").string() + " --eps 0.1 2> " +
                            (fx.tmp / "err.txt").string();
    EXPECT_NE(std::system(bad.c_str()), 0);
    EXPECT_NE(read_file(fx.tmp / "err.txt").find("error:"), std::string::npos);
}

TEST(Scenes, SeededAndQuantized) {
    const auto a = generate_scenes(12, 40, 3), b = generate_scenes(12, 40, 3), c = generate_scenes(12, 40, 4);
    ASSERT_EQ(a.size(), 12u);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].label, i % scene_class_count);
        EXPECT_EQ(a[i].image.height(), 40u);
        EXPECT_TRUE(std::equal(a[i].image.values().begin(), a[i].image.values().end(), b[i].image.values().begin()));
        any_diff = any_diff || !std::equal(a[i].image.values().begin(), a[i].image.values().end(), c[i].image.values().begin());
        for (double v : a[i].image.values()) EXPECT_EQ(v, std::floor(v * 255.0 + 0.5) / 255.0);
        for (double v : a[i].depth.field().values()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
    EXPECT_TRUE(any_diff);
    EXPECT_THROW(generate_scenes(1, 4, 1), ShapeError);
}

TEST(Scenes, StreamedExamplesMatchFullScenes) {
    const auto full = to_examples(generate_scenes(7, 48, 9), 16);
    const auto streamed = generate_examples(7, 48, 16, 9);
    ASSERT_EQ(full.size(), streamed.size());
    for (std::size_t i = 0; i < full.size(); ++i) {
        EXPECT_EQ(full[i].label, streamed[i].label);
        EXPECT_TRUE(std::equal(full[i].image.values().begin(), full[i].image.values().end(), streamed[i].image.values().begin()));
    }
}

TEST(Scenes, CorpusRoundTripIsLossless) {
    TempDir tmp;
    const auto scenes = generate_scenes(3, 32, 8);
    write_corpus(tmp / "c", scenes, true);
    const auto labels = read_labels(tmp / "c");
    ASSERT_EQ(labels.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        const Image img = load_image(corpus_image_path(tmp / "c", labels[i].id));
        EXPECT_TRUE(std::equal(img.values().begin(), img.values().end(), scenes[i].image.values().begin()));
        const ScalarField d = load_depth(tmp / "c" / "depth" / (labels[i].id + ".pfm"));
        for (std::size_t p = 0; p < d.size(); ++p) EXPECT_EQ(d[p], static_cast<double>(static_cast<float>(scenes[i].depth[p])));
    }
}
