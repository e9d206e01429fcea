#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "advhaze/attack.hpp"
#include "advhaze/classifier.hpp"
#include "advhaze/cnn.hpp"
#include "advhaze/corpus.hpp"
#include "advhaze/depth.hpp"
#include "advhaze/error.hpp"
#include "advhaze/io.hpp"
#include "advhaze/metrics.hpp"

namespace advhaze {

namespace fs = std::filesystem;

inline constexpr const char* run_record_schema = "advhaze.run-record/1";
inline constexpr const char* run_failure_schema = "advhaze.run-failure/1";
inline constexpr const char* run_summary_schema = "advhaze.run-summary/1";

/// Record fields that are allowed to differ between two otherwise identical
/// runs. Everything else in results.jsonl and summary.json is deterministic.
inline const std::set<std::string>& nondeterministic_fields() {
    static const std::set<std::string> fields = {"wall_time_ms"};
    return fields;
}

/// Removes the whitelisted fields from every line of a JSONL document.
inline std::string strip_nondeterministic(const std::string& jsonl) {
    std::istringstream in(jsonl);
    std::string line, out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        for (const auto& k : nondeterministic_fields()) j.erase(k);
        out += j.dump() + '\n';
    }
    return out;
}

enum class AttackKind { hadvhaze, iadvhaze, fgsm, ifgsm, mifgsm };

inline AttackKind parse_attack_kind(const std::string& s) {
    if (s == "hadvhaze") return AttackKind::hadvhaze;
    if (s == "iadvhaze") return AttackKind::iadvhaze;
    if (s == "fgsm") return AttackKind::fgsm;
    if (s == "ifgsm") return AttackKind::ifgsm;
    if (s == "mifgsm") return AttackKind::mifgsm;
    throw ConfigError("unknown attack '" + s + "' (expected hadvhaze, iadvhaze, fgsm, ifgsm or mifgsm)");
}

inline std::string attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::hadvhaze: return "hadvhaze";
        case AttackKind::iadvhaze: return "iadvhaze";
        case AttackKind::fgsm: return "fgsm";
        case AttackKind::ifgsm: return "ifgsm";
        case AttackKind::mifgsm: return "mifgsm";
    }
    return "?";
}

inline bool is_haze_attack(AttackKind k) { return k == AttackKind::hadvhaze || k == AttackKind::iadvhaze; }

namespace harness_detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
    }
}

template <class T>
T get(const nlohmann::json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(where + ": bad value for '" + key + "'");
    }
}

inline std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline nlohmann::json parse_json_file(const fs::path& p) {
    try {
        return nlohmann::json::parse(read_text(p));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(p.string() + ": invalid JSON: " + e.what());
    }
}

}  // namespace harness_detail

/// Which model a run attacks or evaluates: a reference weight file, or an
/// external forward-only adapter.
struct ClassifierSpec {
    std::string id;
    fs::path weights;
    std::optional<AdapterConfig> adapter;

    nlohmann::json to_json() const {
        nlohmann::json j{{"id", id}};
        if (adapter) {
            j["adapter"] = {{"command", adapter->command},
                            {"classes", adapter->num_classes},
                            {"timeout-ms", adapter->timeout.count()}};
        } else {
            j["weights"] = weights.string();
        }
        return j;
    }

    static ClassifierSpec from_json(const nlohmann::json& j) {
        using namespace harness_detail;
        const std::string where = "classifier";
        reject_unknown_keys(j, {"id", "weights", "adapter"}, where);
        ClassifierSpec s;
        if (j.contains("weights") == j.contains("adapter")) {
            throw ConfigError("classifier: give exactly one of 'weights' or 'adapter'");
        }
        if (j.contains("weights")) s.weights = get<std::string>(j, "weights", where);
        if (j.contains("adapter")) {
            const auto& a = j.at("adapter");
            reject_unknown_keys(a, {"command", "classes", "timeout-ms"}, "classifier.adapter");
            AdapterConfig cfg;
            cfg.command = get<std::string>(a, "command", "classifier.adapter");
            if (a.contains("classes")) cfg.num_classes = get<std::size_t>(a, "classes", "classifier.adapter");
            if (a.contains("timeout-ms")) cfg.timeout = std::chrono::milliseconds(get<long>(a, "timeout-ms", "classifier.adapter"));
            s.adapter = std::move(cfg);
        }
        if (j.contains("id")) s.id = get<std::string>(j, "id", where);
        if (s.id.empty()) s.id = s.adapter ? std::string("external") : s.weights.stem().string();
        return s;
    }
};

inline NamedModel make_model(const ClassifierSpec& spec) {
    if (spec.adapter) {
        auto clf = std::make_shared<ExternalClassifier>(*spec.adapter);
        return {spec.id, [clf](const Image& img) { return clf->logits(img); }};
    }
    auto clf = std::make_shared<ReferenceClassifier>(load_weights(spec.weights));
    return {spec.id, [clf](const Image& img) { return clf->logits(img); }};
}

/// Configuration of one batch attack run. Serialized as a single JSON object
/// whose keys match the command-line flags; unknown keys are rejected.
struct RunConfig {
    fs::path corpus_dir;
    std::optional<fs::path> depth_dir;
    SyntheticDepth depth_fallback{SyntheticDepth::Kind::v_ramp, 0.0};
    AttackKind attack = AttackKind::iadvhaze;
    AttackConfig haze;
    NoiseConfig noise;
    ClassifierSpec classifier;
    fs::path output_dir;
    std::uint64_t seed = 0;
    std::size_t parallelism = 1;
    std::size_t max_images = 0;  // 0 = whole corpus; otherwise a seeded sample
    bool save_params = false;

    nlohmann::json attack_params_json() const {
        if (is_haze_attack(attack)) {
            return {{"eps-a", haze.eps_a},     {"eps-b", haze.eps_b},     {"a0", haze.a0},   {"b0", haze.b0},
                    {"alpha-a", haze.alpha_a}, {"alpha-b", haze.alpha_b}, {"n", haze.n},     {"mu", haze.mu},
                    {"sigma-a", haze.sigma_a}, {"sigma-b", haze.sigma_b}, {"early-stop", haze.early_stop}};
        }
        return {{"eps", noise.eps}, {"n", noise.n}, {"mu", noise.mu}};
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"corpus-dir", corpus_dir.string()},
                         {"depth-fallback", depth_fallback.name()},
                         {"attack", attack_kind_name(attack)},
                         {"attack-params", attack_params_json()},
                         {"classifier", classifier.to_json()},
                         {"output-dir", output_dir.string()},
                         {"seed", seed},
                         {"parallelism", parallelism},
                         {"max-images", max_images},
                         {"save-params", save_params}};
        if (depth_dir) j["depth-dir"] = depth_dir->string();
        return j;
    }

    static RunConfig from_json(const nlohmann::json& j) {
        using namespace harness_detail;
        const std::string where = "config";
        reject_unknown_keys(j, {"corpus-dir", "depth-dir", "depth-fallback", "attack", "attack-params", "classifier",
                                "output-dir", "seed", "parallelism", "max-images", "save-params"},
                            where);
        RunConfig c;
        if (!j.contains("corpus-dir")) throw ConfigError("config: 'corpus-dir' is required");
        if (!j.contains("output-dir")) throw ConfigError("config: 'output-dir' is required");
        if (!j.contains("classifier")) throw ConfigError("config: 'classifier' is required");
        c.corpus_dir = get<std::string>(j, "corpus-dir", where);
        c.output_dir = get<std::string>(j, "output-dir", where);
        c.classifier = ClassifierSpec::from_json(j.at("classifier"));
        if (j.contains("depth-dir")) c.depth_dir = fs::path(get<std::string>(j, "depth-dir", where));
        if (j.contains("depth-fallback")) {
            try {
                c.depth_fallback = SyntheticDepth::parse(get<std::string>(j, "depth-fallback", where));
            } catch (const Error& e) {
                throw ConfigError(std::string("config: depth-fallback: ") + e.what());
            }
        }
        if (j.contains("attack")) c.attack = parse_attack_kind(get<std::string>(j, "attack", where));
        if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed", where);
        if (j.contains("parallelism")) c.parallelism = get<std::size_t>(j, "parallelism", where);
        if (j.contains("max-images")) c.max_images = get<std::size_t>(j, "max-images", where);
        if (j.contains("save-params")) c.save_params = get<bool>(j, "save-params", where);
        if (j.contains("attack-params")) c.apply_attack_params(j.at("attack-params"));
        return c;
    }

    /// Overrides attack hyperparameters. Haze attacks accept eps-a, eps-b,
    /// a0, b0, alpha-a, alpha-b, n, mu, sigma-a, sigma-b and early-stop;
    /// noise attacks accept eps, n and mu.
    void apply_attack_params(const nlohmann::json& p) {
        using namespace harness_detail;
        const std::string where = "attack-params";
        if (is_haze_attack(attack)) {
            reject_unknown_keys(p, {"eps-a", "eps-b", "a0", "b0", "alpha-a", "alpha-b", "n", "mu", "sigma-a", "sigma-b", "early-stop"},
                                where + " (" + attack_kind_name(attack) + ")");
            if (p.contains("eps-a")) haze.eps_a = get<double>(p, "eps-a", where);
            if (p.contains("eps-b")) haze.eps_b = get<double>(p, "eps-b", where);
            if (p.contains("a0")) haze.a0 = get<double>(p, "a0", where);
            if (p.contains("b0")) haze.b0 = get<double>(p, "b0", where);
            if (p.contains("alpha-a")) haze.alpha_a = get<double>(p, "alpha-a", where);
            if (p.contains("alpha-b")) haze.alpha_b = get<double>(p, "alpha-b", where);
            if (p.contains("n")) haze.n = get<std::size_t>(p, "n", where);
            if (p.contains("mu")) haze.mu = get<double>(p, "mu", where);
            if (p.contains("sigma-a")) haze.sigma_a = get<double>(p, "sigma-a", where);
            if (p.contains("sigma-b")) haze.sigma_b = get<double>(p, "sigma-b", where);
            if (p.contains("early-stop")) haze.early_stop = get<bool>(p, "early-stop", where);
        } else {
            reject_unknown_keys(p, {"eps", "n", "mu"}, where + " (" + attack_kind_name(attack) + ")");
            if (p.contains("eps")) noise.eps = get<double>(p, "eps", where);
            if (p.contains("n")) noise.n = get<std::size_t>(p, "n", where);
            if (p.contains("mu")) noise.mu = get<double>(p, "mu", where);
        }
    }

    void validate() const {
        if (corpus_dir.empty() || !fs::is_directory(corpus_dir)) throw ConfigError("corpus-dir does not exist: " + corpus_dir.string());
        if (depth_dir && !fs::is_directory(*depth_dir)) throw ConfigError("depth-dir does not exist: " + depth_dir->string());
        if (output_dir.empty()) throw ConfigError("output-dir is required");
        if (classifier.adapter) throw ConfigError("attacks need gradients; the classifier must be a reference weight file");
        if (!fs::is_regular_file(classifier.weights)) throw ConfigError("weight file does not exist: " + classifier.weights.string());
        if (is_haze_attack(attack)) {
            haze.validate();
        } else {
            if (!(noise.eps >= 0.0)) throw ConfigError("attack-params: eps must be >= 0");
            if (noise.n == 0) throw ConfigError("attack-params: n must be >= 1");
            if (!(noise.mu >= 0.0)) throw ConfigError("attack-params: mu must be >= 0");
        }
    }
};

// ---------------------------------------------------------------------------
// Corpus directories: images/<id>.png, optional depth/<id>.pfm, and
// labels.csv with header "image_id,label".

struct CorpusEntry {
    std::string id;
    std::size_t label = 0;
};

inline void check_image_id(const std::string& id) {
    if (id.empty()) throw FormatError("empty image id");
    for (char ch : id) {
        const bool ok = std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.';
        if (!ok) throw FormatError("image id '" + id + "' has characters outside [A-Za-z0-9_.-]");
    }
}

inline std::vector<CorpusEntry> read_labels(const fs::path& corpus_dir) {
    const fs::path p = corpus_dir / "labels.csv";
    std::ifstream in(p);
    if (!in) throw IoError("cannot read " + p.string());
    std::string line;
    if (!std::getline(in, line) || line != "image_id,label") throw FormatError(p.string() + ": header must be 'image_id,label'");
    std::vector<CorpusEntry> out;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError(p.string() + ": malformed line '" + line + "'");
        CorpusEntry e;
        e.id = line.substr(0, comma);
        check_image_id(e.id);
        try {
            const std::string lab = line.substr(comma + 1);
            if (lab.empty() || !std::all_of(lab.begin(), lab.end(), [](char ch) { return ch >= '0' && ch <= '9'; }))
                throw std::invalid_argument(lab);
            e.label = std::stoul(lab);
        } catch (const std::exception&) {
            throw FormatError(p.string() + ": bad label in '" + line + "'");
        }
        if (!seen.insert(e.id).second) throw FormatError(p.string() + ": duplicate image id " + e.id);
        out.push_back(std::move(e));
    }
    return out;
}

inline fs::path corpus_image_path(const fs::path& corpus_dir, const std::string& id) { return corpus_dir / "images" / (id + ".png"); }

/// Writes procedurally rendered scenes as a corpus directory. Depth maps go
/// to depth/ unless `with_depth` is false.
inline void write_corpus(const fs::path& dir, const std::vector<Scene>& scenes, bool with_depth) {
    fs::create_directories(dir / "images");
    if (with_depth) fs::create_directories(dir / "depth");
    std::ofstream labels(dir / "labels.csv");
    if (!labels) throw IoError("cannot write " + (dir / "labels.csv").string());
    labels << "image_id,label\n";
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "img%05zu", i);
        save_image(scenes[i].image, corpus_image_path(dir, id));
        if (with_depth) save_depth(scenes[i].depth.field(), dir / "depth" / (std::string(id) + ".pfm"));
        labels << id << ',' << scenes[i].label << '\n';
    }
}

/// Loads a corpus as labeled examples at the classifier's input side.
inline std::vector<LabeledExample> load_examples(const fs::path& corpus_dir, std::size_t side) {
    std::vector<LabeledExample> out;
    for (const auto& e : read_labels(corpus_dir)) {
        out.push_back({resize_bilinear(load_image(corpus_image_path(corpus_dir, e.id)), side, side), e.label});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch attack runs.

struct RunSummary {
    std::size_t attempted = 0;
    std::size_t completed = 0;
    std::size_t failed = 0;
    double success_rate_overall = 0.0;
    std::optional<double> success_rate_initially_correct;
};

namespace harness_detail {

struct ImageJob {
    std::size_t index = 0;
    CorpusEntry entry;
};

struct ImageOutcome {
    bool ok = false;
    nlohmann::json line;
    Outcome outcome;
    double linf = 0, l2 = 0, psnr = 0, ssim = 0, loss_initial = 0, loss_final = 0;
};

inline std::vector<ImageJob> select_jobs(const std::vector<CorpusEntry>& entries, std::size_t max_images, std::uint64_t seed) {
    std::vector<std::size_t> idx(entries.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_images > 0 && max_images < entries.size()) {
        std::mt19937_64 rng(seed);
        seeded_shuffle(idx, rng);
        idx.resize(max_images);
        std::sort(idx.begin(), idx.end());
    }
    std::vector<ImageJob> jobs;
    for (std::size_t i : idx) jobs.push_back({i, entries[i]});
    return jobs;
}

inline ImageOutcome attack_one(const RunConfig& cfg, const ReferenceClassifier& clf, const ImageJob& job) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string& id = job.entry.id;
    ImageOutcome out;
    try {
        const Image img = load_image(corpus_image_path(cfg.corpus_dir, id));
        if (job.entry.label >= clf.num_classes()) throw DomainError("label outside the classifier's classes");

        std::string depth_source;
        std::optional<DepthMap> depth;
        if (is_haze_attack(cfg.attack)) {
            const fs::path dp = cfg.depth_dir ? *cfg.depth_dir / (id + ".pfm") : fs::path();
            if (cfg.depth_dir && fs::exists(dp)) {
                depth.emplace(load_depth(dp));
                require_same_shape(img, depth->field(), "depth map");
                depth_source = "file";
            } else {
                depth.emplace(synthetic_depth(cfg.depth_fallback, img.height(), img.width()));
                depth_source = "synthetic:" + cfg.depth_fallback.name();
            }
        }

        AttackResult r;
        switch (cfg.attack) {
            case AttackKind::hadvhaze: r = attack_hadvhaze(img, *depth, clf, job.entry.label, cfg.haze); break;
            case AttackKind::iadvhaze: r = attack_iadvhaze(img, *depth, clf, job.entry.label, cfg.haze); break;
            case AttackKind::fgsm: r = baseline_fgsm(img, clf, job.entry.label, cfg.noise); break;
            case AttackKind::ifgsm: r = baseline_ifgsm(img, clf, job.entry.label, cfg.noise); break;
            case AttackKind::mifgsm: r = baseline_mifgsm(img, clf, job.entry.label, cfg.noise); break;
        }

        const fs::path rel = fs::path("adv") / (id + ".png");
        save_image(r.adversarial, cfg.output_dir / rel);
        if (cfg.save_params) {
            if (const auto* f = std::get_if<HazeFields>(&r.params)) {
                save_pfm(f->a_raw, cfg.output_dir / "params" / (id + ".a.pfm"));
                save_pfm(f->beta_raw, cfg.output_dir / "params" / (id + ".beta.pfm"));
            }
        }

        out.outcome = Outcome(r);
        out.linf = linf(img, r.adversarial);
        out.l2 = l2(img, r.adversarial);
        out.psnr = psnr(img, r.adversarial);
        out.ssim = ssim(img, r.adversarial);
        out.loss_initial = r.loss_trace.front();
        out.loss_final = r.loss_trace.back();

        nlohmann::json j{{"schema", run_record_schema},
                         {"index", job.index},
                         {"image_id", id},
                         {"true_label", r.true_label},
                         {"pred_clean", r.pred_clean},
                         {"pred_adv", r.pred_adv},
                         {"success", r.success},
                         {"loss_initial", out.loss_initial},
                         {"loss_final", out.loss_final},
                         {"iterations_run", r.iterations_run},
                         {"linf", out.linf},
                         {"l2", out.l2},
                         {"psnr", out.psnr},
                         {"ssim", out.ssim},
                         {"adv_png", rel.generic_string()}};
        if (const auto* s = std::get_if<HazeScalars>(&r.params)) {
            j["haze_a"] = s->a;
            j["haze_beta"] = s->beta;
        }
        j["depth_source"] = depth_source.empty() ? nlohmann::json(nullptr) : nlohmann::json(depth_source);
        out.line = std::move(j);
        out.ok = true;
    } catch (const Error& e) {
        out.line = {{"schema", run_failure_schema}, {"index", job.index}, {"image_id", id}, {"error", e.what()}};
        out.ok = false;
    }
    out.line["wall_time_ms"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace harness_detail

/// Runs the configured attack on every selected corpus image and writes
/// results.jsonl, failures.jsonl, summary.json and adv/<id>.png under the
/// output directory. Images are processed by a pool of workers; records are
/// written by the calling thread in corpus order, so the output does not
/// depend on scheduling.
inline RunSummary run_attack_batch(const RunConfig& cfg) {
    using namespace harness_detail;
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    const auto entries = read_labels(cfg.corpus_dir);
    if (entries.empty()) throw ConfigError("corpus is empty: " + cfg.corpus_dir.string());
    const auto jobs = select_jobs(entries, cfg.max_images, cfg.seed);
    const ReferenceClassifier clf(load_weights(cfg.classifier.weights));

    fs::create_directories(cfg.output_dir / "adv");
    if (cfg.save_params) fs::create_directories(cfg.output_dir / "params");
    std::ofstream results(cfg.output_dir / "results.jsonl", std::ios::trunc);
    std::ofstream failures(cfg.output_dir / "failures.jsonl", std::ios::trunc);
    if (!results || !failures) throw IoError("cannot write into " + cfg.output_dir.string());

    std::vector<std::optional<ImageOutcome>> slots(jobs.size());
    std::mutex mu;
    std::condition_variable ready;
    std::atomic<std::size_t> next{0};
    const std::size_t workers =
        std::max<std::size_t>(1, std::min(cfg.parallelism == 0 ? std::thread::hardware_concurrency() : cfg.parallelism, jobs.size()));

    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < jobs.size(); i = next++) {
                ImageOutcome o = attack_one(cfg, clf, jobs[i]);
                {
                    std::lock_guard lock(mu);
                    slots[i] = std::move(o);
                }
                ready.notify_all();
            }
        });
    }

    RunSummary sum;
    sum.attempted = jobs.size();
    std::vector<Outcome> outcomes;
    double m_linf = 0, m_l2 = 0, m_psnr = 0, m_ssim = 0, m_li = 0, m_lf = 0;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        ImageOutcome o;
        {
            std::unique_lock lock(mu);
            ready.wait(lock, [&] { return slots[i].has_value(); });
            o = std::move(*slots[i]);
            slots[i].reset();
        }
        if (o.ok) {
            results << o.line.dump() << '\n' << std::flush;
            outcomes.push_back(o.outcome);
            m_linf += o.linf;
            m_l2 += o.l2;
            m_psnr += o.psnr;
            m_ssim += o.ssim;
            m_li += o.loss_initial;
            m_lf += o.loss_final;
        } else {
            failures << o.line.dump() << '\n' << std::flush;
            ++sum.failed;
        }
    }
    pool.clear();
    sum.completed = outcomes.size();

    nlohmann::json s{{"schema", run_summary_schema},
                     {"attack", attack_kind_name(cfg.attack)},
                     {"model", cfg.classifier.id},
                     {"config", cfg.to_json()},
                     {"images", sum.attempted},
                     {"completed", sum.completed},
                     {"failed", sum.failed}};
    if (!outcomes.empty()) {
        const double n = static_cast<double>(outcomes.size());
        sum.success_rate_overall = success_rate(outcomes, RateMode::overall);
        s["success_rate_overall"] = sum.success_rate_overall;
        try {
            sum.success_rate_initially_correct = success_rate(outcomes, RateMode::initially_correct);
            s["success_rate_initially_correct"] = *sum.success_rate_initially_correct;
        } catch (const DomainError&) {
            s["success_rate_initially_correct"] = nullptr;
        }
        s["mean_linf"] = m_linf / n;
        s["mean_l2"] = m_l2 / n;
        s["mean_psnr"] = m_psnr / n;
        s["mean_ssim"] = m_ssim / n;
        s["mean_loss_initial"] = m_li / n;
        s["mean_loss_final"] = m_lf / n;
    } else {
        s["success_rate_overall"] = nullptr;
        s["success_rate_initially_correct"] = nullptr;
    }
    s["wall_time_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::ofstream(cfg.output_dir / "summary.json") << s.dump(2) << '\n';
    return sum;
}

// ---------------------------------------------------------------------------
// Reading finished runs back.

struct RunRecord {
    std::size_t index = 0;
    std::string image_id;
    std::size_t true_label = 0;
    std::size_t pred_clean = 0;
    std::size_t pred_adv = 0;
    bool success = false;
    std::string adv_png;
};

struct LoadedRun {
    fs::path dir;
    std::string attack;
    std::string model;
    std::vector<RunRecord> records;
};

inline LoadedRun load_run(const fs::path& dir) {
    using harness_detail::parse_json_file;
    LoadedRun run;
    run.dir = dir;
    const nlohmann::json s = parse_json_file(dir / "summary.json");
    if (s.value("schema", "") != run_summary_schema) throw FormatError(dir.string() + ": not a run directory (summary schema)");
    run.attack = s.at("attack").get<std::string>();
    run.model = s.at("model").get<std::string>();

    std::ifstream in(dir / "results.jsonl");
    if (!in) throw IoError("cannot read " + (dir / "results.jsonl").string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (j.value("schema", "") != run_record_schema) throw FormatError("unexpected record schema");
            RunRecord r;
            r.index = j.at("index").get<std::size_t>();
            r.image_id = j.at("image_id").get<std::string>();
            r.true_label = j.at("true_label").get<std::size_t>();
            r.pred_clean = j.at("pred_clean").get<std::size_t>();
            r.pred_adv = j.at("pred_adv").get<std::size_t>();
            r.success = j.at("success").get<bool>();
            r.adv_png = j.at("adv_png").get<std::string>();
            run.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(dir.string() + "/results.jsonl: " + e.what());
        }
    }
    return run;
}

inline std::string run_label(const LoadedRun& r) { return r.attack + "@" + r.dir.filename().string(); }

inline SuccessSet success_set(const LoadedRun& run) {
    SuccessSet s;
    s.attack_id = run_label(run);
    s.model_id = run.model;
    for (const auto& r : run.records) {
        s.corpus.insert(r.image_id);
        if (r.success) s.indices.insert(r.image_id);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Figures: a 3x5 bitmap font for captions, the haze grid and the heat-map.

namespace harness_detail {

// Rows top to bottom, 3 bits each (MSB = left column).
inline const std::array<std::uint8_t, 5>* glyph(char ch) {
    static const std::array<std::array<std::uint8_t, 5>, 16> g = {{
        {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
        {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 2, 2}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
        {0, 0, 0, 0, 2},  // .
        {0, 7, 0, 7, 0},  // =
        {2, 5, 7, 5, 5},  // A
        {6, 5, 6, 5, 6},  // B
        {0, 0, 7, 0, 0},  // -
        {0, 0, 0, 0, 0},  // space
    }};
    if (ch >= '0' && ch <= '9') return &g[static_cast<std::size_t>(ch - '0')];
    switch (ch) {
        case '.': return &g[10];
        case '=': return &g[11];
        case 'A': return &g[12];
        case 'B': return &g[13];
        case '-': return &g[14];
        case ' ': return &g[15];
        default: return nullptr;
    }
}

/// Draws `text` with its top-left corner at (y0, x0); glyphs are scaled by
/// `scale` and clipped to `x_limit`.
inline void draw_text(Image& img, const std::string& text, std::size_t y0, std::size_t x0, std::size_t scale, double value,
                      std::size_t x_limit) {
    std::size_t x = x0;
    for (char ch : text) {
        const auto* g = glyph(ch);
        if (!g) throw DomainError(std::string("draw_text: no glyph for '") + ch + "'");
        for (std::size_t r = 0; r < 5; ++r)
            for (std::size_t c = 0; c < 3; ++c) {
                if (!((*g)[r] & (4u >> c))) continue;
                for (std::size_t dy = 0; dy < scale; ++dy)
                    for (std::size_t dx = 0; dx < scale; ++dx) {
                        const std::size_t py = y0 + r * scale + dy, px = x + c * scale + dx;
                        if (py >= img.height() || px >= std::min(x_limit, img.width())) continue;
                        for (std::size_t k = 0; k < Image::channels; ++k) img(py, px, k) = value;
                    }
            }
        x += 4 * scale;
    }
}

inline std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace harness_detail

/// Contact sheet of haze_homogeneous renderings: one row per value of A, one
/// column per value of beta, each cell captioned "A=<a> B=<beta>".
inline Image haze_grid(const Image& img, const DepthMap& d, const std::vector<double>& a_values, const std::vector<double>& b_values) {
    using namespace harness_detail;
    if (a_values.empty() || b_values.empty()) throw DomainError("haze_grid: empty parameter list");
    require_same_shape(img, d.field(), "haze_grid");
    const std::size_t h = img.height(), w = img.width();
    const std::size_t scale = std::max<std::size_t>(1, w / 64);
    const std::size_t gap = 2 * scale, caption = 5 * scale + 2 * gap;
    const std::size_t cell_h = h + caption, cell_w = w + gap;
    Image sheet(a_values.size() * cell_h + gap, b_values.size() * cell_w + gap, 1.0);
    for (std::size_t i = 0; i < a_values.size(); ++i) {
        for (std::size_t j = 0; j < b_values.size(); ++j) {
            const Image cell = haze_homogeneous(img, d, {a_values[i], b_values[j]});
            const std::size_t y0 = gap + i * cell_h, x0 = gap + j * cell_w;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    for (std::size_t c = 0; c < Image::channels; ++c) sheet(y0 + y, x0 + x, c) = cell(y, x, c);
            draw_text(sheet, "A=" + format_value(a_values[i]) + " B=" + format_value(b_values[j]), y0 + h + gap, x0, scale, 0.0,
                      x0 + w);
        }
    }
    return sheet;
}

inline void emit_haze_grid(const fs::path& image, const DepthMap& d, const std::vector<double>& a_values,
                           const std::vector<double>& b_values, const fs::path& out) {
    save_image(haze_grid(load_image(image), d, a_values, b_values), out);
}

/// Square heat-map of a matrix with values in [0,1]: white for 0, dark blue
/// for 1, each cell annotated with its value.
inline Image heat_map(const std::vector<std::vector<double>>& m) {
    using namespace harness_detail;
    const std::size_t n = m.size(), cell = 24;
    Image img(std::max<std::size_t>(1, n) * cell, std::max<std::size_t>(1, n) * cell, 1.0);
    const std::array<double, 3> dark = {0.08, 0.18, 0.55};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double v = std::clamp(m[i][j], 0.0, 1.0);
            for (std::size_t y = 0; y < cell; ++y)
                for (std::size_t x = 0; x < cell; ++x)
                    for (std::size_t c = 0; c < 3; ++c) {
                        const bool border = y == 0 || x == 0;
                        img(i * cell + y, j * cell + x, c) = border ? 1.0 : 1.0 - v * (1.0 - dark[c]);
                    }
            draw_text(img, format_value(v), i * cell + 9, j * cell + 5, 1, v > 0.5 ? 1.0 : 0.0, (j + 1) * cell);
        }
    }
    return img;
}

struct CorrelationReport {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> matrix;
};

/// IoU matrix of the success sets of several runs over the same corpus and
/// model. Writes <out_prefix>.csv and <out_prefix>.png.
inline CorrelationReport correlation_report(const std::vector<fs::path>& run_dirs, const fs::path& out_prefix) {
    if (run_dirs.empty()) throw ConfigError("correlate: no runs given");
    std::vector<SuccessSet> sets;
    CorrelationReport rep;
    std::string model;
    for (const auto& d : run_dirs) {
        const LoadedRun run = load_run(d);
        if (model.empty()) model = run.model;
        if (run.model != model) throw DomainError("correlate: runs target different models (" + model + ", " + run.model + ")");
        sets.push_back(success_set(run));
        rep.labels.push_back(sets.back().attack_id);
    }
    rep.matrix = iou_correlation(sets);

    if (out_prefix.has_parent_path()) fs::create_directories(out_prefix.parent_path());
    std::ofstream csv(out_prefix.string() + ".csv");
    if (!csv) throw IoError("cannot write " + out_prefix.string() + ".csv");
    csv << "run";
    for (const auto& l : rep.labels) csv << ',' << l;
    csv << '\n';
    for (std::size_t i = 0; i < rep.matrix.size(); ++i) {
        csv << rep.labels[i];
        for (double v : rep.matrix[i]) csv << ',' << nlohmann::json(v).dump();
        csv << '\n';
    }
    save_image(heat_map(rep.matrix), out_prefix.string() + ".png");
    return rep;
}

/// Re-classifies every persisted adversarial image of each run with every
/// model and writes transfer.csv and transfer.json into `out_dir`.
inline TransferTable transfer_report(const std::vector<fs::path>& run_dirs, const std::vector<NamedModel>& models,
                                     const fs::path& out_dir) {
    if (run_dirs.empty()) throw ConfigError("transfer: no runs given");
    if (models.empty()) throw ConfigError("transfer: no destination models given");
    std::vector<AdversarialSet> corpus;
    for (const auto& d : run_dirs) {
        const LoadedRun run = load_run(d);
        AdversarialSet set;
        set.attack_id = run_label(run);
        set.source_model = run.model;
        for (const auto& r : run.records) {
            set.ids.push_back(r.image_id);
            set.images.push_back(load_image(d / r.adv_png));
            set.labels.push_back(r.true_label);
        }
        corpus.push_back(std::move(set));
    }
    TransferTable t = transfer_eval(corpus, models);
    fs::create_directories(out_dir);
    std::ofstream csv(out_dir / "transfer.csv");
    t.write_csv(csv);
    std::ofstream(out_dir / "transfer.json") << t.to_json().dump(2) << '\n';
    return t;
}

}  // namespace advhaze
