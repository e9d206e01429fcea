#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advhaze/attack.hpp"
#include "advhaze/classifier.hpp"
#include "advhaze/error.hpp"
#include "advhaze/image.hpp"

namespace advhaze {

enum class RateMode {
    overall,            // misclassified / total
    initially_correct,  // misclassified among images the model got right before the attack
};

/// Minimal record needed for success rates; AttackResult converts to it.
struct Outcome {
    std::size_t true_label = 0;
    std::size_t pred_clean = 0;
    std::size_t pred_adv = 0;

    Outcome() = default;
    Outcome(std::size_t y, std::size_t clean, std::size_t adv) : true_label(y), pred_clean(clean), pred_adv(adv) {}
    Outcome(const AttackResult& r) : true_label(r.true_label), pred_clean(r.pred_clean), pred_adv(r.pred_adv) {}  // NOLINT
};

inline double success_rate(const std::vector<Outcome>& results, RateMode mode) {
    if (results.empty()) throw DomainError("success_rate: empty result list");
    std::size_t num = 0, den = 0;
    for (const auto& r : results) {
        if (mode == RateMode::initially_correct && r.pred_clean != r.true_label) continue;
        ++den;
        if (r.pred_adv != r.true_label) ++num;
    }
    if (den == 0) throw DomainError("success_rate: no initially-correct images");
    return static_cast<double>(num) / static_cast<double>(den);
}

inline double success_rate(const std::vector<AttackResult>& results, RateMode mode) {
    return success_rate(std::vector<Outcome>(results.begin(), results.end()), mode);
}

/// Images one attack fooled one model on, out of a shared corpus.
struct SuccessSet {
    std::string attack_id;
    std::string model_id;
    std::set<std::string> corpus;
    std::set<std::string> indices;
};

/// M[i][j] = |S_i n S_j| / |S_i u S_j|, with 0/0 taken as 1.
inline std::vector<std::vector<double>> iou_correlation(const std::vector<SuccessSet>& sets) {
    for (const auto& s : sets) {
        if (s.corpus != sets.front().corpus) throw DomainError("iou_correlation: sets are over different corpora");
        if (!std::includes(s.corpus.begin(), s.corpus.end(), s.indices.begin(), s.indices.end())) {
            throw DomainError("iou_correlation: success set not contained in its corpus");
        }
    }
    const std::size_t n = sets.size();
    std::vector<std::vector<double>> m(n, std::vector<double>(n, 1.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto& a = sets[i].indices;
            const auto& b = sets[j].indices;
            std::size_t inter = 0;
            for (const auto& id : a) inter += b.count(id);
            const std::size_t uni = a.size() + b.size() - inter;
            const double v = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
            m[i][j] = m[j][i] = v;
        }
    }
    return m;
}

inline double linf(const Image& a, const Image& b) {
    require_same_shape(a, b, "linf");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double l2(const Image& a, const Image& b) {
    require_same_shape(a, b, "l2");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline constexpr double psnr_cap_db = 100.0;

/// Peak signal-to-noise ratio with peak 1.0; identical images give the cap.
inline double psnr(const Image& a, const Image& b) {
    require_same_shape(a, b, "psnr");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    const double mse = s / static_cast<double>(a.size());
    if (mse == 0.0) return psnr_cap_db;
    return std::min(psnr_cap_db, 10.0 * std::log10(1.0 / mse));
}

/// Mean SSIM over every 8x8 window (stride 1) and every channel, with
/// C1 = 0.01^2 and C2 = 0.03^2 and population moments. Images smaller than
/// 8 px along an axis use a window spanning that whole axis.
inline double ssim(const Image& a, const Image& b) {
    require_same_shape(a, b, "ssim");
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const std::size_t wh = std::min<std::size_t>(8, a.height());
    const std::size_t ww = std::min<std::size_t>(8, a.width());
    const double n = static_cast<double>(wh * ww);

    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < Image::channels; ++c) {
        for (std::size_t y0 = 0; y0 + wh <= a.height(); ++y0) {
            for (std::size_t x0 = 0; x0 + ww <= a.width(); ++x0) {
                double sa = 0, sb = 0;
                for (std::size_t y = y0; y < y0 + wh; ++y)
                    for (std::size_t x = x0; x < x0 + ww; ++x) {
                        sa += a(y, x, c);
                        sb += b(y, x, c);
                    }
                const double ma = sa / n, mb = sb / n;
                double va = 0, vb = 0, cov = 0;
                for (std::size_t y = y0; y < y0 + wh; ++y)
                    for (std::size_t x = x0; x < x0 + ww; ++x) {
                        const double da = a(y, x, c) - ma;
                        const double db = b(y, x, c) - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                va /= n;
                vb /= n;
                cov /= n;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

/// Adversarial images produced by one attack against one source model.
struct AdversarialSet {
    std::string attack_id;
    std::string source_model;
    std::vector<std::string> ids;
    std::vector<Image> images;
    std::vector<std::size_t> labels;
};

/// Success rates of attacks transferred to other models. A cell is absent on
/// the diagonal (destination == source) and when the destination failed.
struct TransferTable {
    struct Row {
        std::string attack;
        std::string source;
        std::vector<std::optional<double>> cells;
        std::vector<std::string> errors;  // per cell, empty when none
    };

    std::vector<std::string> destinations;
    std::vector<Row> rows;

    void write_csv(std::ostream& out) const {
        out << "attack,source";
        for (const auto& d : destinations) out << ',' << d;
        out << '\n';
        for (const auto& r : rows) {
            out << r.attack << ',' << r.source;
            for (const auto& c : r.cells) {
                out << ',';
                if (c) out << nlohmann::json(*c).dump();
            }
            out << '\n';
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["destinations"] = destinations;
        j["rows"] = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json row{{"attack", r.attack}, {"source", r.source}};
            row["cells"] = nlohmann::json::array();
            row["errors"] = nlohmann::json::array();
            for (std::size_t i = 0; i < r.cells.size(); ++i) {
                row["cells"].push_back(r.cells[i] ? nlohmann::json(*r.cells[i]) : nlohmann::json(nullptr));
                row["errors"].push_back(r.errors[i].empty() ? nlohmann::json(nullptr) : nlohmann::json(r.errors[i]));
            }
            j["rows"].push_back(std::move(row));
        }
        return j;
    }
};

inline TransferTable transfer_eval(const std::vector<AdversarialSet>& corpus, const std::vector<NamedModel>& models) {
    TransferTable table;
    for (const auto& m : models) table.destinations.push_back(m.id);
    for (const auto& set : corpus) {
        if (set.images.size() != set.labels.size() || set.ids.size() != set.images.size()) {
            throw DomainError("transfer_eval: inconsistent adversarial set " + set.attack_id);
        }
        if (set.images.empty()) throw DomainError("transfer_eval: empty adversarial set " + set.attack_id);
        TransferTable::Row row{set.attack_id, set.source_model, {}, {}};
        for (const auto& m : models) {
            if (m.id == set.source_model) {
                row.cells.emplace_back();
                row.errors.emplace_back();
                continue;
            }
            try {
                std::vector<Outcome> outcomes;
                for (std::size_t i = 0; i < set.images.size(); ++i) {
                    const std::size_t pred = m.logits(set.images[i]).argmax();
                    outcomes.emplace_back(set.labels[i], set.labels[i], pred);
                }
                row.cells.emplace_back(success_rate(outcomes, RateMode::overall));
                row.errors.emplace_back();
            } catch (const Error& e) {
                row.cells.emplace_back();
                row.errors.emplace_back(e.what());
            }
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace advhaze
