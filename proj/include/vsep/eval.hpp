#pragma once

// Evaluation protocols: scene matching, zero-shot labeling with the
// mutual-exclusivity breakdown, and instance retrieval (IR@k).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vsep/embedding_store.hpp"
#include "vsep/error.hpp"
#include "vsep/ndmath.hpp"
#include "vsep/probe.hpp"
#include "vsep/rng.hpp"

namespace vsep {

enum class Direction { word_to_region, region_to_word };

inline std::string_view to_string(Direction d) noexcept {
    return d == Direction::word_to_region ? "word_to_region" : "region_to_word";
}

inline std::optional<Direction> parse_direction(std::string_view s) noexcept {
    if (s == "word_to_region") return Direction::word_to_region;
    if (s == "region_to_word") return Direction::region_to_word;
    return std::nullopt;
}

/// Similarity matrix of one scene: rows are regions, columns words, both in
/// the scene's class order.
struct ScoredScene {
    std::vector<ClassId> classes;
    Matrix scores;
};

/// Entry (i, j) = cos(project(region_i), norm(word_j)). The logit scale is
/// left out since it does not change any argmax.
inline Matrix score_scene(const ProbeModel& model, const Scene& scene, const Dataset& d, const DatasetIndex& index) {
    const auto r = resolve_scene(scene, index);
    const std::size_t n = scene.object_count();
    if (d.manifest.visual_dim != model.visual_dim() || d.manifest.word_dim != model.word_dim())
        throw DimensionError("model dimensions (" + std::to_string(model.visual_dim()) + ", " +
                             std::to_string(model.word_dim()) + ") do not match dataset (" +
                             std::to_string(d.manifest.visual_dim) + ", " + std::to_string(d.manifest.word_dim) + ")");
    Matrix proj(n, model.word_dim());
    Matrix words(n, model.word_dim());
    for (std::size_t i = 0; i < n; ++i) {
        const auto p = project(model, d.regions[r.regions[i]].vector);
        std::copy(p.begin(), p.end(), proj.row(i).begin());
        const auto w = normalize_word(model, d.words[r.words[i]].vector);
        std::copy(w.begin(), w.end(), words.row(i).begin());
    }
    return cosine_matrix(proj, words);
}

inline Matrix score_scene(const ProbeModel& model, const Scene& scene, const Dataset& d) {
    return score_scene(model, scene, d, DatasetIndex(d));
}

inline std::vector<ScoredScene> score_scenes(const ProbeModel& model, const std::vector<Scene>& scenes,
                                             const Dataset& d) {
    const DatasetIndex index(d);
    std::vector<ScoredScene> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back({s.class_ids, score_scene(model, s, d, index)});
    return out;
}

/// For each query, the index of the best-scoring candidate; ties go to the
/// lowest index. word_to_region queries are columns, region_to_word rows.
inline std::vector<std::size_t> predict(const Matrix& scores, Direction dir) {
    const std::size_t n = scores.rows();
    std::vector<std::size_t> out(n);
    for (std::size_t q = 0; q < n; ++q) {
        std::size_t best = 0;
        double best_score = dir == Direction::word_to_region ? scores(0, q) : scores(q, 0);
        for (std::size_t c = 1; c < n; ++c) {
            const double s = dir == Direction::word_to_region ? scores(c, q) : scores(q, c);
            if (s > best_score) {
                best = c;
                best_score = s;
            }
        }
        out[q] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matching

struct MatchBucket {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t pair_count = 0;
    double chance_baseline = 0.0;
};

struct MatchingReport {
    Direction direction = Direction::word_to_region;
    std::map<std::size_t, MatchBucket> buckets;  // object_count -> cell
};

inline MatchingReport match_from_scores(const std::vector<ScoredScene>& scored, Direction dir) {
    MatchingReport r;
    r.direction = dir;
    for (const auto& s : scored) {
        const std::size_t n = s.classes.size();
        auto& b = r.buckets[n];
        const auto pick = predict(s.scores, dir);
        for (std::size_t q = 0; q < n; ++q)
            if (pick[q] == q) ++b.correct;
        b.pair_count += n;
    }
    for (auto& [n, b] : r.buckets) {
        b.accuracy = b.pair_count ? static_cast<double>(b.correct) / static_cast<double>(b.pair_count) : 0.0;
        b.chance_baseline = 1.0 / static_cast<double>(n);
    }
    return r;
}

inline MatchingReport match_accuracy(const ProbeModel& model, const std::vector<Scene>& scenes, const Dataset& d,
                                     Direction dir = Direction::word_to_region) {
    if (scenes.empty()) throw DataError("match_accuracy: no scenes to evaluate");
    return match_from_scores(score_scenes(model, scenes, d), dir);
}

// ---------------------------------------------------------------------------
// Zero-shot

struct ZeroShotBucket {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    double unseen_correct_rate = 0.0;
    std::size_t unseen_correct = 0;
    std::size_t unseen_total = 0;
    std::size_t wrong = 0;
    std::size_t wrong_unseen = 0;
};

struct ZeroShotReport {
    Direction direction = Direction::region_to_word;
    std::map<std::size_t, ZeroShotBucket> buckets;
    double unseen_correct_rate = 0.0;
    std::size_t unseen_correct = 0;
    std::size_t unseen_total = 0;
    std::size_t me_bias_numerator = 0;    // wrongly labeled regions whose true class is unseen
    std::size_t me_bias_denominator = 0;  // all wrongly labeled regions
    std::optional<double> me_bias_pct;    // empty when there are no errors
};

/// Zero-shot tallies from precomputed score matrices. An empty `unseen` set
/// is accepted here and reduces to plain matching.
inline ZeroShotReport zero_shot_from_scores(const std::vector<ScoredScene>& scored, const std::set<ClassId>& unseen,
                                            Direction dir = Direction::region_to_word) {
    ZeroShotReport r;
    r.direction = dir;
    for (const auto& s : scored) {
        const std::size_t n = s.classes.size();
        auto& b = r.buckets[n];
        const auto pick = predict(s.scores, dir);
        for (std::size_t q = 0; q < n; ++q) {
            const bool ok = pick[q] == q;
            const bool novel = unseen.contains(s.classes[q]);
            ++b.total;
            if (ok) ++b.correct;
            else ++b.wrong;
            if (novel) {
                ++b.unseen_total;
                if (ok) ++b.unseen_correct;
                else ++b.wrong_unseen;
            }
        }
    }
    auto rate = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
    for (auto& [n, b] : r.buckets) {
        b.accuracy = rate(b.correct, b.total);
        b.unseen_correct_rate = rate(b.unseen_correct, b.unseen_total);
        r.unseen_correct += b.unseen_correct;
        r.unseen_total += b.unseen_total;
        r.me_bias_numerator += b.wrong_unseen;
        r.me_bias_denominator += b.wrong;
    }
    r.unseen_correct_rate = rate(r.unseen_correct, r.unseen_total);
    if (r.me_bias_denominator > 0) r.me_bias_pct = rate(r.me_bias_numerator, r.me_bias_denominator);
    return r;
}

/// Multi-object scenes containing at least one unseen class, in file order.
inline std::vector<Scene> zero_shot_scenes(const Dataset& d, const std::set<ClassId>& unseen) {
    std::vector<Scene> out;
    for (const auto& s : d.scenes) {
        if (s.object_count() < 2) continue;
        if (std::any_of(s.class_ids.begin(), s.class_ids.end(), [&](ClassId c) { return unseen.contains(c); }))
            out.push_back(s);
    }
    return out;
}

inline ZeroShotReport zero_shot_report(const ProbeModel& model, const std::vector<Scene>& scenes,
                                       const std::set<ClassId>& unseen, const Dataset& d,
                                       Direction dir = Direction::region_to_word) {
    if (unseen.empty()) throw ConfigError("zero_shot_report: unseen class set is empty");
    for (const auto& s : scenes) {
        if (std::none_of(s.class_ids.begin(), s.class_ids.end(), [&](ClassId c) { return unseen.contains(c); }))
            throw DataError("zero_shot_report: scene " + s.image_id + " has no unseen class");
    }
    return zero_shot_from_scores(score_scenes(model, scenes, d), unseen, dir);
}

// ---------------------------------------------------------------------------
// Instance retrieval

struct RetrievalCategory {
    ClassId class_id = 0;
    std::string name;
    std::size_t eligible = 0;
    std::vector<double> ir;  // per k, mean over repetitions
};

struct RetrievalReport {
    std::vector<std::size_t> ks;
    std::vector<double> ir_mean;  // per k
    std::vector<double> ir_std;   // per k, sample std over repetitions
    std::vector<std::vector<double>> ir_per_repetition;  // [rep][k]
    std::size_t pool_size = 0;
    std::size_t repetitions = 0;
    std::uint64_t seed = 0;
    std::vector<RetrievalCategory> per_category;
    std::vector<ClassId> skipped;
};

/// (region index, word index) of every 2-object scene containing `c`.
inline std::vector<std::pair<std::size_t, std::size_t>> retrieval_candidates(const Dataset& d,
                                                                             const DatasetIndex& index, ClassId c) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& s : d.scenes) {
        if (s.object_count() != 2) continue;
        if (std::find(s.class_ids.begin(), s.class_ids.end(), c) == s.class_ids.end()) continue;
        const auto ri = index.region(s.image_id, c);
        const auto wi = index.word(s.image_id, c);
        if (!ri || !wi) throw DataError("scene " + s.image_id + ": unresolved pair for class " + std::to_string(c));
        out.emplace_back(*ri, *wi);
    }
    return out;
}

/// Seed-derived sample of `pool_size` distinct indices out of [0, eligible).
inline std::vector<std::size_t> sample_pool(std::size_t eligible, std::size_t pool_size, std::uint64_t seed,
                                            ClassId category, std::size_t repetition) {
    std::vector<std::size_t> idx(eligible);
    for (std::size_t i = 0; i < eligible; ++i) idx[i] = i;
    Rng rng(derive_seed(derive_seed(seed, 0x7e7a0000ULL + category), repetition));
    for (std::size_t i = 0; i < pool_size; ++i) {
        const std::size_t j = i + rng.below(eligible - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(pool_size);
    return idx;
}

/// 0-based rank of `own` among `scores`; ties rank lower indices first.
inline std::size_t rank_of(std::span<const double> scores, std::size_t own) {
    std::size_t rank = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (scores[k] > scores[own] || (scores[k] == scores[own] && k < own)) ++rank;
    }
    return rank;
}

inline RetrievalReport instance_recall(const ProbeModel& model, const Dataset& d,
                                       const std::vector<ClassId>& categories, std::size_t pool_size = 100,
                                       std::vector<std::size_t> ks = {1, 5}, std::size_t repetitions = 5,
                                       std::uint64_t seed = 0) {
    if (pool_size < 1) throw ConfigError("pool_size must be >= 1");
    if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
    if (ks.empty()) throw ConfigError("at least one k is required");
    std::sort(ks.begin(), ks.end());
    if (ks.front() < 1) throw ConfigError("k must be >= 1");
    if (d.manifest.visual_dim != model.visual_dim() || d.manifest.word_dim != model.word_dim())
        throw DimensionError("model dimensions do not match dataset");

    RetrievalReport r;
    r.ks = ks;
    r.pool_size = pool_size;
    r.repetitions = repetitions;
    r.seed = seed;
    r.ir_per_repetition.assign(repetitions, std::vector<double>(ks.size(), 0.0));

    const DatasetIndex index(d);
    for (ClassId c : categories) {
        if (c >= d.manifest.class_vocab.size()) throw ConfigError("retrieval category out of range");
        const auto cands = retrieval_candidates(d, index, c);
        for (const auto& [ri, wi] : cands)
            if (d.words[wi].source != WordSource::contextual)
                throw DataError("instance retrieval needs contextual word vectors; class " + std::to_string(c) +
                                " has source " + std::string(to_string(d.words[wi].source)));
        if (cands.size() < pool_size) {
            r.skipped.push_back(c);
            continue;
        }
        RetrievalCategory cat{c, d.manifest.class_vocab[c], cands.size(), std::vector<double>(ks.size(), 0.0)};
        for (std::size_t rep = 0; rep < repetitions; ++rep) {
            const auto pool = sample_pool(cands.size(), pool_size, seed, c, rep);
            Matrix proj(pool_size, model.word_dim());
            Matrix queries(pool_size, model.word_dim());
            for (std::size_t k = 0; k < pool_size; ++k) {
                const auto p = project(model, d.regions[cands[pool[k]].first].vector);
                std::copy(p.begin(), p.end(), proj.row(k).begin());
                const auto w = normalize_word(model, d.words[cands[pool[k]].second].vector);
                std::copy(w.begin(), w.end(), queries.row(k).begin());
            }
            const Matrix sims = cosine_matrix(queries, proj);  // query x pool
            std::vector<std::size_t> hits(ks.size(), 0);
            for (std::size_t q = 0; q < pool_size; ++q) {
                const std::size_t rank = rank_of(sims.row(q), q);
                for (std::size_t t = 0; t < ks.size(); ++t)
                    if (rank < ks[t]) ++hits[t];
            }
            for (std::size_t t = 0; t < ks.size(); ++t) {
                const double rate = static_cast<double>(hits[t]) / static_cast<double>(pool_size);
                cat.ir[t] += rate / static_cast<double>(repetitions);
                r.ir_per_repetition[rep][t] += rate;
            }
        }
        r.per_category.push_back(std::move(cat));
    }
    if (r.per_category.empty()) throw DataError("no retrieval category has enough eligible images");

    const double ncat = static_cast<double>(r.per_category.size());
    r.ir_mean.assign(ks.size(), 0.0);
    r.ir_std.assign(ks.size(), 0.0);
    for (auto& rep : r.ir_per_repetition)
        for (double& x : rep) x /= ncat;
    for (std::size_t t = 0; t < ks.size(); ++t) {
        double mean = 0.0;
        for (const auto& rep : r.ir_per_repetition) mean += rep[t];
        mean /= static_cast<double>(repetitions);
        double var = 0.0;
        for (const auto& rep : r.ir_per_repetition) var += (rep[t] - mean) * (rep[t] - mean);
        r.ir_mean[t] = mean;
        r.ir_std[t] = repetitions > 1 ? std::sqrt(var / static_cast<double>(repetitions - 1)) : 0.0;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const MatchingReport& r) {
    nlohmann::json buckets = nlohmann::json::object();
    for (const auto& [n, b] : r.buckets)
        buckets[std::to_string(n)] = {{"accuracy", b.accuracy},
                                      {"correct", b.correct},
                                      {"pair_count", b.pair_count},
                                      {"chance_baseline", b.chance_baseline}};
    return {{"direction", std::string(to_string(r.direction))}, {"buckets", buckets}};
}

inline nlohmann::json to_json(const ZeroShotReport& r) {
    nlohmann::json buckets = nlohmann::json::object();
    for (const auto& [n, b] : r.buckets)
        buckets[std::to_string(n)] = {{"accuracy", b.accuracy},
                                      {"correct", b.correct},
                                      {"total", b.total},
                                      {"unseen_correct_rate", b.unseen_correct_rate},
                                      {"unseen_correct", b.unseen_correct},
                                      {"unseen_total", b.unseen_total},
                                      {"wrong", b.wrong},
                                      {"wrong_unseen", b.wrong_unseen}};
    nlohmann::json j = {{"direction", std::string(to_string(r.direction))},
                        {"buckets", buckets},
                        {"unseen_correct_rate", r.unseen_correct_rate},
                        {"unseen_correct", r.unseen_correct},
                        {"unseen_total", r.unseen_total},
                        {"me_bias_numerator", r.me_bias_numerator},
                        {"me_bias_denominator", r.me_bias_denominator}};
    if (r.me_bias_pct) {
        j["me_bias_pct"] = *r.me_bias_pct;
        j["me_bias_defined"] = true;
    } else {
        j["me_bias_pct"] = nullptr;
        j["me_bias_defined"] = false;
    }
    return j;
}

inline nlohmann::json to_json(const RetrievalReport& r) {
    nlohmann::json per_k = nlohmann::json::array();
    for (std::size_t t = 0; t < r.ks.size(); ++t)
        per_k.push_back({{"k", r.ks[t]}, {"ir_mean", r.ir_mean[t]}, {"ir_std", r.ir_std[t]}});
    nlohmann::json cats = nlohmann::json::array();
    for (const auto& c : r.per_category)
        cats.push_back({{"class_id", c.class_id}, {"name", c.name}, {"eligible", c.eligible}, {"ir", c.ir}});
    return {{"per_k", per_k},           {"pool_size", r.pool_size}, {"repetitions", r.repetitions},
            {"seed", r.seed},           {"per_category", cats},     {"skipped", r.skipped},
            {"ir_per_repetition", r.ir_per_repetition}};
}

inline std::string to_csv(const MatchingReport& r) {
    std::string out = "object_count,direction,accuracy,correct,pair_count,chance_baseline\n";
    for (const auto& [n, b] : r.buckets) {
        out += std::to_string(n) + "," + std::string(to_string(r.direction)) + ",";
        json_text::append_double(out, b.accuracy);
        out += "," + std::to_string(b.correct) + "," + std::to_string(b.pair_count) + ",";
        json_text::append_double(out, b.chance_baseline);
        out += "\n";
    }
    return out;
}

inline std::string to_csv(const ZeroShotReport& r) {
    std::string out = "object_count,accuracy,correct,total,unseen_correct_rate,unseen_correct,unseen_total,wrong,wrong_unseen\n";
    for (const auto& [n, b] : r.buckets) {
        out += std::to_string(n) + ",";
        json_text::append_double(out, b.accuracy);
        out += "," + std::to_string(b.correct) + "," + std::to_string(b.total) + ",";
        json_text::append_double(out, b.unseen_correct_rate);
        out += "," + std::to_string(b.unseen_correct) + "," + std::to_string(b.unseen_total) + "," +
               std::to_string(b.wrong) + "," + std::to_string(b.wrong_unseen) + "\n";
    }
    return out;
}

inline std::string to_csv(const RetrievalReport& r) {
    std::string out = "k,ir_mean,ir_std,pool_size,repetitions\n";
    for (std::size_t t = 0; t < r.ks.size(); ++t) {
        out += std::to_string(r.ks[t]) + ",";
        json_text::append_double(out, r.ir_mean[t]);
        out += ",";
        json_text::append_double(out, r.ir_std[t]);
        out += "," + std::to_string(r.pool_size) + "," + std::to_string(r.repetitions) + "\n";
    }
    return out;
}

}  // namespace vsep
