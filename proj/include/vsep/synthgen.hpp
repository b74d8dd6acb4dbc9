#pragma once

// Seeded synthetic embedding worlds. Class prototypes live on the unit
// sphere of word space; visual features are a hidden linear image of the
// prototypes plus noise, so a small MLP can recover the alignment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vsep/embedding_store.hpp"
#include "vsep/error.hpp"
#include "vsep/eval.hpp"
#include "vsep/ndmath.hpp"
#include "vsep/probe.hpp"
#include "vsep/rng.hpp"

namespace vsep {

inline constexpr std::string_view kToolVersion = "vsep 1.0.0";

/// How the common anisotropy offset m is chosen.
///   common_mode: m = (1, ..., 1) / sqrt(L), a shared mean shift.
///   random:      m uniform on the sphere, drawn from anisotropy_direction_seed.
enum class AnisotropyDirection { common_mode, random };

struct SynthConfig {
    std::size_t num_classes = 40;
    std::size_t word_dim = 32;
    std::size_t visual_dim = 48;
    double context_noise = 0.1;
    double visual_noise = 0.05;
    double anisotropy_offset = 0.0;
    AnisotropyDirection anisotropy_direction = AnisotropyDirection::common_mode;
    std::uint64_t anisotropy_direction_seed = 0;
    std::map<std::size_t, std::size_t> scenes_per_bucket{{1, 2000}, {2, 1000}, {3, 600}, {4, 300}};
    std::vector<ClassId> unseen_classes;
    std::vector<ClassId> retrieval_categories;
    std::size_t retrieval_pool_size = 100;
    // Share of a scene's context noise that also shows up in its region, so
    // captions carry instance-level information about the region.
    double instance_coupling = 0.0;
    // Size of the per-class shift applied to context-free template vectors.
    double template_shift = 1.5;
    std::uint64_t seed = 7;

    void validate() const {
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (word_dim < 2 || visual_dim < 2) throw ConfigError("dimensions must be >= 2");
        if (!(context_noise >= 0.0) || !(visual_noise >= 0.0)) throw ConfigError("noise scales must be >= 0");
        if (!(anisotropy_offset >= 0.0) || !std::isfinite(anisotropy_offset))
            throw ConfigError("anisotropy_offset must be finite and >= 0");
        if (!(instance_coupling >= 0.0) || !(template_shift >= 0.0))
            throw ConfigError("instance_coupling and template_shift must be >= 0");
        std::set<ClassId> unseen(unseen_classes.begin(), unseen_classes.end());
        if (unseen.size() != unseen_classes.size()) throw ConfigError("unseen_classes has duplicates");
        for (ClassId c : unseen)
            if (c >= num_classes) throw ConfigError("unseen class " + std::to_string(c) + " out of range");
        if (!unseen.empty() && num_classes <= 8) throw ConfigError("an unseen split needs more than 8 classes");
        if (!unseen.empty() && unseen.size() >= num_classes) throw ConfigError("every class is unseen");
        for (const auto& [n, count] : scenes_per_bucket) {
            if (n < 1 || n > kMaxSceneObjects) throw ConfigError("bucket sizes must be in [1, 8]");
            if (n > num_classes)
                throw ConfigError("bucket " + std::to_string(n) + " needs more distinct classes than the " +
                                  std::to_string(num_classes) + " available");
            if (n == 1 && count > 0 && unseen.size() >= num_classes)
                throw ConfigError("no seen class left for one-object scenes");
        }
        for (ClassId c : retrieval_categories)
            if (c >= num_classes) throw ConfigError("retrieval category out of range");
        if (!retrieval_categories.empty()) {
            const auto it = scenes_per_bucket.find(2);
            const std::size_t have = it == scenes_per_bucket.end() ? 0 : it->second;
            if (have < retrieval_categories.size() * retrieval_pool_size)
                throw ConfigError("scenes_per_bucket[2] must be at least retrieval categories x pool size (" +
                                  std::to_string(retrieval_categories.size() * retrieval_pool_size) + ")");
        }
    }
};

inline std::string_view to_string(AnisotropyDirection d) noexcept {
    return d == AnisotropyDirection::common_mode ? "common_mode" : "random";
}

inline nlohmann::json to_json(const SynthConfig& c) {
    nlohmann::json buckets = nlohmann::json::object();
    for (const auto& [n, count] : c.scenes_per_bucket) buckets[std::to_string(n)] = count;
    return {{"num_classes", c.num_classes},
            {"word_dim", c.word_dim},
            {"visual_dim", c.visual_dim},
            {"context_noise", c.context_noise},
            {"visual_noise", c.visual_noise},
            {"anisotropy_offset", c.anisotropy_offset},
            {"anisotropy_direction", std::string(to_string(c.anisotropy_direction))},
            {"anisotropy_direction_seed", c.anisotropy_direction_seed},
            {"scenes_per_bucket", buckets},
            {"unseen_classes", c.unseen_classes},
            {"retrieval_categories", c.retrieval_categories},
            {"retrieval_pool_size", c.retrieval_pool_size},
            {"instance_coupling", c.instance_coupling},
            {"template_shift", c.template_shift},
            {"seed", c.seed}};
}

/// Overlays keys present in `j` onto `c`. Unknown keys are rejected.
inline void merge_json(SynthConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "num_classes") c.num_classes = v.get<std::size_t>();
            else if (k == "word_dim") c.word_dim = v.get<std::size_t>();
            else if (k == "visual_dim") c.visual_dim = v.get<std::size_t>();
            else if (k == "context_noise") c.context_noise = v.get<double>();
            else if (k == "visual_noise") c.visual_noise = v.get<double>();
            else if (k == "anisotropy_offset") c.anisotropy_offset = v.get<double>();
            else if (k == "anisotropy_direction") {
                const auto s = v.get<std::string>();
                if (s == "common_mode") c.anisotropy_direction = AnisotropyDirection::common_mode;
                else if (s == "random") c.anisotropy_direction = AnisotropyDirection::random;
                else throw ConfigError("unknown anisotropy_direction " + s);
            } else if (k == "anisotropy_direction_seed") c.anisotropy_direction_seed = v.get<std::uint64_t>();
            else if (k == "scenes_per_bucket") {
                c.scenes_per_bucket.clear();
                for (const auto& [n, count] : v.items())
                    c.scenes_per_bucket[std::stoul(n)] = count.get<std::size_t>();
            } else if (k == "unseen_classes") c.unseen_classes = v.get<std::vector<ClassId>>();
            else if (k == "retrieval_categories") c.retrieval_categories = v.get<std::vector<ClassId>>();
            else if (k == "retrieval_pool_size") c.retrieval_pool_size = v.get<std::size_t>();
            else if (k == "instance_coupling") c.instance_coupling = v.get<double>();
            else if (k == "template_shift") c.template_shift = v.get<double>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else throw ConfigError("unknown synth config key \"" + k + "\"");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad synth config value: ") + e.what());
    } catch (const std::invalid_argument&) {
        throw ConfigError("scenes_per_bucket keys must be integers");
    }
}

/// Hidden generating parameters. Written as a sidecar for oracle tests only.
struct GroundTruth {
    Matrix prototypes;              // K x L, unit rows
    Matrix visual_map;              // V x L
    std::vector<double> direction;  // m, unit
};

struct SynthWorld {
    Dataset dataset;
    GroundTruth truth;
    ClassWordTable templates;  // context-free per-class word vectors
};

namespace detail {

inline std::vector<double> unit_gaussian(Rng& rng, std::size_t d) {
    std::vector<double> v(d);
    for (;;) {
        for (double& x : v) x = rng.normal();
        if (norm2(v) > 1e-12) break;
    }
    const double n = norm2(v);
    for (double& x : v) x /= n;
    return v;
}

// Isotropic Gaussian with E|x|^2 = 1.
inline std::vector<double> noise_vector(Rng& rng, std::size_t d) {
    std::vector<double> v(d);
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& x : v) x = s * rng.normal();
    return v;
}

inline std::string pad(std::size_t i, int width) {
    std::string s = std::to_string(i);
    if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
    return s;
}

// Draws `n` distinct classes; the first is forced from `first_pool` when it
// is non-empty, the rest come uniformly from the remaining classes.
inline std::vector<ClassId> draw_classes(Rng& rng, std::size_t k, std::size_t n, const std::vector<ClassId>& first_pool,
                                         const std::vector<ClassId>& allowed) {
    std::vector<ClassId> chosen;
    if (!first_pool.empty()) chosen.push_back(first_pool[rng.below(first_pool.size())]);
    std::vector<ClassId> rest;
    for (ClassId c : allowed)
        if (std::find(chosen.begin(), chosen.end(), c) == chosen.end()) rest.push_back(c);
    while (chosen.size() < n) {
        const std::size_t j = rng.below(rest.size());
        chosen.push_back(rest[j]);
        rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(j));
    }
    (void)k;
    return chosen;
}

}  // namespace detail

/// Builds a synthetic world. Deterministic in the config.
inline SynthWorld generate(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t k = cfg.num_classes, l = cfg.word_dim, v = cfg.visual_dim;
    SynthWorld w;

    Rng proto_rng(derive_seed(cfg.seed, 1));
    w.truth.prototypes = Matrix(k, l);
    for (std::size_t c = 0; c < k; ++c) {
        const auto u = detail::unit_gaussian(proto_rng, l);
        std::copy(u.begin(), u.end(), w.truth.prototypes.row(c).begin());
    }
    Rng map_rng(derive_seed(cfg.seed, 2));
    w.truth.visual_map = Matrix(v, l);
    const double g_std = 1.0 / std::sqrt(static_cast<double>(l));
    for (double& x : w.truth.visual_map.data()) x = g_std * map_rng.normal();
    if (cfg.anisotropy_direction == AnisotropyDirection::common_mode) {
        w.truth.direction.assign(l, 1.0 / std::sqrt(static_cast<double>(l)));
    } else {
        Rng dir_rng(derive_seed(cfg.anisotropy_direction_seed, 3));
        w.truth.direction = detail::unit_gaussian(dir_rng, l);
    }

    auto& d = w.dataset;
    d.manifest.visual_dim = v;
    d.manifest.word_dim = l;
    for (std::size_t c = 0; c < k; ++c) d.manifest.class_vocab.push_back("class_" + detail::pad(c, 2));
    d.manifest.source = std::string(kToolVersion) + " synthgen seed=" + std::to_string(cfg.seed) +
                        " beta=" + nlohmann::json(cfg.anisotropy_offset).dump();
    d.manifest.normalization_hint = NormalizationHint::raw;

    const std::set<ClassId> unseen(cfg.unseen_classes.begin(), cfg.unseen_classes.end());
    std::vector<ClassId> all(k), seen;
    std::iota(all.begin(), all.end(), ClassId{0});
    for (ClassId c : all)
        if (!unseen.contains(c)) seen.push_back(c);
    const std::vector<ClassId> unseen_list(unseen.begin(), unseen.end());

    Rng scene_rng(derive_seed(cfg.seed, 4));
    Rng sample_rng(derive_seed(cfg.seed, 5));
    std::vector<double> word(l), region(v), latent(l);
    for (const auto& [n, count] : cfg.scenes_per_bucket) {
        for (std::size_t s = 0; s < count; ++s) {
            std::vector<ClassId> classes;
            const bool retrieval_slot =
                n == 2 && s < cfg.retrieval_categories.size() * cfg.retrieval_pool_size;
            if (retrieval_slot) {
                const ClassId anchor = cfg.retrieval_categories[s % cfg.retrieval_categories.size()];
                std::vector<ClassId> partner_pool;
                const bool need_unseen = !unseen.empty() && !unseen.contains(anchor);
                for (ClassId c : need_unseen ? unseen_list : all)
                    if (c != anchor) partner_pool.push_back(c);
                classes = {anchor, partner_pool[scene_rng.below(partner_pool.size())]};
            } else if (n == 1) {
                classes = detail::draw_classes(scene_rng, k, 1, {}, unseen.empty() ? all : seen);
            } else {
                classes = detail::draw_classes(scene_rng, k, n, unseen_list, all);
                // Forced unseen class first, then shuffle so position carries no signal.
                scene_rng.shuffle(std::span<ClassId>(classes));
            }

            Scene scene{"s" + std::to_string(n) + "_" + detail::pad(s, 5), classes};
            for (ClassId c : classes) {
                const auto u = w.truth.prototypes.row(c);
                const auto eps = detail::noise_vector(sample_rng, l);
                const auto eta = detail::noise_vector(sample_rng, v);
                for (std::size_t i = 0; i < l; ++i) {
                    word[i] = u[i] + cfg.context_noise * eps[i] + cfg.anisotropy_offset * w.truth.direction[i];
                    latent[i] = u[i] + cfg.instance_coupling * cfg.context_noise * eps[i];
                }
                for (std::size_t i = 0; i < v; ++i)
                    region[i] = dot(w.truth.visual_map.row(i), latent) + cfg.visual_noise * eta[i];
                const double score = 0.5 + 0.5 * sample_rng.uniform();
                d.regions.push_back({scene.image_id, c, score, region});
                d.words.push_back({scene.image_id, c, scene.image_id + "#0", WordSource::contextual, word});
            }
            d.scenes.push_back(std::move(scene));
        }
    }

    Rng template_rng(derive_seed(cfg.seed, 6));
    for (std::size_t c = 0; c < k; ++c) {
        const auto tau = detail::noise_vector(template_rng, l);
        std::vector<double> t(l);
        for (std::size_t i = 0; i < l; ++i)
            t[i] = w.truth.prototypes(c, i) + cfg.template_shift * tau[i] +
                   cfg.anisotropy_offset * w.truth.direction[i];
        w.templates.emplace(static_cast<ClassId>(c), std::move(t));
    }
    return w;
}

inline std::string serialize_truth(const GroundTruth& t, const SynthConfig& cfg) {
    std::string out = "{\"config\":" + to_json(cfg).dump();
    out += ",\"prototypes\":[";
    for (std::size_t c = 0; c < t.prototypes.rows(); ++c) {
        if (c) out += ',';
        json_text::append_array(out, t.prototypes.row(c));
    }
    out += "],\"visual_map\":[";
    for (std::size_t i = 0; i < t.visual_map.rows(); ++i) {
        if (i) out += ',';
        json_text::append_array(out, t.visual_map.row(i));
    }
    out += "],\"direction\":";
    json_text::append_array(out, t.direction);
    out += "}\n";
    return out;
}

/// Raw word vectors of every word record, one row each.
inline Matrix word_matrix(const Dataset& d) {
    Matrix m(d.words.size(), d.manifest.word_dim);
    for (std::size_t i = 0; i < d.words.size(); ++i)
        std::copy(d.words[i].vector.begin(), d.words[i].vector.end(), m.row(i).begin());
    return m;
}

// ---------------------------------------------------------------------------
// Anisotropy calibration

struct CalibrationStep {
    double beta = 0.0;
    double no_ln_accuracy = 0.0;  // 2-object bucket, word_to_region
    double ln_accuracy = 0.0;
    bool accepted = false;
};

struct CalibrationResult {
    bool success = false;
    double beta = 0.0;
    double target = 0.0;
    std::vector<CalibrationStep> trace;
    std::string message;
};

inline constexpr double kCalibrationStartBeta = 25.0;
inline constexpr double kCalibrationLnFloor = 0.90;

/// Train both normalization variants on one world and return their 2-object
/// matching accuracies (no-LN, LN), each averaged over `seeds` training seeds
/// starting at train_cfg.seed.
inline std::pair<double, double> ln_contrast(const SynthConfig& world_cfg, const TrainConfig& train_cfg,
                                             std::size_t seeds = 1) {
    if (seeds < 1) throw ConfigError("calibration needs at least one training seed");
    const auto world = generate(world_cfg);
    const std::set<ClassId> unseen(world_cfg.unseen_classes.begin(), world_cfg.unseen_classes.end());
    const auto data = to_training_set(training_pairs(world.dataset, unseen));
    const auto scenes = bucket_scenes(world.dataset, 2);
    if (scenes.empty()) throw ConfigError("calibration needs 2-object scenes");
    auto accuracy = [&](NormMode mode) {
        double sum = 0.0;
        for (std::size_t i = 0; i < seeds; ++i) {
            TrainConfig tc = train_cfg;
            tc.norm_mode = mode;
            tc.seed = train_cfg.seed + i;
            const auto trained = train(data, tc);
            sum += match_accuracy(trained.model, scenes, world.dataset, Direction::word_to_region).buckets.at(2).accuracy;
        }
        return sum / static_cast<double>(seeds);
    };
    const double off = accuracy(NormMode::l2_only);
    const double on = accuracy(NormMode::ln_then_l2);
    return {off, on};
}

/// Doubles the anisotropy offset from 25 until the LN-off probe falls to
/// `target` accuracy or below while the LN probe stays at or above 90%,
/// trying at most `budget` offsets. Accuracies are means over `seeds`
/// training seeds.
inline CalibrationResult calibrate_anisotropy(const SynthConfig& base, double target, std::size_t budget,
                                              const TrainConfig& train_cfg, std::size_t seeds = 1) {
    CalibrationResult r;
    r.target = target;
    double beta = kCalibrationStartBeta;
    for (std::size_t attempt = 0; attempt < budget; ++attempt, beta *= 2.0) {
        SynthConfig cfg = base;
        cfg.anisotropy_offset = beta;
        const auto [off, on] = ln_contrast(cfg, train_cfg, seeds);
        CalibrationStep step{beta, off, on, off <= target && on >= kCalibrationLnFloor};
        r.trace.push_back(step);
        log::info("calibration beta=" + std::to_string(beta) + " no_ln=" + std::to_string(off) +
                  " ln=" + std::to_string(on));
        if (step.accepted) {
            r.success = true;
            r.beta = beta;
            r.message = "calibrated";
            return r;
        }
    }
    r.message = budget == 0 ? "calibration budget is zero"
                            : "no offset within budget met both conditions";
    return r;
}

inline nlohmann::json to_json(const CalibrationResult& r) {
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& s : r.trace)
        trace.push_back({{"beta", s.beta},
                         {"no_ln_accuracy", s.no_ln_accuracy},
                         {"ln_accuracy", s.ln_accuracy},
                         {"accepted", s.accepted}});
    return {{"success", r.success}, {"beta", r.beta},     {"target", r.target},
            {"ln_floor", kCalibrationLnFloor}, {"trace", trace}, {"message", r.message}};
}

}  // namespace vsep
