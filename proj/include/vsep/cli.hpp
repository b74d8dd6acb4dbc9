#pragma once

// Command-line front end. Kept in a header so tests can drive it in-process;
// tools/vsep.cpp only forwards argv.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vsep/embedding_store.hpp"
#include "vsep/error.hpp"
#include "vsep/eval.hpp"
#include "vsep/log.hpp"
#include "vsep/ndmath.hpp"
#include "vsep/probe.hpp"
#include "vsep/synthgen.hpp"

namespace vsep::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kReportedFailure = 3 };

using nlohmann::json;
namespace fs = std::filesystem;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
};

namespace detail {

inline json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    try {
        auto j = json_text::parse_strict(text);
        if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
        for (const auto& [k, _] : j.items())
            if (k != "synth" && k != "train" && k != "eval" && k != "bench")
                throw ConfigError("unknown config section \"" + k + "\"");
        return j;
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse config " + path + ": " + e.what());
    } catch (const DataError& e) {
        throw ConfigError("cannot parse config " + path + ": " + e.what());
    }
}

inline json section(const json& cfg, const char* name) {
    if (!cfg.contains(name)) return json::object();
    if (!cfg[name].is_object()) throw ConfigError(std::string("config section ") + name + " must be an object");
    return cfg[name];
}

template <typename T>
T section_option(const json& sec, const char* key, T fallback) {
    if (!sec.contains(key)) return fallback;
    try {
        return sec[key].get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config option ") + key + ": " + e.what());
    }
}

/// Creates `dir` and checks that none of `files` exist unless forced.
inline void prepare_out(const std::string& dir, const std::vector<std::string>& files, bool force) {
    if (dir.empty()) throw ConfigError("--out is required");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
    if (force) return;
    for (const auto& f : files) {
        if (fs::exists(fs::path(dir) / f))
            throw ConfigError("refusing to overwrite " + (fs::path(dir) / f).string() + " (pass --force)");
    }
}

inline std::string out_path(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

inline void write_json(const std::string& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

/// Class names or numeric ids, comma separated.
inline std::vector<ClassId> parse_classes(const std::string& s, const std::vector<std::string>& vocab) {
    std::vector<ClassId> out;
    for (const auto& item : split_list(s)) {
        auto it = std::find(vocab.begin(), vocab.end(), item);
        if (it != vocab.end()) {
            out.push_back(static_cast<ClassId>(it - vocab.begin()));
            continue;
        }
        std::size_t pos = 0;
        unsigned long id = 0;
        try {
            id = std::stoul(item, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != item.size() || (!vocab.empty() && id >= vocab.size()))
            throw ConfigError("unknown class \"" + item + "\"");
        out.push_back(static_cast<ClassId>(id));
    }
    return out;
}

inline std::vector<std::size_t> parse_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(s)) {
        try {
            out.push_back(std::stoul(item));
        } catch (const std::exception&) {
            throw ConfigError("expected a number, got \"" + item + "\"");
        }
    }
    return out;
}

inline json provenance(const std::string& command, json resolved) {
    return {{"tool_version", std::string(kToolVersion)}, {"command", command}, {"config", std::move(resolved)}};
}

inline std::string percent(double x) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * x << "%";
    return s.str();
}

inline std::string svg_scatter(const std::vector<std::pair<std::string, const Matrix*>>& panels) {
    const double size = 360.0, pad = 20.0;
    std::ostringstream s;
    s << std::setprecision(6);
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << panels.size() * (size + 2 * pad) << "\" height=\""
      << size + 2 * pad + 20 << "\">\n";
    for (std::size_t p = 0; p < panels.size(); ++p) {
        const auto& [title, m] = panels[p];
        const double x0 = static_cast<double>(p) * (size + 2 * pad) + pad;
        double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
        for (std::size_t i = 0; i < m->rows(); ++i) {
            lo_x = std::min(lo_x, (*m)(i, 0));
            hi_x = std::max(hi_x, (*m)(i, 0));
            lo_y = std::min(lo_y, (*m)(i, 1));
            hi_y = std::max(hi_y, (*m)(i, 1));
        }
        // Same scale on both axes so the cone shape is not distorted.
        const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-12});
        s << "<rect x=\"" << x0 << "\" y=\"" << pad + 20 << "\" width=\"" << size << "\" height=\"" << size
          << "\" fill=\"none\" stroke=\"#888\"/>\n";
        s << "<text x=\"" << x0 << "\" y=\"" << pad + 12 << "\" font-family=\"sans-serif\" font-size=\"12\">" << title
          << "</text>\n";
        for (std::size_t i = 0; i < m->rows(); ++i) {
            const double cx = x0 + ((*m)(i, 0) - lo_x) / span * size;
            const double cy = pad + 20 + size - ((*m)(i, 1) - lo_y) / span * size;
            s << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"1.5\" fill=\"#1f77b4\" fill-opacity=\"0.5\"/>\n";
        }
    }
    s << "</svg>\n";
    return s.str();
}

inline TrainConfig resolve_train(const json& cfg, const Common& c, TrainConfig base = {}) {
    merge_json(base, section(cfg, "train"));
    if (c.seed) base.seed = *c.seed;
    return base;
}

inline SynthConfig resolve_synth(const json& cfg, const Common& c) {
    SynthConfig s;
    merge_json(s, section(cfg, "synth"));
    if (c.seed) s.seed = *c.seed;
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

struct GenOptions {
    Common common;
    std::string unseen;
    std::optional<double> beta;
};

inline int cmd_gen(const GenOptions& o, std::ostream& out) {
    const json cfg = detail::load_config(o.common.config_path);
    SynthConfig s = detail::resolve_synth(cfg, o.common);
    if (!o.unseen.empty()) s.unseen_classes = detail::parse_classes(o.unseen, {});
    if (o.beta) s.anisotropy_offset = *o.beta;
    s.validate();
    detail::prepare_out(o.common.out, {"dataset.jsonl", "truth.json", "templates.jsonl", "gen_report.json"},
                        o.common.force);

    auto world = generate(s);
    const auto text = serialize_dataset(world.dataset);
    const auto dataset_path = detail::out_path(o.common.out, "dataset.jsonl");
    write_text_file(dataset_path, text);
    write_text_file(detail::out_path(o.common.out, "truth.json"), serialize_truth(world.truth, s));
    write_text_file(detail::out_path(o.common.out, "templates.jsonl"),
                    serialize_class_words(world.templates, WordSource::templated));

    json buckets = json::object();
    for (const auto& [n, count] : s.scenes_per_bucket) buckets[std::to_string(n)] = count;
    const json counts = {{"regions", world.dataset.regions.size()},
                         {"words", world.dataset.words.size()},
                         {"scenes", world.dataset.scenes.size()},
                         {"scenes_per_bucket", buckets}};
    json report = detail::provenance("gen", to_json(s));
    report["seed"] = s.seed;
    report["counts"] = counts;
    detail::write_json(detail::out_path(o.common.out, "gen_report.json"), report);

    out << "wrote " << dataset_path << "\n";
    out << "regions " << world.dataset.regions.size() << "\n";
    out << "words " << world.dataset.words.size() << "\n";
    out << "scenes " << world.dataset.scenes.size() << "\n";
    return kOk;
}

struct ValidateOptions {
    std::string data;
};

inline int cmd_validate(const ValidateOptions& o, std::ostream& out) {
    const auto d = load_dataset(o.data);
    const auto v = validate_dataset(d);
    for (const auto& msg : v) out << msg << "\n";
    out << "violations " << v.size() << "\n";
    return v.empty() ? kOk : kDataError;
}

struct TrainOptions {
    Common common;
    std::string data;
    std::string unseen;
    std::optional<std::string> norm_mode;
    std::optional<std::string> loss;
    std::optional<int> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> hidden;
    std::optional<double> learning_rate;
};

inline TrainConfig resolve_train_options(const TrainOptions& o, const json& cfg) {
    TrainConfig t = detail::resolve_train(cfg, o.common);
    if (o.norm_mode) t.norm_mode = *parse_norm_mode(*o.norm_mode);
    if (o.loss) t.loss = *parse_loss_kind(*o.loss);
    if (o.epochs) t.epochs = *o.epochs;
    if (o.batch_size) t.batch_size = *o.batch_size;
    if (o.hidden) t.hidden = *o.hidden;
    if (o.learning_rate) t.learning_rate = *o.learning_rate;
    t.validate();
    return t;
}

inline int cmd_train(const TrainOptions& o, std::ostream& out) {
    const json cfg = detail::load_config(o.common.config_path);
    const TrainConfig t = resolve_train_options(o, cfg);
    detail::prepare_out(o.common.out, {"model.json", "train_log.json"}, o.common.force);
    const auto d = load_dataset(o.data);
    const auto unseen_list = detail::parse_classes(o.unseen, d.manifest.class_vocab);
    const std::set<ClassId> unseen(unseen_list.begin(), unseen_list.end());
    const auto pairs = training_pairs(d, unseen);
    if (pairs.empty()) throw DataError("training split is empty (check --unseen)");

    const auto result = train(pairs, t);
    json resolved = to_json(t);
    resolved["data"] = o.data;
    resolved["unseen"] = unseen_list;
    const json prov = detail::provenance("train", resolved);
    const auto model_path = detail::out_path(o.common.out, "model.json");
    save_model(result.model, model_path, &prov);

    // Wall-clock time goes to stdout only so the log file stays reproducible.
    json log = prov;
    log["seed"] = t.seed;
    log["training_pairs"] = result.log.training_pairs;
    log["epochs"] = result.log.epoch_loss.size();
    log["epoch_loss"] = result.log.epoch_loss;
    log["final_logit_scale"] = result.log.final_logit_scale;
    log["duplicate_word_rows"] = result.log.duplicate_word_rows;
    detail::write_json(detail::out_path(o.common.out, "train_log.json"), log);

    out << "wrote " << model_path << "\n";
    out << "training pairs " << result.log.training_pairs << ", epochs " << result.log.epoch_loss.size()
        << ", final loss " << result.log.epoch_loss.back() << ", logit scale " << result.log.final_logit_scale << "\n";
    out << "wall clock " << result.log.wall_clock_seconds << " s\n";
    return kOk;
}

struct EvalOptions {
    Common common;
    std::string data;
    std::string model;
    std::optional<std::string> direction;
    std::string unseen;
    std::string substitute;
    std::string substitute_source = "template";
    std::string categories;
    std::optional<std::size_t> pool_size;
    std::optional<std::size_t> repetitions;
    std::string ks;
    std::optional<std::size_t> sample_pairs;
};

namespace detail {

inline void check_dims(const ProbeModel& m, const Dataset& d) {
    if (m.visual_dim() != d.manifest.visual_dim || m.word_dim() != d.manifest.word_dim)
        throw DimensionError("model dimensions (" + std::to_string(m.visual_dim()) + ", " +
                             std::to_string(m.word_dim()) + ") do not match dataset (" +
                             std::to_string(d.manifest.visual_dim) + ", " + std::to_string(d.manifest.word_dim) + ")");
}

inline std::vector<Scene> multi_object_scenes(const Dataset& d) {
    std::vector<Scene> out;
    for (const auto& s : d.scenes)
        if (s.object_count() >= 2) out.push_back(s);
    return out;
}

inline json eval_resolved(const EvalOptions& o, const std::string& kind) {
    return {{"kind", kind}, {"data", o.data}, {"model", o.model}};
}

}  // namespace detail

inline int cmd_eval_matching(const EvalOptions& o, std::ostream& out) {
    const json cfg = detail::load_config(o.common.config_path);
    const json ecfg = detail::section(cfg, "eval");
    const auto dir = parse_direction(o.direction.value_or(detail::section_option<std::string>(ecfg, "direction", "word_to_region")));
    if (!dir) throw ConfigError("unknown direction");
    detail::prepare_out(o.common.out, {"matching_report.json", "matching.csv"}, o.common.force);
    const auto d = load_dataset(o.data);
    const auto m = load_model(o.model);
    detail::check_dims(m, d);
    const auto scenes = detail::multi_object_scenes(d);
    if (scenes.empty()) throw DataError("dataset has no multi-object scenes");

    const auto report = match_accuracy(m, scenes, d, *dir);
    json resolved = detail::eval_resolved(o, "matching");
    resolved["direction"] = std::string(to_string(*dir));
    json j = detail::provenance("eval matching", resolved);
    j["report"] = to_json(report);
    for (const auto& [n, b] : report.buckets)
        out << n << " objects: accuracy " << detail::percent(b.accuracy) << " (" << b.correct << "/" << b.pair_count
            << ", chance " << detail::percent(b.chance_baseline) << ")\n";
    std::string csv = to_csv(report);

    if (!o.substitute.empty()) {
        const auto src = parse_word_source(o.substitute_source);
        if (!src) throw ConfigError("unknown substitute source " + o.substitute_source);
        std::ifstream in(o.substitute, std::ios::binary);
        if (!in) throw DataError("cannot open " + o.substitute);
        const auto table = parse_class_words(in, d.manifest.word_dim);
        const auto subst = substitute_words(d, table, *src);
        const auto sub_report = match_accuracy(m, scenes, subst, *dir);
        json drop = json::object();
        for (const auto& [n, b] : report.buckets) {
            const double delta = b.accuracy - sub_report.buckets.at(n).accuracy;
            drop[std::to_string(n)] = delta;
            out << n << " objects: substituted accuracy " << detail::percent(sub_report.buckets.at(n).accuracy)
                << ", drop " << detail::percent(delta) << "\n";
        }
        j["config"]["substitute"] = o.substitute;
        j["substituted_report"] = to_json(sub_report);
        j["accuracy_drop"] = drop;
        csv += "substituted\n" + to_csv(sub_report);
    }
    detail::write_json(detail::out_path(o.common.out, "matching_report.json"), j);
    write_text_file(detail::out_path(o.common.out, "matching.csv"), csv);
    return kOk;
}

inline int cmd_eval_zeroshot(const EvalOptions& o, std::ostream& out) {
    const json cfg = detail::load_config(o.common.config_path);
    const json ecfg = detail::section(cfg, "eval");
    const auto dir = parse_direction(o.direction.value_or(detail::section_option<std::string>(ecfg, "direction", "region_to_word")));
    if (!dir) throw ConfigError("unknown direction");
    detail::prepare_out(o.common.out, {"zeroshot_report.json", "zeroshot.csv"}, o.common.force);
    const auto d = load_dataset(o.data);
    const auto unseen_list = detail::parse_classes(o.unseen, d.manifest.class_vocab);
    if (unseen_list.empty()) throw ConfigError("zeroshot needs --unseen");
    const std::set<ClassId> unseen(unseen_list.begin(), unseen_list.end());
    const auto m = load_model(o.model);
    detail::check_dims(m, d);
    const auto scenes = zero_shot_scenes(d, unseen);
    if (scenes.empty()) throw DataError("no multi-object scene contains an unseen class");
    const auto report = zero_shot_report(m, scenes, unseen, d, *dir);

    json resolved = detail::eval_resolved(o, "zeroshot");
    resolved["direction"] = std::string(to_string(*dir));
    resolved["unseen"] = unseen_list;
    json j = detail::provenance("eval zeroshot", resolved);
    j["report"] = to_json(report);
    detail::write_json(detail::out_path(o.common.out, "zeroshot_report.json"), j);
    write_text_file(detail::out_path(o.common.out, "zeroshot.csv"), to_csv(report));

    for (const auto& [n, b] : report.buckets)
        out << n << " objects: accuracy " << detail::percent(b.accuracy) << ", unseen correct "
            << detail::percent(b.unseen_correct_rate) << " (" << b.unseen_correct << "/" << b.unseen_total << ")\n";
    out << "unseen correct " << detail::percent(report.unseen_correct_rate) << "\n";
    if (report.me_bias_pct)
        out << "me_bias " << detail::percent(*report.me_bias_pct) << " (" << report.me_bias_numerator << "/"
            << report.me_bias_denominator << ")\n";
    else
        out << "me_bias undefined (no wrongly labeled regions)\n";
    return kOk;
}

inline int cmd_eval_retrieval(const EvalOptions& o, std::ostream& out) {
    const json cfg = detail::load_config(o.common.config_path);
    const json ecfg = detail::section(cfg, "eval");
    const std::size_t pool = o.pool_size.value_or(detail::section_option<std::size_t>(ecfg, "pool_size", 100));
    const std::size_t reps = o.repetitions.value_or(detail::section_option<std::size_t>(ecfg, "repetitions", 5));
    const std::uint64_t seed = o.common.seed.value_or(detail::section_option<std::uint64_t>(ecfg, "seed", 0));
    std::vector<std::size_t> ks = o.ks.empty() ? detail::section_option<std::vector<std::size_t>>(ecfg, "ks", {1, 5})
                                               : detail::parse_sizes(o.ks);
    detail::prepare_out(o.common.out, {"retrieval_report.json", "retrieval.csv"}, o.common.force);
    const auto d = load_dataset(o.data);
    const auto m = load_model(o.model);
    detail::check_dims(m, d);
    std::vector<ClassId> cats = detail::parse_classes(o.categories, d.manifest.class_vocab);
    if (cats.empty())
        for (std::size_t c = 0; c < d.manifest.class_vocab.size(); ++c) cats.push_back(static_cast<ClassId>(c));

    const auto report = instance_recall(m, d, cats, pool, ks, reps, seed);
    json resolved = detail::eval_resolved(o, "retrieval");
    resolved["pool_size"] = pool;
    resolved["repetitions"] = reps;
    resolved["ks"] = report.ks;
    resolved["categories"] = cats;
    json j = detail::provenance("eval retrieval", resolved);
    j["seed"] = seed;
    j["report"] = to_json(report);
    detail::write_json(detail::out_path(o.common.out, "retrieval_report.json"), j);
    write_text_file(detail::out_path(o.common.out, "retrieval.csv"), to_csv(report));

    for (std::size_t t = 0; t < report.ks.size(); ++t)
        out << "IR@" << report.ks[t] << " " << detail::percent(report.ir_mean[t]) << " +- "
            << detail::percent(report.ir_std[t]) << "\n";
    out << "categories " << report.per_category.size() << ", skipped " << report.skipped.size() << "\n";
    return kOk;
}

inline int cmd_eval_anisotropy(const EvalOptions& o, std::ostream& out) {
    const json cfg = detail::load_config(o.common.config_path);
    const json ecfg = detail::section(cfg, "eval");
    const std::size_t pairs = o.sample_pairs.value_or(detail::section_option<std::size_t>(ecfg, "sample_pairs", 20000));
    const std::uint64_t seed = o.common.seed.value_or(detail::section_option<std::uint64_t>(ecfg, "seed", 0));
    detail::prepare_out(o.common.out, {"anisotropy_report.json", "anisotropy.csv", "anisotropy.svg"},
                        o.common.force);
    const auto d = load_dataset(o.data);
    const Matrix raw = word_matrix(d);
    if (raw.rows() < 2) throw DataError("anisotropy needs at least 2 word vectors");
    Matrix normed(raw.rows(), raw.cols());
    for (std::size_t i = 0; i < raw.rows(); ++i) {
        const auto v = layer_norm(raw.row(i));
        std::copy(v.begin(), v.end(), normed.row(i).begin());
    }
    const auto raw_stats = anisotropy_stats(raw, pairs, seed);
    const auto ln_stats = anisotropy_stats(normed, pairs, seed);

    auto stats_json = [](const AnisotropyStats& s) {
        return json{{"mean_pairwise_cosine", s.mean_pairwise_cosine},
                    {"mean_norm_ratio", s.mean_norm_ratio},
                    {"explained_fraction", s.explained_fraction},
                    {"pairs_used", s.pairs_used},
                    {"exhaustive", s.exhaustive}};
    };
    json resolved = {{"kind", "anisotropy"}, {"data", o.data}, {"sample_pairs", pairs}};
    json j = detail::provenance("eval anisotropy", resolved);
    j["seed"] = seed;
    j["raw"] = stats_json(raw_stats);
    j["layer_normed"] = stats_json(ln_stats);
    detail::write_json(detail::out_path(o.common.out, "anisotropy_report.json"), j);

    std::string csv = "index,raw_pc1,raw_pc2,ln_pc1,ln_pc2\n";
    for (std::size_t i = 0; i < raw.rows(); ++i) {
        csv += std::to_string(i);
        for (double x : {raw_stats.pca2_coords(i, 0), raw_stats.pca2_coords(i, 1), ln_stats.pca2_coords(i, 0),
                         ln_stats.pca2_coords(i, 1)}) {
            csv += ',';
            json_text::append_double(csv, x);
        }
        csv += '\n';
    }
    write_text_file(detail::out_path(o.common.out, "anisotropy.csv"), csv);
    write_text_file(detail::out_path(o.common.out, "anisotropy.svg"),
                    detail::svg_scatter({{"raw word vectors", &raw_stats.pca2_coords},
                                         {"layer-normalized", &ln_stats.pca2_coords}}));

    out << "raw: mean pairwise cosine " << raw_stats.mean_pairwise_cosine << ", norm ratio "
        << raw_stats.mean_norm_ratio << ", top-2 explained " << raw_stats.explained_fraction << "\n";
    out << "layer-normed: mean pairwise cosine " << ln_stats.mean_pairwise_cosine << ", norm ratio "
        << ln_stats.mean_norm_ratio << ", top-2 explained " << ln_stats.explained_fraction << "\n";
    return kOk;
}

struct BenchOptions {
    Common common;
    std::optional<std::size_t> seeds;   // default 3
    std::optional<double> target;       // default 0.65
    std::optional<std::size_t> budget;  // default 6
    std::optional<double> beta;
    std::optional<int> epochs;
};

/// LN-on vs LN-off on the calibrated anisotropic world, one probe pair per training seed.
struct BenchResult {
    CalibrationResult calibration;
    std::vector<std::uint64_t> seeds;
    // [seed][bucket 2,3,4]
    std::vector<std::array<double, 3>> no_ln;
    std::vector<std::array<double, 3>> ln;
};

inline constexpr int kBenchDefaultEpochs = 20;

inline BenchResult run_anisotropy_bench(const SynthConfig& synth, const TrainConfig& train_cfg, std::size_t seeds,
                                        double target, std::size_t budget, std::optional<double> beta) {
    BenchResult b;
    if (beta) {
        b.calibration = {true, *beta, target, {}, "offset given, calibration skipped"};
    } else {
        b.calibration = calibrate_anisotropy(synth, target, budget, train_cfg, seeds);
        if (!b.calibration.success) return b;
    }
    // One world, the calibrated one; seeds vary probe initialization and batching.
    SynthConfig s = synth;
    s.anisotropy_offset = b.calibration.beta;
    const auto world = generate(s);
    const std::set<ClassId> unseen(s.unseen_classes.begin(), s.unseen_classes.end());
    const auto data = to_training_set(training_pairs(world.dataset, unseen));
    for (std::size_t i = 0; i < seeds; ++i) {
        TrainConfig t = train_cfg;
        t.seed = train_cfg.seed + i;
        std::array<double, 3> acc_off{}, acc_on{};
        for (NormMode mode : {NormMode::l2_only, NormMode::ln_then_l2}) {
            t.norm_mode = mode;
            const auto model = train(data, t).model;
            for (std::size_t n = 2; n <= 4; ++n) {
                const auto scenes = bucket_scenes(world.dataset, n);
                const double a = scenes.empty() ? 0.0
                                                : match_accuracy(model, scenes, world.dataset).buckets.at(n).accuracy;
                (mode == NormMode::ln_then_l2 ? acc_on : acc_off)[n - 2] = a;
            }
        }
        b.seeds.push_back(t.seed);
        b.no_ln.push_back(acc_off);
        b.ln.push_back(acc_on);
    }
    return b;
}

inline int cmd_bench_anisotropy(const BenchOptions& o, std::ostream& out) {
    const json cfg = detail::load_config(o.common.config_path);
    const json bcfg = detail::section(cfg, "bench");
    for (const auto& [k, _] : bcfg.items())
        if (k != "seeds" && k != "target" && k != "budget" && k != "beta")
            throw ConfigError("unknown bench config key \"" + k + "\"");
    const SynthConfig s = detail::resolve_synth(cfg, o.common);
    TrainConfig base;
    base.epochs = kBenchDefaultEpochs;
    TrainConfig t = detail::resolve_train(cfg, o.common, base);
    if (o.epochs) t.epochs = *o.epochs;
    const std::size_t seeds = o.seeds.value_or(detail::section_option<std::size_t>(bcfg, "seeds", 3));
    const double target = o.target.value_or(detail::section_option<double>(bcfg, "target", 0.65));
    const std::size_t budget = o.budget.value_or(detail::section_option<std::size_t>(bcfg, "budget", 6));
    std::optional<double> beta = o.beta;
    if (!beta && bcfg.contains("beta")) beta = detail::section_option<double>(bcfg, "beta", 0.0);
    s.validate();
    t.validate();
    if (seeds < 1) throw ConfigError("--seeds must be >= 1");
    detail::prepare_out(o.common.out, {"bench_report.json", "bench_table.csv"}, o.common.force);

    const auto b = run_anisotropy_bench(s, t, seeds, target, budget, beta);
    json resolved = {{"synth", to_json(s)}, {"train", to_json(t)}, {"seeds", seeds},
                     {"target", target}, {"budget", budget}};
    json j = detail::provenance("bench-anisotropy", resolved);
    j["seed"] = s.seed;
    j["calibration"] = to_json(b.calibration);
    j["beta"] = b.calibration.beta;
    out << "calibration: " << b.calibration.message << "\n";
    for (const auto& st : b.calibration.trace)
        out << "  beta " << st.beta << ": no-LN " << detail::percent(st.no_ln_accuracy) << ", LN "
            << detail::percent(st.ln_accuracy) << (st.accepted ? "  accepted" : "") << "\n";
    if (!b.calibration.success) {
        detail::write_json(detail::out_path(o.common.out, "bench_report.json"), j);
        return kReportedFailure;
    }

    json rows = json::array();
    std::string csv = "object_count,no_ln_accuracy,ln_accuracy\n";
    out << "beta " << b.calibration.beta << "\n";
    out << "objects  no-LN     LN\n";
    for (std::size_t n = 2; n <= 4; ++n) {
        double off = 0.0, on = 0.0;
        for (std::size_t i = 0; i < b.seeds.size(); ++i) {
            off += b.no_ln[i][n - 2];
            on += b.ln[i][n - 2];
        }
        off /= static_cast<double>(b.seeds.size());
        on /= static_cast<double>(b.seeds.size());
        json per_seed = json::array();
        for (std::size_t i = 0; i < b.seeds.size(); ++i)
            per_seed.push_back({{"seed", b.seeds[i]}, {"no_ln", b.no_ln[i][n - 2]}, {"ln", b.ln[i][n - 2]}});
        rows.push_back({{"object_count", n}, {"no_ln_accuracy", off}, {"ln_accuracy", on}, {"per_seed", per_seed}});
        csv += std::to_string(n) + ",";
        json_text::append_double(csv, off);
        csv += ",";
        json_text::append_double(csv, on);
        csv += "\n";
        out << n << "        " << detail::percent(off) << "  " << detail::percent(on) << "\n";
    }
    j["table"] = rows;
    detail::write_json(detail::out_path(o.common.out, "bench_report.json"), j);
    write_text_file(detail::out_path(o.common.out, "bench_table.csv"), csv);
    return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Visual semantic embedding probes: synthetic worlds, training and evaluation", "vsep"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    const std::vector<std::string> norm_modes{"none", "l2_only", "ln_then_l2"};
    const std::vector<std::string> losses{"symmetric_ce", "hinge"};
    const std::vector<std::string> directions{"word_to_region", "region_to_word"};

    auto add_common = [](CLI::App* sub, Common& c, bool needs_out = true) {
        sub->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", c.seed, "Seed (u64)");
        auto* o = sub->add_option("--out", c.out, "Output directory");
        if (needs_out) o->required();
        sub->add_flag("--force", c.force, "Overwrite existing outputs");
    };

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic embedding world");
    add_common(gen_cmd, gen.common);
    gen_cmd->add_option("--unseen", gen.unseen, "Held-out class ids, comma separated");
    gen_cmd->add_option("--beta", gen.beta, "Anisotropy offset");

    ValidateOptions val;
    auto* val_cmd = app.add_subcommand("validate", "Validate a dataset file");
    val_cmd->add_option("--data", val.data, "Dataset file")->required()->check(CLI::ExistingFile);

    TrainOptions tr;
    auto* train_cmd = app.add_subcommand("train", "Train a probe on one-object scenes");
    add_common(train_cmd, tr.common);
    train_cmd->add_option("--data", tr.data, "Dataset file")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--unseen", tr.unseen, "Classes excluded from training (names or ids)");
    train_cmd->add_option("--norm-mode", tr.norm_mode)->check(CLI::IsMember(norm_modes));
    train_cmd->add_option("--loss", tr.loss)->check(CLI::IsMember(losses));
    train_cmd->add_option("--epochs", tr.epochs);
    train_cmd->add_option("--batch-size", tr.batch_size);
    train_cmd->add_option("--hidden", tr.hidden);
    train_cmd->add_option("--lr", tr.learning_rate);

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a probe");
    eval_cmd->require_subcommand(1);
    EvalOptions ev_match, ev_zero, ev_ret, ev_aniso;
    auto add_eval = [&](const char* name, const char* help, EvalOptions& e, bool needs_model) {
        auto* sub = eval_cmd->add_subcommand(name, help);
        add_common(sub, e.common);
        sub->add_option("--data", e.data, "Dataset file")->required()->check(CLI::ExistingFile);
        if (needs_model) sub->add_option("--model", e.model, "Model file")->required()->check(CLI::ExistingFile);
        return sub;
    };
    auto* match_cmd = add_eval("matching", "Scene matching accuracy per object count", ev_match, true);
    match_cmd->add_option("--direction", ev_match.direction)->check(CLI::IsMember(directions));
    match_cmd->add_option("--substitute", ev_match.substitute, "Per-class word file replacing scene words")
        ->check(CLI::ExistingFile);
    match_cmd->add_option("--substitute-source", ev_match.substitute_source);
    auto* zero_cmd = add_eval("zeroshot", "Zero-shot labeling and mutual-exclusivity analysis", ev_zero, true);
    zero_cmd->add_option("--direction", ev_zero.direction)->check(CLI::IsMember(directions));
    zero_cmd->add_option("--unseen", ev_zero.unseen, "Held-out classes (names or ids)")->required();
    auto* ret_cmd = add_eval("retrieval", "Instance recall IR@k", ev_ret, true);
    ret_cmd->add_option("--categories", ev_ret.categories, "Categories (names or ids), default all");
    ret_cmd->add_option("--pool-size", ev_ret.pool_size);
    ret_cmd->add_option("--repetitions", ev_ret.repetitions);
    ret_cmd->add_option("--k", ev_ret.ks, "Comma separated k values");
    auto* aniso_cmd = add_eval("anisotropy", "Anisotropy statistics and PCA scatter of word vectors", ev_aniso, false);
    aniso_cmd->add_option("--sample-pairs", ev_aniso.sample_pairs);

    BenchOptions bench;
    auto* bench_cmd = app.add_subcommand("bench-anisotropy", "LN-on vs LN-off on a calibrated anisotropic world");
    add_common(bench_cmd, bench.common);
    bench_cmd->add_option("--seeds", bench.seeds, "Number of training seeds");
    bench_cmd->add_option("--target", bench.target, "LN-off 2-object accuracy ceiling for calibration");
    bench_cmd->add_option("--budget", bench.budget, "Maximum number of offsets tried");
    bench_cmd->add_option("--beta", bench.beta, "Use this offset and skip calibration");
    bench_cmd->add_option("--epochs", bench.epochs, "Training epochs per probe");

    // Normalization and loss flags are accepted by the commands they affect only.
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << "\n";
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen(gen, out);
        if (val_cmd->parsed()) return cmd_validate(val, out);
        if (train_cmd->parsed()) return cmd_train(tr, out);
        if (match_cmd->parsed()) return cmd_eval_matching(ev_match, out);
        if (zero_cmd->parsed()) return cmd_eval_zeroshot(ev_zero, out);
        if (ret_cmd->parsed()) return cmd_eval_retrieval(ev_ret, out);
        if (aniso_cmd->parsed()) return cmd_eval_anisotropy(ev_aniso, out);
        if (bench_cmd->parsed()) return cmd_bench_anisotropy(bench, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kDataError;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kDataError;
    }
    err << "error: no command\n";
    return kUsage;
}

}  // namespace vsep::cli
