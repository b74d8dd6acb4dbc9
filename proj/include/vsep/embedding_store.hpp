#pragma once

// Canonical dataset model: one manifest plus region, word and scene records,
// stored as one JSON object per line.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vsep/error.hpp"
#include "vsep/json_text.hpp"
#include "vsep/ndmath.hpp"

namespace vsep {

using ClassId = std::uint32_t;

inline constexpr std::size_t kMaxSceneObjects = 8;

enum class NormalizationHint { raw, pre_layer_normed };

enum class WordSource { fixed, contextual, templated };

inline std::string_view to_string(NormalizationHint h) noexcept {
    return h == NormalizationHint::raw ? "raw" : "pre_layer_normed";
}

inline std::string_view to_string(WordSource s) noexcept {
    switch (s) {
        case WordSource::fixed: return "static";
        case WordSource::contextual: return "contextual";
        case WordSource::templated: return "template";
    }
    return "static";
}

inline std::optional<WordSource> parse_word_source(std::string_view s) noexcept {
    if (s == "static") return WordSource::fixed;
    if (s == "contextual") return WordSource::contextual;
    if (s == "template") return WordSource::templated;
    return std::nullopt;
}

struct Manifest {
    std::size_t visual_dim = 0;
    std::size_t word_dim = 0;
    std::vector<std::string> class_vocab;
    std::string source;
    NormalizationHint normalization_hint = NormalizationHint::raw;

    friend bool operator==(const Manifest&, const Manifest&) = default;
};

struct RegionEmbedding {
    std::string image_id;
    ClassId class_id = 0;
    double score = 1.0;
    std::vector<double> vector;

    friend bool operator==(const RegionEmbedding&, const RegionEmbedding&) = default;
};

struct WordEmbedding {
    std::string image_id;
    ClassId class_id = 0;
    std::string caption_id;
    WordSource source = WordSource::contextual;
    std::vector<double> vector;

    friend bool operator==(const WordEmbedding&, const WordEmbedding&) = default;
};

/// Aligned (region, word) pairs of one image; each pair is resolved by
/// (image_id, class_id).
struct Scene {
    std::string image_id;
    std::vector<ClassId> class_ids;

    std::size_t object_count() const noexcept { return class_ids.size(); }

    friend bool operator==(const Scene&, const Scene&) = default;
};

enum class RecordKind : std::uint8_t { region, word, scene };

struct RecordRef {
    RecordKind kind;
    std::size_t index;

    friend bool operator==(const RecordRef&, const RecordRef&) = default;
};

struct Dataset {
    Manifest manifest;
    std::vector<RegionEmbedding> regions;
    std::vector<WordEmbedding> words;
    std::vector<Scene> scenes;
    // File order of the non-manifest records. Empty means regions, words,
    // scenes in that order.
    std::vector<RecordRef> order;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Lookup tables from (image_id, class_id) to record indices. Words resolve
/// to the first record in file order when several sources are present.
class DatasetIndex {
public:
    explicit DatasetIndex(const Dataset& d) {
        for (std::size_t i = 0; i < d.regions.size(); ++i)
            regions_.try_emplace({d.regions[i].image_id, d.regions[i].class_id}, i);
        for (std::size_t i = 0; i < d.words.size(); ++i)
            words_.try_emplace({d.words[i].image_id, d.words[i].class_id}, i);
    }

    std::optional<std::size_t> region(const std::string& image, ClassId c) const {
        auto it = regions_.find({image, c});
        if (it == regions_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<std::size_t> word(const std::string& image, ClassId c) const {
        auto it = words_.find({image, c});
        if (it == words_.end()) return std::nullopt;
        return it->second;
    }

private:
    std::map<std::pair<std::string, ClassId>, std::size_t> regions_;
    std::map<std::pair<std::string, ClassId>, std::size_t> words_;
};

/// A scene with every pair resolved to record indices.
struct ResolvedScene {
    const Scene* scene = nullptr;
    std::vector<std::size_t> regions;
    std::vector<std::size_t> words;
};

inline ResolvedScene resolve_scene(const Scene& s, const DatasetIndex& index) {
    ResolvedScene r;
    r.scene = &s;
    for (ClassId c : s.class_ids) {
        auto ri = index.region(s.image_id, c);
        auto wi = index.word(s.image_id, c);
        if (!ri) throw DataError("scene " + s.image_id + ": missing region for class " + std::to_string(c));
        if (!wi) throw DataError("scene " + s.image_id + ": missing word for class " + std::to_string(c));
        r.regions.push_back(*ri);
        r.words.push_back(*wi);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Validation

inline std::vector<std::string> validate_dataset(const Dataset& d) {
    std::vector<std::string> v;
    const auto& m = d.manifest;
    const std::size_t k = m.class_vocab.size();
    if (m.visual_dim < 1) v.push_back("manifest: visual_dim must be >= 1");
    if (m.word_dim < 1) v.push_back("manifest: word_dim must be >= 1");
    {
        std::set<std::string> names;
        for (const auto& name : m.class_vocab) {
            if (name.empty()) v.push_back("manifest: empty class name");
            else if (!names.insert(name).second) v.push_back("manifest: duplicate class name \"" + name + "\"");
        }
    }

    auto key = [](const std::string& image, ClassId c) {
        return "(" + image + ", " + std::to_string(c) + ")";
    };

    std::set<std::pair<std::string, ClassId>> region_keys;
    for (const auto& r : d.regions) {
        const auto where = "region " + key(r.image_id, r.class_id);
        if (r.class_id >= k) v.push_back(where + ": class_id out of range");
        if (!(r.score >= 0.0 && r.score <= 1.0)) v.push_back(where + ": score outside [0,1]");
        if (r.vector.size() != m.visual_dim)
            v.push_back(where + ": vector length " + std::to_string(r.vector.size()) + " != visual_dim " +
                        std::to_string(m.visual_dim));
        if (!all_finite(r.vector)) v.push_back(where + ": non-finite vector entry");
        if (!region_keys.insert({r.image_id, r.class_id}).second) v.push_back(where + ": duplicate region");
    }

    std::set<std::tuple<std::string, ClassId, WordSource>> word_keys;
    std::set<std::pair<std::string, ClassId>> word_pairs;
    for (const auto& w : d.words) {
        const auto where = "word " + key(w.image_id, w.class_id);
        if (w.class_id >= k) v.push_back(where + ": class_id out of range");
        if (w.vector.size() != m.word_dim)
            v.push_back(where + ": vector length " + std::to_string(w.vector.size()) + " != word_dim " +
                        std::to_string(m.word_dim));
        if (!all_finite(w.vector)) v.push_back(where + ": non-finite vector entry");
        if (!word_keys.insert({w.image_id, w.class_id, w.source}).second)
            v.push_back(where + ": duplicate word for source " + std::string(to_string(w.source)));
        word_pairs.insert({w.image_id, w.class_id});
    }

    std::set<std::string> scene_images;
    for (const auto& s : d.scenes) {
        const auto where = "scene " + s.image_id;
        if (s.class_ids.empty() || s.class_ids.size() > kMaxSceneObjects)
            v.push_back(where + ": object_count " + std::to_string(s.class_ids.size()) + " outside [1, 8]");
        if (!scene_images.insert(s.image_id).second) v.push_back(where + ": duplicate scene");
        std::set<ClassId> seen;
        for (ClassId c : s.class_ids) {
            if (!seen.insert(c).second) v.push_back(where + ": repeated class_id " + std::to_string(c));
            if (!region_keys.contains({s.image_id, c})) v.push_back(where + ": missing region " + key(s.image_id, c));
            if (!word_pairs.contains({s.image_id, c})) v.push_back(where + ": missing word " + key(s.image_id, c));
        }
    }
    return v;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline void append_manifest(std::string& out, const Manifest& m) {
    out += R"({"type":"manifest","visual_dim":)";
    out += std::to_string(m.visual_dim);
    out += R"(,"word_dim":)";
    out += std::to_string(m.word_dim);
    out += R"(,"class_vocab":[)";
    for (std::size_t i = 0; i < m.class_vocab.size(); ++i) {
        if (i) out += ',';
        json_text::append_string(out, m.class_vocab[i]);
    }
    out += R"(],"source":)";
    json_text::append_string(out, m.source);
    out += R"(,"normalization_hint":")";
    out += to_string(m.normalization_hint);
    out += "\"}\n";
}

inline void append_region(std::string& out, const RegionEmbedding& r) {
    out += R"({"type":"region","image_id":)";
    json_text::append_string(out, r.image_id);
    out += R"(,"class_id":)";
    out += std::to_string(r.class_id);
    out += R"(,"score":)";
    json_text::append_double(out, r.score);
    out += R"(,"vector":)";
    json_text::append_array(out, r.vector);
    out += "}\n";
}

inline void append_word(std::string& out, const WordEmbedding& w) {
    out += R"({"type":"word","image_id":)";
    json_text::append_string(out, w.image_id);
    out += R"(,"class_id":)";
    out += std::to_string(w.class_id);
    out += R"(,"caption_id":)";
    json_text::append_string(out, w.caption_id);
    out += R"(,"source":")";
    out += to_string(w.source);
    out += R"(","vector":)";
    json_text::append_array(out, w.vector);
    out += "}\n";
}

inline void append_scene(std::string& out, const Scene& s) {
    out += R"({"type":"scene","image_id":)";
    json_text::append_string(out, s.image_id);
    out += R"(,"pairs":[)";
    for (std::size_t i = 0; i < s.class_ids.size(); ++i) {
        if (i) out += ',';
        out += '[';
        out += std::to_string(s.class_ids[i]);
        out += ']';
    }
    out += "]}\n";
}

}  // namespace detail

/// Canonical text form; parse_dataset(serialize_dataset(d)) == d.
inline std::string serialize_dataset(const Dataset& d) {
    std::string out;
    detail::append_manifest(out, d.manifest);
    if (d.order.empty()) {
        for (const auto& r : d.regions) detail::append_region(out, r);
        for (const auto& w : d.words) detail::append_word(out, w);
        for (const auto& s : d.scenes) detail::append_scene(out, s);
        return out;
    }
    for (const auto& ref : d.order) {
        switch (ref.kind) {
            case RecordKind::region: detail::append_region(out, d.regions.at(ref.index)); break;
            case RecordKind::word: detail::append_word(out, d.words.at(ref.index)); break;
            case RecordKind::scene: detail::append_scene(out, d.scenes.at(ref.index)); break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

using nlohmann::json;

struct LineReader {
    std::size_t line;

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(line, what); }

    void expect_keys(const json& j, std::initializer_list<std::string_view> keys) const {
        for (auto k : keys)
            if (!j.contains(k)) fail("missing field \"" + std::string(k) + "\"");
        for (const auto& [k, _] : j.items()) {
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) fail("unknown field \"" + k + "\"");
        }
    }

    std::string str(const json& j, const char* key) const {
        const auto& f = j.at(key);
        if (!f.is_string()) fail(std::string("field \"") + key + "\" must be a string");
        return f.get<std::string>();
    }

    std::uint64_t uint(const json& j, const char* key) const {
        const auto& f = j.at(key);
        if (!f.is_number_unsigned()) fail(std::string("field \"") + key + "\" must be a non-negative integer");
        return f.get<std::uint64_t>();
    }

    double real(const json& f, const std::string& what) const {
        if (!f.is_number()) fail(what + " must be a number");
        const double x = f.get<double>();
        if (!std::isfinite(x)) fail(what + " is not finite");
        return x;
    }

    std::vector<double> vec(const json& j, std::size_t expected, const char* dim_name) const {
        const auto& f = j.at("vector");
        if (!f.is_array()) fail("field \"vector\" must be an array");
        if (f.size() != expected) {
            throw DimensionError("line " + std::to_string(line) + ": vector has length " + std::to_string(f.size()) +
                                 ", expected " + dim_name + " = " + std::to_string(expected));
        }
        std::vector<double> out;
        out.reserve(f.size());
        for (const auto& x : f) out.push_back(real(x, "vector entry"));
        return out;
    }
};

}  // namespace detail

/// Parses the line-delimited dataset format and validates the result.
inline Dataset parse_dataset(std::istream& in) {
    using nlohmann::json;
    Dataset d;
    std::string text;
    std::size_t line_no = 0;
    bool have_manifest = false;
    std::set<std::pair<std::string, ClassId>> region_keys;
    std::set<std::tuple<std::string, ClassId, WordSource>> word_keys;
    std::set<std::string> scene_keys;

    while (std::getline(in, text)) {
        ++line_no;
        detail::LineReader rd{line_no};
        if (text.empty()) rd.fail("empty line");
        json j;
        try {
            j = json_text::parse_strict(text);
        } catch (const json::exception& e) {
            rd.fail(std::string("malformed JSON: ") + e.what());
        } catch (const DataError& e) {
            rd.fail(e.what());
        }
        if (!j.is_object()) rd.fail("record must be a JSON object");
        if (!j.contains("type") || !j["type"].is_string()) rd.fail("record has no string \"type\"");
        const auto type = j["type"].get<std::string>();

        if (!have_manifest) {
            if (type != "manifest") rd.fail("first record must be the manifest");
            rd.expect_keys(j, {"type", "visual_dim", "word_dim", "class_vocab", "source", "normalization_hint"});
            auto& m = d.manifest;
            m.visual_dim = rd.uint(j, "visual_dim");
            m.word_dim = rd.uint(j, "word_dim");
            if (m.visual_dim < 1 || m.word_dim < 1) rd.fail("dimensions must be >= 1");
            const auto& vocab = j["class_vocab"];
            if (!vocab.is_array()) rd.fail("class_vocab must be an array");
            std::set<std::string> names;
            for (const auto& n : vocab) {
                if (!n.is_string() || n.get<std::string>().empty()) rd.fail("class names must be non-empty strings");
                if (!names.insert(n.get<std::string>()).second)
                    rd.fail("duplicate class name \"" + n.get<std::string>() + "\"");
                m.class_vocab.push_back(n.get<std::string>());
            }
            m.source = rd.str(j, "source");
            const auto hint = rd.str(j, "normalization_hint");
            if (hint == "raw") m.normalization_hint = NormalizationHint::raw;
            else if (hint == "pre_layer_normed") m.normalization_hint = NormalizationHint::pre_layer_normed;
            else rd.fail("unknown normalization_hint \"" + hint + "\"");
            have_manifest = true;
            continue;
        }

        const std::size_t k = d.manifest.class_vocab.size();
        auto class_of = [&](const json& f) -> ClassId {
            if (!f.is_number_unsigned()) rd.fail("class_id must be a non-negative integer");
            const auto c = f.get<std::uint64_t>();
            if (c >= k) rd.fail("class_id " + std::to_string(c) + " outside class_vocab");
            return static_cast<ClassId>(c);
        };

        if (type == "region") {
            rd.expect_keys(j, {"type", "image_id", "class_id", "score", "vector"});
            RegionEmbedding r;
            r.image_id = rd.str(j, "image_id");
            r.class_id = class_of(j["class_id"]);
            r.score = rd.real(j["score"], "score");
            if (r.score < 0.0 || r.score > 1.0) rd.fail("score outside [0,1]");
            r.vector = rd.vec(j, d.manifest.visual_dim, "visual_dim");
            if (!region_keys.insert({r.image_id, r.class_id}).second)
                throw DataError("line " + std::to_string(line_no) + ": duplicate region (" + r.image_id + ", " +
                                std::to_string(r.class_id) + ")");
            d.order.push_back({RecordKind::region, d.regions.size()});
            d.regions.push_back(std::move(r));
        } else if (type == "word") {
            rd.expect_keys(j, {"type", "image_id", "class_id", "caption_id", "source", "vector"});
            WordEmbedding w;
            w.image_id = rd.str(j, "image_id");
            w.class_id = class_of(j["class_id"]);
            w.caption_id = rd.str(j, "caption_id");
            const auto src = parse_word_source(rd.str(j, "source"));
            if (!src) rd.fail("unknown word source");
            w.source = *src;
            w.vector = rd.vec(j, d.manifest.word_dim, "word_dim");
            if (!word_keys.insert({w.image_id, w.class_id, w.source}).second)
                throw DataError("line " + std::to_string(line_no) + ": duplicate word (" + w.image_id + ", " +
                                std::to_string(w.class_id) + ", " + std::string(to_string(w.source)) + ")");
            d.order.push_back({RecordKind::word, d.words.size()});
            d.words.push_back(std::move(w));
        } else if (type == "scene") {
            rd.expect_keys(j, {"type", "image_id", "pairs"});
            Scene s;
            s.image_id = rd.str(j, "image_id");
            const auto& pairs = j["pairs"];
            if (!pairs.is_array()) rd.fail("pairs must be an array");
            if (pairs.empty() || pairs.size() > kMaxSceneObjects) rd.fail("scene object_count outside [1, 8]");
            std::set<ClassId> seen;
            for (const auto& p : pairs) {
                if (!p.is_array() || p.size() != 1) rd.fail("each scene pair must be [class_id]");
                const ClassId c = class_of(p[0]);
                if (!seen.insert(c).second) rd.fail("repeated class_id " + std::to_string(c) + " in scene");
                s.class_ids.push_back(c);
            }
            if (!scene_keys.insert(s.image_id).second)
                throw DataError("line " + std::to_string(line_no) + ": duplicate scene " + s.image_id);
            d.order.push_back({RecordKind::scene, d.scenes.size()});
            d.scenes.push_back(std::move(s));
        } else if (type == "manifest") {
            rd.fail("second manifest record");
        } else {
            rd.fail("unknown record type \"" + type + "\"");
        }
    }
    if (!have_manifest) throw ParseError(line_no, "missing manifest");

    // Scenes may precede the records they reference, so dangling references
    // are only detectable once the whole stream is read.
    const auto violations = validate_dataset(d);
    if (!violations.empty()) throw DataError("dangling or invalid reference: " + violations.front());
    return d;
}

inline Dataset parse_dataset(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse_dataset(in);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset " + path);
    return parse_dataset(in);
}

inline void write_text_file(const std::string& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void save_dataset(const Dataset& d, const std::string& path) { write_text_file(path, serialize_dataset(d)); }

// ---------------------------------------------------------------------------
// Views

/// Scenes with exactly n objects, in file order.
inline std::vector<Scene> bucket_scenes(const Dataset& d, std::size_t n) {
    if (n < 1) throw ConfigError("bucket_scenes: n must be >= 1");
    std::vector<Scene> out;
    for (const auto& s : d.scenes)
        if (s.object_count() == n) out.push_back(s);
    return out;
}

struct TrainingPair {
    const RegionEmbedding* region;
    const WordEmbedding* word;
    ClassId class_id;
};

/// Pairs from one-object scenes whose class is not in `unseen`.
inline std::vector<TrainingPair> training_pairs(const Dataset& d, const std::set<ClassId>& unseen) {
    const DatasetIndex index(d);
    std::vector<TrainingPair> out;
    for (const auto& s : d.scenes) {
        if (s.object_count() != 1) continue;
        const ClassId c = s.class_ids.front();
        if (unseen.contains(c)) continue;
        const auto r = resolve_scene(s, index);
        out.push_back({&d.regions[r.regions[0]], &d.words[r.words[0]], c});
    }
    return out;
}

/// Dense copy of training pairs: row k of `visual` pairs with row k of `words`.
struct TrainingSet {
    Matrix visual;
    Matrix words;
    std::vector<ClassId> classes;

    std::size_t size() const noexcept { return classes.size(); }
};

inline TrainingSet to_training_set(const std::vector<TrainingPair>& pairs) {
    TrainingSet t;
    if (pairs.empty()) return t;
    const std::size_t vd = pairs.front().region->vector.size();
    const std::size_t wd = pairs.front().word->vector.size();
    t.visual = Matrix(pairs.size(), vd);
    t.words = Matrix(pairs.size(), wd);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        std::copy(pairs[i].region->vector.begin(), pairs[i].region->vector.end(), t.visual.row(i).begin());
        std::copy(pairs[i].word->vector.begin(), pairs[i].word->vector.end(), t.words.row(i).begin());
        t.classes.push_back(pairs[i].class_id);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Word substitution

using ClassWordTable = std::map<ClassId, std::vector<double>>;

/// Reads per-class word vectors: one {"type":"class_word","class_id":..,
/// "source":..,"vector":[..]} object per line.
inline ClassWordTable parse_class_words(std::istream& in, std::size_t word_dim) {
    using nlohmann::json;
    ClassWordTable t;
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        detail::LineReader rd{line_no};
        if (text.empty()) rd.fail("empty line");
        json j;
        try {
            j = json_text::parse_strict(text);
        } catch (const json::exception& e) {
            rd.fail(std::string("malformed JSON: ") + e.what());
        } catch (const DataError& e) {
            rd.fail(e.what());
        }
        if (!j.is_object()) rd.fail("record must be a JSON object");
        rd.expect_keys(j, {"type", "class_id", "source", "vector"});
        if (j["type"] != "class_word") rd.fail("expected a class_word record");
        const auto c = static_cast<ClassId>(rd.uint(j, "class_id"));
        if (!parse_word_source(rd.str(j, "source"))) rd.fail("unknown word source");
        if (!t.emplace(c, rd.vec(j, word_dim, "word_dim")).second)
            throw DataError("line " + std::to_string(line_no) + ": duplicate class_id " + std::to_string(c));
    }
    return t;
}

inline std::string serialize_class_words(const ClassWordTable& t, WordSource source) {
    std::string out;
    for (const auto& [c, v] : t) {
        out += R"({"type":"class_word","class_id":)";
        out += std::to_string(c);
        out += R"(,"source":")";
        out += to_string(source);
        out += R"(","vector":)";
        json_text::append_array(out, v);
        out += "}\n";
    }
    return out;
}

/// Copy of `d` whose scene pairs resolve to the per-class vectors in `table`,
/// re-tagged with `source`.
inline Dataset substitute_words(const Dataset& d, const ClassWordTable& table, WordSource source) {
    Dataset out = d;
    const DatasetIndex index(d);
    for (const auto& s : d.scenes) {
        for (ClassId c : s.class_ids) {
            auto it = table.find(c);
            if (it == table.end())
                throw DataError("substitution table has no vector for class " + std::to_string(c) + " (" +
                                d.manifest.class_vocab.at(c) + ")");
            if (it->second.size() != d.manifest.word_dim)
                throw DimensionError("substitution vector for class " + std::to_string(c) + " has wrong length");
            const auto wi = index.word(s.image_id, c);
            if (!wi) throw DataError("scene " + s.image_id + ": missing word for class " + std::to_string(c));
            out.words[*wi].vector = it->second;
            out.words[*wi].source = source;
        }
    }
    return out;
}

}  // namespace vsep
