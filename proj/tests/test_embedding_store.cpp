#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "vsep/embedding_store.hpp"
#include "vsep/eval.hpp"
#include "vsep/probe.hpp"
#include "vsep/synthgen.hpp"

using namespace vsep;

namespace {

const char* kManifest =
    R"({"type":"manifest","visual_dim":2,"word_dim":3,"class_vocab":["cat","dog","car"],"source":"test","normalization_hint":"raw"})";

std::string minimal_text() {
    return std::string(kManifest) + "\n" +
           R"({"type":"region","image_id":"a","class_id":0,"score":0.9,"vector":[1.0,2.0]})" + "\n" +
           R"({"type":"word","image_id":"a","class_id":0,"caption_id":"a#0","source":"contextual","vector":[0.5,-1.0,2.0]})" +
           "\n" + R"({"type":"scene","image_id":"a","pairs":[[0]]})" + "\n";
}

Dataset small_dataset(const std::vector<std::vector<ClassId>>& scenes) {
    Dataset d;
    d.manifest = {2, 3, {"cat", "dog", "car", "bus"}, "test", NormalizationHint::raw};
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const std::string img = "img" + std::to_string(i);
        for (ClassId c : scenes[i]) {
            d.regions.push_back({img, c, 0.5, {double(i), double(c) + 1.0}});
            d.words.push_back({img, c, img + "#0", WordSource::contextual, {double(c), 1.0, double(i)}});
        }
        d.scenes.push_back({img, scenes[i]});
    }
    return d;
}

SynthConfig tiny_synth(std::uint64_t seed = 7) {
    SynthConfig c;
    c.num_classes = 12;
    c.word_dim = 6;
    c.visual_dim = 5;
    c.scenes_per_bucket = {{1, 40}, {2, 20}, {3, 10}, {4, 6}};
    c.seed = seed;
    return c;
}

}  // namespace

TEST(ParseDataset, MinimalStream) {
    const auto d = parse_dataset(minimal_text());
    EXPECT_EQ(d.scenes.size(), 1u);
    EXPECT_EQ(d.regions.size(), 1u);
    EXPECT_EQ(d.words.size(), 1u);
    EXPECT_EQ(d.manifest.class_vocab[1], "dog");
    EXPECT_EQ(d.words[0].vector, (std::vector<double>{0.5, -1.0, 2.0}));
    EXPECT_EQ(d.scenes[0].object_count(), 1u);
}

TEST(ParseDataset, DimensionMismatchNamesLine) {
    auto text = minimal_text();
    text.replace(text.find("[1.0,2.0]"), 9, "[1.0,2.0,3.0]");
    try {
        parse_dataset(text);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("visual_dim"), std::string::npos) << e.what();
    }
}

TEST(ParseDataset, MalformedRecordsReportLine) {
    auto expect_line = [](const std::string& text, std::size_t line) {
        try {
            parse_dataset(text);
            ADD_FAILURE() << "expected ParseError for:\n" << text;
        } catch (const ParseError& e) {
            EXPECT_EQ(e.line(), line) << e.what();
        }
    };
    const std::string m = std::string(kManifest) + "\n";
    expect_line(m + "{not json}\n", 2);
    expect_line(m + R"({"type":"region","image_id":"a","class_id":0,"score":0.9})" "\n", 2);
    expect_line(m + R"({"type":"region","image_id":"a","class_id":0,"score":0.9,"vector":[1,2],"extra":1})" "\n", 2);
    expect_line(m + R"({"type":"region","image_id":"a","class_id":7,"score":0.9,"vector":[1,2]})" "\n", 2);
    expect_line(m + R"({"type":"region","image_id":"a","class_id":0,"score":1.5,"vector":[1,2]})" "\n", 2);
    expect_line(m + R"({"type":"word","image_id":"a","class_id":0,"caption_id":"c","source":"glove","vector":[1,2,3]})" "\n", 2);
    expect_line(m + R"({"type":"scene","image_id":"a","pairs":[[0],[0]]})" "\n", 2);
    expect_line(m + R"({"type":"scene","image_id":"a","pairs":[]})" "\n", 2);
    expect_line(m + R"({"type":"blob"})" "\n", 2);
    expect_line(m + "\n", 2);
    expect_line(m + kManifest + "\n", 2);
    expect_line(R"({"type":"region","image_id":"a","class_id":0,"score":0.9,"vector":[1,2]})" "\n", 1);
    expect_line(m + R"({"type":"region","image_id":"a","class_id":0,"score":0.9,"score":0.8,"vector":[1,2]})" "\n", 2);
}

TEST(ParseDataset, DanglingAndDuplicate) {
    const std::string m = std::string(kManifest) + "\n";
    EXPECT_THROW(parse_dataset(m + R"({"type":"scene","image_id":"a","pairs":[[0]]})" "\n"), DataError);
    const std::string r = R"({"type":"region","image_id":"a","class_id":0,"score":0.9,"vector":[1,2]})" "\n";
    EXPECT_THROW(parse_dataset(m + r + r), DataError);
    EXPECT_THROW(parse_dataset(""), ParseError);
}

TEST(ParseDataset, ScenesMayPrecedeTheirRecords) {
    const auto t = minimal_text();
    std::istringstream in(t);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    const std::string reordered = lines[0] + "\n" + lines[3] + "\n" + lines[1] + "\n" + lines[2] + "\n";
    const auto d = parse_dataset(reordered);
    ASSERT_EQ(d.order.size(), 3u);
    EXPECT_EQ(d.order[0].kind, RecordKind::scene);
    EXPECT_EQ(parse_dataset(serialize_dataset(d)), d);
    EXPECT_EQ(serialize_dataset(d), serialize_dataset(parse_dataset(serialize_dataset(d))));
}

TEST(ParseDataset, GeneratedWorldRoundTripsByteIdentical) {
    SynthConfig cfg;  // defaults, seed 7
    const auto text = serialize_dataset(generate(cfg).dataset);
    const auto d = parse_dataset(text);
    EXPECT_EQ(serialize_dataset(d), text);
    EXPECT_EQ(parse_dataset(serialize_dataset(d)), d);
}

TEST(ParseDataset, ExtremeValuesRoundTrip) {
    auto d = small_dataset({{0, 1}});
    d.regions[0].vector = {5e-324, -1.7976931348623157e308};
    d.words[0].vector = {-0.0, 0.1, 1.0 / 3.0};
    const auto text = serialize_dataset(d);
    const auto back = parse_dataset(text);
    EXPECT_EQ(serialize_dataset(back), text);
    EXPECT_TRUE(std::signbit(back.words[0].vector[0]));
    EXPECT_EQ(back.words[0].vector[2], 1.0 / 3.0);
}

TEST(ParseDataset, RandomWorldsRoundTripProperty) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto cfg = tiny_synth(seed);
        cfg.anisotropy_offset = double(seed);
        const auto text = serialize_dataset(generate(cfg).dataset);
        EXPECT_EQ(serialize_dataset(parse_dataset(text)), text) << "seed " << seed;
    }
}

// ---------------------------------------------------------------------------

TEST(ValidateDataset, GeneratedWorldIsClean) { EXPECT_TRUE(validate_dataset(generate(tiny_synth()).dataset).empty()); }

TEST(ValidateDataset, MissingWord) {
    auto d = small_dataset({{0}, {1, 2}});
    d.words.erase(d.words.begin() + 2);  // (img1, 2)
    const auto v = validate_dataset(d);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_NE(v[0].find("(img1, 2)"), std::string::npos) << v[0];
    EXPECT_NE(v[0].find("missing word"), std::string::npos) << v[0];
}

TEST(ValidateDataset, DuplicateRegion) {
    auto d = small_dataset({{0}});
    d.regions.push_back(d.regions[0]);
    const auto v = validate_dataset(d);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_NE(v[0].find("duplicate region"), std::string::npos) << v[0];
}

TEST(ValidateDataset, OtherViolations) {
    auto d = small_dataset({{0, 1}});
    d.regions[0].score = 2.0;
    d.words[1].vector.push_back(1.0);
    d.manifest.class_vocab.push_back("cat");
    d.scenes.push_back(d.scenes[0]);
    EXPECT_EQ(validate_dataset(d).size(), 4u);
}

// ---------------------------------------------------------------------------

TEST(BucketScenes, Counts) {
    const auto d = small_dataset({{0}, {0, 1}, {2, 3}, {0, 1, 2}});
    EXPECT_EQ(bucket_scenes(d, 2).size(), 2u);
    EXPECT_EQ(bucket_scenes(d, 9).size(), 0u);
    EXPECT_THROW(bucket_scenes(d, 0), ConfigError);
}

TEST(BucketScenes, MatchesGeneratorBookkeepingAndPartitions) {
    SynthConfig cfg;
    const auto d = generate(cfg).dataset;
    EXPECT_EQ(bucket_scenes(d, 2).size(), cfg.scenes_per_bucket.at(2));
    std::size_t total = 0;
    for (std::size_t n = 1; n <= kMaxSceneObjects; ++n) total += bucket_scenes(d, n).size();
    EXPECT_EQ(total, d.scenes.size());
}

// ---------------------------------------------------------------------------

TEST(TrainingPairs, AllSeen) {
    const auto d = small_dataset({{0}, {1}, {2}, {0, 1}});
    const auto p = training_pairs(d, {});
    ASSERT_EQ(p.size(), 3u);
    EXPECT_EQ(p[1].class_id, 1u);
    EXPECT_EQ(p[1].region->image_id, "img1");
    EXPECT_EQ(p[1].word->class_id, 1u);
}

TEST(TrainingPairs, AllUnseenIsAnErrorAtTrainTime) {
    const auto d = small_dataset({{0}, {1}, {2}, {3}});
    const auto p = training_pairs(d, {0, 1, 2, 3});
    EXPECT_TRUE(p.empty());
    TrainConfig cfg;
    cfg.epochs = 1;
    EXPECT_THROW(train(p, cfg), DataError);
}

TEST(TrainingPairs, HeldOutClassesNeverAppear) {
    SynthConfig cfg;
    cfg.unseen_classes = {3, 8, 13, 18, 23, 28, 33, 38};
    const auto d = generate(cfg).dataset;
    const std::set<ClassId> unseen(cfg.unseen_classes.begin(), cfg.unseen_classes.end());
    const auto pairs = training_pairs(d, unseen);
    EXPECT_EQ(pairs.size(), cfg.scenes_per_bucket.at(1));
    for (const auto& p : pairs) {
        EXPECT_FALSE(unseen.contains(p.class_id));
        EXPECT_FALSE(unseen.contains(p.region->class_id));
        EXPECT_FALSE(unseen.contains(p.word->class_id));
    }
}

TEST(TrainingSet, DenseCopy) {
    const auto d = small_dataset({{0}, {2}});
    const auto t = to_training_set(training_pairs(d, {}));
    ASSERT_EQ(t.size(), 2u);
    EXPECT_EQ(t.visual(1, 1), 3.0);
    EXPECT_EQ(t.words(1, 0), 2.0);
    EXPECT_EQ(t.classes, (std::vector<ClassId>{0, 2}));
}

// ---------------------------------------------------------------------------

TEST(SubstituteWords, IdentitySubstitutionKeepsMetrics) {
    // Without context noise every word of a class is the same vector, so the
    // per-class table below reproduces the original words exactly.
    auto cfg = tiny_synth();
    cfg.context_noise = 0.0;
    const auto d = generate(cfg).dataset;
    ClassWordTable table;
    for (const auto& w : d.words) table.try_emplace(w.class_id, w.vector);
    const auto sub = substitute_words(d, table, WordSource::contextual);
    EXPECT_EQ(sub, d);
    const auto model = init_probe(cfg.visual_dim, 8, cfg.word_dim, NormMode::ln_then_l2, 3);
    for (std::size_t n = 2; n <= 4; ++n) {
        const auto scenes = bucket_scenes(d, n);
        EXPECT_EQ(match_accuracy(model, scenes, d).buckets.at(n).correct,
                  match_accuracy(model, scenes, sub).buckets.at(n).correct);
    }
}

TEST(SubstituteWords, PreservesSceneStructure) {
    const auto world = generate(tiny_synth());
    const auto sub = substitute_words(world.dataset, world.templates, WordSource::templated);
    EXPECT_EQ(sub.scenes, world.dataset.scenes);
    EXPECT_EQ(sub.regions, world.dataset.regions);
    ASSERT_EQ(sub.words.size(), world.dataset.words.size());
    for (std::size_t i = 0; i < sub.words.size(); ++i) {
        EXPECT_EQ(sub.words[i].image_id, world.dataset.words[i].image_id);
        EXPECT_EQ(sub.words[i].class_id, world.dataset.words[i].class_id);
        EXPECT_EQ(sub.words[i].source, WordSource::templated);
        EXPECT_EQ(sub.words[i].vector, world.templates.at(sub.words[i].class_id));
    }
    EXPECT_TRUE(validate_dataset(sub).empty());
}

TEST(SubstituteWords, MissingClassIsAnError) {
    auto world = generate(tiny_synth());
    world.templates.erase(world.templates.begin());
    EXPECT_THROW(substitute_words(world.dataset, world.templates, WordSource::templated), DataError);
}

TEST(ClassWords, RoundTrip) {
    const auto world = generate(tiny_synth());
    const auto text = serialize_class_words(world.templates, WordSource::templated);
    std::istringstream in(text);
    EXPECT_EQ(parse_class_words(in, 6), world.templates);
    std::istringstream wrong_dim(text);
    EXPECT_THROW(parse_class_words(wrong_dim, 5), DimensionError);
    std::istringstream dup(text + text.substr(0, text.find('\n') + 1));
    EXPECT_THROW(parse_class_words(dup, 6), DataError);
}

TEST(DatasetFile, SaveLoad) {
    const auto d = generate(tiny_synth()).dataset;
    const std::string path = ::testing::TempDir() + "/vsep_store_roundtrip.jsonl";
    save_dataset(d, path);
    EXPECT_EQ(serialize_dataset(load_dataset(path)), serialize_dataset(d));
    EXPECT_THROW(load_dataset(path + ".missing"), DataError);
}
