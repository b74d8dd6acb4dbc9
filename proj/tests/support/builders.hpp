#pragma once

// Hand-built models and random instances shared by unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vsep/embedding_store.hpp"
#include "vsep/ndmath.hpp"
#include "vsep/probe.hpp"
#include "vsep/rng.hpp"

namespace build {

using vsep::Matrix;
using vsep::NormMode;
using vsep::ProbeModel;

/// MLP that computes the identity: W1 = [I; -I], W2 = [I, -I], so
/// relu(x) - relu(-x) = x. Visual and word dims are both `dim`.
inline ProbeModel identity_model(std::size_t dim, NormMode mode, double log_scale = 0.0) {
    ProbeModel m{vsep::ProbeParams::zeros(dim, 2 * dim, dim), mode};
    for (std::size_t i = 0; i < dim; ++i) {
        m.params.w1(i, i) = 1.0;
        m.params.w1(dim + i, i) = -1.0;
        m.params.w2(i, i) = 1.0;
        m.params.w2(i, dim + i) = -1.0;
    }
    m.params.log_scale = log_scale;
    return m;
}

inline Matrix random_matrix(vsep::Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    Matrix m(r, c);
    for (double& x : m.data()) x = scale * rng.normal();
    return m;
}

/// Random model with small dims, parameters ~ N(0, 1/fan_in) and a random
/// log_scale inside the clamp range.
inline ProbeModel random_model(vsep::Rng& rng, std::size_t v, std::size_t h, std::size_t l, NormMode mode) {
    ProbeModel m{vsep::ProbeParams::zeros(v, h, l), mode};
    for (double& x : m.params.w1.data()) x = rng.normal() / std::sqrt(double(v));
    for (double& x : m.params.b1) x = 0.3 * rng.normal();
    for (double& x : m.params.w2.data()) x = rng.normal() / std::sqrt(double(h));
    for (double& x : m.params.b2) x = 0.3 * rng.normal();
    m.params.log_scale = rng.uniform(0.0, 3.0);
    return m;
}

inline NormMode random_mode(vsep::Rng& rng) {
    const NormMode modes[] = {NormMode::none, NormMode::l2_only, NormMode::ln_then_l2};
    return modes[rng.below(3)];
}

inline Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t k = 0; k < rows.size(); ++k)
        for (std::size_t j = 0; j < m.cols(); ++j) out(k, j) = m(rows[k], j);
    return out;
}

}  // namespace build

namespace build {

/// Distinct, non-orthogonal word vectors on a circle with a shared offset.
inline std::vector<double> circle_word(std::size_t c, std::size_t k) {
    const double t = 2.0 * 3.14159265358979323846 * double(c) / double(k);
    return {std::cos(t), std::sin(t), 0.5, -0.25};
}

/// Two-object scenes (seen, unseen) scored by an identity probe. Region
/// vectors copy a word vector, which fixes each region's predicted label:
/// 9 scenes mislabel the unseen region, 1 mislabels the seen one, 5 are
/// labeled correctly. Classes 0-4 are seen, 5-9 unseen.
inline vsep::Dataset me_bias_dataset() {
    using namespace vsep;
    const std::size_t k = 10;
    Dataset d;
    d.manifest.visual_dim = 4;
    d.manifest.word_dim = 4;
    for (std::size_t c = 0; c < k; ++c) d.manifest.class_vocab.push_back("class_" + std::to_string(c));
    d.manifest.source = "me-bias arithmetic fixture";
    auto add_scene = [&](const std::string& img, ClassId seen, ClassId unseen, ClassId seen_looks_like,
                         ClassId unseen_looks_like) {
        d.regions.push_back({img, seen, 0.9, circle_word(seen_looks_like, k)});
        d.regions.push_back({img, unseen, 0.9, circle_word(unseen_looks_like, k)});
        d.words.push_back({img, seen, img + "#0", WordSource::contextual, circle_word(seen, k)});
        d.words.push_back({img, unseen, img + "#0", WordSource::contextual, circle_word(unseen, k)});
        d.scenes.push_back({img, {seen, unseen}});
    };
    for (ClassId i = 0; i < 9; ++i) {
        const ClassId s = i % 5, u = 5 + (i + 1) % 5;
        add_scene("wrong_unseen_" + std::to_string(i), s, u, s, s);
    }
    add_scene("wrong_seen_0", 1, 7, 7, 7);
    for (ClassId i = 0; i < 5; ++i) add_scene("correct_" + std::to_string(i), i, 5 + i, i, 5 + i);
    return d;
}

}  // namespace build
