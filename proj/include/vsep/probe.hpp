#pragma once

// The visual-semantic embedding probe: a two-layer relu MLP from visual
// region vectors into word space, trained with a symmetric contrastive loss
// over scaled cosine logits (or a hinge rank loss baseline) using Adam.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "vsep/embedding_store.hpp"
#include "vsep/error.hpp"
#include "vsep/json_text.hpp"
#include "vsep/log.hpp"
#include "vsep/ndmath.hpp"
#include "vsep/rng.hpp"

namespace vsep {

inline constexpr double kMinLogScale = 0.0;                 // exp = 1
inline const double kMaxLogScale = std::log(100.0);         // exp = 100
inline const double kDefaultLogScale = std::log(1.0 / 0.07);
inline constexpr int kModelFileVersion = 1;

enum class LossKind { symmetric_ce, hinge };

inline std::string_view to_string(LossKind k) noexcept { return k == LossKind::hinge ? "hinge" : "symmetric_ce"; }

inline std::optional<LossKind> parse_loss_kind(std::string_view s) noexcept {
    if (s == "symmetric_ce") return LossKind::symmetric_ce;
    if (s == "hinge") return LossKind::hinge;
    return std::nullopt;
}

/// Trainable parameters. Gradients use the same layout.
struct ProbeParams {
    Matrix w1;               // hidden x visual_dim
    std::vector<double> b1;  // hidden
    Matrix w2;               // word_dim x hidden
    std::vector<double> b2;  // word_dim
    double log_scale = 0.0;

    static ProbeParams zeros(std::size_t visual_dim, std::size_t hidden, std::size_t word_dim) {
        return {Matrix(hidden, visual_dim), std::vector<double>(hidden, 0.0), Matrix(word_dim, hidden),
                std::vector<double>(word_dim, 0.0), 0.0};
    }

    std::array<std::span<double>, 5> blocks() {
        return {w1.data(), std::span<double>(b1), w2.data(), std::span<double>(b2), std::span<double>(&log_scale, 1)};
    }
    std::array<std::span<const double>, 5> blocks() const {
        return {w1.data(), std::span<const double>(b1), w2.data(), std::span<const double>(b2),
                std::span<const double>(&log_scale, 1)};
    }

    friend bool operator==(const ProbeParams&, const ProbeParams&) = default;
};

struct ProbeModel {
    ProbeParams params;
    NormMode norm_mode = NormMode::ln_then_l2;

    std::size_t visual_dim() const noexcept { return params.w1.cols(); }
    std::size_t hidden() const noexcept { return params.w1.rows(); }
    std::size_t word_dim() const noexcept { return params.w2.rows(); }
    double logit_scale() const noexcept { return std::exp(params.log_scale); }

    friend bool operator==(const ProbeModel&, const ProbeModel&) = default;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 200;
    std::size_t batch_size = 512;
    std::size_t hidden = 512;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::symmetric_ce;
    double margin = 0.1;
    NormMode norm_mode = NormMode::ln_then_l2;
    double log_scale_init = kDefaultLogScale;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
        if (hidden < 1) throw ConfigError("hidden must be >= 1");
        if (!(margin >= 0.0)) throw ConfigError("margin must be >= 0");
        if (!std::isfinite(log_scale_init)) throw ConfigError("log_scale_init must be finite");
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},
            {"batch_size", c.batch_size},       {"hidden", c.hidden},
            {"seed", c.seed},                   {"loss", std::string(to_string(c.loss))},
            {"margin", c.margin},               {"norm_mode", std::string(to_string(c.norm_mode))},
            {"log_scale_init", c.log_scale_init}};
}

inline void merge_json(TrainConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "learning_rate") c.learning_rate = v.get<double>();
            else if (k == "epochs") c.epochs = v.get<int>();
            else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
            else if (k == "hidden") c.hidden = v.get<std::size_t>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "margin") c.margin = v.get<double>();
            else if (k == "log_scale_init") c.log_scale_init = v.get<double>();
            else if (k == "loss") {
                const auto l = parse_loss_kind(v.get<std::string>());
                if (!l) throw ConfigError("unknown loss " + v.dump());
                c.loss = *l;
            } else if (k == "norm_mode") {
                const auto m = parse_norm_mode(v.get<std::string>());
                if (!m) throw ConfigError("unknown norm_mode " + v.dump());
                c.norm_mode = *m;
            } else {
                throw ConfigError("unknown train config key \"" + k + "\"");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad train config value: ") + e.what());
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline ProbeModel init_probe(std::size_t visual_dim, std::size_t hidden, std::size_t word_dim, NormMode mode,
                             std::uint64_t seed, double log_scale = kDefaultLogScale) {
    if (visual_dim < 1 || hidden < 1 || word_dim < 1) throw ConfigError("probe dimensions must be >= 1");
    if (mode == NormMode::ln_then_l2 && word_dim < 2) throw ConfigError("layer norm needs word_dim >= 2");
    ProbeModel m{ProbeParams::zeros(visual_dim, hidden, word_dim), mode};
    Rng rng(derive_seed(seed, 0x1417));
    const double a1 = 1.0 / std::sqrt(static_cast<double>(visual_dim));
    const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (double& x : m.params.w1.data()) x = rng.uniform(-a1, a1);
    for (double& x : m.params.b1) x = rng.uniform(-a1, a1);
    for (double& x : m.params.w2.data()) x = rng.uniform(-a2, a2);
    for (double& x : m.params.b2) x = rng.uniform(-a2, a2);
    m.params.log_scale = std::clamp(log_scale, kMinLogScale, kMaxLogScale);
    return m;
}

// ---------------------------------------------------------------------------
// Forward

namespace detail {

struct MlpTrace {
    std::vector<double> input;
    std::vector<double> pre;  // W1 x + b1
    std::vector<double> act;  // relu(pre)
    std::vector<double> out;  // W2 act + b2
};

inline MlpTrace mlp_forward(const ProbeParams& p, std::span<const double> x) {
    MlpTrace t;
    t.input.assign(x.begin(), x.end());
    const std::size_t h = p.w1.rows();
    t.pre.resize(h);
    t.act.resize(h);
    for (std::size_t k = 0; k < h; ++k) {
        t.pre[k] = dot(p.w1.row(k), x) + p.b1[k];
        t.act[k] = t.pre[k] > 0.0 ? t.pre[k] : 0.0;
    }
    t.out.resize(p.w2.rows());
    for (std::size_t l = 0; l < p.w2.rows(); ++l) t.out[l] = dot(p.w2.row(l), t.act) + p.b2[l];
    return t;
}

// Accumulates parameter gradients for one sample given dL/d(out).
inline void mlp_backward(const ProbeParams& p, const MlpTrace& t, std::span<const double> dout, ProbeParams& g) {
    const std::size_t h = p.w1.rows();
    std::vector<double> dact(h, 0.0);
    for (std::size_t l = 0; l < p.w2.rows(); ++l) {
        const double d = dout[l];
        if (d == 0.0) continue;
        g.b2[l] += d;
        auto gw = g.w2.row(l);
        const auto w = p.w2.row(l);
        for (std::size_t k = 0; k < h; ++k) {
            gw[k] += d * t.act[k];
            dact[k] += d * w[k];
        }
    }
    for (std::size_t k = 0; k < h; ++k) {
        if (!(t.pre[k] > 0.0)) continue;
        const double d = dact[k];
        g.b1[k] += d;
        auto gw = g.w1.row(k);
        for (std::size_t v = 0; v < t.input.size(); ++v) gw[v] += d * t.input[v];
    }
}

inline void check_visual_dim(const ProbeModel& m, std::size_t n) {
    if (n != m.visual_dim())
        throw DimensionError("visual vector has length " + std::to_string(n) + ", model expects " +
                             std::to_string(m.visual_dim()));
}

}  // namespace detail

/// W2 relu(W1 v + b1) + b2, normalized per the model's norm mode.
inline std::vector<double> project(const ProbeModel& m, std::span<const double> v) {
    detail::check_visual_dim(m, v.size());
    return normalize_by_mode(detail::mlp_forward(m.params, v).out, m.norm_mode);
}

inline Matrix project_rows(const ProbeModel& m, const Matrix& visual) {
    Matrix out(visual.rows(), m.word_dim());
    for (std::size_t i = 0; i < visual.rows(); ++i) {
        const auto p = project(m, visual.row(i));
        std::copy(p.begin(), p.end(), out.row(i).begin());
    }
    return out;
}

/// Word-side normalization matching the model's norm mode.
inline std::vector<double> normalize_word(const ProbeModel& m, std::span<const double> w) {
    if (w.size() != m.word_dim())
        throw DimensionError("word vector has length " + std::to_string(w.size()) + ", model expects " +
                             std::to_string(m.word_dim()));
    return normalize_by_mode(w, m.norm_mode);
}

// ---------------------------------------------------------------------------
// Losses

struct StepResult {
    double loss = 0.0;
    ProbeParams grads;
    std::size_t duplicate_word_rows = 0;
};

namespace detail {

inline std::size_t count_duplicate_rows(const Matrix& t) {
    std::unordered_map<std::string, std::size_t> seen;
    std::size_t dups = 0;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        const auto r = t.row(i);
        std::string key(reinterpret_cast<const char*>(r.data()), r.size() * sizeof(double));
        if (seen[key]++ > 0) ++dups;
    }
    return dups;
}

// Per-row forward state for the scoring head: MLP, mode normalization, then
// the unit vector used for cosine scoring.
struct HeadTrace {
    MlpTrace mlp;
    NormTrace norm;
    NormTrace unit;
};

inline HeadTrace head_forward(const ProbeModel& m, std::span<const double> x) {
    HeadTrace h;
    h.mlp = mlp_forward(m.params, x);
    h.norm = normalize_traced(h.mlp.out, m.norm_mode);
    h.unit = normalize_traced(h.norm.out, NormMode::l2_only);
    return h;
}

inline void head_backward(const ProbeModel& m, const HeadTrace& h, std::span<const double> dunit, ProbeParams& g) {
    const auto dnorm = normalize_backward(h.unit, dunit);
    const auto dout = normalize_backward(h.norm, dnorm);
    mlp_backward(m.params, h.mlp, dout, g);
}

inline std::vector<double> word_unit(const ProbeModel& m, std::span<const double> w) {
    return l2_normalize(normalize_word(m, w));
}

}  // namespace detail

/// Symmetric cross-entropy over exp(log_scale) * cos(project(I_i), T_j)
/// against the identity pairing, with exact gradients for every parameter.
inline StepResult contrastive_step(const ProbeModel& m, const Matrix& visual, const Matrix& words) {
    const std::size_t n = visual.rows();
    if (n < 2) throw DimensionError("contrastive_step needs at least 2 pairs");
    if (words.rows() != n) throw DimensionError("visual and word batches differ in length");
    detail::check_visual_dim(m, visual.cols());
    if (words.cols() != m.word_dim()) throw DimensionError("word batch has wrong dimension");

    StepResult r;
    r.grads = ProbeParams::zeros(m.visual_dim(), m.hidden(), m.word_dim());
    r.duplicate_word_rows = detail::count_duplicate_rows(words);
    if (r.duplicate_word_rows > 0)
        log::debug("contrastive batch has " + std::to_string(r.duplicate_word_rows) + " duplicate word rows");

    std::vector<detail::HeadTrace> heads;
    heads.reserve(n);
    for (std::size_t i = 0; i < n; ++i) heads.push_back(detail::head_forward(m, visual.row(i)));
    Matrix word_units(n, m.word_dim());
    for (std::size_t j = 0; j < n; ++j) {
        const auto u = detail::word_unit(m, words.row(j));
        std::copy(u.begin(), u.end(), word_units.row(j).begin());
    }

    const double scale = m.logit_scale();
    Matrix logits(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) logits(i, j) = scale * dot(heads[i].unit.out, word_units.row(j));

    const auto rows = softmax_xent_rows(logits);
    const auto cols = softmax_xent_rows(logits.transposed());
    r.loss = 0.5 * (rows.loss + cols.loss);

    Matrix dlogits(n, n);
    double dlog_scale = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            dlogits(i, j) = 0.5 * (rows.dlogits(i, j) + cols.dlogits(j, i));
            dlog_scale += dlogits(i, j) * logits(i, j);
        }
    r.grads.log_scale = dlog_scale;

    std::vector<double> dunit(m.word_dim());
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(dunit.begin(), dunit.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const double d = scale * dlogits(i, j);
            const auto w = word_units.row(j);
            for (std::size_t l = 0; l < dunit.size(); ++l) dunit[l] += d * w[l];
        }
        detail::head_backward(m, heads[i], dunit, r.grads);
    }
    return r;
}

/// Hinge rank loss for one pair: sum over negatives j of
/// max(0, margin - w(y).t + w(j).t), t the unit projection of x.
inline StepResult hinge_step(const ProbeModel& m, std::span<const double> visual, std::span<const double> word,
                             const Matrix& negatives, double margin) {
    if (negatives.rows() == 0) throw DataError("hinge_step needs at least one negative");
    detail::check_visual_dim(m, visual.size());
    if (negatives.cols() != m.word_dim()) throw DimensionError("negative word matrix has wrong dimension");

    StepResult r;
    r.grads = ProbeParams::zeros(m.visual_dim(), m.hidden(), m.word_dim());
    const auto head = detail::head_forward(m, visual);
    const auto& t = head.unit.out;
    const auto wy = detail::word_unit(m, word);
    const double sy = dot(wy, t);

    std::vector<double> dunit(m.word_dim(), 0.0);
    bool active = false;
    for (std::size_t j = 0; j < negatives.rows(); ++j) {
        const auto wj = detail::word_unit(m, negatives.row(j));
        const double term = margin - sy + dot(wj, t);
        if (term > 0.0) {
            active = true;
            r.loss += term;
            for (std::size_t l = 0; l < dunit.size(); ++l) dunit[l] += wj[l] - wy[l];
        }
    }
    if (active) detail::head_backward(m, head, dunit, r.grads);
    return r;
}

/// Mean hinge loss over a batch; negatives of pair i are the batch words
/// whose class differs from class i. Pairs without negatives are skipped.
inline StepResult hinge_batch_step(const ProbeModel& m, const Matrix& visual, const Matrix& words,
                                   std::span<const ClassId> classes, double margin) {
    const std::size_t n = visual.rows();
    if (words.rows() != n || classes.size() != n) throw DimensionError("hinge batch arrays differ in length");
    StepResult r;
    r.grads = ProbeParams::zeros(m.visual_dim(), m.hidden(), m.word_dim());
    std::size_t used = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> neg;
        for (std::size_t j = 0; j < n; ++j)
            if (classes[j] != classes[i]) neg.push_back(j);
        if (neg.empty()) continue;
        Matrix negatives(neg.size(), words.cols());
        for (std::size_t k = 0; k < neg.size(); ++k)
            std::copy(words.row(neg[k]).begin(), words.row(neg[k]).end(), negatives.row(k).begin());
        auto s = hinge_step(m, visual.row(i), words.row(i), negatives, margin);
        r.loss += s.loss;
        auto dst = r.grads.blocks();
        const auto src = std::as_const(s.grads).blocks();
        for (std::size_t b = 0; b < dst.size(); ++b)
            for (std::size_t k = 0; k < dst[b].size(); ++k) dst[b][k] += src[b][k];
        ++used;
    }
    if (used == 0) throw DataError("hinge batch has no pair with a negative of another class");
    const double inv = 1.0 / static_cast<double>(used);
    r.loss *= inv;
    for (auto blk : r.grads.blocks())
        for (double& x : blk) x *= inv;
    return r;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam step over matching parameter/gradient blocks.
template <std::size_t N>
void adam_update(std::array<std::span<double>, N> params, std::array<std::span<const double>, N> grads,
                 AdamState& state, double lr) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != N) throw DimensionError("adam state has a different number of parameter blocks");
    for (std::size_t b = 0; b < N; ++b) {
        if (params[b].size() != grads[b].size() || state.m[b].size() != params[b].size())
            throw DimensionError("adam_update: shape mismatch in block " + std::to_string(b));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(AdamState::beta1, t);
    const double c2 = 1.0 - std::pow(AdamState::beta2, t);
    for (std::size_t b = 0; b < N; ++b) {
        auto& mb = state.m[b];
        auto& vb = state.v[b];
        for (std::size_t k = 0; k < params[b].size(); ++k) {
            const double g = grads[b][k];
            mb[k] = AdamState::beta1 * mb[k] + (1.0 - AdamState::beta1) * g;
            vb[k] = AdamState::beta2 * vb[k] + (1.0 - AdamState::beta2) * g * g;
            const double mhat = mb[k] / c1;
            const double vhat = vb[k] / c2;
            params[b][k] -= lr * mhat / (std::sqrt(vhat) + AdamState::eps);
        }
    }
}

/// Adam over all probe parameters, then clamps exp(log_scale) into [1, 100].
inline void adam_update(ProbeModel& model, const ProbeParams& grads, AdamState& state, double lr) {
    adam_update<5>(model.params.blocks(), grads.blocks(), state, lr);
    model.params.log_scale = std::clamp(model.params.log_scale, kMinLogScale, kMaxLogScale);
}

// ---------------------------------------------------------------------------
// Training

struct TrainingLog {
    std::vector<double> epoch_loss;
    double final_logit_scale = 0.0;
    double wall_clock_seconds = 0.0;
    TrainConfig config;
    std::size_t training_pairs = 0;
    std::size_t duplicate_word_rows = 0;
};

struct TrainResult {
    ProbeModel model;
    TrainingLog log;
};

/// Mini-batch training with one seed-derived shuffle per epoch. A trailing
/// batch with fewer than 2 pairs is dropped.
inline TrainResult train(const TrainingSet& data, const TrainConfig& config) {
    config.validate();
    if (data.size() == 0) throw DataError("training split is empty");
    if (data.size() < 2) throw DataError("training needs at least 2 pairs");
    const auto start = std::chrono::steady_clock::now();

    TrainResult r{init_probe(data.visual.cols(), config.hidden, data.words.cols(), config.norm_mode, config.seed,
                             config.log_scale_init),
                  {}};
    r.log.config = config;
    r.log.training_pairs = data.size();
    AdamState adam;

    std::vector<std::size_t> perm(data.size());
    Matrix bv, bw;
    std::vector<ClassId> bc;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        Rng rng(derive_seed(config.seed, 0xe70c0000ULL + static_cast<std::uint64_t>(epoch)));
        rng.shuffle(std::span<std::size_t>(perm));

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start_row = 0; start_row < perm.size(); start_row += config.batch_size) {
            const std::size_t n = std::min(config.batch_size, perm.size() - start_row);
            if (n < 2) break;
            bv = Matrix(n, data.visual.cols());
            bw = Matrix(n, data.words.cols());
            bc.assign(n, 0);
            for (std::size_t k = 0; k < n; ++k) {
                const std::size_t src = perm[start_row + k];
                std::copy(data.visual.row(src).begin(), data.visual.row(src).end(), bv.row(k).begin());
                std::copy(data.words.row(src).begin(), data.words.row(src).end(), bw.row(k).begin());
                bc[k] = data.classes[src];
            }
            StepResult step = config.loss == LossKind::symmetric_ce
                                  ? contrastive_step(r.model, bv, bw)
                                  : hinge_batch_step(r.model, bv, bw, bc, config.margin);
            if (!std::isfinite(step.loss))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches));
            r.log.duplicate_word_rows += step.duplicate_word_rows;
            adam_update(r.model, step.grads, adam, config.learning_rate);
            loss_sum += step.loss;
            ++batches;
        }
        r.log.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
        log::debug("epoch " + std::to_string(epoch + 1) + " loss " + std::to_string(r.log.epoch_loss.back()));
    }
    r.log.final_logit_scale = r.model.logit_scale();
    r.log.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

inline TrainResult train(const std::vector<TrainingPair>& pairs, const TrainConfig& config) {
    if (pairs.empty()) throw DataError("training split is empty");
    return train(to_training_set(pairs), config);
}

// ---------------------------------------------------------------------------
// Model file

/// Single JSON document with row-major parameter arrays at 17 significant
/// digits. `provenance`, when given, is stored verbatim under that key.
inline std::string serialize_model(const ProbeModel& m, const nlohmann::json* provenance = nullptr) {
    std::string out = "{\"version\":" + std::to_string(kModelFileVersion);
    out += ",\"visual_dim\":" + std::to_string(m.visual_dim());
    out += ",\"word_dim\":" + std::to_string(m.word_dim());
    out += ",\"hidden\":" + std::to_string(m.hidden());
    out += ",\"norm_mode\":\"" + std::string(to_string(m.norm_mode)) + "\"";
    out += ",\"log_scale\":";
    json_text::append_double17(out, m.params.log_scale);
    out += ",\"W1\":";
    json_text::append_array(out, m.params.w1.data(), json_text::append_double17);
    out += ",\"b1\":";
    json_text::append_array(out, m.params.b1, json_text::append_double17);
    out += ",\"W2\":";
    json_text::append_array(out, m.params.w2.data(), json_text::append_double17);
    out += ",\"b2\":";
    json_text::append_array(out, m.params.b2, json_text::append_double17);
    if (provenance) out += ",\"provenance\":" + provenance->dump();
    out += "}\n";
    return out;
}

inline ProbeModel parse_model(std::string_view text) {
    using nlohmann::json;
    json j;
    try {
        j = json_text::parse_strict(text);
    } catch (const json::exception& e) {
        throw CorruptFileError(std::string("corrupt model file: ") + e.what());
    } catch (const DataError& e) {
        throw CorruptFileError(std::string("corrupt model file: ") + e.what());
    }
    try {
        if (!j.is_object() || !j.contains("version")) throw CorruptFileError("corrupt model file: no version");
        if (j["version"] != kModelFileVersion)
            throw DataError("model file version mismatch: got " + j["version"].dump() + ", expected " +
                            std::to_string(kModelFileVersion));
        const auto vd = j.at("visual_dim").get<std::size_t>();
        const auto wd = j.at("word_dim").get<std::size_t>();
        const auto hd = j.at("hidden").get<std::size_t>();
        const auto mode = parse_norm_mode(j.at("norm_mode").get<std::string>());
        if (!mode) throw CorruptFileError("corrupt model file: unknown norm_mode");
        ProbeModel m{ProbeParams::zeros(vd, hd, wd), *mode};
        m.params.log_scale = j.at("log_scale").get<double>();
        auto fill = [&](const char* key, std::span<double> dst) {
            const auto& a = j.at(key);
            if (!a.is_array() || a.size() != dst.size())
                throw CorruptFileError(std::string("corrupt model file: ") + key + " has wrong size");
            for (std::size_t i = 0; i < dst.size(); ++i) {
                if (!a[i].is_number()) throw CorruptFileError(std::string("corrupt model file: ") + key);
                dst[i] = a[i].get<double>();
            }
        };
        fill("W1", m.params.w1.data());
        fill("b1", m.params.b1);
        fill("W2", m.params.w2.data());
        fill("b2", m.params.b2);
        for (auto blk : std::as_const(m.params).blocks())
            if (!all_finite(blk)) throw CorruptFileError("corrupt model file: non-finite parameter");
        return m;
    } catch (const json::exception& e) {
        throw CorruptFileError(std::string("corrupt model file: ") + e.what());
    }
}

inline void save_model(const ProbeModel& m, const std::string& path, const nlohmann::json* provenance = nullptr) {
    write_text_file(path, serialize_model(m, provenance));
}

inline ProbeModel load_model(const std::string& path) { return parse_model(read_text_file(path)); }

}  // namespace vsep
