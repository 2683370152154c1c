#pragma once

// Synthetic two-view data with class-conditional pseudolabel noise, and
// Monte-Carlo checks of the balanced-error identities that hold under it.
//
// Sampling order per example: Y ~ Bernoulli(class_prior); the feature view is
// N(+-(sep/2) e1, I); the pseudolabel view abstains independently with
// abstain_rate, otherwise flips Y with a per-class rate. The flip rates are
// derived from the target posterior noise
//   alpha = P(Y = 0 | Yhat = 1),  gamma = P(Y = 1 | Yhat = 0).
// In the independence regime the flip ignores the features. In the boundary
// regime the flip probability is min(peak, c_y exp(-|x_1| / width)) with c_y
// solved so the per-class rate is met exactly in expectation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsselect/data_model.hpp"
#include "wsselect/end_model.hpp"
#include "wsselect/error.hpp"
#include "wsselect/format.hpp"

namespace wss {

struct TwoViewConfig {
    std::size_t n = 10000;
    double alpha = 0.1;
    double gamma = 0.15;
    double abstain_rate = 0.0;
    double class_prior = 0.5;  // P(Y = 1)
    std::size_t view1_dim = 4;
    double cluster_sep = 2.0;
    bool boundary_noise = false;
    double boundary_width = 0.5;  // decay length of the boundary flip profile
    double boundary_peak = 1.0;   // cap on the boundary flip probability
};

struct TwoViewSample {
    EmbeddingMatrix features;
    std::vector<int> pseudo;  // kAbstain where the pseudolabeler abstains
    std::vector<int> gold;
};

// Per-class flip probabilities and P(Yhat = 1 | covered).
struct FlipRates {
    double from_negative = 0.0;  // P(Yhat = 1 | Y = 0, covered)
    double from_positive = 0.0;  // P(Yhat = 0 | Y = 1, covered)
    double positive_rate = 0.5;  // P(Yhat = 1 | covered)
};

inline FlipRates flip_rates(const TwoViewConfig& cfg) {
    const double p = cfg.class_prior, a = cfg.alpha, g = cfg.gamma;
    FlipRates r;
    r.positive_rate = (p - g) / (1.0 - a - g);
    r.from_negative = a * r.positive_rate / (1.0 - p);
    r.from_positive = g * (1.0 - r.positive_rate) / p;
    return r;
}

inline void validate(const TwoViewConfig& cfg) {
    auto in_unit = [](double v) { return v >= 0.0 && v < 1.0; };
    if (!in_unit(cfg.alpha) || !in_unit(cfg.gamma)) throw DomainError("alpha and gamma must lie in [0, 1)");
    if (!(cfg.alpha + cfg.gamma < 1.0))
        throw DomainError("alpha + gamma must be < 1, got " + format_double(cfg.alpha + cfg.gamma));
    if (!in_unit(cfg.abstain_rate)) throw DomainError("abstain_rate must lie in [0, 1)");
    if (!(cfg.class_prior > 0.0 && cfg.class_prior < 1.0)) throw DomainError("class_prior must lie in (0, 1)");
    if (cfg.n == 0 || cfg.view1_dim == 0) throw ParameterError("n and view1_dim must be positive");
    if (!(cfg.cluster_sep >= 0.0) || !std::isfinite(cfg.cluster_sep))
        throw ParameterError("cluster_sep must be finite and non-negative");
    const auto r = flip_rates(cfg);
    if (!(r.positive_rate > 0.0 && r.positive_rate < 1.0) || r.from_negative > 1.0 || r.from_positive > 1.0)
        throw DomainError("no flip rates realize alpha = " + format_double(cfg.alpha) + ", gamma = " +
                          format_double(cfg.gamma) + " at class prior " + format_double(cfg.class_prior));
    if (cfg.boundary_noise) {
        if (!(cfg.boundary_width > 0.0)) throw ParameterError("boundary_width must be positive");
        if (!(cfg.boundary_peak > 0.0 && cfg.boundary_peak <= 1.0))
            throw ParameterError("boundary_peak must lie in (0, 1]");
        if (std::max(r.from_negative, r.from_positive) >= cfg.boundary_peak)
            throw DomainError("boundary noise cannot reach a per-class flip rate of " +
                              format_double(std::max(r.from_negative, r.from_positive)) + " under peak " +
                              format_double(cfg.boundary_peak));
    }
}

namespace detail {

// log P(Z > z) for standard normal Z.
inline double log_normal_tail(double z) {
    if (z < 25.0) return std::log(0.5 * std::erfc(z / std::sqrt(2.0)));
    const double z2 = z * z;
    return -0.5 * z2 - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// E[exp(-x / w); x >= r] for x ~ N(m, 1), r >= 0.
inline double exp_tail_moment(double m, double w, double r) {
    return std::exp(-m / w + 0.5 / (w * w) + log_normal_tail(r - m + 1.0 / w));
}

}  // namespace detail

// E[min(peak, c exp(-|x| / w))] for x ~ N(m, 1).
inline double boundary_flip_rate(double m, double c, double w, double peak) {
    const double r = c > peak ? w * std::log(c / peak) : 0.0;
    const double inside = c > peak ? peak * (detail::normal_cdf(r - m) - detail::normal_cdf(-r - m)) : 0.0;
    // |x| >= r on both sides; the left side mirrors to N(-m, 1).
    return inside + c * (detail::exp_tail_moment(m, w, r) + detail::exp_tail_moment(-m, w, r));
}

// Solves boundary_flip_rate(m, c, w, peak) = rate for c by bisection in log c.
inline double solve_boundary_scale(double m, double w, double peak, double rate) {
    if (rate <= 0.0) return 0.0;
    double lo = -60.0, hi = 1.0;
    while (boundary_flip_rate(m, std::exp(hi), w, peak) < rate) {
        hi *= 2.0;
        if (hi > 1e6) throw DomainError("boundary flip rate " + format_double(rate) + " is unreachable");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (boundary_flip_rate(m, std::exp(mid), w, peak) < rate ? lo : hi) = mid;
    }
    return std::exp(0.5 * (lo + hi));
}

// splitmix64 finalizer, used to derive independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline TwoViewSample generate(const TwoViewConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    const auto rates = flip_rates(cfg);
    const double half = 0.5 * cfg.cluster_sep;
    double scale[2] = {0.0, 0.0};
    if (cfg.boundary_noise) {
        scale[0] = solve_boundary_scale(-half, cfg.boundary_width, cfg.boundary_peak, rates.from_negative);
        scale[1] = solve_boundary_scale(half, cfg.boundary_width, cfg.boundary_peak, rates.from_positive);
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t d = cfg.view1_dim;
    TwoViewSample s;
    s.features.values = Matrix<float>(cfg.n, d);
    s.pseudo.resize(cfg.n);
    s.gold.resize(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        const int y = unif(rng) < cfg.class_prior ? 1 : 0;
        s.gold[i] = y;
        auto row = s.features.values.row(i);
        for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<float>(gauss(rng));
        row[0] = static_cast<float>(static_cast<double>(row[0]) + (y == 1 ? half : -half));
        const bool abstain = unif(rng) < cfg.abstain_rate;
        double flip = y == 1 ? rates.from_positive : rates.from_negative;
        if (cfg.boundary_noise)
            flip = std::min(cfg.boundary_peak, scale[y] * std::exp(-std::abs(static_cast<double>(row[0])) /
                                                                     cfg.boundary_width));
        const bool flipped = unif(rng) < flip;
        s.pseudo[i] = abstain ? kAbstain : (flipped ? 1 - y : y);
    }
    return s;
}

struct NoiseParams {
    double alpha_hat = 0.0;
    double gamma_hat = 0.0;
};

// Empirical P(Y = 0 | Yhat = 1) and P(Y = 1 | Yhat = 0) over covered examples.
inline NoiseParams noise_params(std::span<const int> pseudo, std::span<const int> gold) {
    if (pseudo.size() != gold.size()) throw DimensionError("pseudolabels and gold differ in length");
    std::size_t pos = 0, neg = 0, pos_wrong = 0, neg_wrong = 0;
    for (std::size_t i = 0; i < pseudo.size(); ++i) {
        if (pseudo[i] == 1) {
            ++pos;
            pos_wrong += gold[i] == 0;
        } else if (pseudo[i] == 0) {
            ++neg;
            neg_wrong += gold[i] == 1;
        }
    }
    if (pos == 0 || neg == 0)
        throw DomainError("noise parameters are undefined: pseudolabel class " + std::string(pos == 0 ? "1" : "0") +
                          " never occurs");
    return {static_cast<double>(pos_wrong) / static_cast<double>(pos),
            static_cast<double>(neg_wrong) / static_cast<double>(neg)};
}

// Balanced error on true labels implied by the balanced error measured on
// pseudolabels: (err - (alpha + gamma) / 2) / (1 - alpha - gamma).
inline double lemma_rhs(double err_on_pseudo, double alpha, double gamma) {
    if (!(alpha + gamma < 1.0)) throw DomainError("alpha + gamma must be < 1");
    return (err_on_pseudo - 0.5 * (alpha + gamma)) / (1.0 - alpha - gamma);
}

struct LemmaCheck {
    double measured = 0.0;     // balanced error against gold
    double on_pseudo = 0.0;    // balanced error against pseudolabels
    double predicted = 0.0;    // lemma_rhs(on_pseudo, alpha_hat, gamma_hat)
    double gap = 0.0;          // |measured - predicted|
    NoiseParams noise;
};

// Fixed linear classifier with Gaussian weights on raw features.
inline LinearModel random_linear_classifier(std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto m = LinearModel::zeros(2, dim);
    for (std::size_t j = 0; j < dim; ++j) m.weights(1, j) = gauss(rng);
    m.bias[1] = 0.25 * gauss(rng);
    return m;
}

// Draws a fresh sample and compares the classifier's balanced error on gold
// with the value predicted from its balanced error on pseudolabels. Both are
// measured over the covered examples.
inline LemmaCheck verify_lemma(const TwoViewConfig& cfg, const LinearModel& classifier, std::uint64_t seed) {
    if (cfg.boundary_noise)
        throw PreconditionError("the balanced-error identity needs noise independent of the features");
    const auto s = generate(cfg, seed);
    const auto pred = predict_all(classifier, s.features);
    std::vector<int> gold_covered(s.gold.size());
    for (std::size_t i = 0; i < s.gold.size(); ++i) gold_covered[i] = s.pseudo[i] == kAbstain ? kAbstain : s.gold[i];

    LemmaCheck c;
    c.noise = noise_params(s.pseudo, s.gold);
    c.measured = score_predictions(pred, gold_covered, 2).balanced_error;
    c.on_pseudo = score_predictions(pred, s.pseudo, 2).balanced_error;
    c.predicted = lemma_rhs(c.on_pseudo, c.noise.alpha_hat, c.noise.gamma_hat);
    c.gap = std::abs(c.measured - c.predicted);
    return c;
}

// ---------------------------------------------------------------------------
// Precision / coverage tradeoff

struct TradeoffPoint {
    double coverage = 1.0;
    double alpha = 0.0;
    double gamma = 0.0;
};

struct TradeoffRow {
    TradeoffPoint point;
    double mean_test_bal_err = 0.0;
    double std_test_bal_err = 0.0;
    double noise_factor = 0.0;   // 1 / (1 - alpha - gamma)
    double sample_factor = 0.0;  // 1 / sqrt(n P(Yhat != abstain) min_y P(Yhat = y | covered))
    double bound_driver = 0.0;   // noise_factor * sample_factor
    std::vector<double> per_seed;
};

struct TradeoffOptions {
    std::size_t seeds = 10;
    std::size_t test_n = 20000;
    TrainConfig train;
};

// For every (coverage, alpha, gamma): trains the end model on the covered
// pseudolabeled sample and reports the balanced error on clean test data,
// averaged over seeds.
inline std::vector<TradeoffRow> tradeoff_curve(const TwoViewConfig& base, std::span<const TradeoffPoint> points,
                                               std::uint64_t seed, const TradeoffOptions& opts = {}) {
    if (opts.seeds == 0) throw ParameterError("tradeoff curve needs at least one seed");
    for (const auto& pt : points) {
        if (!(pt.alpha + pt.gamma < 1.0)) throw DomainError("alpha + gamma must be < 1 for every curve point");
        if (!(pt.coverage > 0.0 && pt.coverage <= 1.0)) throw DomainError("coverage must lie in (0, 1]");
    }
    std::vector<TradeoffRow> rows(points.size());
    for (std::size_t p = 0; p < points.size(); ++p) {
        auto& row = rows[p];
        row.point = points[p];
        TwoViewConfig cfg = base;
        cfg.alpha = points[p].alpha;
        cfg.gamma = points[p].gamma;
        cfg.abstain_rate = 1.0 - points[p].coverage;
        cfg.boundary_noise = false;
        validate(cfg);
        TwoViewConfig clean = base;
        clean.n = opts.test_n;
        clean.alpha = clean.gamma = clean.abstain_rate = 0.0;
        clean.boundary_noise = false;

        row.per_seed.resize(opts.seeds);
        parallel_for(opts.seeds, 1, [&](std::size_t begin, std::size_t end) {
            for (std::size_t s = begin; s < end; ++s) {
                const auto train_sample = generate(cfg, mix_seed(seed, 2 * s));
                const auto test_sample = generate(clean, mix_seed(seed, 2 * s + 1));
                std::vector<std::size_t> covered;
                for (std::size_t i = 0; i < train_sample.pseudo.size(); ++i)
                    if (train_sample.pseudo[i] != kAbstain) covered.push_back(i);
                TrainConfig tc = opts.train;
                tc.seed = mix_seed(seed, 1000003 + s);
                const auto model = train(train_sample.features, covered, train_sample.pseudo, 2, tc);
                row.per_seed[s] = evaluate(model, test_sample.features, test_sample.gold).balanced_error;
            }
        });
        double mean = 0.0;
        for (double v : row.per_seed) mean += v;
        mean /= static_cast<double>(opts.seeds);
        double var = 0.0;
        for (double v : row.per_seed) var += (v - mean) * (v - mean);
        row.mean_test_bal_err = mean;
        row.std_test_bal_err = opts.seeds > 1 ? std::sqrt(var / static_cast<double>(opts.seeds - 1)) : 0.0;
        const double q = flip_rates(cfg).positive_rate;
        row.noise_factor = 1.0 / (1.0 - cfg.alpha - cfg.gamma);
        row.sample_factor = 1.0 / std::sqrt(static_cast<double>(cfg.n) * points[p].coverage * std::min(q, 1.0 - q));
        row.bound_driver = row.noise_factor * row.sample_factor;
    }
    return rows;
}

inline std::string tradeoff_csv(std::span<const TradeoffRow> rows) {
    std::string out = "coverage,alpha,gamma,mean_test_bal_err,std,bound_driver\n";
    for (const auto& r : rows)
        out += format_double(r.point.coverage) + ',' + format_double(r.point.alpha) + ',' +
               format_double(r.point.gamma) + ',' + format_double(r.mean_test_bal_err) + ',' +
               format_double(r.std_test_bal_err) + ',' + format_double(r.bound_driver) + '\n';
    return out;
}

inline nlohmann::json to_json(const TwoViewConfig& c) {
    return {{"abstain_rate", c.abstain_rate},     {"alpha", c.alpha},
            {"boundary_noise", c.boundary_noise}, {"boundary_peak", c.boundary_peak},
            {"boundary_width", c.boundary_width}, {"class_prior", c.class_prior},
            {"cluster_sep", c.cluster_sep},       {"gamma", c.gamma},
            {"n", c.n},                           {"view1_dim", c.view1_dim}};
}

}  // namespace wss
