#pragma once

// Label models: collapse the labeling-function matrix into one pseudolabel
// per example.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsselect/data_model.hpp"
#include "wsselect/error.hpp"
#include "wsselect/parallel.hpp"

namespace wss {

// Most common non-abstaining vote per row; ties go to the lowest class index.
// Soft labels are the vote shares (uniform on rows where every function
// abstains).
inline PseudoLabeling majority_vote(const LabelMatrix& labels) {
    validate(labels);
    const std::size_t n = labels.n();
    const int C = labels.num_classes;
    PseudoLabeling out;
    out.num_classes = C;
    out.hard.assign(n, kAbstain);
    Matrix<double> soft(n, C, 1.0 / C);
    std::vector<int> counts(C);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(counts.begin(), counts.end(), 0);
        int total = 0;
        for (std::size_t k = 0; k < labels.m(); ++k) {
            const int v = labels(i, k);
            if (v == kAbstain) continue;
            ++counts[v];
            ++total;
        }
        if (total == 0) continue;
        int best = 0;
        for (int y = 1; y < C; ++y)
            if (counts[y] > counts[best]) best = y;
        out.hard[i] = best;
        for (int y = 0; y < C; ++y) soft(i, y) = static_cast<double>(counts[y]) / total;
    }
    out.soft = std::move(soft);
    return out;
}

// Empirical P(Yhat = y) over covered examples.
inline std::vector<double> class_marginals(const PseudoLabeling& p) {
    std::vector<double> freq(p.num_classes, 0.0);
    std::size_t covered = 0;
    for (int h : p.hard) {
        if (h == kAbstain) continue;
        freq[h] += 1.0;
        ++covered;
    }
    if (covered == 0) throw PreconditionError("class marginals need at least one covered example");
    for (double& f : freq) f /= static_cast<double>(covered);
    return freq;
}

// ---------------------------------------------------------------------------
// Dawid-Skene

// Class prior plus one confusion matrix per labeling function. Abstention is
// an explicit emission: confusion(k, y, kAbstain) is P(LF k abstains | Y = y).
struct DawidSkeneModel {
    int num_classes = 2;
    std::size_t num_lfs = 0;
    std::vector<double> class_prior;
    std::vector<double> confusion;  // [k][y][c], c in 0..C with C = abstain

    // EM diagnostics: per-iteration value of the maximized objective (mean
    // log-likelihood plus the smoothing prior's log-density over n), and the
    // plain mean log-likelihood.
    std::vector<double> objective_trace;
    std::vector<double> log_likelihood_trace;
    int iterations = 0;
    bool converged = false;

    std::size_t emissions() const noexcept { return static_cast<std::size_t>(num_classes) + 1; }
    std::size_t index(std::size_t k, int y, int c) const {
        const std::size_t col = c == kAbstain ? static_cast<std::size_t>(num_classes) : static_cast<std::size_t>(c);
        return (k * num_classes + static_cast<std::size_t>(y)) * emissions() + col;
    }
    double& operator()(std::size_t k, int y, int c) { return confusion[index(k, y, c)]; }
    double operator()(std::size_t k, int y, int c) const { return confusion[index(k, y, c)]; }
};

struct DawidSkeneOptions {
    int max_iters = 100;
    double tol = 1e-6;
    double smoothing = 1.0;  // Laplace pseudo-count on every confusion cell
    std::uint64_t seed = 0;
};

namespace detail {

// log sum_y exp(v[y]), tolerating -inf entries.
inline double log_sum_exp(std::span<const double> v) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double x : v) hi = std::max(hi, x);
    if (!std::isfinite(hi)) return hi;
    double s = 0.0;
    for (double x : v) s += std::exp(x - hi);
    return hi + std::log(s);
}

inline double safe_log(double x) { return x > 0.0 ? std::log(x) : -std::numeric_limits<double>::infinity(); }

// E-step: posteriors into `post`, returns per-example log-likelihoods.
inline std::vector<double> ds_e_step(const DawidSkeneModel& model, const LabelMatrix& labels, Matrix<double>& post) {
    const std::size_t n = labels.n();
    const int C = model.num_classes;
    std::vector<double> ll(n);
    std::vector<double> log_prior(C);
    for (int y = 0; y < C; ++y) log_prior[y] = safe_log(model.class_prior[y]);
    std::vector<double> log_conf(model.confusion.size());
    for (std::size_t j = 0; j < log_conf.size(); ++j) log_conf[j] = safe_log(model.confusion[j]);

    parallel_for(n, 1024, [&](std::size_t begin, std::size_t end) {
        std::vector<double> joint(C);
        for (std::size_t i = begin; i < end; ++i) {
            for (int y = 0; y < C; ++y) {
                double v = log_prior[y];
                for (std::size_t k = 0; k < labels.m(); ++k) v += log_conf[model.index(k, y, labels(i, k))];
                joint[y] = v;
            }
            const double z = log_sum_exp(joint);
            ll[i] = z;
            for (int y = 0; y < C; ++y) post(i, y) = std::exp(joint[y] - z);
        }
    });
    return ll;
}

// M-step with additive smoothing. Sums run in example order.
inline void ds_m_step(const Matrix<double>& post, const LabelMatrix& labels, double smoothing,
                      DawidSkeneModel& model) {
    const std::size_t n = labels.n();
    const int C = model.num_classes;
    const std::size_t E = model.emissions();
    std::vector<double> mass(C, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (int y = 0; y < C; ++y) mass[y] += post(i, y);
    for (int y = 0; y < C; ++y) model.class_prior[y] = mass[y] / static_cast<double>(n);

    std::fill(model.confusion.begin(), model.confusion.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < labels.m(); ++k) {
            const int c = labels(i, k);
            for (int y = 0; y < C; ++y) model(k, y, c) += post(i, y);
        }
    for (std::size_t k = 0; k < labels.m(); ++k)
        for (int y = 0; y < C; ++y) {
            double row = 0.0;
            for (std::size_t c = 0; c < E; ++c) row += model.confusion[model.index(k, y, 0) + c];
            const double denom = row + smoothing * static_cast<double>(E);
            for (std::size_t c = 0; c < E; ++c) {
                double& cell = model.confusion[model.index(k, y, 0) + c];
                cell = denom > 0.0 ? (cell + smoothing) / denom : 1.0 / static_cast<double>(E);
            }
        }
}

inline double ds_log_smoothing_prior(const DawidSkeneModel& model, double smoothing) {
    if (smoothing == 0.0) return 0.0;
    double s = 0.0;
    for (double c : model.confusion) s += smoothing * std::log(c);
    return s;
}

}  // namespace detail

// Fits class prior and confusion matrices by EM, starting from the
// majority-vote soft labels. Stops once the mean log-likelihood changes by
// less than `tol` or after `max_iters` iterations.
inline DawidSkeneModel dawid_skene_fit(const LabelMatrix& labels, const DawidSkeneOptions& opts = {}) {
    validate(labels);
    if (opts.max_iters < 1) throw ParameterError("max_iters must be positive");
    if (!(opts.tol > 0.0)) throw ParameterError("tol must be positive");
    if (opts.smoothing < 0.0) throw ParameterError("smoothing must be non-negative");
    const std::size_t n = labels.n();
    const int C = labels.num_classes;

    std::vector<bool> voted(C, false);
    bool any_vote = false;
    for (int v : labels.values.flat())
        if (v != kAbstain) {
            voted[v] = true;
            any_vote = true;
        }
    if (!any_vote) throw PreconditionError("Dawid-Skene needs at least one non-abstaining label");
    for (int y = 0; y < C; ++y)
        if (!voted[y])
            warn("class " + std::to_string(y) +
                 " never receives a vote; its confusion rows fall back to the smoothed uniform distribution");

    DawidSkeneModel model;
    model.num_classes = C;
    model.num_lfs = labels.m();
    model.class_prior.assign(C, 1.0 / C);
    model.confusion.assign(labels.m() * C * model.emissions(), 0.0);

    Matrix<double> post = *majority_vote(labels).soft;
    double prev = -std::numeric_limits<double>::infinity();
    for (int it = 1; it <= opts.max_iters; ++it) {
        detail::ds_m_step(post, labels, opts.smoothing, model);
        const auto ll = detail::ds_e_step(model, labels, post);
        double mean_ll = 0.0;
        for (double v : ll) mean_ll += v;
        mean_ll /= static_cast<double>(n);
        const double objective = mean_ll + detail::ds_log_smoothing_prior(model, opts.smoothing) / static_cast<double>(n);
        model.objective_trace.push_back(objective);
        model.log_likelihood_trace.push_back(mean_ll);
        model.iterations = it;
        if (std::abs(mean_ll - prev) < opts.tol) {
            model.converged = true;
            break;
        }
        prev = mean_ll;
    }
    return model;
}

// Posterior P(Y | labeling functions) under a fitted model. Rows where every
// function abstains get the class prior and an abstaining hard label.
inline PseudoLabeling dawid_skene_posteriors(const DawidSkeneModel& model, const LabelMatrix& labels) {
    validate(labels);
    if (labels.m() != model.num_lfs || labels.num_classes != model.num_classes)
        throw DimensionError("model has " + std::to_string(model.num_lfs) + " labeling functions and " +
                             std::to_string(model.num_classes) + " classes, label matrix has " +
                             std::to_string(labels.m()) + " and " + std::to_string(labels.num_classes));
    const int C = model.num_classes;
    Matrix<double> post(labels.n(), C);
    detail::ds_e_step(model, labels, post);

    PseudoLabeling out;
    out.num_classes = C;
    out.hard.assign(labels.n(), kAbstain);
    for (std::size_t i = 0; i < labels.n(); ++i) {
        bool any = false;
        for (std::size_t k = 0; k < labels.m(); ++k) any = any || labels(i, k) != kAbstain;
        if (!any) {
            for (int y = 0; y < C; ++y) post(i, y) = model.class_prior[y];
            continue;
        }
        int best = 0;
        for (int y = 1; y < C; ++y)
            if (post(i, y) > post(i, best)) best = y;
        out.hard[i] = best;
    }
    out.soft = std::move(post);
    return out;
}

// Deterministic dump (keys sorted) of prior and confusion tensor.
inline nlohmann::json to_json(const DawidSkeneModel& model) {
    nlohmann::json conf = nlohmann::json::array();
    for (std::size_t k = 0; k < model.num_lfs; ++k) {
        nlohmann::json lf = nlohmann::json::array();
        for (int y = 0; y < model.num_classes; ++y) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t c = 0; c < model.emissions(); ++c) row.push_back(model.confusion[model.index(k, y, 0) + c]);
            lf.push_back(std::move(row));
        }
        conf.push_back(std::move(lf));
    }
    return {{"class_prior", model.class_prior},
            {"confusion", std::move(conf)},
            {"converged", model.converged},
            {"iterations", model.iterations},
            {"num_classes", model.num_classes},
            {"num_labeling_functions", model.num_lfs}};
}

}  // namespace wss
