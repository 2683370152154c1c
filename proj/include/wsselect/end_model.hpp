#pragma once

// Multinomial logistic regression trained by mini-batch gradient descent on
// a selected subset, plus the evaluation and beta sweep built on it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsselect/data_model.hpp"
#include "wsselect/error.hpp"
#include "wsselect/format.hpp"
#include "wsselect/matrix.hpp"
#include "wsselect/parallel.hpp"
#include "wsselect/selectors.hpp"

namespace wss {

// Logits are weights * standardize(x) + bias, where standardize(x)_j =
// (x_j - feature_mean_j) / feature_scale_j.
struct LinearModel {
    int num_classes = 2;
    Matrix<double> weights;  // C x d
    std::vector<double> bias;
    std::vector<double> feature_mean;
    std::vector<double> feature_scale;

    std::size_t dim() const noexcept { return weights.cols(); }

    static LinearModel zeros(int num_classes, std::size_t dim) {
        LinearModel m;
        m.num_classes = num_classes;
        m.weights = Matrix<double>(num_classes, dim, 0.0);
        m.bias.assign(num_classes, 0.0);
        m.feature_mean.assign(dim, 0.0);
        m.feature_scale.assign(dim, 1.0);
        return m;
    }

    void logits(std::span<const float> x, std::span<double> out) const {
        for (int c = 0; c < num_classes; ++c) {
            const auto w = weights.row(c);
            double s = bias[c];
            for (std::size_t j = 0; j < w.size(); ++j)
                s += w[j] * ((static_cast<double>(x[j]) - feature_mean[j]) / feature_scale[j]);
            out[c] = s;
        }
    }

    // Argmax of the logits, ties to the lowest class.
    int predict(std::span<const float> x) const {
        double buf[64];
        std::vector<double> heap;
        std::span<double> out(buf, static_cast<std::size_t>(num_classes));
        if (num_classes > 64) {
            heap.resize(num_classes);
            out = heap;
        }
        logits(x, out);
        return static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
    }
};

struct TrainConfig {
    double lr = 1e-2;
    double l2 = 1e-4;
    int epochs = 100;
    std::size_t batch = 128;
    std::uint64_t seed = 0;
    bool standardize = true;
};

// Mean softmax cross-entropy over `rows` of the (already standardized) design
// matrix plus (l2 / 2) * ||W||^2. When grad_w / grad_b are given they receive
// the gradient; the bias is not regularized.
inline double cross_entropy_objective(const Matrix<double>& W, std::span<const double> b, const Matrix<double>& X,
                                      std::span<const int> y, std::span<const std::size_t> rows, double l2,
                                      Matrix<double>* grad_w = nullptr, std::span<double> grad_b = {}) {
    const std::size_t C = W.rows(), d = W.cols();
    std::vector<double> z(C);
    double loss = 0.0;
    if (grad_w) std::fill(grad_w->flat().begin(), grad_w->flat().end(), 0.0);
    std::fill(grad_b.begin(), grad_b.end(), 0.0);
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (std::size_t r : rows) {
        const auto x = X.row(r);
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < C; ++c) {
            const auto w = W.row(c);
            double s = b[c];
            for (std::size_t j = 0; j < d; ++j) s += w[j] * x[j];
            z[c] = s;
            hi = std::max(hi, s);
        }
        double norm = 0.0;
        for (std::size_t c = 0; c < C; ++c) norm += std::exp(z[c] - hi);
        const double log_norm = hi + std::log(norm);
        loss += (log_norm - z[static_cast<std::size_t>(y[r])]) * inv;
        if (!grad_w) continue;
        for (std::size_t c = 0; c < C; ++c) {
            const double g = (std::exp(z[c] - log_norm) - (static_cast<std::size_t>(y[r]) == c ? 1.0 : 0.0)) * inv;
            auto gw = grad_w->row(c);
            for (std::size_t j = 0; j < d; ++j) gw[j] += g * x[j];
            grad_b[c] += g;
        }
    }
    double reg = 0.0;
    for (double w : W.flat()) reg += w * w;
    loss += 0.5 * l2 * reg;
    if (grad_w)
        for (std::size_t i = 0; i < W.flat().size(); ++i) grad_w->flat()[i] += l2 * W.flat()[i];
    return loss;
}

struct TrainResult {
    LinearModel model;
    std::vector<double> epoch_objective;  // full-subset objective after each epoch, when traced
};

// Trains on examples `ids` with labels `labels[id]`. Zero initialization;
// the shuffle order is the only randomness and derives from cfg.seed.
inline TrainResult train_traced(const EmbeddingMatrix& emb, std::span<const std::size_t> ids,
                                std::span<const int> labels, int num_classes, const TrainConfig& cfg,
                                bool trace = false) {
    if (ids.empty()) throw PreconditionError("cannot train on an empty selection");
    if (cfg.epochs < 0) throw ParameterError("epochs must be non-negative");
    if (cfg.batch == 0) throw ParameterError("batch size must be positive");
    if (!(cfg.lr >= 0.0) || !(cfg.l2 >= 0.0)) throw ParameterError("lr and l2 must be non-negative");
    const std::size_t n = ids.size(), d = emb.dim();

    std::vector<int> y(n);
    std::vector<char> seen(num_classes, 0);
    for (std::size_t r = 0; r < n; ++r) {
        const int label = labels[ids[r]];
        if (label < 0 || label >= num_classes)
            throw PreconditionError("selected example " + std::to_string(ids[r]) + " has no hard label");
        y[r] = label;
        seen[label] = 1;
    }
    if (std::count(seen.begin(), seen.end(), 1) < 2)
        warn("training subset contains a single class; the model degenerates to a constant predictor");

    TrainResult result;
    LinearModel& model = result.model;
    model = LinearModel::zeros(num_classes, d);
    if (cfg.standardize) {
        for (std::size_t j = 0; j < d; ++j) {
            double mean = 0.0;
            for (std::size_t id : ids) mean += emb.values(id, j);
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t id : ids) {
                const double dv = emb.values(id, j) - mean;
                var += dv * dv;
            }
            const double sd = std::sqrt(var / static_cast<double>(n));
            model.feature_mean[j] = mean;
            model.feature_scale[j] = sd > 0.0 ? sd : 1.0;
        }
    }
    Matrix<double> X(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j)
            X(r, j) = (emb.values(ids[r], j) - model.feature_mean[j]) / model.feature_scale[j];

    std::vector<std::size_t> perm(n), all(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed);
    Matrix<double> gw(num_classes, d);
    std::vector<double> gb(num_classes);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t start = 0; start < n; start += cfg.batch) {
            const std::span<const std::size_t> batch(perm.data() + start, std::min(cfg.batch, n - start));
            cross_entropy_objective(model.weights, model.bias, X, y, batch, cfg.l2, &gw, gb);
            for (std::size_t i = 0; i < gw.flat().size(); ++i) model.weights.flat()[i] -= cfg.lr * gw.flat()[i];
            for (int c = 0; c < num_classes; ++c) model.bias[c] -= cfg.lr * gb[c];
        }
        if (trace) result.epoch_objective.push_back(cross_entropy_objective(model.weights, model.bias, X, y, all, cfg.l2));
    }
    for (double w : model.weights.flat())
        if (!std::isfinite(w)) throw DomainError("training diverged (non-finite weights); lower the learning rate");
    return result;
}

inline LinearModel train(const EmbeddingMatrix& emb, std::span<const std::size_t> ids, std::span<const int> labels,
                         int num_classes, const TrainConfig& cfg) {
    return train_traced(emb, ids, labels, num_classes, cfg).model;
}

inline LinearModel train(const EmbeddingMatrix& emb, const ScoredSelection& selection, const PseudoLabeling& p,
                         const TrainConfig& cfg) {
    return train(emb, selection.selected, p.hard, p.num_classes, cfg);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
    double accuracy = 0.0;
    double balanced_error = 0.0;
    std::vector<double> per_class_error;  // NaN for classes absent from the labels
    std::size_t n_eval = 0;
};

// Scores predictions against labels, skipping abstaining labels. The balanced
// error averages the per-class error over the classes that occur.
inline EvalReport score_predictions(std::span<const int> predictions, std::span<const int> labels, int num_classes) {
    if (predictions.size() != labels.size()) throw DimensionError("predictions and labels differ in length");
    std::vector<std::size_t> total(num_classes, 0), wrong(num_classes, 0);
    EvalReport r;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y == kAbstain) continue;
        if (y < 0 || y >= num_classes) throw FormatError("label " + std::to_string(y) + " out of range");
        ++r.n_eval;
        ++total[y];
        if (predictions[i] == y)
            ++hits;
        else
            ++wrong[y];
    }
    if (r.n_eval == 0) throw PreconditionError("cannot evaluate on an empty split");
    r.accuracy = static_cast<double>(hits) / static_cast<double>(r.n_eval);
    r.per_class_error.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < num_classes; ++c) {
        if (total[c] == 0) continue;
        r.per_class_error[c] = static_cast<double>(wrong[c]) / static_cast<double>(total[c]);
        sum += r.per_class_error[c];
        ++present;
    }
    r.balanced_error = sum / present;
    return r;
}

inline std::vector<int> predict_all(const LinearModel& model, const EmbeddingMatrix& emb) {
    if (emb.dim() != model.dim()) throw DimensionError("model and embeddings differ in dimension");
    std::vector<int> pred(emb.n());
    parallel_for(emb.n(), 4096, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) pred[i] = model.predict(emb.row(i));
    });
    return pred;
}

inline EvalReport evaluate(const LinearModel& model, const EmbeddingMatrix& emb, std::span<const int> gold) {
    if (gold.size() != emb.n()) throw DimensionError("gold labels and embeddings differ in length");
    if (gold.empty()) throw PreconditionError("cannot evaluate on an empty split");
    return score_predictions(predict_all(model, emb), gold, model.num_classes);
}

// ---------------------------------------------------------------------------
// Beta sweep

struct LabeledSplit {
    const EmbeddingMatrix* embeddings = nullptr;
    const std::vector<int>* gold = nullptr;
};

struct SweepRow {
    double beta = 1.0;
    std::size_t n_selected = 0;
    double subset_label_accuracy = std::numeric_limits<double>::quiet_NaN();
    double val_accuracy = std::numeric_limits<double>::quiet_NaN();
    double test_accuracy = std::numeric_limits<double>::quiet_NaN();
    double balanced_error = std::numeric_limits<double>::quiet_NaN();  // on test when present, else validation
};

struct SweepTable {
    std::vector<SweepRow> rows;
    std::size_t best = 0;  // highest validation accuracy; ties go to the larger beta
};

inline std::vector<double> default_betas() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}; }

// One selection + training run per beta; rows are independent and run in
// parallel. `train_gold` may be null; `test.embeddings` may be null.
inline SweepTable beta_sweep(const EmbeddingMatrix& train_emb, const PseudoLabeling& p,
                             const std::vector<int>* train_gold, const LabeledSplit& val, const LabeledSplit& test,
                             const SelectorConfig& selector, std::span<const double> betas, const TrainConfig& cfg) {
    if (!val.embeddings || !val.gold) throw PreconditionError("the sweep needs validation gold labels to pick beta");
    if (betas.empty()) throw ParameterError("no beta values to sweep");
    if (train_gold && train_gold->size() != p.n()) throw DimensionError("train gold and pseudolabels differ in length");

    const bool full_only = std::all_of(betas.begin(), betas.end(), [](double b) { return b == 1.0; });
    ScoredSelection ranked;
    if (full_only) {
        // beta = 1 keeps everything; skip scoring so degenerate inputs still train.
        const auto covered = covered_indices(p);
        std::vector<double> zeros(covered.size(), 0.0);
        ranked = select_top_beta(zeros, 1.0, covered, selector.method);
    } else {
        ranked = rank_examples(train_emb, p, selector);
    }

    SweepTable table;
    table.rows.resize(betas.size());
    parallel_for(betas.size(), 1, [&](std::size_t begin, std::size_t end) {
        for (std::size_t b = begin; b < end; ++b) {
            SweepRow& row = table.rows[b];
            row.beta = betas[b];
            const auto sel = select_at(ranked, p, betas[b], selector);
            row.n_selected = sel.selected.size();
            if (train_gold) row.subset_label_accuracy = subset_accuracy(sel.selected, p.hard, *train_gold);
            if (sel.selected.empty()) continue;
            const auto model = train(train_emb, sel.selected, p.hard, p.num_classes, cfg);
            const auto v = evaluate(model, *val.embeddings, *val.gold);
            row.val_accuracy = v.accuracy;
            row.balanced_error = v.balanced_error;
            if (test.embeddings && test.gold) {
                const auto t = evaluate(model, *test.embeddings, *test.gold);
                row.test_accuracy = t.accuracy;
                row.balanced_error = t.balanced_error;
            }
        }
    });
    for (std::size_t b = 1; b < table.rows.size(); ++b) {
        const auto& cur = table.rows[b];
        const auto& best = table.rows[table.best];
        if (std::isnan(cur.val_accuracy)) continue;
        if (std::isnan(best.val_accuracy) || cur.val_accuracy > best.val_accuracy ||
            (cur.val_accuracy == best.val_accuracy && cur.beta > best.beta))
            table.best = b;
    }
    return table;
}

inline nlohmann::json to_json(const SweepRow& r) {
    auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
    return {{"balanced_error", num(r.balanced_error)}, {"beta", r.beta},
            {"n_selected", r.n_selected},             {"subset_label_accuracy", num(r.subset_label_accuracy)},
            {"test_accuracy", num(r.test_accuracy)},   {"val_accuracy", num(r.val_accuracy)}};
}

inline nlohmann::json to_json(const SweepTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows) rows.push_back(to_json(r));
    return {{"best", to_json(t.rows.at(t.best))}, {"rows", std::move(rows)}};
}

inline std::string sweep_csv(const SweepTable& t) {
    std::string out = "beta,n_selected,subset_label_accuracy,val_accuracy,test_accuracy,balanced_error\n";
    for (const auto& r : t.rows)
        out += format_double(r.beta) + ',' + std::to_string(r.n_selected) + ',' +
               format_double(r.subset_label_accuracy) + ',' + format_double(r.val_accuracy) + ',' +
               format_double(r.test_accuracy) + ',' + format_double(r.balanced_error) + '\n';
    return out;
}

}  // namespace wss
