#pragma once

// Ranking covered examples by how trustworthy their pseudolabel looks, and
// keeping the best beta fraction. Lower scores are better for both the cut
// statistic and entropy.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wsselect/data_model.hpp"
#include "wsselect/error.hpp"
#include "wsselect/format.hpp"
#include "wsselect/label_models.hpp"
#include "wsselect/neighbor_graph.hpp"
#include "wsselect/parallel.hpp"

namespace wss {

enum class SelectorMethod { Cut, Entropy };

inline const char* to_string(SelectorMethod m) { return m == SelectorMethod::Cut ? "cut" : "entropy"; }

// Scores are indexed by position; example_ids maps a position back to the
// original example. `order` sorts positions by (score, example id) and
// `selected` holds the example ids of the kept prefix, in rank order.
struct ScoredSelection {
    SelectorMethod method = SelectorMethod::Cut;
    double beta = 1.0;
    std::vector<double> scores;
    std::vector<std::size_t> example_ids;
    std::vector<std::size_t> order;
    std::vector<std::size_t> selected;
};

// Shannon entropy (nats) of each covered example's soft label, in covered
// order. 0 ln 0 counts as 0.
inline std::vector<double> entropy_scores(const PseudoLabeling& p) {
    if (!p.soft) throw ParameterError("selector requires soft labels; the cut statistic works with hard labels only");
    const auto& soft = *p.soft;
    std::vector<double> out;
    for (std::size_t i = 0; i < p.n(); ++i) {
        if (!p.covered(i)) continue;
        double h = 0.0;
        for (std::size_t y = 0; y < soft.cols(); ++y) {
            const double q = soft(i, y);
            if (q > 0.0) h -= q * std::log(q);
        }
        out.push_back(h);
    }
    return out;
}

namespace detail {

inline void check_graph_matches(const NeighborGraph& g, const PseudoLabeling& p) {
    const auto covered = covered_indices(p);
    if (covered != g.node_ids)
        throw DimensionError("graph nodes (" + std::to_string(g.size()) +
                             ") are not the covered examples of the pseudolabeling (" +
                             std::to_string(covered.size()) + ")");
}

inline void check_two_classes(std::span<const double> marginals) {
    std::size_t present = 0;
    for (double m : marginals) present += m > 0.0;
    if (present < 2)
        throw DegenerateError(
            "all covered pseudolabels share one class, so the cut statistic has zero variance; use beta = 1.0");
}

// Z = (J - mu) / sigma for one node with label probability `prob` under the
// i.i.d. null.
inline double cut_z(std::span<const double> weights, std::span<const char> cut, double prob) {
    double J = 0.0, sum_w = 0.0, sum_w2 = 0.0;
    for (std::size_t e = 0; e < weights.size(); ++e) {
        if (cut[e]) J += weights[e];
        sum_w += weights[e];
        sum_w2 += weights[e] * weights[e];
    }
    const double mu = (1.0 - prob) * sum_w;
    const double sigma = std::sqrt(prob * (1.0 - prob) * sum_w2);
    if (!(sigma > 0.0))
        throw DegenerateError("cut statistic variance is zero (label marginal " + format_double(prob) +
                              "); use beta = 1.0");
    return (J - mu) / sigma;
}

}  // namespace detail

// Cut-statistic Z score of every graph node. Label probabilities are the
// empirical marginals over covered examples; an edge is cut when its
// endpoints carry different hard labels.
inline std::vector<double> cut_statistic_scores(const NeighborGraph& g, const PseudoLabeling& p) {
    detail::check_graph_matches(g, p);
    const auto marginals = class_marginals(p);
    detail::check_two_classes(marginals);

    std::vector<double> z(g.size());
    parallel_for(g.size(), 256, [&](std::size_t begin, std::size_t end) {
        std::vector<char> cut;
        for (std::size_t i = begin; i < end; ++i) {
            const int label = p.hard[g.node_ids[i]];
            const auto nb = g.neighbors(i);
            cut.resize(nb.size());
            for (std::size_t e = 0; e < nb.size(); ++e) cut[e] = p.hard[g.node_ids[nb[e]]] != label;
            z[i] = detail::cut_z(g.edge_weights(i), cut, marginals[label]);
        }
    });
    return z;
}

// Scores points against a fixed reference sample: each query is inserted on
// its own into the reference, so scores of different queries are
// independent. The selection threshold for a coverage beta is the beta
// quantile of the reference points' own scores.
class ReferenceScorer {
public:
    ReferenceScorer(const EmbeddingMatrix& ref_embeddings, const PseudoLabeling& ref_pseudo, std::size_t k)
        : emb_(ref_embeddings), pseudo_(ref_pseudo), k_(k) {
        if (emb_.n() != pseudo_.n()) throw DimensionError("reference embeddings and pseudolabels differ in length");
        covered_ = covered_indices(pseudo_);
        if (k_ == 0) throw ParameterError("k must be positive");
        if (k_ >= covered_.size())
            throw ParameterError("k = " + std::to_string(k_) + " must be smaller than the covered reference size (" +
                                 std::to_string(covered_.size()) + ")");
        marginals_ = class_marginals(pseudo_);
        detail::check_two_classes(marginals_);
    }

    const std::vector<double>& marginals() const noexcept { return marginals_; }

    double score(std::span<const float> query, int label) const {
        if (query.size() != emb_.dim()) throw DimensionError("query dimension does not match the reference");
        if (label < 0 || label >= pseudo_.num_classes)
            throw ParameterError("query pseudolabel " + std::to_string(label) + " is not a class");
        std::vector<std::pair<double, std::size_t>> dist;
        dist.reserve(covered_.size());
        for (std::size_t pos = 0; pos < covered_.size(); ++pos)
            dist.emplace_back(squared_distance(query, emb_.row(covered_[pos])), pos);
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_), dist.end());
        std::vector<double> w(k_);
        std::vector<char> cut(k_);
        for (std::size_t e = 0; e < k_; ++e) {
            w[e] = edge_weight(std::sqrt(dist[e].first));
            cut[e] = pseudo_.hard[covered_[dist[e].second]] != label;
        }
        return detail::cut_z(w, cut, marginals_[label]);
    }

    // Largest score among the lowest floor(beta * M) reference scores;
    // -infinity when that count is zero.
    double threshold(double beta) const {
        if (!(beta > 0.0 && beta <= 1.0)) throw ParameterError("beta must lie in (0, 1]");
        if (!ref_scores_) {
            const auto g = knn_brute_force(emb_, covered_, k_);
            auto s = cut_statistic_scores(g, pseudo_);
            std::sort(s.begin(), s.end());
            ref_scores_ = std::move(s);
        }
        const auto count = static_cast<std::size_t>(beta * static_cast<double>(ref_scores_->size()));
        if (count == 0) return -std::numeric_limits<double>::infinity();
        return (*ref_scores_)[count - 1];
    }

private:
    const EmbeddingMatrix& emb_;
    const PseudoLabeling& pseudo_;
    std::size_t k_;
    std::vector<std::size_t> covered_;
    std::vector<double> marginals_;
    mutable std::optional<std::vector<double>> ref_scores_;
};

inline double cut_statistic_score_with_reference(const EmbeddingMatrix& ref_embeddings,
                                                 const PseudoLabeling& ref_pseudo, std::span<const float> query,
                                                 int query_label, std::size_t k) {
    return ReferenceScorer(ref_embeddings, ref_pseudo, k).score(query, query_label);
}

namespace detail {

inline std::vector<std::size_t> identity_ids(std::size_t n) {
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return ids;
}

inline ScoredSelection rank(std::span<const double> scores, std::span<const std::size_t> example_ids,
                            SelectorMethod method, double beta) {
    ScoredSelection s;
    s.method = method;
    s.beta = beta;
    s.scores.assign(scores.begin(), scores.end());
    s.example_ids = example_ids.empty() ? identity_ids(scores.size())
                                        : std::vector<std::size_t>(example_ids.begin(), example_ids.end());
    if (s.example_ids.size() != s.scores.size()) throw DimensionError("scores and example ids differ in length");
    for (std::size_t i = 0; i < s.scores.size(); ++i)
        if (!std::isfinite(s.scores[i])) throw DomainError("non-finite score at position " + std::to_string(i));
    s.order = identity_ids(s.scores.size());
    std::sort(s.order.begin(), s.order.end(), [&](std::size_t a, std::size_t b) {
        if (s.scores[a] != s.scores[b]) return s.scores[a] < s.scores[b];
        return s.example_ids[a] < s.example_ids[b];
    });
    return s;
}

}  // namespace detail

// Keeps the floor(beta * N) lowest-scoring positions.
inline ScoredSelection select_top_beta(std::span<const double> scores, double beta,
                                       std::span<const std::size_t> example_ids = {},
                                       SelectorMethod method = SelectorMethod::Cut) {
    if (!(beta > 0.0 && beta <= 1.0)) throw ParameterError("beta must lie in (0, 1], got " + format_double(beta));
    auto s = detail::rank(scores, example_ids, method, beta);
    const auto count = static_cast<std::size_t>(beta * static_cast<double>(s.scores.size()));
    s.selected.reserve(count);
    for (std::size_t r = 0; r < count; ++r) s.selected.push_back(s.example_ids[s.order[r]]);
    return s;
}

// Separate ranking per pseudolabel class; class y keeps its
// floor(beta * prior[y] * N) best examples.
inline ScoredSelection select_stratified(std::span<const double> scores, const PseudoLabeling& p, double beta,
                                         std::span<const double> class_prior,
                                         std::span<const std::size_t> example_ids = {},
                                         SelectorMethod method = SelectorMethod::Cut) {
    if (!(beta > 0.0 && beta <= 1.0)) throw ParameterError("beta must lie in (0, 1], got " + format_double(beta));
    if (class_prior.size() != static_cast<std::size_t>(p.num_classes))
        throw DimensionError("class prior has " + std::to_string(class_prior.size()) + " entries, expected " +
                             std::to_string(p.num_classes));
    double total = 0.0;
    for (double q : class_prior) {
        if (!(q >= 0.0)) throw ParameterError("class prior entries must be non-negative");
        total += q;
    }
    if (std::abs(total - 1.0) > 1e-6) throw ParameterError("class prior must sum to 1");

    auto s = detail::rank(scores, example_ids, method, beta);
    const double N = static_cast<double>(s.scores.size());
    std::vector<std::size_t> quota(class_prior.size()), taken(class_prior.size(), 0), available(class_prior.size(), 0);
    for (std::size_t y = 0; y < quota.size(); ++y) quota[y] = static_cast<std::size_t>(beta * class_prior[y] * N);
    for (std::size_t pos = 0; pos < s.scores.size(); ++pos) {
        const int label = p.hard.at(s.example_ids[pos]);
        if (label == kAbstain) throw PreconditionError("stratified selection over an abstaining example");
        ++available[label];
    }
    for (std::size_t y = 0; y < quota.size(); ++y)
        if (class_prior[y] > 0.0 && available[y] < quota[y])
            warn("stratum " + std::to_string(y) + " has " + std::to_string(available[y]) + " examples, quota is " +
                 std::to_string(quota[y]));
    for (std::size_t pos : s.order) {
        const int label = p.hard[s.example_ids[pos]];
        if (taken[label] < quota[label]) {
            ++taken[label];
            s.selected.push_back(s.example_ids[pos]);
        }
    }
    return s;
}

// Relabels the floor(beta * N) highest-scoring graph nodes with the most
// common hard label among their neighbors; a tie for the most common label
// keeps the original. Votes use the labels before any relabeling. The
// returned labeling carries no soft labels.
inline PseudoLabeling relabel_by_neighbors(const NeighborGraph& g, const PseudoLabeling& p,
                                           std::span<const double> scores, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("beta must lie in [0, 1], got " + format_double(beta));
    detail::check_graph_matches(g, p);
    if (scores.size() != g.size()) throw DimensionError("one score per graph node expected");
    PseudoLabeling out;
    out.num_classes = p.num_classes;
    out.hard = p.hard;

    std::vector<std::size_t> order = detail::identity_ids(g.size());
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    const auto count = static_cast<std::size_t>(beta * static_cast<double>(g.size()));
    std::vector<int> votes(p.num_classes);
    for (std::size_t r = 0; r < count; ++r) {
        const std::size_t i = order[r];
        std::fill(votes.begin(), votes.end(), 0);
        for (std::uint32_t j : g.neighbors(i)) ++votes[p.hard[g.node_ids[j]]];
        const auto top = std::max_element(votes.begin(), votes.end());
        if (std::count(votes.begin(), votes.end(), *top) == 1)
            out.hard[g.node_ids[i]] = static_cast<int>(top - votes.begin());
    }
    return out;
}

// Fraction of selected examples whose pseudolabel equals the gold label.
inline double subset_accuracy(std::span<const std::size_t> selected, std::span<const int> pseudo,
                              std::span<const int> gold) {
    if (selected.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::size_t hit = 0;
    for (std::size_t id : selected) hit += pseudo[id] == gold[id];
    return static_cast<double>(hit) / static_cast<double>(selected.size());
}

// Score dump: example_index,score,rank,selected_at_<beta>... in example order.
// All selections must come from the same scores.
inline std::string scores_csv(std::span<const ScoredSelection> per_beta) {
    if (per_beta.empty()) return "example_index,score,rank\n";
    const auto& ranked = per_beta.front();
    const std::size_t N = ranked.scores.size();
    std::vector<std::size_t> rank_of(N);
    for (std::size_t r = 0; r < N; ++r) rank_of[ranked.order[r]] = r;
    std::vector<std::vector<char>> chosen;
    for (const auto& sel : per_beta) {
        if (sel.scores != ranked.scores) throw DimensionError("score dump mixes different score vectors");
        std::vector<char> mask(N, 0);
        std::vector<std::size_t> positions = detail::identity_ids(N);
        std::sort(positions.begin(), positions.end(),
                  [&](std::size_t a, std::size_t b) { return sel.example_ids[a] < sel.example_ids[b]; });
        for (std::size_t id : sel.selected) {
            const auto it = std::lower_bound(positions.begin(), positions.end(), id,
                                             [&](std::size_t pos, std::size_t v) { return sel.example_ids[pos] < v; });
            mask[*it] = 1;
        }
        chosen.push_back(std::move(mask));
    }
    std::string out = "example_index,score,rank";
    for (const auto& sel : per_beta) out += ",selected_at_" + format_double(sel.beta);
    out += '\n';
    std::vector<std::size_t> by_example = detail::identity_ids(N);
    std::sort(by_example.begin(), by_example.end(),
              [&](std::size_t a, std::size_t b) { return ranked.example_ids[a] < ranked.example_ids[b]; });
    for (std::size_t pos : by_example) {
        out += std::to_string(ranked.example_ids[pos]) + ',' + format_double(ranked.scores[pos]) + ',' +
               std::to_string(rank_of[pos]);
        for (const auto& mask : chosen) out += mask[pos] ? ",1" : ",0";
        out += '\n';
    }
    return out;
}

// How examples are ranked and kept; mirrors the command-line knobs.
struct SelectorConfig {
    SelectorMethod method = SelectorMethod::Cut;
    std::size_t k = 20;
    bool symmetric_graph = false;
    std::optional<std::vector<double>> stratified_prior;
};

// Scores every covered example once. The returned ranking keeps all
// positions (beta = 1); use select_at to cut it.
inline ScoredSelection rank_examples(const EmbeddingMatrix& emb, const PseudoLabeling& p, const SelectorConfig& cfg) {
    if (emb.n() != p.n()) throw DimensionError("embeddings and pseudolabels differ in length");
    const auto covered = covered_indices(p);
    if (covered.empty()) throw PreconditionError("no covered examples to rank");
    std::vector<double> scores;
    if (cfg.method == SelectorMethod::Entropy) {
        scores = entropy_scores(p);
    } else {
        auto g = knn_brute_force(emb, covered, cfg.k);
        if (cfg.symmetric_graph) g = symmetrize(g);
        scores = cut_statistic_scores(g, p);
    }
    return select_top_beta(scores, 1.0, covered, cfg.method);
}

inline ScoredSelection select_at(const ScoredSelection& ranked, const PseudoLabeling& p, double beta,
                                 const SelectorConfig& cfg) {
    if (cfg.stratified_prior)
        return select_stratified(ranked.scores, p, beta, *cfg.stratified_prior, ranked.example_ids, ranked.method);
    return select_top_beta(ranked.scores, beta, ranked.example_ids, ranked.method);
}

}  // namespace wss
