#pragma once

// Exact Euclidean K-nearest-neighbor graph over the covered examples.
//
// Distances are screened in single precision over row blocks, which bounds
// scratch memory at O(block * N). Every candidate that can still belong to
// the top K under the screening error bound is then re-measured in double
// precision and the final order is (distance, node index). The result is
// identical to a full double-precision sort.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "wsselect/data_model.hpp"
#include "wsselect/error.hpp"
#include "wsselect/format.hpp"
#include "wsselect/parallel.hpp"

namespace wss {

// Weighted adjacency in compressed rows. Node i is original example
// node_ids[i]; its neighbors are sorted by ascending distance, so weights
// 1 / (1 + distance) are non-increasing along a row.
struct NeighborGraph {
    std::vector<std::size_t> node_ids;
    std::vector<std::size_t> offsets{0};
    std::vector<std::uint32_t> targets;
    std::vector<double> distances;
    std::vector<double> weights;
    std::size_t k = 0;
    bool symmetric = false;

    std::size_t size() const noexcept { return node_ids.size(); }
    std::size_t degree(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
    std::span<const std::uint32_t> neighbors(std::size_t i) const {
        return {targets.data() + offsets[i], degree(i)};
    }
    std::span<const double> edge_weights(std::size_t i) const { return {weights.data() + offsets[i], degree(i)}; }
    std::span<const double> edge_distances(std::size_t i) const {
        return {distances.data() + offsets[i], degree(i)};
    }
};

inline double edge_weight(double distance) { return 1.0 / (1.0 + distance); }

// Squared distance accumulated in example order in double precision. This is
// the reference definition the graph is exact against.
inline double squared_distance(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
        s += diff * diff;
    }
    return s;
}

struct KnnOptions {
    std::size_t block_rows = 64;
    std::size_t block_cols = 512;
};

namespace detail {

using f32x8 = float __attribute__((vector_size(32)));

inline f32x8 load8(const float* p) {
    f32x8 v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline float lane_sum(f32x8 a) { return ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7])); }

// Squared distance in float: eight lane accumulators, the tail in lane 0.
inline float screen_distance(const float* a, const float* b, std::size_t d) {
    f32x8 acc = {};
    std::size_t j = 0;
    for (; j + 8 <= d; j += 8) {
        const f32x8 x = load8(a + j) - load8(b + j);
        acc += x * x;
    }
    for (; j < d; ++j) {
        const float x = a[j] - b[j];
        acc[0] += x * x;
    }
    return lane_sum(acc);
}

// Same arithmetic as screen_distance for four consecutive rows of `a`
// (stride d) against one row `b`.
inline void screen_distance4(const float* a, const float* b, std::size_t d, float* out) {
    f32x8 s0 = {}, s1 = {}, s2 = {}, s3 = {};
    std::size_t j = 0;
    for (; j + 8 <= d; j += 8) {
        const f32x8 y = load8(b + j);
        const f32x8 x0 = load8(a + j) - y, x1 = load8(a + d + j) - y;
        const f32x8 x2 = load8(a + 2 * d + j) - y, x3 = load8(a + 3 * d + j) - y;
        s0 += x0 * x0;
        s1 += x1 * x1;
        s2 += x2 * x2;
        s3 += x3 * x3;
    }
    for (; j < d; ++j) {
        const float y = b[j];
        const float x0 = a[j] - y, x1 = a[d + j] - y, x2 = a[2 * d + j] - y, x3 = a[3 * d + j] - y;
        s0[0] += x0 * x0;
        s1[0] += x1 * x1;
        s2[0] += x2 * x2;
        s3[0] += x3 * x3;
    }
    out[0] = lane_sum(s0);
    out[1] = lane_sum(s1);
    out[2] = lane_sum(s2);
    out[3] = lane_sum(s3);
}

// k-th smallest entry of `row` via a bounded max-heap.
inline float kth_smallest(std::span<const float> row, std::size_t k, std::vector<float>& heap) {
    heap.assign(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k));
    std::make_heap(heap.begin(), heap.end());
    for (std::size_t c = k; c < row.size(); ++c)
        if (row[c] < heap.front()) {
            std::pop_heap(heap.begin(), heap.end());
            heap.back() = row[c];
            std::push_heap(heap.begin(), heap.end());
        }
    return heap.front();
}

inline void append_row(NeighborGraph& g, std::span<const std::pair<double, std::uint32_t>> row) {
    for (const auto& [dist2, j] : row) {
        const double dist = std::sqrt(dist2);
        g.targets.push_back(j);
        g.distances.push_back(dist);
        g.weights.push_back(edge_weight(dist));
    }
    g.offsets.push_back(g.targets.size());
}

}  // namespace detail

// Exact K nearest neighbors of every covered example among the covered
// examples, self excluded, ties broken by the lower node index. Neighborhoods
// are not symmetrized.
inline NeighborGraph knn_brute_force(const EmbeddingMatrix& emb, std::span<const std::size_t> covered, std::size_t k,
                                     const KnnOptions& opts = {}) {
    const std::size_t N = covered.size();
    if (N == 0) throw ParameterError("neighbor graph needs at least one covered example");
    if (k == 0) throw ParameterError("k must be positive");
    if (k >= N)
        throw ParameterError("k = " + std::to_string(k) + " must be smaller than the number of covered examples (" +
                             std::to_string(N) + ")");
    if (N > std::numeric_limits<std::uint32_t>::max()) throw ParameterError("too many covered examples");
    const std::size_t d = emb.dim();
    for (std::size_t id : covered)
        if (id >= emb.n()) throw DimensionError("covered index " + std::to_string(id) + " outside embedding matrix");

    // Contiguous copy of the covered rows.
    std::vector<float> X(N * d);
    for (std::size_t i = 0; i < N; ++i) std::copy_n(emb.row(covered[i]).data(), d, X.data() + i * d);

    // Relative error bound of the float screen against the double reference.
    const double gamma = static_cast<double>(d + 8) * std::ldexp(1.0, -23);
    const double slack = (1.0 + 4.0 * gamma) / (1.0 - gamma);

    std::vector<std::vector<std::pair<double, std::uint32_t>>> rows(N);
    const std::size_t B = std::max<std::size_t>(opts.block_rows, 1);
    const std::size_t CB = std::max<std::size_t>(opts.block_cols, 1);

    parallel_for(N, B, [&](std::size_t r0, std::size_t r1) {
        const std::size_t nb = r1 - r0;
        std::vector<float> screen(nb * N);
        for (std::size_t c0 = 0; c0 < N; c0 += CB) {
            const std::size_t c1 = std::min(N, c0 + CB);
            std::size_t r = r0;
            float quad[4];
            for (; r + 4 <= r1; r += 4) {
                const float* a = X.data() + r * d;
                float* out = screen.data() + (r - r0) * N;
                for (std::size_t c = c0; c < c1; ++c) {
                    detail::screen_distance4(a, X.data() + c * d, d, quad);
                    for (std::size_t q = 0; q < 4; ++q) out[q * N + c] = quad[q];
                }
            }
            for (; r < r1; ++r) {
                const float* a = X.data() + r * d;
                float* out = screen.data() + (r - r0) * N;
                for (std::size_t c = c0; c < c1; ++c) out[c] = detail::screen_distance(a, X.data() + c * d, d);
            }
        }
        std::vector<float> heap;
        for (std::size_t r = r0; r < r1; ++r) {
            float* row = screen.data() + (r - r0) * N;
            row[r] = std::numeric_limits<float>::infinity();
            const double kth = detail::kth_smallest(std::span<const float>(row, N), k, heap);
            const double cutoff = kth * slack + 1e-30;
            const bool overflowed = !std::isfinite(kth);

            auto& cand = rows[r];
            for (std::size_t c = 0; c < N; ++c) {
                if (c == r) continue;
                if (!overflowed && !(static_cast<double>(row[c]) <= cutoff)) continue;
                cand.emplace_back(squared_distance(std::span<const float>(X.data() + r * d, d),
                                                   std::span<const float>(X.data() + c * d, d)),
                                  static_cast<std::uint32_t>(c));
            }
            std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
            cand.resize(k);
            cand.shrink_to_fit();
        }
    });

    NeighborGraph g;
    g.node_ids.assign(covered.begin(), covered.end());
    g.k = k;
    g.symmetric = false;
    g.targets.reserve(N * k);
    g.distances.reserve(N * k);
    g.weights.reserve(N * k);
    for (std::size_t i = 0; i < N; ++i) {
        // Stored squared; append_row takes the root.
        detail::append_row(g, rows[i]);
    }
    return g;
}

// Union edge set: j is a neighbor of i whenever i was in N(j) or j in N(i).
inline NeighborGraph symmetrize(const NeighborGraph& g) {
    const std::size_t N = g.size();
    std::vector<std::vector<std::pair<double, std::uint32_t>>> rows(N);
    for (std::size_t i = 0; i < N; ++i) {
        const auto nb = g.neighbors(i);
        const auto dist = g.edge_distances(i);
        for (std::size_t e = 0; e < nb.size(); ++e) {
            rows[i].emplace_back(dist[e], nb[e]);
            rows[nb[e]].emplace_back(dist[e], static_cast<std::uint32_t>(i));
        }
    }
    NeighborGraph out;
    out.node_ids = g.node_ids;
    out.k = g.k;
    out.symmetric = true;
    for (auto& row : rows) {
        std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) {
            return a.second != b.second ? a.second < b.second : a.first < b.first;
        });
        row.erase(std::unique(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.second == b.second; }),
                  row.end());
        std::sort(row.begin(), row.end());
        for (const auto& [dist, j] : row) {
            out.targets.push_back(j);
            out.distances.push_back(dist);
            out.weights.push_back(edge_weight(dist));
        }
        out.offsets.push_back(out.targets.size());
    }
    return out;
}

// Debug dump: one "src,dst,weight" line per directed edge, original indices.
inline std::string graph_csv(const NeighborGraph& g) {
    std::string out = "src,dst,weight\n";
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto nb = g.neighbors(i);
        const auto w = g.edge_weights(i);
        for (std::size_t e = 0; e < nb.size(); ++e)
            out += std::to_string(g.node_ids[i]) + ',' + std::to_string(g.node_ids[nb[e]]) + ',' + format_double(w[e]) +
                   '\n';
    }
    return out;
}

}  // namespace wss
