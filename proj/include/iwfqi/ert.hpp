#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "core.hpp"

namespace iwfqi {

struct ErtParams {
    int n_estimators = 50;
    int min_samples_split = 2;
    /// Candidate (feature, threshold) pairs scored per node; 0 means the
    /// input dimension.
    int n_candidate_splits = 0;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_estimators < 1) throw std::invalid_argument("ErtParams: n_estimators must be >= 1");
        if (min_samples_split < 2)
            throw std::invalid_argument("ErtParams: min_samples_split must be >= 2");
    }
};

/// Weighted extra-trees regressor (no bootstrap).
///
/// Each node draws up to K candidate features without replacement from the
/// features that are non-constant at the node, one uniform threshold per
/// feature, and keeps the split with the largest weighted variance reduction
/// (ties go to the earliest candidate). Leaves predict the weighted target
/// mean. Zero-weight samples are dropped up front, so they are exactly
/// equivalent to removal; all node statistics accumulate in sample order,
/// and partitions are stable, which keeps duplicate-with-weight-one and
/// doubled-weight constructions bit-identical under a shared seed.
class ErtModel {
public:
    static ErtModel fit(const Mat& X, const Vec& y, const Vec& w, const ErtParams& params) {
        params.validate();
        const Eigen::Index n = X.rows();
        if (n < 1) throw std::invalid_argument("ErtModel::fit: empty training set");
        if (y.size() != n || w.size() != n)
            throw std::invalid_argument("ErtModel::fit: X, y, w sizes differ");
        if (!X.allFinite() || !y.allFinite() || !w.allFinite())
            throw std::invalid_argument("ErtModel::fit: non-finite training data");
        for (Eigen::Index i = 0; i < n; ++i)
            if (w[i] < 0.0) throw std::invalid_argument("ErtModel::fit: negative sample weight");

        std::vector<int> rows;
        rows.reserve(n);
        for (Eigen::Index i = 0; i < n; ++i)
            if (w[i] > 0.0) rows.push_back(static_cast<int>(i));
        if (rows.empty()) throw std::invalid_argument("ErtModel::fit: all sample weights are zero");

        ErtModel m;
        m.dim_ = X.cols();
        int k = params.n_candidate_splits > 0 ? params.n_candidate_splits : static_cast<int>(X.cols());
        m.trees_.reserve(params.n_estimators);
        for (int t = 0; t < params.n_estimators; ++t)
            m.trees_.push_back(grow_tree(X, y, w, rows, k, params.min_samples_split,
                                         make_rng(params.seed, {stream::ert, static_cast<std::uint64_t>(t)})));
        return m;
    }

    double predict_one(const Vec& x) const {
        if (x.size() != dim_) throw std::invalid_argument("ErtModel::predict: dimension mismatch");
        double acc = 0.0;
        for (const auto& tree : trees_) {
            int node = 0;
            while (tree.nodes[node].feature >= 0) {
                const Node& nd = tree.nodes[node];
                node = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
            }
            acc += tree.nodes[node].value;
        }
        return acc / static_cast<double>(trees_.size());
    }

    Vec predict(const Mat& X) const {
        Vec out(X.rows());
        for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = predict_one(X.row(i).transpose());
        return out;
    }

    int tree_count() const { return static_cast<int>(trees_.size()); }
    Eigen::Index input_dim() const { return dim_; }

private:
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        double value = 0.0;
    };
    struct Tree {
        std::vector<Node> nodes;
    };

    static Tree grow_tree(const Mat& X, const Vec& y, const Vec& w, std::vector<int> rows,
                          int k_candidates, int min_split, Rng rng) {
        Tree tree;
        struct Work {
            int node;
            std::size_t begin, end;
        };
        std::vector<Work> stack;
        tree.nodes.push_back({});
        stack.push_back({0, 0, rows.size()});

        std::vector<int> candidates;
        const Eigen::Index dim = X.cols();

        while (!stack.empty()) {
            Work item = stack.back();
            stack.pop_back();
            const std::size_t count = item.end - item.begin;

            double weight_sum = 0.0, weighted_y = 0.0;
            bool constant_y = true;
            const double y0 = y[rows[item.begin]];
            for (std::size_t i = item.begin; i < item.end; ++i) {
                const int r = rows[i];
                weight_sum += w[r];
                weighted_y += w[r] * y[r];
                constant_y = constant_y && y[r] == y0;
            }
            Node& node = tree.nodes[item.node];
            node.value = constant_y ? y0 : weighted_y / weight_sum;

            if (count < static_cast<std::size_t>(min_split) || constant_y) continue;

            // Features that still vary inside this node.
            candidates.clear();
            for (Eigen::Index d = 0; d < dim; ++d) {
                double lo = X(rows[item.begin], d), hi = lo;
                for (std::size_t i = item.begin + 1; i < item.end; ++i) {
                    lo = std::min(lo, X(rows[i], d));
                    hi = std::max(hi, X(rows[i], d));
                }
                if (lo < hi) candidates.push_back(static_cast<int>(d));
            }
            if (candidates.empty()) continue;

            const int k = std::min<int>(k_candidates, static_cast<int>(candidates.size()));
            for (int i = 0; i < k; ++i) {
                std::uniform_int_distribution<int> pick(i, static_cast<int>(candidates.size()) - 1);
                std::swap(candidates[i], candidates[pick(rng)]);
            }

            int best_feature = -1;
            double best_threshold = 0.0;
            double best_sse = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const int d = candidates[c];
                double lo = X(rows[item.begin], d), hi = lo;
                for (std::size_t i = item.begin + 1; i < item.end; ++i) {
                    lo = std::min(lo, X(rows[i], d));
                    hi = std::max(hi, X(rows[i], d));
                }
                std::uniform_real_distribution<double> draw(lo, hi);
                double threshold = draw(rng);
                if (threshold >= hi) threshold = std::nextafter(hi, lo);

                double wl = 0.0, sl = 0.0, ql = 0.0, wr = 0.0, sr = 0.0, qr = 0.0;
                for (std::size_t i = item.begin; i < item.end; ++i) {
                    const int r = rows[i];
                    const double wy = w[r] * y[r];
                    if (X(r, d) <= threshold) {
                        wl += w[r];
                        sl += wy;
                        ql += wy * y[r];
                    } else {
                        wr += w[r];
                        sr += wy;
                        qr += wy * y[r];
                    }
                }
                const double sse = (ql - sl * sl / wl) + (qr - sr * sr / wr);
                if (sse < best_sse) {
                    best_sse = sse;
                    best_feature = d;
                    best_threshold = threshold;
                }
            }

            auto mid_it = std::stable_partition(
                rows.begin() + static_cast<std::ptrdiff_t>(item.begin),
                rows.begin() + static_cast<std::ptrdiff_t>(item.end),
                [&](int r) { return X(r, best_feature) <= best_threshold; });
            const auto mid = static_cast<std::size_t>(mid_it - rows.begin());

            const int left = static_cast<int>(tree.nodes.size());
            tree.nodes.push_back({});
            tree.nodes.push_back({});
            Node& parent = tree.nodes[item.node];
            parent.feature = best_feature;
            parent.threshold = best_threshold;
            parent.left = left;
            parent.right = left + 1;
            stack.push_back({left + 1, mid, item.end});
            stack.push_back({left, item.begin, mid});
        }
        return tree;
    }

    std::vector<Tree> trees_;
    Eigen::Index dim_ = 0;
};

}  // namespace iwfqi
