#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core.hpp"
#include "ert.hpp"
#include "weights.hpp"

namespace iwfqi {

enum class Variant { plain, iwfqi, iwfqi_ideal };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::plain: return "plain";
        case Variant::iwfqi: return "iwfqi";
        case Variant::iwfqi_ideal: return "iwfqi-ideal";
    }
    throw std::logic_error("variant_name: invalid variant");
}

inline Variant parse_variant(const std::string& s) {
    if (s == "plain") return Variant::plain;
    if (s == "iwfqi") return Variant::iwfqi;
    if (s == "iwfqi-ideal" || s == "iwfqi_ideal") return Variant::iwfqi_ideal;
    throw std::invalid_argument("unknown variant: " + s);
}

struct FqiConfig {
    int iterations = 50;
    ErtParams ert;
    bool clamp_q = true;             ///< clamp Q estimates to [-q_max, q_max]
    bool per_action_forest = false;  ///< one forest per action instead of an action feature
    Variant variant = Variant::iwfqi;
};

struct IterationRecord {
    int iter = 0;
    double mean_abs_td_target = 0.0;
    double q_min = 0.0;
    double q_max = 0.0;
    double fit_seconds = 0.0;
};

/// A fitted weighted regression over (state, action) pairs.
class Regressor {
public:
    virtual ~Regressor() = default;
    virtual double predict(const Vec& state, int action) const = 0;
};

/// Fits regressors for the FQI loop. Implementations must be deterministic
/// given (data, seed).
class WeightedRegressorFactory {
public:
    virtual ~WeightedRegressorFactory() = default;
    virtual std::unique_ptr<Regressor> fit(const Mat& states, const std::vector<int>& actions,
                                           const Vec& targets, const Vec& weights,
                                           std::uint64_t seed) const = 0;
};

/// Extra-trees regression with the action as an extra integer feature, or
/// one forest per action when per_action is set. An action absent from the
/// data in per-action mode predicts 0.
class ErtRegressorFactory : public WeightedRegressorFactory {
public:
    ErtRegressorFactory(ErtParams params, int action_count, bool per_action = false)
        : params_(params), action_count_(action_count), per_action_(per_action) {}

    std::unique_ptr<Regressor> fit(const Mat& states, const std::vector<int>& actions,
                                   const Vec& targets, const Vec& weights,
                                   std::uint64_t seed) const override {
        if (per_action_) return fit_per_action(states, actions, targets, weights, seed);
        Mat X(states.rows(), states.cols() + 1);
        X.leftCols(states.cols()) = states;
        for (Eigen::Index i = 0; i < states.rows(); ++i)
            X(i, states.cols()) = static_cast<double>(actions[i]);
        ErtParams p = params_;
        p.seed = seed;
        return std::make_unique<SharedForest>(ErtModel::fit(X, targets, weights, p));
    }

private:
    struct SharedForest : Regressor {
        explicit SharedForest(ErtModel m) : model(std::move(m)) {}
        double predict(const Vec& state, int action) const override {
            Vec x(state.size() + 1);
            x.head(state.size()) = state;
            x[state.size()] = static_cast<double>(action);
            return model.predict_one(x);
        }
        ErtModel model;
    };

    struct PerActionForest : Regressor {
        double predict(const Vec& state, int action) const override {
            if (action < 0 || action >= static_cast<int>(models.size()) || !models[action])
                return 0.0;
            return models[action]->predict_one(state);
        }
        std::vector<std::unique_ptr<ErtModel>> models;
    };

    std::unique_ptr<Regressor> fit_per_action(const Mat& states, const std::vector<int>& actions,
                                              const Vec& targets, const Vec& weights,
                                              std::uint64_t seed) const {
        auto out = std::make_unique<PerActionForest>();
        out->models.resize(action_count_);
        for (int a = 0; a < action_count_; ++a) {
            std::vector<Eigen::Index> rows;
            for (Eigen::Index i = 0; i < states.rows(); ++i)
                if (actions[i] == a && weights[i] > 0.0) rows.push_back(i);
            if (rows.empty()) continue;
            Mat X(rows.size(), states.cols());
            Vec y(rows.size()), w(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                X.row(i) = states.row(rows[i]);
                y[i] = targets[rows[i]];
                w[i] = weights[rows[i]];
            }
            ErtParams p = params_;
            p.seed = derive_seed(seed, {static_cast<std::uint64_t>(a)});
            out->models[a] = std::make_unique<ErtModel>(ErtModel::fit(X, y, w, p));
        }
        return out;
    }

    ErtParams params_;
    int action_count_;
    bool per_action_;
};

/// Exact tabular regressor: the state's first component is an integer state
/// index and each (state, action) cell predicts its weighted target mean.
/// Empty cells predict 0. This is the oracle mode used to compare the FQI
/// loop against exact dynamic programming.
class TabularRegressorFactory : public WeightedRegressorFactory {
public:
    TabularRegressorFactory(int n_states, int n_actions)
        : n_states_(n_states), n_actions_(n_actions) {}

    std::unique_ptr<Regressor> fit(const Mat& states, const std::vector<int>& actions,
                                   const Vec& targets, const Vec& weights,
                                   std::uint64_t) const override {
        Mat sums = Mat::Zero(n_states_, n_actions_);
        Mat mass = Mat::Zero(n_states_, n_actions_);
        for (Eigen::Index i = 0; i < states.rows(); ++i) {
            const auto s = static_cast<Eigen::Index>(states(i, 0));
            sums(s, actions[i]) += weights[i] * targets[i];
            mass(s, actions[i]) += weights[i];
        }
        Mat table = Mat::Zero(n_states_, n_actions_);
        for (Eigen::Index s = 0; s < n_states_; ++s)
            for (Eigen::Index a = 0; a < n_actions_; ++a)
                if (mass(s, a) > 0.0) table(s, a) = sums(s, a) / mass(s, a);
        return std::make_unique<Table>(std::move(table));
    }

private:
    struct Table : Regressor {
        explicit Table(Mat t) : table(std::move(t)) {}
        double predict(const Vec& state, int action) const override {
            return table(static_cast<Eigen::Index>(state[0]), action);
        }
        Mat table;
    };
    int n_states_, n_actions_;
};

/// Q-function view of a fitted regressor, optionally clamped to [-bound, bound].
class RegressorQ : public QFunction {
public:
    RegressorQ(std::shared_ptr<const Regressor> regressor, int action_count, double bound,
               bool clamp)
        : regressor_(std::move(regressor)), action_count_(action_count), bound_(bound),
          clamp_(clamp) {}

    int action_count() const override { return action_count_; }
    double value(const Vec& state, int action) const override {
        double v = regressor_->predict(state, action);
        return clamp_ ? std::clamp(v, -bound_, bound_) : v;
    }

private:
    std::shared_ptr<const Regressor> regressor_;
    int action_count_;
    double bound_;
    bool clamp_;
};

/// Fitted mean-reward model, clamped to [-r_max, r_max]. Trained by weighted
/// regression of observed rewards with the reward weights w_r (the sum of
/// the weights is the implicit self-normalizer; the argmin is unchanged by it).
class RewardModel {
public:
    RewardModel(std::shared_ptr<const Regressor> regressor, double r_max)
        : regressor_(std::move(regressor)), r_max_(r_max) {}

    double value(const Vec& state, int action) const {
        return std::clamp(regressor_->predict(state, action), -r_max_, r_max_);
    }

private:
    std::shared_ptr<const Regressor> regressor_;
    double r_max_;
};

namespace detail {

inline void split_columns(const std::vector<WeightedSample>& data, Mat& states,
                          std::vector<int>& actions) {
    const auto n = static_cast<Eigen::Index>(data.size());
    states.resize(n, data.front().sample.state.size());
    actions.resize(data.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        states.row(i) = data[i].sample.state.transpose();
        actions[i] = data[i].sample.action;
    }
}

}  // namespace detail

inline RewardModel fit_reward_model(const std::vector<WeightedSample>& data,
                                    const WeightedRegressorFactory& factory, double r_max,
                                    std::uint64_t seed) {
    if (data.empty()) throw std::invalid_argument("fit_reward_model: empty data");
    Mat states;
    std::vector<int> actions;
    detail::split_columns(data, states, actions);
    Vec targets(data.size()), weights(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        targets[i] = data[i].sample.reward;
        weights[i] = data[i].w_r;
    }
    return RewardModel(factory.fit(states, actions, targets, weights, seed), r_max);
}

/// One projected Bellman backup: fits Q_next on targets
///   y_i = base(sample_i) + gamma * max_a' Q_prev(s'_i, a')
/// with the transition weights w_p, dropping the bootstrap term for samples
/// whose episode terminated at s'. A null Q_prev is treated as zero.
inline std::shared_ptr<QFunction> fqi_iterate(const std::vector<WeightedSample>& data,
                                              const std::function<double(const TransitionSample&)>& base,
                                              const QFunction* q_prev, const TaskSpec& spec,
                                              const WeightedRegressorFactory& factory, bool clamp_q,
                                              std::uint64_t seed,
                                              IterationRecord* record = nullptr) {
    if (data.empty()) throw std::invalid_argument("fqi_iterate: empty data");
    const auto start = std::chrono::steady_clock::now();
    Mat states;
    std::vector<int> actions;
    detail::split_columns(data, states, actions);
    Vec targets(data.size()), weights(data.size());
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const TransitionSample& s = data[i].sample;
        double y = base(s);
        if (!s.terminal && q_prev) y += spec.gamma * q_prev->max_value(s.next_state);
        targets[i] = y;
        weights[i] = data[i].w_p;
        abs_sum += std::abs(y);
    }
    auto q = std::make_shared<RegressorQ>(factory.fit(states, actions, targets, weights, seed),
                                          spec.action_count, spec.q_max(), clamp_q);
    if (record) {
        record->mean_abs_td_target = abs_sum / static_cast<double>(data.size());
        record->q_min = targets.minCoeff();
        record->q_max = targets.maxCoeff();
        record->fit_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    return q;
}

struct AlgorithmResult {
    std::shared_ptr<QFunction> q;
    std::vector<IterationRecord> log;

    Policy greedy_policy() const { return Policy::greedy(q); }
};

/// Runs the full batch algorithm on a weighted pooled dataset.
///
/// plain ignores source samples and weights (Eq.-style raw targets on target
/// data only). The transfer variants fit the reward model first with the
/// reward weights, start from Q_0 = R-hat, and run `iterations` weighted
/// backups with the transition weights. The caller provides weights computed
/// from GP models (iwfqi) or true densities (iwfqi_ideal); the loop itself is
/// identical for both.
inline AlgorithmResult run_algorithm(const FqiConfig& config, const TaskSpec& spec,
                                     const std::vector<WeightedSample>& data, std::uint64_t seed,
                                     const WeightedRegressorFactory* factory = nullptr) {
    spec.validate();
    if (config.iterations < 0) throw std::invalid_argument("run_algorithm: negative iteration count");
    ErtRegressorFactory default_factory(config.ert, spec.action_count, config.per_action_forest);
    const WeightedRegressorFactory& f = factory ? *factory : default_factory;

    std::vector<WeightedSample> work;
    if (config.variant == Variant::plain) {
        for (const auto& w : data)
            if (w.sample.task_id == 0) work.push_back({w.sample, 1.0, 1.0});
        if (work.empty()) throw std::invalid_argument("run_algorithm: plain variant has no target samples");
    } else {
        work = data;
        if (work.empty()) throw std::invalid_argument("run_algorithm: empty data");
    }

    AlgorithmResult out;
    std::function<double(const TransitionSample&)> base;
    std::shared_ptr<const RewardModel> reward_model;
    if (config.variant == Variant::plain) {
        base = [](const TransitionSample& s) { return s.reward; };
    } else {
        reward_model = std::make_shared<RewardModel>(
            fit_reward_model(work, f, spec.r_max, derive_seed(seed, {stream::fqi, 0})));
        base = [reward_model](const TransitionSample& s) {
            return reward_model->value(s.state, s.action);
        };
    }

    std::shared_ptr<QFunction> q;
    if (config.variant != Variant::plain) {
        // Q_0 = R-hat.
        struct RewardQ : QFunction {
            RewardQ(std::shared_ptr<const RewardModel> m, int actions)
                : model(std::move(m)), actions_(actions) {}
            int action_count() const override { return actions_; }
            double value(const Vec& s, int a) const override { return model->value(s, a); }
            std::shared_ptr<const RewardModel> model;
            int actions_;
        };
        q = std::make_shared<RewardQ>(reward_model, spec.action_count);
    }

    out.log.reserve(config.iterations);
    for (int k = 0; k < config.iterations; ++k) {
        IterationRecord rec;
        rec.iter = k;
        q = fqi_iterate(work, base, q.get(), spec, f, config.clamp_q,
                        derive_seed(seed, {stream::fqi, static_cast<std::uint64_t>(k) + 1}), &rec);
        out.log.push_back(rec);
    }
    if (!q) {
        // Zero iterations in the plain variant: the zero function.
        struct ZeroQ : QFunction {
            explicit ZeroQ(int actions) : actions_(actions) {}
            int action_count() const override { return actions_; }
            double value(const Vec&, int) const override { return 0.0; }
            int actions_;
        };
        q = std::make_shared<ZeroQ>(spec.action_count);
    }
    out.q = q;
    return out;
}

}  // namespace iwfqi
