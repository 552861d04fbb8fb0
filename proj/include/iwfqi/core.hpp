#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rng.hpp"

namespace iwfqi {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Fixed description of a task (an MDP) as seen by the learner.
struct TaskSpec {
    int state_dim = 0;
    int action_count = 0;
    double gamma = 0.0;   ///< discount factor in [0, 1)
    int horizon = 0;      ///< episode truncation length
    double r_max = 0.0;   ///< uniform bound on the mean absolute reward

    /// Bound on any Q-value, r_max / (1 - gamma).
    double q_max() const { return r_max / (1.0 - gamma); }

    void validate() const {
        if (state_dim <= 0) throw std::invalid_argument("TaskSpec: state_dim must be positive");
        if (action_count <= 0) throw std::invalid_argument("TaskSpec: action_count must be positive");
        if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("TaskSpec: gamma must be in [0,1)");
        if (horizon <= 0) throw std::invalid_argument("TaskSpec: horizon must be positive");
        if (!(r_max > 0.0)) throw std::invalid_argument("TaskSpec: r_max must be positive");
    }
};

/// One observed transition (s, a, r, s').
///
/// task_id identifies the generating task inside a pooled dataset: 0 is the
/// target, 1..m are sources. terminal marks transitions whose episode ended
/// at next_state because the environment terminated (not horizon truncation).
struct TransitionSample {
    int task_id = 0;
    Vec state;
    int action = 0;
    double reward = 0.0;
    Vec next_state;
    bool terminal = false;
};

/// A transition plus its two importance weights.
struct WeightedSample {
    TransitionSample sample;
    double w_r = 1.0;  ///< reward weight
    double w_p = 1.0;  ///< transition weight
};

/// Contiguous collection of samples partitioned by task id.
///
/// Samples of the same task occupy one contiguous range; ranges are stored
/// in increasing task-id order and cover the array exactly.
class Dataset {
public:
    Dataset() = default;

    explicit Dataset(std::vector<TransitionSample> samples) {
        for (auto& s : samples) push_back(std::move(s));
    }

    /// Appends a sample. Task ids must arrive in non-decreasing order so the
    /// per-task ranges stay contiguous.
    void push_back(TransitionSample s) {
        if (!samples_.empty()) {
            if (s.state.size() != state_dim())
                throw std::invalid_argument("Dataset: state dimension mismatch");
            if (s.task_id < samples_.back().task_id)
                throw std::invalid_argument("Dataset: task ids must be non-decreasing");
        }
        if (s.state.size() != s.next_state.size())
            throw std::invalid_argument("Dataset: state/next_state dimension mismatch");
        if (ranges_.empty() || ranges_.back().first != s.task_id)
            ranges_.emplace_back(s.task_id, std::pair<std::size_t, std::size_t>{samples_.size(), samples_.size()});
        samples_.push_back(std::move(s));
        ranges_.back().second.second = samples_.size();
    }

    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    Eigen::Index state_dim() const { return samples_.empty() ? 0 : samples_.front().state.size(); }

    const TransitionSample& operator[](std::size_t i) const { return samples_[i]; }
    const std::vector<TransitionSample>& samples() const { return samples_; }

    /// Task ids present, in range order.
    std::vector<int> task_ids() const {
        std::vector<int> ids;
        ids.reserve(ranges_.size());
        for (const auto& r : ranges_) ids.push_back(r.first);
        return ids;
    }

    /// Half-open index range [begin, end) of a task's samples; (0,0) if absent.
    std::pair<std::size_t, std::size_t> task_range(int task_id) const {
        for (const auto& r : ranges_)
            if (r.first == task_id) return r.second;
        return {0, 0};
    }

    auto begin() const { return samples_.begin(); }
    auto end() const { return samples_.end(); }

private:
    std::vector<TransitionSample> samples_;
    std::vector<std::pair<int, std::pair<std::size_t, std::size_t>>> ranges_;
};

/// Pools a target dataset with source datasets into one partitioned dataset.
///
/// Samples are re-tagged positionally: target samples get task_id 0, the
/// k-th source dataset gets task_id k. All other per-sample fields are
/// copied bit-exactly. Empty inputs contribute nothing.
inline Dataset pool_datasets(const Dataset& target, const std::vector<Dataset>& sources) {
    Dataset pooled;
    for (const auto& s : target) {
        TransitionSample c = s;
        c.task_id = 0;
        pooled.push_back(std::move(c));
    }
    for (std::size_t k = 0; k < sources.size(); ++k)
        for (const auto& s : sources[k]) {
            TransitionSample c = s;
            c.task_id = static_cast<int>(k) + 1;
            pooled.push_back(std::move(c));
        }
    return pooled;
}

/// Total state-action value function. Implementations must return a finite
/// value for every (state, action) pair with action in [0, action_count).
class QFunction {
public:
    virtual ~QFunction() = default;
    virtual int action_count() const = 0;
    virtual double value(const Vec& state, int action) const = 0;

    /// Q-values for all actions at one state.
    Vec values(const Vec& state) const {
        Vec q(action_count());
        for (int a = 0; a < action_count(); ++a) q[a] = value(state, a);
        return q;
    }

    double max_value(const Vec& state) const {
        double best = value(state, 0);
        for (int a = 1; a < action_count(); ++a) best = std::max(best, value(state, a));
        return best;
    }
};

/// Maximizing action; ties broken toward the lowest action index.
inline int greedy_action(const QFunction& q, const Vec& state) {
    int best = 0;
    double best_v = q.value(state, 0);
    for (int a = 1; a < q.action_count(); ++a) {
        double v = q.value(state, a);
        if (v > best_v) {
            best_v = v;
            best = a;
        }
    }
    return best;
}

/// With probability epsilon picks a uniform action, otherwise the greedy one.
inline int epsilon_greedy_action(const QFunction& q, const Vec& state, double epsilon, Rng& rng) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0))
        throw std::invalid_argument("epsilon_greedy_action: epsilon must be in [0,1]");
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < epsilon) {
        std::uniform_int_distribution<int> pick(0, q.action_count() - 1);
        return pick(rng);
    }
    return greedy_action(q, state);
}

/// A (possibly stochastic) mapping from states to actions.
class Policy {
public:
    static Policy uniform(int action_count) {
        Policy p;
        p.kind_ = Kind::uniform;
        p.action_count_ = action_count;
        return p;
    }

    static Policy greedy(std::shared_ptr<const QFunction> q) {
        Policy p;
        p.kind_ = Kind::greedy;
        p.q_ = std::move(q);
        p.action_count_ = p.q_->action_count();
        return p;
    }

    static Policy epsilon_greedy(std::shared_ptr<const QFunction> q, double epsilon) {
        if (!(epsilon >= 0.0 && epsilon <= 1.0))
            throw std::invalid_argument("Policy: epsilon must be in [0,1]");
        Policy p;
        p.kind_ = Kind::epsilon_greedy;
        p.q_ = std::move(q);
        p.epsilon_ = epsilon;
        p.action_count_ = p.q_->action_count();
        return p;
    }

    /// Deterministic handcoded rule.
    static Policy fixed(int action_count, std::function<int(const Vec&)> rule) {
        Policy p;
        p.kind_ = Kind::fixed;
        p.action_count_ = action_count;
        p.rule_ = std::move(rule);
        return p;
    }

    int act(const Vec& state, Rng& rng) const {
        switch (kind_) {
            case Kind::uniform: {
                std::uniform_int_distribution<int> pick(0, action_count_ - 1);
                return pick(rng);
            }
            case Kind::greedy:
                return greedy_action(*q_, state);
            case Kind::epsilon_greedy:
                return epsilon_greedy_action(*q_, state, epsilon_, rng);
            case Kind::fixed:
                return rule_(state);
        }
        throw std::logic_error("Policy: invalid kind");
    }

    int action_count() const { return action_count_; }
    double epsilon() const { return epsilon_; }

private:
    enum class Kind { uniform, greedy, epsilon_greedy, fixed };

    Policy() = default;

    Kind kind_ = Kind::uniform;
    int action_count_ = 0;
    double epsilon_ = 0.0;
    std::shared_ptr<const QFunction> q_;
    std::function<int(const Vec&)> rule_;
};

}  // namespace iwfqi
