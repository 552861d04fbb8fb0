#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "../core.hpp"

namespace iwfqi {

/// Thrown when a true density is requested from an environment that does not
/// define one (deterministic dynamics or deterministic rewards).
struct DensityUnavailable : std::logic_error {
    using std::logic_error::logic_error;
};

struct StepResult {
    Vec next_state;
    double reward = 0.0;
    bool done = false;
};

/// A task: stochastic dynamics, reward, and episode structure. Environments
/// are stateless; step is a pure function of (state, action, rng).
class Environment {
public:
    virtual ~Environment() = default;

    virtual const TaskSpec& task_spec() const = 0;
    virtual std::string name() const = 0;

    /// Start state for data collection.
    virtual Vec reset(Rng& rng) const = 0;

    virtual StepResult step(const Vec& state, int action, Rng& rng) const = 0;

    virtual bool is_terminal(const Vec& state) const = 0;

    /// Start states for the evaluation protocol (fixed, not rng-driven).
    virtual std::vector<Vec> evaluation_starts(int n) const = 0;

    /// State dimensions whose evolution is stochastic and task-dependent.
    /// These are the components transition models and weights cover;
    /// the rest evolve deterministically and identically across tasks.
    virtual std::vector<int> stochastic_dims() const = 0;

    virtual bool has_densities() const { return false; }

    /// Exact density of the stochastic next-state components given (s, a).
    /// Deterministic components are excluded; boundary clipping mass is
    /// ignored (the density is the pre-clip Gaussian).
    virtual double transition_density(const Vec&, int, const Vec&) const {
        throw DensityUnavailable(name() + ": transition density unavailable");
    }

    /// Exact density of the reward given (s, a).
    virtual double reward_density(const Vec&, int, double) const {
        throw DensityUnavailable(name() + ": reward density unavailable");
    }

    /// True observation-noise variances, when the task defines them.
    virtual std::optional<double> true_reward_noise() const { return std::nullopt; }
    /// One variance per stochastic dimension.
    virtual std::optional<Vec> true_transition_noise() const { return std::nullopt; }
};

}  // namespace iwfqi
