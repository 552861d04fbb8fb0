#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "environment.hpp"

namespace iwfqi {

/// One puddle: an unnormalized penalty field shaped as a bivariate Gaussian
/// density with the given mean and covariance.
struct Puddle {
    Vec mean;        // 2-vector
    Mat covariance;  // 2x2, symmetric positive-definite

    double det() const {
        return covariance(0, 0) * covariance(1, 1) - covariance(0, 1) * covariance(1, 0);
    }

    double density(const Vec& s) const {
        const double d = det();
        const double dx = s[0] - mean[0], dy = s[1] - mean[1];
        const double quad = (covariance(1, 1) * dx * dx - 2.0 * covariance(0, 1) * dx * dy +
                             covariance(0, 0) * dy * dy) / d;
        return std::exp(-0.5 * quad) / (2.0 * M_PI * std::sqrt(d));
    }

    double peak() const { return 1.0 / (2.0 * M_PI * std::sqrt(det())); }

    void validate() const {
        if (mean.size() != 2) throw std::invalid_argument("Puddle: mean must be a 2-vector");
        if (covariance.rows() != 2 || covariance.cols() != 2)
            throw std::invalid_argument("Puddle: covariance must be 2x2");
        if (std::abs(covariance(0, 1) - covariance(1, 0)) > 1e-12)
            throw std::invalid_argument("Puddle: covariance must be symmetric");
        if (covariance(0, 0) <= 0.0 || det() <= 0.0)
            throw std::invalid_argument("Puddle: covariance must be positive-definite");
    }
};

enum class PuddleDynamics { shared, puddle_based };

struct PuddleWorldConfig {
    std::vector<Puddle> puddles;
    Vec goal_lo = (Vec(2) << 9.0, 9.0).finished();
    Vec goal_hi = (Vec(2) << 10.0, 10.0).finished();
    PuddleDynamics dynamics_mode = PuddleDynamics::shared;
    double reward_noise_var = 0.01;
    double transition_noise_var = 0.04;  // per coordinate
    double gamma = 0.99;
    int horizon = 50;

    void validate() const {
        for (const auto& p : puddles) p.validate();
        if (goal_lo.size() != 2 || goal_hi.size() != 2)
            throw std::invalid_argument("PuddleWorldConfig: goal bounds must be 2-vectors");
        for (int d = 0; d < 2; ++d)
            if (!(0.0 <= goal_lo[d] && goal_lo[d] < goal_hi[d] && goal_hi[d] <= 10.0))
                throw std::invalid_argument("PuddleWorldConfig: goal must be a rectangle in [0,10]^2");
        if (reward_noise_var <= 0.0 || transition_noise_var <= 0.0)
            throw std::invalid_argument("PuddleWorldConfig: noise variances must be positive");
        if (!(gamma >= 0.0 && gamma < 1.0))
            throw std::invalid_argument("PuddleWorldConfig: gamma must be in [0,1)");
        if (horizon <= 0) throw std::invalid_argument("PuddleWorldConfig: horizon must be positive");
    }
};

/// Continuous 10x10 grid world. Four unit moves (+x, +y, -x, -y), Gaussian
/// noise on both coordinates, and a quadratic-exponential puddle penalty.
/// In puddle_based mode puddles also slow the agent down. Episodes end in
/// the goal rectangle, where the reward is exactly zero.
class PuddleWorld : public Environment {
public:
    explicit PuddleWorld(PuddleWorldConfig config) : config_(std::move(config)) {
        config_.validate();
        spec_.state_dim = 2;
        spec_.action_count = 4;
        spec_.gamma = config_.gamma;
        spec_.horizon = config_.horizon;
        double peak = 0.0;
        for (const auto& p : config_.puddles) peak += p.peak();
        spec_.r_max = 1.0 + 100.0 * peak;
    }

    const TaskSpec& task_spec() const override { return spec_; }
    const PuddleWorldConfig& config() const { return config_; }
    std::string name() const override { return "puddle_world"; }

    Vec reset(Rng&) const override { return Vec::Zero(2); }

    bool is_terminal(const Vec& s) const override {
        return s[0] >= config_.goal_lo[0] && s[0] <= config_.goal_hi[0] &&
               s[1] >= config_.goal_lo[1] && s[1] <= config_.goal_hi[1];
    }

    StepResult step(const Vec& state, int action, Rng& rng) const override {
        check_action(action);
        if (is_terminal(state)) return {state, 0.0, true};
        Vec mean = successor_mean(state, action);
        std::normal_distribution<double> noise(0.0, std::sqrt(config_.transition_noise_var));
        Vec next(2);
        for (int d = 0; d < 2; ++d) next[d] = std::clamp(mean[d] + noise(rng), 0.0, 10.0);
        std::normal_distribution<double> rnoise(0.0, std::sqrt(config_.reward_noise_var));
        double reward = mean_reward(state) + rnoise(rng);
        return {next, reward, is_terminal(next)};
    }

    std::vector<Vec> evaluation_starts(int n) const override {
        return std::vector<Vec>(n, Vec::Zero(2));
    }

    std::vector<int> stochastic_dims() const override { return {0, 1}; }
    bool has_densities() const override { return true; }

    double transition_density(const Vec& state, int action, const Vec& next) const override {
        check_action(action);
        if (is_terminal(state))
            throw DensityUnavailable("puddle_world: no transition density from the goal");
        Vec mean = successor_mean(state, action);
        double density = 1.0;
        for (int d = 0; d < 2; ++d)
            density *= gaussian_pdf(next[d], mean[d], config_.transition_noise_var);
        return density;
    }

    double reward_density(const Vec& state, int action, double r) const override {
        check_action(action);
        if (is_terminal(state))
            throw DensityUnavailable("puddle_world: no reward density in the goal");
        return gaussian_pdf(r, mean_reward(state), config_.reward_noise_var);
    }

    std::optional<double> true_reward_noise() const override { return config_.reward_noise_var; }
    std::optional<Vec> true_transition_noise() const override {
        return Vec::Constant(2, config_.transition_noise_var);
    }

    /// Sum of puddle fields at s.
    double puddle_mass(const Vec& s) const {
        double total = 0.0;
        for (const auto& p : config_.puddles) total += p.density(s);
        return total;
    }

    double mean_reward(const Vec& s) const { return -1.0 - 100.0 * puddle_mass(s); }

    /// Pre-noise successor mean: a unit move scaled by the slow-down factor.
    /// The factor is evaluated at the clipped unit-step successor.
    Vec successor_mean(const Vec& state, int action) const {
        Vec dir = Vec::Zero(2);
        switch (action) {
            case 0: dir[0] = 1.0; break;
            case 1: dir[1] = 1.0; break;
            case 2: dir[0] = -1.0; break;
            case 3: dir[1] = -1.0; break;
        }
        double alpha = 1.0;
        if (config_.dynamics_mode == PuddleDynamics::puddle_based) {
            Vec tentative(2);
            for (int d = 0; d < 2; ++d) tentative[d] = std::clamp(state[d] + dir[d], 0.0, 10.0);
            alpha = 1.0 / (1.0 + 5.0 * puddle_mass(tentative));
        }
        return state + alpha * dir;
    }

private:
    static double gaussian_pdf(double x, double mean, double var) {
        const double d = x - mean;
        return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * M_PI * var);
    }

    void check_action(int action) const {
        if (action < 0 || action >= 4)
            throw std::invalid_argument("puddle_world: invalid action id");
    }

    PuddleWorldConfig config_;
    TaskSpec spec_;
};

}  // namespace iwfqi
