#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "environment.hpp"

namespace iwfqi {

/// Periodic mean inflow over a 365-day year.
struct InflowProfile {
    double c0 = 25.0;   // base level, Mm^3/day
    double c1 = 15.0;   // seasonal amplitude
    double phase = 0.0; // day offset

    double mean(double day) const {
        return c0 + c1 * std::sin(2.0 * M_PI * (day + phase) / 365.0);
    }
};

struct WaterReservoirConfig {
    double capacity = 500.0;
    double min_storage = 50.0;
    double flood_threshold = 300.0;
    double demand = 10.0;
    double alpha = 0.3;  // flood penalty weight
    double beta = 0.7;   // demand penalty weight
    InflowProfile inflow;
    double inflow_noise_var = 2.0;
    int release_action_count = 8;
    double max_release = 40.0;
    double gamma = 0.99;
    int horizon = 365;

    void validate() const {
        if (!(0.0 < min_storage && min_storage < flood_threshold && flood_threshold < capacity))
            throw std::invalid_argument(
                "WaterReservoirConfig: need 0 < min_storage < flood_threshold < capacity");
        if (demand <= 0.0) throw std::invalid_argument("WaterReservoirConfig: demand must be positive");
        if (alpha < 0.0 || beta < 0.0)
            throw std::invalid_argument("WaterReservoirConfig: penalty weights must be nonnegative");
        if (inflow_noise_var <= 0.0)
            throw std::invalid_argument("WaterReservoirConfig: inflow noise variance must be positive");
        if (release_action_count < 2 || max_release <= 0.0)
            throw std::invalid_argument("WaterReservoirConfig: invalid release action set");
        if (!(gamma >= 0.0 && gamma < 1.0))
            throw std::invalid_argument("WaterReservoirConfig: gamma must be in [0,1)");
        if (horizon <= 0) throw std::invalid_argument("WaterReservoirConfig: horizon must be positive");
    }
};

/// Daily reservoir operation. State is (day, storage); actions request one
/// of several evenly spaced release volumes. The mass balance adds a noisy
/// seasonal inflow, the actual release never draws storage below the
/// minimum, and storage above capacity spills. The reward penalizes flood
/// level and unmet demand, computed from the requested release, so it is a
/// deterministic function of (state, action).
class WaterReservoir : public Environment {
public:
    explicit WaterReservoir(WaterReservoirConfig config) : config_(std::move(config)) {
        config_.validate();
        spec_.state_dim = 2;
        spec_.action_count = config_.release_action_count;
        spec_.gamma = config_.gamma;
        spec_.horizon = config_.horizon;
        spec_.r_max = config_.alpha * (config_.capacity - config_.flood_threshold) +
                      config_.beta * config_.demand * config_.demand;
    }

    const TaskSpec& task_spec() const override { return spec_; }
    const WaterReservoirConfig& config() const { return config_; }
    std::string name() const override { return "water_reservoir"; }

    double release_volume(int action) const {
        check_action(action);
        return config_.max_release * action / (config_.release_action_count - 1);
    }

    Vec reset(Rng&) const override { return start_state(); }

    bool is_terminal(const Vec&) const override { return false; }

    StepResult step(const Vec& state, int action, Rng& rng) const override {
        const double day = state[0], storage = state[1];
        const double requested = release_volume(action);
        std::normal_distribution<double> noise(0.0, std::sqrt(config_.inflow_noise_var));
        const double inflow = config_.inflow.mean(day) + noise(rng);
        const double available = std::max(0.0, storage + inflow - config_.min_storage);
        const double actual = std::min(requested, available);
        Vec next(2);
        next[0] = next_day(day);
        next[1] = std::clamp(storage + inflow - actual, config_.min_storage, config_.capacity);
        return {next, mean_reward(state, action), false};
    }

    std::vector<Vec> evaluation_starts(int n) const override {
        return std::vector<Vec>(n, start_state());
    }

    /// Only storage is noisy; the day advances deterministically and
    /// identically in every task.
    std::vector<int> stochastic_dims() const override { return {1}; }

    bool has_densities() const override { return true; }

    /// Gaussian density of the next storage level around the nominal mass
    /// balance (full requested release, no clamping). Zero if the day
    /// component does not advance by one.
    double transition_density(const Vec& state, int action, const Vec& next) const override {
        const double requested = release_volume(action);
        if (next[0] != next_day(state[0])) return 0.0;
        const double mean = state[1] + config_.inflow.mean(state[0]) - requested;
        const double d = next[1] - mean;
        return std::exp(-0.5 * d * d / config_.inflow_noise_var) /
               std::sqrt(2.0 * M_PI * config_.inflow_noise_var);
    }

    std::optional<Vec> true_transition_noise() const override {
        return Vec::Constant(1, config_.inflow_noise_var);
    }

    double mean_reward(const Vec& state, int action) const {
        const double requested = release_volume(action);
        const double flood = std::max(0.0, state[1] - config_.flood_threshold);
        const double deficit = std::max(0.0, config_.demand - requested);
        return -config_.alpha * flood - config_.beta * deficit * deficit;
    }

private:
    static Vec start_state() {
        Vec s(2);
        s << 1.0, 200.0;
        return s;
    }

    double next_day(double day) const { return std::fmod(day, 365.0) + 1.0; }

    void check_action(int action) const {
        if (action < 0 || action >= config_.release_action_count)
            throw std::invalid_argument("water_reservoir: invalid action id");
    }

    WaterReservoirConfig config_;
    TaskSpec spec_;
};

}  // namespace iwfqi
