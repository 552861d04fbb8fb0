#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "environment.hpp"

namespace iwfqi {

enum class AcrobotTask { swing_up, constant_spin };

struct AcrobotConfig {
    double l1 = 1.0, l2 = 1.0;  // link lengths
    double m1 = 1.0, m2 = 1.0;  // link masses
    double torque_magnitude = 2.0;
    AcrobotTask task_kind = AcrobotTask::swing_up;
    double control_dt = 0.2;  // seconds per action
    int substeps = 4;         // RK4 steps per action
    double gamma = 0.99;
    int horizon = 100;

    void validate() const {
        if (l1 <= 0.0 || l2 <= 0.0 || m1 <= 0.0 || m2 <= 0.0)
            throw std::invalid_argument("AcrobotConfig: lengths and masses must be positive");
        if (torque_magnitude < 0.0)
            throw std::invalid_argument("AcrobotConfig: torque must be nonnegative");
        if (control_dt <= 0.0 || substeps <= 0)
            throw std::invalid_argument("AcrobotConfig: invalid integration settings");
        if (!(gamma >= 0.0 && gamma < 1.0))
            throw std::invalid_argument("AcrobotConfig: gamma must be in [0,1)");
        if (horizon <= 0) throw std::invalid_argument("AcrobotConfig: horizon must be positive");
    }
};

/// Two-link underactuated pendulum with torque on the second joint. Angles
/// are measured from the downward vertical; the state is
/// (theta1, theta2, theta1_dot, theta2_dot). Dynamics are deterministic;
/// links are uniform rods (center of mass at l/2, inertia m l^2 / 12).
///
/// Action 0 applies -torque, action 1 applies +torque. The swing-up task
/// terminates when the dimensionless tip height -cos(t1) - cos(t1+t2)
/// exceeds 1; the constant-spin task only truncates at the horizon.
class Acrobot : public Environment {
public:
    static constexpr double kGravity = 9.8;
    static constexpr double kMaxVel1 = 4.0 * M_PI;
    static constexpr double kMaxVel2 = 9.0 * M_PI;

    explicit Acrobot(AcrobotConfig config) : config_(std::move(config)) {
        config_.validate();
        spec_.state_dim = 4;
        spec_.action_count = 2;
        spec_.gamma = config_.gamma;
        spec_.horizon = config_.horizon;
        spec_.r_max = config_.task_kind == AcrobotTask::swing_up ? 4.0 : kMaxVel1 + M_PI;
    }

    const TaskSpec& task_spec() const override { return spec_; }
    const AcrobotConfig& config() const { return config_; }
    std::string name() const override { return "acrobot"; }

    Vec reset(Rng& rng) const override {
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        Vec s = Vec::Zero(4);
        s[0] = u(rng);
        return s;
    }

    bool is_terminal(const Vec& s) const override {
        if (config_.task_kind != AcrobotTask::swing_up) return false;
        return tip_height(s) > 1.0;
    }

    StepResult step(const Vec& state, int action, Rng&) const override {
        if (action < 0 || action >= 2) throw std::invalid_argument("acrobot: invalid action id");
        if (is_terminal(state)) return {state, 0.0, true};
        const double tau = action == 0 ? -config_.torque_magnitude : config_.torque_magnitude;
        const double h = config_.control_dt / config_.substeps;
        Vec s = state;
        for (int i = 0; i < config_.substeps; ++i) s = rk4_step(s, tau, h);
        s[0] = wrap_angle(s[0]);
        s[1] = wrap_angle(s[1]);
        s[2] = std::clamp(s[2], -kMaxVel1, kMaxVel1);
        s[3] = std::clamp(s[3], -kMaxVel2, kMaxVel2);
        double reward = config_.task_kind == AcrobotTask::swing_up
                            ? tip_height(s) - 2.0
                            : -std::abs(s[2] - M_PI);
        return {s, reward, is_terminal(s)};
    }

    std::vector<Vec> evaluation_starts(int n) const override {
        std::vector<Vec> starts;
        starts.reserve(n);
        for (int i = 0; i < n; ++i) {
            Vec s = Vec::Zero(4);
            s[0] = -2.0 + 4.0 * (i + 0.5) / n;
            starts.push_back(s);
        }
        return starts;
    }

    /// Deterministic, but all four components depend on the task's lengths
    /// and masses, so transfer weights must model every one of them.
    std::vector<int> stochastic_dims() const override { return {0, 1, 2, 3}; }

    /// -cos(t1) - cos(t1 + t2), the tip height in units of the link lengths.
    static double tip_height(const Vec& s) {
        return -std::cos(s[0]) - std::cos(s[0] + s[1]);
    }

    /// Unforced mechanical energy; conserved by the true dynamics when no
    /// torque is applied (used to validate the integrator).
    double total_energy(const Vec& s) const {
        const double lc1 = config_.l1 / 2.0, lc2 = config_.l2 / 2.0;
        const double i1 = config_.m1 * config_.l1 * config_.l1 / 12.0;
        const double i2 = config_.m2 * config_.l2 * config_.l2 / 12.0;
        const double c2 = std::cos(s[1]);
        const double d1 = config_.m1 * lc1 * lc1 +
                          config_.m2 * (config_.l1 * config_.l1 + lc2 * lc2 +
                                        2.0 * config_.l1 * lc2 * c2) + i1 + i2;
        const double d2 = config_.m2 * (lc2 * lc2 + config_.l1 * lc2 * c2) + i2;
        const double m22 = config_.m2 * lc2 * lc2 + i2;
        const double kinetic = 0.5 * (d1 * s[2] * s[2] + 2.0 * d2 * s[2] * s[3] + m22 * s[3] * s[3]);
        const double h1 = -lc1 * std::cos(s[0]);
        const double h2 = -config_.l1 * std::cos(s[0]) - lc2 * std::cos(s[0] + s[1]);
        return kinetic + kGravity * (config_.m1 * h1 + config_.m2 * h2);
    }

private:
    Vec derivatives(const Vec& s, double tau) const {
        const double lc1 = config_.l1 / 2.0, lc2 = config_.l2 / 2.0;
        const double i1 = config_.m1 * config_.l1 * config_.l1 / 12.0;
        const double i2 = config_.m2 * config_.l2 * config_.l2 / 12.0;
        const double t1 = s[0], t2 = s[1], w1 = s[2], w2 = s[3];
        const double d1 = config_.m1 * lc1 * lc1 +
                          config_.m2 * (config_.l1 * config_.l1 + lc2 * lc2 +
                                        2.0 * config_.l1 * lc2 * std::cos(t2)) + i1 + i2;
        const double d2 = config_.m2 * (lc2 * lc2 + config_.l1 * lc2 * std::cos(t2)) + i2;
        const double phi2 = config_.m2 * lc2 * kGravity * std::cos(t1 + t2 - M_PI / 2.0);
        const double phi1 = -config_.m2 * config_.l1 * lc2 * w2 * w2 * std::sin(t2) -
                            2.0 * config_.m2 * config_.l1 * lc2 * w2 * w1 * std::sin(t2) +
                            (config_.m1 * lc1 + config_.m2 * config_.l1) * kGravity *
                                std::cos(t1 - M_PI / 2.0) +
                            phi2;
        const double a2 = (tau + (d2 / d1) * phi1 -
                           config_.m2 * config_.l1 * lc2 * w1 * w1 * std::sin(t2) - phi2) /
                          (config_.m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
        const double a1 = -(d2 * a2 + phi1) / d1;
        Vec ds(4);
        ds << w1, w2, a1, a2;
        return ds;
    }

    Vec rk4_step(const Vec& s, double tau, double h) const {
        Vec k1 = derivatives(s, tau);
        Vec k2 = derivatives(s + 0.5 * h * k1, tau);
        Vec k3 = derivatives(s + 0.5 * h * k2, tau);
        Vec k4 = derivatives(s + h * k3, tau);
        return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }

    static double wrap_angle(double a) {
        a = std::fmod(a + M_PI, 2.0 * M_PI);
        if (a < 0.0) a += 2.0 * M_PI;
        return a - M_PI;
    }

    AcrobotConfig config_;
    TaskSpec spec_;
};

}  // namespace iwfqi
