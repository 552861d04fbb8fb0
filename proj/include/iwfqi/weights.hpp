#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "environments/environment.hpp"
#include "gp.hpp"

namespace iwfqi {

struct WeightConfig {
    double max_weight = 1000.0;          ///< cap on any final weight
    double variance_clamp_ratio = 0.95;  ///< cap on sigma_GP^2 / model noise in the denominator
};

/// Summary statistics of one weight family over a pooled dataset.
struct WeightDiagnostics {
    double second_moment = 0.0;  ///< empirical E[w^2], target samples included
    double ess = 0.0;            ///< (sum w)^2 / sum w^2
    double max_weight = 0.0;
    long divergence_count = 0;  ///< posterior variance reached the model noise
};

inline double log_normal_pdf(double x, double mean, double var) {
    double d = x - mean;
    return -0.5 * d * d / var - 0.5 * std::log(2.0 * M_PI * var);
}

/// Log of one expected-weight factor under Gaussian task models.
///
/// The expectation of N(x | m0, target_noise) / N(x | mj, source_noise) over
/// independent Gaussian posteriors m0 ~ N(target.mean, target.variance) and
/// mj ~ N(source.mean, source.variance) has the closed form
///
///   C * N(x | target.mean, target_noise + target.variance)
///     / N(x | source.mean, source_noise - source.variance),
///   C = source_noise / (source_noise - source.variance),
///
/// finite only while source.variance < source_noise. The source posterior
/// variance is clamped to variance_clamp_ratio * source_noise; reaching the
/// model noise before clamping counts as a divergence event.
inline double log_expected_weight_factor(const GpPrediction& target, double target_noise,
                                         const GpPrediction& source, double source_noise,
                                         double observed, const WeightConfig& config,
                                         long* divergence_count = nullptr) {
    if (!(target_noise > 0.0) || !(source_noise > 0.0))
        throw std::invalid_argument("expected weight: model noise variances must be positive");
    if (target.variance < 0.0 || source.variance < 0.0)
        throw std::invalid_argument("expected weight: negative posterior variance");
    double source_var = source.variance;
    if (source_var >= source_noise && divergence_count) ++*divergence_count;
    source_var = std::min(source_var, config.variance_clamp_ratio * source_noise);
    double denominator_var = source_noise - source_var;
    double log_c = std::log(source_noise) - std::log(denominator_var);
    return log_c + log_normal_pdf(observed, target.mean, target_noise + target.variance) -
           log_normal_pdf(observed, source.mean, denominator_var);
}

/// Expected importance weight for one observed reward.
inline double expected_reward_weight(const GpPrediction& target, double target_noise,
                                     const GpPrediction& source, double source_noise,
                                     double reward, const WeightConfig& config = {},
                                     long* divergence_count = nullptr) {
    double w = std::exp(log_expected_weight_factor(target, target_noise, source, source_noise,
                                                   reward, config, divergence_count));
    return std::min(w, config.max_weight);
}

/// Expected importance weight for one observed next state with diagonal
/// noise: the product of per-dimension factors, accumulated in log space and
/// exponentiated once.
inline double expected_transition_weight(const std::vector<GpPrediction>& target,
                                         const Vec& target_noise,
                                         const std::vector<GpPrediction>& source,
                                         const Vec& source_noise, const Vec& observed,
                                         const WeightConfig& config = {},
                                         long* divergence_count = nullptr) {
    const auto dims = static_cast<Eigen::Index>(target.size());
    if (dims == 0) throw std::invalid_argument("expected_transition_weight: no dimensions");
    if (static_cast<Eigen::Index>(source.size()) != dims || target_noise.size() != dims ||
        source_noise.size() != dims || observed.size() != dims)
        throw std::invalid_argument("expected_transition_weight: dimension mismatch");
    double log_w = 0.0;
    for (Eigen::Index d = 0; d < dims; ++d)
        log_w += log_expected_weight_factor(target[d], target_noise[d], source[d], source_noise[d],
                                            observed[d], config, divergence_count);
    return std::min(std::exp(log_w), config.max_weight);
}

/// Ideal importance weights (w_r, w_p) from the true task densities.
inline std::pair<double, double> ideal_weights(const Environment& target, const Environment& source,
                                               const TransitionSample& s,
                                               const WeightConfig& config = {}) {
    double reward_target = target.reward_density(s.state, s.action, s.reward);
    double reward_source = source.reward_density(s.state, s.action, s.reward);
    if (!(reward_source > 0.0))
        throw std::domain_error("ideal_weights: source reward density is zero at the sample");
    double trans_target = target.transition_density(s.state, s.action, s.next_state);
    double trans_source = source.transition_density(s.state, s.action, s.next_state);
    if (!(trans_source > 0.0))
        throw std::domain_error("ideal_weights: source transition density is zero at the sample");
    return {std::min(reward_target / reward_source, config.max_weight),
            std::min(trans_target / trans_source, config.max_weight)};
}

/// Fitted task models used for expected-weight computation: a reward GP and
/// one transition GP per stochastic state dimension, all over inputs (s, a).
struct TaskModels {
    GpModel reward;
    std::vector<GpModel> transition;
};

/// Model-noise variances entering the weight formulas, per task id. kappa is
/// the over-estimation factor applied multiplicatively to every variance.
struct NoiseSpec {
    double kappa = 1.0;
    std::vector<double> reward_noise;       ///< sigma_j^2, indexed by task id
    std::vector<Vec> transition_noise;      ///< delta_{j,d}^2 per stochastic dim

    void validate(std::size_t n_tasks, Eigen::Index n_dims) const {
        if (!(kappa > 0.0)) throw std::invalid_argument("NoiseSpec: kappa must be positive");
        if (reward_noise.size() < n_tasks || transition_noise.size() < n_tasks)
            throw std::invalid_argument("NoiseSpec: missing entries for some task ids");
        for (std::size_t j = 0; j < n_tasks; ++j) {
            if (!(reward_noise[j] > 0.0))
                throw std::invalid_argument("NoiseSpec: reward noise must be positive");
            if (transition_noise[j].size() != n_dims)
                throw std::invalid_argument("NoiseSpec: transition noise dimension mismatch");
            for (Eigen::Index d = 0; d < n_dims; ++d)
                if (!(transition_noise[j][d] > 0.0))
                    throw std::invalid_argument("NoiseSpec: transition noise must be positive");
        }
    }
};

struct WeightedDataset {
    std::vector<WeightedSample> samples;
    WeightDiagnostics reward;
    WeightDiagnostics transition;
    /// Fraction of weight mass per source task id (target excluded).
    std::map<int, double> reward_mass;
    std::map<int, double> transition_mass;
};

namespace detail {

inline void finish_diagnostics(WeightDiagnostics& d, double sum, double sum_sq, std::size_t n) {
    d.second_moment = n > 0 ? sum_sq / static_cast<double>(n) : 0.0;
    d.ess = sum_sq > 0.0 ? sum * sum / sum_sq : 0.0;
}

inline void normalize_mass(std::map<int, double>& mass) {
    double total = 0.0;
    for (const auto& [id, m] : mass) total += m;
    if (total > 0.0)
        for (auto& [id, m] : mass) m /= total;
}

}  // namespace detail

/// Computes expected importance weights for every sample of a pooled dataset.
///
/// models[j] holds the fitted GPs of task id j (0 = target). Target samples
/// get weight exactly 1. Source sample weights follow the closed-form
/// expectation with GP predictions at x = (state, action) and the noise
/// variances kappa * NoiseSpec entries.
inline WeightedDataset compute_dataset_weights(const Dataset& pooled,
                                               const std::vector<TaskModels>& models,
                                               const std::vector<int>& stochastic_dims,
                                               const NoiseSpec& noise,
                                               const WeightConfig& config = {}) {
    const auto n_dims = static_cast<Eigen::Index>(stochastic_dims.size());
    for (int id : pooled.task_ids())
        if (id < 0 || static_cast<std::size_t>(id) >= models.size())
            throw std::invalid_argument("compute_dataset_weights: no models for task id " +
                                        std::to_string(id));
    noise.validate(models.size(), n_dims);
    for (const auto& m : models)
        if (static_cast<Eigen::Index>(m.transition.size()) != n_dims)
            throw std::invalid_argument("compute_dataset_weights: transition model count mismatch");

    WeightedDataset out;
    out.samples.reserve(pooled.size());
    double sum_r = 0.0, sum_r_sq = 0.0, sum_p = 0.0, sum_p_sq = 0.0;
    std::vector<GpPrediction> target_pred(stochastic_dims.size());
    std::vector<GpPrediction> source_pred(stochastic_dims.size());

    for (const auto& s : pooled) {
        WeightedSample w;
        w.sample = s;
        if (s.task_id != 0) {
            const int j = s.task_id;
            Vec x(s.state.size() + 1);
            x.head(s.state.size()) = s.state;
            x[s.state.size()] = static_cast<double>(s.action);

            w.w_r = expected_reward_weight(models[0].reward.predict(x),
                                           noise.kappa * noise.reward_noise[0],
                                           models[j].reward.predict(x),
                                           noise.kappa * noise.reward_noise[j], s.reward, config,
                                           &out.reward.divergence_count);

            Vec observed(n_dims);
            for (Eigen::Index k = 0; k < n_dims; ++k) {
                target_pred[k] = models[0].transition[k].predict(x);
                source_pred[k] = models[j].transition[k].predict(x);
                observed[k] = s.next_state[stochastic_dims[k]];
            }
            w.w_p = expected_transition_weight(target_pred, noise.kappa * noise.transition_noise[0],
                                               source_pred, noise.kappa * noise.transition_noise[j],
                                               observed, config, &out.transition.divergence_count);
            out.reward_mass[j] += w.w_r;
            out.transition_mass[j] += w.w_p;
        }
        sum_r += w.w_r;
        sum_r_sq += w.w_r * w.w_r;
        sum_p += w.w_p;
        sum_p_sq += w.w_p * w.w_p;
        out.reward.max_weight = std::max(out.reward.max_weight, w.w_r);
        out.transition.max_weight = std::max(out.transition.max_weight, w.w_p);
        out.samples.push_back(std::move(w));
    }
    detail::finish_diagnostics(out.reward, sum_r, sum_r_sq, pooled.size());
    detail::finish_diagnostics(out.transition, sum_p, sum_p_sq, pooled.size());
    detail::normalize_mass(out.reward_mass);
    detail::normalize_mass(out.transition_mass);
    return out;
}

/// Ideal-weight analogue of compute_dataset_weights, using true densities.
inline WeightedDataset compute_ideal_weights(const Dataset& pooled, const Environment& target,
                                             const std::vector<const Environment*>& sources,
                                             const WeightConfig& config = {}) {
    WeightedDataset out;
    out.samples.reserve(pooled.size());
    double sum_r = 0.0, sum_r_sq = 0.0, sum_p = 0.0, sum_p_sq = 0.0;
    for (const auto& s : pooled) {
        WeightedSample w;
        w.sample = s;
        if (s.task_id != 0) {
            const auto j = static_cast<std::size_t>(s.task_id - 1);
            if (j >= sources.size())
                throw std::invalid_argument("compute_ideal_weights: no source environment for task id " +
                                            std::to_string(s.task_id));
            std::tie(w.w_r, w.w_p) = ideal_weights(target, *sources[j], s, config);
            out.reward_mass[s.task_id] += w.w_r;
            out.transition_mass[s.task_id] += w.w_p;
        }
        sum_r += w.w_r;
        sum_r_sq += w.w_r * w.w_r;
        sum_p += w.w_p;
        sum_p_sq += w.w_p * w.w_p;
        out.reward.max_weight = std::max(out.reward.max_weight, w.w_r);
        out.transition.max_weight = std::max(out.transition.max_weight, w.w_p);
        out.samples.push_back(std::move(w));
    }
    detail::finish_diagnostics(out.reward, sum_r, sum_r_sq, pooled.size());
    detail::finish_diagnostics(out.transition, sum_p, sum_p_sq, pooled.size());
    detail::normalize_mass(out.reward_mass);
    detail::normalize_mass(out.transition_mass);
    return out;
}

}  // namespace iwfqi
