#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "core.hpp"
#include "environments/water_reservoir.hpp"
#include "fqi.hpp"
#include "gp.hpp"
#include "io.hpp"
#include "svg.hpp"
#include "weights.hpp"

namespace iwfqi {

// ---------------------------------------------------------------------------
// Statistics.

struct MeanCi {
    double mean = 0.0;
    double ci95 = 0.0;  ///< Student-t 95% half-width; 0 with fewer than 2 values
};

/// Two-sided 97.5% Student-t quantile.
inline double t_quantile_975(int df) {
    static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306,
                                   2.262,  2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120,
                                   2.110,  2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
                                   2.060,  2.056, 2.052, 2.048, 2.045, 2.042};
    if (df <= 0) return 0.0;
    if (df <= 30) return table[df - 1];
    return 1.96;
}

inline MeanCi mean_ci(const std::vector<double>& values) {
    MeanCi out;
    const auto n = values.size();
    if (n == 0) return out;
    double sum = 0.0;
    for (double v : values) sum += v;
    out.mean = sum / static_cast<double>(n);
    if (n < 2) return out;
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    out.ci95 = t_quantile_975(static_cast<int>(n) - 1) * sd / std::sqrt(static_cast<double>(n));
    return out;
}

// ---------------------------------------------------------------------------
// Rollouts.

/// Runs n_episodes episodes under the policy, truncating at the horizon.
/// Samples are tagged with task_id; the terminal flag records environment
/// termination, never horizon truncation.
inline Dataset collect_episodes(const Environment& env, const Policy& policy, int n_episodes,
                                Rng& rng, int task_id = 0) {
    Dataset data;
    const TaskSpec& spec = env.task_spec();
    for (int e = 0; e < n_episodes; ++e) {
        Vec s = env.reset(rng);
        for (int t = 0; t < spec.horizon; ++t) {
            if (env.is_terminal(s)) break;
            const int a = policy.act(s, rng);
            StepResult res = env.step(s, a, rng);
            data.push_back({task_id, s, a, res.reward, res.next_state, res.done});
            s = res.next_state;
            if (res.done) break;
        }
    }
    return data;
}

/// Mean discounted return over the environment's evaluation start states.
inline MeanCi evaluate_policy(const Environment& env, const Policy& policy, int episodes,
                              Rng& rng) {
    const TaskSpec& spec = env.task_spec();
    std::vector<double> returns;
    returns.reserve(episodes);
    for (const Vec& start : env.evaluation_starts(episodes)) {
        Vec s = start;
        double ret = 0.0, discount = 1.0;
        for (int t = 0; t < spec.horizon; ++t) {
            if (env.is_terminal(s)) break;
            const int a = policy.act(s, rng);
            StepResult res = env.step(s, a, rng);
            ret += discount * res.reward;
            discount *= spec.gamma;
            s = res.next_state;
            if (res.done) break;
        }
        returns.push_back(ret);
    }
    return mean_ci(returns);
}

// ---------------------------------------------------------------------------
// Source policies.

struct SourcePolicyConfig {
    std::string mode = "pretrained";  ///< pretrained | handcoded | uniform
    int pretrain_episodes = 500;
    int pretrain_rounds = 2;         ///< alternating collect/fit rounds
    double pretrain_epsilon = 0.3;   ///< exploration between pretraining rounds
    double collection_epsilon = 0.1; ///< exploration when generating source data

    void validate() const {
        if (mode != "pretrained" && mode != "handcoded" && mode != "uniform")
            throw std::invalid_argument("SourcePolicyConfig: unknown mode " + mode);
        if (pretrain_episodes <= 0 || pretrain_rounds <= 0)
            throw std::invalid_argument("SourcePolicyConfig: pretraining budget must be positive");
        if (!(pretrain_epsilon >= 0.0 && pretrain_epsilon <= 1.0) ||
            !(collection_epsilon >= 0.0 && collection_epsilon <= 1.0))
            throw std::invalid_argument("SourcePolicyConfig: epsilon out of range");
    }
};

inline std::vector<WeightedSample> unit_weights(const Dataset& data) {
    std::vector<WeightedSample> out;
    out.reserve(data.size());
    for (const auto& s : data) out.push_back({s, 1.0, 1.0});
    return out;
}

inline void append_dataset(Dataset& into, const Dataset& extra) {
    for (const auto& s : extra) into.push_back(s);
}

/// Trains a Q-function on the environment with plain FQI, alternating data
/// collection (uniform, then epsilon-greedy on the latest fit) with refits
/// on everything collected so far.
inline std::shared_ptr<const QFunction> pretrain_q(const Environment& env,
                                                   const SourcePolicyConfig& cfg, FqiConfig fqi,
                                                   std::uint64_t seed_root) {
    fqi.variant = Variant::plain;
    const TaskSpec& spec = env.task_spec();
    Dataset data;
    std::shared_ptr<const QFunction> q;
    const int per_round = cfg.pretrain_episodes / cfg.pretrain_rounds;
    for (int round = 0; round < cfg.pretrain_rounds; ++round) {
        const int budget = round + 1 == cfg.pretrain_rounds
                               ? cfg.pretrain_episodes - per_round * round
                               : per_round;
        Policy p = q ? Policy::epsilon_greedy(q, cfg.pretrain_epsilon)
                     : Policy::uniform(spec.action_count);
        auto rng = make_rng(seed_root, {stream::pretrain, static_cast<std::uint64_t>(round),
                                        stream::collect});
        append_dataset(data, collect_episodes(env, p, budget, rng));
        auto result = run_algorithm(fqi, spec, unit_weights(data),
                                    derive_seed(seed_root, {stream::pretrain,
                                                            static_cast<std::uint64_t>(round),
                                                            stream::fqi}));
        q = result.q;
    }
    return q;
}

/// Rule-based reservoir operator: request the demand, plus whatever sits
/// above the flood threshold, rounded to the closest release action.
inline Policy reservoir_expert_policy(const WaterReservoir& env) {
    const auto& cfg = env.config();
    const int n = cfg.release_action_count;
    std::vector<double> releases(n);
    for (int a = 0; a < n; ++a) releases[a] = env.release_volume(a);
    const double demand = cfg.demand, flood = cfg.flood_threshold;
    return Policy::fixed(n, [releases, demand, flood](const Vec& s) {
        const double want = demand + std::max(0.0, s[1] - flood);
        int best = 0;
        for (int a = 1; a < static_cast<int>(releases.size()); ++a)
            if (std::abs(releases[a] - want) < std::abs(releases[best] - want)) best = a;
        return best;
    });
}

/// Builds the data-collection policy for a source task. Pretrained policies
/// come back epsilon-greedy with the configured collection epsilon;
/// handcoded ones are deterministic rules.
inline Policy make_source_policy(const Environment& env, const SourcePolicyConfig& cfg,
                                 const FqiConfig& pretrain_fqi, std::uint64_t seed_root) {
    cfg.validate();
    if (cfg.mode == "uniform") return Policy::uniform(env.task_spec().action_count);
    if (cfg.mode == "handcoded") {
        const auto* reservoir = dynamic_cast<const WaterReservoir*>(&env);
        if (!reservoir)
            throw std::invalid_argument("make_source_policy: no handcoded policy for " +
                                        env.name());
        return reservoir_expert_policy(*reservoir);
    }
    auto q = pretrain_q(env, cfg, pretrain_fqi, seed_root);
    if (cfg.collection_epsilon == 0.0) return Policy::greedy(q);
    return Policy::epsilon_greedy(q, cfg.collection_epsilon);
}

// ---------------------------------------------------------------------------
// GP task models.

/// Deterministically subsamples up to cap row indices of [begin, end),
/// preserving index order.
inline std::vector<std::size_t> subsample_range(std::size_t begin, std::size_t end,
                                                std::size_t cap, Rng& rng) {
    std::vector<std::size_t> rows;
    rows.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) rows.push_back(i);
    if (rows.size() <= cap) return rows;
    for (std::size_t i = 0; i < cap; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, rows.size() - 1);
        std::swap(rows[i], rows[pick(rng)]);
    }
    rows.resize(cap);
    std::sort(rows.begin(), rows.end());
    return rows;
}

inline GpModel fit_gp(const Mat& X, const Vec& y, double noise_var, GpFitOptions options,
                      std::uint64_t seed) {
    options.seed = seed;
    KernelParams init;
    const double mean = y.mean();
    const double var = (y.array() - mean).square().sum() / std::max<double>(1, y.size() - 1);
    init.signal_variance = std::max(var, 1e-6);
    init.length_scales = Vec(X.cols());
    for (Eigen::Index d = 0; d < X.cols(); ++d) {
        const double cm = X.col(d).mean();
        const double cs = std::sqrt((X.col(d).array() - cm).square().sum() /
                                    std::max<double>(1, X.rows() - 1));
        init.length_scales[d] = cs > 1e-9 ? cs : 1.0;
    }
    init.noise_variance = noise_var;
    return GpModel::fit(X, y, init, options);
}

/// Fits the reward GP and one transition GP per stochastic dimension on a
/// task's samples, subsampled to at most cap rows.
inline TaskModels fit_task_models(const Dataset& data, int task_id,
                                  const std::vector<int>& stochastic_dims,
                                  const NoiseSpec& noise, const GpFitOptions& options,
                                  std::size_t cap, std::uint64_t seed_root,
                                  std::uint64_t batch_tag) {
    const auto [begin, end] = data.task_range(task_id);
    if (begin == end)
        throw std::invalid_argument("fit_task_models: no samples for task " +
                                    std::to_string(task_id));
    auto rng = make_rng(seed_root, {stream::subsample, static_cast<std::uint64_t>(task_id),
                                    batch_tag});
    const auto rows = subsample_range(begin, end, cap, rng);

    const auto dim = data.state_dim();
    Mat X(rows.size(), dim + 1);
    Vec reward(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& s = data[rows[i]];
        X.row(i).head(dim) = s.state.transpose();
        X(i, dim) = static_cast<double>(s.action);
        reward[i] = s.reward;
    }

    const auto task = static_cast<std::size_t>(task_id);
    TaskModels models{
        fit_gp(X, reward, noise.kappa * noise.reward_noise[task], options,
               derive_seed(seed_root,
                           {stream::gp, static_cast<std::uint64_t>(task_id), batch_tag, 0})),
        {}};
    models.transition.reserve(stochastic_dims.size());
    for (std::size_t k = 0; k < stochastic_dims.size(); ++k) {
        Vec y(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            y[i] = data[rows[i]].next_state[stochastic_dims[k]];
        models.transition.push_back(
            fit_gp(X, y, noise.kappa * noise.transition_noise[task][k], options,
                   derive_seed(seed_root, {stream::gp, static_cast<std::uint64_t>(task_id),
                                           batch_tag, 1 + k})));
    }
    return models;
}

// ---------------------------------------------------------------------------
// Experiment configuration.

struct EvaluationProtocol {
    int episodes = 10;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::filesystem::path target_preset;
    std::vector<std::filesystem::path> source_presets;
    std::vector<int> source_episodes{20};  ///< per source task; one entry broadcasts
    SourcePolicyConfig source_policy;
    FqiConfig pretrain_fqi;
    int target_batch_size = 4;
    int target_batches = 5;
    double collection_epsilon = 0.3;
    std::string first_batch = "uniform";  ///< uniform | handcoded
    std::vector<Variant> variants{Variant::plain, Variant::iwfqi};
    FqiConfig fqi;
    GpFitOptions gp;
    std::size_t gp_subsample = 300;
    NoiseSpec noise;
    WeightConfig weights;
    EvaluationProtocol evaluation;
    std::vector<std::uint64_t> seeds{1};
    int jobs = 0;  ///< seed workers; 0 = hardware concurrency

    int source_episode_count(std::size_t j) const {
        return source_episodes.size() == 1 ? source_episodes[0]
                                           : source_episodes[j];
    }

    void validate() const {
        if (target_preset.empty()) throw std::invalid_argument("ExperimentConfig: missing target");
        if (target_batch_size <= 0 || target_batches <= 0)
            throw std::invalid_argument("ExperimentConfig: target budget must be positive");
        if (!source_presets.empty()) {
            if (source_episodes.size() != 1 && source_episodes.size() != source_presets.size())
                throw std::invalid_argument(
                    "ExperimentConfig: source_episodes must be one value or one per source");
            for (std::size_t j = 0; j < source_presets.size(); ++j)
                if (source_episode_count(j) <= 0)
                    throw std::invalid_argument(
                        "ExperimentConfig: source budget must be positive");
        }
        if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: need at least one seed");
        if (variants.empty()) throw std::invalid_argument("ExperimentConfig: need a variant");
        if (!(collection_epsilon >= 0.0 && collection_epsilon <= 1.0))
            throw std::invalid_argument("ExperimentConfig: collection epsilon out of range");
        if (first_batch != "uniform" && first_batch != "handcoded")
            throw std::invalid_argument("ExperimentConfig: unknown first_batch policy");
        if (evaluation.episodes <= 0)
            throw std::invalid_argument("ExperimentConfig: evaluation episodes must be positive");
        source_policy.validate();
        bool needs_sources = false;
        for (Variant v : variants) needs_sources |= v != Variant::plain;
        if (needs_sources && source_presets.empty())
            throw std::invalid_argument("ExperimentConfig: transfer variants need source tasks");
    }
};

inline FqiConfig fqi_from_json(const Json& j, FqiConfig base = {}) {
    base.iterations = j.value("iterations", base.iterations);
    base.ert.n_estimators = j.value("trees", base.ert.n_estimators);
    base.ert.min_samples_split = j.value("min_samples_split", base.ert.min_samples_split);
    base.ert.n_candidate_splits = j.value("candidate_splits", base.ert.n_candidate_splits);
    base.clamp_q = j.value("clamp_q", base.clamp_q);
    base.per_action_forest = j.value("per_action_forest", base.per_action_forest);
    return base;
}

inline NoiseSpec noise_from_json(const Json& j) {
    NoiseSpec noise;
    noise.kappa = j.value("kappa", 1.0);
    for (const auto& t : j.value("tasks", Json::array())) {
        noise.reward_noise.push_back(t.at("reward").get<double>());
        const auto& tr = t.at("transition");
        Vec v(tr.size());
        for (std::size_t d = 0; d < tr.size(); ++d) v[d] = tr[d].get<double>();
        noise.transition_noise.push_back(std::move(v));
    }
    return noise;
}

inline ExperimentConfig experiment_from_json(const Json& j,
                                             const std::filesystem::path& base_dir) {
    auto resolve = [&base_dir](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };
    ExperimentConfig cfg;
    cfg.name = j.value("name", cfg.name);
    cfg.target_preset = resolve(j.at("target").get<std::string>());
    for (const auto& s : j.value("sources", Json::array()))
        cfg.source_presets.push_back(resolve(s.get<std::string>()));
    if (j.contains("source_episodes")) {
        cfg.source_episodes.clear();
        if (j["source_episodes"].is_array())
            for (const auto& e : j["source_episodes"]) cfg.source_episodes.push_back(e.get<int>());
        else
            cfg.source_episodes.push_back(j["source_episodes"].get<int>());
    }
    if (j.contains("source_policy")) {
        const auto& p = j["source_policy"];
        cfg.source_policy.mode = p.value("mode", cfg.source_policy.mode);
        cfg.source_policy.pretrain_episodes =
            p.value("pretrain_episodes", cfg.source_policy.pretrain_episodes);
        cfg.source_policy.pretrain_rounds =
            p.value("pretrain_rounds", cfg.source_policy.pretrain_rounds);
        cfg.source_policy.pretrain_epsilon =
            p.value("pretrain_epsilon", cfg.source_policy.pretrain_epsilon);
        cfg.source_policy.collection_epsilon =
            p.value("collection_epsilon", cfg.source_policy.collection_epsilon);
    }
    if (j.contains("pretrain_fqi")) cfg.pretrain_fqi = fqi_from_json(j["pretrain_fqi"]);
    cfg.target_batch_size = j.value("target_batch_size", cfg.target_batch_size);
    cfg.target_batches = j.value("target_batches", cfg.target_batches);
    cfg.collection_epsilon = j.value("collection_epsilon", cfg.collection_epsilon);
    cfg.first_batch = j.value("first_batch", cfg.first_batch);
    if (j.contains("variants")) {
        cfg.variants.clear();
        for (const auto& v : j["variants"]) cfg.variants.push_back(parse_variant(v));
    }
    if (j.contains("fqi")) cfg.fqi = fqi_from_json(j["fqi"]);
    if (j.contains("gp")) {
        const auto& g = j["gp"];
        cfg.gp.optimize = g.value("optimize", cfg.gp.optimize);
        cfg.gp.optimize_noise = g.value("optimize_noise", cfg.gp.optimize_noise);
        cfg.gp.restarts = g.value("restarts", cfg.gp.restarts);
        cfg.gp.max_iterations = g.value("max_iterations", cfg.gp.max_iterations);
        cfg.gp_subsample = g.value("subsample", cfg.gp_subsample);
    }
    if (j.contains("noise")) cfg.noise = noise_from_json(j["noise"]);
    if (j.contains("weights")) {
        const auto& w = j["weights"];
        cfg.weights.max_weight = w.value("max_weight", cfg.weights.max_weight);
        cfg.weights.variance_clamp_ratio =
            w.value("variance_clamp_ratio", cfg.weights.variance_clamp_ratio);
    }
    if (j.contains("evaluation"))
        cfg.evaluation.episodes = j["evaluation"].value("episodes", cfg.evaluation.episodes);
    if (j.contains("seeds")) {
        cfg.seeds.clear();
        for (const auto& s : j["seeds"]) cfg.seeds.push_back(s.get<std::uint64_t>());
    }
    cfg.jobs = j.value("jobs", cfg.jobs);
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
    return experiment_from_json(io::load_json(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Experiment execution.

struct SeedOutput {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::vector<io::ReturnRow> returns;
    std::vector<io::TransferRow> transfer;
    std::vector<io::DiagnosticRow> diagnostics;
    std::vector<io::IterationRow> iterations;
};

struct ExperimentOutput {
    std::vector<SeedOutput> seeds;
    std::vector<io::ResultRow> results;
    std::map<std::string, std::vector<io::TransferSummaryRow>> transfer;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::uint64_t variant_tag(Variant v) { return static_cast<std::uint64_t>(v) + 1; }

inline void record_weight_rows(SeedOutput& out, const WeightedDataset& wd,
                               const std::string& variant, std::uint64_t seed, int batch) {
    for (const auto& [id, mass] : wd.reward_mass) {
        io::TransferRow row{variant, seed, batch, id, mass, 0.0};
        auto it = wd.transition_mass.find(id);
        if (it != wd.transition_mass.end()) row.transition_mass = it->second;
        out.transfer.push_back(row);
    }
    out.diagnostics.push_back({variant, seed, batch, "reward", wd.reward.second_moment,
                               wd.reward.ess, wd.reward.max_weight, wd.reward.divergence_count});
    out.diagnostics.push_back({variant, seed, batch, "transition", wd.transition.second_moment,
                               wd.transition.ess, wd.transition.max_weight,
                               wd.transition.divergence_count});
}

}  // namespace detail

/// Runs every variant for one seed. Batch 1 target data is shared across
/// variants; afterwards each variant collects with its own epsilon-greedy
/// policy. Source data is collected once per seed.
inline SeedOutput run_seed(const ExperimentConfig& cfg, const Environment& target,
                           const std::vector<std::unique_ptr<Environment>>& sources,
                           const std::vector<Policy>& source_policies, std::uint64_t seed) {
    SeedOutput out;
    out.seed = seed;
    const TaskSpec& spec = target.task_spec();
    const std::vector<int> sdims = target.stochastic_dims();

    std::vector<Dataset> source_sets;
    for (std::size_t j = 0; j < sources.size(); ++j) {
        auto rng = make_rng(seed, {stream::harness, stream::collect, 200 + j});
        source_sets.push_back(collect_episodes(*sources[j], source_policies[j],
                                               cfg.source_episode_count(j), rng,
                                               static_cast<int>(j) + 1));
        if (source_sets.back().empty())
            throw std::runtime_error("source task produced no samples");
    }

    // models[0] holds the target task and is refit every batch; source
    // models are fit once per seed, lazily at the first transfer batch.
    std::vector<TaskModels> models;
    std::vector<const Environment*> source_ptrs;
    for (const auto& s : sources) source_ptrs.push_back(s.get());

    // Batch 1 collection is shared by every variant.
    Policy first_policy = Policy::uniform(spec.action_count);
    if (cfg.first_batch == "handcoded") {
        const auto* reservoir = dynamic_cast<const WaterReservoir*>(&target);
        if (!reservoir)
            throw std::invalid_argument("first_batch=handcoded needs a reservoir target");
        first_policy = reservoir_expert_policy(*reservoir);
    }
    auto first_rng = make_rng(seed, {stream::harness, stream::collect, 0});
    const Dataset first_batch =
        collect_episodes(target, first_policy, cfg.target_batch_size, first_rng);
    if (first_batch.empty()) throw std::runtime_error("first target batch produced no samples");

    for (Variant variant : cfg.variants) {
        const std::string vname = variant_name(variant);
        const std::uint64_t vtag = detail::variant_tag(variant);
        Dataset target_data = first_batch;
        std::shared_ptr<const QFunction> q;

        for (int batch = 1; batch <= cfg.target_batches; ++batch) {
            if (batch > 1) {
                Policy p = Policy::epsilon_greedy(q, cfg.collection_epsilon);
                auto rng = make_rng(seed, {stream::harness, stream::collect, 100 + vtag,
                                           static_cast<std::uint64_t>(batch)});
                append_dataset(target_data,
                               collect_episodes(target, p, cfg.target_batch_size, rng));
            }

            std::vector<WeightedSample> algo_data;
            if (variant == Variant::plain) {
                algo_data = unit_weights(target_data);
            } else if (variant == Variant::iwfqi) {
                TaskModels target_models =
                    fit_task_models(target_data, 0, sdims, cfg.noise, cfg.gp, cfg.gp_subsample,
                                    seed, static_cast<std::uint64_t>(batch));
                if (models.empty()) {
                    models.push_back(std::move(target_models));
                    for (std::size_t j = 0; j < sources.size(); ++j)
                        models.push_back(fit_task_models(source_sets[j], static_cast<int>(j) + 1,
                                                         sdims, cfg.noise, cfg.gp,
                                                         cfg.gp_subsample, seed, 0));
                } else {
                    models[0] = std::move(target_models);
                }
                Dataset pooled = pool_datasets(target_data, source_sets);
                WeightedDataset wd =
                    compute_dataset_weights(pooled, models, sdims, cfg.noise, cfg.weights);
                detail::record_weight_rows(out, wd, vname, seed, batch);
                algo_data = std::move(wd.samples);
            } else {
                Dataset pooled = pool_datasets(target_data, source_sets);
                WeightedDataset wd =
                    compute_ideal_weights(pooled, target, source_ptrs, cfg.weights);
                detail::record_weight_rows(out, wd, vname, seed, batch);
                algo_data = std::move(wd.samples);
            }

            FqiConfig fqi = cfg.fqi;
            fqi.variant = variant;
            AlgorithmResult result =
                run_algorithm(fqi, spec, algo_data,
                              derive_seed(seed, {stream::harness, vtag,
                                                 static_cast<std::uint64_t>(batch)}));
            q = result.q;
            for (const auto& rec : result.log)
                out.iterations.push_back({vname, seed, batch, rec});

            auto eval_rng = make_rng(seed, {stream::eval, vtag,
                                            static_cast<std::uint64_t>(batch)});
            MeanCi eval = evaluate_policy(target, Policy::greedy(q), cfg.evaluation.episodes,
                                          eval_rng);
            out.returns.push_back({vname, seed, batch, batch * cfg.target_batch_size, eval.mean});
        }
    }
    out.ok = true;
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation.

/// Collapses per-seed returns into one mean and CI per (variant, batch).
/// Variants keep their first-appearance order; batches sort ascending.
inline std::vector<io::ResultRow> aggregate_returns(const std::vector<io::ReturnRow>& rows) {
    std::vector<std::string> variant_order;
    std::map<std::string, std::map<int, std::pair<int, std::vector<double>>>> grouped;
    for (const auto& r : rows) {
        if (grouped.find(r.variant) == grouped.end()) variant_order.push_back(r.variant);
        auto& cell = grouped[r.variant][r.batch];
        cell.first = r.episodes_seen;
        cell.second.push_back(r.mean_return);
    }
    std::vector<io::ResultRow> out;
    for (const auto& v : variant_order)
        for (const auto& [batch, cell] : grouped[v]) {
            MeanCi stats = mean_ci(cell.second);
            out.push_back({batch, cell.first, stats.mean, stats.ci95, v,
                           static_cast<int>(cell.second.size())});
        }
    return out;
}

/// Averages per-seed transfer masses for one variant.
inline std::vector<io::TransferSummaryRow> aggregate_transfer(
    const std::vector<io::TransferRow>& rows, const std::string& variant) {
    std::map<std::pair<int, int>, std::pair<std::vector<double>, std::vector<double>>> grouped;
    for (const auto& r : rows) {
        if (r.variant != variant) continue;
        auto& cell = grouped[{r.batch, r.source_id}];
        cell.first.push_back(r.reward_mass);
        cell.second.push_back(r.transition_mass);
    }
    std::vector<io::TransferSummaryRow> out;
    for (const auto& [key, cell] : grouped)
        out.push_back({key.first, key.second, mean_ci(cell.first).mean,
                       mean_ci(cell.second).mean});
    return out;
}

namespace detail {

inline void write_charts(const std::filesystem::path& out_dir, const ExperimentOutput& output,
                         const std::string& experiment_name) {
    std::vector<svg::Series> curves;
    std::vector<std::string> variant_order;
    for (const auto& r : output.results) {
        bool seen = false;
        for (const auto& v : variant_order) seen |= v == r.variant;
        if (!seen) variant_order.push_back(r.variant);
    }
    for (const auto& v : variant_order) {
        svg::Series s;
        s.label = v;
        for (const auto& r : output.results)
            if (r.variant == v) {
                s.x.push_back(r.episodes_seen);
                s.y.push_back(r.mean_return);
                s.band.push_back(r.ci95);
            }
        curves.push_back(std::move(s));
    }
    io::write_text(out_dir / "learning_curve.svg",
                   svg::line_chart(experiment_name, "target episodes", "discounted return",
                                   curves));

    for (const auto& [variant, rows] : output.transfer) {
        std::map<int, svg::Series> reward, transition;
        for (const auto& r : rows) {
            auto& sr = reward[r.source_id];
            sr.label = "task " + std::to_string(r.source_id) + " reward";
            sr.x.push_back(r.batch);
            sr.y.push_back(r.reward_mass);
            auto& st = transition[r.source_id];
            st.label = "task " + std::to_string(r.source_id) + " transition";
            st.x.push_back(r.batch);
            st.y.push_back(r.transition_mass);
        }
        std::vector<svg::Series> series;
        for (auto& [id, s] : reward) series.push_back(std::move(s));
        for (auto& [id, s] : transition) series.push_back(std::move(s));
        io::write_text(out_dir / ("transfer_" + variant + ".svg"),
                       svg::line_chart(experiment_name + ": weight mass per source", "batch",
                                       "fraction of weight mass", series));
    }
}

}  // namespace detail

/// Writes per-seed CSVs, aggregated results, charts, and a run summary.
inline void write_experiment_outputs(const std::filesystem::path& out_dir,
                                     const ExperimentConfig& cfg, ExperimentOutput& output) {
    std::filesystem::create_directories(out_dir);
    std::vector<io::ReturnRow> all_returns;
    std::vector<io::TransferRow> all_transfer;
    for (const auto& s : output.seeds) {
        if (!s.ok) continue;
        const auto seed_dir = out_dir / "seeds" / ("seed_" + std::to_string(s.seed));
        io::write_text(seed_dir / "returns.csv", io::returns_csv(s.returns));
        io::write_text(seed_dir / "transfer.csv", io::transfer_rows_csv(s.transfer));
        io::write_text(seed_dir / "diagnostics.csv", io::diagnostics_csv(s.diagnostics));
        io::write_text(seed_dir / "iterations.csv", io::iterations_csv(s.iterations));
        all_returns.insert(all_returns.end(), s.returns.begin(), s.returns.end());
        all_transfer.insert(all_transfer.end(), s.transfer.begin(), s.transfer.end());
    }

    output.results = aggregate_returns(all_returns);
    output.transfer.clear();
    for (Variant v : cfg.variants) {
        if (v == Variant::plain) continue;
        auto rows = aggregate_transfer(all_transfer, variant_name(v));
        if (!rows.empty()) output.transfer[variant_name(v)] = std::move(rows);
    }

    io::write_text(out_dir / "results.csv", io::results_csv(output.results));
    for (const auto& [variant, rows] : output.transfer)
        io::write_text(out_dir / ("transfer_" + variant + ".csv"),
                       io::transfer_summary_csv(rows));
    detail::write_charts(out_dir, output, cfg.name);

    Json summary;
    summary["name"] = cfg.name;
    summary["seeds_completed"] = Json::array();
    summary["seeds_failed"] = Json::array();
    for (const auto& s : output.seeds) {
        if (s.ok)
            summary["seeds_completed"].push_back(s.seed);
        else
            summary["seeds_failed"].push_back({{"seed", s.seed}, {"error", s.error}});
    }
    summary["warnings"] = output.warnings;
    io::write_text(out_dir / "run.json", summary.dump(2) + "\n");
}

/// Re-aggregates per-seed CSVs already on disk into results, transfer
/// summaries, and charts. Seeds are processed in ascending numeric order,
/// so the output matches the original run byte-for-byte when the run's
/// seed list was ascending. The name only labels the charts.
inline void rebuild_report(const std::filesystem::path& out_dir,
                           const std::string& name = "experiment") {
    const auto seeds_root = out_dir / "seeds";
    std::vector<std::pair<long long, std::filesystem::path>> seed_dirs;
    if (std::filesystem::exists(seeds_root))
        for (const auto& entry : std::filesystem::directory_iterator(seeds_root)) {
            if (!entry.is_directory()) continue;
            const std::string leaf = entry.path().filename().string();
            if (leaf.rfind("seed_", 0) != 0) continue;
            seed_dirs.emplace_back(std::stoll(leaf.substr(5)), entry.path());
        }
    std::sort(seed_dirs.begin(), seed_dirs.end());

    std::vector<io::ReturnRow> all_returns;
    std::vector<io::TransferRow> all_transfer;
    for (const auto& [seed, dir] : seed_dirs) {
        for (const auto& r : io::read_returns_csv(dir / "returns.csv"))
            all_returns.push_back(r);
        if (std::filesystem::exists(dir / "transfer.csv"))
            for (const auto& r : io::read_transfer_rows_csv(dir / "transfer.csv"))
                all_transfer.push_back(r);
    }
    if (all_returns.empty())
        throw std::runtime_error("rebuild_report: no per-seed returns under " +
                                 seeds_root.string());

    ExperimentOutput output;
    output.results = aggregate_returns(all_returns);
    std::vector<std::string> transfer_variants;
    for (const auto& r : all_transfer) {
        bool seen = false;
        for (const auto& v : transfer_variants) seen |= v == r.variant;
        if (!seen) transfer_variants.push_back(r.variant);
    }
    for (const auto& v : transfer_variants)
        output.transfer[v] = aggregate_transfer(all_transfer, v);

    io::write_text(out_dir / "results.csv", io::results_csv(output.results));
    for (const auto& [variant, rows] : output.transfer)
        io::write_text(out_dir / ("transfer_" + variant + ".csv"),
                       io::transfer_summary_csv(rows));
    detail::write_charts(out_dir, output, name);
}

/// Full pipeline: load presets, pretrain source policies once, run every
/// seed (in parallel workers), then aggregate and write artifacts. A failed
/// seed is logged and skipped; aggregation covers the seeds that finished.
inline ExperimentOutput run_experiment(const ExperimentConfig& cfg,
                                       const std::filesystem::path& out_dir,
                                       bool quiet = false) {
    cfg.validate();
    auto target = load_environment(cfg.target_preset);
    std::vector<std::unique_ptr<Environment>> sources;
    for (const auto& p : cfg.source_presets) {
        sources.push_back(load_environment(p));
        if (sources.back()->task_spec().state_dim != target->task_spec().state_dim ||
            sources.back()->task_spec().action_count != target->task_spec().action_count)
            throw std::invalid_argument("source task shape differs from the target: " +
                                        p.string());
    }

    for (Variant v : cfg.variants)
        if (v == Variant::iwfqi)
            cfg.noise.validate(sources.size() + 1,
                               static_cast<Eigen::Index>(target->stochastic_dims().size()));

    std::vector<Policy> source_policies;
    for (std::size_t j = 0; j < sources.size(); ++j) {
        if (!quiet && cfg.source_policy.mode == "pretrained")
            std::fprintf(stderr, "[%s] pretraining source policy %zu\n", cfg.name.c_str(), j + 1);
        source_policies.push_back(make_source_policy(*sources[j], cfg.source_policy,
                                                     cfg.pretrain_fqi,
                                                     derive_seed(0, {stream::pretrain, j})));
    }

    ExperimentOutput output;
    output.seeds.resize(cfg.seeds.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cfg.seeds.size()) return;
            const std::uint64_t seed = cfg.seeds[i];
            SeedOutput result;
            try {
                result = run_seed(cfg, *target, sources, source_policies, seed);
            } catch (const std::exception& e) {
                result.seed = seed;
                result.ok = false;
                result.error = e.what();
            }
            if (!quiet) {
                std::lock_guard<std::mutex> lock(log_mutex);
                std::fprintf(stderr, "[%s] seed %llu %s\n", cfg.name.c_str(),
                             static_cast<unsigned long long>(seed),
                             result.ok ? "done" : ("failed: " + result.error).c_str());
            }
            output.seeds[i] = std::move(result);
        }
    };

    int jobs = cfg.jobs > 0 ? cfg.jobs : static_cast<int>(std::thread::hardware_concurrency());
    jobs = std::max(1, std::min<int>(jobs, static_cast<int>(cfg.seeds.size())));
    std::vector<std::thread> threads;
    for (int t = 0; t < jobs - 1; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();

    for (const auto& s : output.seeds)
        if (!s.ok)
            output.warnings.push_back("seed " + std::to_string(s.seed) +
                                      " failed: " + s.error + "; aggregation skips it");

    write_experiment_outputs(out_dir, cfg, output);
    return output;
}

}  // namespace iwfqi
