#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <iwfqi/harness.hpp>

namespace fs = std::filesystem;

namespace {

/// Accepts a literal path or a bare preset name looked up under configs/
/// (relative to the working directory or the installed binary).
fs::path resolve_preset(const std::string& name, const char* argv0) {
    if (fs::exists(name)) return name;
    std::vector<fs::path> roots{fs::current_path()};
    std::error_code ec;
    fs::path exe = fs::canonical("/proc/self/exe", ec);
    if (ec) exe = fs::absolute(argv0);
    roots.push_back(exe.parent_path() / "..");
    for (const auto& root : roots)
        for (const char* sub : {"configs/env", "configs/experiments"}) {
            fs::path candidate = root / sub / (name + ".json");
            if (fs::exists(candidate)) return candidate;
        }
    throw std::runtime_error("preset not found: " + name);
}

iwfqi::Policy named_policy(const std::string& name, const iwfqi::Environment& env) {
    if (name == "uniform") return iwfqi::Policy::uniform(env.task_spec().action_count);
    if (name == "handcoded") {
        const auto* reservoir = dynamic_cast<const iwfqi::WaterReservoir*>(&env);
        if (!reservoir)
            throw std::runtime_error("no handcoded policy for " + env.name());
        return iwfqi::reservoir_expert_policy(*reservoir);
    }
    throw std::runtime_error("unknown policy: " + name);
}

iwfqi::ExperimentConfig load_config(const std::string& config, const char* argv0,
                                    const std::string& variant, bool has_seed,
                                    std::uint64_t seed) {
    auto cfg = iwfqi::load_experiment(resolve_preset(config, argv0));
    if (!variant.empty()) cfg.variants = {iwfqi::parse_variant(variant)};
    if (has_seed) cfg.seeds = {seed};
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sample-transfer experiments: weighted FQI with GP task models"};
    app.require_subcommand(1);

    std::string config, preset, out, variant, policy = "uniform";
    std::uint64_t seed = 0;
    int episodes = 20;

    auto* collect = app.add_subcommand("collect", "roll out a policy and save the dataset");
    collect->add_option("--preset", preset, "environment preset (name or path)")->required();
    collect->add_option("--episodes", episodes, "episodes to collect");
    collect->add_option("--policy", policy, "uniform or handcoded");
    collect->add_option("--seed", seed, "rng seed");
    collect->add_option("--out", out, "output csv")->required();

    auto* evaluate = app.add_subcommand("evaluate", "estimate a policy's discounted return");
    evaluate->add_option("--preset", preset, "environment preset (name or path)")->required();
    evaluate->add_option("--episodes", episodes, "evaluation episodes");
    evaluate->add_option("--policy", policy, "uniform or handcoded");
    evaluate->add_option("--seed", seed, "rng seed");

    auto* train = app.add_subcommand("train", "run one seed of an experiment");
    train->add_option("--config", config, "experiment config (name or path)")->required();
    train->add_option("--seed", seed, "seed to run")->required();
    train->add_option("--out", out, "output directory")->required();
    train->add_option("--variant", variant, "restrict to plain, iwfqi, or iwfqi-ideal");

    auto* report = app.add_subcommand("report", "re-aggregate per-seed csv files");
    report->add_option("--out", out, "experiment output directory")->required();

    auto* run = app.add_subcommand("run", "full pipeline over all configured seeds");
    run->add_option("--config", config, "experiment config (name or path)")->required();
    run->add_option("--out", out, "output directory")->required();
    run->add_option("--variant", variant, "restrict to plain, iwfqi, or iwfqi-ideal");
    auto* run_seed_opt = run->add_option("--seed", seed, "run a single seed instead");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*collect) {
            auto env = iwfqi::load_environment(resolve_preset(preset, argv[0]));
            auto rng = iwfqi::make_rng(seed, {iwfqi::stream::collect});
            auto data =
                iwfqi::collect_episodes(*env, named_policy(policy, *env), episodes, rng);
            iwfqi::io::write_text(out, iwfqi::io::dataset_csv(data));
            std::fprintf(stderr, "wrote %zu transitions to %s\n", data.size(), out.c_str());
        } else if (*evaluate) {
            auto env = iwfqi::load_environment(resolve_preset(preset, argv[0]));
            auto rng = iwfqi::make_rng(seed, {iwfqi::stream::eval});
            auto stats =
                iwfqi::evaluate_policy(*env, named_policy(policy, *env), episodes, rng);
            std::printf("mean_return %.10g\nci95 %.10g\n", stats.mean, stats.ci95);
        } else if (*train) {
            auto cfg = load_config(config, argv[0], variant, true, seed);
            iwfqi::run_experiment(cfg, out);
        } else if (*report) {
            std::string name = "experiment";
            const fs::path summary = fs::path(out) / "run.json";
            if (fs::exists(summary))
                name = iwfqi::io::load_json(summary).value("name", name);
            iwfqi::rebuild_report(out, name);
            std::fprintf(stderr, "rebuilt aggregates under %s\n", out.c_str());
        } else if (*run) {
            auto cfg = load_config(config, argv[0], variant,
                                   run_seed_opt->count() > 0, seed);
            iwfqi::run_experiment(cfg, out);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
