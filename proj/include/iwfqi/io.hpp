#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "environments/acrobot.hpp"
#include "environments/puddle_world.hpp"
#include "environments/water_reservoir.hpp"
#include "fqi.hpp"
#include "weights.hpp"

namespace iwfqi {

using Json = nlohmann::json;

namespace io {

/// Formats a double with enough digits to round-trip exactly.
inline std::string full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// Formats a double for human-facing result tables.
inline std::string brief(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Json load_json(const std::filesystem::path& path) {
    return Json::parse(read_text(path));
}

// ---------------------------------------------------------------------------
// Dataset CSV: task_id,action,reward,terminal,s0..,ns0..

inline std::string dataset_csv(const Dataset& data) {
    std::ostringstream out;
    const auto dim = data.state_dim();
    out << "task_id,action,reward,terminal";
    for (Eigen::Index d = 0; d < dim; ++d) out << ",s" << d;
    for (Eigen::Index d = 0; d < dim; ++d) out << ",ns" << d;
    out << "\n";
    for (const auto& s : data) {
        out << s.task_id << ',' << s.action << ',' << full(s.reward) << ',' << (s.terminal ? 1 : 0);
        for (Eigen::Index d = 0; d < dim; ++d) out << ',' << full(s.state[d]);
        for (Eigen::Index d = 0; d < dim; ++d) out << ',' << full(s.next_state[d]);
        out << '\n';
    }
    return out.str();
}

inline void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
    write_text(path, dataset_csv(data));
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    return fields;
}

inline Dataset read_dataset_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty dataset file: " + path.string());
    auto header = split_csv_line(line);
    if (header.size() < 6 || header[0] != "task_id")
        throw std::runtime_error("unrecognized dataset header in " + path.string());
    const auto dim = static_cast<Eigen::Index>((header.size() - 4) / 2);
    Dataset data;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != header.size())
            throw std::runtime_error("malformed dataset row in " + path.string());
        TransitionSample s;
        s.task_id = std::stoi(f[0]);
        s.action = std::stoi(f[1]);
        s.reward = std::stod(f[2]);
        s.terminal = f[3] == "1";
        s.state = Vec(dim);
        s.next_state = Vec(dim);
        for (Eigen::Index d = 0; d < dim; ++d) {
            s.state[d] = std::stod(f[4 + d]);
            s.next_state[d] = std::stod(f[4 + dim + d]);
        }
        data.push_back(std::move(s));
    }
    return data;
}

inline std::string weighted_dataset_csv(const std::vector<WeightedSample>& samples) {
    std::ostringstream out;
    const auto dim = samples.empty() ? 0 : samples.front().sample.state.size();
    out << "task_id,action,reward,terminal";
    for (Eigen::Index d = 0; d < dim; ++d) out << ",s" << d;
    for (Eigen::Index d = 0; d < dim; ++d) out << ",ns" << d;
    out << ",w_r,w_p\n";
    for (const auto& w : samples) {
        const auto& s = w.sample;
        out << s.task_id << ',' << s.action << ',' << full(s.reward) << ',' << (s.terminal ? 1 : 0);
        for (Eigen::Index d = 0; d < dim; ++d) out << ',' << full(s.state[d]);
        for (Eigen::Index d = 0; d < dim; ++d) out << ',' << full(s.next_state[d]);
        out << ',' << full(w.w_r) << ',' << full(w.w_p) << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Experiment CSV rows.

struct ReturnRow {
    std::string variant;
    std::uint64_t seed = 0;
    int batch = 0;
    int episodes_seen = 0;
    double mean_return = 0.0;
};

struct TransferRow {
    std::string variant;
    std::uint64_t seed = 0;
    int batch = 0;
    int source_id = 0;
    double reward_mass = 0.0;
    double transition_mass = 0.0;
};

struct DiagnosticRow {
    std::string variant;
    std::uint64_t seed = 0;
    int batch = 0;
    std::string kind;  // "reward" or "transition"
    double second_moment = 0.0;
    double ess = 0.0;
    double max_weight = 0.0;
    long divergence_count = 0;
};

struct IterationRow {
    std::string variant;
    std::uint64_t seed = 0;
    int batch = 0;
    IterationRecord record;
};

/// Aggregated learning-curve point (one variant at one batch).
struct ResultRow {
    int batch = 0;
    int episodes_seen = 0;
    double mean_return = 0.0;
    double ci95 = 0.0;
    std::string variant;
    int seed_count = 0;
};

/// Aggregated transfer-ratio point.
struct TransferSummaryRow {
    int batch = 0;
    int source_id = 0;
    double reward_mass = 0.0;
    double transition_mass = 0.0;
};

inline std::string returns_csv(const std::vector<ReturnRow>& rows) {
    std::ostringstream out;
    out << "variant,seed,batch,episodes_seen,mean_return\n";
    for (const auto& r : rows)
        out << r.variant << ',' << r.seed << ',' << r.batch << ',' << r.episodes_seen << ','
            << full(r.mean_return) << '\n';
    return out.str();
}

inline std::vector<ReturnRow> read_returns_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    std::getline(in, line);
    if (line != "variant,seed,batch,episodes_seen,mean_return")
        throw std::runtime_error("unrecognized returns header in " + path.string());
    std::vector<ReturnRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 5) throw std::runtime_error("malformed returns row in " + path.string());
        rows.push_back({f[0], std::stoull(f[1]), std::stoi(f[2]), std::stoi(f[3]), std::stod(f[4])});
    }
    return rows;
}

inline std::string transfer_rows_csv(const std::vector<TransferRow>& rows) {
    std::ostringstream out;
    out << "variant,seed,batch,source_id,reward_mass,transition_mass\n";
    for (const auto& r : rows)
        out << r.variant << ',' << r.seed << ',' << r.batch << ',' << r.source_id << ','
            << full(r.reward_mass) << ',' << full(r.transition_mass) << '\n';
    return out.str();
}

inline std::vector<TransferRow> read_transfer_rows_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    std::getline(in, line);
    if (line != "variant,seed,batch,source_id,reward_mass,transition_mass")
        throw std::runtime_error("unrecognized transfer header in " + path.string());
    std::vector<TransferRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 6) throw std::runtime_error("malformed transfer row in " + path.string());
        rows.push_back({f[0], std::stoull(f[1]), std::stoi(f[2]), std::stoi(f[3]), std::stod(f[4]),
                        std::stod(f[5])});
    }
    return rows;
}

inline std::string diagnostics_csv(const std::vector<DiagnosticRow>& rows) {
    std::ostringstream out;
    out << "variant,seed,batch,kind,second_moment,ess,max_weight,divergence_count\n";
    for (const auto& r : rows)
        out << r.variant << ',' << r.seed << ',' << r.batch << ',' << r.kind << ','
            << full(r.second_moment) << ',' << full(r.ess) << ',' << full(r.max_weight) << ','
            << r.divergence_count << '\n';
    return out.str();
}

inline std::string iterations_csv(const std::vector<IterationRow>& rows) {
    std::ostringstream out;
    out << "variant,seed,batch,iter,mean_abs_td_target,q_min,q_max,fit_seconds\n";
    for (const auto& r : rows)
        out << r.variant << ',' << r.seed << ',' << r.batch << ',' << r.record.iter << ','
            << full(r.record.mean_abs_td_target) << ',' << full(r.record.q_min) << ','
            << full(r.record.q_max) << ',' << full(r.record.fit_seconds) << '\n';
    return out.str();
}

inline std::string results_csv(const std::vector<ResultRow>& rows) {
    std::ostringstream out;
    out << "batch,episodes_seen,mean_return,ci95,variant,seed_count\n";
    for (const auto& r : rows)
        out << r.batch << ',' << r.episodes_seen << ',' << brief(r.mean_return) << ','
            << brief(r.ci95) << ',' << r.variant << ',' << r.seed_count << '\n';
    return out.str();
}

inline std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    std::getline(in, line);
    if (line != "batch,episodes_seen,mean_return,ci95,variant,seed_count")
        throw std::runtime_error("unrecognized results header in " + path.string());
    std::vector<ResultRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 6) throw std::runtime_error("malformed results row in " + path.string());
        rows.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stod(f[2]), std::stod(f[3]), f[4],
                        std::stoi(f[5])});
    }
    return rows;
}

inline std::string transfer_summary_csv(const std::vector<TransferSummaryRow>& rows) {
    std::ostringstream out;
    out << "batch,source_id,reward_mass,transition_mass\n";
    for (const auto& r : rows)
        out << r.batch << ',' << r.source_id << ',' << brief(r.reward_mass) << ','
            << brief(r.transition_mass) << '\n';
    return out.str();
}

}  // namespace io

// ---------------------------------------------------------------------------
// Environment configs as JSON.

inline Json to_json(const PuddleWorldConfig& c) {
    Json j;
    j["type"] = "puddle_world";
    j["dynamics_mode"] = c.dynamics_mode == PuddleDynamics::shared ? "shared" : "puddle_based";
    j["reward_noise_var"] = c.reward_noise_var;
    j["transition_noise_var"] = c.transition_noise_var;
    j["gamma"] = c.gamma;
    j["horizon"] = c.horizon;
    j["goal_lo"] = {c.goal_lo[0], c.goal_lo[1]};
    j["goal_hi"] = {c.goal_hi[0], c.goal_hi[1]};
    j["puddles"] = Json::array();
    for (const auto& p : c.puddles) {
        Json q;
        q["mean"] = {p.mean[0], p.mean[1]};
        q["covariance"] = {{p.covariance(0, 0), p.covariance(0, 1)},
                           {p.covariance(1, 0), p.covariance(1, 1)}};
        j["puddles"].push_back(q);
    }
    return j;
}

inline PuddleWorldConfig puddle_world_from_json(const Json& j) {
    PuddleWorldConfig c;
    const std::string mode = j.value("dynamics_mode", "shared");
    if (mode == "shared")
        c.dynamics_mode = PuddleDynamics::shared;
    else if (mode == "puddle_based")
        c.dynamics_mode = PuddleDynamics::puddle_based;
    else
        throw std::invalid_argument("puddle_world: unknown dynamics_mode " + mode);
    c.reward_noise_var = j.value("reward_noise_var", c.reward_noise_var);
    c.transition_noise_var = j.value("transition_noise_var", c.transition_noise_var);
    c.gamma = j.value("gamma", c.gamma);
    c.horizon = j.value("horizon", c.horizon);
    if (j.contains("goal_lo")) c.goal_lo = (Vec(2) << j["goal_lo"][0], j["goal_lo"][1]).finished();
    if (j.contains("goal_hi")) c.goal_hi = (Vec(2) << j["goal_hi"][0], j["goal_hi"][1]).finished();
    for (const auto& q : j.value("puddles", Json::array())) {
        Puddle p;
        p.mean = (Vec(2) << q.at("mean")[0], q.at("mean")[1]).finished();
        const auto& cov = q.at("covariance");
        p.covariance = (Mat(2, 2) << cov[0][0], cov[0][1], cov[1][0], cov[1][1]).finished();
        c.puddles.push_back(std::move(p));
    }
    return c;
}

inline Json to_json(const AcrobotConfig& c) {
    Json j;
    j["type"] = "acrobot";
    j["task_kind"] = c.task_kind == AcrobotTask::swing_up ? "swing_up" : "constant_spin";
    j["l1"] = c.l1;
    j["l2"] = c.l2;
    j["m1"] = c.m1;
    j["m2"] = c.m2;
    j["torque_magnitude"] = c.torque_magnitude;
    j["control_dt"] = c.control_dt;
    j["substeps"] = c.substeps;
    j["gamma"] = c.gamma;
    j["horizon"] = c.horizon;
    return j;
}

inline AcrobotConfig acrobot_from_json(const Json& j) {
    AcrobotConfig c;
    const std::string kind = j.value("task_kind", "swing_up");
    if (kind == "swing_up")
        c.task_kind = AcrobotTask::swing_up;
    else if (kind == "constant_spin")
        c.task_kind = AcrobotTask::constant_spin;
    else
        throw std::invalid_argument("acrobot: unknown task_kind " + kind);
    c.l1 = j.value("l1", c.l1);
    c.l2 = j.value("l2", c.l2);
    c.m1 = j.value("m1", c.m1);
    c.m2 = j.value("m2", c.m2);
    c.torque_magnitude = j.value("torque_magnitude", c.torque_magnitude);
    c.control_dt = j.value("control_dt", c.control_dt);
    c.substeps = j.value("substeps", c.substeps);
    c.gamma = j.value("gamma", c.gamma);
    c.horizon = j.value("horizon", c.horizon);
    return c;
}

inline Json to_json(const WaterReservoirConfig& c) {
    Json j;
    j["type"] = "water_reservoir";
    j["capacity"] = c.capacity;
    j["min_storage"] = c.min_storage;
    j["flood_threshold"] = c.flood_threshold;
    j["demand"] = c.demand;
    j["alpha"] = c.alpha;
    j["beta"] = c.beta;
    j["inflow"] = {{"c0", c.inflow.c0}, {"c1", c.inflow.c1}, {"phase", c.inflow.phase}};
    j["inflow_noise_var"] = c.inflow_noise_var;
    j["release_action_count"] = c.release_action_count;
    j["max_release"] = c.max_release;
    j["gamma"] = c.gamma;
    j["horizon"] = c.horizon;
    return j;
}

inline WaterReservoirConfig water_reservoir_from_json(const Json& j) {
    WaterReservoirConfig c;
    c.capacity = j.value("capacity", c.capacity);
    c.min_storage = j.value("min_storage", c.min_storage);
    c.flood_threshold = j.value("flood_threshold", c.flood_threshold);
    c.demand = j.value("demand", c.demand);
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    if (j.contains("inflow")) {
        const auto& f = j["inflow"];
        c.inflow.c0 = f.value("c0", c.inflow.c0);
        c.inflow.c1 = f.value("c1", c.inflow.c1);
        c.inflow.phase = f.value("phase", c.inflow.phase);
    }
    c.inflow_noise_var = j.value("inflow_noise_var", c.inflow_noise_var);
    c.release_action_count = j.value("release_action_count", c.release_action_count);
    c.max_release = j.value("max_release", c.max_release);
    c.gamma = j.value("gamma", c.gamma);
    c.horizon = j.value("horizon", c.horizon);
    return c;
}

/// Builds an environment from its JSON description (see configs/env).
inline std::unique_ptr<Environment> make_environment(const Json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "puddle_world") return std::make_unique<PuddleWorld>(puddle_world_from_json(j));
    if (type == "acrobot") return std::make_unique<Acrobot>(acrobot_from_json(j));
    if (type == "water_reservoir")
        return std::make_unique<WaterReservoir>(water_reservoir_from_json(j));
    throw std::invalid_argument("unknown environment type: " + type);
}

inline std::unique_ptr<Environment> load_environment(const std::filesystem::path& path) {
    return make_environment(io::load_json(path));
}

}  // namespace iwfqi
