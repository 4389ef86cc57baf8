#include "sdpc/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

namespace sdpc {

using json = nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed)
{
    if (!j.is_object())
        throw ConfigError("config: '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw ConfigError("config: unknown key '" + key + "' in '" + section + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& out)
{
    if (!j.contains(key))
        return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

Vec read_vec(const json& j, const char* key)
{
    std::vector<double> v;
    read(j, key, v);
    return Vec::Map(v.data(), static_cast<Index>(v.size()));
}

/// A list is a diagonal, a list of lists a full matrix.
Mat read_weight(const json& j, const char* key)
{
    if (!j.contains(key))
        throw ConfigError(std::string("config: missing '") + key + "'");
    const json& w = j.at(key);
    if (!w.is_array() || w.empty())
        throw ConfigError(std::string("config: '") + key + "' must be a non-empty array");
    try {
        if (!w.front().is_array()) {
            const auto d = w.get<std::vector<double>>();
            return Vec::Map(d.data(), static_cast<Index>(d.size())).asDiagonal();
        }
        const auto rows = w.get<std::vector<std::vector<double>>>();
        Mat m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != rows.front().size())
                throw ConfigError(std::string("config: ragged matrix '") + key + "'");
            for (std::size_t c = 0; c < rows[r].size(); ++c)
                m(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
        }
        return m;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad matrix '") + key + "': " + e.what());
    }
}

void read_plant_params(const json& j, PlantConfig& pc)
{
    if (pc.name == "cartpole") {
        auto& p = pc.cartpole;
        check_keys(j, "plant.params",
                   {"cart_mass", "pole_mass", "pole_length", "gravity", "cart_damping", "pole_damping", "force_limit",
                    "dt", "substeps"});
        read(j, "cart_mass", p.cart_mass);
        read(j, "pole_mass", p.pole_mass);
        read(j, "pole_length", p.pole_length);
        read(j, "gravity", p.gravity);
        read(j, "cart_damping", p.cart_damping);
        read(j, "pole_damping", p.pole_damping);
        read(j, "force_limit", p.force_limit);
        read(j, "dt", p.dt);
        read(j, "substeps", p.substeps);
    } else if (pc.name == "reacher") {
        auto& p = pc.reacher;
        check_keys(j, "plant.params", {"l1", "l2", "m1", "m2", "damping", "torque_limit", "dt", "substeps"});
        read(j, "l1", p.l1);
        read(j, "l2", p.l2);
        read(j, "m1", p.m1);
        read(j, "m2", p.m2);
        read(j, "damping", p.damping);
        read(j, "torque_limit", p.torque_limit);
        read(j, "dt", p.dt);
        read(j, "substeps", p.substeps);
    } else if (pc.name == "rocket") {
        auto& p = pc.rocket;
        check_keys(j, "plant.params",
                   {"mass", "inertia", "gravity", "gimbal_arm", "side_arm", "max_gimbal", "max_side", "dt",
                    "substeps"});
        read(j, "mass", p.mass);
        read(j, "inertia", p.inertia);
        read(j, "gravity", p.gravity);
        read(j, "gimbal_arm", p.gimbal_arm);
        read(j, "side_arm", p.side_arm);
        read(j, "max_gimbal", p.max_gimbal);
        read(j, "max_side", p.max_side);
        read(j, "dt", p.dt);
        read(j, "substeps", p.substeps);
    } else {
        throw ConfigError("config: unknown plant '" + pc.name + "'");
    }
}

std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

bool is_select(const std::string& method) { return method.rfind("select_", 0) == 0; }

const std::set<std::string>& known_baselines()
{
    static const std::set<std::string> names{"select_norm", "select_manifold", "select_random",
                                             "select_full", "full_deepc",      "time_windowed"};
    return names;
}

/// Maps normalized inputs in [-1, 1] to the plant's input box.
Vec denormalize(const Plant& plant, const Vec& v)
{
    Vec u(v.size());
    for (Index i = 0; i < v.size(); ++i) {
        const double lo = plant.u_low().size() ? plant.u_low()[i] : -kInf;
        const double hi = plant.u_high().size() ? plant.u_high()[i] : kInf;
        if (std::isfinite(lo) && std::isfinite(hi))
            u[i] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * v[i];
        else
            u[i] = v[i];
    }
    return plant.saturate(u);
}

Episode to_episode(const std::vector<StepResult>& rows, int id)
{
    Episode ep;
    ep.id = id;
    if (rows.empty())
        return ep;
    ep.u.resize(static_cast<Index>(rows.size()), rows.front().u.size());
    ep.y.resize(static_cast<Index>(rows.size()), rows.front().y.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        ep.u.row(static_cast<Index>(k)) = rows[k].u.transpose();
        ep.y.row(static_cast<Index>(k)) = rows[k].y.transpose();
    }
    return ep;
}

bool blown_up(const Vec& y, double bound) { return !y.allFinite() || y.cwiseAbs().maxCoeff() > bound; }

/// Central-difference linearization of the sampled dynamics.
void linearize(const Plant& plant, const Vec& x0, const Vec& u0, Mat& A, Mat& B)
{
    const double h = 1e-6;
    const Index n = x0.size(), m = u0.size();
    A.resize(n, n);
    B.resize(n, m);
    for (Index j = 0; j < n; ++j) {
        Vec e = Vec::Zero(n);
        e[j] = h;
        A.col(j) = (plant.advance(x0 + e, u0) - plant.advance(x0 - e, u0)) / (2.0 * h);
    }
    for (Index j = 0; j < m; ++j) {
        Vec e = Vec::Zero(m);
        e[j] = h;
        B.col(j) = (plant.advance(x0, u0 + e) - plant.advance(x0, u0 - e)) / (2.0 * h);
    }
}

std::string num(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path)
{
    const std::filesystem::path p(path);
    if (p.has_parent_path())
        std::filesystem::create_directories(p.parent_path());
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write '" + path + "'");
    return os;
}

}  // namespace

const char* to_string(DataPolicy policy)
{
    switch (policy) {
    case DataPolicy::iid:
        return "iid";
    case DataPolicy::random_walk:
        return "random_walk";
    case DataPolicy::demonstrations:
        return "demonstrations";
    }
    return "unknown";
}

DataPolicy data_policy_from_string(const std::string& name)
{
    for (auto p : {DataPolicy::iid, DataPolicy::random_walk, DataPolicy::demonstrations})
        if (name == to_string(p))
            return p;
    throw ConfigError("unknown data policy '" + name + "'");
}

void ExperimentConfig::validate() const
{
    const std::unique_ptr<Plant> p = make_plant(plant);
    dpc.validate();
    outer.validate();
    if (dpc.input_dim() != p->input_dim() || dpc.output_dim() != p->output_dim())
        throw ConfigError("config: Q/R dimensions do not match plant '" + plant.name + "'");
    if (data.a < 0.0 || data.a > 1.0 || data.b < 0.0)
        throw ConfigError("config: data policy needs a in [0, 1] and b >= 0");
    if (data.episodes < 1 || data.steps < 1)
        throw ConfigError("config: episodes and steps must be >= 1");
    if (data.policy == DataPolicy::demonstrations && plant.name != "cartpole")
        throw ConfigError("config: demonstrations exist for the cart-pole only");
    if (loop.steps < 1)
        throw ConfigError("config: closed_loop.steps must be >= 1");
    if (loop.initial_state.size() != 0 && loop.initial_state.size() != p->state_dim())
        throw ConfigError("config: closed_loop.initial_state has the wrong dimension");
    if (!(loop.blowup_bound > 0.0))
        throw ConfigError("config: closed_loop.blowup_bound must be positive");
    if (k_neighbors < 1 || d_embed < 1 || time_window < 0)
        throw ConfigError("config: k_neighbors, d_embed must be >= 1 and time_window >= 0");
    for (const auto& b : baselines)
        if (!known_baselines().count(b))
            throw ConfigError("config: unknown baseline '" + b + "'");
    for (Index n : sweep.n_cols)
        if (n < 1)
            throw ConfigError("config: sweep.n_cols entries must be >= 1");
    if (seeds.empty())
        throw ConfigError("config: at least one seed is required");
}

ExperimentConfig parse_config(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    check_keys(j, "root",
               {"name", "plant", "data", "horizon", "dpc", "select", "closed_loop", "baselines", "time_window",
                "sweep", "seeds", "output_dir"});
    ExperimentConfig cfg;
    read(j, "name", cfg.name);
    read(j, "output_dir", cfg.output_dir);
    read(j, "time_window", cfg.time_window);
    read(j, "baselines", cfg.baselines);
    read(j, "seeds", cfg.seeds);

    if (j.contains("plant")) {
        const json& p = j.at("plant");
        check_keys(p, "plant", {"name", "params"});
        read(p, "name", cfg.plant.name);
        if (p.contains("params"))
            read_plant_params(p.at("params"), cfg.plant);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, "data", {"policy", "a", "b", "episodes", "steps", "seed", "blowup_bound"});
        std::string policy = to_string(cfg.data.policy);
        read(d, "policy", policy);
        cfg.data.policy = data_policy_from_string(policy);
        read(d, "a", cfg.data.a);
        read(d, "b", cfg.data.b);
        read(d, "episodes", cfg.data.episodes);
        read(d, "steps", cfg.data.steps);
        read(d, "seed", cfg.data.seed);
        read(d, "blowup_bound", cfg.data.blowup_bound);
    }
    if (j.contains("horizon")) {
        const json& h = j.at("horizon");
        check_keys(h, "horizon", {"t_past", "t_future"});
        read(h, "t_past", cfg.dpc.t_past);
        read(h, "t_future", cfg.dpc.t_future);
    }
    if (!j.contains("dpc"))
        throw ConfigError("config: missing 'dpc' section");
    {
        const json& d = j.at("dpc");
        check_keys(d, "dpc",
                   {"Q", "R", "y_ref", "lambda_1", "lambda_pi", "slack_weight", "u_low", "u_high", "affine",
                    "projection_eps", "condensed", "qp"});
        cfg.dpc.Q = read_weight(d, "Q");
        cfg.dpc.R = read_weight(d, "R");
        cfg.dpc.y_ref = read_vec(d, "y_ref");
        read(d, "lambda_1", cfg.dpc.lambda_1);
        read(d, "lambda_pi", cfg.dpc.lambda_pi);
        read(d, "slack_weight", cfg.dpc.slack_weight);
        cfg.dpc.u_low = read_vec(d, "u_low");
        cfg.dpc.u_high = read_vec(d, "u_high");
        read(d, "affine", cfg.dpc.affine);
        read(d, "projection_eps", cfg.dpc.projection_eps);
        read(d, "condensed", cfg.dpc.condensed);
        if (d.contains("qp")) {
            const json& q = d.at("qp");
            check_keys(q, "dpc.qp", {"method", "eps_abs", "eps_rel", "max_iter", "ipm_max_iter", "polish"});
            std::string method = to_string(cfg.dpc.qp.method);
            read(q, "method", method);
            cfg.dpc.qp.method = qp_method_from_string(method);
            read(q, "eps_abs", cfg.dpc.qp.eps_abs);
            read(q, "eps_rel", cfg.dpc.qp.eps_rel);
            read(q, "max_iter", cfg.dpc.qp.max_iter);
            read(q, "ipm_max_iter", cfg.dpc.qp.ipm_max_iter);
            read(q, "polish", cfg.dpc.qp.polish);
        }
    }
    if (j.contains("select")) {
        const json& s = j.at("select");
        check_keys(s, "select",
                   {"n_cols", "kind", "norm_order", "standardize", "eps_conv", "max_outer_iters", "warm_shift",
                    "k_neighbors", "d_embed"});
        read(s, "n_cols", cfg.outer.n_cols);
        std::string kind = to_string(cfg.outer.selection.kind);
        read(s, "kind", kind);
        cfg.outer.selection.kind = selection_kind_from_string(kind);
        read(s, "norm_order", cfg.outer.selection.norm_order);
        read(s, "standardize", cfg.standardize);
        read(s, "eps_conv", cfg.outer.eps_conv);
        read(s, "max_outer_iters", cfg.outer.max_outer_iters);
        read(s, "warm_shift", cfg.outer.warm_shift);
        read(s, "k_neighbors", cfg.k_neighbors);
        read(s, "d_embed", cfg.d_embed);
    }
    if (j.contains("closed_loop")) {
        const json& c = j.at("closed_loop");
        check_keys(c, "closed_loop", {"steps", "initial_state", "blowup_bound", "warmup_amplitude", "snapshot_steps"});
        read(c, "steps", cfg.loop.steps);
        cfg.loop.initial_state = read_vec(c, "initial_state");
        read(c, "blowup_bound", cfg.loop.blowup_bound);
        read(c, "warmup_amplitude", cfg.loop.warmup_amplitude);
        read(c, "snapshot_steps", cfg.loop.snapshot_steps);
    }
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        check_keys(s, "sweep", {"n_cols", "k_neighbors", "d_embed", "contrast_lengths", "holdout_steps", "holdout_seed"});
        read(s, "n_cols", cfg.sweep.n_cols);
        read(s, "k_neighbors", cfg.sweep.k_neighbors);
        read(s, "d_embed", cfg.sweep.d_embed);
        read(s, "contrast_lengths", cfg.sweep.contrast_lengths);
        read(s, "holdout_steps", cfg.sweep.holdout_steps);
        read(s, "holdout_seed", cfg.sweep.holdout_seed);
    }
    cfg.hash = fnv1a(j.dump());
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::unique_ptr<Plant> make_plant(const PlantConfig& cfg)
{
    if (cfg.name == "cartpole")
        return std::make_unique<CartPole>(cfg.cartpole);
    if (cfg.name == "reacher")
        return std::make_unique<Reacher>(cfg.reacher);
    if (cfg.name == "rocket")
        return std::make_unique<Rocket>(cfg.rocket);
    throw ConfigError("unknown plant '" + cfg.name + "'");
}

Vec random_initial_state(const Plant& plant, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    Vec x = plant.default_state();
    const std::string name = plant.name();
    if (name == "cartpole") {
        x << 0.5 * U(rng), std::numbers::pi * U(rng), 0.5 * U(rng), U(rng);
    } else if (name == "rocket") {
        x.setZero();
        x[0] = U(rng);
        x[1] = U(rng);
        x[2] = 0.1 * U(rng);
    } else if (name == "reacher") {
        x << std::numbers::pi * U(rng), std::numbers::pi * U(rng), 0.0, 0.0;
    }
    return x;
}

std::vector<Episode> generate_episodes(const PlantConfig& plant_cfg, const DataConfig& data)
{
    if (data.a < 0.0 || data.a > 1.0 || data.b < 0.0)
        throw ConfigError("generate_episodes: need a in [0, 1] and b >= 0");
    std::mt19937_64 rng(data.seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::vector<Episode> out;
    for (int e = 0; e < data.episodes; ++e) {
        const std::unique_ptr<Plant> plant = make_plant(plant_cfg);
        plant->reset(random_initial_state(*plant, rng));
        Vec v = Vec::Zero(plant->input_dim());
        std::vector<StepResult> rows;
        for (int k = 0; k < data.steps; ++k) {
            for (Index c = 0; c < v.size(); ++c)
                v[c] = std::clamp(data.a * v[c] + data.b * U(rng), -1.0, 1.0);
            const StepResult r = plant->step(denormalize(*plant, v));
            if (blown_up(r.y, data.blowup_bound))
                break;
            rows.push_back(r);
        }
        out.push_back(to_episode(rows, e));
    }
    return out;
}

std::vector<Episode> generate_demonstrations(int count, int steps, std::uint64_t seed, const CartPoleParams& params)
{
    if (count < 1 || steps < 1)
        throw ConfigError("generate_demonstrations: count and steps must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::vector<Episode> out;
    for (int e = 0; e < count; ++e) {
        CartPole cp(params);
        SwingupGains g;
        g.k_energy = 27.5 + 12.5 * U(rng);
        g.k_position = 1.25 + 0.75 * U(rng);
        g.k_velocity = g.k_position;
        const SwingupPolicy policy(cp, g);
        Vec x0 = cp.default_state();
        x0[0] = 0.3 * U(rng);
        x0[1] += 0.2 * U(rng);
        x0[3] = 0.2 * U(rng);
        cp.reset(x0);
        std::vector<StepResult> rows;
        for (int k = 0; k < steps; ++k)
            rows.push_back(cp.step(Vec::Constant(1, policy(cp.state()) + U(rng))));
        out.push_back(to_episode(rows, e));
    }
    return out;
}

Dataset generate_data(const ExperimentConfig& cfg)
{
    std::vector<Episode> eps =
        cfg.data.policy == DataPolicy::demonstrations
            ? generate_demonstrations(cfg.data.episodes, cfg.data.steps, cfg.data.seed, cfg.plant.cartpole)
            : generate_episodes(cfg.plant, cfg.data);
    const int len = cfg.dpc.t_past + cfg.dpc.t_future;
    std::erase_if(eps, [&](const Episode& e) { return e.steps() < len; });
    DatasetMeta meta;
    meta.env = cfg.plant.name;
    meta.dt = make_plant(cfg.plant)->dt();
    return extract_trajectories(std::move(eps), cfg.dpc.t_past, cfg.dpc.t_future, meta);
}

Episode make_holdout_episode(const ExperimentConfig& cfg, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const std::unique_ptr<Plant> plant = make_plant(cfg.plant);
    const int steps = cfg.sweep.holdout_steps;
    std::vector<StepResult> rows;
    if (plant->name() == "cartpole") {
        const auto& cp = static_cast<const CartPole&>(*plant);
        SwingupGains g;
        g.k_energy = 33.0;
        g.k_position = 0.7;
        g.k_velocity = 0.9;
        const SwingupPolicy policy(cp, g);
        Vec x0 = plant->default_state();
        x0[0] = 0.2 * U(rng);
        x0[1] += 0.1 * U(rng);
        plant->reset(x0);
        for (int k = 0; k < steps; ++k)
            rows.push_back(plant->step(Vec::Constant(1, policy(plant->state()) + 0.5 * U(rng))));
    } else if (plant->name() == "rocket") {
        Mat A, B;
        linearize(*plant, Vec::Zero(6), Vec::Zero(3), A, B);
        const Mat K = dlqr(A, B, Mat::Identity(6, 6), 10.0 * Mat::Identity(3, 3));
        plant->reset(random_initial_state(*plant, rng));
        for (int k = 0; k < steps; ++k) {
            Vec u = -K * plant->state();
            for (Index c = 0; c < u.size(); ++c)
                u[c] += 0.1 * U(rng);
            rows.push_back(plant->step(u));
        }
    } else {
        plant->reset(random_initial_state(*plant, rng));
        Vec target(2);
        target << std::numbers::pi * U(rng), std::numbers::pi * U(rng);
        for (int k = 0; k < steps; ++k) {
            const Vec& x = plant->state();
            Vec u = 0.05 * (target - x.head(2)) - 0.01 * x.tail(2);
            rows.push_back(plant->step(u));
        }
    }
    return to_episode(rows, kHoldoutEpisodeId);
}

std::vector<ResidualRow> residual_sweep(const Dataset& dataset, const Dataset& holdout,
                                        const std::vector<Index>& n_cols_list,
                                        const std::vector<std::string>& methods, const SelectionMethod& norm_method,
                                        const EmbeddingModel* model, std::uint64_t seed, bool affine)
{
    require_dims(holdout.dim() == dataset.dim(), "residual_sweep: holdout layout differs from the dataset");
    const std::set<int> ids(dataset.episode_ids().begin(), dataset.episode_ids().end());
    for (int id : holdout.episode_ids())
        if (ids.count(id))
            throw ConfigError("residual_sweep: holdout episode " + std::to_string(id) + " is part of the dataset");
    const Index n_d = dataset.size();

    std::optional<PredictorContext> full;
    std::vector<ResidualRow> rows;
    for (const std::string& method : methods) {
        if (method != "norm" && method != "manifold" && method != "random")
            throw ConfigError("residual_sweep: unknown method '" + method + "'");
        if (method == "manifold" && !model)
            throw ConfigError("residual_sweep: manifold method needs an embedding model");
        for (Index n_cols : n_cols_list) {
            if (n_cols < 1)
                throw ConfigError("residual_sweep: n_cols must be >= 1");
            std::mt19937_64 rng(seed + 7919u * static_cast<std::uint64_t>(n_cols));
            double total = 0.0;
            for (Index w = 0; w < holdout.size(); ++w) {
                const Trajectory t = holdout.trajectory(w);
                Vec y_hat;
                if (n_cols >= n_d) {
                    if (!full)
                        full = PredictorContext{lq_compress(blocks_from_all(dataset, affine))};
                    y_hat = ls_predict(*full, t.u_past(), t.y_past(), t.u_future());
                } else {
                    const Vec q = t.flatten();
                    SelectionResult sel;
                    if (method == "norm")
                        sel = select_norm(dataset, q, n_cols, norm_method);
                    else if (method == "manifold")
                        sel = select_manifold(dataset, *model, q, n_cols, norm_method);
                    else
                        sel = select_random(n_d, n_cols, rng);
                    const PredictorContext ctx{blocks_from(dataset, sel.indices, affine)};
                    y_hat = ls_predict(ctx, t.u_past(), t.y_past(), t.u_future());
                }
                total += prediction_residual(y_hat, t.y_future());
            }
            rows.push_back({method, n_cols, total});
        }
    }
    return rows;
}

SelectionMethod selection_method(const ExperimentConfig& cfg, const Dataset& dataset)
{
    SelectionMethod m = cfg.outer.selection;
    if (cfg.standardize)
        m.feature_weights = standardizing_weights(dataset);
    return m;
}

Mat embedding_points(const ExperimentConfig& cfg, const Dataset& dataset)
{
    if (!cfg.standardize)
        return dataset.flat();
    return standardizing_weights(dataset).asDiagonal() * dataset.flat();
}

std::unique_ptr<Controller> make_controller(const std::string& method, const ExperimentConfig& cfg,
                                            const Dataset& dataset, const EmbeddingModel* model, Index n_cols,
                                            std::uint64_t seed)
{
    if (is_select(method)) {
        OuterLoopSettings s = cfg.outer;
        s.n_cols = n_cols;
        s.selection = selection_method(cfg, dataset);
        s.selection.kind = selection_kind_from_string(method.substr(7));
        s.selection.seed = seed;
        if (s.selection.kind == SelectionKind::manifold && !model)
            throw ConfigError("select_manifold needs an embedding model");
        return std::make_unique<SelectDPC>(dataset, cfg.dpc, s, model);
    }
    if (method == "full_deepc")
        return std::make_unique<FullDeePC>(dataset, cfg.dpc);
    if (method == "time_windowed") {
        const int w = cfg.time_window > 0 ? cfg.time_window : 10 * (cfg.dpc.t_past + cfg.dpc.t_future);
        return std::make_unique<TimeWindowedDeePC>(cfg.dpc, w);
    }
    throw ConfigError("unknown method '" + method + "'");
}

RunResult run_experiment(const std::string& method, const ExperimentConfig& cfg, const Dataset& dataset,
                         const EmbeddingModel* model, Index n_cols, std::uint64_t seed)
{
    const std::unique_ptr<Plant> plant = make_plant(cfg.plant);
    if (cfg.loop.initial_state.size())
        plant->reset(cfg.loop.initial_state);
    else
        plant->reset();

    std::unique_ptr<Controller> ctrl;
    if (method == "time_windowed") {
        // The window needs recent samples of this plant: excite it with the
        // data policy first and start the loop from wherever that leaves it.
        const int w = cfg.time_window > 0 ? cfg.time_window : 10 * (cfg.dpc.t_past + cfg.dpc.t_future);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> U(-1.0, 1.0);
        Vec v = Vec::Zero(plant->input_dim());
        std::vector<std::pair<Vec, Vec>> samples;
        for (int k = 0; k < w; ++k) {
            for (Index c = 0; c < v.size(); ++c)
                v[c] = std::clamp(cfg.data.a * v[c] + cfg.data.b * U(rng), -1.0, 1.0);
            const StepResult r = plant->step(denormalize(*plant, v));
            samples.emplace_back(r.u, r.y);
        }
        ctrl = std::make_unique<TimeWindowedDeePC>(cfg.dpc, w, std::move(samples));
    } else {
        ctrl = make_controller(method, cfg, dataset, model, n_cols, seed);
    }

    ClosedLoopOptions opts;
    opts.steps = cfg.loop.steps;
    opts.warmup_amplitude = cfg.loop.warmup_amplitude;
    opts.warmup_seed = seed;
    opts.blowup_bound = cfg.loop.blowup_bound;
    opts.snapshot_steps = cfg.loop.snapshot_steps;
    RunResult res;
    res.trace = run_closed_loop(*plant, *ctrl, opts);
    res.method = method;
    res.n_cols = is_select(method) && method != "select_full" ? n_cols : dataset.size();
    res.seed = seed;
    return res;
}

CostRow cost_row(const RunResult& run)
{
    return {run.method,         run.n_cols, run.trace.total_cost, run.trace.diverged, run.trace.selection_ms_total(),
            run.trace.qp_ms_total()};
}

std::vector<CostRow> cost_sweep(const ExperimentConfig& cfg, const Dataset& dataset, const EmbeddingModel* model,
                                std::uint64_t seed)
{
    std::vector<CostRow> rows;
    for (const std::string& method : cfg.baselines) {
        if (is_select(method) && method != "select_full") {
            const std::vector<Index> list = cfg.sweep.n_cols.empty() ? std::vector<Index>{cfg.outer.n_cols}
                                                                      : cfg.sweep.n_cols;
            for (Index n : list)
                rows.push_back(cost_row(run_experiment(method, cfg, dataset, model, n, seed)));
        } else {
            rows.push_back(cost_row(run_experiment(method, cfg, dataset, model, dataset.size(), seed)));
        }
    }
    std::sort(rows.begin(), rows.end(), [](const CostRow& a, const CostRow& b) {
        return a.method != b.method ? a.method < b.method : a.n_cols < b.n_cols;
    });
    return rows;
}

std::vector<IsomapRow> isomap_grid(const Mat& points, const std::vector<int>& ks, const std::vector<int>& ds)
{
    if (ds.empty())
        return {};
    const int d_max = *std::max_element(ds.begin(), ds.end());
    std::vector<IsomapRow> rows;
    for (int k : ks) {
        const EmbeddingModel m = fit_isomap(points, k, d_max);
        for (int d : ds)
            rows.push_back({k, d, reconstruction_error(d == d_max ? m : refit_dimension(m, d))});
    }
    return rows;
}

std::vector<ContrastRow> contrast_curve(const std::vector<Episode>& episodes, const std::vector<int>& lengths,
                                        int k_neighbors, int d_embed, int queries, std::uint64_t seed)
{
    std::vector<ContrastRow> rows;
    for (int len : lengths) {
        if (len < 2)
            throw ConfigError("contrast_curve: window lengths must be >= 2");
        std::vector<Episode> eps;
        for (const auto& e : episodes)
            if (e.steps() >= len)
                eps.push_back(e);
        const Dataset ds = extract_trajectories(std::move(eps), len / 2, len - len / 2);
        const Index n = ds.size();
        if (n <= queries + k_neighbors)
            throw ConfigError("contrast_curve: too few windows for length " + std::to_string(len));

        std::mt19937_64 rng(seed + static_cast<std::uint64_t>(len));
        std::vector<Index> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), Index{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        Mat train(ds.dim(), n - queries);
        for (Index i = 0; i < train.cols(); ++i)
            train.col(i) = ds.flat().col(perm[static_cast<std::size_t>(queries + i)]);
        const EmbeddingModel model = fit_isomap(train, k_neighbors, d_embed);
        const Mat emb = model.embedding.transpose();

        double s_l1 = 0.0, s_emb = 0.0;
        int used = 0;
        for (int q = 0; q < queries; ++q) {
            const Vec x = ds.flat().col(perm[static_cast<std::size_t>(q)]);
            const EmbedResult e = embed(model, x, kInf);
            const Contrast c1 = relative_contrast(train, x, Metric::l1);
            const Contrast ce = relative_contrast(emb, e.coords, Metric::l2);
            if (c1.infinite || ce.infinite)
                continue;
            s_l1 += c1.delta;
            s_emb += ce.delta;
            ++used;
        }
        if (used == 0)
            throw NumericalError("contrast_curve: every query coincided with a data point");
        rows.push_back({len, ds.dim(), s_l1 / used, s_emb / used});
    }
    return rows;
}

void write_residual_csv(const std::vector<ResidualRow>& rows, const std::string& path)
{
    std::ofstream os = open_out(path);
    os << "method,n_cols,cum_residual\n";
    for (const auto& r : rows)
        os << r.method << ',' << r.n_cols << ',' << num(r.cum_residual) << '\n';
}

void write_cost_csv(const std::vector<CostRow>& rows, const std::string& path)
{
    std::ofstream os = open_out(path);
    os << "method,n_cols,cost,diverged,sel_ms_total,qp_ms_total\n";
    for (const auto& r : rows)
        os << r.method << ',' << r.n_cols << ',' << num(r.cost) << ',' << (r.diverged ? 1 : 0) << ','
           << num(r.sel_ms_total) << ',' << num(r.qp_ms_total) << '\n';
}

void write_isomap_csv(const std::vector<IsomapRow>& rows, const std::string& path)
{
    std::ofstream os = open_out(path);
    os << "k,d_embed,recon_error\n";
    for (const auto& r : rows)
        os << r.k << ',' << r.d_embed << ',' << num(r.recon_error) << '\n';
}

void write_contrast_csv(const std::vector<ContrastRow>& rows, const std::string& path)
{
    std::ofstream os = open_out(path);
    os << "length,dim,delta_l1,delta_embedded\n";
    for (const auto& r : rows)
        os << r.length << ',' << r.dim << ',' << num(r.delta_l1) << ',' << num(r.delta_embedded) << '\n';
}

void write_summary_json(const ExperimentConfig& cfg, const std::vector<RunResult>& runs,
                        const std::vector<SummaryCheck>& checks, const std::string& path)
{
    char hash[20];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(cfg.hash));
    json j;
    j["config"] = cfg.name;
    j["config_hash"] = hash;
    j["seeds"] = cfg.seeds;
    j["data_seed"] = cfg.data.seed;
    json arr = json::array();
    for (const auto& r : runs) {
        json o;
        o["method"] = r.method;
        o["n_cols"] = r.n_cols;
        o["seed"] = r.seed;
        o["steps"] = r.trace.rows.size();
        o["diverged"] = r.trace.diverged;
        o["total_cost"] = std::isfinite(r.trace.total_cost) ? json(r.trace.total_cost) : json(nullptr);
        o["sel_ms_total"] = r.trace.selection_ms_total();
        o["qp_ms_total"] = r.trace.qp_ms_total();
        arr.push_back(o);
    }
    j["runs"] = arr;
    json c = json::array();
    for (const auto& chk : checks)
        c.push_back({{"name", chk.name}, {"passed", chk.passed}, {"detail", chk.detail}});
    j["checks"] = c;
    std::ofstream os = open_out(path);
    os << j.dump(2) << '\n';
}

}  // namespace sdpc
