#include "oracles.hpp"
#include "sdpc/harness.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace sdpc;
using nlohmann::json;

namespace {

const std::string kConfigDir = SDPC_CONFIG_DIR;

std::string tiny_cartpole(const std::string& extra = "")
{
    return R"({
  "name": "tiny",
  "plant": {"name": "cartpole"},
  "data": {"policy": "iid", "a": 0, "b": 1, "episodes": 8, "steps": 60, "seed": 3},
  "horizon": {"t_past": 4, "t_future": 8},
  "dpc": {"Q": [5, 0, 100, 0.1, 0.1], "R": [1], "y_ref": [0, 0, 1, 0, 0],
          "lambda_1": 10, "lambda_pi": 0, "u_low": [-10], "u_high": [10]},
  "select": {"n_cols": 40, "standardize": true, "max_outer_iters": 3},
  "closed_loop": {"steps": 12},
  "baselines": ["select_norm"],
  "sweep": {"n_cols": [40]})" +
        extra + "\n}";
}

std::string read_file(const std::string& path)
{
    std::ifstream is(path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string first_line(const std::string& path)
{
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    return line;
}

std::string temp_path(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / "sdpc_harness_tests";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

/// Copy of `ep` under a fresh id, for holdouts that must not share ids.
Episode relabel(Episode ep, int id)
{
    ep.id = id;
    return ep;
}

}  // namespace

TEST_CASE("config parsing rejects malformed and inconsistent input")
{
    CHECK_NOTHROW(parse_config(tiny_cartpole()));
    CHECK_THROWS_AS(parse_config("{ not json"), ConfigError);
    CHECK_THROWS_AS(parse_config(tiny_cartpole(R"(, "unknown_section": 1)")), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"plant": {"name": "cartpole"}})"), ConfigError);

    std::string bad_plant = tiny_cartpole();
    bad_plant.replace(bad_plant.find("\"cartpole\""), 10, "\"segway\"");
    CHECK_THROWS_AS(parse_config(bad_plant), ConfigError);

    std::string bad_q = tiny_cartpole();
    bad_q.replace(bad_q.find("[5, 0, 100, 0.1, 0.1]"), 21, "[5, 0, 100]");
    CHECK_THROWS_AS(parse_config(bad_q), ConfigError);

    CHECK_THROWS_AS(parse_config(tiny_cartpole(R"(, "baselines": ["select_magic"])")), ConfigError);
    CHECK_THROWS_AS(parse_config(tiny_cartpole(R"(, "seeds": [])")), ConfigError);
    CHECK_THROWS_AS(load_config(temp_path("does_not_exist.json")), ConfigError);
}

TEST_CASE("config hash tracks content")
{
    const ExperimentConfig a = parse_config(tiny_cartpole());
    const ExperimentConfig b = parse_config(tiny_cartpole());
    const ExperimentConfig c = parse_config(tiny_cartpole(R"(, "seeds": [1])"));
    CHECK(a.hash == b.hash);
    CHECK(a.hash != c.hash);
}

TEST_CASE("shipped configs load with the tabulated weights")
{
    for (const auto& entry : std::filesystem::directory_iterator(kConfigDir)) {
        if (entry.path().filename() == "plants.json")
            continue;
        CAPTURE(entry.path().string());
        CHECK_NOTHROW(load_config(entry.path().string()));
    }

    const ExperimentConfig rocket = load_config(kConfigDir + "/rocket_iid.json");
    Vec q(6);
    q << 40, 20, 20, 1, 3000, 30;
    CHECK(rocket.dpc.Q.isApprox(Mat(q.asDiagonal())));
    CHECK(rocket.dpc.R.isApprox(10.0 * Mat::Identity(3, 3)));
    CHECK(rocket.dpc.lambda_1 == 0.0);
    CHECK(rocket.dpc.lambda_pi == 5000.0);
    CHECK(rocket.data.a == 0.0);
    CHECK(rocket.data.b == 1.0);
    CHECK(rocket.data.episodes == 100);
    CHECK(rocket.data.steps == 100);

    const ExperimentConfig rw = load_config(kConfigDir + "/rocket_random_walk.json");
    CHECK(rw.data.policy == DataPolicy::random_walk);
    CHECK(rw.data.a == 1.0);
    CHECK(rw.data.b == 0.1);

    const ExperimentConfig reacher = load_config(kConfigDir + "/reacher_iid.json");
    Vec qr(8);
    qr << 0, 0, 0, 0, 40000, 40000, 10, 10;
    CHECK(reacher.dpc.Q.isApprox(Mat(qr.asDiagonal())));
    CHECK(reacher.dpc.R.isApprox(10.0 * Mat::Identity(2, 2)));
    CHECK(reacher.dpc.lambda_1 == 10.0);
    CHECK(reacher.dpc.lambda_pi == 10000.0);
    CHECK(reacher.data.episodes == 200);
    CHECK(reacher.data.steps == 200);

    const ExperimentConfig cp = load_config(kConfigDir + "/cartpole_swingup.json");
    Vec qc(5);
    qc << 5, 0, 10000, 0.1, 0.1;
    CHECK(cp.dpc.Q.isApprox(Mat(qc.asDiagonal())));
    CHECK(cp.dpc.R(0, 0) == 1.0);
    CHECK(cp.dpc.lambda_1 == 50000.0);
    CHECK(cp.dpc.lambda_pi == 0.0);
    CHECK(cp.data.policy == DataPolicy::demonstrations);
    CHECK(cp.data.episodes == 200);
}

TEST_CASE("plant defaults file matches the compiled defaults")
{
    const json j = json::parse(read_file(kConfigDir + "/plants.json"));
    CHECK(j.at("version") == 1);
    const CartPoleParams c;
    const auto& jc = j.at("cartpole");
    CHECK(jc.at("cart_mass") == c.cart_mass);
    CHECK(jc.at("pole_mass") == c.pole_mass);
    CHECK(jc.at("pole_length") == c.pole_length);
    CHECK(jc.at("gravity") == c.gravity);
    CHECK(jc.at("cart_damping") == c.cart_damping);
    CHECK(jc.at("pole_damping") == c.pole_damping);
    CHECK(jc.at("force_limit") == c.force_limit);
    CHECK(jc.at("dt") == c.dt);
    CHECK(jc.at("substeps") == c.substeps);
    const ReacherParams r;
    const auto& jr = j.at("reacher");
    CHECK(jr.at("l1") == r.l1);
    CHECK(jr.at("l2") == r.l2);
    CHECK(jr.at("m1") == r.m1);
    CHECK(jr.at("m2") == r.m2);
    CHECK(jr.at("damping") == r.damping);
    CHECK(jr.at("torque_limit") == r.torque_limit);
    CHECK(jr.at("dt") == r.dt);
    CHECK(jr.at("substeps") == r.substeps);
    const RocketParams k;
    const auto& jk = j.at("rocket");
    CHECK(jk.at("mass") == k.mass);
    CHECK(jk.at("inertia") == k.inertia);
    CHECK(jk.at("gravity") == k.gravity);
    CHECK(jk.at("gimbal_arm") == k.gimbal_arm);
    CHECK(jk.at("side_arm") == k.side_arm);
    CHECK(jk.at("max_gimbal") == k.max_gimbal);
    CHECK(jk.at("max_side") == k.max_side);
    CHECK(jk.at("dt") == k.dt);
    CHECK(jk.at("substeps") == k.substeps);

    // The same values are accepted as overrides in an experiment config.
    ExperimentConfig cfg =
        parse_config(tiny_cartpole(R"(, "plant": {"name": "cartpole", "params": )" + jc.dump() + "}"));
    CHECK(cfg.plant.cartpole.force_limit == c.force_limit);
}

TEST_CASE("input policy: a = 1, b = 0 keeps the input at zero")
{
    for (const char* plant : {"cartpole", "rocket", "reacher"}) {
        CAPTURE(plant);
        PlantConfig pc;
        pc.name = plant;
        DataConfig d;
        d.policy = DataPolicy::random_walk;
        d.a = 1.0;
        d.b = 0.0;
        d.episodes = 3;
        d.steps = 20;
        const auto eps = generate_episodes(pc, d);
        REQUIRE(eps.size() == 3);
        for (const auto& e : eps)
            CHECK(e.u.cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("input policy: IID inputs stay inside the plant box and vary")
{
    PlantConfig pc;
    pc.name = "cartpole";
    DataConfig d;
    d.episodes = 2;
    d.steps = 200;
    const auto eps = generate_episodes(pc, d);
    for (const auto& e : eps) {
        CHECK(e.u.cwiseAbs().maxCoeff() <= pc.cartpole.force_limit);
        CHECK(e.u.cwiseAbs().maxCoeff() > 0.5 * pc.cartpole.force_limit);
    }
}

TEST_CASE("episodes that blow up are truncated")
{
    PlantConfig pc;
    pc.name = "rocket";
    DataConfig d;
    d.policy = DataPolicy::random_walk;
    d.a = 1.0;
    d.b = 0.1;
    d.episodes = 10;
    d.steps = 200;
    d.blowup_bound = 2.0;
    const auto eps = generate_episodes(pc, d);
    bool truncated = false;
    for (const auto& e : eps) {
        CHECK(e.y.cwiseAbs().maxCoeff() <= 2.0);
        truncated = truncated || e.steps() < 200;
    }
    CHECK(truncated);
}

TEST_CASE("demonstrations: count 1 and distinct episode ids")
{
    const auto one = generate_demonstrations(1, 80, 5);
    REQUIRE(one.size() == 1);
    const Dataset ds = extract_trajectories(one, 5, 10);
    CHECK(ds.size() == 80 - 15 + 1);

    const auto many = generate_demonstrations(6, 50, 5);
    std::set<int> ids;
    for (const auto& e : many)
        ids.insert(e.id);
    CHECK(ids.size() == 6);

    // Seeded: the same seed repeats, another seed differs.
    const auto again = generate_demonstrations(1, 80, 5);
    CHECK(again[0].y == one[0].y);
    CHECK(generate_demonstrations(1, 80, 6)[0].y != one[0].y);
}

TEST_CASE("demonstrations swing the pole up")
{
    const auto eps = generate_demonstrations(4, 300, 11);
    int upright = 0;
    for (const auto& e : eps) {
        const Index k = e.steps() - 1;
        if (std::abs(std::atan2(e.y(k, 1), e.y(k, 2))) < 0.3)
            ++upright;
    }
    CHECK(upright >= 3);
}

TEST_CASE("holdout episode is fresh")
{
    const ExperimentConfig cfg = parse_config(tiny_cartpole());
    const Episode h = make_holdout_episode(cfg, 1);
    CHECK(h.id == kHoldoutEpisodeId);
    CHECK(h.steps() == cfg.sweep.holdout_steps);
    CHECK(h.y.allFinite());
}

TEST_CASE("residual sweep: overlap error, full-data coincidence and self-match")
{
    const ExperimentConfig cfg = parse_config(tiny_cartpole());
    const Dataset ds = generate_data(cfg);
    const SelectionMethod nm = selection_method(cfg, ds);
    const int tp = cfg.dpc.t_past, tf = cfg.dpc.t_future;

    const Dataset leaked = extract_trajectories({ds.episodes()[0]}, tp, tf);
    CHECK_THROWS_AS(residual_sweep(ds, leaked, {10}, {"norm"}, nm), ConfigError);

    const Dataset holdout = extract_trajectories({make_holdout_episode(cfg, 2)}, tp, tf);
    const EmbeddingModel model = fit_isomap(embedding_points(cfg, ds), 10, 5);
    const auto rows =
        residual_sweep(ds, holdout, {ds.size()}, {"norm", "random", "manifold"}, nm, &model, 0, cfg.dpc.affine);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].cum_residual == doctest::Approx(rows[1].cum_residual).epsilon(1e-12));
    CHECK(rows[0].cum_residual == doctest::Approx(rows[2].cum_residual).epsilon(1e-12));

    // Queries that are dataset windows find themselves at distance zero.
    const Dataset self = extract_trajectories({relabel(ds.episodes()[1], 999)}, tp, tf);
    const auto self_rows = residual_sweep(ds, self, {1}, {"norm"}, nm, nullptr, 0, cfg.dpc.affine);
    CHECK(self_rows[0].cum_residual < 1e-8 * static_cast<double>(self.size()));

    CHECK_THROWS_AS(residual_sweep(ds, holdout, {10}, {"manifold"}, nm), ConfigError);
    CHECK_THROWS_AS(residual_sweep(ds, holdout, {10}, {"psychic"}, nm), ConfigError);
}

TEST_CASE("cost sweep: a one-entry N_cols list gives one row")
{
    const ExperimentConfig cfg = parse_config(tiny_cartpole());
    const Dataset ds = generate_data(cfg);
    const auto rows = cost_sweep(cfg, ds, nullptr, 0);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].method == "select_norm");
    CHECK(rows[0].n_cols == 40);
    CHECK(std::isfinite(rows[0].cost));
    CHECK(rows[0].qp_ms_total > 0.0);
}

TEST_CASE("runs are reproducible from config and seed")
{
    const ExperimentConfig cfg = parse_config(tiny_cartpole());
    const Dataset ds = generate_data(cfg);
    const RunResult a = run_experiment("select_norm", cfg, ds, nullptr, 40, 7);
    const RunResult b = run_experiment("select_norm", cfg, ds, nullptr, 40, 7);
    REQUIRE(a.trace.rows.size() == b.trace.rows.size());
    for (std::size_t k = 0; k < a.trace.rows.size(); ++k) {
        CHECK(a.trace.rows[k].u == b.trace.rows[k].u);
        CHECK(a.trace.rows[k].y == b.trace.rows[k].y);
    }
    CHECK(a.trace.total_cost == b.trace.total_cost);

    const Dataset ds2 = generate_data(cfg);
    CHECK(ds2.flat() == ds.flat());

    // Every baseline runs on the tiny setup.
    for (const char* m : {"select_random", "select_full", "full_deepc", "time_windowed"}) {
        CAPTURE(m);
        const RunResult r = run_experiment(m, cfg, ds, nullptr, 40, 1);
        CHECK(r.trace.rows.size() > 0);
    }
}

TEST_CASE("CSV and summary schemas")
{
    write_residual_csv({{"norm", 10, 1.5}}, temp_path("residual.csv"));
    CHECK(first_line(temp_path("residual.csv")) == "method,n_cols,cum_residual");
    write_cost_csv({{"select_norm", 10, 2.0, false, 1.0, 2.0}}, temp_path("cost.csv"));
    CHECK(first_line(temp_path("cost.csv")) == "method,n_cols,cost,diverged,sel_ms_total,qp_ms_total");
    write_isomap_csv({{10, 2, 0.1}}, temp_path("isomap.csv"));
    CHECK(first_line(temp_path("isomap.csv")) == "k,d_embed,recon_error");
    write_contrast_csv({{8, 32, 1.0, 2.0}}, temp_path("contrast.csv"));
    CHECK(first_line(temp_path("contrast.csv")) == "length,dim,delta_l1,delta_embedded");

    const ExperimentConfig cfg = parse_config(tiny_cartpole());
    const Dataset ds = generate_data(cfg);
    const RunResult r = run_experiment("select_norm", cfg, ds, nullptr, 40, 0);
    save_trace(r.trace, temp_path("trace.csv"));
    CHECK(first_line(temp_path("trace.csv")) == "step,u_0,y_0,y_1,y_2,y_3,y_4,cost,iters,sel_ms,qp_ms,converged");
    write_summary_json(cfg, {r}, {{"finite_cost", true, "ok"}}, temp_path("summary.json"));
    const json j = json::parse(read_file(temp_path("summary.json")));
    CHECK(j.at("config") == "tiny");
    CHECK(j.at("config_hash").get<std::string>().size() == 16);
    CHECK(j.at("runs").size() == 1);
    CHECK(j.at("checks")[0].at("passed") == true);
}

TEST_CASE("isomap grid and contrast curve shapes")
{
    std::mt19937_64 rng(4);
    const Mat pts = oracle::random_matrix(rng, 6, 120);
    const auto grid = isomap_grid(pts, {6, 10}, {1, 2, 4});
    REQUIRE(grid.size() == 6);
    for (std::size_t i = 0; i < grid.size(); i += 3) {
        CHECK(grid[i].recon_error >= grid[i + 1].recon_error - 1e-12);
        CHECK(grid[i + 1].recon_error >= grid[i + 2].recon_error - 1e-12);
    }

    PlantConfig pc;
    pc.name = "rocket";
    DataConfig d;
    d.episodes = 10;
    d.steps = 40;
    const auto rows = contrast_curve(generate_episodes(pc, d), {4, 8}, 6, 3, 5, 0);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].dim == 4 * 9);
    CHECK(rows[1].dim == 8 * 9);
    for (const auto& r : rows) {
        CHECK(r.delta_l1 > 0.0);
        CHECK(r.delta_embedded > 0.0);
    }
}
