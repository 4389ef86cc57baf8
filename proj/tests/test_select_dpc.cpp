#include "oracles.hpp"
#include "sdpc/select_dpc.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace sdpc;

namespace {

struct Setup {
    oracle::Lti sys;
    Dataset data;
    int n = 3, tp = 3, tf = 8;

    explicit Setup(std::uint64_t seed, Index steps = 300)
    {
        std::mt19937_64 rng(seed);
        // Stable, well-damped chain with unit-order DC gain.
        sys.A = Mat(n, n);
        sys.A << 0.9, 0.1, 0.0, 0.0, 0.7, 0.2, 0.0, 0.0, 0.5;
        sys.B = Vec::Unit(n, n - 1);
        sys.C = Mat::Zero(1, n);
        sys.C(0, 0) = 1.0;
        sys.D = Mat::Zero(1, 1);
        Episode ep;
        ep.u = oracle::random_matrix(rng, steps, 1);
        ep.y = oracle::simulate_closed_form(sys, Vec::Zero(n), ep.u);
        data = extract_trajectories({ep}, tp, tf);
        dc_gain = (sys.C * (Mat::Identity(n, n) - sys.A).inverse() * sys.B)(0, 0);
    }

    double dc_gain = 0.0;
    double r_weight = 1e-3;

    /// Reference reachable with u = 0.5.
    double reference() const { return 0.5 * dc_gain; }

    /// Static optimum of Q (y - r)^2 + R u^2 subject to y = G u.
    double settled_output() const
    {
        const double r = reference(), g = dc_gain;
        return g * g * r / (g * g + r_weight);
    }

    DPCConfig config() const
    {
        DPCConfig cfg;
        cfg.t_past = tp;
        cfg.t_future = tf;
        cfg.Q = Mat::Identity(1, 1);
        cfg.R = r_weight * Mat::Identity(1, 1);
        cfg.y_ref = Vec::Constant(1, reference());
        cfg.lambda_1 = 1e-3;
        cfg.affine = false;
        cfg.u_low = Vec::Constant(1, -2.0);
        cfg.u_high = Vec::Constant(1, 2.0);
        return cfg;
    }

    LtiPlant plant() const
    {
        LtiPlant p(sys.A, sys.B, sys.C, sys.D, 1.0, Vec::Constant(1, -2.0), Vec::Constant(1, 2.0));
        p.reset();
        return p;
    }
};

/// Applies a constant input regardless of the measurements.
class ConstantController : public Controller {
public:
    ConstantController(DPCConfig cfg, double u) : cfg_(std::move(cfg)), u_(u) {}
    std::string name() const override { return "constant"; }
    Vec step(const Vec&, const Vec&, StepDiagnostics& d) override
    {
        d = StepDiagnostics{};
        return Vec::Constant(1, u_);
    }
    void reset() override {}
    const DPCConfig& config() const override { return cfg_; }

private:
    DPCConfig cfg_;
    double u_;
};

}  // namespace

TEST_CASE("initializer: hold")
{
    Vec up(6), yp(3);
    up << 1, 2, 3, 4, 5, 6;  // m = 2
    yp << 7, 8, 9;           // p = 1
    const Trajectory t = init_prediction(up, yp, 3, 4, nullptr, true);
    CHECK(t.u_past() == up);
    CHECK(t.y_past() == yp);
    for (int k = 0; k < 4; ++k) {
        CHECK(t.u(3 + k, 0) == 5.0);
        CHECK(t.u(3 + k, 1) == 6.0);
        CHECK(t.y(3 + k, 0) == 9.0);
    }
    CHECK_THROWS_AS(init_prediction(up, Vec::Zero(4), 3, 4, nullptr, true), DimensionError);
}

TEST_CASE("initializer: shift of the previous prediction")
{
    Mat u(5, 1), y(5, 1);
    u << 0, 0, 1, 2, 3;
    y << 0, 0, 10, 20, 30;
    SelectDPCState prev;
    prev.tau_tilde = Trajectory(u, y, 2, 3);
    Vec up(2), yp(2);
    up << 0, 1;
    yp << 0, 10;
    const Trajectory t = init_prediction(up, yp, 2, 3, &prev, true);
    CHECK(t.u_future() == Vec::Map(std::vector<double>{2, 3, 3}.data(), 3));
    CHECK(t.y_future() == Vec::Map(std::vector<double>{20, 30, 30}.data(), 3));
    const Trajectory h = init_prediction(up, yp, 2, 3, &prev, false);
    CHECK(h.u_future() == Vec::Constant(3, 1.0));
}

TEST_CASE("outer loop settings validation")
{
    OuterLoopSettings s;
    s.eps_conv = 0.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = {};
    s.max_outer_iters = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = {};
    s.n_cols = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);

    Setup f(1);
    OuterLoopSettings m;
    m.selection.kind = SelectionKind::manifold;
    CHECK_THROWS_AS(SelectDPC(f.data, f.config(), m), ConfigError);
    DPCConfig bad = f.config();
    bad.t_future = 5;
    CHECK_THROWS_AS(SelectDPC(f.data, bad, OuterLoopSettings{}), ConfigError);
}

TEST_CASE("full selection reproduces plain DeePC")
{
    Setup f(3);
    OuterLoopSettings s;
    s.selection.kind = SelectionKind::full;
    SelectDPC sel(f.data, f.config(), s);
    FullDeePC full(f.data, f.config());
    const Trajectory w = f.data.trajectory(40);
    StepDiagnostics da, db;
    const Vec ua = sel.step(w.u_past(), w.y_past(), da);
    const Vec ub = full.step(w.u_past(), w.y_past(), db);
    CHECK((ua - ub).norm() < 1e-6);
    CHECK(da.converged);
    CHECK(da.iterations.size() == 2);
    CHECK(da.iterations.back().reused);
    CHECK(sel.name() == "select_full");
}

TEST_CASE("selecting every window equals uncompressed DeePC")
{
    Setup f(4, 120);
    OuterLoopSettings s;
    s.n_cols = f.data.size() + 10;
    SelectDPC sel(f.data, f.config(), s);
    DeePCController dpc(f.config());
    const Trajectory w = f.data.trajectory(7);
    StepDiagnostics d;
    const Vec u = sel.step(w.u_past(), w.y_past(), d);
    const DPCSolution ref = dpc.compute_action(blocks_from_all(f.data, false), w.u_past(), w.y_past());
    REQUIRE(ref.ok());
    CHECK((u - ref.u_f.head(1)).norm() < 1e-5);
    CHECK(d.clamped);
    CHECK(d.outer_iterations == 2);
}

TEST_CASE("single outer iteration")
{
    Setup f(5);
    OuterLoopSettings s;
    s.max_outer_iters = 1;
    s.n_cols = 20;
    SelectDPC sel(f.data, f.config(), s);
    const Trajectory w = f.data.trajectory(100);
    StepDiagnostics d;
    sel.step(w.u_past(), w.y_past(), d);
    CHECK(d.outer_iterations == 1);
    CHECK(d.iterations.size() == 1);
    REQUIRE(sel.state().has_value());
    CHECK(sel.state()->iteration_count == 1);
    CHECK(sel.state()->last_solution.has_value());
    CHECK(d.g.size() == 20);
}

TEST_CASE("select-DPC regulates an LTI plant to the reference")
{
    Setup f(6, 400);
    OuterLoopSettings s;
    s.n_cols = 40;
    for (SelectionKind kind : {SelectionKind::norm, SelectionKind::random}) {
        s.selection.kind = kind;
        s.selection.seed = 2;
        SelectDPC sel(f.data, f.config(), s);
        LtiPlant plant = f.plant();
        ClosedLoopOptions opts;
        opts.steps = 60;
        opts.snapshot_steps = {10, 30};
        const ClosedLoopTrace tr = run_closed_loop(plant, sel, opts);
        CHECK_FALSE(tr.diverged);
        REQUIRE(tr.rows.size() == 60);
        CHECK(std::abs(tr.rows.back().y[0] - f.settled_output()) < 0.05 * std::abs(f.reference()));
        CHECK(tr.snapshots.size() == 2);
        CHECK(tr.snapshots[0].second.length() == f.tp + f.tf);
        double sum = 0.0;
        for (const auto& r : tr.rows)
            sum += r.cost;
        CHECK(tr.total_cost == doctest::Approx(sum));
        CHECK_FALSE(tr.rows[f.tp - 1].controlled);
        CHECK(tr.rows[f.tp].controlled);
        for (const auto& r : tr.rows)
            if (r.controlled)
                CHECK(r.g.size() == 40);
    }
}

TEST_CASE("select-DPC is deterministic and resets")
{
    Setup f(7);
    OuterLoopSettings s;
    s.n_cols = 25;
    s.selection.kind = SelectionKind::random;
    s.selection.seed = 9;
    SelectDPC sel(f.data, f.config(), s);
    LtiPlant p1 = f.plant(), p2 = f.plant();
    ClosedLoopOptions opts;
    opts.steps = 30;
    const ClosedLoopTrace a = run_closed_loop(p1, sel, opts);
    sel.reset();
    const ClosedLoopTrace b = run_closed_loop(p2, sel, opts);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i)
        CHECK((a.rows[i].u - b.rows[i].u).norm() == 0.0);
}

TEST_CASE("time-windowed DeePC")
{
    Setup f(8);
    DPCConfig cfg = f.config();
    CHECK_THROWS_AS(TimeWindowedDeePC(cfg, 5), ConfigError);

    TimeWindowedDeePC empty(cfg, 60);
    StepDiagnostics d;
    const Vec u = empty.step(Vec::Constant(3, 0.4), Vec::Zero(3), d);
    CHECK(d.degraded);
    CHECK(u[0] == 0.4);

    // The seed run has to lead straight into the closed loop on the same plant.
    LtiPlant plant = f.plant();
    std::mt19937_64 rng(1);
    std::vector<std::pair<Vec, Vec>> seed;
    for (int t = 0; t < 80; ++t) {
        const StepResult r = plant.step(oracle::random_matrix(rng, 1, 1));
        seed.emplace_back(r.u, r.y);
    }
    TimeWindowedDeePC tw(cfg, 60, seed);
    CHECK(tw.buffered() == 60);
    ClosedLoopOptions opts;
    opts.steps = 50;
    const ClosedLoopTrace tr = run_closed_loop(plant, tw, opts);
    CHECK_FALSE(tr.diverged);
    CHECK(tw.buffered() == 60);
    CHECK(tw.last_rank() <= (f.tp + f.tf) + f.n);
    CHECK(std::abs(tr.rows.back().y[0] - f.settled_output()) < 0.05 * std::abs(f.reference()));
    tw.reset();
    CHECK(tw.buffered() == 60);
}

TEST_CASE("closed loop stops on blow-up")
{
    Mat A(1, 1), B(1, 1), C(1, 1), D(1, 1);
    A << 1.5;
    B << 1;
    C << 1;
    D << 0;
    LtiPlant plant(A, B, C, D);
    plant.reset();
    DPCConfig cfg;
    cfg.t_past = 2;
    cfg.t_future = 3;
    cfg.Q = Mat::Identity(1, 1);
    cfg.R = Mat::Identity(1, 1);
    cfg.y_ref = Vec::Zero(1);
    ConstantController c(cfg, 1.0);
    ClosedLoopOptions opts;
    opts.steps = 200;
    opts.blowup_bound = 100.0;
    const ClosedLoopTrace tr = run_closed_loop(plant, c, opts);
    CHECK(tr.diverged);
    CHECK(std::isinf(tr.total_cost));
    CHECK(tr.rows.size() < 200);
    CHECK(std::abs(tr.rows.back().y[0]) > 100.0);
}

TEST_CASE("active counts and trace files")
{
    Vec g(5);
    g << 1.0, 1e-9, -0.5, 0.0, 2e-6;
    CHECK(active_count(g) == 3);
    CHECK(active_count(g, 0.4) == 2);
    CHECK(active_count(Vec()) == 0);

    Setup f(9);
    OuterLoopSettings s;
    s.n_cols = 15;
    SelectDPC sel(f.data, f.config(), s);
    LtiPlant plant = f.plant();
    ClosedLoopOptions opts;
    opts.steps = 12;
    opts.snapshot_steps = {5};
    const ClosedLoopTrace tr = run_closed_loop(plant, sel, opts);
    const auto prof = combination_profile(tr);
    CHECK(prof.size() == 12 - static_cast<std::size_t>(f.tp));

    const auto dir = std::filesystem::temp_directory_path() / "sdpc_test_trace";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "trace.csv").string();
    save_trace(tr, path);
    std::ifstream is(path);
    std::string header;
    std::getline(is, header);
    CHECK(header == "step,u_0,y_0,cost,iters,sel_ms,qp_ms,converged");
    int lines = 0;
    for (std::string l; std::getline(is, l);)
        ++lines;
    CHECK(lines == 12);
    CHECK(std::filesystem::exists(path + ".snapshots.csv"));
    std::filesystem::remove_all(dir);
}
