#include "sdpc/select_dpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace sdpc {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0)
{
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// Input of the first future step of a trajectory.
Vec first_future_input(const Trajectory& tau) { return tau.u.row(tau.t_past).transpose(); }

Vec hold_input(const Vec& u_past, const DPCConfig& cfg)
{
    const Index m = cfg.input_dim();
    return u_past.tail(m);
}

}  // namespace

void OuterLoopSettings::validate() const
{
    if (!(eps_conv > 0.0))
        throw ConfigError("outer loop: eps_conv must be positive");
    if (max_outer_iters < 1)
        throw ConfigError("outer loop: max_outer_iters must be >= 1");
    if (n_cols < 1)
        throw ConfigError("outer loop: n_cols must be >= 1");
}

Trajectory init_prediction(const Vec& u_past, const Vec& y_past, int t_past, int t_future,
                           const SelectDPCState* prev, bool warm_shift)
{
    require_dims(t_past >= 1 && t_future >= 1 && u_past.size() % t_past == 0 && y_past.size() % t_past == 0,
                 "init_prediction: past window does not divide into t_past steps");
    const Index m = u_past.size() / t_past, p = y_past.size() / t_past;
    const int L = t_past + t_future;
    Mat u(L, m), y(L, p);
    for (int i = 0; i < t_past; ++i) {
        u.row(i) = u_past.segment(i * m, m).transpose();
        y.row(i) = y_past.segment(i * p, p).transpose();
    }
    const bool shift = warm_shift && prev != nullptr && prev->tau_tilde.t_future == t_future &&
                       prev->tau_tilde.input_dim() == m && prev->tau_tilde.output_dim() == p;
    if (shift) {
        const Trajectory& old = prev->tau_tilde;
        for (int i = 0; i < t_future; ++i) {
            const int src = std::min(old.t_past + i + 1, old.length() - 1);
            u.row(t_past + i) = old.u.row(src);
            y.row(t_past + i) = old.y.row(src);
        }
    } else {
        for (int i = 0; i < t_future; ++i) {
            u.row(t_past + i) = u.row(t_past - 1);
            y.row(t_past + i) = y.row(t_past - 1);
        }
    }
    return Trajectory(std::move(u), std::move(y), t_past, t_future);
}

// ---------------------------------------------------------------------------

SelectDPC::SelectDPC(const Dataset& dataset, DPCConfig cfg, OuterLoopSettings settings, const EmbeddingModel* model)
    : data_(&dataset), model_(model), dpc_(std::move(cfg)), settings_(std::move(settings)),
      rng_(settings_.selection.seed)
{
    settings_.validate();
    const auto& lay = dataset.layout();
    const DPCConfig& c = dpc_.config();
    if (lay.t_past != c.t_past || lay.t_future != c.t_future || lay.m != c.input_dim() || lay.p != c.output_dim())
        throw ConfigError("SelectDPC: dataset layout does not match the controller configuration");
    if (settings_.selection.kind == SelectionKind::manifold && model_ == nullptr)
        throw ConfigError("SelectDPC: manifold selection needs an embedding model");
    norm_method_ = settings_.selection;
    norm_method_.kind = SelectionKind::norm;
    if (settings_.selection.kind == SelectionKind::full)
        full_blocks_ = lq_compress(blocks_from_all(dataset, c.affine));
}

std::string SelectDPC::name() const { return std::string("select_") + to_string(settings_.selection.kind); }

void SelectDPC::reset()
{
    dpc_.reset();
    state_.reset();
    rng_.seed(settings_.selection.seed);
}

SelectionResult SelectDPC::select(const Trajectory& tau)
{
    switch (settings_.selection.kind) {
    case SelectionKind::norm:
        return select_norm(*data_, tau.flatten(), settings_.n_cols, norm_method_);
    case SelectionKind::manifold:
        return select_manifold(*data_, *model_, tau.flatten(), settings_.n_cols, norm_method_);
    case SelectionKind::random:
        return select_random(data_->size(), settings_.n_cols, rng_);
    case SelectionKind::full: {
        SelectionResult r;
        r.indices.resize(static_cast<std::size_t>(data_->size()));
        for (Index i = 0; i < data_->size(); ++i)
            r.indices[static_cast<std::size_t>(i)] = i;
        return r;
    }
    }
    throw Error("SelectDPC: unhandled selection kind");
}

Vec SelectDPC::step(const Vec& u_past, const Vec& y_past, StepDiagnostics& diag)
{
    const DPCConfig& cfg = dpc_.config();
    diag = StepDiagnostics{};
    Trajectory tau = init_prediction(u_past, y_past, cfg.t_past, cfg.t_future, state_ ? &*state_ : nullptr,
                                     settings_.warm_shift);
    const Vec fallback_u = first_future_input(tau);

    std::optional<DPCSolution> best;
    std::vector<Index> prev_sorted;
    for (int it = 0; it < settings_.max_outer_iters; ++it) {
        OuterIteration rec;
        auto t0 = Clock::now();
        SelectionResult sel = select(tau);
        rec.selection_ms = ms_since(t0);
        diag.selection_fallback = diag.selection_fallback || sel.fallback;
        diag.clamped = diag.clamped || sel.clamped;
        std::vector<Index> sorted = sel.indices;
        std::sort(sorted.begin(), sorted.end());
        rec.selected = std::move(sel.indices);

        if (best && sorted == prev_sorted) {
            // Same data as the last solve: the QP and hence tau would repeat.
            rec.reused = true;
            rec.status = best->status;
            diag.selection_ms += rec.selection_ms;
            diag.iterations.push_back(std::move(rec));
            diag.converged = true;
            break;
        }

        t0 = Clock::now();
        DPCSolution sol;
        if (settings_.selection.kind == SelectionKind::full)
            sol = dpc_.compute_action(*full_blocks_, u_past, y_past);
        else
            sol = dpc_.compute_action(blocks_from(*data_, rec.selected, cfg.affine), u_past, y_past);
        rec.qp_ms = ms_since(t0);
        rec.status = sol.status;
        rec.qp_iterations = sol.qp_iterations;
        diag.selection_ms += rec.selection_ms;
        diag.qp_ms += rec.qp_ms;

        if (!sol.ok()) {
            diag.iterations.push_back(std::move(rec));
            break;
        }
        Trajectory next = prediction_of(sol, u_past, y_past, cfg.t_past, cfg.t_future);
        const Vec old_flat = tau.flatten();
        rec.change = (next.flatten() - old_flat).norm();
        const bool conv = rec.change <= settings_.eps_conv * (1.0 + old_flat.norm());
        tau = std::move(next);
        best = std::move(sol);
        prev_sorted = std::move(sorted);
        diag.iterations.push_back(std::move(rec));
        if (conv) {
            diag.converged = true;
            break;
        }
    }
    diag.outer_iterations = static_cast<int>(diag.iterations.size());

    SelectDPCState st;
    st.iteration_count = diag.outer_iterations;
    st.converged = diag.converged;
    st.tau_tilde = tau;
    Vec u0;
    if (best) {
        u0 = best->u_f.head(cfg.input_dim());
        diag.g = best->g;
        st.last_solution = std::move(best);
    } else {
        diag.degraded = true;
        u0 = fallback_u;
    }
    diag.prediction = std::move(tau);
    state_ = std::move(st);
    return u0;
}

// ---------------------------------------------------------------------------

FullDeePC::FullDeePC(const Dataset& dataset, DPCConfig cfg, bool compress) : dpc_(std::move(cfg))
{
    const auto& lay = dataset.layout();
    const DPCConfig& c = dpc_.config();
    if (lay.t_past != c.t_past || lay.t_future != c.t_future || lay.m != c.input_dim() || lay.p != c.output_dim())
        throw ConfigError("FullDeePC: dataset layout does not match the controller configuration");
    blocks_ = blocks_from_all(dataset, c.affine);
    if (compress)
        blocks_ = lq_compress(blocks_);
}

Vec FullDeePC::step(const Vec& u_past, const Vec& y_past, StepDiagnostics& diag)
{
    diag = StepDiagnostics{};
    const auto t0 = Clock::now();
    const DPCSolution sol = dpc_.compute_action(blocks_, u_past, y_past);
    OuterIteration rec;
    rec.qp_ms = ms_since(t0);
    rec.status = sol.status;
    rec.qp_iterations = sol.qp_iterations;
    diag.qp_ms = rec.qp_ms;
    diag.iterations.push_back(rec);
    diag.outer_iterations = 1;
    const DPCConfig& cfg = dpc_.config();
    if (!sol.ok()) {
        diag.degraded = true;
        diag.prediction = init_prediction(u_past, y_past, cfg.t_past, cfg.t_future, nullptr, false);
        return hold_input(u_past, cfg);
    }
    diag.converged = true;
    diag.g = sol.g;
    diag.prediction = prediction_of(sol, u_past, y_past, cfg.t_past, cfg.t_future);
    return sol.u_f.head(cfg.input_dim());
}

void FullDeePC::reset() { dpc_.reset(); }

// ---------------------------------------------------------------------------

TimeWindowedDeePC::TimeWindowedDeePC(DPCConfig cfg, int window, std::vector<std::pair<Vec, Vec>> seed_samples)
    : dpc_(std::move(cfg)), window_(window), seed_(std::move(seed_samples))
{
    if (window_ < dpc_.config().t_past + dpc_.config().t_future)
        throw ConfigError("TimeWindowedDeePC: window shorter than t_past + t_future");
    reset();
}

void TimeWindowedDeePC::reset()
{
    dpc_.reset();
    buffer_.clear();
    for (const auto& s : seed_)
        observe(s.first, s.second);
    last_rank_ = 0;
}

void TimeWindowedDeePC::observe(const Vec& u, const Vec& y)
{
    buffer_.emplace_back(u, y);
    while (static_cast<int>(buffer_.size()) > window_)
        buffer_.pop_front();
}

Vec TimeWindowedDeePC::step(const Vec& u_past, const Vec& y_past, StepDiagnostics& diag)
{
    diag = StepDiagnostics{};
    const DPCConfig& cfg = dpc_.config();
    const int L = cfg.t_past + cfg.t_future;
    const Index m = cfg.input_dim(), p = cfg.output_dim();
    if (static_cast<int>(buffer_.size()) < L) {
        diag.degraded = true;
        diag.prediction = init_prediction(u_past, y_past, cfg.t_past, cfg.t_future, nullptr, false);
        return hold_input(u_past, cfg);
    }
    const Index T = static_cast<Index>(buffer_.size());
    Mat u(T, m), y(T, p);
    for (Index t = 0; t < T; ++t) {
        u.row(t) = buffer_[static_cast<std::size_t>(t)].first.transpose();
        y.row(t) = buffer_[static_cast<std::size_t>(t)].second.transpose();
    }
    const Mat hu = build_hankel(u, L), hy = build_hankel(y, L);
    HankelBlocks b;
    b.u_past = hu.topRows(cfg.t_past * m);
    b.u_future = hu.bottomRows(cfg.t_future * m);
    b.y_past = hy.topRows(cfg.t_past * p);
    b.y_future = hy.bottomRows(cfg.t_future * p);
    b.affine = cfg.affine;
    if (cfg.affine)
        b.ones = Eigen::RowVectorXd::Ones(hu.cols());
    last_rank_ = numeric_rank(b.stacked());

    const auto t0 = Clock::now();
    const DPCSolution sol = dpc_.compute_action(b, u_past, y_past);
    OuterIteration rec;
    rec.qp_ms = ms_since(t0);
    rec.status = sol.status;
    rec.qp_iterations = sol.qp_iterations;
    diag.qp_ms = rec.qp_ms;
    diag.iterations.push_back(rec);
    diag.outer_iterations = 1;
    if (!sol.ok()) {
        diag.degraded = true;
        diag.prediction = init_prediction(u_past, y_past, cfg.t_past, cfg.t_future, nullptr, false);
        return hold_input(u_past, cfg);
    }
    diag.converged = true;
    diag.g = sol.g;
    diag.prediction = prediction_of(sol, u_past, y_past, cfg.t_past, cfg.t_future);
    return sol.u_f.head(m);
}

// ---------------------------------------------------------------------------

double ClosedLoopTrace::selection_ms_total() const
{
    double s = 0.0;
    for (const auto& r : rows)
        s += r.sel_ms;
    return s;
}

double ClosedLoopTrace::qp_ms_total() const
{
    double s = 0.0;
    for (const auto& r : rows)
        s += r.qp_ms;
    return s;
}

ClosedLoopTrace run_closed_loop(Plant& plant, Controller& controller, const ClosedLoopOptions& opts)
{
    const DPCConfig& cfg = controller.config();
    const int tp = cfg.t_past;
    const Index m = plant.input_dim(), p = plant.output_dim();
    require_dims(m == cfg.input_dim() && p == cfg.output_dim(), "run_closed_loop: plant and controller disagree");

    ClosedLoopTrace trace;
    trace.controller = controller.name();
    std::mt19937_64 rng(opts.warmup_seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::deque<std::pair<Vec, Vec>> hist;

    for (int k = 0; k < opts.steps; ++k) {
        TraceRow row;
        row.step = k;
        Vec u(m);
        StepDiagnostics diag;
        if (k < tp) {
            for (Index c = 0; c < m; ++c) {
                const bool bounded = plant.u_low().size() > 0 && std::isfinite(plant.u_low()[c]) &&
                                     std::isfinite(plant.u_high()[c]);
                const double center = bounded ? 0.5 * (plant.u_low()[c] + plant.u_high()[c]) : 0.0;
                const double half = bounded ? 0.5 * (plant.u_high()[c] - plant.u_low()[c]) : 1.0;
                u[c] = center + opts.warmup_amplitude * half * uni(rng);
            }
        } else {
            Vec up(tp * m), yp(tp * p);
            for (int i = 0; i < tp; ++i) {
                const auto& h = hist[hist.size() - static_cast<std::size_t>(tp - i)];
                up.segment(i * m, m) = h.first;
                yp.segment(i * p, p) = h.second;
            }
            u = controller.step(up, yp, diag);
            row.controlled = true;
            row.iters = diag.outer_iterations;
            row.sel_ms = diag.selection_ms;
            row.qp_ms = diag.qp_ms;
            row.converged = diag.converged;
            row.degraded = diag.degraded;
            if (opts.record_g)
                row.g = diag.g;
        }
        const StepResult r = plant.step(u);
        controller.observe(r.u, r.y);
        hist.emplace_back(r.u, r.y);
        if (static_cast<int>(hist.size()) > tp)
            hist.pop_front();
        row.u = r.u;
        row.y = r.y;
        row.cost = cfg.stage_cost(r.u, r.y);
        const bool blown = !r.y.allFinite() || r.y.lpNorm<Eigen::Infinity>() > opts.blowup_bound;
        if (row.controlled &&
            std::find(opts.snapshot_steps.begin(), opts.snapshot_steps.end(), k) != opts.snapshot_steps.end())
            trace.snapshots.emplace_back(k, diag.prediction);
        trace.rows.push_back(std::move(row));
        if (blown) {
            trace.diverged = true;
            trace.total_cost = kInf;
            break;
        }
        trace.total_cost += trace.rows.back().cost;
    }
    return trace;
}

int active_count(const Vec& g, double rel)
{
    if (g.size() == 0)
        return 0;
    const double thr = rel * g.lpNorm<Eigen::Infinity>();
    return static_cast<int>((g.array().abs() > thr).count());
}

std::vector<int> combination_profile(const ClosedLoopTrace& trace, double rel)
{
    std::vector<int> out;
    for (const auto& r : trace.rows)
        if (r.controlled)
            out.push_back(active_count(r.g, rel));
    return out;
}

void save_trace(const ClosedLoopTrace& trace, const std::string& path)
{
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write trace '" + path + "'");
    const Index m = trace.rows.empty() ? 0 : trace.rows.front().u.size();
    const Index p = trace.rows.empty() ? 0 : trace.rows.front().y.size();
    os << "step";
    for (Index i = 0; i < m; ++i)
        os << ",u_" << i;
    for (Index i = 0; i < p; ++i)
        os << ",y_" << i;
    os << ",cost,iters,sel_ms,qp_ms,converged\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return buf;
    };
    for (const auto& r : trace.rows) {
        os << r.step;
        for (Index i = 0; i < m; ++i)
            os << ',' << num(r.u[i]);
        for (Index i = 0; i < p; ++i)
            os << ',' << num(r.y[i]);
        os << ',' << num(r.cost) << ',' << r.iters << ',' << num(r.sel_ms) << ',' << num(r.qp_ms) << ','
           << (r.converged ? 1 : 0) << '\n';
    }
    if (!trace.snapshots.empty()) {
        std::ofstream ss(path + ".snapshots.csv");
        if (!ss)
            throw IoError("cannot write snapshot file for '" + path + "'");
        ss << "snapshot_step,t";
        for (Index i = 0; i < m; ++i)
            ss << ",u_" << i;
        for (Index i = 0; i < p; ++i)
            ss << ",y_" << i;
        ss << '\n';
        for (const auto& [k, tau] : trace.snapshots)
            for (int t = 0; t < tau.length(); ++t) {
                ss << k << ',' << (k - tau.t_past + t);
                for (Index i = 0; i < m; ++i)
                    ss << ',' << num(tau.u(t, i));
                for (Index i = 0; i < p; ++i)
                    ss << ',' << num(tau.y(t, i));
                ss << '\n';
            }
    }
}

}  // namespace sdpc
