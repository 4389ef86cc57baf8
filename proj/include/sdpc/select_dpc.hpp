#pragma once

#include "sdpc/data_selection.hpp"
#include "sdpc/deepc_controller.hpp"
#include "sdpc/plants.hpp"

#include <deque>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace sdpc {

struct OuterLoopSettings {
    double eps_conv = 1e-3;
    int max_outer_iters = 10;
    Index n_cols = 50;
    SelectionMethod selection;
    bool warm_shift = true;

    void validate() const;
};

struct SelectDPCState {
    Trajectory tau_tilde;
    std::optional<DPCSolution> last_solution;
    int iteration_count = 0;
    bool converged = false;
};

struct OuterIteration {
    std::vector<Index> selected;
    double change = 0.0;
    QPStatus status = QPStatus::max_iterations;
    int qp_iterations = 0;
    double selection_ms = 0.0;
    double qp_ms = 0.0;
    /// The selection repeated the previous one, so no QP was solved.
    bool reused = false;
};

struct StepDiagnostics {
    std::vector<OuterIteration> iterations;
    int outer_iterations = 0;
    bool converged = false;
    /// No outer iteration produced an optimal QP; the input came from the
    /// initializer.
    bool degraded = false;
    bool selection_fallback = false;
    bool clamped = false;
    double selection_ms = 0.0;
    double qp_ms = 0.0;
    /// Final combination weights and open-loop prediction.
    Vec g;
    Trajectory prediction;
};

/// Common interface of Select-DPC and the baselines.
class Controller {
public:
    virtual ~Controller() = default;
    virtual std::string name() const = 0;
    /// Input to apply given the last t_past applied inputs and measurements
    /// (time-major stacks).
    virtual Vec step(const Vec& u_past, const Vec& y_past, StepDiagnostics& diag) = 0;
    /// Record the (u, y) pair the plant actually produced.
    virtual void observe(const Vec& /*u*/, const Vec& /*y*/) {}
    virtual void reset() = 0;
    virtual const DPCConfig& config() const = 0;
};

/// Open-loop initializer: shift of the previous prediction (warm_shift with a
/// previous state) or hold of the last applied input and measurement.
Trajectory init_prediction(const Vec& u_past, const Vec& y_past, int t_past, int t_future,
                           const SelectDPCState* prev, bool warm_shift);

/// Select-DPC: alternate data selection around the current open-loop
/// prediction and DeePC on the selected windows until the prediction settles.
class SelectDPC : public Controller {
public:
    /// `dataset` (and `model`, when given) must outlive the controller.
    SelectDPC(const Dataset& dataset, DPCConfig cfg, OuterLoopSettings settings,
              const EmbeddingModel* model = nullptr);

    std::string name() const override;
    Vec step(const Vec& u_past, const Vec& y_past, StepDiagnostics& diag) override;
    void reset() override;
    const DPCConfig& config() const override { return dpc_.config(); }
    const OuterLoopSettings& settings() const { return settings_; }
    const std::optional<SelectDPCState>& state() const { return state_; }

private:
    SelectionResult select(const Trajectory& tau);

    const Dataset* data_;
    const EmbeddingModel* model_;
    DeePCController dpc_;
    OuterLoopSettings settings_;
    SelectionMethod norm_method_;
    std::mt19937_64 rng_;
    std::optional<SelectDPCState> state_;
    std::optional<HankelBlocks> full_blocks_;
};

/// DeePC on the whole dataset, compressed once at construction.
class FullDeePC : public Controller {
public:
    FullDeePC(const Dataset& dataset, DPCConfig cfg, bool compress = true);

    std::string name() const override { return "full_deepc"; }
    Vec step(const Vec& u_past, const Vec& y_past, StepDiagnostics& diag) override;
    void reset() override;
    const DPCConfig& config() const override { return dpc_.config(); }
    const HankelBlocks& blocks() const { return blocks_; }

private:
    DeePCController dpc_;
    HankelBlocks blocks_;
};

/// DeePC on a Hankel matrix of the most recent W closed-loop samples.
/// Seed samples, when given, must be the samples recorded immediately before
/// the closed loop starts, or windows across the junction are not trajectories.
class TimeWindowedDeePC : public Controller {
public:
    TimeWindowedDeePC(DPCConfig cfg, int window, std::vector<std::pair<Vec, Vec>> seed_samples = {});

    std::string name() const override { return "time_windowed"; }
    Vec step(const Vec& u_past, const Vec& y_past, StepDiagnostics& diag) override;
    void observe(const Vec& u, const Vec& y) override;
    void reset() override;
    const DPCConfig& config() const override { return dpc_.config(); }

    int window() const { return window_; }
    Index buffered() const { return static_cast<Index>(buffer_.size()); }
    /// Numeric rank of the last windowed stacked Hankel matrix.
    Index last_rank() const { return last_rank_; }

private:
    DeePCController dpc_;
    int window_;
    std::deque<std::pair<Vec, Vec>> buffer_;
    std::vector<std::pair<Vec, Vec>> seed_;
    Index last_rank_ = 0;
};

struct ClosedLoopOptions {
    int steps = 300;
    /// Amplitude of the uniform warmup input used for the first t_past steps,
    /// relative to the input half-range (absolute if the plant is unbounded).
    double warmup_amplitude = 0.05;
    std::uint64_t warmup_seed = 0;
    /// Abort with an infinite-cost flag once |y|_inf exceeds this bound.
    double blowup_bound = 1e3;
    /// Steps at which to keep the open-loop prediction.
    std::vector<int> snapshot_steps;
    bool record_g = true;
};

struct TraceRow {
    int step = 0;
    Vec u;
    Vec y;
    double cost = 0.0;
    int iters = 0;
    double sel_ms = 0.0;
    double qp_ms = 0.0;
    bool converged = false;
    bool controlled = false;  // false during warmup
    bool degraded = false;
    Vec g;
};

struct ClosedLoopTrace {
    std::vector<TraceRow> rows;
    std::vector<std::pair<int, Trajectory>> snapshots;
    double total_cost = 0.0;
    bool diverged = false;
    std::string controller;

    double selection_ms_total() const;
    double qp_ms_total() const;
};

/// Runs warmup then the controller from the plant's current state.
ClosedLoopTrace run_closed_loop(Plant& plant, Controller& controller, const ClosedLoopOptions& opts);

/// Entries with |g_i| > rel * |g|_inf.
int active_count(const Vec& g, double rel = 1e-6);
std::vector<int> combination_profile(const ClosedLoopTrace& trace, double rel = 1e-6);

/// Writes the trace columnar text file (step, u..., y..., cost, iters, sel_ms,
/// qp_ms, converged) and, when present, `<path>.snapshots.csv`.
void save_trace(const ClosedLoopTrace& trace, const std::string& path);

}  // namespace sdpc
