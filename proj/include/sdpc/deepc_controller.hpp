#pragma once

#include "sdpc/qp_solver.hpp"
#include "sdpc/trajectory_data.hpp"

#include <optional>
#include <vector>

namespace sdpc {

/// a' y_k <= b, imposed on every future output y_k.
struct OutputConstraint {
    Vec a;
    double b = 0.0;
};

struct DPCConfig {
    int t_past = 10;
    int t_future = 25;
    Mat Q;  // p x p
    Mat R;  // m x m
    Vec y_ref;
    double lambda_1 = 0.0;
    double lambda_pi = 0.0;
    /// Weight on the past-output slack. Negative selects 1e5 * max(Q);
    /// zero turns the past-output rows into hard equalities.
    double slack_weight = -1.0;
    /// Per-channel input bounds; empty means unbounded.
    Vec u_low;
    Vec u_high;
    std::vector<OutputConstraint> y_constraints;
    bool affine = true;
    /// Ridge in the projection regularizer. Negative selects
    /// 1e-9 * trace(H_z H_z^T) / rows, zero uses the exact pseudo-inverse.
    double projection_eps = -1.0;
    /// Substitute u_f and y_f by their defining equalities so the solver
    /// works on [g; sigma; t] only. Same optimum, smaller KKT system.
    bool condensed = true;
    QPSettings qp = [] {
        QPSettings s;
        s.method = QPMethod::automatic;
        return s;
    }();

    int input_dim() const { return static_cast<int>(R.rows()); }
    int output_dim() const { return static_cast<int>(Q.rows()); }
    double effective_slack_weight() const;
    /// Throws ConfigError on inconsistent dimensions, indefinite weights or
    /// unordered bounds.
    void validate() const;
    double stage_cost(const Vec& u, const Vec& y) const;
};

/// Where each block of the decision vector lives; -1 offsets mean absent.
struct QPLayout {
    bool condensed = false;
    Index n_g = 0;
    Index g_offset = 0;
    Index u_f_offset = -1;
    Index y_f_offset = -1;
    Index sigma_offset = -1;
    Index t_offset = -1;
    Index num_vars = 0;
};

struct BuiltQP {
    QuadraticProgram qp;
    QPLayout layout;
    /// Constant dropped from the QP objective (reference and slack offsets).
    double constant = 0.0;
};

/// Pi = H_z^T (H_z H_z^T + eps I)^{-1} H_z with H_z = [U_p; U_f; Y_p; (ones)].
Mat projection_matrix(const HankelBlocks& blocks, double eps = -1.0);

BuiltQP build_qp(const DPCConfig& cfg, const HankelBlocks& blocks, const Vec& u_past, const Vec& y_past);

struct DPCSolution {
    Vec g;
    Vec u_f;
    Vec y_f;
    Vec sigma;
    double objective = kInf;
    QPStatus status = QPStatus::max_iterations;
    int qp_iterations = 0;
    double primal_residual = kInf;
    double dual_residual = kInf;

    bool ok() const { return status == QPStatus::optimal; }
};

/// Open-loop trajectory [u_p, u_f; y_p, y_f] implied by a solution.
Trajectory prediction_of(const DPCSolution& sol, const Vec& u_past, const Vec& y_past, int t_past, int t_future);

/// Regularized DeePC over caller-supplied blocks. Keeps the last solution for
/// warm starts and for get_last_prediction.
class DeePCController {
public:
    explicit DeePCController(DPCConfig cfg);

    const DPCConfig& config() const { return cfg_; }

    DPCSolution compute_action(const HankelBlocks& blocks, const Vec& u_past, const Vec& y_past);

    /// Trajectory built from the cached solution, or nullopt before the first
    /// successful solve.
    std::optional<Trajectory> get_last_prediction(const Vec& u_past, const Vec& y_past) const;
    const std::optional<DPCSolution>& last_solution() const { return last_; }

    void reset();

private:
    DPCConfig cfg_;
    std::optional<DPCSolution> last_;
    std::optional<WarmStart> warm_;
};

}  // namespace sdpc
