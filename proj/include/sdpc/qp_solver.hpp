#pragma once

#include "sdpc/common.hpp"

#include <limits>
#include <optional>
#include <string>

namespace sdpc {


/// minimize 0.5 x'Px + q'x  subject to  l <= Ax <= u.
///
/// Equalities are rows with l == u; one-sided rows use +/-infinity.
class QuadraticProgram {
public:
    QuadraticProgram() = default;
    /// Validates symmetry, numerical PSD-ness of P and l <= u; throws
    /// ConfigError when violated.
    QuadraticProgram(Mat P, Vec q, Mat A, Vec l, Vec u);

    const Mat& P() const { return P_; }
    const Vec& q() const { return q_; }
    const Mat& A() const { return A_; }
    const Vec& l() const { return l_; }
    const Vec& u() const { return u_; }
    Index num_vars() const { return q_.size(); }
    Index num_constraints() const { return l_.size(); }

    double objective(const Vec& x) const { return 0.5 * x.dot(P_ * x) + q_.dot(x); }

    /// Returns a copy with one extra constraint row.
    QuadraticProgram with_constraint(const Eigen::RowVectorXd& row, double lo, double hi) const;

private:
    Mat P_;
    Vec q_;
    Mat A_;
    Vec l_;
    Vec u_;
};

enum class QPStatus { optimal, max_iterations, primal_infeasible, dual_infeasible };

const char* to_string(QPStatus status);

struct WarmStart {
    Vec x;
    Vec y;
};

/// admm: operator splitting with polish. interior_point: dense primal-dual
/// path following, fast on small badly scaled problems but without
/// infeasibility certificates. automatic: interior point first, ADMM when it
/// does not converge.
enum class QPMethod { admm, interior_point, automatic };

const char* to_string(QPMethod method);
QPMethod qp_method_from_string(const std::string& name);

struct QPSettings {
    QPMethod method = QPMethod::admm;
    double eps_abs = 1e-6;
    double eps_rel = 1e-6;
    int max_iter = 20000;
    double rho = 0.1;
    double sigma = 1e-6;
    double alpha = 1.6;
    bool adaptive_rho = true;
    int adaptive_rho_interval = 25;
    int scaling_iters = 10;
    bool polish = true;
    /// First iteration at which a polish is attempted before convergence,
    /// doubling after each failed attempt; 0 polishes only after convergence.
    int early_polish = 50;
    double eps_prim_inf = 1e-5;
    double eps_dual_inf = 1e-5;
    int check_interval = 5;
    int ipm_max_iter = 80;
    std::optional<WarmStart> warm_start;
};

struct QPSolution {
    Vec x;
    Vec y;
    QPStatus status = QPStatus::max_iterations;
    int iterations = 0;
    double primal_residual = kInf;
    double dual_residual = kInf;
    double objective = kInf;
    bool polished = false;
    /// Set when a warm start was supplied with the wrong dimensions and ignored.
    bool warm_start_ignored = false;

    bool optimal() const { return status == QPStatus::optimal; }
};

/// Operator-splitting (ADMM) solver with Ruiz equilibration, adaptive penalty
/// and an active-set polishing step. Deterministic for identical inputs.
QPSolution solve(const QuadraticProgram& qp, const QPSettings& settings = {});

/// Settings fragment that starts the next solve at `solution`.
WarmStart warm_start(const QPSolution& solution);

/// Dumps P, q, A, l, u as comma-separated text blocks for offline inspection.
void dump_qp(const QuadraticProgram& qp, const std::string& path);

}  // namespace sdpc
