#pragma once

#include "sdpc/trajectory_data.hpp"

namespace sdpc {

/// Explicit least-squares multi-step predictor over a fixed set of blocks.
struct PredictorContext {
    HankelBlocks blocks;
    /// Ridge added to H_z H_z^T. Negative selects the default
    /// 1e-9 * trace(H_z H_z^T) / rows.
    double regularization_eps = -1.0;
};

/// z = [u_p; u_f; y_p; (1)]
Vec assemble_z(const Vec& u_past, const Vec& y_past, const Vec& u_future, bool affine);

/// y_f = Y_f H_z^T (H_z H_z^T + eps I)^{-1} z.
///
/// With eps == 0 the normal matrix must be nonsingular; a rank-deficient H_z
/// raises NumericalError naming the rank.
Vec ls_predict(const PredictorContext& ctx, const Vec& u_past, const Vec& y_past, const Vec& u_future);

/// Euclidean norm of y_hat - y.
double prediction_residual(const Vec& y_hat, const Vec& y);

}  // namespace sdpc
