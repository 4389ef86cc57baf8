#include "sdpc/predictor.hpp"

namespace sdpc {

Vec assemble_z(const Vec& u_past, const Vec& y_past, const Vec& u_future, bool affine)
{
    Vec z(u_past.size() + u_future.size() + y_past.size() + (affine ? 1 : 0));
    if (affine)
        z << u_past, u_future, y_past, 1.0;
    else
        z << u_past, u_future, y_past;
    return z;
}

Vec ls_predict(const PredictorContext& ctx, const Vec& u_past, const Vec& y_past, const Vec& u_future)
{
    const HankelBlocks& b = ctx.blocks;
    if (b.cols() == 0)
        throw DimensionError("ls_predict: empty blocks");
    require_dims(u_past.size() == b.u_past.rows() && y_past.size() == b.y_past.rows() &&
                     u_future.size() == b.u_future.rows(),
                 "ls_predict: query dimensions do not match blocks");

    const Mat hz = b.hz();
    const Vec z = assemble_z(u_past, y_past, u_future, b.affine);
    const Index rows = hz.rows(), cols = hz.cols();

    // Both forms give Y_f H_z^T (H_z H_z^T + eps I)^{-1} z; the smaller Gram
    // matrix is factorized.
    const bool wide = cols < rows;
    Mat gram = wide ? Mat(hz.transpose() * hz) : Mat(hz * hz.transpose());
    double eps = ctx.regularization_eps;
    if (eps < 0.0)
        eps = 1e-9 * gram.trace() / static_cast<double>(rows);
    gram.diagonal().array() += eps;

    if (eps == 0.0) {
        const Index rank = numeric_rank(hz);
        if (rank < rows)
            throw NumericalError("ls_predict: H_z is row-rank deficient (rank " + std::to_string(rank) +
                                 " of " + std::to_string(rows) + " rows); use a positive ridge");
    }
    Eigen::LLT<Mat> llt(gram);
    if (llt.info() != Eigen::Success)
        throw NumericalError("ls_predict: normal matrix is not positive definite");
    Vec g = wide ? Vec(llt.solve(hz.transpose() * z)) : Vec(hz.transpose() * llt.solve(z));
    return b.y_future * g;
}

double prediction_residual(const Vec& y_hat, const Vec& y)
{
    require_dims(y_hat.size() == y.size(), "prediction_residual: length mismatch");
    return (y_hat - y).norm();
}

}  // namespace sdpc
