#include "sdpc/deepc_controller.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <cmath>
#include <sstream>

namespace sdpc {

namespace {

constexpr double kTieBreak = 1e-10;

bool has_bounds(const DPCConfig& cfg) { return cfg.u_low.size() > 0 || cfg.u_high.size() > 0; }

double bound_low(const DPCConfig& cfg, Index c) { return cfg.u_low.size() > 0 ? cfg.u_low[c] : -kInf; }
double bound_high(const DPCConfig& cfg, Index c) { return cfg.u_high.size() > 0 ? cfg.u_high[c] : kInf; }

/// blkdiag(W, ..., W) * X where X has `steps` blocks of W.rows() rows.
Mat block_weight(const Mat& W, const Mat& X, int steps)
{
    Mat out(X.rows(), X.cols());
    const Index d = W.rows();
    for (int i = 0; i < steps; ++i)
        out.middleRows(i * d, d).noalias() = W * X.middleRows(i * d, d);
    return out;
}

Vec block_weight(const Mat& W, const Vec& x, int steps)
{
    Vec out(x.size());
    const Index d = W.rows();
    for (int i = 0; i < steps; ++i)
        out.segment(i * d, d).noalias() = W * x.segment(i * d, d);
    return out;
}

Mat regularizer_gram(const HankelBlocks& blocks, double eps)
{
    const Mat pi = projection_matrix(blocks, eps);
    const Mat e = Mat::Identity(pi.rows(), pi.cols()) - pi;
    return e.transpose() * e;
}

/// Row-stacking helper for the constraint matrix.
class RowBuilder {
public:
    explicit RowBuilder(Index cols) : cols_(cols) {}

    void add(const Mat& block, Index col, const Vec& lo, const Vec& hi)
    {
        Mat rows = Mat::Zero(block.rows(), cols_);
        rows.middleCols(col, block.cols()) = block;
        pending_.push_back({std::move(rows), lo, hi});
    }

    /// Rows with two column blocks.
    void add2(const Mat& b1, Index c1, const Mat& b2, Index c2, const Vec& lo, const Vec& hi)
    {
        Mat rows = Mat::Zero(b1.rows(), cols_);
        rows.middleCols(c1, b1.cols()) = b1;
        rows.middleCols(c2, b2.cols()) += b2;
        pending_.push_back({std::move(rows), lo, hi});
    }

    void finish(Mat& A, Vec& l, Vec& u) const
    {
        Index total = 0;
        for (const auto& p : pending_)
            total += p.rows.rows();
        A.resize(total, cols_);
        l.resize(total);
        u.resize(total);
        Index r = 0;
        for (const auto& p : pending_) {
            const Index k = p.rows.rows();
            A.middleRows(r, k) = p.rows;
            l.segment(r, k) = p.lo;
            u.segment(r, k) = p.hi;
            r += k;
        }
    }

private:
    struct Pending {
        Mat rows;
        Vec lo, hi;
    };
    Index cols_;
    std::vector<Pending> pending_;
};

}  // namespace

double DPCConfig::effective_slack_weight() const
{
    if (slack_weight >= 0.0)
        return slack_weight;
    return 1e5 * std::max(Q.cwiseAbs().maxCoeff(), 1.0e-12);
}

void DPCConfig::validate() const
{
    if (t_past < 1 || t_future < 1)
        throw ConfigError("DPCConfig: horizons must be >= 1");
    const Index p = Q.rows(), m = R.rows();
    if (p < 1 || Q.cols() != p)
        throw ConfigError("DPCConfig: Q must be square and nonempty");
    if (m < 1 || R.cols() != m)
        throw ConfigError("DPCConfig: R must be square and nonempty");
    if (y_ref.size() != p)
        throw ConfigError("DPCConfig: y_ref length must match Q");
    if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + Q.cwiseAbs().maxCoeff()))
        throw ConfigError("DPCConfig: Q not symmetric");
    if (Eigen::SelfAdjointEigenSolver<Mat>(Q).eigenvalues().minCoeff() < -1e-10)
        throw ConfigError("DPCConfig: Q not positive semidefinite");
    if (Eigen::SelfAdjointEigenSolver<Mat>(0.5 * (R + R.transpose())).eigenvalues().minCoeff() <= 0.0)
        throw ConfigError("DPCConfig: R not positive definite");
    if (lambda_1 < 0.0 || lambda_pi < 0.0)
        throw ConfigError("DPCConfig: regularizer weights must be nonnegative");
    if ((u_low.size() != 0 && u_low.size() != m) || (u_high.size() != 0 && u_high.size() != m))
        throw ConfigError("DPCConfig: input bounds must have one entry per input channel");
    for (Index c = 0; c < m; ++c)
        if (bound_low(*this, c) > bound_high(*this, c)) {
            std::ostringstream os;
            os << "DPCConfig: input bound low > high on channel " << c;
            throw ConfigError(os.str());
        }
    for (const auto& yc : y_constraints)
        if (yc.a.size() != p)
            throw ConfigError("DPCConfig: output constraint normal must have length p");
}

double DPCConfig::stage_cost(const Vec& u, const Vec& y) const
{
    const Vec e = y - y_ref;
    return e.dot(Q * e) + u.dot(R * u);
}

Mat projection_matrix(const HankelBlocks& blocks, double eps)
{
    if (blocks.cols() == 0)
        throw DimensionError("projection_matrix: empty blocks");
    const Mat hz = blocks.hz();
    if (eps == 0.0) {
        Eigen::BDCSVD<Mat> svd(hz, Eigen::ComputeThinV);
        const Vec& s = svd.singularValues();
        const double tol = static_cast<double>(std::max(hz.rows(), hz.cols())) *
                           std::numeric_limits<double>::epsilon() * (s.size() ? s[0] : 0.0);
        Index r = 0;
        while (r < s.size() && s[r] > tol)
            ++r;
        const Mat v = svd.matrixV().leftCols(r);
        return v * v.transpose();
    }
    Mat gram = hz * hz.transpose();
    if (eps < 0.0)
        eps = 1e-9 * std::max(gram.trace(), 1e-300) / static_cast<double>(gram.rows());
    gram.diagonal().array() += eps;
    Eigen::LLT<Mat> llt(gram);
    if (llt.info() != Eigen::Success)
        throw NumericalError("projection_matrix: factorization failed");
    return hz.transpose() * llt.solve(hz);
}

BuiltQP build_qp(const DPCConfig& cfg, const HankelBlocks& blocks, const Vec& u_past, const Vec& y_past)
{
    cfg.validate();
    const int tp = cfg.t_past, tf = cfg.t_future;
    const Index m = cfg.input_dim(), p = cfg.output_dim(), N = blocks.cols();
    if (N == 0)
        throw DimensionError("build_qp: empty blocks");
    require_dims(blocks.u_past.rows() == tp * m && blocks.u_future.rows() == tf * m &&
                     blocks.y_past.rows() == tp * p && blocks.y_future.rows() == tf * p,
                 "build_qp: blocks do not match the configured horizons and dimensions");
    require_dims(u_past.size() == tp * m && y_past.size() == tp * p, "build_qp: past window length mismatch");
    if (cfg.affine && (!blocks.affine || blocks.ones.size() != N))
        throw DimensionError("build_qp: affine config requires affine blocks");

    const double sw = cfg.effective_slack_weight();
    const bool hard_past = sw == 0.0;
    const bool use_t = cfg.lambda_1 > 0.0;
    Vec r_bar(tf * p);
    for (int i = 0; i < tf; ++i)
        r_bar.segment(i * p, p) = cfg.y_ref;

    BuiltQP out;
    QPLayout& lay = out.layout;
    lay.condensed = cfg.condensed;
    lay.n_g = N;
    Index next = N;
    if (!cfg.condensed) {
        lay.u_f_offset = next;
        next += tf * m;
        lay.y_f_offset = next;
        next += tf * p;
    }
    if (!hard_past) {
        lay.sigma_offset = next;
        next += tp * p;
    }
    if (use_t) {
        lay.t_offset = next;
        next += N;
    }
    lay.num_vars = next;

    // Cost: 0.5 x'Px + q'x, so every quadratic weight enters P doubled.
    Mat P = Mat::Zero(next, next);
    Vec q = Vec::Zero(next);
    Mat Pgg = Mat::Zero(N, N);
    if (cfg.lambda_pi > 0.0)
        Pgg += cfg.lambda_pi * regularizer_gram(blocks, cfg.projection_eps);
    else
        Pgg.diagonal().array() += kTieBreak;
    out.constant = r_bar.dot(block_weight(cfg.Q, r_bar, tf));

    if (cfg.condensed) {
        const Mat qy = block_weight(cfg.Q, blocks.y_future, tf);
        const Mat ru = block_weight(cfg.R, blocks.u_future, tf);
        Pgg.noalias() += blocks.y_future.transpose() * qy;
        Pgg.noalias() += blocks.u_future.transpose() * ru;
        q.head(N) = -2.0 * (qy.transpose() * r_bar);
    } else {
        for (int i = 0; i < tf; ++i) {
            P.block(lay.u_f_offset + i * m, lay.u_f_offset + i * m, m, m) = 2.0 * cfg.R;
            P.block(lay.y_f_offset + i * p, lay.y_f_offset + i * p, p, p) = 2.0 * cfg.Q;
        }
        q.segment(lay.y_f_offset, tf * p) = -2.0 * block_weight(cfg.Q, r_bar, tf);
    }
    if (!hard_past)
        P.block(lay.sigma_offset, lay.sigma_offset, tp * p, tp * p).diagonal().setConstant(2.0 * sw);
    P.topLeftCorner(N, N) = 2.0 * Pgg;
    P.topLeftCorner(N, N) = 0.5 * (P.topLeftCorner(N, N) + P.topLeftCorner(N, N).transpose()).eval();
    if (use_t)
        q.segment(lay.t_offset, N).setConstant(cfg.lambda_1);

    RowBuilder rows(next);
    rows.add(blocks.u_past, 0, u_past, u_past);
    if (hard_past)
        rows.add(blocks.y_past, 0, y_past, y_past);
    else
        rows.add2(blocks.y_past, 0, -Mat::Identity(tp * p, tp * p), lay.sigma_offset, y_past, y_past);
    if (!cfg.condensed) {
        rows.add2(blocks.u_future, 0, -Mat::Identity(tf * m, tf * m), lay.u_f_offset, Vec::Zero(tf * m),
                  Vec::Zero(tf * m));
        rows.add2(blocks.y_future, 0, -Mat::Identity(tf * p, tf * p), lay.y_f_offset, Vec::Zero(tf * p),
                  Vec::Zero(tf * p));
    }
    if (cfg.affine)
        rows.add(Mat(blocks.ones), 0, Vec::Ones(1), Vec::Ones(1));
    if (use_t) {
        const Mat I = Mat::Identity(N, N);
        rows.add2(I, 0, -I, lay.t_offset, Vec::Constant(N, -kInf), Vec::Zero(N));
        rows.add2(I, 0, I, lay.t_offset, Vec::Zero(N), Vec::Constant(N, kInf));
    }
    if (has_bounds(cfg)) {
        Vec lo(tf * m), hi(tf * m);
        for (int i = 0; i < tf; ++i)
            for (Index c = 0; c < m; ++c) {
                lo[i * m + c] = bound_low(cfg, c);
                hi[i * m + c] = bound_high(cfg, c);
            }
        if (cfg.condensed)
            rows.add(blocks.u_future, 0, lo, hi);
        else
            rows.add(Mat::Identity(tf * m, tf * m), lay.u_f_offset, lo, hi);
    }
    if (!cfg.y_constraints.empty()) {
        const Index nc = static_cast<Index>(cfg.y_constraints.size());
        Mat S = Mat::Zero(tf * nc, tf * p);
        Vec hi(tf * nc);
        for (int i = 0; i < tf; ++i)
            for (Index j = 0; j < nc; ++j) {
                S.block(i * nc + j, i * p, 1, p) = cfg.y_constraints[static_cast<std::size_t>(j)].a.transpose();
                hi[i * nc + j] = cfg.y_constraints[static_cast<std::size_t>(j)].b;
            }
        const Vec lo = Vec::Constant(tf * nc, -kInf);
        if (cfg.condensed)
            rows.add(S * blocks.y_future, 0, lo, hi);
        else
            rows.add(S, lay.y_f_offset, lo, hi);
    }

    Mat A;
    Vec l, u;
    rows.finish(A, l, u);
    out.qp = QuadraticProgram(std::move(P), std::move(q), std::move(A), std::move(l), std::move(u));
    return out;
}

Trajectory prediction_of(const DPCSolution& sol, const Vec& u_past, const Vec& y_past, int t_past, int t_future)
{
    const Index m = u_past.size() / t_past, p = y_past.size() / t_past;
    Mat u(t_past + t_future, m), y(t_past + t_future, p);
    for (int i = 0; i < t_past; ++i) {
        u.row(i) = u_past.segment(i * m, m).transpose();
        y.row(i) = y_past.segment(i * p, p).transpose();
    }
    for (int i = 0; i < t_future; ++i) {
        u.row(t_past + i) = sol.u_f.segment(i * m, m).transpose();
        y.row(t_past + i) = sol.y_f.segment(i * p, p).transpose();
    }
    return Trajectory(std::move(u), std::move(y), t_past, t_future);
}

DeePCController::DeePCController(DPCConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

DPCSolution DeePCController::compute_action(const HankelBlocks& blocks, const Vec& u_past, const Vec& y_past)
{
    const BuiltQP built = build_qp(cfg_, blocks, u_past, y_past);
    const QPLayout& lay = built.layout;
    QPSettings st = cfg_.qp;
    if (warm_ && warm_->x.size() == built.qp.num_vars() && warm_->y.size() == built.qp.num_constraints())
        st.warm_start = warm_;
    const QPSolution qs = solve(built.qp, st);

    DPCSolution sol;
    sol.status = qs.status;
    sol.qp_iterations = qs.iterations;
    sol.primal_residual = qs.primal_residual;
    sol.dual_residual = qs.dual_residual;
    sol.objective = qs.objective + built.constant;
    sol.g = qs.x.head(lay.n_g);
    if (lay.condensed) {
        sol.u_f = blocks.u_future * sol.g;
        sol.y_f = blocks.y_future * sol.g;
    } else {
        sol.u_f = qs.x.segment(lay.u_f_offset, blocks.u_future.rows());
        sol.y_f = qs.x.segment(lay.y_f_offset, blocks.y_future.rows());
    }
    sol.sigma = blocks.y_past * sol.g - y_past;
    if (has_bounds(cfg_)) {
        const Index m = cfg_.input_dim();
        for (Index i = 0; i < sol.u_f.size(); ++i)
            sol.u_f[i] = std::clamp(sol.u_f[i], bound_low(cfg_, i % m), bound_high(cfg_, i % m));
    }

    if (sol.ok()) {
        warm_ = warm_start(qs);
        last_ = sol;
    }
    return sol;
}

std::optional<Trajectory> DeePCController::get_last_prediction(const Vec& u_past, const Vec& y_past) const
{
    if (!last_)
        return std::nullopt;
    return prediction_of(*last_, u_past, y_past, cfg_.t_past, cfg_.t_future);
}

void DeePCController::reset()
{
    last_.reset();
    warm_.reset();
}

}  // namespace sdpc
