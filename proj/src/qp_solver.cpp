#include "sdpc/qp_solver.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace sdpc {

namespace {

using SpMat = Eigen::SparseMatrix<double>;

constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kRhoEqScale = 1e3;
constexpr double kPolishDelta = 1e-6;
constexpr int kPolishRefine = 4;

bool is_equality(double lo, double hi) { return std::isfinite(lo) && std::isfinite(hi) && hi - lo <= 1e-12 * std::max(1.0, std::abs(lo)); }

double inf_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

int find_root(std::vector<int>& parent, int i)
{
    while (parent[static_cast<std::size_t>(i)] != i) {
        parent[static_cast<std::size_t>(i)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
        i = parent[static_cast<std::size_t>(i)];
    }
    return i;
}

// PSD test per connected block of the sparsity pattern; block-diagonal cost
// matrices (the common case here) avoid a dense factorization of all of P.
bool numerically_psd(const Mat& P)
{
    const int n = static_cast<int>(P.rows());
    std::vector<int> parent(static_cast<std::size_t>(n));
    std::iota(parent.begin(), parent.end(), 0);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < j; ++i)
            if (P(i, j) != 0.0) {
                const int a = find_root(parent, i), b = find_root(parent, j);
                if (a != b)
                    parent[static_cast<std::size_t>(a)] = b;
            }
    std::vector<std::vector<int>> groups(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        groups[static_cast<std::size_t>(find_root(parent, i))].push_back(i);

    const double pmax = P.size() ? P.cwiseAbs().maxCoeff() : 0.0;
    for (const auto& g : groups) {
        if (g.empty())
            continue;
        const double shift = std::max(1e-8, 1e-13 * static_cast<double>(g.size()) * pmax);
        if (g.size() == 1) {
            if (P(g[0], g[0]) < -shift)
                return false;
            continue;
        }
        const Index s = static_cast<Index>(g.size());
        Mat sub(s, s);
        for (Index a = 0; a < s; ++a)
            for (Index b = 0; b < s; ++b)
                sub(a, b) = P(g[static_cast<std::size_t>(a)], g[static_cast<std::size_t>(b)]);
        sub.diagonal().array() += shift;
        Eigen::LLT<Mat> llt(sub);
        if (llt.info() != Eigen::Success)
            return false;
    }
    return true;
}

Vec clamp(const Vec& v, const Vec& lo, const Vec& hi) { return v.cwiseMax(lo).cwiseMin(hi); }

// Scaled problem state. Unscaled quantities: x = D xs, y = E ys / c, z = zs / E.
class AdmmSolver {
public:
    AdmmSolver(const QuadraticProgram& qp, const QPSettings& st) : qp_(qp), st_(st)
    {
        n_ = qp.num_vars();
        k_ = qp.num_constraints();
        scale();
    }

    QPSolution run();

private:
    void scale();
    void set_rho(double rho);
    void factor();
    void residuals(const Vec& x, const Vec& z, const Vec& y, double& prim, double& dual, double& eps_prim,
                   double& eps_dual) const;
    bool primal_infeasible(const Vec& dy) const;
    bool dual_infeasible(const Vec& dx) const;
    bool polish(QPSolution& sol) const;
    void unscale_into(QPSolution& sol, const Vec& x, const Vec& y) const;

    const QuadraticProgram& qp_;
    const QPSettings& st_;
    Index n_ = 0, k_ = 0;

    Mat Ps_;
    SpMat As_;
    Mat As_dense_;
    Vec qs_, ls_, us_;
    Vec D_, E_;
    double c_ = 1.0;

    double rho_ = 0.1;
    Vec rho_vec_;
    Eigen::LLT<Mat> llt_;
};

void AdmmSolver::scale()
{
    Ps_ = qp_.P();
    As_dense_ = qp_.A();
    qs_ = qp_.q();
    D_ = Vec::Ones(n_);
    E_ = Vec::Ones(k_);
    c_ = 1.0;

    auto limit = [](double v) {
        if (v < 1e-4)
            return 1.0;
        return std::min(v, 1e4);
    };

    for (int it = 0; it < st_.scaling_iters; ++it) {
        Vec d(n_), e(k_);
        for (Index j = 0; j < n_; ++j) {
            double v = Ps_.col(j).cwiseAbs().maxCoeff();
            if (k_ > 0)
                v = std::max(v, As_dense_.col(j).cwiseAbs().maxCoeff());
            d[j] = 1.0 / std::sqrt(limit(v));
        }
        for (Index i = 0; i < k_; ++i)
            e[i] = 1.0 / std::sqrt(limit(As_dense_.row(i).cwiseAbs().maxCoeff()));
        Ps_ = d.asDiagonal() * Ps_ * d.asDiagonal();
        if (k_ > 0)
            As_dense_ = e.asDiagonal() * As_dense_ * d.asDiagonal();
        qs_ = qs_.cwiseProduct(d);
        D_ = D_.cwiseProduct(d);
        E_ = E_.cwiseProduct(e);

        double mean_col = 0.0;
        for (Index j = 0; j < n_; ++j)
            mean_col += Ps_.col(j).cwiseAbs().maxCoeff();
        mean_col /= static_cast<double>(std::max<Index>(n_, 1));
        const double gamma = 1.0 / limit(std::max(mean_col, inf_norm(qs_)));
        Ps_ *= gamma;
        qs_ *= gamma;
        c_ *= gamma;
    }
    As_ = As_dense_.sparseView();
    ls_ = qp_.l().cwiseProduct(E_);
    us_ = qp_.u().cwiseProduct(E_);
}

void AdmmSolver::set_rho(double rho)
{
    rho_ = std::clamp(rho, kRhoMin, kRhoMax);
    rho_vec_.resize(k_);
    for (Index i = 0; i < k_; ++i) {
        const double lo = qp_.l()[i], hi = qp_.u()[i];
        if (!std::isfinite(lo) && !std::isfinite(hi))
            rho_vec_[i] = kRhoMin;
        else if (is_equality(lo, hi))
            rho_vec_[i] = kRhoEqScale * rho_;
        else
            rho_vec_[i] = rho_;
    }
}

void AdmmSolver::factor()
{
    Mat K = Ps_;
    K.diagonal().array() += st_.sigma;
    if (k_ > 0) {
        SpMat weighted = rho_vec_.asDiagonal() * As_;
        K += Mat(SpMat(As_.transpose() * weighted));
    }
    llt_.compute(K);
    if (llt_.info() != Eigen::Success)
        throw NumericalError("qp solve: ADMM linear system is not positive definite");
}

void AdmmSolver::residuals(const Vec& x, const Vec& z, const Vec& y, double& prim, double& dual,
                           double& eps_prim, double& eps_dual) const
{
    const Vec ax = As_ * x;
    const Vec px = Ps_ * x;
    const Vec aty = As_.transpose() * y;
    const Vec Einv = E_.cwiseInverse();
    const Vec Dinv = D_.cwiseInverse();
    prim = k_ > 0 ? inf_norm((ax - z).cwiseProduct(Einv)) : 0.0;
    dual = inf_norm((px + qs_ + aty).cwiseProduct(Dinv)) / c_;
    eps_prim = st_.eps_abs + st_.eps_rel * std::max(inf_norm(ax.cwiseProduct(Einv)), inf_norm(z.cwiseProduct(Einv)));
    eps_dual = st_.eps_abs + st_.eps_rel / c_ *
                                 std::max({inf_norm(px.cwiseProduct(Dinv)), inf_norm(aty.cwiseProduct(Dinv)),
                                           inf_norm(qs_.cwiseProduct(Dinv))});
}

bool AdmmSolver::primal_infeasible(const Vec& dy_in) const
{
    if (k_ == 0)
        return false;
    Vec dy = dy_in;
    for (Index i = 0; i < k_; ++i) {
        if (dy[i] > 0.0 && !std::isfinite(us_[i]))
            dy[i] = 0.0;
        if (dy[i] < 0.0 && !std::isfinite(ls_[i]))
            dy[i] = 0.0;
    }
    const double norm = inf_norm(dy.cwiseProduct(E_));
    if (norm < 1e-30)
        return false;
    const Vec aty = (As_.transpose() * dy).cwiseProduct(D_.cwiseInverse());
    if (inf_norm(aty) > st_.eps_prim_inf * norm)
        return false;
    double support = 0.0;
    for (Index i = 0; i < k_; ++i) {
        if (dy[i] > 0.0)
            support += us_[i] * dy[i];
        else if (dy[i] < 0.0)
            support += ls_[i] * dy[i];
    }
    return support < -st_.eps_prim_inf * norm;
}

bool AdmmSolver::dual_infeasible(const Vec& dx) const
{
    const double norm = inf_norm(dx.cwiseProduct(D_));
    if (norm < 1e-30)
        return false;
    const double tol = st_.eps_dual_inf * norm;
    if (inf_norm((Ps_ * dx).cwiseProduct(D_.cwiseInverse())) / c_ > tol)
        return false;
    if (qs_.dot(dx) / c_ > -tol)
        return false;
    const Vec adx = (As_ * dx).cwiseProduct(E_.cwiseInverse());
    for (Index i = 0; i < k_; ++i) {
        if (std::isfinite(us_[i]) && adx[i] > tol)
            return false;
        if (std::isfinite(ls_[i]) && adx[i] < -tol)
            return false;
    }
    return true;
}

void AdmmSolver::unscale_into(QPSolution& sol, const Vec& x, const Vec& y) const
{
    sol.x = x.cwiseProduct(D_);
    sol.y = y.cwiseProduct(E_) / c_;
}

bool AdmmSolver::polish(QPSolution& sol) const
{
    // Work in scaled coordinates.
    const Vec xs = sol.x.cwiseQuotient(D_);
    const Vec ys = sol.y.cwiseQuotient(E_) * c_;
    const Vec zs = As_ * xs;

    std::vector<Index> rows;
    std::vector<int> side;  // -1 lower, +1 upper, 0 equality
    for (Index i = 0; i < k_; ++i) {
        if (is_equality(qp_.l()[i], qp_.u()[i])) {
            rows.push_back(i);
            side.push_back(0);
        } else if (std::isfinite(ls_[i]) && zs[i] - ls_[i] < -ys[i]) {
            rows.push_back(i);
            side.push_back(-1);
        } else if (std::isfinite(us_[i]) && us_[i] - zs[i] < ys[i]) {
            rows.push_back(i);
            side.push_back(1);
        }
    }
    const Index r = static_cast<Index>(rows.size());
    Mat Ared(r, n_);
    Vec bred(r);
    for (Index a = 0; a < r; ++a) {
        const Index i = rows[static_cast<std::size_t>(a)];
        Ared.row(a) = As_dense_.row(i);
        bred[a] = side[static_cast<std::size_t>(a)] > 0 ? us_[i] : ls_[i];
    }

    // Regularized KKT [P + dI, A'; A, -dI] solved via its Schur complement,
    // then refined against the exact KKT system.
    Mat M = Ps_;
    M.diagonal().array() += kPolishDelta;
    M += Ared.transpose() * Ared / kPolishDelta;
    Eigen::LLT<Mat> llt(M);
    if (llt.info() != Eigen::Success)
        return false;
    auto reg_solve = [&](const Vec& r1, const Vec& r2, Vec& dx, Vec& dy) {
        dx = llt.solve(r1 + Ared.transpose() * r2 / kPolishDelta);
        dy = (Ared * dx - r2) / kPolishDelta;
    };
    Vec x, yr;
    reg_solve(-qs_, bred, x, yr);
    for (int it = 0; it < kPolishRefine; ++it) {
        const Vec r1 = -qs_ - Ps_ * x - Ared.transpose() * yr;
        const Vec r2 = bred - Ared * x;
        Vec dx, dy;
        reg_solve(r1, r2, dx, dy);
        x += dx;
        yr += dy;
    }

    Vec y = Vec::Zero(k_);
    for (Index a = 0; a < r; ++a) {
        const Index i = rows[static_cast<std::size_t>(a)];
        y[i] = yr[a];
    }
    // Dual signs must agree with the guessed active sides.
    const double ytol = 1e-7 * std::max(1.0, inf_norm(y));
    for (Index a = 0; a < r; ++a) {
        const int s = side[static_cast<std::size_t>(a)];
        if ((s < 0 && yr[a] > ytol) || (s > 0 && yr[a] < -ytol))
            return false;
    }
    const Vec ax = As_ * x;
    const Vec z = clamp(ax, ls_, us_);
    double prim, dual, eps_prim, eps_dual;
    residuals(x, z, y, prim, dual, eps_prim, eps_dual);
    if (!(prim <= eps_prim && dual <= eps_dual))
        return false;

    unscale_into(sol, x, y);
    sol.primal_residual = prim;
    sol.dual_residual = dual;
    sol.polished = true;
    sol.status = QPStatus::optimal;
    return true;
}

QPSolution AdmmSolver::run()
{
    QPSolution sol;
    Vec x = Vec::Zero(n_), z = Vec::Zero(k_), y = Vec::Zero(k_);
    if (st_.warm_start) {
        const auto& ws = *st_.warm_start;
        if (ws.x.size() == n_ && ws.y.size() == k_) {
            x = ws.x.cwiseQuotient(D_);
            y = ws.y.cwiseQuotient(E_) * c_;
        } else {
            sol.warm_start_ignored = true;
        }
    }
    z = clamp(As_ * x, ls_, us_);

    set_rho(st_.rho);
    factor();

    Vec x_prev, z_prev, y_prev, rhs, xt, zt, zh;
    double prim = kInf, dual = kInf, eps_prim = 0.0, eps_dual = 0.0;
    int iter = 0;
    int next_polish = st_.polish && st_.early_polish > 0 ? st_.early_polish : st_.max_iter + 1;
    bool early = false;
    sol.status = QPStatus::max_iterations;
    for (iter = 1; iter <= st_.max_iter; ++iter) {
        x_prev = x;
        z_prev = z;
        y_prev = y;

        rhs = st_.sigma * x - qs_;
        if (k_ > 0)
            rhs += As_.transpose() * (rho_vec_.cwiseProduct(z) - y);
        xt = llt_.solve(rhs);
        zt = As_ * xt;

        x = st_.alpha * xt + (1.0 - st_.alpha) * x_prev;
        zh = st_.alpha * zt + (1.0 - st_.alpha) * z_prev;
        z = clamp(zh + y.cwiseQuotient(rho_vec_), ls_, us_);
        y = y + rho_vec_.cwiseProduct(zh - z);

        const bool check = iter % st_.check_interval == 0 || iter == st_.max_iter;
        if (!check)
            continue;

        residuals(x, z, y, prim, dual, eps_prim, eps_dual);
        if (prim <= eps_prim && dual <= eps_dual) {
            sol.status = QPStatus::optimal;
            break;
        }
        if (primal_infeasible(y - y_prev)) {
            sol.status = QPStatus::primal_infeasible;
            break;
        }
        if (dual_infeasible(x - x_prev)) {
            sol.status = QPStatus::dual_infeasible;
            break;
        }
        if (iter >= next_polish || (st_.polish && iter == st_.max_iter)) {
            // The active set often settles long before the residuals do.
            next_polish *= 2;
            QPSolution trial;
            unscale_into(trial, x, y);
            if (polish(trial)) {
                trial.warm_start_ignored = sol.warm_start_ignored;
                sol = std::move(trial);
                sol.status = QPStatus::optimal;
                early = true;
                break;
            }
        }

        if (st_.adaptive_rho && iter % st_.adaptive_rho_interval == 0 && k_ > 0) {
            const Vec ax = As_ * x, px = Ps_ * x, aty = As_.transpose() * y;
            const double pn = prim / std::max({inf_norm(ax.cwiseQuotient(E_)), inf_norm(z.cwiseQuotient(E_)), 1e-30});
            const double dn = dual / std::max({inf_norm(px.cwiseQuotient(D_)) / c_, inf_norm(aty.cwiseQuotient(D_)) / c_,
                                               inf_norm(qs_.cwiseQuotient(D_)) / c_, 1e-30});
            const double rho_new = std::clamp(rho_ * std::sqrt(pn / std::max(dn, 1e-30)), kRhoMin, kRhoMax);
            if (rho_new > 5.0 * rho_ || rho_new < 0.2 * rho_) {
                set_rho(rho_new);
                factor();
            }
        }
    }
    sol.iterations = std::min(iter, st_.max_iter);
    if (early) {
        sol.objective = qp_.objective(sol.x);
        return sol;
    }
    unscale_into(sol, x, y);
    sol.primal_residual = prim;
    sol.dual_residual = dual;

    if (sol.status == QPStatus::primal_infeasible || sol.status == QPStatus::dual_infeasible) {
        sol.objective = sol.status == QPStatus::primal_infeasible ? kInf : -kInf;
        return sol;
    }
    if (st_.polish)
        polish(sol);
    sol.objective = qp_.objective(sol.x);
    return sol;
}

// Unscaled KKT residuals with the same tolerance rule the ADMM loop uses.
void kkt_residuals(const QuadraticProgram& qp, const QPSettings& st, const Vec& x, const Vec& y, double& prim,
                   double& dual, double& eps_prim, double& eps_dual)
{
    const Vec ax = qp.A() * x;
    const Vec z = clamp(ax, qp.l(), qp.u());
    const Vec px = qp.P() * x;
    const Vec aty = qp.A().transpose() * y;
    prim = inf_norm(ax - z);
    dual = inf_norm(px + qp.q() + aty);
    eps_prim = st.eps_abs + st.eps_rel * std::max(inf_norm(ax), inf_norm(z));
    eps_dual = st.eps_abs + st.eps_rel * std::max({inf_norm(px), inf_norm(aty), inf_norm(qp.q())});
}

double max_step(const Vec& v, const Vec& dv)
{
    double a = 1.0;
    for (Index i = 0; i < v.size(); ++i)
        if (dv[i] < 0.0)
            a = std::min(a, -v[i] / dv[i]);
    return a;
}

// Newton matrix H = P + sum_r c_r a_r a_r' + reg I for the interior point
// method. Variables that enter P only through the diagonal, take no part in
// equalities and share no inequality row with each other (the |g| bounds t)
// are eliminated through their diagonal block, so only the core block is
// factored densely.
class NewtonMatrix {
public:
    NewtonMatrix(const Mat& P, const Mat& E, const Mat& AI)
    {
        const Index n = P.rows();
        std::vector<char> diag(static_cast<std::size_t>(n), 1);
        for (Index j = 0; j < n; ++j) {
            bool ok = E.rows() == 0 || E.col(j).cwiseAbs().maxCoeff() == 0.0;
            for (Index i = 0; ok && i < n; ++i)
                ok = i == j || P(i, j) == 0.0;
            diag[static_cast<std::size_t>(j)] = ok ? 1 : 0;
        }
        for (Index r = 0; r < AI.rows(); ++r) {
            bool seen = false;
            for (Index j = 0; j < n; ++j)
                if (AI(r, j) != 0.0 && diag[static_cast<std::size_t>(j)]) {
                    if (seen)
                        diag[static_cast<std::size_t>(j)] = 0;
                    seen = true;
                }
        }
        pos_.assign(static_cast<std::size_t>(n), 0);
        for (Index j = 0; j < n; ++j) {
            auto& list = diag[static_cast<std::size_t>(j)] ? d_ : c_;
            pos_[static_cast<std::size_t>(j)] = static_cast<Index>(list.size());
            list.push_back(j);
        }
        const Index nc = static_cast<Index>(c_.size());
        Pcc_.resize(nc, nc);
        for (Index a = 0; a < nc; ++a)
            for (Index b = 0; b < nc; ++b)
                Pcc_(a, b) = P(c_[static_cast<std::size_t>(a)], c_[static_cast<std::size_t>(b)]);
        pdd_.resize(static_cast<Index>(d_.size()));
        for (std::size_t j = 0; j < d_.size(); ++j)
            pdd_[static_cast<Index>(j)] = P(d_[j], d_[j]);

        rows_.resize(static_cast<std::size_t>(AI.rows()));
        std::vector<Index> dense;
        for (Index r = 0; r < AI.rows(); ++r) {
            Row& row = rows_[static_cast<std::size_t>(r)];
            for (Index j = 0; j < n; ++j) {
                const double v = AI(r, j);
                if (v == 0.0)
                    continue;
                if (diag[static_cast<std::size_t>(j)]) {
                    row.d = pos_[static_cast<std::size_t>(j)];
                    row.dv = v;
                } else {
                    row.core.emplace_back(pos_[static_cast<std::size_t>(j)], v);
                }
            }
            row.dense = row.core.size() > 8;
            if (row.dense)
                dense.push_back(r);
        }
        dense_rows_ = dense;
        Ad_ = Mat::Zero(static_cast<Index>(dense.size()), nc);
        for (std::size_t i = 0; i < dense.size(); ++i)
            for (const auto& [a, v] : rows_[static_cast<std::size_t>(dense[i])].core)
                Ad_(static_cast<Index>(i), a) = v;
    }

    bool factor(const Vec& c, double reg)
    {
        Mat H = Pcc_;
        if (!dense_rows_.empty()) {
            Vec sc(static_cast<Index>(dense_rows_.size()));
            for (std::size_t i = 0; i < dense_rows_.size(); ++i)
                sc[static_cast<Index>(i)] = std::sqrt(c[dense_rows_[i]]);
            const Mat Aw = sc.asDiagonal() * Ad_;
            H.selfadjointView<Eigen::Lower>().rankUpdate(Aw.transpose());
        }
        hdd_ = pdd_.array() + reg;
        coupling_.assign(d_.size(), {});
        for (std::size_t r = 0; r < rows_.size(); ++r) {
            const Row& row = rows_[r];
            const double cr = c[static_cast<Index>(r)];
            if (!row.dense)
                for (const auto& [a, va] : row.core)
                    for (const auto& [b, vb] : row.core)
                        if (a >= b)
                            H(a, b) += cr * va * vb;
            if (row.d < 0)
                continue;
            hdd_[row.d] += cr * row.dv * row.dv;
            auto& cp = coupling_[static_cast<std::size_t>(row.d)];
            for (const auto& [a, va] : row.core) {
                auto it = std::find_if(cp.begin(), cp.end(), [a = a](const auto& e) { return e.first == a; });
                if (it == cp.end())
                    cp.emplace_back(a, cr * row.dv * va);
                else
                    it->second += cr * row.dv * va;
            }
        }
        H.diagonal().array() += reg;
        for (std::size_t j = 0; j < d_.size(); ++j)
            for (const auto& [a, va] : coupling_[j])
                for (const auto& [b, vb] : coupling_[j])
                    if (a >= b)
                        H(a, b) -= va * vb / hdd_[static_cast<Index>(j)];
        llt_.compute(H);
        return llt_.info() == Eigen::Success;
    }

    Mat solve(const Mat& rhs) const
    {
        Mat rc(static_cast<Index>(c_.size()), rhs.cols());
        for (std::size_t a = 0; a < c_.size(); ++a)
            rc.row(static_cast<Index>(a)) = rhs.row(c_[a]);
        for (std::size_t j = 0; j < d_.size(); ++j) {
            const Eigen::RowVectorXd f = rhs.row(d_[j]) / hdd_[static_cast<Index>(j)];
            for (const auto& [a, va] : coupling_[j])
                rc.row(a) -= va * f;
        }
        const Mat xc = llt_.solve(rc);
        Mat x(rhs.rows(), rhs.cols());
        for (std::size_t a = 0; a < c_.size(); ++a)
            x.row(c_[a]) = xc.row(static_cast<Index>(a));
        for (std::size_t j = 0; j < d_.size(); ++j) {
            Eigen::RowVectorXd v = rhs.row(d_[j]);
            for (const auto& [a, va] : coupling_[j])
                v -= va * xc.row(a);
            x.row(d_[j]) = v / hdd_[static_cast<Index>(j)];
        }
        return x;
    }

    Vec solve(const Vec& rhs) const
    {
        Vec rc(static_cast<Index>(c_.size()));
        for (std::size_t a = 0; a < c_.size(); ++a)
            rc[static_cast<Index>(a)] = rhs[c_[a]];
        for (std::size_t j = 0; j < d_.size(); ++j) {
            const double f = rhs[d_[j]] / hdd_[static_cast<Index>(j)];
            for (const auto& [a, va] : coupling_[j])
                rc[a] -= va * f;
        }
        const Vec xc = llt_.solve(rc);
        Vec x(rhs.size());
        for (std::size_t a = 0; a < c_.size(); ++a)
            x[c_[a]] = xc[static_cast<Index>(a)];
        for (std::size_t j = 0; j < d_.size(); ++j) {
            double v = rhs[d_[j]];
            for (const auto& [a, va] : coupling_[j])
                v -= va * xc[a];
            x[d_[j]] = v / hdd_[static_cast<Index>(j)];
        }
        return x;
    }

private:
    struct Row {
        std::vector<std::pair<Index, double>> core;
        Index d = -1;
        double dv = 0.0;
        bool dense = false;
    };
    std::vector<Index> c_, d_, pos_, dense_rows_;
    std::vector<Row> rows_;
    Mat Pcc_, Ad_;
    Vec pdd_, hdd_;
    std::vector<std::vector<std::pair<Index, double>>> coupling_;
    Eigen::LLT<Mat> llt_;
};

// Mehrotra predictor-corrector on
//   min 0.5 x'Px + q'x  s.t.  E x = b,  G x + s = h,  s >= 0,
// where G stacks +a_i for finite upper bounds and -a_i for finite lower ones.
// The Newton system is reduced to (P + G'WG) dx + E' dnu = r and solved
// through NewtonMatrix and a Cholesky factorization of its Schur complement.
QPSolution interior_point(const QuadraticProgram& qp, const QPSettings& st)
{
    const Index n = qp.num_vars(), k = qp.num_constraints();
    const Mat& A = qp.A();
    std::vector<Index> eq_rows, ineq_rows, g_src, g_slot;
    std::vector<double> g_sign;
    Vec h_list(2 * k);
    Index mi = 0;
    for (Index i = 0; i < k; ++i) {
        const double lo = qp.l()[i], hi = qp.u()[i];
        if (is_equality(lo, hi)) {
            eq_rows.push_back(i);
            continue;
        }
        if (!std::isfinite(hi) && !std::isfinite(lo))
            continue;
        ineq_rows.push_back(i);
        const Index slot = static_cast<Index>(ineq_rows.size()) - 1;
        if (std::isfinite(hi)) {
            g_src.push_back(i);
            g_slot.push_back(slot);
            g_sign.push_back(1.0);
            h_list[mi++] = hi;
        }
        if (std::isfinite(lo)) {
            g_src.push_back(i);
            g_slot.push_back(slot);
            g_sign.push_back(-1.0);
            h_list[mi++] = -lo;
        }
    }
    const Index me = static_cast<Index>(eq_rows.size());
    Mat E(me, n);
    Vec b(me);
    for (Index r = 0; r < me; ++r) {
        E.row(r) = A.row(eq_rows[static_cast<std::size_t>(r)]);
        b[r] = qp.l()[eq_rows[static_cast<std::size_t>(r)]];
    }
    Mat AI(static_cast<Index>(ineq_rows.size()), n);
    for (Index r = 0; r < AI.rows(); ++r)
        AI.row(r) = A.row(ineq_rows[static_cast<std::size_t>(r)]);
    const Vec h = h_list.head(mi);
    std::vector<Eigen::Triplet<double>> trip;
    for (Index r = 0; r < mi; ++r) {
        const Index src = g_src[static_cast<std::size_t>(r)];
        for (Index j = 0; j < n; ++j)
            if (A(src, j) != 0.0)
                trip.emplace_back(r, j, g_sign[static_cast<std::size_t>(r)] * A(src, j));
    }
    SpMat G(mi, n);
    G.setFromTriplets(trip.begin(), trip.end());
    const SpMat Gt = G.transpose();

    const double pscale = std::max(1.0, qp.P().cwiseAbs().maxCoeff());
    const double reg = 1e-12 * pscale;
    NewtonMatrix hmat(qp.P(), E, AI);

    Eigen::LLT<Mat> sfac;
    Mat HinvEt;
    // Factors the Newton matrix for inequality weights c and the equality
    // Schur complement, raising the regularization if either is not
    // numerically positive definite.
    auto factor = [&](const Vec& c) {
        for (double r = reg; r <= 1e-6 * pscale; r *= 1e3) {
            if (!hmat.factor(c, r))
                continue;
            if (me == 0)
                return true;
            HinvEt = hmat.solve(Mat(E.transpose()));
            Mat S = E * HinvEt;
            S.diagonal().array() += 1e-12 * std::max(1.0, S.diagonal().cwiseAbs().maxCoeff());
            sfac.compute(S);
            if (sfac.info() == Eigen::Success)
                return true;
        }
        return false;
    };

    Vec x = Vec::Zero(n), nu = Vec::Zero(me), s = Vec::Ones(mi), z = Vec::Ones(mi);
    if (mi > 0) {
        // Start from min 1/2 x'Px + q'x + 1/2 |Gx - h|^2 s.t. Ex = b, with
        // s = h - Gx and z = -s shifted into the positive orthant.
        Vec c0 = Vec::Zero(AI.rows());
        for (Index r = 0; r < mi; ++r)
            c0[g_slot[static_cast<std::size_t>(r)]] += 1.0;
        if (factor(c0)) {
            x = hmat.solve(Vec(Gt * h - qp.q()));
            if (me > 0) {
                nu = sfac.solve(E * x - b);
                x -= HinvEt * nu;
            }
            s = h - G * x;
            z = -s;
            const double ap = -s.minCoeff(), ad = -z.minCoeff();
            if (ap >= 0.0)
                s.array() += 1.0 + ap;
            if (ad >= 0.0)
                z.array() += 1.0 + ad;
        } else {
            x.setZero();
            nu.setZero();
            s = h.cwiseMax(1.0);
        }
    }

    QPSolution sol;
    sol.status = QPStatus::max_iterations;
    int it = 0;
    int refinements = 0;
    for (it = 0; it < st.ipm_max_iter; ++it) {
        const Vec rd = qp.P() * x + qp.q() + E.transpose() * nu + Gt * z;
        const Vec re = E * x - b;
        const Vec ri = G * x + s - h;
        const double mu = mi > 0 ? s.dot(z) / static_cast<double>(mi) : 0.0;

        Vec y = Vec::Zero(k);
        for (Index r = 0; r < me; ++r)
            y[eq_rows[static_cast<std::size_t>(r)]] = nu[r];
        for (Index r = 0; r < mi; ++r)
            y[g_src[static_cast<std::size_t>(r)]] += g_sign[static_cast<std::size_t>(r)] * z[r];
        double prim, dual, eps_prim, eps_dual;
        kkt_residuals(qp, st, x, y, prim, dual, eps_prim, eps_dual);
        const double fx = std::abs(qp.objective(x));
        const double gap = mu * static_cast<double>(mi), eps_gap = st.eps_abs + st.eps_rel * std::max(1.0, fx);
        // Converged iterates are accepted at the nominal tolerance, but the
        // loop keeps going for a few more cheap Newton steps: near-degenerate
        // active sets amplify the remaining gap into the solution.
        if (prim <= eps_prim && dual <= eps_dual && inf_norm(ri) <= eps_prim && gap <= eps_gap) {
            sol.status = QPStatus::optimal;
            sol.x = x;
            sol.y = y;
            sol.primal_residual = prim;
            sol.dual_residual = dual;
            constexpr double tight = 1e-4;
            if (++refinements > 4 || (prim <= tight * eps_prim && dual <= tight * eps_dual && gap <= tight * eps_gap))
                break;
        }

        const Vec w = mi > 0 ? Vec(z.cwiseQuotient(s)) : Vec();
        Vec c = Vec::Zero(AI.rows());
        for (Index r = 0; r < mi; ++r)
            c[g_slot[static_cast<std::size_t>(r)]] += w[r];
        if (!factor(c))
            break;

        Vec dx, dnu, dz, ds;
        auto newton = [&](const Vec& rc) {
            Vec rhs1 = -rd;
            if (mi > 0)
                rhs1 -= Gt * (w.cwiseProduct(ri) - rc.cwiseQuotient(s));
            const Vec hr = hmat.solve(rhs1);
            if (me > 0) {
                dnu = sfac.solve(E * hr + re);
                dx = hr - HinvEt * dnu;
            } else {
                dnu = Vec();
                dx = hr;
            }
            if (mi > 0) {
                dz = w.cwiseProduct(G * dx + ri) - rc.cwiseQuotient(s);
                ds = -(rc + s.cwiseProduct(dz)).cwiseQuotient(z);
            } else {
                dz = Vec();
                ds = Vec();
            }
        };

        double alpha = 1.0;
        if (mi > 0) {
            const Vec sz = s.cwiseProduct(z);
            newton(sz);
            const double a_aff = std::min(max_step(s, ds), max_step(z, dz));
            const double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / static_cast<double>(mi);
            const double sigma = std::pow(mu_aff / mu, 3);
            const Vec rc = sz + ds.cwiseProduct(dz) - Vec::Constant(mi, sigma * mu);
            newton(rc);
            alpha = std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(z, dz)));
        } else {
            newton(Vec());
        }
        x += alpha * dx;
        if (me > 0)
            nu += alpha * dnu;
        if (mi > 0) {
            s += alpha * ds;
            z += alpha * dz;
        }
    }
    sol.iterations = it;
    if (sol.status != QPStatus::optimal) {
        sol.x = x;
        sol.y = Vec::Zero(k);
        sol.objective = qp.objective(x);
        return sol;
    }
    sol.objective = qp.objective(sol.x);
    return sol;
}

}  // namespace

QuadraticProgram::QuadraticProgram(Mat P, Vec q, Mat A, Vec l, Vec u)
    : P_(std::move(P)), q_(std::move(q)), A_(std::move(A)), l_(std::move(l)), u_(std::move(u))
{
    const Index n = q_.size();
    if (P_.rows() != n || P_.cols() != n)
        throw ConfigError("QuadraticProgram: P must be n x n with n = len(q)");
    if (A_.cols() != n && !(A_.rows() == 0))
        throw ConfigError("QuadraticProgram: A must have n columns");
    if (A_.rows() == 0)
        A_.resize(0, n);
    if (l_.size() != A_.rows() || u_.size() != A_.rows())
        throw ConfigError("QuadraticProgram: bounds must have one entry per constraint row");
    for (Index i = 0; i < l_.size(); ++i)
        if (!(l_[i] <= u_[i]))
            throw ConfigError("QuadraticProgram: lower bound exceeds upper bound in row " + std::to_string(i));
    const double pmax = P_.size() ? P_.cwiseAbs().maxCoeff() : 0.0;
    if (n > 0 && (P_ - P_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, pmax))
        throw ConfigError("QuadraticProgram: P is not symmetric");
    if (!numerically_psd(P_))
        throw ConfigError("QuadraticProgram: P is not positive semidefinite");
}

QuadraticProgram QuadraticProgram::with_constraint(const Eigen::RowVectorXd& row, double lo, double hi) const
{
    Mat A(A_.rows() + 1, A_.cols());
    A << A_, row;
    Vec l(l_.size() + 1), u(u_.size() + 1);
    l << l_, lo;
    u << u_, hi;
    return QuadraticProgram(P_, q_, std::move(A), std::move(l), std::move(u));
}

const char* to_string(QPMethod method)
{
    switch (method) {
    case QPMethod::admm:
        return "admm";
    case QPMethod::interior_point:
        return "interior_point";
    case QPMethod::automatic:
        return "automatic";
    }
    return "unknown";
}

QPMethod qp_method_from_string(const std::string& name)
{
    for (auto m : {QPMethod::admm, QPMethod::interior_point, QPMethod::automatic})
        if (name == to_string(m))
            return m;
    throw ConfigError("unknown QP method '" + name + "'");
}

const char* to_string(QPStatus status)
{
    switch (status) {
    case QPStatus::optimal:
        return "optimal";
    case QPStatus::max_iterations:
        return "max_iterations";
    case QPStatus::primal_infeasible:
        return "primal_infeasible";
    case QPStatus::dual_infeasible:
        return "dual_infeasible";
    }
    return "unknown";
}

QPSolution solve(const QuadraticProgram& qp, const QPSettings& settings)
{
    if (settings.method != QPMethod::admm) {
        QPSolution sol = interior_point(qp, settings);
        if (sol.optimal() || settings.method == QPMethod::interior_point)
            return sol;
        const int spent = sol.iterations;
        AdmmSolver solver(qp, settings);
        sol = solver.run();
        sol.iterations += spent;
        return sol;
    }
    AdmmSolver solver(qp, settings);
    return solver.run();
}

WarmStart warm_start(const QPSolution& solution) { return WarmStart{solution.x, solution.y}; }

void dump_qp(const QuadraticProgram& qp, const std::string& path)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("dump_qp: cannot open " + path);
    char buf[32];
    auto write_mat = [&](const char* name, const Mat& m) {
        out << "# " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
        for (Index i = 0; i < m.rows(); ++i) {
            for (Index j = 0; j < m.cols(); ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
                out << (j ? "," : "") << buf;
            }
            out << '\n';
        }
    };
    write_mat("P", qp.P());
    write_mat("q", qp.q().transpose());
    write_mat("A", qp.A());
    write_mat("l", qp.l().transpose());
    write_mat("u", qp.u().transpose());
}

}  // namespace sdpc
