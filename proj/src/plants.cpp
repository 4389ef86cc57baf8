#include "sdpc/plants.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>
#include <numbers>

namespace sdpc {

Plant::Plant(double dt, Vec u_low, Vec u_high) : dt_(dt), u_low_(std::move(u_low)), u_high_(std::move(u_high))
{
    if (!(dt_ > 0.0))
        throw ConfigError("plant: dt must be positive");
    if (u_low_.size() != u_high_.size())
        throw ConfigError("plant: input limit vectors differ in length");
    for (Index i = 0; i < u_low_.size(); ++i)
        if (u_low_[i] > u_high_[i])
            throw ConfigError("plant: input limits out of order");
}

void Plant::reset(const Vec& x0)
{
    require_dims(x0.size() == state_dim(), "plant reset: state dimension mismatch");
    x_ = x0;
    steps_ = 0;
}

Vec Plant::saturate(const Vec& u) const
{
    require_dims(u.size() == input_dim(), "plant: input dimension mismatch");
    if (u_low_.size() == 0)
        return u;
    return u.cwiseMax(u_low_).cwiseMin(u_high_);
}

StepResult Plant::step(const Vec& u)
{
    if (x_.size() != state_dim())
        reset();
    StepResult r;
    r.u = saturate(u);
    r.y = output(x_, r.u);
    if (noise_std_ > 0.0) {
        std::normal_distribution<double> n(0.0, noise_std_);
        for (Index i = 0; i < r.y.size(); ++i)
            r.y[i] += n(noise_rng_);
    }
    x_ = advance(x_, r.u);
    ++steps_;
    return r;
}

void Plant::set_measurement_noise(double stddev, std::uint64_t seed)
{
    if (stddev < 0.0)
        throw ConfigError("plant: negative noise level");
    noise_std_ = stddev;
    noise_rng_.seed(seed);
}

Vec Plant::derivative(const Vec&, const Vec&) const { throw Error(name() + ": no continuous-time model"); }

void Plant::set_substeps(int n)
{
    if (n < 1)
        throw ConfigError("plant: substeps must be >= 1");
    substeps_ = n;
}

Vec Plant::advance(const Vec& x, const Vec& u) const { return rk4(x, u); }

Vec Plant::rk4(const Vec& x, const Vec& u) const
{
    const double h = dt_ / substeps_;
    Vec z = x;
    for (int s = 0; s < substeps_; ++s) {
        const Vec k1 = derivative(z, u);
        const Vec k2 = derivative(z + 0.5 * h * k1, u);
        const Vec k3 = derivative(z + 0.5 * h * k2, u);
        const Vec k4 = derivative(z + h * k3, u);
        z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return z;
}

LtiStep lti_step(const Mat& A, const Mat& B, const Mat& C, const Mat& D, const Vec& x, const Vec& u)
{
    require_dims(A.rows() == A.cols() && B.rows() == A.rows() && C.cols() == A.rows() && D.rows() == C.rows() &&
                     D.cols() == B.cols() && x.size() == A.rows() && u.size() == B.cols(),
                 "lti_step: inconsistent dimensions");
    return LtiStep{A * x + B * u, C * x + D * u};
}

LtiPlant::LtiPlant(Mat A, Mat B, Mat C, Mat D, double dt, Vec u_low, Vec u_high)
    : Plant(dt, std::move(u_low), std::move(u_high)), A_(std::move(A)), B_(std::move(B)), C_(std::move(C)),
      D_(std::move(D))
{
    if (D_.size() == 0)
        D_ = Mat::Zero(C_.rows(), B_.cols());
    require_dims(A_.rows() == A_.cols() && B_.rows() == A_.rows() && C_.cols() == A_.rows() &&
                     D_.rows() == C_.rows() && D_.cols() == B_.cols(),
                 "LtiPlant: inconsistent dimensions");
    require_dims(u_low_.size() == 0 || u_low_.size() == B_.cols(), "LtiPlant: limit length mismatch");
    x_ = Vec::Zero(A_.rows());
}

LtiPlant LtiPlant::random(std::uint64_t seed, int n, int m, int p, double radius)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    auto fill = [&](Index r, Index c) {
        Mat out(r, c);
        for (Index i = 0; i < r; ++i)
            for (Index j = 0; j < c; ++j)
                out(i, j) = uni(rng);
        return out;
    };
    Mat A = fill(n, n);
    const double rho = Eigen::EigenSolver<Mat>(A).eigenvalues().cwiseAbs().maxCoeff();
    A *= radius / rho;
    Mat B = fill(n, m);
    Mat C = fill(p, n);
    return LtiPlant(std::move(A), std::move(B), std::move(C), Mat::Zero(p, m));
}

// ---------------------------------------------------------------------------

CartPole::CartPole(CartPoleParams params)
    : Plant(params.dt, Vec::Constant(1, -params.force_limit), Vec::Constant(1, params.force_limit)), p_(params)
{
    set_substeps(p_.substeps);
    if (p_.cart_mass <= 0.0 || p_.pole_mass <= 0.0 || p_.pole_length <= 0.0)
        throw ConfigError("cartpole: masses and length must be positive");
    x_ = default_state();
}

Vec CartPole::default_state() const
{
    Vec x = Vec::Zero(4);
    x[1] = std::numbers::pi;
    return x;
}

Vec CartPole::derivative(const Vec& x, const Vec& u) const
{
    const double M = p_.cart_mass, m = p_.pole_mass, l = p_.pole_length, g = p_.gravity;
    const double th = x[1], xd = x[2], thd = x[3];
    const double s = std::sin(th), c = std::cos(th);
    // [M+m, m l c; m l c, m l^2] [xdd; thdd] = [F - b_c xd + m l thd^2 s; m g l s - b_p thd]
    const double r1 = u[0] - p_.cart_damping * xd + m * l * thd * thd * s;
    const double r2 = m * g * l * s - p_.pole_damping * thd;
    const double a = M + m, b = m * l * c, d = m * l * l;
    const double det = a * d - b * b;
    Vec dx(4);
    dx[0] = xd;
    dx[1] = thd;
    dx[2] = (d * r1 - b * r2) / det;
    dx[3] = (a * r2 - b * r1) / det;
    return dx;
}

Vec CartPole::output(const Vec& x, const Vec&) const
{
    Vec y(5);
    y << x[0], std::sin(x[1]), std::cos(x[1]), x[2], x[3];
    return y;
}

double CartPole::pole_energy(const Vec& x) const
{
    const double m = p_.pole_mass, l = p_.pole_length;
    return 0.5 * m * l * l * x[3] * x[3] + m * p_.gravity * l * std::cos(x[1]);
}

double CartPole::upright_energy() const { return p_.pole_mass * p_.gravity * p_.pole_length; }

double CartPole::total_energy(const Vec& x) const
{
    const double M = p_.cart_mass, m = p_.pole_mass, l = p_.pole_length;
    const double xd = x[2], thd = x[3], c = std::cos(x[1]);
    return 0.5 * (M + m) * xd * xd + m * l * xd * thd * c + 0.5 * m * l * l * thd * thd + m * p_.gravity * l * c;
}

// ---------------------------------------------------------------------------

Reacher::Reacher(ReacherParams params)
    : Plant(params.dt, Vec::Constant(2, -params.torque_limit), Vec::Constant(2, params.torque_limit)), p_(params)
{
    set_substeps(p_.substeps);
    x_ = default_state();
}

Mat Reacher::mass_matrix(double q2) const
{
    const double l1 = p_.l1, l2 = p_.l2, m1 = p_.m1, m2 = p_.m2;
    const double lc1 = 0.5 * l1, lc2 = 0.5 * l2;
    const double i1 = m1 * l1 * l1 / 12.0, i2 = m2 * l2 * l2 / 12.0;
    const double a = i1 + i2 + m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2);
    const double b = m2 * l1 * lc2;
    const double d = i2 + m2 * lc2 * lc2;
    const double c2 = std::cos(q2);
    Mat M(2, 2);
    M << a + 2.0 * b * c2, d + b * c2, d + b * c2, d;
    return M;
}

Vec Reacher::derivative(const Vec& x, const Vec& u) const
{
    const double b = p_.m2 * p_.l1 * 0.5 * p_.l2;
    const double s2 = std::sin(x[1]), qd1 = x[2], qd2 = x[3];
    Eigen::Vector2d h;
    h << -b * s2 * (2.0 * qd1 * qd2 + qd2 * qd2), b * s2 * qd1 * qd1;
    const Eigen::Vector2d rhs = u.head<2>() - h - p_.damping * x.tail<2>();
    const Eigen::Matrix2d M = mass_matrix(x[1]);
    const Eigen::Vector2d qdd = M.inverse() * rhs;
    Vec dx(4);
    dx << qd1, qd2, qdd[0], qdd[1];
    return dx;
}

Eigen::Vector2d Reacher::end_effector(const Vec& x) const
{
    return {p_.l1 * std::cos(x[0]) + p_.l2 * std::cos(x[0] + x[1]),
            p_.l1 * std::sin(x[0]) + p_.l2 * std::sin(x[0] + x[1])};
}

Vec Reacher::output(const Vec& x, const Vec&) const
{
    const Eigen::Vector2d ee = end_effector(x);
    Vec y(8);
    y << std::sin(x[0]), std::cos(x[0]), std::sin(x[1]), std::cos(x[1]), ee[0], ee[1], x[2], x[3];
    return y;
}

double Reacher::kinetic_energy(const Vec& x) const
{
    const Eigen::Vector2d qd = x.tail<2>();
    return 0.5 * qd.dot(mass_matrix(x[1]) * qd);
}

// ---------------------------------------------------------------------------

Rocket::Rocket(RocketParams params) : Plant(params.dt, Vec::Constant(3, -1.0), Vec::Constant(3, 1.0)), p_(params)
{
    if (p_.mass <= 0.0 || p_.inertia <= 0.0)
        throw ConfigError("rocket: mass and inertia must be positive");
    set_substeps(p_.substeps);
    x_ = default_state();
}

Vec Rocket::derivative(const Vec& x, const Vec& u) const
{
    const double weight = p_.mass * p_.gravity;
    const double thrust = weight * (1.0 + u[0]);
    const double gimbal = u[1] * p_.max_gimbal;
    const double side = u[2] * p_.max_side;
    const double phi = x[2];
    const double fx = thrust * std::sin(phi + gimbal) + side * std::cos(phi);
    const double fz = thrust * std::cos(phi + gimbal) - side * std::sin(phi) - weight;
    // A gimballed engine below the center of mass pushes the tail toward the
    // thrust deflection and so rotates the nose the other way.
    const double torque = -thrust * std::sin(gimbal) * p_.gimbal_arm + side * p_.side_arm;
    Vec dx(6);
    dx << x[3], x[4], x[5], fx / p_.mass, fz / p_.mass, torque / p_.inertia;
    return dx;
}

Vec Rocket::output(const Vec& x, const Vec&) const { return x; }

// ---------------------------------------------------------------------------

double wrap_angle(double a)
{
    const double two_pi = 2.0 * std::numbers::pi;
    a = std::fmod(a + std::numbers::pi, two_pi);
    if (a <= 0.0)
        a += two_pi;
    return a - std::numbers::pi;
}

Mat dlqr(const Mat& A, const Mat& B, const Mat& Q, const Mat& R)
{
    Mat P = Q;
    for (int it = 0; it < 100000; ++it) {
        const Mat btp = B.transpose() * P;
        const Mat K = (R + btp * B).ldlt().solve(btp * A);
        const Mat next = Q + A.transpose() * P * (A - B * K);
        const double diff = (next - P).cwiseAbs().maxCoeff();
        P = 0.5 * (next + next.transpose());
        if (diff <= 1e-12 * (1.0 + P.cwiseAbs().maxCoeff()))
            break;
    }
    const Mat btp = B.transpose() * P;
    return (R + btp * B).ldlt().solve(btp * A);
}

SwingupPolicy::SwingupPolicy(const CartPole& plant, SwingupGains gains) : plant_(plant), gains_(gains)
{
    // Linearize the sampled dynamics about upright by central differences.
    const double h = 1e-6;
    const Vec x0 = Vec::Zero(4), u0 = Vec::Zero(1);
    Mat A(4, 4), B(4, 1);
    for (int j = 0; j < 4; ++j) {
        Vec e = Vec::Zero(4);
        e[j] = h;
        A.col(j) = (plant_.advance(x0 + e, u0) - plant_.advance(x0 - e, u0)) / (2.0 * h);
    }
    B.col(0) = (plant_.advance(x0, Vec::Constant(1, h)) - plant_.advance(x0, Vec::Constant(1, -h))) / (2.0 * h);
    Vec qd(4);
    qd << 1.0, 20.0, 1.0, 1.0;
    K_ = dlqr(A, B, qd.asDiagonal(), 0.1 * Mat::Identity(1, 1)).row(0);
}

double SwingupPolicy::energy_term(const Vec& x) const
{
    const double e = plant_.pole_energy(x) - plant_.upright_energy();
    return gains_.k_energy * e * x[3] * std::cos(x[1]);
}

double SwingupPolicy::operator()(const Vec& x) const
{
    const double th = wrap_angle(x[1]);
    double u;
    if (std::abs(th) < gains_.catch_angle) {
        Vec z(4);
        z << x[0], th, x[2], x[3];
        u = -K_.dot(z);
    } else {
        u = energy_term(x) - gains_.k_position * x[0] - gains_.k_velocity * x[2];
    }
    const double lim = plant_.params().force_limit;
    return std::clamp(u, -lim, lim);
}

std::unique_ptr<Plant> make_plant(const std::string& name)
{
    if (name == "cartpole")
        return std::make_unique<CartPole>();
    if (name == "reacher")
        return std::make_unique<Reacher>();
    if (name == "rocket")
        return std::make_unique<Rocket>();
    throw ConfigError("unknown plant '" + name + "'");
}

}  // namespace sdpc
