#pragma once

#include "sdpc/common.hpp"

#include <memory>
#include <random>
#include <string>

namespace sdpc {

struct StepResult {
    Vec u;  // input after saturation
    Vec y;  // measurement paired with u (taken before the state advances)
};

/// Discrete-time plant with input saturation and an optional seeded Gaussian
/// measurement-noise channel.
class Plant {
public:
    virtual ~Plant() = default;

    virtual std::string name() const = 0;
    virtual int state_dim() const = 0;
    virtual int input_dim() const = 0;
    virtual int output_dim() const = 0;
    virtual Vec default_state() const = 0;

    double dt() const { return dt_; }
    const Vec& u_low() const { return u_low_; }
    const Vec& u_high() const { return u_high_; }
    const Vec& state() const { return x_; }
    long steps() const { return steps_; }

    void reset() { reset(default_state()); }
    void reset(const Vec& x0);
    Vec saturate(const Vec& u) const;

    /// Saturates u, measures, then advances the state by one period.
    StepResult step(const Vec& u);

    /// Noise-free measurement at the current state under input u.
    Vec measure(const Vec& u) const { return output(x_, u); }

    void set_measurement_noise(double stddev, std::uint64_t seed);

    /// Continuous state derivative; only meaningful for ODE plants.
    virtual Vec derivative(const Vec& x, const Vec& u) const;
    virtual Vec output(const Vec& x, const Vec& u) const = 0;
    virtual Vec advance(const Vec& x, const Vec& u) const;

protected:
    Plant(double dt, Vec u_low, Vec u_high);

    /// Classical RK4 over one period, split into substeps_ equal steps.
    Vec rk4(const Vec& x, const Vec& u) const;
    void set_substeps(int n);

    double dt_;
    Vec u_low_, u_high_;
    Vec x_;
    long steps_ = 0;
    int substeps_ = 1;
    double noise_std_ = 0.0;
    std::mt19937_64 noise_rng_;
};

struct LtiStep {
    Vec state;
    Vec y;
};

/// x' = Ax + Bu, y = Cx + Du.
LtiStep lti_step(const Mat& A, const Mat& B, const Mat& C, const Mat& D, const Vec& x, const Vec& u);

class LtiPlant : public Plant {
public:
    LtiPlant(Mat A, Mat B, Mat C, Mat D, double dt = 1.0, Vec u_low = {}, Vec u_high = {});

    /// Seeded random system with spectral radius `radius`, zero feedthrough.
    static LtiPlant random(std::uint64_t seed, int n, int m, int p, double radius = 0.9);

    std::string name() const override { return "lti"; }
    int state_dim() const override { return static_cast<int>(A_.rows()); }
    int input_dim() const override { return static_cast<int>(B_.cols()); }
    int output_dim() const override { return static_cast<int>(C_.rows()); }
    Vec default_state() const override { return Vec::Zero(A_.rows()); }

    Vec output(const Vec& x, const Vec& u) const override { return C_ * x + D_ * u; }
    Vec advance(const Vec& x, const Vec& u) const override { return A_ * x + B_ * u; }

    const Mat& A() const { return A_; }
    const Mat& B() const { return B_; }
    const Mat& C() const { return C_; }
    const Mat& D() const { return D_; }

private:
    Mat A_, B_, C_, D_;
};

/// Cart with a point-mass pole on a massless rod. theta = 0 is upright,
/// theta = pi hangs down; positive theta tilts the pole toward +x.
struct CartPoleParams {
    double cart_mass = 1.0;
    double pole_mass = 0.1;
    double pole_length = 0.5;
    double gravity = 9.81;
    double cart_damping = 0.0;
    double pole_damping = 0.0;
    double force_limit = 10.0;
    double dt = 0.02;
    int substeps = 4;
};

class CartPole : public Plant {
public:
    explicit CartPole(CartPoleParams params = {});

    std::string name() const override { return "cartpole"; }
    int state_dim() const override { return 4; }
    int input_dim() const override { return 1; }
    int output_dim() const override { return 5; }
    /// Hanging at rest at the origin.
    Vec default_state() const override;

    /// x = [pos, theta, pos_dot, theta_dot]
    Vec derivative(const Vec& x, const Vec& u) const override;
    /// y = [pos, sin theta, cos theta, pos_dot, theta_dot]
    Vec output(const Vec& x, const Vec& u) const override;

    /// Pendulum energy 0.5 m l^2 theta_dot^2 + m g l cos theta.
    double pole_energy(const Vec& x) const;
    double upright_energy() const;
    /// Cart + pole mechanical energy (conserved without damping or force).
    double total_energy(const Vec& x) const;

    const CartPoleParams& params() const { return p_; }

private:
    CartPoleParams p_;
};

/// Two-link planar arm moving in a horizontal plane (no gravity), uniform
/// rods with the mass at their centers.
struct ReacherParams {
    double l1 = 0.1;
    double l2 = 0.1;
    double m1 = 0.5;
    double m2 = 0.5;
    double damping = 0.02;
    double torque_limit = 0.1;
    double dt = 0.02;
    int substeps = 4;
};

class Reacher : public Plant {
public:
    explicit Reacher(ReacherParams params = {});

    std::string name() const override { return "reacher"; }
    int state_dim() const override { return 4; }
    int input_dim() const override { return 2; }
    int output_dim() const override { return 8; }
    Vec default_state() const override { return Vec::Zero(4); }

    /// x = [q1, q2, q1_dot, q2_dot]
    Vec derivative(const Vec& x, const Vec& u) const override;
    /// y = [sin q1, cos q1, sin q2, cos q2, ee_x, ee_y, q1_dot, q2_dot]
    Vec output(const Vec& x, const Vec& u) const override;

    Mat mass_matrix(double q2) const;
    double kinetic_energy(const Vec& x) const;
    Eigen::Vector2d end_effector(const Vec& x) const;

    const ReacherParams& params() const { return p_; }

private:
    ReacherParams p_;
};

/// Planar rigid-body rocket. Inputs are normalized to [-1, 1]:
///   thrust = weight * (1 + u0), gimbal = u1 * max_gimbal, side = u2 * max_side,
/// so u = 0 hovers. phi is the tilt of the body axis (sin phi, cos phi)
/// toward +x.
struct RocketParams {
    double mass = 1.0;
    double inertia = 0.1;
    double gravity = 9.81;
    double gimbal_arm = 0.5;  // engine below the center of mass
    double side_arm = 0.5;    // side thruster above the center of mass
    double max_gimbal = 0.2;
    double max_side = 1.0;
    double dt = 0.05;
    int substeps = 4;
};

class Rocket : public Plant {
public:
    explicit Rocket(RocketParams params = {});

    std::string name() const override { return "rocket"; }
    int state_dim() const override { return 6; }
    int input_dim() const override { return 3; }
    int output_dim() const override { return 6; }
    Vec default_state() const override { return Vec::Zero(6); }

    /// x = [x, z, phi, x_dot, z_dot, phi_dot]
    Vec derivative(const Vec& x, const Vec& u) const override;
    Vec output(const Vec& x, const Vec& u) const override;

    const RocketParams& params() const { return p_; }

private:
    RocketParams p_;
};

struct SwingupGains {
    double k_energy = 20.0;   // force per unit of energy error per rad/s
    double k_position = 1.0;  // cart centering
    double k_velocity = 1.0;
    /// Switch to the linear stabilizer inside this angle from upright (rad).
    double catch_angle = 0.35;
};

/// Energy-shaping swing-up with a cart-centering PD term, handing over to a
/// discrete LQR stabilizer near upright.
///
/// Away from upright: u = k_e (E - E_up) theta_dot cos(theta) - k_x x - k_v x_dot,
/// which raises the pole energy toward E_up whenever E < E_up. The force is
/// saturated to the plant limit.
class SwingupPolicy {
public:
    SwingupPolicy(const CartPole& plant, SwingupGains gains = {});

    double operator()(const Vec& state) const;
    double energy_term(const Vec& state) const;
    const Eigen::RowVectorXd& lqr_gain() const { return K_; }
    const SwingupGains& gains() const { return gains_; }

private:
    CartPole plant_;
    SwingupGains gains_;
    Eigen::RowVectorXd K_;
};

/// Discrete LQR gain K (u = -K x) by fixed-point Riccati iteration.
Mat dlqr(const Mat& A, const Mat& B, const Mat& Q, const Mat& R);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

std::unique_ptr<Plant> make_plant(const std::string& name);

}  // namespace sdpc
