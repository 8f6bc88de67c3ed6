// Ground-truth quadrotor model on SE(3) and its structure-preserving integrator.

#pragma once

#include "koopquad/linalg.hpp"

#include <cstdio>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace koopquad {

struct QuadrotorParams {
  double mass = 0.5;                                               // kg
  Mat3 inertia = Vec3(2.32e-3, 2.32e-3, 4.0e-3).asDiagonal();     // kg m^2
  double thrust_coeff = 1e-5;                                      // k_t
  double moment_coeff = 1e-7;                                      // k_m
  double arm_length = 0.175;                                       // m
  double gravity = 9.81;                                           // m/s^2

  void validate() const {
    if (!(mass > 0.0)) throw DomainError("QuadrotorParams: mass must be positive");
    if (!inertia.allFinite() || (inertia - inertia.transpose()).norm() > 1e-12 * inertia.norm()) {
      throw DomainError("QuadrotorParams: inertia must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(inertia);
    if (!(es.eigenvalues().minCoeff() > 0.0)) {
      throw DomainError("QuadrotorParams: inertia must be positive definite");
    }
    if (!(thrust_coeff > 0.0 && moment_coeff > 0.0 && arm_length > 0.0)) {
      throw DomainError("QuadrotorParams: k_t, k_m and l must be positive");
    }
    if (!(gravity >= 0.0)) throw DomainError("QuadrotorParams: gravity must be non-negative");
  }
};

struct QuadrotorState {
  Pose pose;
  Vec3 omega = Vec3::Zero();     // body angular velocity, rad/s
  Vec3 velocity = Vec3::Zero();  // body linear velocity, m/s

  [[nodiscard]] bool finite() const {
    return pose.rotation.allFinite() && pose.position.allFinite() && omega.allFinite() &&
           velocity.allFinite();
  }
};

/// Squared rotor speeds u_i = Omega_i^2.
struct RotorInput {
  Vec4 u = Vec4::Zero();
};

/// Modified input: first three entries are M + J hat(w) w, the fourth is the
/// body-frame vertical acceleration.
struct TransformedInput {
  Vec4 value = Vec4::Zero();

  [[nodiscard]] Vec3 torque() const { return value.head<3>(); }
  [[nodiscard]] double vertical_accel() const { return value(3); }
};

struct Wrench {
  double thrust = 0.0;
  Vec3 moment = Vec3::Zero();
};

[[nodiscard]] inline Wrench wrench_from_rotors(const RotorInput& in, const QuadrotorParams& p) {
  const Vec4& u = in.u;
  Wrench w;
  w.thrust = p.thrust_coeff * u.sum();
  w.moment = Vec3(p.thrust_coeff * p.arm_length * (u(1) - u(3)),
                  p.thrust_coeff * p.arm_length * (u(2) - u(0)),
                  p.moment_coeff * (u(0) - u(1) + u(2) - u(3)));
  return w;
}

/// Linear map u -> (F, M) as a 4x4 matrix.
[[nodiscard]] inline Mat4 mixing_matrix(const QuadrotorParams& p) {
  const double kt = p.thrust_coeff;
  const double kl = p.thrust_coeff * p.arm_length;
  const double km = p.moment_coeff;
  Mat4 m;
  // clang-format off
  m <<  kt,  kt,  kt,  kt,
       0.0,  kl, 0.0, -kl,
       -kl, 0.0,  kl, 0.0,
        km, -km,  km, -km;
  // clang-format on
  return m;
}

struct StateDerivative {
  Mat3 rotation_dot = Mat3::Zero();
  Vec3 position_dot = Vec3::Zero();
  Vec3 omega_dot = Vec3::Zero();
  Vec3 velocity_dot = Vec3::Zero();
};

/// Rigid-body equations driven by rotor inputs.
[[nodiscard]] inline StateDerivative nonlinear_rhs(const QuadrotorState& x, const RotorInput& u,
                                                   const QuadrotorParams& p) {
  const Wrench w = wrench_from_rotors(u, p);
  const Mat3& r = x.pose.rotation;
  const Mat3 wx = hat(x.omega);
  StateDerivative d;
  d.rotation_dot = r * wx;
  d.position_dot = r * x.velocity;
  d.omega_dot = p.inertia.ldlt().solve(w.moment + p.inertia * wx * x.omega);
  d.velocity_dot = (w.thrust / p.mass) * Vec3::UnitZ() - wx * x.velocity -
                   p.gravity * r.transpose() * Vec3::UnitZ();
  return d;
}

[[nodiscard]] inline TransformedInput transform_input(const QuadrotorState& x, const RotorInput& u,
                                                      const QuadrotorParams& p) {
  const Wrench w = wrench_from_rotors(u, p);
  const Mat3& r = x.pose.rotation;
  TransformedInput out;
  out.value.head<3>() = w.moment + p.inertia * hat(x.omega) * x.omega;
  const Vec3 vdot = (w.thrust / p.mass) * Vec3::UnitZ() - x.omega.cross(x.velocity) -
                    p.gravity * r.transpose() * Vec3::UnitZ();
  out.value(3) = vdot.z();
  return out;
}

struct InverseInputResult {
  RotorInput input;
  bool feasible = true;  // false when some u_i < 0
};

/// Rotor inputs that realise a transformed input at state x. Negative squared
/// speeds are reported through `feasible`, never clamped.
[[nodiscard]] inline InverseInputResult inverse_transform_input(const QuadrotorState& x,
                                                                const TransformedInput& ut,
                                                                const QuadrotorParams& p) {
  const Mat3& r = x.pose.rotation;
  const Vec3 moment = ut.torque() - p.inertia * hat(x.omega) * x.omega;
  // u4 = F/m - (w x v)_3 - g (R^T e3)_3
  const double thrust =
      p.mass * (ut.vertical_accel() + x.omega.cross(x.velocity).z() +
                p.gravity * (r.transpose() * Vec3::UnitZ()).z());
  Vec4 wrench;
  wrench << thrust, moment;
  InverseInputResult res;
  res.input.u = mixing_matrix(p).partialPivLu().solve(wrench);
  res.feasible = (res.input.u.array() >= 0.0).all();
  return res;
}

/// Which nonlinear world the reference simulation lives in. All three share
/// R' = R hat(w), p' = R v and w' = J^{-1} u_{1:3}; they differ in v':
///  - full:       v' from the rigid-body equations, with (v')_3 = u4;
///  - simplified: v' = -w x v laterally, (v')_3 = u4 (gravity dropped);
///  - force_free: v' = -w x v in all axes. u4 is then not a free input but the
///                realised (v')_3 = -(w x v)_3.
enum class ReferenceModel { full, simplified, force_free };

[[nodiscard]] inline std::string to_string(ReferenceModel m) {
  switch (m) {
    case ReferenceModel::full: return "full";
    case ReferenceModel::simplified: return "simplified";
    case ReferenceModel::force_free: return "force-free";
  }
  return "?";
}

[[nodiscard]] inline ReferenceModel parse_reference_model(const std::string& s) {
  if (s == "full") return ReferenceModel::full;
  if (s == "simplified") return ReferenceModel::simplified;
  if (s == "force-free" || s == "force_free") return ReferenceModel::force_free;
  throw DomainError("unknown reference model '" + s + "'");
}

/// The transformed input actually experienced by the body in `model` when
/// `commanded` is requested.
[[nodiscard]] inline Vec4 effective_input(const QuadrotorState& x, const Vec4& commanded,
                                          ReferenceModel model) {
  Vec4 u = commanded;
  if (model == ReferenceModel::force_free) u(3) = -x.omega.cross(x.velocity).z();
  return u;
}

[[nodiscard]] inline Vec3 model_velocity_dot(const QuadrotorState& x, const Vec4& ut,
                                             const QuadrotorParams& p, ReferenceModel model) {
  Vec3 vdot = -x.omega.cross(x.velocity);
  switch (model) {
    case ReferenceModel::full:
      vdot -= p.gravity * x.pose.rotation.transpose() * Vec3::UnitZ();
      vdot.z() = ut(3);
      break;
    case ReferenceModel::simplified:
      vdot.z() = ut(3);
      break;
    case ReferenceModel::force_free:
      break;
  }
  return vdot;
}

/// Piecewise-constant transformed-input signal, sampled at the start of each step.
using InputSignal = std::function<Vec4(double t)>;

struct Trajectory {
  std::vector<double> times;
  std::vector<QuadrotorState> states;
  std::vector<TransformedInput> inputs;  // input applied on [t_i, t_{i+1})

  [[nodiscard]] std::size_t size() const { return times.size(); }

  void validate() const {
    if (states.size() != times.size() || inputs.size() != times.size()) {
      throw DomainError("Trajectory: sequences must have equal lengths");
    }
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (!(times[i] > times[i - 1])) throw DomainError("Trajectory: times must increase");
    }
  }
};

namespace detail {

struct FlatDerivative {
  Vec3 position_dot;
  Vec3 omega_dot;
  Vec3 velocity_dot;
};

inline FlatDerivative model_rhs(const QuadrotorState& x, const Vec4& ut, const QuadrotorParams& p,
                                ReferenceModel model, const Mat3& inertia_inv) {
  return {x.pose.rotation * x.velocity, inertia_inv * ut.head<3>(),
          model_velocity_dot(x, ut, p, model)};
}

// Inverse of the right-trivialised dexp on so(3), truncated after the second
// commutator, which is enough for a fourth-order Munthe-Kaas scheme.
inline Vec3 dexpinv_right(const Vec3& theta, const Vec3& w) {
  const Vec3 tw = theta.cross(w);
  return w + 0.5 * tw + (1.0 / 12.0) * theta.cross(tw);
}

}  // namespace detail

/// One RKMK4 step: classical RK4 on (p, w, v), rotation advanced as
/// R <- R exp(dt * w_eff) so that R stays on SO(3).
[[nodiscard]] inline QuadrotorState rkmk4_step(const QuadrotorState& x, const Vec4& ut, double dt,
                                               const QuadrotorParams& p, ReferenceModel model,
                                               const Mat3& inertia_inv) {
  static constexpr double a[4] = {0.0, 0.5, 0.5, 1.0};
  static constexpr double b[4] = {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0};
  detail::FlatDerivative k_prev{};
  Vec3 theta_prev = Vec3::Zero();
  Vec3 theta_sum = Vec3::Zero();
  Vec3 dp = Vec3::Zero(), dw = Vec3::Zero(), dv = Vec3::Zero();
  for (int i = 0; i < 4; ++i) {
    QuadrotorState xi = x;
    Vec3 theta = Vec3::Zero();
    if (i > 0) {
      theta = a[i] * dt * theta_prev;
      xi.pose.rotation = x.pose.rotation * rotation_exp(theta);
      xi.pose.position = x.pose.position + a[i] * dt * k_prev.position_dot;
      xi.omega = x.omega + a[i] * dt * k_prev.omega_dot;
      xi.velocity = x.velocity + a[i] * dt * k_prev.velocity_dot;
    }
    const Vec4 ui = effective_input(xi, ut, model);
    const detail::FlatDerivative k = detail::model_rhs(xi, ui, p, model, inertia_inv);
    const Vec3 kr = detail::dexpinv_right(theta, xi.omega);
    theta_sum += b[i] * kr;
    dp += b[i] * k.position_dot;
    dw += b[i] * k.omega_dot;
    dv += b[i] * k.velocity_dot;
    k_prev = k;
    theta_prev = kr;
  }
  QuadrotorState next;
  next.pose.rotation = x.pose.rotation * rotation_exp(dt * theta_sum);
  next.pose.position = x.pose.position + dt * dp;
  next.omega = x.omega + dt * dw;
  next.velocity = x.velocity + dt * dv;
  return next;
}

/// Fixed-step integration on [0, t_final]. The trajectory holds
/// round(t_final / dt) + 1 samples; inputs[i] is the effective input at sample i.
[[nodiscard]] inline Trajectory integrate(const QuadrotorState& x0, const InputSignal& signal,
                                          const QuadrotorParams& p, double t_final, double dt,
                                          ReferenceModel model) {
  if (!(dt > 0.0) || !(t_final >= 0.0)) throw DomainError("integrate: need dt > 0, t_final >= 0");
  p.validate();
  const auto steps = static_cast<std::size_t>(std::llround(t_final / dt));
  const Mat3 inertia_inv = p.inertia.inverse();
  Trajectory traj;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);
  traj.inputs.reserve(steps + 1);
  QuadrotorState x = x0;
  for (std::size_t i = 0;; ++i) {
    const double t = static_cast<double>(i) * dt;
    const Vec4 cmd = signal ? signal(t) : Vec4::Zero();
    if (!x.finite() || !cmd.allFinite()) {
      throw std::runtime_error("integrate: non-finite state at step " + std::to_string(i) +
                               " (t = " + std::to_string(t) + ")");
    }
    traj.times.push_back(t);
    traj.states.push_back(x);
    traj.inputs.push_back(TransformedInput{effective_input(x, cmd, model)});
    if (i == steps) break;
    x = rkmk4_step(x, cmd, dt, p, model, inertia_inv);
  }
  return traj;
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "t,px,py,pz,r11,r12,r13,r21,r22,r23,r31,r32,r33,wx,wy,wz,vx,vy,vz,u1,u2,u3,u4\n";
  char buf[32];
  auto put = [&](double v, bool last = false) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf << (last ? '\n' : ',');
  };
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const QuadrotorState& x = traj.states[i];
    put(traj.times[i]);
    for (int k = 0; k < 3; ++k) put(x.pose.position(k));
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) put(x.pose.rotation(r, c));
    }
    for (int k = 0; k < 3; ++k) put(x.omega(k));
    for (int k = 0; k < 3; ++k) put(x.velocity(k));
    for (int k = 0; k < 4; ++k) put(traj.inputs[i].value(k), k == 3);
  }
}

}  // namespace koopquad
