// Analytic Koopman lift of the quadrotor: observables, lifted state layout,
// the constant state matrix A, the selector B~ and the state-dependent input
// matrix B(x) of  X' = A X + B(x) u~.
//
// Lifted state layout (N = 16 n1 + 3 n2 + 4):
//   [ w (3) | (v)_3 (1) | vec(g_0) ... vec(g_{n1-1}) (16 each) | f_0 ... f_{n2-1} (3 each) ]
// with g_k = h S^k and f_k = hat(w)^k v, optionally normalized to
// g^_k = h (S/s0)^k and f^_k = hat(w/w0)^k (v/v0).

#pragma once

#include "koopquad/linalg.hpp"
#include "koopquad/quadrotor.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace koopquad {

enum class BConstruction { columnwise, closed_form };

/// Coefficients on the chain couplings in normalized coordinates.
/// `derived` follows the ODEs of the normalized observables (g-chain s0,
/// f-chain w0); `transposed` uses the transposed pairing (g-chain w0,
/// f-chain s0).
enum class ChainScaling { derived, transposed };

/// How the angular acceleration enters B: w' = J^{-1} u_{1:3} (`inverse`) or
/// the literal J u_{1:3} (`literal`).
enum class InertiaCoupling { inverse, literal };

/// Coupling of vec(g_k)' to vec(g_{k+1}) for k >= 1.
///  - drift_compensated: with v' = -w x v, the drift part of S' cancels the
///    translational column of g_{k+1} exactly, so those three entries are
///    dropped from the shift and S'(u~) carries only the angular part.
///  - full_identity: identity shift and S'(e_4) = [0 e3; 0 0].
enum class GChainShift { drift_compensated, full_identity };

struct LiftConfig {
  int n1 = 15;
  int n2 = 15;
  bool normalized = false;
  double omega0 = 1.0;
  double v0 = 1.0;
  BConstruction b_construction = BConstruction::columnwise;
  ChainScaling scaling = ChainScaling::derived;
  InertiaCoupling inertia = InertiaCoupling::inverse;
  GChainShift g_shift = GChainShift::drift_compensated;

  [[nodiscard]] double s0() const { return std::max(omega0, v0); }
  [[nodiscard]] int dim() const { return 16 * n1 + 3 * n2 + 4; }

  [[nodiscard]] static constexpr int omega_offset() { return 0; }
  [[nodiscard]] static constexpr int v3_offset() { return 3; }
  [[nodiscard]] int g_offset(int k) const { return 4 + 16 * k; }
  [[nodiscard]] int f_offset(int k) const { return 4 + 16 * n1 + 3 * k; }

  /// Scale of the normalized S-chain: g^_k = g_k / s0^k.
  [[nodiscard]] double g_base() const { return normalized ? s0() : 1.0; }
  /// f^_k = f_k / (w0^k v0).
  [[nodiscard]] double f_omega_base() const { return normalized ? omega0 : 1.0; }
  [[nodiscard]] double f_v_base() const { return normalized ? v0 : 1.0; }

  /// Coefficient on vec(g_{k+1}) in vec(g_k)'.
  [[nodiscard]] double g_chain_coeff() const {
    if (!normalized) return 1.0;
    return scaling == ChainScaling::derived ? s0() : omega0;
  }
  /// Magnitude of the coefficient on f_{k+1} in f_k' (the sign is negative).
  [[nodiscard]] double f_chain_coeff() const {
    if (!normalized) return 1.0;
    return scaling == ChainScaling::derived ? omega0 : s0();
  }

  void validate() const {
    if (n1 < 1 || n2 < 1) throw DomainError("LiftConfig: n1 and n2 must be >= 1");
    if (normalized && !(omega0 > 0.0 && v0 > 0.0)) {
      throw DomainError("LiftConfig: normalization constants must be positive");
    }
  }
};

/// Normalization constants with a 25% margin over the strict bounds
/// w0 > sqrt(2) max|w| and v0 > max|v|.
[[nodiscard]] inline std::pair<double, double> default_normalization(double max_omega,
                                                                     double max_v) {
  constexpr double kMargin = 1.25;
  const double w0 = std::sqrt(2.0) * kMargin * std::max(max_omega, 1e-12);
  const double v0 = kMargin * std::max(max_v, 1e-12);
  return {w0, v0};
}

/// Column name for lifted-state entry `i`, e.g. "w1", "v3", "g2_13", "f0_2".
[[nodiscard]] inline std::string lifted_component_name(const LiftConfig& cfg, int i) {
  if (i < 3) return "w" + std::to_string(i + 1);
  if (i == 3) return "v3";
  if (i < cfg.f_offset(0)) {
    const int k = (i - 4) / 16;
    const int e = (i - 4) % 16;
    return "g" + std::to_string(k) + "_" + std::to_string(e % 4) + std::to_string(e / 4);
  }
  const int k = (i - cfg.f_offset(0)) / 3;
  const int e = (i - cfg.f_offset(0)) % 3;
  return "f" + std::to_string(k) + "_" + std::to_string(e + 1);
}

// ---------------------------------------------------------------------------
// Observables

/// g_k = h S^k (normalized: h (S/s0)^k), by repeated multiplication.
[[nodiscard]] inline Mat4 observable_g(const QuadrotorState& x, int k, const LiftConfig& cfg) {
  if (k < 0) throw DomainError("observable_g: k must be >= 0");
  const Mat4 s = twist_matrix(x.omega, x.velocity) / cfg.g_base();
  return x.pose.matrix() * matrix_power(s, k);
}

/// f_k = hat(w)^k v (normalized: hat(w/w0)^k (v/v0)).
[[nodiscard]] inline Vec3 observable_f(const Vec3& omega, const Vec3& v, int k,
                                       const LiftConfig& cfg) {
  if (k < 0) throw DomainError("observable_f: k must be >= 0");
  const Vec3 w = omega / cfg.f_omega_base();
  Vec3 f = v / cfg.f_v_base();
  for (int i = 0; i < k; ++i) f = w.cross(f);
  return f;
}

[[nodiscard]] inline VecX lift(const QuadrotorState& x, const LiftConfig& cfg) {
  cfg.validate();
  VecX out = VecX::Zero(cfg.dim());
  out.segment<3>(LiftConfig::omega_offset()) = x.omega;
  out(LiftConfig::v3_offset()) = x.velocity.z();
  const Mat4 s = twist_matrix(x.omega, x.velocity) / cfg.g_base();
  Mat4 g = x.pose.matrix();
  for (int k = 0; k < cfg.n1; ++k) {
    out.segment<16>(cfg.g_offset(k)) = Eigen::Map<const Eigen::Matrix<double, 16, 1>>(g.data());
    g = (g * s).eval();
  }
  const Vec3 w = x.omega / cfg.f_omega_base();
  Vec3 f = x.velocity / cfg.f_v_base();
  for (int k = 0; k < cfg.n2; ++k) {
    out.segment<3>(cfg.f_offset(k)) = f;
    f = w.cross(f);
  }
  return out;
}

[[nodiscard]] inline Mat4 g_block(const VecX& lifted, const LiftConfig& cfg, int k) {
  return Eigen::Map<const Mat4>(lifted.data() + cfg.g_offset(k));
}

[[nodiscard]] inline Vec3 f_block(const VecX& lifted, const LiftConfig& cfg, int k) {
  return lifted.segment<3>(cfg.f_offset(k));
}

struct UnliftResult {
  QuadrotorState state;
  double orthogonality_residual = 0.0;  // ||R^T R - I||_F of the raw g_0 block
  double bottom_row_residual = 0.0;     // |last row of g_0 - (0,0,0,1)|
};

/// Reads the physical state back from a lifted vector. The rotation block is
/// projected onto SO(3); residuals above `tolerance` raise DomainError. With
/// an infinite tolerance any finite, non-degenerate block is accepted.
[[nodiscard]] inline UnliftResult unlift(const VecX& lifted, const LiftConfig& cfg,
                                         double tolerance = 1e-6) {
  if (lifted.size() != cfg.dim()) throw DomainError("unlift: lifted state has wrong length");
  const Mat4 g0 = g_block(lifted, cfg, 0);
  const Mat3 raw = g0.topLeftCorner<3, 3>();
  if (!raw.allFinite() || raw.norm() < 1e-9) throw DomainError("unlift: degenerate g_0 block");
  UnliftResult res;
  res.orthogonality_residual = orthogonality_residual(raw);
  res.bottom_row_residual = (g0.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).norm();
  if (res.orthogonality_residual > tolerance || res.bottom_row_residual > tolerance) {
    throw DomainError("unlift: g_0 block is not a pose (residual " +
                      std::to_string(std::max(res.orthogonality_residual,
                                              res.bottom_row_residual)) +
                      ")");
  }
  res.state.pose.rotation = std::isfinite(tolerance) ? nearest_rotation(raw) : project_to_rotation(raw);
  res.state.pose.position = g0.topRightCorner<3, 1>();
  res.state.omega = lifted.segment<3>(LiftConfig::omega_offset());
  const Vec3 f0 = f_block(lifted, cfg, 0) * cfg.f_v_base();
  res.state.velocity = Vec3(f0.x(), f0.y(), lifted(LiftConfig::v3_offset()));
  return res;
}

// ---------------------------------------------------------------------------
// Model matrices

/// Indices of vec(4x4) that hold the translational column (rows 0..2, col 3).
inline constexpr int kTranslationalEntries[3] = {12, 13, 14};

[[nodiscard]] inline MatX assemble_A(const LiftConfig& cfg) {
  cfg.validate();
  const int n = cfg.dim();
  MatX a = MatX::Zero(n, n);
  const double cg = cfg.g_chain_coeff();
  const double cf = cfg.f_chain_coeff();
  for (int k = 0; k + 1 < cfg.n1; ++k) {
    a.block<16, 16>(cfg.g_offset(k), cfg.g_offset(k + 1)) = cg * Eigen::Matrix<double, 16, 16>::Identity();
    if (k >= 1 && cfg.g_shift == GChainShift::drift_compensated) {
      for (int e : kTranslationalEntries) a(cfg.g_offset(k) + e, cfg.g_offset(k + 1) + e) = 0.0;
    }
  }
  for (int k = 0; k + 1 < cfg.n2; ++k) {
    a.block<3, 3>(cfg.f_offset(k), cfg.f_offset(k + 1)) = -cf * Mat3::Identity();
  }
  return a;
}

/// Diagonal of B~ = bdiag(I_4, 0_16, I_{16(n1-1)}, 0_3, I_{3(n2-1)}).
[[nodiscard]] inline VecX selector_diagonal(const LiftConfig& cfg) {
  VecX d = VecX::Ones(cfg.dim());
  d.segment<16>(cfg.g_offset(0)).setZero();
  d.segment<3>(cfg.f_offset(0)).setZero();
  return d;
}

[[nodiscard]] inline MatX assemble_selector(const LiftConfig& cfg) {
  return selector_diagonal(cfg).asDiagonal();
}

/// 3x3 map from u~_{1:3} to the angular acceleration used inside B.
[[nodiscard]] inline Mat3 input_coupling(const LiftConfig& cfg, const Mat3& inertia) {
  return cfg.inertia == InertiaCoupling::inverse ? Mat3(inertia.inverse()) : inertia;
}

/// C3 in R^{9x4}: vec(hat(u_{1:3})) = C3 u.
[[nodiscard]] inline Eigen::Matrix<double, 9, 4> hat_vec_matrix() {
  Eigen::Matrix<double, 9, 4> c = Eigen::Matrix<double, 9, 4>::Zero();
  for (int j = 0; j < 3; ++j) {
    const Mat3 m = hat(Vec3::Unit(j));
    c.col(j) = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(m.data());
  }
  return c;
}

namespace detail {

// S'(e_j) for the j-th input channel, before normalization.
inline Mat4 twist_rate_basis(int j, const Mat3& coupling, GChainShift shift) {
  Mat4 sd = Mat4::Zero();
  if (j < 3) {
    sd.topLeftCorner<3, 3>() = hat(coupling.col(j));
  } else if (shift == GChainShift::full_identity) {
    sd(2, 3) = 1.0;
  }
  return sd;
}

inline void check_b_inputs(const LiftConfig& cfg) { cfg.validate(); }

}  // namespace detail

/// Input matrix B(x), built block by block by evaluating each block's input
/// expression on the basis inputs e_1..e_4.
[[nodiscard]] inline MatX assemble_B_columnwise(const QuadrotorState& x, const LiftConfig& cfg,
                                                const Mat3& inertia) {
  detail::check_b_inputs(cfg);
  const Mat3 coupling = input_coupling(cfg, inertia);
  MatX b = MatX::Zero(cfg.dim(), 4);
  b.topLeftCorner<3, 3>() = coupling;
  b(3, 3) = 1.0;

  const Mat4 h = x.pose.matrix();
  const Mat4 s = twist_matrix(x.omega, x.velocity) / cfg.g_base();
  const Vec3 w = x.omega / cfg.f_omega_base();
  for (int j = 0; j < 4; ++j) {
    // g-chain: T_k = sum_i S^{i-1} S' S^{k-i} obeys T_k = T_{k-1} S + S^{k-1} S'
    const Mat4 sd = detail::twist_rate_basis(j, coupling, cfg.g_shift) / cfg.g_base();
    Mat4 t = Mat4::Zero();
    Mat4 s_pow = Mat4::Identity();
    for (int k = 1; k < cfg.n1; ++k) {
      t = (t * s + s_pow * sd).eval();
      s_pow = (s_pow * s).eval();
      const Mat4 blk = h * t;
      b.block<16, 1>(cfg.g_offset(k), j) = Eigen::Map<const Eigen::Matrix<double, 16, 1>>(blk.data());
    }
    if (j == 3) continue;
    // f-chain: F_k = sum_i hat(w)^{i-1} hat(a) hat(w)^{k-i} v obeys
    // F_k = a x f_{k-1} + w x F_{k-1}
    const Vec3 a = coupling.col(j) / cfg.f_omega_base();
    Vec3 f = x.velocity / cfg.f_v_base();
    Vec3 acc = Vec3::Zero();
    for (int k = 1; k < cfg.n2; ++k) {
      acc = a.cross(f) + w.cross(acc);
      f = w.cross(f);
      b.block<3, 1>(cfg.f_offset(k), j) = acc;
    }
  }
  return b;
}

/// Input matrix B(x) from matrix-level factorizations: Kronecker products
/// with the constant C3 for the g-chain, and a x w = -hat(w) a for the f-chain.
[[nodiscard]] inline MatX assemble_B_closed_form(const QuadrotorState& x, const LiftConfig& cfg,
                                                 const Mat3& inertia) {
  detail::check_b_inputs(cfg);
  const Mat3 coupling = input_coupling(cfg, inertia);
  MatX b = MatX::Zero(cfg.dim(), 4);
  b.topLeftCorner<3, 3>() = coupling;
  b(3, 3) = 1.0;

  // vec(S'(u~)) = D u~, D in R^{16x4}
  Eigen::Matrix<double, 16, 4> d = Eigen::Matrix<double, 16, 4>::Zero();
  const Eigen::Matrix<double, 9, 4> c3 = hat_vec_matrix();
  Eigen::Matrix4d angular = Eigen::Matrix4d::Zero();
  angular.topLeftCorner<3, 3>() = coupling;
  const Eigen::Matrix<double, 9, 4> vec_omega_dot_hat = c3 * angular;
  for (int col = 0; col < 3; ++col) {
    for (int row = 0; row < 3; ++row) d.row(4 * col + row) = vec_omega_dot_hat.row(3 * col + row);
  }
  if (cfg.g_shift == GChainShift::full_identity) d(14, 3) = 1.0;
  d /= cfg.g_base();

  const Mat4 h = x.pose.matrix();
  const Mat4 s = twist_matrix(x.omega, x.velocity) / cfg.g_base();
  std::vector<Mat4> s_pow(static_cast<std::size_t>(cfg.n1));
  if (cfg.n1 > 0) s_pow[0] = Mat4::Identity();
  for (int k = 1; k < cfg.n1; ++k) s_pow[k] = s_pow[k - 1] * s;
  for (int k = 1; k < cfg.n1; ++k) {
    Eigen::Matrix<double, 16, 16> kron_sum = Eigen::Matrix<double, 16, 16>::Zero();
    for (int i = 1; i <= k; ++i) {
      // vec(L X Rt) = (Rt^T kron L) vec(X)
      const Mat4 left = h * s_pow[i - 1];
      const Mat4 right_t = s_pow[k - i].transpose();
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) kron_sum.block<4, 4>(4 * r, 4 * c) += right_t(r, c) * left;
      }
    }
    b.block<16, 4>(cfg.g_offset(k), 0) = kron_sum * d;
  }

  const Vec3 w = x.omega / cfg.f_omega_base();
  const Mat3 wx = hat(w);
  std::vector<Vec3> f(static_cast<std::size_t>(cfg.n2));
  if (cfg.n2 > 0) f[0] = x.velocity / cfg.f_v_base();
  for (int k = 1; k < cfg.n2; ++k) f[k] = w.cross(f[k - 1]);
  const Mat3 a = coupling / cfg.f_omega_base();
  for (int k = 1; k < cfg.n2; ++k) {
    Mat3 sum = Mat3::Zero();
    Mat3 w_pow = Mat3::Identity();
    for (int i = 1; i <= k; ++i) {
      sum -= w_pow * hat(f[k - i]);
      w_pow = (w_pow * wx).eval();
    }
    b.block<3, 3>(cfg.f_offset(k), 0) = sum * a;
  }
  return b;
}

[[nodiscard]] inline MatX assemble_B(const QuadrotorState& x, const LiftConfig& cfg,
                                     const Mat3& inertia) {
  return cfg.b_construction == BConstruction::columnwise ? assemble_B_columnwise(x, cfg, inertia)
                                                         : assemble_B_closed_form(x, cfg, inertia);
}

// ---------------------------------------------------------------------------
// Lifted model

/// A, B~ and the B(x) builder for one configuration. Immutable once built.
class LiftedModel {
 public:
  LiftedModel(LiftConfig cfg, Mat3 inertia)
      : LiftedModel(cfg, inertia, assemble_A(cfg)) {}

  /// Uses a caller-supplied state matrix (used by mutation audits).
  LiftedModel(LiftConfig cfg, Mat3 inertia, MatX state_matrix)
      : cfg_(cfg), inertia_(std::move(inertia)), a_(std::move(state_matrix)) {
    cfg_.validate();
    if (a_.rows() != cfg_.dim() || a_.cols() != cfg_.dim()) {
      throw DomainError("LiftedModel: state matrix has wrong shape");
    }
    a_sparse_ = a_.sparseView();
  }

  [[nodiscard]] const LiftConfig& config() const { return cfg_; }
  [[nodiscard]] const Mat3& inertia() const { return inertia_; }
  [[nodiscard]] int dim() const { return cfg_.dim(); }
  [[nodiscard]] const MatX& A() const { return a_; }
  [[nodiscard]] MatX selector() const { return assemble_selector(cfg_); }
  [[nodiscard]] MatX B(const QuadrotorState& x) const { return assemble_B(x, cfg_, inertia_); }

  [[nodiscard]] VecX apply_A(const VecX& lifted) const { return a_sparse_ * lifted; }

  /// A X + B(x) u~.
  [[nodiscard]] VecX rhs(const VecX& lifted, const Vec4& ut, const QuadrotorState& x_for_b) const {
    return apply_A(lifted) + B(x_for_b) * ut;
  }

 private:
  LiftConfig cfg_;
  Mat3 inertia_;
  MatX a_;
  Eigen::SparseMatrix<double> a_sparse_;
};

[[nodiscard]] inline VecX lifted_rhs(const VecX& lifted, const Vec4& ut, const LiftedModel& model,
                                     const QuadrotorState& x_for_b) {
  if (!lifted.allFinite() || !ut.allFinite()) throw DomainError("lifted_rhs: non-finite input");
  return model.rhs(lifted, ut, x_for_b);
}

struct LiftedTrajectory {
  std::vector<double> times;
  std::vector<VecX> states;
  std::vector<Vec4> inputs;
  double max_orthogonality_residual = 0.0;

  [[nodiscard]] std::size_t size() const { return times.size(); }
};

/// RK4 on the lifted dynamics. B(x) and the effective input are refreshed at
/// every stage from the physical state read back out of the lifted vector.
[[nodiscard]] inline LiftedTrajectory propagate_lifted(const VecX& x0, const InputSignal& signal,
                                                       const LiftedModel& model, double t_final,
                                                       double dt, ReferenceModel world) {
  if (!(dt > 0.0) || !(t_final >= 0.0)) {
    throw DomainError("propagate_lifted: need dt > 0, t_final >= 0");
  }
  const LiftConfig& cfg = model.config();
  const auto steps = static_cast<std::size_t>(std::llround(t_final / dt));
  constexpr double kNoLimit = std::numeric_limits<double>::infinity();
  LiftedTrajectory out;
  out.times.reserve(steps + 1);
  out.states.reserve(steps + 1);
  out.inputs.reserve(steps + 1);

  auto stage = [&](const VecX& xs, const Vec4& cmd, double& resid) {
    const UnliftResult phys = unlift(xs, cfg, kNoLimit);
    resid = std::max(resid, phys.orthogonality_residual);
    const Vec4 u = effective_input(phys.state, cmd, world);
    return std::pair<VecX, Vec4>(model.rhs(xs, u, phys.state), u);
  };

  VecX x = x0;
  for (std::size_t i = 0;; ++i) {
    const double t = static_cast<double>(i) * dt;
    const Vec4 cmd = signal ? signal(t) : Vec4::Zero();
    if (!x.allFinite()) {
      throw std::runtime_error("propagate_lifted: non-finite lifted state at step " +
                               std::to_string(i));
    }
    double resid = out.max_orthogonality_residual;
    auto [k1, u1] = stage(x, cmd, resid);
    out.times.push_back(t);
    out.states.push_back(x);
    out.inputs.push_back(u1);
    out.max_orthogonality_residual = resid;
    if (i == steps) break;
    const VecX k2 = stage(x + 0.5 * dt * k1, cmd, resid).first;
    const VecX k3 = stage(x + 0.5 * dt * k2, cmd, resid).first;
    const VecX k4 = stage(x + dt * k3, cmd, resid).first;
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    out.max_orthogonality_residual = resid;
  }
  return out;
}

/// Physical trajectory read back from a lifted one (rotation projected).
[[nodiscard]] inline Trajectory unlift_trajectory(const LiftedTrajectory& lt,
                                                  const LiftConfig& cfg) {
  Trajectory traj;
  traj.times = lt.times;
  traj.states.reserve(lt.size());
  traj.inputs.reserve(lt.size());
  for (std::size_t i = 0; i < lt.size(); ++i) {
    traj.states.push_back(unlift(lt.states[i], cfg, std::numeric_limits<double>::infinity()).state);
    traj.inputs.push_back(TransformedInput{lt.inputs[i]});
  }
  return traj;
}

inline void write_matrix_csv(std::ostream& os, const MatX& m) {
  char buf[32];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      os << buf << (c + 1 == m.cols() ? '\n' : ',');
    }
  }
}

inline void write_lifted_trajectory_csv(std::ostream& os, const LiftedTrajectory& lt,
                                        const LiftConfig& cfg) {
  os << "t";
  for (int i = 0; i < cfg.dim(); ++i) os << ',' << lifted_component_name(cfg, i);
  os << ",u1,u2,u3,u4\n";
  char buf[32];
  for (std::size_t r = 0; r < lt.size(); ++r) {
    std::snprintf(buf, sizeof buf, "%.17g", lt.times[r]);
    os << buf;
    for (int i = 0; i < cfg.dim(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", lt.states[r](i));
      os << ',' << buf;
    }
    for (int i = 0; i < 4; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", lt.inputs[r](i));
      os << ',' << buf;
    }
    os << '\n';
  }
}

}  // namespace koopquad
