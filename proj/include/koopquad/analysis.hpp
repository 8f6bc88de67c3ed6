// Checks and metrics on top of the lift: input recovery, controllability rank,
// observable-bound and decay audits, lift consistency, and trajectory errors.

#pragma once

#include "koopquad/lift.hpp"
#include "koopquad/linalg.hpp"
#include "koopquad/quadrotor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace koopquad {

// ---------------------------------------------------------------------------
// Input recovery

struct RecoveryResult {
  Vec4 input = Vec4::Zero();
  double residual = 0.0;           // |B u - B~ U*|
  double relative_residual = 0.0;  // residual / |B~ U*| (0 when the target is zero)
  int effective_rank = 0;
  bool rank_deficient = false;
};

/// Least-squares objective (B u - B~ U*)^T (B u - B~ U*).
[[nodiscard]] inline double recovery_objective(const MatX& b, const VecX& target, const Vec4& u) {
  return (b * u - target).squaredNorm();
}

/// u~ = B(x)^+ B~ U*.
[[nodiscard]] inline RecoveryResult recover_input(const MatX& b, const VecX& selector_diag,
                                                  const VecX& u_star) {
  if (b.rows() != u_star.size() || selector_diag.size() != u_star.size() || b.cols() != 4) {
    throw DomainError("recover_input: dimension mismatch");
  }
  const VecX target = selector_diag.cwiseProduct(u_star);
  Eigen::CompleteOrthogonalDecomposition<MatX> cod(b);
  RecoveryResult r;
  r.effective_rank = static_cast<int>(cod.rank());
  r.rank_deficient = r.effective_rank < 4;
  r.input = cod.solve(target);
  r.residual = (b * r.input - target).norm();
  const double tn = target.norm();
  r.relative_residual = tn > 0.0 ? r.residual / tn : 0.0;
  return r;
}

[[nodiscard]] inline RecoveryResult recover_input(const QuadrotorState& x, const VecX& u_star,
                                                  const LiftedModel& model) {
  return recover_input(model.B(x), selector_diagonal(model.config()), u_star);
}

// ---------------------------------------------------------------------------
// Controllability

struct RankReport {
  int dimension = 0;
  int rank = 0;
  int powers_used = 0;  // number of blocks A^m B~ appended
  double tolerance = 0.0;
  VecX singular_values;
  std::vector<int> rank_history;  // rank after each appended block
};

inline constexpr int kMaxControllabilityDim = 1200;

/// Rank of [B~, A B~, A^2 B~, ...]. Powers stop once A^m B~ vanishes, which
/// happens after at most max(n1, n2) steps for the nilpotent shift structure.
[[nodiscard]] inline RankReport controllability_rank(const MatX& a, const MatX& b_sel,
                                                     bool track_history = false) {
  const auto n = a.rows();
  if (a.cols() != n || b_sel.rows() != n) throw DomainError("controllability_rank: shape mismatch");
  if (n > kMaxControllabilityDim) {
    throw DomainError("controllability_rank: dimension " + std::to_string(n) +
                      " exceeds the dense-SVD guard");
  }
  // only nonzero columns of B~ contribute to the column space
  std::vector<Eigen::Index> cols;
  for (Eigen::Index j = 0; j < b_sel.cols(); ++j) {
    if (b_sel.col(j).cwiseAbs().maxCoeff() > 0.0) cols.push_back(j);
  }
  RankReport rep;
  rep.dimension = static_cast<int>(n);
  if (cols.empty()) {
    rep.singular_values = VecX::Zero(0);
    return rep;
  }
  MatX block(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) block.col(static_cast<Eigen::Index>(j)) = b_sel.col(cols[j]);

  std::vector<MatX> blocks;
  for (Eigen::Index m = 0; m < n; ++m) {
    if (block.cwiseAbs().maxCoeff() == 0.0) break;
    blocks.push_back(block);
    if (track_history) {
      MatX c(n, static_cast<Eigen::Index>(blocks.size()) * block.cols());
      for (std::size_t i = 0; i < blocks.size(); ++i) c.middleCols(static_cast<Eigen::Index>(i) * block.cols(), block.cols()) = blocks[i];
      Eigen::BDCSVD<MatX> svd(c);
      const VecX s = svd.singularValues();
      const double tol = s(0) * static_cast<double>(n) * std::numeric_limits<double>::epsilon();
      rep.rank_history.push_back(static_cast<int>((s.array() > tol).count()));
    }
    block = (a * block).eval();
  }
  rep.powers_used = static_cast<int>(blocks.size());
  MatX c(n, static_cast<Eigen::Index>(blocks.size()) * block.cols());
  for (std::size_t i = 0; i < blocks.size(); ++i) c.middleCols(static_cast<Eigen::Index>(i) * block.cols(), block.cols()) = blocks[i];
  Eigen::BDCSVD<MatX> svd(c);
  rep.singular_values = svd.singularValues();
  rep.tolerance = rep.singular_values(0) * static_cast<double>(n) * std::numeric_limits<double>::epsilon();
  rep.rank = static_cast<int>((rep.singular_values.array() > rep.tolerance).count());
  return rep;
}

[[nodiscard]] inline RankReport controllability_rank(const LiftConfig& cfg,
                                                     bool track_history = false) {
  if (cfg.dim() > kMaxControllabilityDim) {
    throw DomainError("controllability_rank: dimension exceeds the dense-SVD guard");
  }
  return controllability_rank(assemble_A(cfg), assemble_selector(cfg), track_history);
}

// ---------------------------------------------------------------------------
// Observable bounds and decay

struct DomainBounds {
  double omega_bar = 0.6 / std::numbers::sqrt2;
  double v_bar = 0.9;

  [[nodiscard]] bool admissible() const {
    return omega_bar < 1.0 / std::numbers::sqrt2 && v_bar < 1.0 && omega_bar > 0.0 && v_bar > 0.0;
  }
};

inline constexpr double kBoundRelTol = 1e-12;

[[nodiscard]] inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 d;
  do {
    d = Vec3(n(rng), n(rng), n(rng));
  } while (d.norm() < 1e-8);
  return d.normalized();
}

/// Uniformly distributed rotation (normalized Gaussian quaternion).
[[nodiscard]] inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  while (q.norm() < 1e-8) q = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

/// Vector of norm strictly inside (0, radius].
[[nodiscard]] inline Vec3 random_in_ball(std::mt19937_64& rng, double radius) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = 0.0;
  while (r <= 0.0) r = radius * std::cbrt(u(rng));
  return r * random_unit(rng);
}

struct BoundAuditReport {
  long samples = 0;
  long checks = 0;
  long f_violations = 0;  // |hat(w)^k v| > |w|^k |v|
  long g_violations = 0;  // |vec(R hat(w)^k)| > (sqrt2 |w|)^k
  double worst_f_ratio = 0.0;
  double worst_g_ratio = 0.0;

  [[nodiscard]] bool passed() const { return f_violations == 0 && g_violations == 0; }
};

/// Samples (R, w, v) with |w| <= omega_max, |v| <= v_max and checks both
/// chain bounds for k = 0..k_max.
[[nodiscard]] inline BoundAuditReport observable_bound_audit(long samples, int k_max,
                                                             std::uint64_t seed,
                                                             double omega_max = 2.0,
                                                             double v_max = 2.0) {
  std::mt19937_64 rng(seed);
  BoundAuditReport rep;
  rep.samples = samples;
  for (long s = 0; s < samples; ++s) {
    const Mat3 r = random_rotation(rng);
    const Vec3 w = random_in_ball(rng, omega_max);
    const Vec3 v = random_in_ball(rng, v_max);
    const Mat3 wx = hat(w);
    Vec3 f = v;
    Mat3 rw = r;
    for (int k = 0; k <= k_max; ++k) {
      const double fb = std::pow(w.norm(), k) * v.norm();
      const double gb = std::pow(std::numbers::sqrt2 * w.norm(), k);
      const double fr = f.norm() / fb;
      // k = 0 gives |vec(R)| = sqrt3 > 1: the bound is stated for k >= 1
      const double gr = k == 0 ? 0.0 : rw.norm() / gb;
      rep.worst_f_ratio = std::max(rep.worst_f_ratio, fr);
      rep.worst_g_ratio = std::max(rep.worst_g_ratio, gr);
      if (fr > 1.0 + kBoundRelTol) ++rep.f_violations;
      if (gr > 1.0 + kBoundRelTol) ++rep.g_violations;
      rep.checks += 2;
      f = wx * f;
      rw = (rw * wx).eval();
    }
  }
  return rep;
}

struct DecayAuditReport {
  long samples = 0;
  long excluded = 0;  // samples outside the admissible domain
  long checks = 0;
  long f_violations = 0;
  long g_violations = 0;
  long derivative_bound_violations = 0;  // input-sum term above k |w|^{k-1} c |v|
  double tail_f = 0.0;                   // max |f^_{k_max}| over samples
  double tail_g = 0.0;                   // max |vec(g^_{k_max})| over samples
  bool domain_violation = false;         // requested bounds are not admissible
  std::string warning;

  [[nodiscard]] bool passed() const {
    return !domain_violation && f_violations == 0 && g_violations == 0 &&
           derivative_bound_violations == 0;
  }
};

/// Monotone decay of the normalized chains. Normalized samples are drawn in
/// the ball of radius omega_bar / v_bar and mapped to physical velocities
/// through cfg's constants, so the library's own normalization is exercised.
/// Also checks the input-sum bound with |a| <= input_bound.
[[nodiscard]] inline DecayAuditReport decay_audit(const LiftConfig& cfg, const DomainBounds& bounds,
                                                  long samples, int k_max, std::uint64_t seed,
                                                  double input_bound = 1.0) {
  DecayAuditReport rep;
  rep.samples = samples;
  if (!bounds.admissible()) {
    rep.domain_violation = true;
    rep.excluded = samples;
    rep.warning = "requested bounds lie outside |w^| < 1/sqrt2, |v^| < 1; samples excluded";
    return rep;
  }
  if (!cfg.normalized) throw DomainError("decay_audit: configuration must be normalized");
  std::mt19937_64 rng(seed);
  for (long s = 0; s < samples; ++s) {
    QuadrotorState x;
    x.pose.rotation = random_rotation(rng);
    x.pose.position = random_in_ball(rng, 10.0);
    const Vec3 wn = random_in_ball(rng, bounds.omega_bar);
    const Vec3 vn = random_in_ball(rng, bounds.v_bar);
    x.omega = cfg.omega0 * wn;
    x.velocity = cfg.v0 * vn;
    const Vec3 a = random_in_ball(rng, input_bound);
    double prev_f = observable_f(x.omega, x.velocity, 0, cfg).norm();
    double prev_g = observable_g(x, 0, cfg).norm();
    // input-sum term of f'_k evaluated directly, powers by repeated products
    const Mat3 wx = hat(wn);
    for (int k = 1; k <= k_max; ++k) {
      const double fk = observable_f(x.omega, x.velocity, k, cfg).norm();
      const double gk = observable_g(x, k, cfg).norm();
      rep.checks += 3;
      if (!(fk < prev_f)) ++rep.f_violations;
      if (!(gk < prev_g)) ++rep.g_violations;
      Vec3 sum = Vec3::Zero();
      for (int i = 1; i <= k; ++i) {
        sum += matrix_power(wx, i - 1) * a.cross(matrix_power(wx, k - i) * vn);
      }
      const double bound = k * std::pow(wn.norm(), k - 1) * input_bound * vn.norm();
      if (sum.norm() > bound * (1.0 + kBoundRelTol) + 1e-300) ++rep.derivative_bound_violations;
      prev_f = fk;
      prev_g = gk;
      if (k == k_max) {
        rep.tail_f = std::max(rep.tail_f, fk);
        rep.tail_g = std::max(rep.tail_g, gk);
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Lift consistency along a reference trajectory

struct BlockResidual {
  std::string name;    // "head", "g3", "f7", ...
  bool tail = false;
  double max_residual = 0.0;
  double scale = 0.0;  // max |rhs block| over the trajectory
  double envelope = 0.0;  // tail blocks: max truncation envelope seen
  long envelope_violations = 0;

  [[nodiscard]] double relative() const { return scale > 0.0 ? max_residual / scale : max_residual; }
};

struct ConsistencyReport {
  std::vector<BlockResidual> blocks;
  double max_relative_nontail = 0.0;
  std::string worst_block;
  long tail_violations = 0;
  long samples = 0;
  long skipped = 0;  // samples straddling an input switch

  [[nodiscard]] bool passed(double tol) const {
    return max_relative_nontail <= tol && tail_violations == 0;
  }
};

/// Relative input change between neighbouring samples treated as a switch.
inline constexpr double kSwitchThreshold = 1e-2;

/// Central differences of the lifted reference trajectory against A X + B(x) u~.
/// Samples where the commanded torque channels jump by more than
/// kSwitchThreshold between neighbouring steps are skipped: the trajectory has
/// a kink there and the central difference is only first-order accurate.
/// Elsewhere the torque channels are replaced by the mean of the two held
/// values; the fourth channel is taken at t_i since it may be state dependent.
[[nodiscard]] inline ConsistencyReport lift_consistency(const Trajectory& traj,
                                                        const LiftedModel& model,
                                                        std::size_t stride = 1) {
  const LiftConfig& cfg = model.config();
  if (traj.size() < 3) throw DomainError("lift_consistency: trajectory too short");
  ConsistencyReport rep;
  const int nb = 1 + cfg.n1 + cfg.n2;
  rep.blocks.resize(static_cast<std::size_t>(nb));
  rep.blocks[0].name = "head";
  for (int k = 0; k < cfg.n1; ++k) {
    rep.blocks[1 + k].name = "g" + std::to_string(k);
    rep.blocks[1 + k].tail = k == cfg.n1 - 1;
  }
  for (int k = 0; k < cfg.n2; ++k) {
    rep.blocks[1 + cfg.n1 + k].name = "f" + std::to_string(k);
    rep.blocks[1 + cfg.n1 + k].tail = k == cfg.n2 - 1;
  }
  auto segment = [&](int b) -> std::pair<int, int> {
    if (b == 0) return {0, 4};
    if (b <= cfg.n1) return {cfg.g_offset(b - 1), 16};
    return {cfg.f_offset(b - 1 - cfg.n1), 3};
  };

  std::vector<std::vector<double>> resid_series(static_cast<std::size_t>(nb));
  std::vector<std::vector<double>> env_series(static_cast<std::size_t>(nb));
  for (std::size_t i = 1; i + 1 < traj.size(); i += stride) {
    const Vec3 jump = traj.inputs[i].value.head<3>() - traj.inputs[i - 1].value.head<3>();
    if (jump.norm() > kSwitchThreshold * traj.inputs[i].value.head<3>().norm()) {
      ++rep.skipped;
      continue;
    }
    const double h2 = traj.times[i + 1] - traj.times[i - 1];
    const VecX xm = lift(traj.states[i - 1], cfg);
    const VecX xp = lift(traj.states[i + 1], cfg);
    const VecX x0 = lift(traj.states[i], cfg);
    const VecX fd = (xp - xm) / h2;
    Vec4 u = traj.inputs[i].value;
    u.head<3>() = 0.5 * (traj.inputs[i - 1].value.head<3>() + traj.inputs[i].value.head<3>());
    const VecX rhs = model.rhs(x0, u, traj.states[i]);
    ++rep.samples;

    const double wn = traj.states[i].omega.norm();
    const double vn = traj.states[i].velocity.norm();
    for (int b = 0; b < nb; ++b) {
      const auto [off, len] = segment(b);
      BlockResidual& br = rep.blocks[b];
      const double r = (fd.segment(off, len) - rhs.segment(off, len)).norm();
      br.max_residual = std::max(br.max_residual, r);
      br.scale = std::max(br.scale, rhs.segment(off, len).norm());
      if (br.tail) {
        // dropped shift term: coefficient times the first truncated observable
        double env;
        if (b <= cfg.n1) {
          const double w_hat = wn / cfg.g_base();
          env = cfg.g_chain_coeff() * std::pow(std::numbers::sqrt2 * w_hat, cfg.n1);
          if (cfg.g_shift == GChainShift::full_identity) {
            env += cfg.g_chain_coeff() * std::pow(w_hat, cfg.n1 - 1) * vn / cfg.g_base();
          }
        } else {
          env = cfg.f_chain_coeff() * std::pow(wn / cfg.f_omega_base(), cfg.n2) * vn / cfg.f_v_base();
        }
        br.envelope = std::max(br.envelope, env);
        resid_series[b].push_back(r);
        env_series[b].push_back(env);
      }
    }
  }
  for (int b = 0; b < nb; ++b) {
    BlockResidual& br = rep.blocks[b];
    if (br.tail) {
      // finite-difference noise allowance: same relative budget as the other blocks
      for (std::size_t j = 0; j < resid_series[b].size(); ++j) {
        if (resid_series[b][j] > env_series[b][j] * (1.0 + 1e-6) + 1e-4 * br.scale) {
          ++br.envelope_violations;
        }
      }
      rep.tail_violations += br.envelope_violations;
      continue;
    }
    if (br.relative() > rep.max_relative_nontail) {
      rep.max_relative_nontail = br.relative();
      rep.worst_block = br.name;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// B construction cross-checks

struct BlockEquivalence {
  double f_max_diff = 0.0;
  double g_max_diff = 0.0;
  double f_scale = 0.0;
  double g_scale = 0.0;
};

[[nodiscard]] inline BlockEquivalence compare_b_constructions(const QuadrotorState& x,
                                                              const LiftConfig& cfg,
                                                              const Mat3& inertia) {
  const MatX bc = assemble_B_columnwise(x, cfg, inertia);
  const MatX bf = assemble_B_closed_form(x, cfg, inertia);
  BlockEquivalence r;
  const int f0 = cfg.f_offset(0);
  const int g0 = cfg.g_offset(0);
  r.f_max_diff = (bc.middleRows(f0, 3 * cfg.n2) - bf.middleRows(f0, 3 * cfg.n2)).cwiseAbs().maxCoeff();
  r.g_max_diff = (bc.middleRows(g0, 16 * cfg.n1) - bf.middleRows(g0, 16 * cfg.n1)).cwiseAbs().maxCoeff();
  r.f_scale = bc.middleRows(f0, 3 * cfg.n2).cwiseAbs().maxCoeff();
  r.g_scale = bc.middleRows(g0, 16 * cfg.n1).cwiseAbs().maxCoeff();
  return r;
}

/// One (k, i) summand of the printed input-term factorization compared with
/// the direct summand it is meant to equal.
struct TermDiscrepancy {
  char chain = 'f';  // 'f' or 'g'
  int k = 0;
  int i = 0;
  bool defined = true;  // false when a printed exponent is negative
  double abs_diff = 0.0;
  double reference = 0.0;
};

/// Evaluates the printed factorizations term by term on the basis inputs:
///   f: (-1)^{l+1} W^l hat(v) W^{i-1} a        vs  W^{i-1} hat(a) W^l v
///   g: (-1)^l [R W^{k-1} hat(a), -R W^{l-1} hat(v) W^{i-2} a]
///                                             vs  R [W^{i-1} hat(a) W^l, W^{i-1} hat(a) W^{l-1} v]
/// with W = hat(w), l = k - i and a the angular acceleration per unit input.
[[nodiscard]] inline std::vector<TermDiscrepancy> printed_term_discrepancies(
    const QuadrotorState& x, const Mat3& coupling, int k_max) {
  const Mat3 w = hat(x.omega);
  const Mat3& r = x.pose.rotation;
  const Vec3& v = x.velocity;
  std::vector<TermDiscrepancy> out;
  for (int k = 1; k <= k_max; ++k) {
    for (int i = 1; i <= k; ++i) {
      const int l = k - i;
      const double sign_l = (l % 2 == 0) ? 1.0 : -1.0;
      TermDiscrepancy tf{'f', k, i, true, 0.0, 0.0};
      TermDiscrepancy tg{'g', k, i, l >= 1 && i >= 2, 0.0, 0.0};
      for (int j = 0; j < 3; ++j) {
        const Vec3 a = coupling.col(j);
        const Vec3 direct = matrix_power(w, i - 1) * a.cross(matrix_power(w, l) * v);
        const Vec3 printed = -sign_l * (matrix_power(w, l) * hat(v) * matrix_power(w, i - 1) * a);
        tf.abs_diff = std::max(tf.abs_diff, (direct - printed).norm());
        tf.reference = std::max(tf.reference, direct.norm());

        Mat4 gd = Mat4::Zero();
        gd.topLeftCorner<3, 3>() = r * matrix_power(w, i - 1) * hat(a) * matrix_power(w, l);
        if (l >= 1) gd.topRightCorner<3, 1>() = r * matrix_power(w, i - 1) * a.cross(matrix_power(w, l - 1) * v);
        Mat4 gp = Mat4::Zero();
        gp.topLeftCorner<3, 3>() = sign_l * r * matrix_power(w, k - 1) * hat(a);
        if (tg.defined) {
          gp.topRightCorner<3, 1>() = -sign_l * r * matrix_power(w, l - 1) * hat(v) * matrix_power(w, i - 2) * a;
        }
        tg.abs_diff = std::max(tg.abs_diff, (gd - gp).norm());
        tg.reference = std::max(tg.reference, gd.norm());
      }
      out.push_back(tf);
      out.push_back(tg);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Approximation error

inline constexpr double kErrorFloor = 1e-12;

struct ErrorSeries {
  std::vector<double> times;
  std::vector<double> position;  // NaN where the reference norm is below the floor
  std::vector<double> velocity;
  std::vector<double> euler;

  [[nodiscard]] std::size_t index_at(double t) const {
    if (times.empty()) throw DomainError("ErrorSeries: empty");
    const auto it = std::lower_bound(times.begin(), times.end(), t - 1e-9);
    if (it == times.end()) return times.size() - 1;
    return static_cast<std::size_t>(it - times.begin());
  }
};

[[nodiscard]] inline double relative_error(const Eigen::Ref<const VecX>& a,
                                           const Eigen::Ref<const VecX>& b) {
  const double bn = b.norm();
  if (!(bn > kErrorFloor)) return std::numeric_limits<double>::quiet_NaN();
  return (a - b).norm() / bn;
}

[[nodiscard]] inline double wrap_angle(double a) {
  return std::remainder(a, 2.0 * std::numbers::pi);
}

/// Per-sample |a - b| / |b| for position, velocity and ZYX Euler angles
/// (angle differences wrapped to (-pi, pi]).
[[nodiscard]] inline ErrorSeries approximation_error(const Trajectory& approx,
                                                     const Trajectory& reference) {
  if (approx.size() != reference.size()) throw DomainError("approximation_error: grid mismatch");
  ErrorSeries e;
  e.times = reference.times;
  const std::size_t n = reference.size();
  e.position.resize(n);
  e.velocity.resize(n);
  e.euler.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(approx.times[i] - reference.times[i]) > 1e-9) {
      throw DomainError("approximation_error: time grids differ");
    }
    const QuadrotorState& a = approx.states[i];
    const QuadrotorState& b = reference.states[i];
    e.position[i] = relative_error(a.pose.position, b.pose.position);
    e.velocity[i] = relative_error(a.velocity, b.velocity);
    const Vec3 ea = euler_zyx(a.pose.rotation).as_vector();
    const Vec3 eb = euler_zyx(b.pose.rotation).as_vector();
    Vec3 d;
    for (int j = 0; j < 3; ++j) d(j) = wrap_angle(ea(j) - eb(j));
    e.euler[i] = eb.norm() > kErrorFloor ? d.norm() / eb.norm()
                                         : std::numeric_limits<double>::quiet_NaN();
  }
  return e;
}

}  // namespace koopquad
