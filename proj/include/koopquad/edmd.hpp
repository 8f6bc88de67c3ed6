// 18-observable EDMD-with-control baseline.

#pragma once

#include "koopquad/linalg.hpp"
#include "koopquad/quadrotor.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace koopquad {

inline constexpr int kBaselineDim = 18;
using VecB = Eigen::Matrix<double, kBaselineDim, 1>;

/// The printed product list has eight entries for a nine-slot block; the
/// ninth slot is v1*w2.
[[nodiscard]] inline Eigen::Matrix<double, 9, 1> baseline_products(const Vec3& w, const Vec3& v) {
  Eigen::Matrix<double, 9, 1> g;
  g << v(2) * w(2), v(1) * w(2), v(2) * w(0), v(0) * w(2), v(1) * w(0), w(1) * w(2),
      w(0) * w(2), w(0) * w(1), v(0) * w(1);
  return g;
}

/// z(x) = [a_g, w, v, products], a_g = (0, 0, -g).
[[nodiscard]] inline VecB lift_baseline(const QuadrotorState& x, double gravity) {
  VecB z;
  z.segment<3>(0) = Vec3(0.0, 0.0, -gravity);
  z.segment<3>(3) = x.omega;
  z.segment<3>(6) = x.velocity;
  z.segment<9>(9) = baseline_products(x.omega, x.velocity);
  return z;
}

struct FitResult {
  MatX a_d;  // 18 x 18
  MatX b_d;  // 18 x 4
  double residual = 0.0;           // ||Z' - A_d Z - B_d U||_F
  double relative_residual = 0.0;  // residual / ||Z'||_F
  int regressor_rank = 0;
  int informative_rows = 0;  // regressor rows that are not identically zero
  double condition = 0.0;    // over the informative rows
  bool rank_deficient = false;
  bool fitted = false;
};

/// [A_d B_d] = Z' [Z; U]^+ through a complete orthogonal decomposition.
/// Rows of [Z; U] that vanish on every snapshot (the zero components of a_g)
/// are structural and do not count towards the rank-deficiency flag.
[[nodiscard]] inline FitResult fit_edmdc(const MatX& z, const MatX& z_next, const MatX& u) {
  const Eigen::Index m = z.cols();
  if (z_next.cols() != m || u.cols() != m || z.rows() != z_next.rows()) {
    throw DomainError("fit_edmdc: snapshot shapes disagree");
  }
  const Eigen::Index nz = z.rows();
  const Eigen::Index nu = u.rows();
  if (m < nz + nu) throw DomainError("fit_edmdc: fewer snapshots than unknowns per row");

  MatX omega(nz + nu, m);
  omega.topRows(nz) = z;
  omega.bottomRows(nu) = u;

  std::vector<Eigen::Index> live;
  for (Eigen::Index r = 0; r < omega.rows(); ++r) {
    if (omega.row(r).cwiseAbs().maxCoeff() > 0.0) live.push_back(r);
  }
  FitResult fit;
  fit.informative_rows = static_cast<int>(live.size());
  MatX reduced(static_cast<Eigen::Index>(live.size()), m);
  for (std::size_t i = 0; i < live.size(); ++i) reduced.row(static_cast<Eigen::Index>(i)) = omega.row(live[i]);

  // solve Omega^T K^T = Z'^T
  const MatX ot = omega.transpose();
  Eigen::CompleteOrthogonalDecomposition<MatX> cod(ot);
  const MatX k = cod.solve(z_next.transpose()).transpose();
  fit.a_d = k.leftCols(nz);
  fit.b_d = k.rightCols(nu);

  Eigen::JacobiSVD<MatX> svd(reduced.transpose());
  const VecX s = svd.singularValues();
  const double tol = s(0) * static_cast<double>(std::max(reduced.rows(), m)) *
                     std::numeric_limits<double>::epsilon();
  fit.regressor_rank = static_cast<int>((s.array() > tol).count());
  fit.rank_deficient = fit.regressor_rank < fit.informative_rows;
  const double smin = s(s.size() - 1);
  fit.condition = smin > 0.0 ? s(0) / smin : std::numeric_limits<double>::infinity();

  fit.residual = (z_next - fit.a_d * z - fit.b_d * u).norm();
  const double zn = z_next.norm();
  fit.relative_residual = zn > 0.0 ? fit.residual / zn : 0.0;
  fit.fitted = true;
  return fit;
}

struct SnapshotSet {
  MatX z, z_next, u;
};

/// Consecutive (z_k, z_{k+1}, u_k) pairs from a set of trajectories.
[[nodiscard]] inline SnapshotSet collect_snapshots(const std::vector<Trajectory>& trajs,
                                                   double gravity) {
  Eigen::Index m = 0;
  for (const auto& t : trajs) m += static_cast<Eigen::Index>(t.size() > 0 ? t.size() - 1 : 0);
  SnapshotSet s{MatX(kBaselineDim, m), MatX(kBaselineDim, m), MatX(4, m)};
  Eigen::Index c = 0;
  for (const auto& t : trajs) {
    for (std::size_t i = 0; i + 1 < t.size(); ++i, ++c) {
      s.z.col(c) = lift_baseline(t.states[i], gravity);
      s.z_next.col(c) = lift_baseline(t.states[i + 1], gravity);
      s.u.col(c) = t.inputs[i].value;
    }
  }
  return s;
}

/// Free run z_{k+1} = A_d z_k + B_d u_k from x0. Attitude and position are
/// reconstructed by integrating the predicted w and v:
/// R <- R exp(dt w_k), p <- p + dt R v_k.
[[nodiscard]] inline Trajectory predict_baseline(const FitResult& fit, const QuadrotorState& x0,
                                                 const std::vector<Vec4>& inputs, double dt,
                                                 double gravity) {
  if (!fit.fitted) throw DomainError("predict_baseline: model is not fitted");
  Trajectory out;
  out.times.reserve(inputs.size() + 1);
  out.states.reserve(inputs.size() + 1);
  out.inputs.reserve(inputs.size() + 1);
  VecX z = lift_baseline(x0, gravity);
  QuadrotorState x = x0;
  for (std::size_t i = 0;; ++i) {
    out.times.push_back(static_cast<double>(i) * dt);
    out.states.push_back(x);
    out.inputs.push_back(TransformedInput{i < inputs.size() ? inputs[i] : Vec4::Zero()});
    if (i == inputs.size()) break;
    const VecX zn = fit.a_d * z + fit.b_d * inputs[i];
    x.pose.position += dt * x.pose.rotation * x.velocity;
    x.pose.rotation = x.pose.rotation * rotation_exp(dt * x.omega);
    x.omega = zn.segment<3>(3);
    x.velocity = zn.segment<3>(6);
    z = zn;
    if (!z.allFinite()) throw std::runtime_error("predict_baseline: prediction diverged");
  }
  return out;
}

}  // namespace koopquad
