// SE(3) and matrix utilities shared by every koopquad module.
//
// Vectorization is column-major everywhere. The lifted-state index map in
// lift.hpp depends on it, so do not change it locally.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace koopquad {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using VecX = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using MatX = Eigen::MatrixXd;

/// Thrown when an operation receives input that violates its precondition.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kSkewTolerance = 1e-9;
inline constexpr double kRotationTolerance = 1e-9;

/// Cross-product matrix: hat(a) * b == a.cross(b).
[[nodiscard]] inline Mat3 hat(const Vec3& a) {
  Mat3 m;
  // clang-format off
  m <<   0.0, -a.z(),  a.y(),
       a.z(),    0.0, -a.x(),
      -a.y(),  a.x(),    0.0;
  // clang-format on
  return m;
}

/// Inverse of hat. Rejects inputs whose symmetric part exceeds kSkewTolerance.
[[nodiscard]] inline Vec3 vee(const Mat3& m, double tol = kSkewTolerance) {
  if ((m + m.transpose()).cwiseAbs().maxCoeff() > 2.0 * tol) {
    throw DomainError("vee: matrix is not skew-symmetric");
  }
  // average the mirrored entries so tiny asymmetries do not bias the result
  return Vec3(0.5 * (m(2, 1) - m(1, 2)), 0.5 * (m(0, 2) - m(2, 0)),
              0.5 * (m(1, 0) - m(0, 1)));
}

/// Column-major stacking of a matrix into a vector.
template <typename Derived>
[[nodiscard]] VecX vec(const Eigen::MatrixBase<Derived>& m) {
  VecX out(m.size());
  Eigen::Index idx = 0;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) out(idx++) = m(r, c);
  }
  return out;
}

/// Inverse of vec for a rows x cols matrix.
template <typename Derived>
[[nodiscard]] MatX unvec(const Eigen::MatrixBase<Derived>& v, Eigen::Index rows,
                         Eigen::Index cols) {
  if (v.size() != rows * cols) throw DomainError("unvec: size mismatch");
  MatX out(rows, cols);
  Eigen::Index idx = 0;
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = v(idx++);
  }
  return out;
}

/// M^k by repeated multiplication. Spectral methods are deliberately avoided:
/// the twist matrix is non-normal and nilpotent when the angular rate is zero.
template <typename Derived>
[[nodiscard]] auto matrix_power(const Eigen::MatrixBase<Derived>& m, int k) {
  using Plain = typename Derived::PlainObject;
  if (m.rows() != m.cols()) throw DomainError("matrix_power: matrix must be square");
  if (k < 0) throw DomainError("matrix_power: exponent must be non-negative");
  Plain out = Plain::Identity(m.rows(), m.cols());
  for (int i = 0; i < k; ++i) out = (out * m).eval();
  return out;
}

/// Rodrigues formula for exp(hat(w)).
[[nodiscard]] inline Mat3 rotation_exp(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 k = hat(w);
  double a;  // sin(theta)/theta
  double b;  // (1 - cos(theta))/theta^2
  if (theta2 < 1e-12) {
    a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
    b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * k + b * k * k;
}

[[nodiscard]] inline double orthogonality_residual(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).norm();
}

[[nodiscard]] inline bool is_rotation(const Mat3& r, double tol = kRotationTolerance) {
  return r.allFinite() && orthogonality_residual(r) <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

/// Nearest rotation in the Frobenius sense (polar decomposition via SVD).
/// Throws if the input is rank-deficient or reflection-dominated.
[[nodiscard]] inline Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  if (!m.allFinite() || s(2) <= 1e-9 * std::max(1.0, s(0))) {
    throw DomainError("nearest_rotation: matrix is singular");
  }
  Mat3 u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) {
    if (m.determinant() < 0.0) throw DomainError("nearest_rotation: reflection");
    u.col(2) *= -1.0;
  }
  return u * v.transpose();
}

/// Closest special-orthogonal matrix to any finite input, flipping the
/// weakest singular direction when the polar factor would be a reflection.
/// Used on diverging lifted states where strict projection has no answer.
[[nodiscard]] inline Mat3 project_to_rotation(const Mat3& m) {
  if (!m.allFinite()) throw DomainError("project_to_rotation: non-finite matrix");
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  if ((u * svd.matrixV().transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * svd.matrixV().transpose();
}

struct EulerZYX {
  double roll = 0.0;   // phi, about x
  double pitch = 0.0;  // theta, about y
  double yaw = 0.0;    // psi, about z
  bool gimbal_lock = false;

  [[nodiscard]] Vec3 as_vector() const { return {roll, pitch, yaw}; }
};

[[nodiscard]] inline Mat3 rot_x(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix();
}
[[nodiscard]] inline Mat3 rot_y(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix();
}
[[nodiscard]] inline Mat3 rot_z(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix();
}

/// Yaw-pitch-roll angles with R = Rz(yaw) * Ry(pitch) * Rx(roll).
/// Near |pitch| = pi/2 the yaw is set to zero and gimbal_lock is raised.
[[nodiscard]] inline EulerZYX euler_zyx(const Mat3& r) {
  EulerZYX e;
  const double s = std::clamp(-r(2, 0), -1.0, 1.0);
  e.pitch = std::asin(s);
  if (std::abs(std::abs(e.pitch) - std::numbers::pi / 2.0) < 1e-6) {
    e.gimbal_lock = true;
    e.yaw = 0.0;
    // yaw := 0 leaves R = Ry(pitch) Rx(roll), whose middle row holds roll alone
    e.roll = std::atan2(-r(1, 2), r(1, 1));
    return e;
  }
  e.roll = std::atan2(r(2, 1), r(2, 2));
  e.yaw = std::atan2(r(1, 0), r(0, 0));
  return e;
}

/// Homogeneous pose h = [R p; 0 1].
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 position = Vec3::Zero();

  [[nodiscard]] Mat4 matrix() const {
    Mat4 h = Mat4::Identity();
    h.topLeftCorner<3, 3>() = rotation;
    h.topRightCorner<3, 1>() = position;
    return h;
  }
};

/// Twist matrix S = [hat(w) v; 0 0].
[[nodiscard]] inline Mat4 twist_matrix(const Vec3& w, const Vec3& v) {
  Mat4 s = Mat4::Zero();
  s.topLeftCorner<3, 3>() = hat(w);
  s.topRightCorner<3, 1>() = v;
  return s;
}

}  // namespace koopquad
