#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ogs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input failed validation before any work was done.
class ValidationError : public Error {
public:
    using Error::Error;
};

class DegenerateCovarianceError : public Error {
public:
    using Error::Error;
};

/// Hamilton quaternion (w, x, y, z). Learnable rotations are stored raw and
/// normalized on use, so instances are not required to be unit length.
struct UnitQuaternion {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    static UnitQuaternion identity() { return {}; }
    static UnitQuaternion from_vector(const Vec4& v) { return {v[0], v[1], v[2], v[3]}; }
    /// Rotation of `angle` radians about the unit `axis`.
    static UnitQuaternion from_axis_angle(const Vec3& axis, double angle);

    Vec4 as_vector() const { return {w, x, y, z}; }
    double norm() const;
    UnitQuaternion normalized() const;
    UnitQuaternion conjugate() const { return {w, -x, -y, -z}; }
    UnitQuaternion operator*(const UnitQuaternion& rhs) const;
    UnitQuaternion operator-() const { return {-w, -x, -y, -z}; }
};

/// Rigid transform x -> R x + t.
struct Pose {
    UnitQuaternion rotation;
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return {}; }
    Mat3 rotation_matrix() const;
    Vec3 apply(const Vec3& p) const;
    Pose inverse() const;
    /// (*this) after rhs: x -> this(rhs(x)).
    Pose compose(const Pose& rhs) const;
    Mat4 matrix() const;
};

Mat3 quat_to_rotmat(const UnitQuaternion& q);
UnitQuaternion rotmat_to_quat(const Mat3& r);

/// Axis-angle 3-vector (direction = axis, norm = angle) to a unit quaternion.
UnitQuaternion axis_angle_to_quat(const Vec3& omega);

/// Sigma = R S S^T R^T with S = diag(scale). Throws ValidationError on a
/// non-positive scale component.
Mat3 build_covariance(const Vec3& scale, const UnitQuaternion& q);

/// Unnormalized Gaussian exp(-1/2 d^T Sigma^-1 d).
double eval_gaussian(const Vec3& x, const Vec3& mean, const Mat3& covariance);

// ---------------------------------------------------------------------------
// Spherical harmonics

inline constexpr int kMaxShDegree = 3;
inline constexpr int kMaxShCoeffs = (kMaxShDegree + 1) * (kMaxShDegree + 1);
inline constexpr double kShC0 = 0.28209479177387814;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Real SH coefficients, RGB per basis function. Basis index for (l, m) is
/// l*l + l + m.
struct ShCoefficients {
    int degree = 0;
    std::vector<Vec3> coeffs;

    explicit ShCoefficients(int degree_ = 0);
    Vec3& at(int l, int m) { return coeffs[static_cast<size_t>(l * l + l + m)]; }
    const Vec3& at(int l, int m) const { return coeffs[static_cast<size_t>(l * l + l + m)]; }
};

/// Evaluates the real SH basis up to `degree` at unit direction `dir`.
/// `out` must hold sh_coeff_count(degree) values.
void sh_basis(int degree, const Vec3& dir, std::span<double> out);

/// Basis values plus their partial derivatives with respect to the (already
/// normalized) direction components.
void sh_basis_with_grad(int degree, const Vec3& dir, std::span<double> out, std::span<Vec3> grad);

/// Pre-activation color; the renderer adds 0.5 and clamps.
Vec3 eval_sh(const ShCoefficients& z, const Vec3& dir);

/// Each SH coefficient channel is expanded over time with k real Fourier
/// terms: DC first, then interleaved (cos, sin) pairs of increasing harmonic.
/// Layout: coeffs[(basis * 3 + channel) * k + j].
struct FourierShCoefficients {
    int degree = 0;
    int k = 1;
    std::vector<double> coeffs;

    FourierShCoefficients(int degree_, int k_);
    double& at(int basis, int channel, int j) {
        return coeffs[static_cast<size_t>((basis * 3 + channel) * k + j)];
    }
    double at(int basis, int channel, int j) const {
        return coeffs[static_cast<size_t>((basis * 3 + channel) * k + j)];
    }
};

/// Values of the k Fourier basis functions at normalized time t.
void fourier_basis(int k, double t_norm, std::span<double> out);
std::vector<double> fourier_basis(int k, double t_norm);

ShCoefficients fourier_sh_at_time(const FourierShCoefficients& f, double t_norm);

// ---------------------------------------------------------------------------
// Vehicle frame to world

/// How an object-frame rotation combines with the per-frame vehicle rotation.
/// `Rigid` is R_w = R_t R_o, the composition consistent with mu_w = R_t mu_o + T_t.
/// `Literal` is R_w = R_o R_t^T, kept for comparison runs.
enum class RotationComposition { Rigid, Literal };

struct WorldPlacement {
    Vec3 position;
    UnitQuaternion rotation;
};

WorldPlacement transform_to_world(const Pose& pose, const Vec3& local_position,
                                  const UnitQuaternion& local_rotation,
                                  RotationComposition mode = RotationComposition::Rigid);

/// R' = R dR, T' = T + dT.
Pose apply_pose_delta(const Pose& pose, const UnitQuaternion& delta_rotation, const Vec3& delta_translation);

// ---------------------------------------------------------------------------
// Derivatives used by the backward pass

/// Rotation matrix of a raw (possibly unnormalized) quaternion vector.
Mat3 rotmat_from_raw(const Vec4& q_raw);

/// dL/dq_raw given dL/dR for R = quat_to_rotmat(normalize(q_raw)).
Vec4 rotmat_backward(const Vec4& q_raw, const Mat3& grad_r);

/// dL/domega given dL/dq for q = axis_angle_to_quat(omega).
Vec3 axis_angle_backward(const Vec3& omega, const Vec4& grad_q);

/// Gradients of L through Sigma = M M^T, M = R diag(s), s = exp(log_scale).
/// `grad_cov` is the full-matrix gradient dL/dSigma (symmetric).
struct CovarianceGrad {
    Mat3 rotation;   // dL/dR
    Vec3 log_scale;  // dL/dlog_scale
};
CovarianceGrad covariance_backward(const Mat3& rotation, const Vec3& log_scale, const Mat3& grad_cov);

}  // namespace ogs
