#include "ogs/geom.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

namespace ogs {

namespace {

constexpr double kShC1 = 0.4886025119029199;
constexpr double kShC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525251999, -1.0925484305920792,
                            0.5462742152960396};
constexpr double kShC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                            -0.4570457994644658, 1.445305721320277, -0.5900435899266435};

}  // namespace

UnitQuaternion UnitQuaternion::from_axis_angle(const Vec3& axis, double angle) {
    const Vec3 a = axis.normalized();
    const double s = std::sin(0.5 * angle);
    return {std::cos(0.5 * angle), a.x() * s, a.y() * s, a.z() * s};
}

double UnitQuaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

UnitQuaternion UnitQuaternion::normalized() const {
    const double n = norm();
    if (n == 0.0) {
        return identity();
    }
    return {w / n, x / n, y / n, z / n};
}

UnitQuaternion UnitQuaternion::operator*(const UnitQuaternion& r) const {
    return {w * r.w - x * r.x - y * r.y - z * r.z, w * r.x + x * r.w + y * r.z - z * r.y,
            w * r.y - x * r.z + y * r.w + z * r.x, w * r.z + x * r.y - y * r.x + z * r.w};
}

Mat3 Pose::rotation_matrix() const { return quat_to_rotmat(rotation); }

Vec3 Pose::apply(const Vec3& p) const { return rotation_matrix() * p + translation; }

Pose Pose::inverse() const {
    const UnitQuaternion inv = rotation.normalized().conjugate();
    return {inv, -(quat_to_rotmat(inv) * translation)};
}

Pose Pose::compose(const Pose& rhs) const {
    return {(rotation.normalized() * rhs.rotation.normalized()).normalized(), apply(rhs.translation)};
}

Mat4 Pose::matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation_matrix();
    m.topRightCorner<3, 1>() = translation;
    return m;
}

Mat3 quat_to_rotmat(const UnitQuaternion& q_in) {
    const UnitQuaternion q = q_in.normalized();
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),  //
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),  //
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

UnitQuaternion rotmat_to_quat(const Mat3& r) {
    const Eigen::Quaterniond q(r);
    UnitQuaternion out{q.w(), q.x(), q.y(), q.z()};
    if (out.w < 0.0) {
        out = -out;
    }
    return out.normalized();
}

UnitQuaternion axis_angle_to_quat(const Vec3& omega) {
    const double theta2 = omega.squaredNorm();
    const double theta = std::sqrt(theta2);
    // sin(theta/2)/theta, with its series near zero
    const double a = theta < 1e-4 ? 0.5 - theta2 / 48.0 : std::sin(0.5 * theta) / theta;
    return {std::cos(0.5 * theta), a * omega.x(), a * omega.y(), a * omega.z()};
}

Mat3 build_covariance(const Vec3& scale, const UnitQuaternion& q) {
    if (!(scale.x() > 0.0 && scale.y() > 0.0 && scale.z() > 0.0)) {
        throw ValidationError("build_covariance: scale components must be positive");
    }
    const Mat3 m = quat_to_rotmat(q) * scale.asDiagonal();
    Mat3 cov = m * m.transpose();
    // exact symmetry
    cov = 0.5 * (cov + cov.transpose()).eval();
    return cov;
}

double eval_gaussian(const Vec3& x, const Vec3& mean, const Mat3& covariance) {
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(covariance, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > 1e12) {
        throw DegenerateCovarianceError("eval_gaussian: covariance is singular or ill-conditioned");
    }
    const Vec3 d = x - mean;
    const double power = d.dot(covariance.ldlt().solve(d));
    return std::exp(-0.5 * power);
}

// ---------------------------------------------------------------------------

ShCoefficients::ShCoefficients(int degree_)
    : degree(degree_), coeffs(static_cast<size_t>(sh_coeff_count(degree_)), Vec3::Zero()) {
    if (degree_ < 0 || degree_ > kMaxShDegree) {
        throw ValidationError("ShCoefficients: degree must be in [0, 3]");
    }
}

void sh_basis(int degree, const Vec3& dir, std::span<double> out) {
    const double x = dir.x(), y = dir.y(), z = dir.z();
    out[0] = kShC0;
    if (degree < 1) {
        return;
    }
    out[1] = -kShC1 * y;
    out[2] = kShC1 * z;
    out[3] = -kShC1 * x;
    if (degree < 2) {
        return;
    }
    const double xx = x * x, yy = y * y, zz = z * z;
    out[4] = kShC2[0] * x * y;
    out[5] = kShC2[1] * y * z;
    out[6] = kShC2[2] * (2.0 * zz - xx - yy);
    out[7] = kShC2[3] * x * z;
    out[8] = kShC2[4] * (xx - yy);
    if (degree < 3) {
        return;
    }
    out[9] = kShC3[0] * y * (3.0 * xx - yy);
    out[10] = kShC3[1] * x * y * z;
    out[11] = kShC3[2] * y * (4.0 * zz - xx - yy);
    out[12] = kShC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = kShC3[4] * x * (4.0 * zz - xx - yy);
    out[14] = kShC3[5] * z * (xx - yy);
    out[15] = kShC3[6] * x * (xx - 3.0 * yy);
}

void sh_basis_with_grad(int degree, const Vec3& dir, std::span<double> out, std::span<Vec3> grad) {
    sh_basis(degree, dir, out);
    const double x = dir.x(), y = dir.y(), z = dir.z();
    grad[0].setZero();
    if (degree < 1) {
        return;
    }
    grad[1] = {0.0, -kShC1, 0.0};
    grad[2] = {0.0, 0.0, kShC1};
    grad[3] = {-kShC1, 0.0, 0.0};
    if (degree < 2) {
        return;
    }
    const double xx = x * x, yy = y * y, zz = z * z;
    grad[4] = {kShC2[0] * y, kShC2[0] * x, 0.0};
    grad[5] = {0.0, kShC2[1] * z, kShC2[1] * y};
    grad[6] = {-2.0 * kShC2[2] * x, -2.0 * kShC2[2] * y, 4.0 * kShC2[2] * z};
    grad[7] = {kShC2[3] * z, 0.0, kShC2[3] * x};
    grad[8] = {2.0 * kShC2[4] * x, -2.0 * kShC2[4] * y, 0.0};
    if (degree < 3) {
        return;
    }
    grad[9] = {6.0 * kShC3[0] * x * y, kShC3[0] * (3.0 * xx - 3.0 * yy), 0.0};
    grad[10] = {kShC3[1] * y * z, kShC3[1] * x * z, kShC3[1] * x * y};
    grad[11] = {-2.0 * kShC3[2] * x * y, kShC3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * kShC3[2] * y * z};
    grad[12] = {-6.0 * kShC3[3] * x * z, -6.0 * kShC3[3] * y * z, kShC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)};
    grad[13] = {kShC3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * kShC3[4] * x * y, 8.0 * kShC3[4] * x * z};
    grad[14] = {2.0 * kShC3[5] * x * z, -2.0 * kShC3[5] * y * z, kShC3[5] * (xx - yy)};
    grad[15] = {kShC3[6] * (3.0 * xx - 3.0 * yy), -6.0 * kShC3[6] * x * y, 0.0};
}

Vec3 eval_sh(const ShCoefficients& z, const Vec3& dir) {
    double basis[kMaxShCoeffs];
    sh_basis(z.degree, dir, basis);
    Vec3 c = Vec3::Zero();
    for (size_t i = 0; i < z.coeffs.size(); ++i) {
        c += basis[i] * z.coeffs[i];
    }
    return c;
}

FourierShCoefficients::FourierShCoefficients(int degree_, int k_)
    : degree(degree_), k(k_), coeffs(static_cast<size_t>(sh_coeff_count(degree_) * 3 * k_), 0.0) {
    if (k_ < 1) {
        throw ValidationError("FourierShCoefficients: k must be >= 1");
    }
    if (degree_ < 0 || degree_ > kMaxShDegree) {
        throw ValidationError("FourierShCoefficients: degree must be in [0, 3]");
    }
}

void fourier_basis(int k, double t_norm, std::span<double> out) {
    out[0] = 1.0;
    for (int i = 1; i < k; ++i) {
        const int harmonic = (i + 1) / 2;
        const double phase = 2.0 * std::numbers::pi * harmonic * t_norm;
        out[static_cast<size_t>(i)] = (i % 2 == 1) ? std::cos(phase) : std::sin(phase);
    }
}

std::vector<double> fourier_basis(int k, double t_norm) {
    std::vector<double> out(static_cast<size_t>(k));
    fourier_basis(k, t_norm, out);
    return out;
}

ShCoefficients fourier_sh_at_time(const FourierShCoefficients& f, double t_norm) {
    const std::vector<double> phi = fourier_basis(f.k, t_norm);
    ShCoefficients z(f.degree);
    for (int b = 0; b < sh_coeff_count(f.degree); ++b) {
        for (int c = 0; c < 3; ++c) {
            double v = 0.0;
            for (int j = 0; j < f.k; ++j) {
                v += f.at(b, c, j) * phi[static_cast<size_t>(j)];
            }
            z.coeffs[static_cast<size_t>(b)][c] = v;
        }
    }
    return z;
}

// ---------------------------------------------------------------------------

WorldPlacement transform_to_world(const Pose& pose, const Vec3& local_position, const UnitQuaternion& local_rotation,
                                  RotationComposition mode) {
    const UnitQuaternion rt = pose.rotation.normalized();
    const UnitQuaternion ro = local_rotation.normalized();
    WorldPlacement out;
    out.position = quat_to_rotmat(rt) * local_position + pose.translation;
    out.rotation = mode == RotationComposition::Rigid ? rt * ro : ro * rt.conjugate();
    return out;
}

Pose apply_pose_delta(const Pose& pose, const UnitQuaternion& delta_rotation, const Vec3& delta_translation) {
    return {pose.rotation.normalized() * delta_rotation.normalized(), pose.translation + delta_translation};
}

// ---------------------------------------------------------------------------

Mat3 rotmat_from_raw(const Vec4& q_raw) { return quat_to_rotmat(UnitQuaternion::from_vector(q_raw)); }

Vec4 rotmat_backward(const Vec4& q_raw, const Mat3& g) {
    const double n = q_raw.norm();
    const Vec4 q = q_raw / n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 dq;
    dq[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    dq[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                   w * g(2, 1) - 2.0 * x * g(2, 2));
    dq[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                   z * g(2, 1) - 2.0 * y * g(2, 2));
    dq[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) + y * g(1, 2) +
                   x * g(2, 0) + y * g(2, 1));
    // through the normalization
    return (dq - q * q.dot(dq)) / n;
}

Vec3 axis_angle_backward(const Vec3& omega, const Vec4& grad_q) {
    const double theta2 = omega.squaredNorm();
    const double theta = std::sqrt(theta2);
    double a = 0.0;   // sin(theta/2)/theta
    double da = 0.0;  // (da/dtheta)/theta
    if (theta < 1e-4) {
        a = 0.5 - theta2 / 48.0;
        da = -1.0 / 24.0 + theta2 / 960.0;
    } else {
        const double s = std::sin(0.5 * theta);
        const double c = std::cos(0.5 * theta);
        a = s / theta;
        da = (0.5 * theta * c - s) / (theta2 * theta);
    }
    const Vec3 gv = grad_q.tail<3>();
    // q_w = cos(theta/2): dq_w/domega = -a/2 * omega
    // q_v = a omega:      dq_v/domega = a I + da * omega omega^T
    return -0.5 * a * grad_q[0] * omega + a * gv + da * omega * omega.dot(gv);
}

CovarianceGrad covariance_backward(const Mat3& rotation, const Vec3& log_scale, const Mat3& grad_cov) {
    const Vec3 s = log_scale.array().exp();
    const Mat3 m = rotation * s.asDiagonal();
    const Mat3 grad_m = (grad_cov + grad_cov.transpose()) * m;
    CovarianceGrad out;
    out.rotation = grad_m * s.asDiagonal();
    for (int k = 0; k < 3; ++k) {
        out.log_scale[k] = rotation.col(k).dot(grad_m.col(k)) * s[k];
    }
    return out;
}

}  // namespace ogs
