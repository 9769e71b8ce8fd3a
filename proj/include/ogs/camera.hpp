#pragma once

#include "ogs/geom.hpp"

namespace ogs {

/// Pinhole camera, zero skew, OpenCV axes (x right, y down, z forward).
/// Pixel coordinates address pixel centers: pixel (u, v) covers
/// [u - 0.5, u + 0.5) x [v - 0.5, v + 0.5).
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    Pose world_to_camera;
    int width = 0;
    int height = 0;
    double near = 0.01;
    double far = 1000.0;

    /// Throws ValidationError when intrinsics or clip planes are invalid.
    void validate() const;

    Mat3 intrinsics() const;
    Mat3 rotation() const { return world_to_camera.rotation_matrix(); }
    Vec3 to_camera(const Vec3& world) const { return world_to_camera.apply(world); }
    /// Camera center in world coordinates.
    Vec3 center() const { return world_to_camera.inverse().translation; }
    /// Perspective projection of a camera-frame point (z > 0).
    Vec2 project(const Vec3& cam) const { return {fx * cam.x() / cam.z() + cx, fy * cam.y() / cam.z() + cy}; }
};

inline void Camera::validate() const {
    if (!(fx > 0.0 && fy > 0.0)) {
        throw ValidationError("camera: focal lengths must be positive");
    }
    if (!(near > 0.0 && near < far)) {
        throw ValidationError("camera: require 0 < near < far");
    }
    if (width <= 0 || height <= 0) {
        throw ValidationError("camera: image size must be positive");
    }
}

inline Mat3 Camera::intrinsics() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
}

}  // namespace ogs
