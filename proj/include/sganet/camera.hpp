// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <optional>

#include <json.hpp>

#include "sganet/common.hpp"

namespace sganet {

// Pinhole camera, world-to-camera extrinsics, OpenCV axis convention
// (x right, y down, z forward). Pixel (x, y) covers [x, x+1) x [y, y+1).
struct CameraModel {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  // Throws DataError when the rotation is not a proper rotation or the focal lengths are not positive.
  void validate() const;

  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation * world + translation; }
  Eigen::Vector3d to_world(const Eigen::Vector3d& cam) const { return rotation.transpose() * (cam - translation); }

  // Pixel coordinates and camera-frame depth, or nullopt behind the camera.
  std::optional<Eigen::Vector3d> project(const Eigen::Vector3d& world) const;

  // World point at camera-frame depth `z` along the ray through continuous pixel (u, v).
  Eigen::Vector3d unproject(double u, double v, double z) const;

  // Unit world-space direction of the ray through continuous pixel (u, v).
  Eigen::Vector3d ray_direction(double u, double v) const;

  static CameraModel look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                             double fx, double fy, double cx, double cy);
};

nlohmann::json to_json(const CameraModel& cam);
CameraModel camera_from_json(const nlohmann::json& j);

}  // namespace sganet
