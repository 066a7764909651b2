// SPDX-License-Identifier: Apache-2.0
#include "sganet/camera.hpp"

#include <Eigen/Geometry>
#include <cmath>

namespace sganet {

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw DataError("camera focal lengths must be positive");
  const double orth = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(orth <= 1e-6) || std::abs(rotation.determinant() - 1.0) > 1e-6) {
    throw DataError("camera rotation is not orthonormal with determinant +1");
  }
  if (!translation.allFinite()) throw DataError("camera translation is not finite");
}

std::optional<Eigen::Vector3d> CameraModel::project(const Eigen::Vector3d& world) const {
  const Eigen::Vector3d c = to_camera(world);
  if (c.z() <= 0.0) return std::nullopt;
  return Eigen::Vector3d(fx * c.x() / c.z() + cx, fy * c.y() / c.z() + cy, c.z());
}

Eigen::Vector3d CameraModel::unproject(double u, double v, double z) const {
  return to_world(Eigen::Vector3d((u - cx) / fx * z, (v - cy) / fy * z, z));
}

Eigen::Vector3d CameraModel::ray_direction(double u, double v) const {
  const Eigen::Vector3d d((u - cx) / fx, (v - cy) / fy, 1.0);
  return (rotation.transpose() * d).normalized();
}

CameraModel CameraModel::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                 const Eigen::Vector3d& up, double fx, double fy, double cx, double cy) {
  const Eigen::Vector3d forward = target - eye;
  if (forward.norm() < 1e-12) throw DataError("degenerate camera: look-at point equals eye");
  const Eigen::Vector3d z = forward.normalized();
  Eigen::Vector3d x = z.cross(up);
  if (x.norm() < 1e-12) throw DataError("degenerate camera: up vector parallel to viewing direction");
  x.normalize();
  // Image y points down, so the camera y axis is z x x.
  const Eigen::Vector3d y = z.cross(x);
  CameraModel cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.rotation.row(0) = x.transpose();
  cam.rotation.row(1) = y.transpose();
  cam.rotation.row(2) = z.transpose();
  cam.translation = -cam.rotation * eye;
  return cam;
}

nlohmann::json to_json(const CameraModel& cam) {
  nlohmann::json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  std::vector<double> r;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r.push_back(cam.rotation(i, k));
  j["rotation"] = r;
  j["translation"] = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
  return j;
}

CameraModel camera_from_json(const nlohmann::json& j) {
  CameraModel cam;
  try {
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    const auto r = j.at("rotation").get<std::vector<double>>();
    const auto t = j.at("translation").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3) throw DataError("camera rotation needs 9 numbers, translation 3");
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) cam.rotation(i, k) = r[static_cast<std::size_t>(3 * i + k)];
    cam.translation = Eigen::Vector3d(t[0], t[1], t[2]);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("camera JSON: ") + e.what());
  }
  cam.validate();
  return cam;
}

}  // namespace sganet
