// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "sganet/camera.hpp"

using namespace sganet;

namespace {

CameraModel ring_camera(double angle) {
  const Eigen::Vector3d eye(3 * std::cos(angle), 3 * std::sin(angle), 0.5);
  return CameraModel::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ(), 100, 110, 64, 60);
}

}  // namespace

TEST_CASE("look_at produces a proper rotation and puts the target on the optical axis") {
  const auto cam = ring_camera(0.7);
  CHECK_NOTHROW(cam.validate());
  const auto uvz = cam.project(Eigen::Vector3d::Zero());
  REQUIRE(uvz);
  CHECK((*uvz)(0) == doctest::Approx(64));
  CHECK((*uvz)(1) == doctest::Approx(60));
  CHECK((*uvz)(2) == doctest::Approx(std::sqrt(9.0 + 0.25)));
  CHECK((cam.center() - Eigen::Vector3d(3 * std::cos(0.7), 3 * std::sin(0.7), 0.5)).norm() < 1e-12);
}

TEST_CASE("world up projects upwards in the image (y down)") {
  const auto cam = ring_camera(0.0);
  const auto top = cam.project(Eigen::Vector3d(0, 0, 0.5));
  const auto bottom = cam.project(Eigen::Vector3d(0, 0, -0.5));
  REQUIRE(top);
  REQUIRE(bottom);
  CHECK((*top)(1) < (*bottom)(1));
}

TEST_CASE("unproject inverts project") {
  const auto cam = ring_camera(2.1);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Vector3d p(u(rng), u(rng), u(rng));
    const auto uvz = cam.project(p);
    REQUIRE(uvz);
    CHECK((cam.unproject((*uvz)(0), (*uvz)(1), (*uvz)(2)) - p).norm() < 1e-10);
  }
}

TEST_CASE("points behind the camera do not project") {
  const auto cam = ring_camera(0.0);
  CHECK_FALSE(cam.project(Eigen::Vector3d(6, 0, 0.5)).has_value());
}

TEST_CASE("ray direction is unit length and passes through unprojected points") {
  const auto cam = ring_camera(1.0);
  const auto d = cam.ray_direction(10.5, 20.5);
  CHECK(d.norm() == doctest::Approx(1.0));
  const auto p = cam.unproject(10.5, 20.5, 2.0);
  CHECK(((p - cam.center()).normalized() - d).norm() < 1e-12);
}

TEST_CASE("degenerate and invalid cameras are rejected") {
  CHECK_THROWS_AS(CameraModel::look_at(Eigen::Vector3d::Ones(), Eigen::Vector3d::Ones(), Eigen::Vector3d::UnitZ(), 1,
                                       1, 0, 0),
                  DataError);
  CameraModel bad;
  bad.fx = 0;
  CHECK_THROWS_AS(bad.validate(), DataError);
  CameraModel reflect;
  reflect.rotation(0, 0) = -1;  // det = -1
  CHECK_THROWS_AS(reflect.validate(), DataError);
}

TEST_CASE("camera JSON round-trips and validates") {
  const auto cam = ring_camera(0.3);
  const auto back = camera_from_json(to_json(cam));
  CHECK((back.rotation - cam.rotation).norm() < 1e-15);
  CHECK((back.translation - cam.translation).norm() < 1e-15);
  CHECK(back.fx == cam.fx);
  auto j = to_json(cam);
  j["rotation"] = {1, 0, 0, 0, 1, 0, 0, 0};
  CHECK_THROWS_AS(camera_from_json(j), DataError);
  CHECK_THROWS_AS(camera_from_json(nlohmann::json{{"fx", 1}}), DataError);
}
