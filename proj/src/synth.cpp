// SPDX-License-Identifier: Apache-2.0
#include "sganet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

namespace sganet::synth {

namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kAmbient = 0.35;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Portable uniform [0,1) stream; std distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {}
  double uniform() {
    state_ = splitmix64(state_);
    return static_cast<double>(state_ >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::uint64_t state_;
};

double lattice(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(x) * 0x8da6b343ull ^
                                                 static_cast<std::uint64_t>(y) * 0xd8163841ull ^
                                                 static_cast<std::uint64_t>(z) * 0xcb1ab31full));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

// Trilinear value noise in [0, 1).
double value_noise(const Eigen::Vector3d& p, std::uint64_t seed) {
  const Eigen::Vector3d f = p.array().floor();
  const auto ix = static_cast<std::int64_t>(f.x());
  const auto iy = static_cast<std::int64_t>(f.y());
  const auto iz = static_cast<std::int64_t>(f.z());
  const double tx = smooth(p.x() - f.x()), ty = smooth(p.y() - f.y()), tz = smooth(p.z() - f.z());
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
        acc += w * lattice(ix + dx, iy + dy, iz + dz, seed);
      }
  return acc;
}

struct Interval {
  double t0 = -kInf, t1 = kInf;
  Eigen::Vector3d n0 = Eigen::Vector3d::Zero(), n1 = Eigen::Vector3d::Zero();

  bool empty() const { return !(t0 <= t1); }
};

void clip(Interval& iv, double a, double b, const Eigen::Vector3d& na, const Eigen::Vector3d& nb) {
  if (a > iv.t0) {
    iv.t0 = a;
    iv.n0 = na;
  }
  if (b < iv.t1) {
    iv.t1 = b;
    iv.n1 = nb;
  }
}

// Slab between planes axis.x = lo and axis.x = hi along a unit axis.
bool clip_slab(Interval& iv, const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& axis,
               double lo, double hi) {
  const double od = axis.dot(o), dd = axis.dot(d);
  if (std::abs(dd) < 1e-15) {
    if (od < lo || od > hi) return false;
    return true;
  }
  double ta = (lo - od) / dd, tb = (hi - od) / dd;
  Eigen::Vector3d na = -axis, nb = axis;
  if (ta > tb) {
    std::swap(ta, tb);
    std::swap(na, nb);
  }
  clip(iv, ta, tb, na, nb);
  return !iv.empty();
}

std::optional<Interval> sphere_interval(const Eigen::Vector3d& center, double r, const Eigen::Vector3d& o,
                                        const Eigen::Vector3d& d) {
  const Eigen::Vector3d oc = o - center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - r * r;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  Interval iv;
  iv.t0 = -b - s;
  iv.t1 = -b + s;
  iv.n0 = (oc + iv.t0 * d) / r;
  iv.n1 = (oc + iv.t1 * d) / r;
  return iv;
}

std::optional<Interval> shape_interval(const ShapeSpec& shape, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  switch (shape.kind) {
    case ShapeKind::kSphere:
      return sphere_interval(Eigen::Vector3d::Zero(), shape.size.x(), o, d);
    case ShapeKind::kCylinder: {
      const double r = shape.size.x(), h = shape.size.y();
      Interval iv;
      const double a = d.x() * d.x() + d.y() * d.y();
      const double b = o.x() * d.x() + o.y() * d.y();
      const double c = o.x() * o.x() + o.y() * o.y() - r * r;
      if (a < 1e-15) {
        if (c > 0.0) return std::nullopt;
      } else {
        const double disc = b * b - a * c;
        if (disc < 0.0) return std::nullopt;
        const double s = std::sqrt(disc);
        const double ta = (-b - s) / a, tb = (-b + s) / a;
        const Eigen::Vector3d pa = o + ta * d, pb = o + tb * d;
        clip(iv, ta, tb, Eigen::Vector3d(pa.x(), pa.y(), 0.0) / r, Eigen::Vector3d(pb.x(), pb.y(), 0.0) / r);
      }
      if (!clip_slab(iv, o, d, Eigen::Vector3d::UnitZ(), -h, h)) return std::nullopt;
      return iv;
    }
    case ShapeKind::kBox: {
      Interval iv;
      for (int k = 0; k < 3; ++k) {
        const Eigen::Vector3d axis = Eigen::Vector3d::Unit(k);
        if (!clip_slab(iv, o, d, axis, -shape.size[k], shape.size[k])) return std::nullopt;
      }
      return iv;
    }
  }
  return std::nullopt;
}

// Sphere carving (dent) or extending (bump) the base surface; footprint radius
// approximately defect.radius on a locally flat surface.
struct DefectSphere {
  Eigen::Vector3d center;
  double radius;
};

DefectSphere defect_sphere(const ShapeSpec& shape, const DefectSpec& defect) {
  const auto [s, n] = surface_point(shape, defect.azimuth, defect.z);
  const double m = std::abs(defect.magnitude);
  const double rho = (defect.radius * defect.radius + m * m) / (2.0 * m);
  if (defect.kind == DefectKind::kGeometricBump) return {s + n * (m - rho), rho};
  return {s + n * (rho - m), rho};
}

double albedo(const SceneSpec& scene, const std::optional<DefectSpec>& defect, const Eigen::Vector3d& p,
              std::uint64_t jitter_seed) {
  const auto& tex = scene.texture;
  double a = 0.5 + tex.contrast * (2.0 * value_noise(p * tex.frequency, tex.seed) - 1.0);
  a += 0.5 * tex.contrast * (2.0 * value_noise(p * (2.0 * tex.frequency), tex.seed + 1) - 1.0);
  if (tex.jitter > 0.0) a += tex.jitter * (2.0 * value_noise(p * (4.0 * tex.frequency), jitter_seed) - 1.0);
  if (defect && defect->kind == DefectKind::kTextureBlotch) {
    const auto s = surface_point(scene.shape, defect->azimuth, defect->z).first;
    if ((p - s).norm() <= defect->radius) a += defect->magnitude;
  }
  return std::clamp(a, 0.0, 1.0);
}

Eigen::Vector3d light_direction() { return Eigen::Vector3d(0.4, 0.3, 1.0).normalized(); }

}  // namespace

double ShapeSpec::bounding_radius() const {
  switch (kind) {
    case ShapeKind::kSphere: return size.x();
    case ShapeKind::kCylinder: return std::hypot(size.x(), size.y());
    case ShapeKind::kBox: return size.norm();
  }
  return size.norm();
}

void SceneSpec::validate() const {
  if ((shape.size.array() <= 0.0).any()) throw UsageError("shape sizes must be positive");
  if (ring.num_views < 3) throw UsageError("scene needs at least 3 views");
  const Eigen::Vector3d eye0 = camera(1).center();
  if (!(ring.radius > shape.bounding_radius()) || eye0.norm() <= shape.bounding_radius()) {
    throw UsageError("camera ring must lie outside the shape's bounding sphere");
  }
  if (height < 4 || width < 4) throw UsageError("resolution too small");
  if (!(ring.fov_deg > 0.0 && ring.fov_deg < 179.0)) throw UsageError("fov must be in (0, 179) degrees");
}

CameraModel SceneSpec::camera(int view_index) const {
  const double theta = 2.0 * std::numbers::pi * (view_index - 1) / ring.num_views;
  const Eigen::Vector3d eye =
      ring.look_at + Eigen::Vector3d(ring.radius * std::cos(theta), ring.radius * std::sin(theta), ring.height);
  const double f = 0.5 * width / std::tan(0.5 * ring.fov_deg * std::numbers::pi / 180.0);
  return CameraModel::look_at(eye, ring.look_at, Eigen::Vector3d::UnitZ(), f, f, 0.5 * width, 0.5 * height);
}

void DefectSpec::validate() const {
  if (!(radius > 0.0)) throw UsageError("defect radius must be positive");
  if (magnitude == 0.0 || !std::isfinite(magnitude)) throw UsageError("defect magnitude must be nonzero");
}

std::pair<Eigen::Vector3d, Eigen::Vector3d> surface_point(const ShapeSpec& shape, double azimuth, double z) {
  const Eigen::Vector3d o(0.0, 0.0, z);
  const Eigen::Vector3d d(std::cos(azimuth), std::sin(azimuth), 0.0);
  const auto iv = shape_interval(shape, o, d);
  if (!iv || iv->t1 <= 0.0) throw UsageError("defect location lies outside the shape");
  return {o + iv->t1 * d, iv->n1};
}

std::optional<Hit> cast_ray(const SceneSpec& scene, const std::optional<DefectSpec>& defect,
                            const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  const auto base = shape_interval(scene.shape, origin, dir);
  const bool geometric = defect && defect->kind != DefectKind::kTextureBlotch;
  std::optional<Interval> extra;
  if (geometric) {
    const auto ds = defect_sphere(scene.shape, *defect);
    extra = sphere_interval(ds.center, ds.radius, origin, dir);
  }
  auto make_hit = [&](double t, const Eigen::Vector3d& n, bool on_defect) {
    return Hit{t, origin + t * dir, n.normalized(), on_defect};
  };
  const bool base_hit = base && base->t0 > 0.0 && !base->empty();
  const bool extra_hit = extra && extra->t0 > 0.0;
  if (!geometric || !extra) {
    if (!base_hit) return std::nullopt;
    return make_hit(base->t0, base->n0, false);
  }
  if (defect->kind == DefectKind::kGeometricBump) {
    if (base_hit && (!extra_hit || base->t0 <= extra->t0)) return make_hit(base->t0, base->n0, false);
    if (extra_hit) return make_hit(extra->t0, extra->n0, true);
    return std::nullopt;
  }
  // Dent: base minus the carving sphere.
  if (!base_hit) return std::nullopt;
  if (base->t0 < extra->t0 || base->t0 > extra->t1) return make_hit(base->t0, base->n0, false);
  if (extra->t1 < base->t1) return make_hit(extra->t1, -extra->n1, true);
  return std::nullopt;
}

ViewObservation render_view(const SceneSpec& scene, const std::optional<DefectSpec>& defect, int view_index,
                            std::uint64_t texture_jitter_seed) {
  if (view_index < 1 || view_index > scene.ring.num_views) throw UsageError("view index out of range");
  ViewObservation obs;
  obs.view_index = view_index;
  obs.camera = scene.camera(view_index);
  const int h = scene.height, w = scene.width;
  obs.depth = Matrixf::Zero(h, w);
  Matrixf image = Matrixf::Zero(h, w);
  Matrixf mask = Matrixf::Zero(h, w);
  const Eigen::Vector3d eye = obs.camera.center();
  const Eigen::Vector3d forward = obs.camera.rotation.row(2).transpose();
  const Eigen::Vector3d light = light_direction();
  std::optional<Eigen::Vector3d> blotch_center;
  if (defect && defect->kind == DefectKind::kTextureBlotch) {
    blotch_center = surface_point(scene.shape, defect->azimuth, defect->z).first;
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector3d dir = obs.camera.ray_direction(x + 0.5, y + 0.5);
      const auto hit = cast_ray(scene, defect, eye, dir);
      if (!hit) continue;
      obs.depth(y, x) = static_cast<float>(hit->t * dir.dot(forward));
      const double shade = kAmbient + (1.0 - kAmbient) * std::max(0.0, hit->normal.dot(light));
      image(y, x) = static_cast<float>(std::clamp(albedo(scene, defect, hit->point, texture_jitter_seed) * shade,
                                                  0.0, 1.0));
      const bool in_defect =
          hit->on_defect || (blotch_center && (hit->point - *blotch_center).norm() <= defect->radius);
      if (in_defect) mask(y, x) = 1.0f;
    }
  }
  obs.image = from_image_matrix(image);
  obs.gt_mask = std::move(mask);
  return obs;
}

ViewSet render_viewset(const SceneSpec& scene, const std::optional<DefectSpec>& defect, std::string sample_id,
                       Label label, std::uint64_t texture_jitter_seed) {
  ViewSet vs;
  vs.sample_id = std::move(sample_id);
  vs.label = label;
  for (int k = 1; k <= scene.ring.num_views; ++k) vs.views.push_back(render_view(scene, defect, k, texture_jitter_seed));
  return vs;
}

namespace {

// Largest number of defect-mask pixels seen in any single view.
int max_visible_pixels(const SceneSpec& scene, const DefectSpec& defect) {
  int best = 0;
  for (int k = 1; k <= scene.ring.num_views; ++k) {
    const auto cam = scene.camera(k);
    const Eigen::Vector3d eye = cam.center();
    int count = 0;
    for (int y = 0; y < scene.height; ++y)
      for (int x = 0; x < scene.width; ++x) {
        const auto hit = cast_ray(scene, defect, eye, cam.ray_direction(x + 0.5, y + 0.5));
        if (!hit) continue;
        if (defect.kind == DefectKind::kTextureBlotch) {
          const auto s = surface_point(scene.shape, defect.azimuth, defect.z).first;
          count += (hit->point - s).norm() <= defect.radius;
        } else {
          count += hit->on_defect;
        }
      }
    best = std::max(best, count);
  }
  return best;
}

double band_half_height(const ShapeSpec& shape) {
  switch (shape.kind) {
    case ShapeKind::kSphere: return 0.5 * shape.size.x();
    case ShapeKind::kCylinder: return 0.6 * shape.size.y();
    case ShapeKind::kBox: return 0.6 * shape.size.z();
  }
  return 0.0;
}

}  // namespace

DefectSpec place_defect(const SceneSpec& scene, DefectKind kind, double radius, double magnitude,
                        std::uint64_t seed) {
  Rng rng(seed);
  const double band = band_half_height(scene.shape);
  const int min_pixels = 4;
  for (int attempt = 0; attempt < 64; ++attempt) {
    DefectSpec d;
    d.kind = kind;
    d.radius = radius;
    d.magnitude = magnitude;
    d.seed = seed;
    d.azimuth = rng.uniform(0.0, 2.0 * std::numbers::pi);
    d.z = rng.uniform(-band, band);
    d.validate();
    if (max_visible_pixels(scene, d) >= min_pixels) return d;
  }
  throw DataError("could not place a visible defect; increase the defect radius");
}

void generate_dataset(const SceneSpec& scene, const DatasetOptions& options, const fs::path& out_dir) {
  scene.validate();
  if (options.n_normal < 1) throw UsageError("n_normal must be >= 1");
  if (options.n_anomalous < 0) throw UsageError("n_anomalous must be >= 0");
  const int n_test_normal = options.n_test_normal < 0 ? options.n_anomalous : options.n_test_normal;

  auto sample_seed = [&](int split, int k) {
    return splitmix64(options.seed * 1000003ull + static_cast<std::uint64_t>(split) * 7919ull +
                      static_cast<std::uint64_t>(k));
  };
  auto name = [](const char* prefix, int k) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%03d", prefix, k);
    return std::string(buf);
  };

  fs::create_directories(out_dir / "train");
  fs::create_directories(out_dir / "test");
  nlohmann::json manifest;
  manifest["category"] = options.category;
  manifest["scene"] = to_json(scene);
  manifest["seed"] = options.seed;
  manifest["train"] = nlohmann::json::array();
  manifest["test"] = nlohmann::json::array();

  for (int k = 0; k < options.n_normal; ++k) {
    auto vs = render_viewset(scene, std::nullopt, name("train", k), Label::kNormal, sample_seed(0, k));
    vs.category = options.category;
    save_viewset(out_dir / "train" / vs.sample_id, vs);
    manifest["train"].push_back({{"sample_id", vs.sample_id}, {"label", "normal"}});
  }
  constexpr DefectKind kCycle[] = {DefectKind::kTextureBlotch, DefectKind::kGeometricDent,
                                   DefectKind::kGeometricBump};
  int index = 0;
  for (int k = 0; k < n_test_normal + options.n_anomalous; ++k, ++index) {
    const bool anomalous = k >= n_test_normal;
    std::optional<DefectSpec> defect;
    nlohmann::json entry;
    if (anomalous) {
      const auto kind = kCycle[(k - n_test_normal) % 3];
      const double magnitude =
          kind == DefectKind::kTextureBlotch ? options.blotch_magnitude : options.geometric_magnitude;
      defect = place_defect(scene, kind, options.defect_radius, magnitude, sample_seed(2, k));
      entry["defect"] = to_json(*defect);
    }
    auto vs = render_viewset(scene, defect, name("test", index), anomalous ? Label::kAnomalous : Label::kNormal,
                             sample_seed(1, k));
    vs.category = options.category;
    save_viewset(out_dir / "test" / vs.sample_id, vs);
    entry["sample_id"] = vs.sample_id;
    entry["label"] = label_name(vs.label);
    manifest["test"].push_back(entry);
  }
  write_json(out_dir / "dataset.json", manifest);
}

std::string shape_kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kCylinder: return "cylinder";
    case ShapeKind::kBox: return "box";
  }
  return "sphere";
}

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "sphere") return ShapeKind::kSphere;
  if (name == "cylinder") return ShapeKind::kCylinder;
  if (name == "box") return ShapeKind::kBox;
  throw UsageError("unknown scene kind '" + name + "' (expected sphere, cylinder or box)");
}

std::string defect_kind_name(DefectKind kind) {
  switch (kind) {
    case DefectKind::kTextureBlotch: return "texture_blotch";
    case DefectKind::kGeometricDent: return "geometric_dent";
    case DefectKind::kGeometricBump: return "geometric_bump";
  }
  return "texture_blotch";
}

namespace {

DefectKind parse_defect_kind(const std::string& name) {
  if (name == "texture_blotch") return DefectKind::kTextureBlotch;
  if (name == "geometric_dent") return DefectKind::kGeometricDent;
  if (name == "geometric_bump") return DefectKind::kGeometricBump;
  throw UsageError("unknown defect kind '" + name + "'");
}

nlohmann::json vec3(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

Eigen::Vector3d parse_vec3(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw UsageError("expected a 3-vector");
  return {v[0], v[1], v[2]};
}

}  // namespace

nlohmann::json to_json(const SceneSpec& scene) {
  return {
      {"shape", {{"kind", shape_kind_name(scene.shape.kind)}, {"size", vec3(scene.shape.size)}}},
      {"texture",
       {{"seed", scene.texture.seed},
        {"frequency", scene.texture.frequency},
        {"contrast", scene.texture.contrast},
        {"jitter", scene.texture.jitter}}},
      {"ring",
       {{"num_views", scene.ring.num_views},
        {"radius", scene.ring.radius},
        {"height", scene.ring.height},
        {"look_at", vec3(scene.ring.look_at)},
        {"fov_deg", scene.ring.fov_deg}}},
      {"height", scene.height},
      {"width", scene.width},
      {"seed", scene.seed},
  };
}

SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  try {
    if (j.contains("shape")) {
      const auto& sh = j["shape"];
      s.shape.kind = parse_shape_kind(sh.value("kind", std::string("sphere")));
      if (sh.contains("size")) s.shape.size = parse_vec3(sh["size"]);
    }
    if (j.contains("texture")) {
      const auto& t = j["texture"];
      s.texture.seed = t.value("seed", s.texture.seed);
      s.texture.frequency = t.value("frequency", s.texture.frequency);
      s.texture.contrast = t.value("contrast", s.texture.contrast);
      s.texture.jitter = t.value("jitter", s.texture.jitter);
    }
    if (j.contains("ring")) {
      const auto& r = j["ring"];
      s.ring.num_views = r.value("num_views", s.ring.num_views);
      s.ring.radius = r.value("radius", s.ring.radius);
      s.ring.height = r.value("height", s.ring.height);
      if (r.contains("look_at")) s.ring.look_at = parse_vec3(r["look_at"]);
      s.ring.fov_deg = r.value("fov_deg", s.ring.fov_deg);
    }
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("scene config: ") + e.what());
  }
  return s;
}

nlohmann::json to_json(const DefectSpec& d) {
  return {{"kind", defect_kind_name(d.kind)}, {"azimuth", d.azimuth}, {"z", d.z},
          {"radius", d.radius},               {"magnitude", d.magnitude}, {"seed", d.seed}};
}

DefectSpec defect_from_json(const nlohmann::json& j) {
  DefectSpec d;
  try {
    d.kind = parse_defect_kind(j.at("kind").get<std::string>());
    d.azimuth = j.at("azimuth").get<double>();
    d.z = j.at("z").get<double>();
    d.radius = j.at("radius").get<double>();
    d.magnitude = j.at("magnitude").get<double>();
    d.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("defect config: ") + e.what());
  }
  d.validate();
  return d;
}

}  // namespace sganet::synth
