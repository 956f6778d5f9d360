#pragma once

// Camera models: pinhole with radial distortion, the CAHVOR rover model, and
// the conversion between them. All operations are pure; types are plain
// value types and safe to share across threads.

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mars/errors.hpp"

namespace mars {

struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

// Pinhole calibration with a radial distortion polynomial applied on the
// normalized image plane: scale = 1 + k0 + k1*r^2 + k2*r^4.
struct Intrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  double k0 = 0.0, k1 = 0.0, k2 = 0.0;
  double pixel_size = 1.0;  // physical pixel pitch in mm

  bool has_distortion() const { return k0 != 0.0 || k1 != 0.0 || k2 != 0.0; }

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw DegenerateModel("intrinsics: focal lengths must be > 0");
    if (width < 1 || height < 1) throw DegenerateModel("intrinsics: image size must be >= 1");
    for (double x : {fx, fy, cx, cy, k0, k1, k2, pixel_size})
      if (!std::isfinite(x)) throw DegenerateModel("intrinsics: non-finite field");
  }
};

// Rigid SE(3) transform. Direction (world->camera, camera->world, or
// frame-to-frame) is declared at each use site.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose Identity() { return Pose{}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  Pose inverse() const {
    Pose inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(rotation.transpose() * translation);
    return inv;
  }

  // this * other: apply `other` first, then this.
  Pose compose(const Pose& other) const {
    Pose out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }

  double orthonormality_residual() const {
    return (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm();
  }

  bool is_valid(double tol = 1e-9) const {
    return orthonormality_residual() < tol && std::abs(rotation.determinant() - 1.0) < tol &&
           translation.allFinite();
  }
};

inline Pose operator*(const Pose& a, const Pose& b) { return a.compose(b); }

struct CahvorModel {
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  Eigen::Vector3d a = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d h = Eigen::Vector3d::Zero();
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Eigen::Vector3d o = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d r = Eigen::Vector3d::Zero();
  double pixel_size = 1.0;
};

inline Pixel project(const Eigen::Vector3d& point_cam, const Intrinsics& intr) {
  if (!(point_cam.z() > 0.0)) throw NonPositiveDepth("project: point has z <= 0");
  return Pixel{intr.fx * point_cam.x() / point_cam.z() + intr.cx,
               intr.fy * point_cam.y() / point_cam.z() + intr.cy};
}

inline Eigen::Vector3d back_project(const Pixel& pixel, double depth, const Intrinsics& intr) {
  if (!(depth > 0.0)) throw NonPositiveDepth("back_project: depth <= 0");
  return Eigen::Vector3d(depth * (pixel.u - intr.cx) / intr.fx,
                         depth * (pixel.v - intr.cy) / intr.fy, depth);
}

// Radial distortion on normalized image-plane coordinates.
inline Eigen::Vector2d apply_distortion(const Eigen::Vector2d& xn, double k0, double k1,
                                        double k2) {
  const double r2 = xn.squaredNorm();
  return xn * (1.0 + k0 + k1 * r2 + k2 * r2 * r2);
}

// Inverse of apply_distortion by fixed-point iteration.
inline Eigen::Vector2d undistort(const Eigen::Vector2d& xd, double k0, double k1, double k2,
                                 int max_iterations = 50) {
  Eigen::Vector2d x = xd;
  for (int it = 0; it < max_iterations; ++it) {
    const double r2 = x.squaredNorm();
    const double scale = 1.0 + k0 + k1 * r2 + k2 * r2 * r2;
    if (!(std::abs(scale) > 1e-12)) throw NoConvergence("undistort: vanishing distortion scale");
    const Eigen::Vector2d next = xd / scale;
    if ((next - x).norm() < 1e-14) return next;
    x = next;
  }
  // Accept if the forward model reproduces the input closely enough.
  if ((apply_distortion(x, k0, k1, k2) - xd).norm() < 1e-10) return x;
  throw NoConvergence("undistort: fixed-point iteration did not converge");
}

// Projection including the radial distortion of `intr` (no-op when k = 0).
inline Pixel project_distorted(const Eigen::Vector3d& point_cam, const Intrinsics& intr) {
  if (!(point_cam.z() > 0.0)) throw NonPositiveDepth("project: point has z <= 0");
  Eigen::Vector2d xn(point_cam.x() / point_cam.z(), point_cam.y() / point_cam.z());
  if (intr.has_distortion()) xn = apply_distortion(xn, intr.k0, intr.k1, intr.k2);
  return Pixel{intr.fx * xn.x() + intr.cx, intr.fy * xn.y() + intr.cy};
}

inline Eigen::Vector3d transform_point(const Pose& pose, const Eigen::Vector3d& p) {
  return pose.apply(p);
}

// CAHVOR -> pinhole per the standard CAHV identities. The returned pose maps
// world to camera coordinates; its rotation rows are (Hn, -Vn, A), which
// carries a y-down -> y-up flip (determinant -1). Callers that need an
// image-convention (y-down) proper rotation should use pinhole_pose_ydown.
// The O vector is not used by the conversion (documented limitation).
inline std::pair<Pose, Intrinsics> cahvor_to_pinhole(const CahvorModel& m) {
  if (std::abs(m.a.norm() - 1.0) > 1e-9)
    throw DegenerateModel("cahvor_to_pinhole: |A| != 1");
  const double hc = m.h.dot(m.a);
  const double vc = m.v.dot(m.a);
  const Eigen::Vector3d hp = m.h - hc * m.a;
  const Eigen::Vector3d vp = m.v - vc * m.a;
  const double hs = hp.norm();
  const double vs = vp.norm();
  if (hs < 1e-12 || vs < 1e-12)
    throw DegenerateModel("cahvor_to_pinhole: h_s or v_s vanishes");

  Eigen::Matrix3d rot;
  rot.row(0) = (hp / hs).transpose();
  rot.row(1) = -(vp / vs).transpose();
  rot.row(2) = m.a.transpose();
  const double ortho = (rot * rot.transpose() - Eigen::Matrix3d::Identity()).norm();
  if (ortho > 1e-6) {
    std::ostringstream os;
    os << "cahvor_to_pinhole: (Hn, -Vn, A) deviates from a rotation, residual " << ortho;
    throw NonOrthogonal(os.str());
  }

  Pose pose;
  pose.rotation = rot;
  pose.translation = -(rot * m.c);  // camera center sits at C

  Intrinsics intr;
  intr.fx = hs;
  intr.fy = vs;
  intr.cx = hc;
  intr.cy = vc;
  intr.width = static_cast<int>(std::lround(2.0 * hc));
  intr.height = static_cast<int>(std::lround(2.0 * vc));
  if (intr.width < 1) intr.width = 1;
  if (intr.height < 1) intr.height = 1;
  intr.pixel_size = m.pixel_size;
  intr.k0 = m.r[0];
  intr.k1 = m.r[1] / std::pow(m.pixel_size * hs, 2);
  intr.k2 = m.r[2] / std::pow(m.pixel_size * hs, 4);
  return {pose, intr};
}

// Flip the sign of the second rotation row, turning the CAHVOR-derived y-up
// frame into the image y-down convention used by the renderer.
inline Pose pinhole_pose_ydown(const Pose& cahvor_pose) {
  Pose out = cahvor_pose;
  out.rotation.row(1) = -cahvor_pose.rotation.row(1);
  out.translation.y() = -cahvor_pose.translation.y();
  return out;
}

// Forward construction of a CAHVOR model from pinhole parameters. Inverse of
// cahvor_to_pinhole; used by tests and the synthetic data generator.
inline CahvorModel cahvor_from_pinhole(const Intrinsics& intr, const Pose& world_to_camera,
                                       const Eigen::Vector3d& radial = Eigen::Vector3d::Zero()) {
  CahvorModel m;
  const Eigen::Matrix3d& rot = world_to_camera.rotation;
  m.c = -(rot.transpose() * world_to_camera.translation);
  const Eigen::Vector3d hn = rot.row(0).transpose();
  const Eigen::Vector3d vn = -rot.row(1).transpose();
  m.a = rot.row(2).transpose();
  m.h = intr.fx * hn + intr.cx * m.a;
  m.v = intr.fy * vn + intr.cy * m.a;
  m.o = m.a;
  m.pixel_size = intr.pixel_size;
  m.r[0] = radial[0];
  m.r[1] = radial[1];
  m.r[2] = radial[2];
  return m;
}

// ---------------------------------------------------------------------------
// Text key-value serialization. One model per file, `key value...` per line,
// vectors as three space-separated decimals. %.17g round-trips doubles
// byte-exactly.

namespace detail {

inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::map<std::string, std::vector<double>> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::map<std::string, std::vector<double>> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string key;
    is >> key;
    std::vector<double> vals;
    double x;
    while (is >> x) vals.push_back(x);
    kv[key] = vals;
  }
  return kv;
}

inline double kv_scalar(const std::map<std::string, std::vector<double>>& kv,
                        const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end() || it->second.size() != 1) throw IoError("missing scalar key: " + key);
  return it->second[0];
}

inline Eigen::Vector3d kv_vec3(const std::map<std::string, std::vector<double>>& kv,
                               const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end() || it->second.size() != 3) throw IoError("missing vec3 key: " + key);
  return Eigen::Vector3d(it->second[0], it->second[1], it->second[2]);
}

}  // namespace detail

inline void save_intrinsics(const std::string& path, const Intrinsics& intr) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  using detail::fmt_double;
  out << "fx " << fmt_double(intr.fx) << "\nfy " << fmt_double(intr.fy) << "\ncx "
      << fmt_double(intr.cx) << "\ncy " << fmt_double(intr.cy) << "\nwidth " << intr.width
      << "\nheight " << intr.height << "\nk0 " << fmt_double(intr.k0) << "\nk1 "
      << fmt_double(intr.k1) << "\nk2 " << fmt_double(intr.k2) << "\npixel_size "
      << fmt_double(intr.pixel_size) << "\n";
}

inline Intrinsics load_intrinsics(const std::string& path) {
  auto kv = detail::read_kv_file(path);
  Intrinsics intr;
  intr.fx = detail::kv_scalar(kv, "fx");
  intr.fy = detail::kv_scalar(kv, "fy");
  intr.cx = detail::kv_scalar(kv, "cx");
  intr.cy = detail::kv_scalar(kv, "cy");
  intr.width = static_cast<int>(detail::kv_scalar(kv, "width"));
  intr.height = static_cast<int>(detail::kv_scalar(kv, "height"));
  intr.k0 = detail::kv_scalar(kv, "k0");
  intr.k1 = detail::kv_scalar(kv, "k1");
  intr.k2 = detail::kv_scalar(kv, "k2");
  if (kv.count("pixel_size")) intr.pixel_size = detail::kv_scalar(kv, "pixel_size");
  intr.validate();
  return intr;
}

inline void save_cahvor(const std::string& path, const CahvorModel& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  using detail::fmt_double;
  auto put = [&](const char* key, const Eigen::Vector3d& v) {
    out << key << " " << fmt_double(v.x()) << " " << fmt_double(v.y()) << " " << fmt_double(v.z())
        << "\n";
  };
  put("C", m.c);
  put("A", m.a);
  put("H", m.h);
  put("V", m.v);
  put("O", m.o);
  put("R", m.r);
  out << "pixel_size " << fmt_double(m.pixel_size) << "\n";
}

inline CahvorModel load_cahvor(const std::string& path) {
  auto kv = detail::read_kv_file(path);
  CahvorModel m;
  m.c = detail::kv_vec3(kv, "C");
  m.a = detail::kv_vec3(kv, "A");
  m.h = detail::kv_vec3(kv, "H");
  m.v = detail::kv_vec3(kv, "V");
  m.o = detail::kv_vec3(kv, "O");
  m.r = detail::kv_vec3(kv, "R");
  if (kv.count("pixel_size")) m.pixel_size = detail::kv_scalar(kv, "pixel_size");
  return m;
}

// Pose files: one pose per line, 12 decimals, row-major 3x4 [R | t].
inline void save_poses(const std::string& path, const std::vector<Pose>& poses) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const Pose& p : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out << detail::fmt_double(p.rotation(r, c)) << " ";
      out << detail::fmt_double(p.translation[r]);
      out << (r == 2 ? "\n" : " ");
    }
  }
}

inline std::vector<Pose> load_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Pose> poses;
  std::vector<double> vals;
  double x;
  while (in >> x) vals.push_back(x);
  if (vals.size() % 12 != 0) throw IoError("pose file " + path + ": element count not 12*N");
  for (size_t i = 0; i + 12 <= vals.size(); i += 12) {
    Pose p;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) p.rotation(r, c) = vals[i + 4 * r + c];
      p.translation[r] = vals[i + 4 * r + 3];
    }
    poses.push_back(p);
  }
  return poses;
}

}  // namespace mars
