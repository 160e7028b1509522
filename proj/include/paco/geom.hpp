#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <numbers>
#include <vector>

#include "paco/error.hpp"

namespace paco {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

using Point3 = Eigen::Vector3d;
using PointList = std::vector<Point3>;

namespace tol {
/// Planes closer to the origin than this are treated as passing through it.
inline constexpr double kRadius = 1e-6;
/// Rays whose direction is this close to parallel with a plane do not hit it.
inline constexpr double kDenominator = 1e-6;
/// Below this sin(theta) the azimuth is undefined and is pinned to zero.
inline constexpr double kPole = 1e-12;
}  // namespace tol

/// Plane {x : u(theta, phi) . x = r} with u the unit spherical direction.
template <typename Scalar>
struct PolarPlane {
  Scalar r{0};
  Scalar theta{0};
  Scalar phi{0};
};

/// Plane {x : n . x = d} with unit n.
template <typename Scalar>
struct CartesianPlane {
  Vec3<Scalar> n{Vec3<Scalar>::UnitZ()};
  Scalar d{0};
};

using PolarPlaned = PolarPlane<double>;
using CartesianPlaned = CartesianPlane<double>;

template <typename Scalar>
struct PolarConversion {
  PolarPlane<Scalar> plane;
  bool degenerate = false;  // plane passes through the origin, r forced to 0
};

/// u(theta, phi) = (sin t cos p, sin t sin p, cos t).
template <typename Scalar>
Vec3<Scalar> spherical_direction(Scalar theta, Scalar phi) {
  using std::cos;
  using std::sin;
  const Scalar st = sin(theta);
  return {st * cos(phi), st * sin(phi), cos(theta)};
}

template <typename Scalar>
CartesianPlane<Scalar> polar_to_cartesian(const PolarPlane<Scalar>& p) {
  return {spherical_direction(p.theta, p.phi), p.r};
}

/// Flips the sign of a normal so that its first nonzero component is positive.
template <typename Scalar>
Vec3<Scalar> canonical_direction(const Vec3<Scalar>& n) {
  for (int i = 0; i < 3; ++i) {
    if (n[i] > Scalar(0)) return n;
    if (n[i] < Scalar(0)) return -n;
  }
  return n;
}

/// Brings (n, d) to canonical form: d >= 0, and for planes through the
/// origin the first nonzero normal component is positive.
template <typename Scalar>
CartesianPlane<Scalar> canonicalize(CartesianPlane<Scalar> c) {
  if (c.d < Scalar(0)) {
    c.n = -c.n;
    c.d = -c.d;
  }
  if (c.d < Scalar(tol::kRadius)) {
    c.n = canonical_direction<Scalar>(c.n);
  }
  return c;
}

template <typename Scalar>
PolarConversion<Scalar> cartesian_to_polar(const CartesianPlane<Scalar>& input) {
  using std::atan2;
  using std::hypot;
  const Scalar pi = std::numbers::pi_v<Scalar>;
  CartesianPlane<Scalar> c = canonicalize(input);
  PolarConversion<Scalar> out;
  if (c.d < Scalar(tol::kRadius)) {
    out.degenerate = true;
    c.d = Scalar(0);
  }
  const Scalar rho = hypot(c.n.x(), c.n.y());
  out.plane.r = c.d;
  out.plane.theta = atan2(rho, c.n.z());
  if (rho < Scalar(tol::kPole)) {
    out.plane.phi = Scalar(0);
  } else {
    out.plane.phi = atan2(c.n.y(), c.n.x());
    if (out.plane.phi >= pi) out.plane.phi -= Scalar(2) * pi;
  }
  return out;
}

/// Denominator of the on-plane radius: cos(dphi) sin(t_ij) sin(t_i) + cos(t_ij) cos(t_i),
/// i.e. the dot product u(t_ij, p_ij) . u(t_i, p_i).
template <typename Scalar>
Scalar radius_denominator(const PolarPlane<Scalar>& plane, Scalar theta_ij, Scalar phi_ij) {
  using std::cos;
  using std::sin;
  return cos(phi_ij - plane.phi) * sin(theta_ij) * sin(plane.theta) +
         cos(theta_ij) * cos(plane.theta);
}

/// Distance along u(theta_ij, phi_ij) from the origin to the plane.
/// Throws ParallelDirection when the ray is (numerically) parallel to the plane.
template <typename Scalar>
Scalar radius_from_angles(const PolarPlane<Scalar>& plane, Scalar theta_ij, Scalar phi_ij) {
  using std::abs;
  // sin^2 + cos^2 rounds away from 1 for about a quarter of angles.
  if (theta_ij == plane.theta && phi_ij == plane.phi) return plane.r;
  const Scalar denom = radius_denominator(plane, theta_ij, phi_ij);
  if (!(abs(denom) > Scalar(tol::kDenominator))) {
    throw Error(ErrorCode::ParallelDirection, "ray is parallel to the plane");
  }
  return plane.r / denom;
}

template <typename Scalar>
Vec3<Scalar> point_from_angles(const PolarPlane<Scalar>& plane, Scalar theta_ij, Scalar phi_ij) {
  return radius_from_angles(plane, theta_ij, phi_ij) * spherical_direction(theta_ij, phi_ij);
}

template <typename Scalar>
Scalar signed_distance(const CartesianPlane<Scalar>& c, const Vec3<Scalar>& p) {
  return c.n.dot(p) - c.d;
}

/// Unsigned cosine between two directions, clamped to [0, 1].
template <typename Scalar>
Scalar unsigned_cosine(const Vec3<Scalar>& a, const Vec3<Scalar>& b) {
  using std::abs;
  using std::min;
  const Scalar denom = a.norm() * b.norm();
  if (denom <= Scalar(0)) return Scalar(0);
  return min(Scalar(1), abs(a.dot(b)) / denom);
}

}  // namespace paco
