#include "paco/polygon.hpp"

#include <algorithm>
#include <cmath>

namespace paco {

PlaneFrame plane_frame(const CartesianPlaned& plane) {
  PlaneFrame f;
  f.n = plane.n.normalized();
  f.origin = plane.d * f.n;
  // Pick the axis least aligned with n as the seed for u.
  int axis = 0;
  f.n.cwiseAbs().minCoeff(&axis);
  Point3 seed = Point3::Zero();
  seed[axis] = 1.0;
  f.u = (seed - seed.dot(f.n) * f.n).normalized();
  f.v = f.n.cross(f.u);
  return f;
}

PointList clip_polygon(const PointList& loop, const Point3& n, double d) {
  PointList out;
  const std::size_t count = loop.size();
  if (count == 0) return out;
  out.reserve(count + 2);
  for (std::size_t i = 0; i < count; ++i) {
    const Point3& a = loop[i];
    const Point3& b = loop[(i + 1) % count];
    const double da = n.dot(a) - d;
    const double db = n.dot(b) - d;
    if (da <= 0) out.push_back(a);
    if ((da < 0 && db > 0) || (da > 0 && db < 0)) {
      const double t = da / (da - db);
      out.push_back(a + t * (b - a));
    }
  }
  return out;
}

PointList simplify_loop(const PointList& loop, double tol) {
  PointList pts;
  for (const auto& p : loop) {
    if (pts.empty() || (p - pts.back()).norm() > tol) pts.push_back(p);
  }
  while (pts.size() > 1 && (pts.front() - pts.back()).norm() <= tol) pts.pop_back();
  bool changed = true;
  while (changed && pts.size() >= 3) {
    changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Point3& prev = pts[(i + pts.size() - 1) % pts.size()];
      const Point3& next = pts[(i + 1) % pts.size()];
      const Point3 e = next - prev;
      const double len = e.norm();
      if (len <= tol || (pts[i] - prev).cross(e).norm() / len <= tol) {
        pts.erase(pts.begin() + static_cast<std::ptrdiff_t>(i));
        changed = true;
        break;
      }
    }
  }
  return pts;
}

std::vector<Eigen::Vector2d> convex_hull_2d(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.x() != b.x() ? a.x() < b.x() : a.y() < b.y();
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Eigen::Vector2d> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

double polygon_area_2d(const std::vector<Eigen::Vector2d>& loop) {
  double a = 0.0;
  for (std::size_t i = 0; i < loop.size(); ++i) {
    const auto& p = loop[i];
    const auto& q = loop[(i + 1) % loop.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

}  // namespace paco
