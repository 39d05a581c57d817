#ifndef MARLSIM_GEOMETRY_HPP_
#define MARLSIM_GEOMETRY_HPP_

#include <cmath>
#include <numbers>
#include <vector>

namespace marlsim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2&) const = default;

  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

// Wrap to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, kTwoPi);
  if (a <= 0.0) a += kTwoPi;
  return a - std::numbers::pi;
}

// Express `p` in the frame of a pose at `origin` with heading `heading`.
inline Vec2 to_ego_frame(Vec2 origin, double heading, Vec2 p) {
  const Vec2 d = p - origin;
  const double c = std::cos(heading), s = std::sin(heading);
  return {c * d.x + s * d.y, -s * d.x + c * d.y};
}

struct Projection {
  double s = 0.0;        // arclength of the closest point
  double lateral = 0.0;  // signed offset, positive to the left of travel
  double distance = 0.0; // Euclidean distance to the closest point
  double heading = 0.0;  // tangent heading at the closest point
  bool past_end = false; // closest point is the final vertex and p lies beyond it
};

// Piecewise-linear curve parameterized by arclength.
class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Vec2> points);

  const std::vector<Vec2>& points() const { return points_; }
  double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }

  Vec2 point_at(double s) const;
  double heading_at(double s) const;
  Projection project(Vec2 p) const;

  // Sub-curve between two arclengths (clamped to the curve).
  Polyline slice(double s0, double s1) const;

 private:
  std::size_t segment_at(double s) const;

  std::vector<Vec2> points_;
  std::vector<double> cumulative_;
};

}  // namespace marlsim

#endif  // MARLSIM_GEOMETRY_HPP_
