#include "marlsim/geometry.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace marlsim {

Polyline::Polyline(std::vector<Vec2> points) : points_(std::move(points)) {
  if (points_.size() < 2) throw std::invalid_argument("polyline needs at least 2 points");
  cumulative_.reserve(points_.size());
  cumulative_.push_back(0.0);
  for (std::size_t i = 1; i < points_.size(); ++i) {
    const double len = distance(points_[i - 1], points_[i]);
    if (!(len > 0.0)) throw std::invalid_argument("polyline has repeated consecutive points");
    cumulative_.push_back(cumulative_.back() + len);
  }
}

std::size_t Polyline::segment_at(double s) const {
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  std::size_t i = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  return std::min(i, points_.size() - 2);
}

Vec2 Polyline::point_at(double s) const {
  s = std::clamp(s, 0.0, length());
  const std::size_t i = segment_at(s);
  const double seg = cumulative_[i + 1] - cumulative_[i];
  const double t = (s - cumulative_[i]) / seg;
  return points_[i] + (points_[i + 1] - points_[i]) * t;
}

double Polyline::heading_at(double s) const {
  const std::size_t i = segment_at(std::clamp(s, 0.0, length()));
  const Vec2 d = points_[i + 1] - points_[i];
  return std::atan2(d.y, d.x);
}

Projection Polyline::project(Vec2 p) const {
  Projection best;
  best.distance = std::numeric_limits<double>::infinity();
  const std::size_t last = points_.size() - 2;
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    const Vec2 a = points_[i];
    const Vec2 d = points_[i + 1] - a;
    const double seg = cumulative_[i + 1] - cumulative_[i];
    const double raw_t = (p - a).dot(d) / (seg * seg);
    const double t = std::clamp(raw_t, 0.0, 1.0);
    const Vec2 q = a + d * t;
    const double dist = distance(p, q);
    // strict < keeps the earliest segment on ties
    if (dist < best.distance) {
      best.distance = dist;
      best.s = cumulative_[i] + t * seg;
      best.heading = std::atan2(d.y, d.x);
      const double side = d.cross(p - a);
      best.lateral = side >= 0.0 ? dist : -dist;
      best.past_end = (i == last && raw_t > 1.0);
    }
  }
  // Beyond the ends, report the offset perpendicular to the end tangent.
  if (best.s <= 0.0 || best.s >= length()) {
    const std::size_t i = best.s <= 0.0 ? 0 : last;
    const Vec2 d = points_[i + 1] - points_[i];
    const Vec2 anchor = best.s <= 0.0 ? points_.front() : points_.back();
    best.lateral = d.cross(p - anchor) / d.norm();
  }
  return best;
}

Polyline Polyline::slice(double s0, double s1) const {
  s0 = std::clamp(s0, 0.0, length());
  s1 = std::clamp(s1, 0.0, length());
  if (s1 - s0 < 1e-9) throw std::invalid_argument("empty polyline slice");
  std::vector<Vec2> out{point_at(s0)};
  for (std::size_t i = 1; i + 1 < points_.size(); ++i) {
    if (cumulative_[i] > s0 + 1e-9 && cumulative_[i] < s1 - 1e-9) out.push_back(points_[i]);
  }
  out.push_back(point_at(s1));
  return Polyline(std::move(out));
}

}  // namespace marlsim
