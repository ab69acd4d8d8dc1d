#include "mdp/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace mdp {

double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

Point2 to_local(const Pose& origin, Point2 p) {
  const double c = std::cos(origin.heading);
  const double s = std::sin(origin.heading);
  const double dx = p.x - origin.x;
  const double dy = p.y - origin.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

Point2 to_world(const Pose& origin, Point2 p) {
  const double c = std::cos(origin.heading);
  const double s = std::sin(origin.heading);
  return {origin.x + c * p.x - s * p.y, origin.y + s * p.x + c * p.y};
}

double polyline_length(const Polyline& line) {
  double len = 0.0;
  for (std::size_t i = 1; i < line.size(); ++i)
    len += std::hypot(line[i].x - line[i - 1].x, line[i].y - line[i - 1].y);
  return len;
}

PolylineFrame::PolylineFrame(Polyline line) : line_(std::move(line)) {
  if (line_.size() < 2) throw std::invalid_argument("polyline needs at least 2 points");
  cum_.resize(line_.size(), 0.0);
  for (std::size_t i = 1; i < line_.size(); ++i)
    cum_[i] = cum_[i - 1] + std::hypot(line_[i].x - line_[i - 1].x, line_[i].y - line_[i - 1].y);
}

std::size_t PolylineFrame::segment_for(double s) const {
  auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
  std::size_t i = it == cum_.begin() ? 0 : static_cast<std::size_t>(it - cum_.begin()) - 1;
  return std::min(i, line_.size() - 2);
}

FrenetPoint PolylineFrame::project(Point2 p) const {
  double best = std::numeric_limits<double>::infinity();
  FrenetPoint out;
  const std::size_t last = line_.size() - 2;
  for (std::size_t i = 0; i + 1 < line_.size(); ++i) {
    const Point2 a = line_[i];
    const Point2 b = line_[i + 1];
    const double len = cum_[i + 1] - cum_[i];
    if (len <= 0.0) continue;
    const double ux = (b.x - a.x) / len;
    const double uy = (b.y - a.y) / len;
    double t = (p.x - a.x) * ux + (p.y - a.y) * uy;
    if (i != 0) t = std::max(t, 0.0);
    if (i != last) t = std::min(t, len);
    const double cx = a.x + ux * t;
    const double cy = a.y + uy * t;
    const double dist = std::hypot(p.x - cx, p.y - cy);
    if (dist < best) {
      best = dist;
      out.s = cum_[i] + t;
      out.d = ux * (p.y - a.y) - uy * (p.x - a.x);
    }
  }
  return out;
}

Point2 PolylineFrame::point_at(double s) const {
  const std::size_t i = segment_for(s);
  const Point2 a = line_[i];
  const Point2 b = line_[i + 1];
  const double len = cum_[i + 1] - cum_[i];
  const double t = (s - cum_[i]) / len;
  return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
}

double PolylineFrame::heading_at(double s) const {
  const std::size_t i = segment_for(s);
  return std::atan2(line_[i + 1].y - line_[i].y, line_[i + 1].x - line_[i].x);
}

Point2 PolylineFrame::to_world(double s, double d) const {
  const Point2 c = point_at(s);
  const double h = heading_at(s);
  return {c.x - std::sin(h) * d, c.y + std::cos(h) * d};
}

Polyline resample(const PolylineFrame& line, double s0, double s1, int n) {
  Polyline out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double s = n == 1 ? s0 : s0 + (s1 - s0) * k / (n - 1);
    out.push_back(line.point_at(s));
  }
  return out;
}

}  // namespace mdp
