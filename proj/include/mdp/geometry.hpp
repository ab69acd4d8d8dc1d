#pragma once

#include <vector>

namespace mdp {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

using Polyline = std::vector<Point2>;

/// Rigid 2-D pose; heading in radians, counter-clockwise from +x.
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// Expresses a world point in the frame whose origin is `origin`.
Point2 to_local(const Pose& origin, Point2 p);
Point2 to_world(const Pose& origin, Point2 p);

double polyline_length(const Polyline& line);

struct FrenetPoint {
  double s = 0.0;  // arc length along the line
  double d = 0.0;  // signed lateral offset, left positive
};

/// Arc-length parameterisation of a polyline. Ends extrapolate linearly.
class PolylineFrame {
 public:
  explicit PolylineFrame(Polyline line);

  FrenetPoint project(Point2 p) const;
  Point2 point_at(double s) const;
  double heading_at(double s) const;
  Point2 to_world(double s, double d) const;
  double length() const { return cum_.back(); }
  const Polyline& line() const { return line_; }

 private:
  std::size_t segment_for(double s) const;

  Polyline line_;
  std::vector<double> cum_;
};

/// `n` points evenly spaced in arc length over [s0, s1] of `line`.
Polyline resample(const PolylineFrame& line, double s0, double s1, int n);

}  // namespace mdp
