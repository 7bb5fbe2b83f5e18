#ifndef USENS_BUMP_HPP
#define USENS_BUMP_HPP

// Compactly supported C2 bump phi(t) = (1 - t^2)^3 on [-1, 1] with its first
// and second antiderivatives (both anchored at t = -1), in closed form.

namespace usens::bump {

inline constexpr double kMass = 32.0 / 35.0;  // integral of phi over [-1, 1]

inline double phi(double t) {
  if (t <= -1.0 || t >= 1.0) return 0.0;
  const double s = 1.0 - t * t;
  return s * s * s;
}

/// integral_{-1}^{t} phi
inline double phi1(double t) {
  if (t <= -1.0) return 0.0;
  if (t >= 1.0) return kMass;
  const double t2 = t * t;
  return t * (1.0 + t2 * (-1.0 + t2 * (3.0 / 5.0 - t2 / 7.0))) + 16.0 / 35.0;
}

/// integral_{-1}^{t} phi1; equals kMass * t for t >= 1.
inline double phi2(double t) {
  if (t <= -1.0) return 0.0;
  if (t >= 1.0) return kMass * t;
  const double t2 = t * t;
  return t2 * (0.5 + t2 * (-0.25 + t2 * (0.1 - t2 / 56.0))) - 93.0 / 280.0 + 16.0 / 35.0 * (t + 1.0);
}

/// One-sided spike: second derivative -s phi((x-c)/w), first derivative
/// vanishing to the right of the support, value vanishing to the right.
struct Spike {
  double center = 0.0;
  double width = 1.0;
  double height = 0.0;  ///< s >= 0

  double d2(double x) const { return -height * phi((x - center) / width); }
  double d1(double x) const { return height * width * (kMass - phi1((x - center) / width)); }
  double d0(double x) const {
    const double t = (x - center) / width;
    if (t >= 1.0) return 0.0;
    if (t <= -1.0) return height * width * width * kMass * t;
    return -height * width * width * (phi2(t) - kMass * t);
  }
};

/// Two-scale bump of zero integral over each half of its support: a narrow
/// profile of width w minus a broad one of width W scaled by w/W. Its value at
/// the center is amplitude * (1 - w/W); its first and zeroth antiderivatives
/// vanish outside [c - W, c + W].
struct Hat {
  double center = 0.0;
  double narrow = 0.25;
  double broad = 1.0;
  double amplitude = 0.0;

  double center_value() const { return amplitude * (1.0 - narrow / broad); }
  double d2(double x) const {
    return amplitude * (phi((x - center) / narrow) - narrow / broad * phi((x - center) / broad));
  }
  double d1(double x) const {
    return amplitude * narrow * (phi1((x - center) / narrow) - phi1((x - center) / broad));
  }
  double d0(double x) const {
    if (x <= center - broad || x >= center + broad) return 0.0;
    return amplitude * narrow * (narrow * phi2((x - center) / narrow) - broad * phi2((x - center) / broad));
  }
};

}  // namespace usens::bump

#endif  // USENS_BUMP_HPP
