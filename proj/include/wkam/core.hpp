#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace wkam {

template <int D>
using Vec = Eigen::Matrix<double, D, 1>;
template <int D>
using Mat = Eigen::Matrix<double, D, D>;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// ---------------------------------------------------------------------------
// Errors. Every failure mode named by an operation has its own type so callers
// can catch the ones they know how to recover from.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define WKAM_DEFINE_ERROR(Name)                \
  class Name : public Error {                  \
   public:                                     \
    explicit Name(const std::string& what)     \
        : Error(std::string(#Name ": ") + what) {} \
  };

WKAM_DEFINE_ERROR(NonConvergence)
WKAM_DEFINE_ERROR(DegenerateTime)
WKAM_DEFINE_ERROR(EmptyProbe)
WKAM_DEFINE_ERROR(AmbiguousMax)
WKAM_DEFINE_ERROR(DegenerateRadius)
WKAM_DEFINE_ERROR(EmptySuperdifferential)
WKAM_DEFINE_ERROR(StepTooLarge)
WKAM_DEFINE_ERROR(SelectionFailure)
WKAM_DEFINE_ERROR(SizeMismatch)
WKAM_DEFINE_ERROR(InvalidArgument)
WKAM_DEFINE_ERROR(NotTonelli)

#undef WKAM_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Flat torus geometry R^D / (period Z)^D.

inline double wrap_coordinate(double x, double period) {
  double r = std::fmod(x, period);
  if (r < 0.0) r += period;
  // fmod can return `period` itself for tiny negative inputs after the shift.
  if (r >= period) r -= period;
  return r;
}

/// Shortest signed difference b - a on a circle of the given period, in [-P/2, P/2).
inline double wrap_difference(double a, double b, double period) {
  double d = std::fmod(b - a, period);
  if (d >= 0.5 * period) d -= period;
  if (d < -0.5 * period) d += period;
  return d;
}

template <int D>
Vec<D> wrap(const Vec<D>& x, double period) {
  Vec<D> r;
  for (int i = 0; i < D; ++i) r[i] = wrap_coordinate(x[i], period);
  return r;
}

template <int D>
Vec<D> torus_delta(const Vec<D>& a, const Vec<D>& b, double period) {
  Vec<D> r;
  for (int i = 0; i < D; ++i) r[i] = wrap_difference(a[i], b[i], period);
  return r;
}

template <int D>
double torus_distance(const Vec<D>& a, const Vec<D>& b, double period) {
  return torus_delta<D>(a, b, period).norm();
}

/// A point of the flat torus. Coordinates are kept in [0, period).
template <int D>
class TorusPoint {
 public:
  static_assert(D == 1 || D == 2, "only 1- and 2-dimensional tori are supported");

  TorusPoint() : coords_(Vec<D>::Zero()) {}
  explicit TorusPoint(const Vec<D>& coords, double period = kTwoPi)
      : coords_(wrap<D>(coords, period)), period_(period) {}

  const Vec<D>& coords() const { return coords_; }
  double operator[](int i) const { return coords_[i]; }
  double period() const { return period_; }

  double distance(const TorusPoint& other) const {
    return torus_distance<D>(coords_, other.coords_, period_);
  }
  /// Shortest displacement from this point to `other`.
  Vec<D> delta_to(const TorusPoint& other) const {
    return torus_delta<D>(coords_, other.coords_, period_);
  }
  TorusPoint moved(const Vec<D>& displacement) const {
    return TorusPoint(coords_ + displacement, period_);
  }

 private:
  Vec<D> coords_;
  double period_ = kTwoPi;
};

inline Vec<1> vec1(double x) { return Vec<1>(x); }
inline Vec<2> vec2(double x, double y) { return Vec<2>(x, y); }

// ---------------------------------------------------------------------------
// Minimal data-parallel helper. Work items are independent; `threads <= 1` runs
// inline on the caller.

template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  if (threads <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) fn(i);
    });
  }
}

}  // namespace wkam
