#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "odefilter/errors.hpp"

namespace odefilter {

namespace detail {

/// splitmix64 finalizer. The draw sequence is fully specified here, so runs
/// reproduce across platforms and standard-library versions.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline constexpr double kLn2Pi = 1.8378770664093454835606594728112;  // ln(2*pi)
inline constexpr double kSqrt2 = 1.4142135623730950488016887242097;
inline constexpr double kSqrt2Pi = 2.5066282746310005024157652848110;

/// Standard normal CDF via erfc.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }

/// Inverse standard normal CDF. Acklam's rational approximation refined by
/// one Halley step, giving close to full double precision.
inline double normal_icdf(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    double q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley refinement against the exact CDF.
  double e = normal_cdf(x) - p;
  double u = e * kSqrt2Pi * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

}  // namespace detail

/// Deterministic counter-based random stream. Streams derived from the same
/// (seed, ids...) key yield the same sequence on every platform and are
/// independent of how particles are partitioned across workers.
class RngStream {
 public:
  RngStream() : state_(0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : state_(detail::mix64(detail::mix64(seed) ^ stream_id)) {}

  /// Derive a stream from a composite key, e.g. (seed, phase, slot, step).
  template <typename... Ids>
  static RngStream from(std::uint64_t seed, Ids... ids) {
    std::uint64_t s = detail::mix64(seed);
    ((s = detail::mix64(s ^ static_cast<std::uint64_t>(ids))), ...);
    RngStream r;
    r.state_ = s;
    return r;
  }

  RngStream substream(std::uint64_t id) const {
    RngStream r;
    r.state_ = detail::mix64(state_ ^ id);
    return r;
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform draw in the open interval (0, 1); never exactly 0 or 1.
  double uniform01() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53; }

  /// Standard normal draw via the inverse CDF; one uniform consumed.
  double gaussian() { return detail::normal_icdf(uniform01()); }

 private:
  std::uint64_t state_;
};

/// Distribution families available for parameter priors, transitions,
/// observations, and inputs. LinearGaussian is a Gaussian whose mean comes
/// from a parent node's value; use sites pass that value as mu.
struct DistributionSpec {
  enum class Family { Uniform, Gaussian, TruncatedGaussian, LinearGaussian };

  Family family = Family::Gaussian;
  double mu = 0.0;
  double sigma = 0.0;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();

  static DistributionSpec uniform(double lo, double hi) {
    DistributionSpec d;
    d.family = Family::Uniform;
    d.lo = lo;
    d.hi = hi;
    d.mu = 0.5 * (lo + hi);
    return d;
  }
  static DistributionSpec gaussian(double mu, double sigma) {
    DistributionSpec d;
    d.family = Family::Gaussian;
    d.mu = mu;
    d.sigma = sigma;
    return d;
  }
  static DistributionSpec truncated_gaussian(double mu, double sigma, double lo, double hi) {
    DistributionSpec d;
    d.family = Family::TruncatedGaussian;
    d.mu = mu;
    d.sigma = sigma;
    d.lo = lo;
    d.hi = hi;
    return d;
  }
  static DistributionSpec linear_gaussian(double mu, double sigma) {
    DistributionSpec d;
    d.family = Family::LinearGaussian;
    d.mu = mu;
    d.sigma = sigma;
    return d;
  }

  bool valid() const {
    if (family == Family::Uniform || family == Family::TruncatedGaussian) {
      if (!(lo < hi)) return false;
    }
    if (family != Family::Uniform && sigma < 0.0) return false;
    return true;
  }
};

/// Draw from the distribution. Truncated draws always satisfy lo <= x <= hi
/// (inverse-CDF construction, exactly one uniform consumed). sigma = 0
/// degenerates to a point mass at mu.
inline double sample(const DistributionSpec& d, RngStream& rng) {
  using F = DistributionSpec::Family;
  switch (d.family) {
    case F::Uniform:
      return d.lo + rng.uniform01() * (d.hi - d.lo);
    case F::Gaussian:
    case F::LinearGaussian:
      if (d.sigma == 0.0) return d.mu;
      return d.mu + d.sigma * rng.gaussian();
    case F::TruncatedGaussian: {
      if (d.sigma == 0.0) {
        double x = d.mu;
        return x < d.lo ? d.lo : (x > d.hi ? d.hi : x);
      }
      double pa = detail::normal_cdf((d.lo - d.mu) / d.sigma);
      double pb = detail::normal_cdf((d.hi - d.mu) / d.sigma);
      if (pb - pa <= 0.0) {  // truncation far in a tail; fall back to the edge
        return d.mu < d.lo ? d.lo : d.hi;
      }
      double p = pa + rng.uniform01() * (pb - pa);
      double x = d.mu + d.sigma * detail::normal_icdf(p);
      return x < d.lo ? d.lo : (x > d.hi ? d.hi : x);
    }
  }
  return d.mu;
}

/// Log density at x. TruncatedGaussian is renormalized over [lo, hi].
/// Throws DegenerateDensityError when sigma = 0.
inline double log_pdf(const DistributionSpec& d, double x) {
  using F = DistributionSpec::Family;
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  switch (d.family) {
    case F::Uniform:
      return (x < d.lo || x > d.hi) ? neg_inf : -std::log(d.hi - d.lo);
    case F::Gaussian:
    case F::LinearGaussian: {
      if (d.sigma == 0.0) throw DegenerateDensityError("gaussian log_pdf with sigma = 0");
      double z = (x - d.mu) / d.sigma;
      return -0.5 * z * z - std::log(d.sigma) - 0.5 * detail::kLn2Pi;
    }
    case F::TruncatedGaussian: {
      if (d.sigma == 0.0) throw DegenerateDensityError("truncated gaussian log_pdf with sigma = 0");
      if (x < d.lo || x > d.hi) return neg_inf;
      double pa = detail::normal_cdf((d.lo - d.mu) / d.sigma);
      double pb = detail::normal_cdf((d.hi - d.mu) / d.sigma);
      double mass = pb - pa;
      if (mass <= 0.0) return neg_inf;
      double z = (x - d.mu) / d.sigma;
      return -0.5 * z * z - std::log(d.sigma) - 0.5 * detail::kLn2Pi - std::log(mass);
    }
  }
  return neg_inf;
}

/// Gaussian observation weight: log N(x; mu, sigma). Hot path for the
/// particle filter, kept free of spec construction.
inline double gaussian_log_pdf(double x, double mu, double sigma) {
  double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * detail::kLn2Pi;
}

}  // namespace odefilter
