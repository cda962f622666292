#pragma once

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace odefilter {

/// Absolute tolerance used when matching scheduled times against evidence
/// and report times.
inline constexpr double kTimeTolerance = 1e-9;

inline bool times_equal(double a, double b) {
  return (a > b ? a - b : b - a) <= kTimeTolerance;
}

/// Shortest decimal string that round-trips to the same double. Used for
/// every emitted number so repeated runs produce identical bytes.
inline std::string fmt_double(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    int n = std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    double back = 0.0;
    std::from_chars(buf, buf + n, back);
    if (back == v || (v != v && back != back)) return std::string(buf, static_cast<std::size_t>(n));
  }
  return std::string(buf);
}

/// Run fn(begin, end) over [0, n) split into `workers` contiguous chunks.
/// Chunks only write to their own index range, so results do not depend on
/// the worker count.
inline void parallel_for(int n, int workers, const std::function<void(int, int)>& fn) {
  if (workers <= 1 || n < 2 * workers) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    int lo = w * chunk;
    int hi = lo + chunk < n ? lo + chunk : n;
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace odefilter
