#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "odefilter/errors.hpp"
#include "odefilter/util.hpp"

namespace odefilter {

enum class EvidenceMode { Continuous, Instantaneous };

struct EvidencePoint {
  double time;
  double value;
};

/// Time-stamped observations for one target (an observed state or an
/// intended input). Continuous streams hold their last value until the next
/// point; instantaneous streams are defined only at their points.
struct EvidenceStream {
  std::string target;
  EvidenceMode mode = EvidenceMode::Instantaneous;
  std::vector<EvidencePoint> points;

  /// Continuous: value of the latest point with time <= t (right-continuous
  /// hold). Instantaneous: the value at a point within the time-matching
  /// tolerance of t, if any.
  std::optional<double> value_at(double t) const {
    if (points.empty()) return std::nullopt;
    auto it = std::upper_bound(points.begin(), points.end(), t + kTimeTolerance,
                               [](double lhs, const EvidencePoint& p) { return lhs < p.time; });
    if (it == points.begin()) return std::nullopt;
    const EvidencePoint& p = *(it - 1);
    if (mode == EvidenceMode::Continuous) return p.value;
    return times_equal(p.time, t) ? std::optional<double>(p.value) : std::nullopt;
  }
};

/// Parse a two-column "time,value" CSV. Header row optional; times must be
/// strictly increasing.
inline EvidenceStream load_evidence_csv(const std::string& path, std::string target,
                                        EvidenceMode mode) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open evidence file: " + path);
  EvidenceStream s;
  s.target = std::move(target);
  s.mode = mode;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t begin = line.find_first_not_of(" \t");
    if (begin == std::string::npos || line[begin] == '#') continue;
    std::size_t comma = line.find(',');
    if (comma == std::string::npos) throw CsvParseError(line_no, "expected 'time,value'");
    auto parse_field = [&](std::size_t from, std::size_t to, double& out) {
      while (from < to && (line[from] == ' ' || line[from] == '\t')) ++from;
      while (to > from && (line[to - 1] == ' ' || line[to - 1] == '\t')) --to;
      auto res = std::from_chars(line.data() + from, line.data() + to, out);
      return res.ec == std::errc{} && res.ptr == line.data() + to && from < to;
    };
    double t = 0.0, v = 0.0;
    if (!parse_field(0, comma, t) || !parse_field(comma + 1, line.size(), v)) {
      if (line_no == 1 && s.points.empty()) continue;  // header row
      throw CsvParseError(line_no, "malformed number");
    }
    if (!s.points.empty()) {
      if (t <= s.points.back().time + kTimeTolerance) throw NonMonotonicTimeError(line_no);
    }
    s.points.push_back({t, v});
  }
  return s;
}

inline void write_evidence_csv(const std::string& path, const EvidenceStream& s) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write evidence file: " + path);
  out << "time,value\n";
  for (const auto& p : s.points) out << fmt_double(p.time) << ',' << fmt_double(p.value) << '\n';
}

/// Sorted union of all point times inside [t_lo, t_hi], deduplicated within
/// the time-matching tolerance.
inline std::vector<double> event_times(std::span<const EvidenceStream> streams, double t_lo,
                                       double t_hi) {
  std::vector<double> out;
  for (const auto& s : streams)
    for (const auto& p : s.points)
      if (p.time >= t_lo - kTimeTolerance && p.time <= t_hi + kTimeTolerance) out.push_back(p.time);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end(),
                        [](double a, double b) { return times_equal(a, b); }),
            out.end());
  return out;
}

}  // namespace odefilter
