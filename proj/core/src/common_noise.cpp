#include "mfcn/common_noise.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mfcn/rng.hpp"

namespace mfcn {

std::vector<double> PointPath::times() const {
  std::vector<double> t;
  t.reserve(events.size());
  for (const auto& e : events) t.push_back(e.time);
  return t;
}

void PointPath::validate() const {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw std::invalid_argument("PointPath: horizon must be > 0");
  }
  double prev = 0.0;
  for (const auto& e : events) {
    if (!(e.time > prev) || e.time > horizon) {
      throw std::invalid_argument("PointPath: event times must be strictly increasing in (0, T]");
    }
    prev = e.time;
  }
}

PointPath sample_point_path(const IntensitySpec& intensity, double horizon,
                            std::uint64_t seed) {
  if (!(horizon > 0.0)) throw std::invalid_argument("sample_point_path: horizon must be > 0");
  intensity.validate();
  PointPath path;
  path.horizon = horizon;
  path.source_seed = seed;
  path.intensity = intensity;
  if (intensity.total_rate == 0.0) return path;

  StreamRng rng(derive_seed(seed, "point-path"));
  std::poisson_distribution<std::size_t> count(intensity.total_rate * horizon);
  const std::size_t k = count(rng);
  // 1 - u lies in (0, 1], so times land in (0, T].
  std::vector<double> times(k);
  for (double& t : times) t = horizon * (1.0 - rng.uniform());
  for (;;) {
    std::sort(times.begin(), times.end());
    auto tie = std::adjacent_find(times.begin(), times.end());
    if (tie == times.end()) break;
    *tie = horizon * (1.0 - rng.uniform());
  }
  path.events.reserve(k);
  for (double t : times) path.events.push_back({t, intensity.marks.sample(rng)});
  return path;
}

PointPath make_point_path(double horizon, std::vector<JumpEvent> events,
                          IntensitySpec intensity) {
  PointPath path;
  path.horizon = horizon;
  path.events = std::move(events);
  path.intensity = std::move(intensity);
  path.validate();
  return path;
}

std::size_t counting_measure(const PointPath& path, double t,
                             const MarkPredicate& predicate) {
  if (t < 0.0 || t > path.horizon) {
    throw std::out_of_range("counting_measure: t outside [0, T]");
  }
  std::size_t n = 0;
  for (const auto& e : path.events) {
    if (e.time > t) break;
    if (!predicate || predicate(e.mark)) ++n;
  }
  return n;
}

std::size_t jump_count(const PointPath& path) { return path.events.size(); }

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_point_path(std::ostream& out, const PointPath& path) {
  out << "horizon " << fmt(path.horizon) << "\n";
  out << "seed " << path.source_seed << "\n";
  for (const auto& e : path.events) {
    out << fmt(e.time);
    for (double z : e.mark) out << "," << fmt(z);
    out << "\n";
  }
}

std::string format_point_path(const PointPath& path) {
  std::ostringstream os;
  write_point_path(os, path);
  return os.str();
}

PointPath read_point_path(std::istream& in) {
  PointPath path;
  std::string line;
  std::size_t lineno = 0;
  bool have_horizon = false;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error("point path line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("horizon ", 0) == 0) {
      path.horizon = std::stod(line.substr(8));
      have_horizon = true;
      continue;
    }
    if (line.rfind("seed ", 0) == 0) {
      path.source_seed = std::stoull(line.substr(5));
      continue;
    }
    JumpEvent e;
    std::istringstream fields(line);
    std::string field;
    bool first = true;
    while (std::getline(fields, field, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(field, &used);
      } catch (const std::exception&) {
        fail("malformed number '" + field + "'");
      }
      if (used != field.size()) fail("malformed number '" + field + "'");
      if (first) e.time = v; else e.mark.push_back(v);
      first = false;
    }
    if (first) fail("empty event");
    if (e.mark.empty()) e.mark.push_back(1.0);
    path.events.push_back(std::move(e));
  }
  if (!have_horizon) throw std::runtime_error("point path: missing horizon line");
  path.validate();
  return path;
}

std::uint64_t digest(const PointPath& path) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFF;
      h *= 0x100000001B3ULL;
    }
  };
  feed(path.horizon);
  for (const auto& e : path.events) {
    feed(e.time);
    for (double z : e.mark) feed(z);
  }
  return h;
}

}  // namespace mfcn
