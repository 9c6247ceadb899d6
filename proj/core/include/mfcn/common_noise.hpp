#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mfcn/model.hpp"

namespace mfcn {

struct JumpEvent {
  double time = 0.0;
  Vector mark;
};

/// One realization of the common Poisson noise: sorted jump times in (0, T]
/// with their marks.
struct PointPath {
  double horizon = 1.0;
  std::vector<JumpEvent> events;
  std::uint64_t source_seed = 0;
  IntensitySpec intensity;

  std::vector<double> times() const;
  void validate() const;
};

/// Count, then i.i.d. uniform times sorted; marks i.i.d. from the mark law.
PointPath sample_point_path(const IntensitySpec& intensity, double horizon,
                            std::uint64_t seed);

/// A fixed path built from explicit events (times must be increasing).
PointPath make_point_path(double horizon, std::vector<JumpEvent> events,
                          IntensitySpec intensity = {});

using MarkPredicate = std::function<bool(std::span<const double>)>;

/// #{events with time <= t and predicate(mark)}.
std::size_t counting_measure(const PointPath& path, double t,
                             const MarkPredicate& predicate = {});
std::size_t jump_count(const PointPath& path);

/// Plain text record: "horizon <T>", "seed <s>", then one "time,mark..."
/// line per event, 17 significant digits.
void write_point_path(std::ostream& out, const PointPath& path);
PointPath read_point_path(std::istream& in);
std::string format_point_path(const PointPath& path);

/// FNV-1a over the exact bit patterns of times and marks.
std::uint64_t digest(const PointPath& path);

}  // namespace mfcn
