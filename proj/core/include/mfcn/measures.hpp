#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mfcn {

/// Weighted empirical measure on R^n. Points are stored row-major
/// (particle-major). Uniform clouds keep no weight vector.
class ParticleCloud {
 public:
  ParticleCloud(std::size_t dim, std::vector<double> points);
  ParticleCloud(std::size_t dim, std::vector<double> points,
                std::vector<double> weights);

  static ParticleCloud dirac(std::span<const double> x);

  std::size_t size() const { return size_; }
  std::size_t dim() const { return dim_; }
  bool uniform() const { return weights_.empty(); }

  std::span<const double> point(std::size_t i) const {
    return {points_.data() + i * dim_, dim_};
  }
  double weight(std::size_t i) const {
    return weights_.empty() ? 1.0 / static_cast<double>(size_) : weights_[i];
  }
  std::span<const double> points() const { return points_; }

  /// Weighted mean, cached at construction.
  std::span<const double> mean() const { return mean_; }
  /// M_2 = (sum_i w_i |x_i|^2)^{1/2}, cached at construction.
  double second_moment() const { return second_moment_; }

  /// <phi, mu> for a scalar test function evaluated at each point.
  template <typename Fn>
  double integrate(Fn&& phi) const {
    double s = 0.0;
    for (std::size_t i = 0; i < size_; ++i) s += weight(i) * phi(point(i));
    return s;
  }

 private:
  void validate_and_summarize();

  std::size_t dim_ = 0;
  std::size_t size_ = 0;
  std::vector<double> points_;
  std::vector<double> weights_;
  std::vector<double> mean_;
  double second_moment_ = 0.0;
};

/// Cadlag flow of empirical measures on a time grid. `left_limits[k]`
/// holds mu_{t-} for the k-th entry of `jump_nodes`.
struct MeasureFlow {
  std::vector<double> grid;
  std::vector<ParticleCloud> clouds;
  std::vector<std::size_t> jump_nodes;
  std::vector<ParticleCloud> left_limits;

  /// Index into left_limits for a grid node, or -1 when the node is not a
  /// jump node.
  std::ptrdiff_t jump_slot(std::size_t node) const;
  /// mu_{t-} at a node: the stored left limit at jump nodes, the cloud
  /// itself elsewhere.
  const ParticleCloud& left_limit(std::size_t node) const;
  void validate() const;
};

/// Cadlag path on a time grid, right-continuous step interpolation
/// between nodes.
struct PiecewisePath {
  std::shared_ptr<const std::vector<double>> grid;
  std::size_t dim = 1;
  std::vector<double> values;  // grid->size() * dim
  std::vector<double> jump_times;

  std::size_t nodes() const { return grid ? grid->size() : 0; }
  std::span<const double> value(std::size_t node) const {
    return {values.data() + node * dim, dim};
  }
  /// Value at time t (step interpolation, right-continuous).
  std::span<const double> at(double t) const;
};

enum class TransportMethod { exact_1d, network_simplex, sliced };

std::string to_string(TransportMethod m);

struct WassersteinOptions {
  /// Exact transport LP is used when N*M stays at or below this size.
  double lp_size_limit = 4.0e6;
  std::size_t projections = 64;
  std::uint64_t projection_seed = 0x51ced;
  /// Force a method (tests compare the 1-D and LP routes).
  bool force_network_simplex = false;
};

struct WassersteinResult {
  double value = 0.0;
  TransportMethod method = TransportMethod::exact_1d;
  std::size_t projections = 0;  // nonzero only for the sliced estimate
};

WassersteinResult wasserstein2(const ParticleCloud& a, const ParticleCloud& b,
                               const WassersteinOptions& options = {});

/// Exact squared W2 between two weighted 1-D samples via quantile coupling.
double wasserstein2_squared_1d(std::span<const double> xa,
                               std::span<const double> wa,
                               std::span<const double> xb,
                               std::span<const double> wb);

/// M_p(mu) = (sum_i w_i |x_i|^p)^{1/p}.
double moment(const ParticleCloud& cloud, double order);

struct SkorokhodResult {
  double value = 0.0;
  /// Jump counts differ: only the identity time change was used.
  bool identity_only = false;
};

/// Skorokhod distance restricted to piecewise-linear time changes that map
/// the jump times of `a` onto those of `b` in order.
SkorokhodResult skorokhod_distance_restricted(const PiecewisePath& a,
                                              const PiecewisePath& b);

/// CSV with header "time,index,x0,...,weight".
void write_cloud_csv(std::ostream& out, const ParticleCloud& cloud,
                     double time, bool header = true);
void write_flow_csv(std::ostream& out, const MeasureFlow& flow);

}  // namespace mfcn
