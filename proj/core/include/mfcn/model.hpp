#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfcn/measures.hpp"

namespace mfcn {

class StreamRng;

using Vector = std::vector<double>;

/// Model coefficients b, sigma, gamma, f. Implementations must be pure and
/// safe to call concurrently.
class Coefficients {
 public:
  virtual ~Coefficients() = default;

  /// b(t, x, mu, u) -> R^n.
  virtual void drift(double t, std::span<const double> x, const ParticleCloud& mu,
                     std::span<const double> u, std::span<double> out) const = 0;
  /// sigma(t, x, mu, u) -> R^{n x d}, row-major.
  virtual void diffusion(double t, std::span<const double> x,
                         const ParticleCloud& mu, std::span<const double> u,
                         std::span<double> out) const = 0;
  /// gamma(t, x, mu, z) -> R^n. Uncontrolled.
  virtual void jump(double t, std::span<const double> x, const ParticleCloud& mu,
                    std::span<const double> z, std::span<double> out) const = 0;
  /// f(t, x, mu, u).
  virtual double running_cost(double t, std::span<const double> x,
                              const ParticleCloud& mu,
                              std::span<const double> u) const = 0;

  /// False when no coefficient reads mu; lets the simulator skip building
  /// the empirical measure at every step.
  virtual bool uses_measure() const { return true; }
};

/// Coefficients assembled from callables; convenient for small hand-coded
/// problems. Unset members default to zero.
struct FunctionCoefficients final : Coefficients {
  using VectorFn = std::function<void(double, std::span<const double>,
                                      const ParticleCloud&,
                                      std::span<const double>, std::span<double>)>;
  using ScalarFn = std::function<double(double, std::span<const double>,
                                        const ParticleCloud&,
                                        std::span<const double>)>;
  VectorFn b, sigma, gamma;
  ScalarFn f;
  bool measure_dependent = true;

  void drift(double t, std::span<const double> x, const ParticleCloud& mu,
             std::span<const double> u, std::span<double> out) const override;
  void diffusion(double t, std::span<const double> x, const ParticleCloud& mu,
                 std::span<const double> u, std::span<double> out) const override;
  void jump(double t, std::span<const double> x, const ParticleCloud& mu,
            std::span<const double> z, std::span<double> out) const override;
  double running_cost(double t, std::span<const double> x, const ParticleCloud& mu,
                      std::span<const double> u) const override;
  bool uses_measure() const override { return measure_dependent; }
};

/// Compact control set: an axis-aligned box or a finite list of points.
struct ControlSet {
  Vector lower, upper;        // box form
  std::vector<Vector> points; // finite form (used when non-empty)

  static ControlSet box(Vector lower, Vector upper);
  static ControlSet finite(std::vector<Vector> points);

  bool is_finite() const { return !points.empty(); }
  std::size_t dim() const;
  bool contains(std::span<const double> u, double tol = 1e-12) const;
  void validate() const;
};

/// Normalized mark law nu(dz)/nu(Z): finite list with probabilities, or a
/// box with uniform product density.
struct MarkDistribution {
  std::vector<Vector> marks;
  std::vector<double> probabilities;
  Vector lower, upper;

  static MarkDistribution finite(std::vector<Vector> marks,
                                 std::vector<double> probabilities);
  static MarkDistribution single(double mark = 1.0);
  static MarkDistribution box(Vector lower, Vector upper);

  bool is_finite() const { return !marks.empty(); }
  std::size_t dim() const;
  Vector sample(StreamRng& rng) const;
  void validate() const;
};

struct IntensitySpec {
  double total_rate = 0.0;  // nu(Z)
  MarkDistribution marks = MarkDistribution::single();

  void validate() const;
};

/// Initial law lambda: independent Gaussian coordinates (a Dirac mass when
/// every standard deviation is zero).
struct InitialLaw {
  Vector mean;
  Vector stddev;

  std::size_t dim() const { return mean.size(); }
  void validate() const;
};

/// dX = (aX + b_gain u) dt + sigma dW + c z X_- dN, f = q (x - s m)^2 + r u^2
/// where m is the population mean and s the mean-field coupling.
struct LqParams {
  double a = 0.5;
  double b_gain = 1.0;
  double sigma = 0.2;
  double jump_scale = 0.1;
  double cost_q = 1.0;
  double cost_r = 1.0;
  double coupling = 0.0;

  void validate() const;
};

struct Problem {
  std::string name;
  std::size_t dim_state = 1;
  std::size_t dim_noise = 1;
  double horizon = 1.0;
  double moment_order = 4.0;
  std::shared_ptr<const Coefficients> coefficients;
  ControlSet control_set;
  IntensitySpec intensity;
  InitialLaw initial_law;
  double declared_lipschitz = 1.0;
  /// Present for the built-in linear-quadratic family; enables the Riccati
  /// oracle.
  std::optional<LqParams> lq;

  void validate() const;
  Problem with_initial_law(InitialLaw law) const;
  Problem with_intensity(IntensitySpec spec) const;
};

Problem make_lq_problem(const LqParams& params, const IntensitySpec& intensity,
                        double initial_mean, double initial_std, double horizon);

/// Built-in benchmarks by name: "lq1d" (no mean-field coupling) and
/// "lq1d-meanfield" (coupling defaults to 0.1).
Problem make_benchmark(const std::string& name, LqParams params,
                       const IntensitySpec& intensity, double initial_mean,
                       double initial_std, double horizon);
std::vector<std::string> benchmark_names();

struct ProbeOptions {
  double state_half_width = 5.0;
  std::size_t cloud_size = 16;
};

struct CoefficientProbe {
  std::string name;
  double ratio_state = 0.0;    // |g(x') - g(x)| / |x - x'|
  double ratio_measure = 0.0;  // |g(mu') - g(mu)| / W2(mu, mu')
  double ratio_joint = 0.0;    // |g(x',mu') - g(x,mu)| / (|x-x'| + W2)
  double ratio_control = 0.0;  // informational, not part of the check
  bool flagged = false;
};

struct ValidationReport {
  CoefficientProbe drift{"drift"};
  CoefficientProbe diffusion{"diffusion"};
  CoefficientProbe jump{"jump"};
  double growth_ratio = 0.0;  // max |gamma| / (1 + |x| + M2(mu))
  bool growth_flagged = false;
  std::size_t probes = 0;

  bool flagged() const {
    return drift.flagged || diffusion.flagged || jump.flagged || growth_flagged;
  }
};

/// Finite-difference probes of the Lipschitz and growth assumptions on
/// random pairs of inputs. A ratio above 1.01 times the declared constant
/// raises a flag. Non-finite coefficient output throws.
ValidationReport validate_problem(const Problem& problem, std::size_t probe_budget,
                                  std::uint64_t seed, const ProbeOptions& options = {});

/// phi(x) = x^T A x + b^T x + c.
struct QuadraticForm {
  std::size_t dim = 1;
  Vector A;  // dim x dim, row-major
  Vector b;
  double c = 0.0;

  static QuadraticForm identity_coordinate(std::size_t dim, std::size_t k);  // x_k
  static QuadraticForm squared_norm(std::size_t dim);                        // |x|^2

  double value(std::span<const double> x) const;
  void gradient(std::span<const double> x, std::span<double> out) const;
  /// A + A^T.
  Vector hessian() const;
};

/// Generator L phi = b . grad phi + 1/2 tr(sigma sigma^T hess phi).
double eval_generator(const Problem& problem, const QuadraticForm& phi, double t,
                      std::span<const double> x, const ParticleCloud& mu,
                      std::span<const double> u);

}  // namespace mfcn
