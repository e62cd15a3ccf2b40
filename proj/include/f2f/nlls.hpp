#pragma once

// Dense nonlinear least-squares: parameter blocks on R^n or the unit
// quaternion manifold, robust residual blocks, Levenberg-Marquardt and
// Schur-complement marginalization into a linearized prior.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace f2f::nlls {

/// kQuaternion blocks store (x, y, z, w) and update as q <- q ⊗ Exp(delta).
enum class Manifold { kEuclidean, kQuaternion };

using BlockKey = std::uint64_t;
using ResidualId = std::size_t;

int ambient_size(Manifold m, int tangent_size);

/// Residual and Jacobians are already whitened. Jacobians are column-major
/// (residual_dim x tangent_dim) with respect to the tangent increment.
class CostFunction {
 public:
  virtual ~CostFunction() = default;
  virtual int residual_dim() const = 0;
  /// `jacobians[k]` may be null when block k is not needed.
  virtual void evaluate(std::span<const double* const> params, double* residual,
                        std::span<double* const> jacobians) const = 0;
};

struct Loss {
  enum class Kind { kNone, kHuber };
  Kind kind = Kind::kNone;
  double delta = 1.0;

  static Loss none() { return {}; }
  static Loss huber(double delta) { return {Kind::kHuber, delta}; }
};

/// IRLS weight of the Huber loss for a whitened residual magnitude.
double huber_weight(double r_whitened, double delta);

/// Robustified squared norm rho(s) for s = |r|^2.
double robust_cost(const Loss& loss, double squared_norm);

/// Linearized Gaussian prior || r_p + H_p (x ⊟ x_lin) ||^2.
struct PriorFactor {
  std::vector<BlockKey> keys;
  std::vector<Manifold> manifolds;
  std::vector<int> tangent_sizes;
  std::vector<std::vector<double>> linearization;
  Eigen::MatrixXd sqrt_information;  // H_p
  Eigen::VectorXd residual;          // r_p

  int tangent_dim() const;
  bool empty() const { return keys.empty(); }
  /// H_p^T H_p
  Eigen::MatrixXd information() const { return sqrt_information.transpose() * sqrt_information; }
};

struct SolverOptions {
  int max_iterations = 30;
  double gradient_tolerance = 1e-8;
  double parameter_tolerance = 1e-10;
  double function_tolerance = 1e-12;
  double initial_damping = 1e-4;
  double max_damping = 1e12;
};

struct SolverSummary {
  bool converged = false;
  bool failed = false;
  int iterations = 0;
  int accepted_steps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<double> accepted_costs;  // cost after each accepted step
  std::vector<double> damping_history;  // damping used for each trial step
  std::string message;
};

class Problem {
 public:
  Problem() = default;
  Problem(const Problem&) = delete;
  Problem& operator=(const Problem&) = delete;
  Problem(Problem&&) = default;
  Problem& operator=(Problem&&) = default;

  /// `values` has the ambient size (3 for a 3-vector, 4 for a quaternion).
  void add_block(BlockKey key, std::span<const double> values, Manifold manifold);
  bool has_block(BlockKey key) const { return index_.count(key) != 0; }
  void set_constant(BlockKey key, bool constant);
  bool is_constant(BlockKey key) const;
  std::span<const double> values(BlockKey key) const;
  void set_values(BlockKey key, std::span<const double> values);
  Manifold manifold(BlockKey key) const;
  int tangent_size(BlockKey key) const;
  std::vector<BlockKey> block_keys() const;

  ResidualId add_residual(std::shared_ptr<const CostFunction> cost, std::vector<BlockKey> blocks,
                          Loss loss = Loss::none());
  void set_residual_enabled(ResidualId id, bool enabled);
  bool residual_enabled(ResidualId id) const;
  void set_residual_loss(ResidualId id, Loss loss);
  std::size_t residual_count() const { return residuals_.size(); }
  const std::vector<BlockKey>& residual_blocks(ResidualId id) const;

  void set_prior(PriorFactor prior);
  void clear_prior() { prior_.reset(); }
  const PriorFactor* prior() const { return prior_ ? &*prior_ : nullptr; }

  /// Whitened residual without loss.
  Eigen::VectorXd evaluate_residual(ResidualId id) const;
  /// 0.5 * sum of robustified squared norms over enabled residuals and prior.
  double cost() const;

 private:
  friend class ProblemAccess;

  struct Block {
    BlockKey key;
    Manifold manifold;
    std::vector<double> values;
    int tangent = 0;
    bool constant = false;
  };
  struct Residual {
    std::shared_ptr<const CostFunction> cost;
    std::vector<std::size_t> blocks;  // indices into blocks_
    std::vector<BlockKey> keys;
    Loss loss;
    bool enabled = true;
  };

  std::size_t index_of(BlockKey key) const;
  std::vector<const double*> param_pointers(const Residual& r) const;

  std::vector<Block> blocks_;
  std::map<BlockKey, std::size_t> index_;
  std::vector<Residual> residuals_;
  std::optional<PriorFactor> prior_;
};

/// Levenberg-Marquardt on the dense normal equations. Each linearization first
/// tries the undamped Gauss-Newton step; rejected trials raise the damping,
/// starting at `initial_damping`, applied as lambda * diag(H).
SolverSummary solve_lm(Problem& problem, const SolverOptions& options = {});

/// Joint covariance of the requested (non-constant) blocks' tangents at the
/// current values. Throws f2f::Error on singular normal equations.
Eigen::MatrixXd marginal_covariance(const Problem& problem, std::span<const BlockKey> keys);

/// Eliminates `drop` from the Gauss-Newton system built from every enabled
/// residual connected to it plus the current prior. Constant blocks are
/// treated as known. The returned prior replaces the problem's prior and is
/// expressed over the remaining connected blocks, linearized at the current
/// values.
PriorFactor marginalize(const Problem& problem, std::span<const BlockKey> drop);

/// Dense Schur complement of a Gauss-Newton system (H, b = J^T r): the leading
/// `drop` dimensions are eliminated. Returns {H_marg, b_marg}.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> schur_complement(const Eigen::MatrixXd& H,
                                                             const Eigen::VectorXd& b, int drop);

/// Square-root factor of an information-form system: J^T J = H (negative
/// eigenvalues clipped to zero) and J^T r = b.
void information_to_sqrt(const Eigen::MatrixXd& H, const Eigen::VectorXd& b,
                         Eigen::MatrixXd& sqrt_info, Eigen::VectorXd& residual);

}  // namespace f2f::nlls
