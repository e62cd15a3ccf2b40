#include "f2f/nlls.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "f2f/error.hpp"
#include "f2f/se3.hpp"

namespace f2f::nlls {

int ambient_size(Manifold m, int tangent_size) {
  return m == Manifold::kQuaternion ? 4 : tangent_size;
}

double huber_weight(double r_whitened, double delta) {
  const double a = std::abs(r_whitened);
  return a <= delta ? 1.0 : delta / a;
}

double robust_cost(const Loss& loss, double squared_norm) {
  if (loss.kind == Loss::Kind::kNone) return squared_norm;
  const double d2 = loss.delta * loss.delta;
  if (squared_norm <= d2) return squared_norm;
  return 2.0 * loss.delta * std::sqrt(squared_norm) - d2;
}

int PriorFactor::tangent_dim() const {
  return std::accumulate(tangent_sizes.begin(), tangent_sizes.end(), 0);
}

namespace {

Quat quat_from(const double* x) { return Quat(x[3], x[0], x[1], x[2]); }

void quat_to(const Quat& q, double* x) {
  x[0] = q.x();
  x[1] = q.y();
  x[2] = q.z();
  x[3] = q.w();
}

// x ⊟ lin and its Jacobian w.r.t. the tangent increment of x.
void boxminus(Manifold m, int tangent, const double* x, const double* lin, double* out,
              Eigen::MatrixXd* jac) {
  if (m == Manifold::kQuaternion) {
    const Vec3 d = quat_log(quat_from(lin).conjugate() * quat_from(x));
    for (int k = 0; k < 3; ++k) out[k] = d[k];
    if (jac != nullptr) *jac = right_jacobian_inv(d);
    return;
  }
  for (int k = 0; k < tangent; ++k) out[k] = x[k] - lin[k];
  if (jac != nullptr) jac->setIdentity(tangent, tangent);
}

// Scaled dense solve; returns false when the matrix is not positive definite.
bool solve_scaled(const Eigen::MatrixXd& A, const Eigen::VectorXd& rhs, Eigen::VectorXd& x) {
  const Eigen::Index n = A.rows();
  Eigen::VectorXd s(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = A(i, i);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    s(i) = 1.0 / std::sqrt(d);
  }
  const Eigen::MatrixXd As = s.asDiagonal() * A * s.asDiagonal();
  Eigen::LLT<Eigen::MatrixXd> llt(As);
  if (llt.info() != Eigen::Success) return false;
  x = s.asDiagonal() * llt.solve(s.asDiagonal() * rhs);
  return x.allFinite();
}

}  // namespace

// ---------------------------------------------------------------------------
// Problem

void Problem::add_block(BlockKey key, std::span<const double> values, Manifold manifold) {
  if (has_block(key)) throw std::invalid_argument("Problem::add_block: duplicate key");
  Block b;
  b.key = key;
  b.manifold = manifold;
  b.values.assign(values.begin(), values.end());
  if (manifold == Manifold::kQuaternion) {
    if (values.size() != 4) throw std::invalid_argument("quaternion block needs 4 values");
    const Quat q = quat_from(b.values.data()).normalized();
    quat_to(q, b.values.data());
    b.tangent = 3;
  } else {
    b.tangent = static_cast<int>(values.size());
  }
  index_[key] = blocks_.size();
  blocks_.push_back(std::move(b));
}

std::size_t Problem::index_of(BlockKey key) const {
  auto it = index_.find(key);
  if (it == index_.end()) throw std::out_of_range("Problem: unknown block key");
  return it->second;
}

void Problem::set_constant(BlockKey key, bool constant) { blocks_[index_of(key)].constant = constant; }
bool Problem::is_constant(BlockKey key) const { return blocks_[index_of(key)].constant; }

std::span<const double> Problem::values(BlockKey key) const { return blocks_[index_of(key)].values; }

void Problem::set_values(BlockKey key, std::span<const double> values) {
  Block& b = blocks_[index_of(key)];
  if (values.size() != b.values.size()) throw std::invalid_argument("Problem::set_values: size");
  b.values.assign(values.begin(), values.end());
  if (b.manifold == Manifold::kQuaternion) quat_to(quat_from(b.values.data()).normalized(), b.values.data());
}

Manifold Problem::manifold(BlockKey key) const { return blocks_[index_of(key)].manifold; }
int Problem::tangent_size(BlockKey key) const { return blocks_[index_of(key)].tangent; }

std::vector<BlockKey> Problem::block_keys() const {
  std::vector<BlockKey> keys;
  keys.reserve(blocks_.size());
  for (const auto& b : blocks_) keys.push_back(b.key);
  return keys;
}

ResidualId Problem::add_residual(std::shared_ptr<const CostFunction> cost, std::vector<BlockKey> blocks,
                                 Loss loss) {
  Residual r;
  r.cost = std::move(cost);
  r.keys = std::move(blocks);
  for (BlockKey k : r.keys) r.blocks.push_back(index_of(k));
  r.loss = loss;
  residuals_.push_back(std::move(r));
  return residuals_.size() - 1;
}

void Problem::set_residual_enabled(ResidualId id, bool enabled) { residuals_.at(id).enabled = enabled; }
bool Problem::residual_enabled(ResidualId id) const { return residuals_.at(id).enabled; }
void Problem::set_residual_loss(ResidualId id, Loss loss) { residuals_.at(id).loss = loss; }
const std::vector<BlockKey>& Problem::residual_blocks(ResidualId id) const { return residuals_.at(id).keys; }

void Problem::set_prior(PriorFactor prior) {
  for (BlockKey k : prior.keys) index_of(k);
  if (prior.sqrt_information.cols() != prior.tangent_dim()) {
    throw std::invalid_argument("Problem::set_prior: sqrt information has wrong width");
  }
  prior_ = std::move(prior);
}

std::vector<const double*> Problem::param_pointers(const Residual& r) const {
  std::vector<const double*> p;
  p.reserve(r.blocks.size());
  for (std::size_t b : r.blocks) p.push_back(blocks_[b].values.data());
  return p;
}

Eigen::VectorXd Problem::evaluate_residual(ResidualId id) const {
  const Residual& r = residuals_.at(id);
  Eigen::VectorXd out(r.cost->residual_dim());
  const auto params = param_pointers(r);
  std::vector<double*> jac(r.blocks.size(), nullptr);
  r.cost->evaluate(params, out.data(), jac);
  return out;
}

// ---------------------------------------------------------------------------
// Linearization

class ProblemAccess {
 public:
  struct System {
    Eigen::MatrixXd H;
    Eigen::VectorXd g;
    double cost = 0.0;
  };

  /// offsets[b] = column of block b, or -1 when constant / not included.
  static std::vector<int> variable_offsets(const Problem& p, int& dim) {
    std::vector<int> off(p.blocks_.size(), -1);
    dim = 0;
    for (std::size_t b = 0; b < p.blocks_.size(); ++b) {
      if (p.blocks_[b].constant) continue;
      off[b] = dim;
      dim += p.blocks_[b].tangent;
    }
    return off;
  }

  static double prior_cost(const Problem& p) {
    if (!p.prior_) return 0.0;
    Eigen::VectorXd r = prior_residual(p, nullptr, {}, 0);
    return r.squaredNorm();
  }

  /// Prior residual; accumulates its Jacobian into `J` (rows x dim) when given.
  static Eigen::VectorXd prior_residual(const Problem& p, Eigen::MatrixXd* J,
                                        const std::vector<int>& offsets, int dim) {
    const PriorFactor& prior = *p.prior_;
    const int n = prior.tangent_dim();
    Eigen::VectorXd dx(n);
    if (J != nullptr) J->setZero(prior.sqrt_information.rows(), dim);
    int col = 0;
    for (std::size_t k = 0; k < prior.keys.size(); ++k) {
      const std::size_t b = p.index_of(prior.keys[k]);
      const int t = prior.tangent_sizes[k];
      Eigen::MatrixXd D;
      boxminus(prior.manifolds[k], t, p.blocks_[b].values.data(), prior.linearization[k].data(),
               dx.data() + col, J != nullptr ? &D : nullptr);
      if (J != nullptr && offsets[b] >= 0) {
        J->middleCols(offsets[b], t) += prior.sqrt_information.middleCols(col, t) * D;
      }
      col += t;
    }
    return prior.residual + prior.sqrt_information * dx;
  }

  static double cost(const Problem& p) {
    double c = 0.0;
    std::vector<double> res;
    for (const auto& r : p.residuals_) {
      if (!r.enabled) continue;
      res.resize(static_cast<std::size_t>(r.cost->residual_dim()));
      const auto params = p.param_pointers(r);
      std::vector<double*> jac(r.blocks.size(), nullptr);
      r.cost->evaluate(params, res.data(), jac);
      double s = 0.0;
      for (double x : res) s += x * x;
      c += robust_cost(r.loss, s);
    }
    c += prior_cost(p);
    return 0.5 * c;
  }

  /// Gauss-Newton system over the blocks selected by `offsets`, restricted to
  /// `residual_ids` (all enabled residuals when null), plus the prior when
  /// `with_prior`.
  static System linearize(const Problem& p, const std::vector<int>& offsets, int dim,
                          const std::vector<std::size_t>* residual_ids, bool with_prior) {
    System sys;
    sys.H.setZero(dim, dim);
    sys.g.setZero(dim);
    std::vector<double> scratch;
    std::vector<double> res;
    std::vector<double*> jac_ptrs;
    std::vector<int> local_offsets;
    Eigen::MatrixXd Hl;
    Eigen::VectorXd gl;

    auto process = [&](const Problem::Residual& r) {
      const int rdim = r.cost->residual_dim();
      int cols = 0;
      local_offsets.clear();
      for (std::size_t b : r.blocks) {
        local_offsets.push_back(cols);
        cols += p.blocks_[b].tangent;
      }
      scratch.assign(static_cast<std::size_t>(rdim * cols), 0.0);
      res.resize(static_cast<std::size_t>(rdim));
      jac_ptrs.assign(r.blocks.size(), nullptr);
      bool any_variable = false;
      for (std::size_t k = 0; k < r.blocks.size(); ++k) {
        if (offsets[r.blocks[k]] < 0) continue;
        jac_ptrs[k] = scratch.data() + static_cast<std::ptrdiff_t>(local_offsets[k]) * rdim;
        any_variable = true;
      }
      const auto params = p.param_pointers(r);
      r.cost->evaluate(params, res.data(), jac_ptrs);
      Eigen::Map<const Eigen::VectorXd> rv(res.data(), rdim);
      const double s = rv.squaredNorm();
      sys.cost += 0.5 * robust_cost(r.loss, s);
      if (!any_variable) return;
      const double w = r.loss.kind == Loss::Kind::kHuber ? huber_weight(std::sqrt(s), r.loss.delta) : 1.0;
      Eigen::Map<const Eigen::MatrixXd> J(scratch.data(), rdim, cols);
      Hl.resize(cols, cols);
      Hl.noalias() = J.transpose() * J;
      gl.resize(cols);
      gl.noalias() = J.transpose() * rv;
      for (std::size_t a = 0; a < r.blocks.size(); ++a) {
        const int oa = offsets[r.blocks[a]];
        if (oa < 0) continue;
        const int ta = p.blocks_[r.blocks[a]].tangent;
        const int la = local_offsets[a];
        for (int i = 0; i < ta; ++i) sys.g(oa + i) += w * gl(la + i);
        // Upper triangle only; mirrored once all residuals are in.
        for (std::size_t b = 0; b < r.blocks.size(); ++b) {
          const int ob = offsets[r.blocks[b]];
          if (ob < oa) continue;
          const int tb = p.blocks_[r.blocks[b]].tangent;
          const int lb = local_offsets[b];
          for (int j = 0; j < tb; ++j)
            for (int i = 0; i < ta; ++i) sys.H(oa + i, ob + j) += w * Hl(la + i, lb + j);
        }
      }
    };

    if (residual_ids == nullptr) {
      for (const auto& r : p.residuals_) {
        if (r.enabled) process(r);
      }
    } else {
      for (std::size_t id : *residual_ids) process(p.residuals_[id]);
    }
    sys.H.triangularView<Eigen::StrictlyLower>() = sys.H.transpose();

    if (with_prior && p.prior_) {
      Eigen::MatrixXd Jp;
      const Eigen::VectorXd rp = prior_residual(p, &Jp, offsets, dim);
      sys.cost += 0.5 * rp.squaredNorm();
      sys.H += Jp.transpose() * Jp;
      sys.g += Jp.transpose() * rp;
    }
    return sys;
  }

  static void apply_step(Problem& p, const std::vector<int>& offsets, const Eigen::VectorXd& delta) {
    for (std::size_t b = 0; b < p.blocks_.size(); ++b) {
      const int o = offsets[b];
      if (o < 0) continue;
      auto& blk = p.blocks_[b];
      if (blk.manifold == Manifold::kQuaternion) {
        const Quat q = quat_mul(quat_from(blk.values.data()), quat_exp(delta.segment<3>(o)));
        quat_to(q, blk.values.data());
      } else {
        for (int k = 0; k < blk.tangent; ++k) blk.values[static_cast<std::size_t>(k)] += delta(o + k);
      }
    }
  }

  static std::vector<std::vector<double>> snapshot(const Problem& p) {
    std::vector<std::vector<double>> s;
    s.reserve(p.blocks_.size());
    for (const auto& b : p.blocks_) s.push_back(b.values);
    return s;
  }

  static void restore(Problem& p, const std::vector<std::vector<double>>& s) {
    for (std::size_t b = 0; b < p.blocks_.size(); ++b) p.blocks_[b].values = s[b];
  }

  static double state_norm(const Problem& p, const std::vector<int>& offsets) {
    double s = 0.0;
    for (std::size_t b = 0; b < p.blocks_.size(); ++b) {
      if (offsets[b] < 0) continue;
      for (double x : p.blocks_[b].values) s += x * x;
    }
    return std::sqrt(s);
  }

  static const std::vector<Problem::Block>& blocks(const Problem& p) { return p.blocks_; }
  static const std::vector<Problem::Residual>& residuals(const Problem& p) { return p.residuals_; }
};

double Problem::cost() const { return ProblemAccess::cost(*this); }

// ---------------------------------------------------------------------------
// Levenberg-Marquardt

SolverSummary solve_lm(Problem& problem, const SolverOptions& options) {
  SolverSummary summary;
  if (problem.residual_count() == 0 && problem.prior() == nullptr) {
    summary.failed = true;
    summary.message = "no residual blocks";
    return summary;
  }
  int dim = 0;
  const std::vector<int> offsets = ProblemAccess::variable_offsets(problem, dim);
  auto sys = ProblemAccess::linearize(problem, offsets, dim, nullptr, true);
  summary.initial_cost = sys.cost;
  summary.final_cost = sys.cost;
  if (dim == 0) {
    summary.converged = true;
    summary.message = "no variable blocks";
    return summary;
  }

  double lambda = 0.0;
  while (summary.iterations < options.max_iterations) {
    if (sys.g.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      summary.converged = true;
      summary.message = "gradient tolerance reached";
      break;
    }
    ++summary.iterations;
    summary.damping_history.push_back(lambda);

    Eigen::MatrixXd A = sys.H;
    if (lambda > 0.0) {
      const double floor = std::max(sys.H.diagonal().maxCoeff(), 1.0) * 1e-12;
      for (int i = 0; i < dim; ++i) A(i, i) += lambda * std::max(sys.H(i, i), floor);
    }
    Eigen::VectorXd delta;
    const bool solved = solve_scaled(A, -sys.g, delta);

    bool accepted = false;
    if (solved) {
      if (delta.norm() <= options.parameter_tolerance *
                               (ProblemAccess::state_norm(problem, offsets) + options.parameter_tolerance)) {
        summary.converged = true;
        summary.message = "parameter tolerance reached";
        break;
      }
      const auto saved = ProblemAccess::snapshot(problem);
      ProblemAccess::apply_step(problem, offsets, delta);
      const double new_cost = ProblemAccess::cost(problem);
      if (std::isfinite(new_cost) && new_cost < sys.cost) {
        accepted = true;
        const double old_cost = sys.cost;
        ++summary.accepted_steps;
        summary.accepted_costs.push_back(new_cost);
        sys = ProblemAccess::linearize(problem, offsets, dim, nullptr, true);
        lambda = lambda > 0.0 ? lambda / 10.0 : 0.0;
        if (old_cost - new_cost <= options.function_tolerance * old_cost) {
          summary.converged = true;
          summary.message = "function tolerance reached";
          break;
        }
      } else {
        ProblemAccess::restore(problem, saved);
      }
    }
    if (!accepted) {
      lambda = lambda > 0.0 ? lambda * 10.0 : options.initial_damping;
      if (lambda > options.max_damping) {
        summary.failed = true;
        summary.message = solved ? "damping exceeded limit without a cost decrease"
                                 : "normal equations are rank deficient";
        break;
      }
    }
  }
  if (!summary.converged && !summary.failed && summary.message.empty()) {
    summary.message = "iteration limit reached";
  }
  summary.final_cost = sys.cost;
  return summary;
}

// ---------------------------------------------------------------------------
// Covariance and marginalization

Eigen::MatrixXd marginal_covariance(const Problem& problem, std::span<const BlockKey> keys) {
  int dim = 0;
  const std::vector<int> offsets = ProblemAccess::variable_offsets(problem, dim);
  const auto sys = ProblemAccess::linearize(problem, offsets, dim, nullptr, true);
  const auto& blocks = ProblemAccess::blocks(problem);

  std::vector<std::pair<int, int>> spans;
  int out_dim = 0;
  for (BlockKey k : keys) {
    auto idx = std::find_if(blocks.begin(), blocks.end(), [&](const auto& b) { return b.key == k; });
    if (idx == blocks.end()) throw std::out_of_range("marginal_covariance: unknown block");
    const int o = offsets[static_cast<std::size_t>(idx - blocks.begin())];
    if (o < 0) throw std::invalid_argument("marginal_covariance: block is constant");
    spans.emplace_back(o, idx->tangent);
    out_dim += idx->tangent;
  }
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(dim, out_dim);
  int c = 0;
  for (auto [o, t] : spans) {
    for (int k = 0; k < t; ++k) rhs(o + k, c + k) = 1.0;
    c += t;
  }
  Eigen::VectorXd s(dim);
  for (int i = 0; i < dim; ++i) {
    if (!(sys.H(i, i) > 0.0)) throw Error("marginal_covariance: singular normal equations");
    s(i) = 1.0 / std::sqrt(sys.H(i, i));
  }
  const Eigen::MatrixXd Hs = s.asDiagonal() * sys.H * s.asDiagonal();
  Eigen::LLT<Eigen::MatrixXd> llt(Hs);
  if (llt.info() != Eigen::Success) throw Error("marginal_covariance: singular normal equations");
  const Eigen::MatrixXd X = s.asDiagonal() * llt.solve(s.asDiagonal() * rhs);
  Eigen::MatrixXd out(out_dim, out_dim);
  int r = 0;
  for (auto [o, t] : spans) {
    out.middleRows(r, t) = X.middleRows(o, t);
    r += t;
  }
  return 0.5 * (out + out.transpose());
}

std::pair<Eigen::MatrixXd, Eigen::VectorXd> schur_complement(const Eigen::MatrixXd& H,
                                                             const Eigen::VectorXd& b, int drop) {
  const Eigen::Index n = H.rows();
  const Eigen::Index keep = n - drop;
  if (drop == 0) return {0.5 * (H + H.transpose()), b};
  const Eigen::MatrixXd Hdd = 0.5 * (H.topLeftCorner(drop, drop) + H.topLeftCorner(drop, drop).transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hdd);
  constexpr double kEps = 1e-8;
  const Eigen::VectorXd inv_ev =
      es.eigenvalues().unaryExpr([](double x) { return x > kEps ? 1.0 / x : 0.0; });
  const Eigen::MatrixXd Hdd_inv = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
  const Eigen::MatrixXd Hkd = H.bottomLeftCorner(keep, drop);
  Eigen::MatrixXd Hm = H.bottomRightCorner(keep, keep) - Hkd * Hdd_inv * Hkd.transpose();
  Eigen::VectorXd bm = b.tail(keep) - Hkd * Hdd_inv * b.head(drop);
  return {0.5 * (Hm + Hm.transpose()), bm};
}

void information_to_sqrt(const Eigen::MatrixXd& H, const Eigen::VectorXd& b, Eigen::MatrixXd& sqrt_info,
                         Eigen::VectorXd& residual) {
  if (H.rows() == 0) {
    sqrt_info.resize(0, 0);
    residual.resize(0);
    return;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (H + H.transpose()));
  constexpr double kEps = 1e-8;
  const Eigen::VectorXd ev = es.eigenvalues();
  const Eigen::VectorXd sq = ev.unaryExpr([](double x) { return x > kEps ? std::sqrt(x) : 0.0; });
  const Eigen::VectorXd isq = ev.unaryExpr([](double x) { return x > kEps ? 1.0 / std::sqrt(x) : 0.0; });
  sqrt_info = sq.asDiagonal() * es.eigenvectors().transpose();
  residual = isq.asDiagonal() * es.eigenvectors().transpose() * b;
}

PriorFactor marginalize(const Problem& problem, std::span<const BlockKey> drop) {
  const auto& blocks = ProblemAccess::blocks(problem);
  const auto& residuals = ProblemAccess::residuals(problem);

  std::vector<char> is_drop(blocks.size(), 0);
  for (BlockKey k : drop) {
    auto it = std::find_if(blocks.begin(), blocks.end(), [&](const auto& b) { return b.key == k; });
    if (it == blocks.end()) throw std::out_of_range("marginalize: unknown block");
    if (!it->constant) is_drop[static_cast<std::size_t>(it - blocks.begin())] = 1;
  }

  std::vector<std::size_t> ids;
  std::vector<char> involved(blocks.size(), 0);
  for (std::size_t id = 0; id < residuals.size(); ++id) {
    const auto& r = residuals[id];
    if (!r.enabled) continue;
    const bool touches = std::any_of(r.blocks.begin(), r.blocks.end(), [&](std::size_t b) { return is_drop[b]; });
    if (!touches) continue;
    ids.push_back(id);
    for (std::size_t b : r.blocks) involved[b] = 1;
  }
  const PriorFactor* old_prior = problem.prior();
  if (old_prior != nullptr) {
    for (BlockKey k : old_prior->keys) {
      auto it = std::find_if(blocks.begin(), blocks.end(), [&](const auto& b) { return b.key == k; });
      involved[static_cast<std::size_t>(it - blocks.begin())] = 1;
    }
  }

  // Dropped blocks first, then kept blocks in insertion order.
  std::vector<int> offsets(blocks.size(), -1);
  int dim = 0;
  int drop_dim = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (is_drop[b] && involved[b]) {
      offsets[b] = dim;
      dim += blocks[b].tangent;
    }
  }
  drop_dim = dim;
  PriorFactor out;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (is_drop[b] || !involved[b] || blocks[b].constant) continue;
    offsets[b] = dim;
    dim += blocks[b].tangent;
    out.keys.push_back(blocks[b].key);
    out.manifolds.push_back(blocks[b].manifold);
    out.tangent_sizes.push_back(blocks[b].tangent);
    out.linearization.push_back(blocks[b].values);
  }
  if (dim == drop_dim) return out;

  const auto sys = ProblemAccess::linearize(problem, offsets, dim, &ids, true);
  const auto [Hm, bm] = schur_complement(sys.H, sys.g, drop_dim);
  information_to_sqrt(Hm, bm, out.sqrt_information, out.residual);
  return out;
}

}  // namespace f2f::nlls
