#pragma once

// Small cost functions shared by the solver tests and the acceptance suite.

#include <span>

#include "f2f/nlls.hpp"
#include "f2f/se3.hpp"

namespace testcost {

using f2f::Mat3;
using f2f::Quat;
using f2f::Vec3;
using f2f::nlls::CostFunction;

/// r = A x - b on one Euclidean block.
class LinearCost : public CostFunction {
 public:
  LinearCost(Eigen::MatrixXd A, Eigen::VectorXd b) : A_(std::move(A)), b_(std::move(b)) {}
  int residual_dim() const override { return static_cast<int>(A_.rows()); }
  void evaluate(std::span<const double* const> params, double* residual,
                std::span<double* const> jacobians) const override {
    Eigen::Map<const Eigen::VectorXd> x(params[0], A_.cols());
    Eigen::Map<Eigen::VectorXd>(residual, A_.rows()) = A_ * x - b_;
    if (jacobians[0] != nullptr) Eigen::Map<Eigen::MatrixXd>(jacobians[0], A_.rows(), A_.cols()) = A_;
  }

 private:
  Eigen::MatrixXd A_;
  Eigen::VectorXd b_;
};

/// r = A_1 x_1 + A_2 x_2 - b over two Euclidean blocks.
class LinearPairCost : public CostFunction {
 public:
  LinearPairCost(Eigen::MatrixXd A1, Eigen::MatrixXd A2, Eigen::VectorXd b)
      : A1_(std::move(A1)), A2_(std::move(A2)), b_(std::move(b)) {}
  int residual_dim() const override { return static_cast<int>(b_.size()); }
  void evaluate(std::span<const double* const> params, double* residual,
                std::span<double* const> jacobians) const override {
    Eigen::Map<const Eigen::VectorXd> x1(params[0], A1_.cols()), x2(params[1], A2_.cols());
    Eigen::Map<Eigen::VectorXd>(residual, b_.size()) = A1_ * x1 + A2_ * x2 - b_;
    if (jacobians[0] != nullptr) Eigen::Map<Eigen::MatrixXd>(jacobians[0], b_.size(), A1_.cols()) = A1_;
    if (jacobians[1] != nullptr) Eigen::Map<Eigen::MatrixXd>(jacobians[1], b_.size(), A2_.cols()) = A2_;
  }

 private:
  Eigen::MatrixXd A1_, A2_;
  Eigen::VectorXd b_;
};

/// r = Log(target^T q), rotation residual on one quaternion block.
class RotationCost : public CostFunction {
 public:
  explicit RotationCost(Quat target) : target_(target) {}
  int residual_dim() const override { return 3; }
  void evaluate(std::span<const double* const> params, double* r, std::span<double* const> jac) const override {
    const Quat q(params[0][3], params[0][0], params[0][1], params[0][2]);
    const Vec3 e = f2f::quat_log(target_.conjugate() * q);
    Eigen::Map<Vec3> res(r);
    res = e;
    if (jac[0] != nullptr) {
      Eigen::Map<Mat3> J(jac[0]);
      J = f2f::right_jacobian_inv(e);
    }
  }

 private:
  Quat target_;
};

}  // namespace testcost
