#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "peftlab/errors.hpp"

namespace peftlab {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles with an optional gradient buffer of the
// same shape. Gradients accumulate across backward passes until the caller
// zeroes or drops them. Rank 1 and 2 cover every use here; scalars are
// shape {1}. A default-constructed Tensor is empty (size 0).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_flat(Shape shape, std::vector<double> values);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor row_matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(Index n);

  bool empty() const { return data_.size() == 0; }
  Index size() const { return data_.size(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  const Shape& shape() const { return shape_; }
  Index dim(int i) const;
  Index rows() const;  // rank 2 only
  Index cols() const;  // rank 2 only

  double operator[](Index i) const { return data_[i]; }
  double& operator[](Index i) { return data_[i]; }
  double at(Index r, Index c) const;
  double& at(Index r, Index c);

  VecMap vec() { return VecMap(data_.data(), data_.size()); }
  ConstVecMap vec() const { return ConstVecMap(data_.data(), data_.size()); }
  MatMap mat();            // rank-2 view
  ConstMatMap mat() const;

  bool all_finite() const { return data_.allFinite(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool has_grad() const { return grad_.size() != 0; }
  void ensure_grad();  // allocate zeros if absent
  void zero_grad();
  void drop_grad() { grad_.resize(0); }
  VecMap grad_vec();
  ConstVecMap grad_vec() const;
  MatMap grad_mat();  // rank-2 view of the gradient

 private:
  Shape shape_;
  Eigen::VectorXd data_;
  Eigen::VectorXd grad_;
};

}  // namespace peftlab
