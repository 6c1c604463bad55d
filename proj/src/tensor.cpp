#include "peftlab/tensor.hpp"

namespace peftlab {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  if (shape_.empty()) throw ShapeError("tensor: rank must be at least 1");
  for (Index d : shape_) {
    if (d <= 0) throw ShapeError("tensor: dimensions must be positive, got " + shape_str(shape_));
  }
  data_ = Eigen::VectorXd::Zero(shape_numel(shape_));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.data_.setConstant(value);
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t(Shape{1});
  t.data_[0] = value;
  return t;
}

Tensor Tensor::from_flat(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape));
  if (static_cast<Index>(values.size()) != t.size()) {
    throw ShapeError("from_flat: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(t.shape_));
  }
  for (Index i = 0; i < t.size(); ++i) t.data_[i] = values[static_cast<std::size_t>(i)];
  return t;
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return from_flat({static_cast<Index>(values.size())}, std::vector<double>(values));
}

Tensor Tensor::row_matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const Index r = static_cast<Index>(rows.size());
  if (r == 0) throw ShapeError("row_matrix: no rows");
  const Index c = static_cast<Index>(rows.begin()->size());
  Tensor t(Shape{r, c});
  Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != c) throw ShapeError("row_matrix: ragged rows");
    for (double v : row) t.data_[i++] = v;
  }
  return t;
}

Tensor Tensor::identity(Index n) {
  Tensor t(Shape{n, n});
  for (Index i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Index Tensor::dim(int i) const {
  if (i < 0 || i >= rank()) throw ShapeError("dim: axis out of range for " + shape_str(shape_));
  return shape_[static_cast<std::size_t>(i)];
}

Index Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows: tensor is not rank 2: " + shape_str(shape_));
  return shape_[0];
}

Index Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols: tensor is not rank 2: " + shape_str(shape_));
  return shape_[1];
}

double Tensor::at(Index r, Index c) const {
  return data_[r * cols() + c];
}

double& Tensor::at(Index r, Index c) {
  return data_[r * cols() + c];
}

MatMap Tensor::mat() {
  if (rank() != 2) throw ShapeError("mat: tensor is not rank 2: " + shape_str(shape_));
  return MatMap(data_.data(), shape_[0], shape_[1]);
}

ConstMatMap Tensor::mat() const {
  if (rank() != 2) throw ShapeError("mat: tensor is not rank 2: " + shape_str(shape_));
  return ConstMatMap(data_.data(), shape_[0], shape_[1]);
}

void Tensor::ensure_grad() {
  if (grad_.size() == 0) grad_ = Eigen::VectorXd::Zero(data_.size());
}

void Tensor::zero_grad() {
  if (grad_.size() != 0) grad_.setZero();
}

VecMap Tensor::grad_vec() {
  ensure_grad();
  return VecMap(grad_.data(), grad_.size());
}

ConstVecMap Tensor::grad_vec() const {
  if (!has_grad()) throw ShapeError("grad_vec: no gradient buffer");
  return ConstVecMap(grad_.data(), grad_.size());
}

MatMap Tensor::grad_mat() {
  if (rank() != 2) throw ShapeError("grad_mat: tensor is not rank 2: " + shape_str(shape_));
  ensure_grad();
  return MatMap(grad_.data(), shape_[0], shape_[1]);
}

}  // namespace peftlab
