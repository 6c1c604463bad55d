#include "peftlab/graph.hpp"

#include <cmath>
#include <memory>
#include <numbers>

namespace peftlab {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shapes disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void check_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank 2, got " + shape_str(t.shape()));
  }
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace

ValueId Graph::param(Tensor& t, bool trainable) {
  if (t.empty()) throw ShapeError("param: tensor is empty");
  Node n;
  n.bound = &t;
  n.requires_grad = trainable;
  nodes_.push_back(std::move(n));
  return ValueId{static_cast<std::int32_t>(nodes_.size() - 1)};
}

ValueId Graph::input(Tensor value) {
  if (value.empty()) throw ShapeError("input: tensor is empty");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return ValueId{static_cast<std::int32_t>(nodes_.size() - 1)};
}

ValueId Graph::append(Tensor value, std::vector<ValueId> inputs, BackwardFn backward) {
  if (value.empty()) throw ShapeError("append: tensor is empty");
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  for (ValueId in : n.inputs) {
    if (node(in).requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  nodes_.push_back(std::move(n));
  return ValueId{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Graph::Node& Graph::node(ValueId id) {
  if (!id.valid() || static_cast<std::size_t>(id.index) >= nodes_.size()) {
    throw ShapeError("graph: invalid node id");
  }
  return nodes_[static_cast<std::size_t>(id.index)];
}

const Graph::Node& Graph::node(ValueId id) const {
  if (!id.valid() || static_cast<std::size_t>(id.index) >= nodes_.size()) {
    throw ShapeError("graph: invalid node id");
  }
  return nodes_[static_cast<std::size_t>(id.index)];
}

const Tensor& Graph::value(ValueId id) const {
  const Node& n = node(id);
  return n.bound ? *n.bound : n.value;
}

double Graph::scalar_value(ValueId id) const {
  const Tensor& v = value(id);
  if (v.size() != 1) throw ShapeError("scalar_value: tensor has shape " + shape_str(v.shape()));
  return v[0];
}

bool Graph::requires_grad(ValueId id) const { return node(id).requires_grad; }

bool Graph::has_grad(ValueId id) const {
  const Node& n = node(id);
  return n.bound ? n.bound->has_grad() : n.grad.size() != 0;
}

ConstVecMap Graph::grad_vec(ValueId id) const {
  const Node& n = node(id);
  if (n.bound) return static_cast<const Tensor*>(n.bound)->grad_vec();
  if (n.grad.size() == 0) throw ShapeError("grad_vec: node has no gradient");
  return n.grad.vec();
}

ConstMatMap Graph::grad_mat(ValueId id) const {
  const Node& n = node(id);
  const Tensor& v = n.bound ? *n.bound : n.value;
  ConstVecMap flat = grad_vec(id);
  if (v.rank() != 2) throw ShapeError("grad_mat: node is not rank 2");
  return ConstMatMap(flat.data(), v.shape()[0], v.shape()[1]);
}

VecMap Graph::grad_acc_vec(ValueId id) {
  Node& n = node(id);
  if (n.bound) return n.bound->grad_vec();
  if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape());
  return n.grad.vec();
}

MatMap Graph::grad_acc_mat(ValueId id) {
  Node& n = node(id);
  const Tensor& v = n.bound ? *n.bound : n.value;
  if (v.rank() != 2) throw ShapeError("grad_acc_mat: node is not rank 2");
  VecMap flat = grad_acc_vec(id);
  return MatMap(flat.data(), v.shape()[0], v.shape()[1]);
}

void Graph::backward(ValueId root) {
  const Tensor& rv = value(root);
  if (rv.size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_str(rv.shape()));
  }
  if (!std::isfinite(rv[0])) throw DivergenceError("backward: root value is not finite");
  for (Node& n : nodes_) n.grad = Tensor();
  grad_acc_vec(root)(0) += 1.0;
  for (std::int32_t i = root.index; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backward || !n.requires_grad) continue;
    const ValueId id{i};
    if (!has_grad(id)) continue;  // never contributed to the root
    n.backward(*this, id);
  }
}

// ---- primitive ops ----------------------------------------------------

ValueId matmul(Graph& g, ValueId a, ValueId b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  check_rank2(av, "matmul");
  check_rank2(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  Tensor out(Shape{av.rows(), bv.cols()});
  out.mat().noalias() = av.mat() * bv.mat();
  return g.append(std::move(out), {a, b}, [a, b](Graph& g, ValueId self) {
    ConstMatMap d = g.grad_mat(self);
    if (g.requires_grad(a)) g.grad_acc_mat(a).noalias() += d * g.value(b).mat().transpose();
    if (g.requires_grad(b)) g.grad_acc_mat(b).noalias() += g.value(a).mat().transpose() * d;
  });
}

ValueId add(Graph& g, ValueId a, ValueId b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  check_same_shape(av, bv, "add");
  Tensor out = av;
  out.drop_grad();
  out.vec() += bv.vec();
  return g.append(std::move(out), {a, b}, [a, b](Graph& g, ValueId self) {
    ConstVecMap d = g.grad_vec(self);
    if (g.requires_grad(a)) g.grad_acc_vec(a) += d;
    if (g.requires_grad(b)) g.grad_acc_vec(b) += d;
  });
}

ValueId add_row_bias(Graph& g, ValueId x, ValueId bias) {
  const Tensor& xv = g.value(x);
  const Tensor& bv = g.value(bias);
  check_rank2(xv, "add_row_bias");
  if (bv.rank() != 1 || bv.size() != xv.cols()) {
    throw ShapeError("add_row_bias: bias " + shape_str(bv.shape()) + " does not match rows of " +
                     shape_str(xv.shape()));
  }
  Tensor out = xv;
  out.drop_grad();
  out.mat().rowwise() += bv.vec().transpose();
  return g.append(std::move(out), {x, bias}, [x, bias](Graph& g, ValueId self) {
    ConstMatMap d = g.grad_mat(self);
    if (g.requires_grad(x)) g.grad_acc_mat(x) += d;
    if (g.requires_grad(bias)) g.grad_acc_vec(bias) += d.colwise().sum().transpose();
  });
}

ValueId scale(Graph& g, ValueId x, double c) {
  Tensor out = g.value(x);
  out.drop_grad();
  out.vec() *= c;
  return g.append(std::move(out), {x}, [x, c](Graph& g, ValueId self) {
    if (g.requires_grad(x)) g.grad_acc_vec(x) += c * g.grad_vec(self);
  });
}

ValueId gelu(Graph& g, ValueId x) {
  Tensor out = g.value(x);
  out.drop_grad();
  out.vec() = out.vec().unaryExpr([](double v) { return v * norm_cdf(v); });
  return g.append(std::move(out), {x}, [x](Graph& g, ValueId self) {
    if (!g.requires_grad(x)) return;
    ConstVecMap d = g.grad_vec(self);
    ConstVecMap in = g.value(x).vec();
    VecMap acc = g.grad_acc_vec(x);
    for (Index i = 0; i < in.size(); ++i) {
      acc(i) += d(i) * (norm_cdf(in(i)) + in(i) * norm_pdf(in(i)));
    }
  });
}

namespace {

// Shared softmax node builder: `rows` selects whether slices are matrix rows
// (axis covering the last dimension) or columns.
ValueId softmax_node(Graph& g, ValueId x, bool rows) {
  const Tensor& xv = g.value(x);
  Tensor out = xv;
  out.drop_grad();
  const Index nr = xv.rank() == 2 ? xv.rows() : 1;
  const Index nc = xv.rank() == 2 ? xv.cols() : xv.size();
  MatMap m(out.vec().data(), nr, nc);
  if (rows) {
    for (Index r = 0; r < nr; ++r) {
      const double mx = m.row(r).maxCoeff();
      m.row(r) = (m.row(r).array() - mx).exp();
      m.row(r) /= m.row(r).sum();
    }
  } else {
    for (Index c = 0; c < nc; ++c) {
      const double mx = m.col(c).maxCoeff();
      m.col(c) = (m.col(c).array() - mx).exp();
      m.col(c) /= m.col(c).sum();
    }
  }
  return g.append(std::move(out), {x}, [x, rows, nr, nc](Graph& g, ValueId self) {
    if (!g.requires_grad(x)) return;
    ConstVecMap dflat = g.grad_vec(self);
    ConstVecMap yflat = g.value(self).vec();
    ConstMatMap d(dflat.data(), nr, nc);
    ConstMatMap y(yflat.data(), nr, nc);
    MatMap acc(g.grad_acc_vec(x).data(), nr, nc);
    if (rows) {
      for (Index r = 0; r < nr; ++r) {
        const double dot = d.row(r).cwiseProduct(y.row(r)).sum();
        acc.row(r).array() += y.row(r).array() * (d.row(r).array() - dot);
      }
    } else {
      for (Index c = 0; c < nc; ++c) {
        const double dot = d.col(c).cwiseProduct(y.col(c)).sum();
        acc.col(c).array() += y.col(c).array() * (d.col(c).array() - dot);
      }
    }
  });
}

}  // namespace

ValueId softmax(Graph& g, ValueId x, int axis) {
  const Tensor& xv = g.value(x);
  if (axis < 0 || axis >= xv.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(xv.shape()));
  }
  if (xv.rank() == 1) return softmax_node(g, x, true);
  return softmax_node(g, x, axis == 1);
}

ValueId log_softmax_rows(Graph& g, ValueId x) {
  const Tensor& xv = g.value(x);
  check_rank2(xv, "log_softmax_rows");
  Tensor out = xv;
  out.drop_grad();
  MatMap m = out.mat();
  for (Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    const double lse = mx + std::log((m.row(r).array() - mx).exp().sum());
    m.row(r).array() -= lse;
  }
  return g.append(std::move(out), {x}, [x](Graph& g, ValueId self) {
    if (!g.requires_grad(x)) return;
    ConstMatMap d = g.grad_mat(self);
    ConstMatMap y = g.value(self).mat();
    MatMap acc = g.grad_acc_mat(x);
    for (Index r = 0; r < d.rows(); ++r) {
      const double dsum = d.row(r).sum();
      acc.row(r).array() += d.row(r).array() - y.row(r).array().exp() * dsum;
    }
  });
}

ValueId layer_norm(Graph& g, ValueId x, ValueId gain, ValueId bias) {
  const Tensor& xv = g.value(x);
  const Tensor& gv = g.value(gain);
  const Tensor& bv = g.value(bias);
  check_rank2(xv, "layer_norm");
  if (gv.rank() != 1 || gv.size() != xv.cols() || bv.rank() != 1 || bv.size() != xv.cols()) {
    throw ShapeError("layer_norm: gain " + shape_str(gv.shape()) + " / bias " +
                     shape_str(bv.shape()) + " do not match " + shape_str(xv.shape()));
  }
  const Index rows = xv.rows();
  const Index cols = xv.cols();
  auto xhat = std::make_shared<RowMat>(rows, cols);
  auto inv_std = std::make_shared<Eigen::VectorXd>(rows);
  Tensor out(Shape{rows, cols});
  MatMap om = out.mat();
  ConstMatMap xm = xv.mat();
  for (Index r = 0; r < rows; ++r) {
    const double mu = xm.row(r).mean();
    const double var = (xm.row(r).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_std)(r) = inv;
    xhat->row(r) = (xm.row(r).array() - mu) * inv;
    om.row(r) = xhat->row(r).cwiseProduct(gv.vec().transpose()) + bv.vec().transpose();
  }
  return g.append(std::move(out), {x, gain, bias},
                  [x, gain, bias, xhat, inv_std](Graph& g, ValueId self) {
                    ConstMatMap d = g.grad_mat(self);
                    if (g.requires_grad(gain)) {
                      g.grad_acc_vec(gain) += d.cwiseProduct(*xhat).colwise().sum().transpose();
                    }
                    if (g.requires_grad(bias)) {
                      g.grad_acc_vec(bias) += d.colwise().sum().transpose();
                    }
                    if (!g.requires_grad(x)) return;
                    ConstVecMap gvv = g.value(gain).vec();
                    MatMap acc = g.grad_acc_mat(x);
                    for (Index r = 0; r < d.rows(); ++r) {
                      Eigen::RowVectorXd dxhat = d.row(r).cwiseProduct(gvv.transpose());
                      const double m1 = dxhat.mean();
                      const double m2 = dxhat.cwiseProduct(xhat->row(r)).mean();
                      acc.row(r).array() +=
                          (*inv_std)(r) *
                          (dxhat.array() - m1 - xhat->row(r).array() * m2);
                    }
                  });
}

ValueId transpose(Graph& g, ValueId x) {
  const Tensor& xv = g.value(x);
  check_rank2(xv, "transpose");
  Tensor out(Shape{xv.cols(), xv.rows()});
  out.mat() = xv.mat().transpose();
  return g.append(std::move(out), {x}, [x](Graph& g, ValueId self) {
    if (g.requires_grad(x)) g.grad_acc_mat(x) += g.grad_mat(self).transpose();
  });
}

ValueId concat_rows(Graph& g, ValueId a, ValueId b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  check_rank2(av, "concat_rows");
  check_rank2(bv, "concat_rows");
  if (av.cols() != bv.cols()) {
    throw ShapeError("concat_rows: column counts disagree: " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  }
  const Index p = av.rows();
  const Index q = bv.rows();
  Tensor out(Shape{p + q, av.cols()});
  out.mat().topRows(p) = av.mat();
  out.mat().bottomRows(q) = bv.mat();
  return g.append(std::move(out), {a, b}, [a, b, p, q](Graph& g, ValueId self) {
    ConstMatMap d = g.grad_mat(self);
    if (g.requires_grad(a)) g.grad_acc_mat(a) += d.topRows(p);
    if (g.requires_grad(b)) g.grad_acc_mat(b) += d.bottomRows(q);
  });
}

ValueId concat_cols(Graph& g, ValueId a, ValueId b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  check_rank2(av, "concat_cols");
  check_rank2(bv, "concat_cols");
  if (av.rows() != bv.rows()) {
    throw ShapeError("concat_cols: row counts disagree: " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  }
  const Index p = av.cols();
  const Index q = bv.cols();
  Tensor out(Shape{av.rows(), p + q});
  out.mat().leftCols(p) = av.mat();
  out.mat().rightCols(q) = bv.mat();
  return g.append(std::move(out), {a, b}, [a, b, p, q](Graph& g, ValueId self) {
    ConstMatMap d = g.grad_mat(self);
    if (g.requires_grad(a)) g.grad_acc_mat(a) += d.leftCols(p);
    if (g.requires_grad(b)) g.grad_acc_mat(b) += d.rightCols(q);
  });
}

ValueId slice_rows(Graph& g, ValueId x, Index r0, Index r1) {
  const Tensor& xv = g.value(x);
  check_rank2(xv, "slice_rows");
  if (r0 < 0 || r1 <= r0 || r1 > xv.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                     ") invalid for " + shape_str(xv.shape()));
  }
  Tensor out(Shape{r1 - r0, xv.cols()});
  out.mat() = xv.mat().middleRows(r0, r1 - r0);
  return g.append(std::move(out), {x}, [x, r0, r1](Graph& g, ValueId self) {
    if (g.requires_grad(x)) g.grad_acc_mat(x).middleRows(r0, r1 - r0) += g.grad_mat(self);
  });
}

ValueId slice_cols(Graph& g, ValueId x, Index c0, Index c1) {
  const Tensor& xv = g.value(x);
  check_rank2(xv, "slice_cols");
  if (c0 < 0 || c1 <= c0 || c1 > xv.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                     ") invalid for " + shape_str(xv.shape()));
  }
  Tensor out(Shape{xv.rows(), c1 - c0});
  out.mat() = xv.mat().middleCols(c0, c1 - c0);
  return g.append(std::move(out), {x}, [x, c0, c1](Graph& g, ValueId self) {
    if (g.requires_grad(x)) g.grad_acc_mat(x).middleCols(c0, c1 - c0) += g.grad_mat(self);
  });
}

ValueId mean_rows(Graph& g, ValueId x) {
  const Tensor& xv = g.value(x);
  check_rank2(xv, "mean_rows");
  const Index rows = xv.rows();
  Tensor out(Shape{1, xv.cols()});
  out.mat().row(0) = xv.mat().colwise().mean();
  return g.append(std::move(out), {x}, [x, rows](Graph& g, ValueId self) {
    if (!g.requires_grad(x)) return;
    ConstMatMap d = g.grad_mat(self);
    g.grad_acc_mat(x).rowwise() += d.row(0) / static_cast<double>(rows);
  });
}

ValueId replace_rows(Graph& g, ValueId x, const std::vector<int>& rows, ValueId row) {
  const Tensor& xv = g.value(x);
  const Tensor& rv = g.value(row);
  check_rank2(xv, "replace_rows");
  if (rv.rank() != 1 || rv.size() != xv.cols()) {
    throw ShapeError("replace_rows: row " + shape_str(rv.shape()) + " does not match " +
                     shape_str(xv.shape()));
  }
  for (int r : rows) {
    if (r < 0 || r >= xv.rows()) {
      throw ShapeError("replace_rows: row index " + std::to_string(r) + " out of range for " +
                       shape_str(xv.shape()));
    }
  }
  Tensor out = xv;
  out.drop_grad();
  for (int r : rows) out.mat().row(r) = rv.vec().transpose();
  auto sel = std::make_shared<std::vector<int>>(rows);
  return g.append(std::move(out), {x, row}, [x, row, sel](Graph& g, ValueId self) {
    ConstMatMap d = g.grad_mat(self);
    if (g.requires_grad(row)) {
      VecMap acc = g.grad_acc_vec(row);
      for (int r : *sel) acc += d.row(r).transpose();
    }
    if (g.requires_grad(x)) {
      RowMat dx = d;
      for (int r : *sel) dx.row(r).setZero();
      g.grad_acc_mat(x) += dx;
    }
  });
}

ValueId min2(Graph& g, ValueId a, ValueId b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.size() != 1 || bv.size() != 1) {
    throw ShapeError("min2: expected scalars, got " + shape_str(av.shape()) + " and " +
                     shape_str(bv.shape()));
  }
  const bool take_a = av[0] <= bv[0];
  return g.append(Tensor::scalar(take_a ? av[0] : bv[0]), {a, b},
                  [a, b, take_a](Graph& g, ValueId self) {
                    const ValueId chosen = take_a ? a : b;
                    if (g.requires_grad(chosen)) g.grad_acc_vec(chosen) += g.grad_vec(self);
                  });
}

ValueId weighted_combine(Graph& g, ValueId weights, const std::vector<ValueId>& terms) {
  const Tensor& wv = g.value(weights);
  if (wv.rank() != 1 || static_cast<std::size_t>(wv.size()) != terms.size()) {
    throw ShapeError("weighted_combine: " + std::to_string(terms.size()) +
                     " terms but weights have shape " + shape_str(wv.shape()));
  }
  if (terms.empty()) throw ShapeError("weighted_combine: no terms");
  const Tensor& first = g.value(terms[0]);
  Tensor out(first.shape());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    check_same_shape(g.value(terms[i]), first, "weighted_combine");
    out.vec() += wv[static_cast<Index>(i)] * g.value(terms[i]).vec();
  }
  std::vector<ValueId> ins = terms;
  ins.push_back(weights);
  auto ts = std::make_shared<std::vector<ValueId>>(terms);
  return g.append(std::move(out), std::move(ins), [weights, ts](Graph& g, ValueId self) {
    ConstVecMap d = g.grad_vec(self);
    const Tensor& wv = g.value(weights);
    const bool dw = g.requires_grad(weights);
    for (std::size_t i = 0; i < ts->size(); ++i) {
      const ValueId t = (*ts)[i];
      if (dw) g.grad_acc_vec(weights)(static_cast<Index>(i)) += d.dot(g.value(t).vec());
      if (g.requires_grad(t)) g.grad_acc_vec(t) += wv[static_cast<Index>(i)] * d;
    }
  });
}

ValueId masked_mse(Graph& g, ValueId pred, const Tensor& target, const std::vector<int>& rows) {
  const Tensor& pv = g.value(pred);
  check_rank2(pv, "masked_mse");
  check_same_shape(pv, target, "masked_mse");
  if (rows.empty()) throw ShapeError("masked_mse: no rows selected");
  for (int r : rows) {
    if (r < 0 || r >= pv.rows()) {
      throw ShapeError("masked_mse: row index " + std::to_string(r) + " out of range for " +
                       shape_str(pv.shape()));
    }
  }
  const double denom = static_cast<double>(rows.size()) * static_cast<double>(pv.cols());
  double loss = 0.0;
  ConstMatMap pm = pv.mat();
  ConstMatMap tm = target.mat();
  for (int r : rows) loss += (pm.row(r) - tm.row(r)).squaredNorm();
  loss /= denom;
  auto tgt = std::make_shared<const Tensor>(target);
  auto sel = std::make_shared<std::vector<int>>(rows);
  return g.append(Tensor::scalar(loss), {pred}, [pred, tgt, sel, denom](Graph& g, ValueId self) {
    if (!g.requires_grad(pred)) return;
    const double d = g.grad_vec(self)(0);
    MatMap acc = g.grad_acc_mat(pred);
    ConstMatMap pm = g.value(pred).mat();
    ConstMatMap tm = tgt->mat();
    for (int r : *sel) acc.row(r) += d * 2.0 / denom * (pm.row(r) - tm.row(r));
  });
}

double grad_check(const std::function<ValueId(Graph&)>& build,
                  const std::vector<Tensor*>& params, double h) {
  if (h <= 0) throw ConfigError("grad_check: step size must be positive");
  for (Tensor* p : params) p->zero_grad();
  std::vector<Eigen::VectorXd> analytic;
  {
    Graph g;
    const ValueId root = build(g);
    const double f0 = g.scalar_value(root);
    if (!std::isfinite(f0)) throw DivergenceError("grad_check: function value is not finite");
    g.backward(root);
    for (Tensor* p : params) analytic.push_back(Eigen::VectorXd(p->grad_vec()));
  }
  const auto eval = [&]() {
    Graph g;
    const double f = g.scalar_value(build(g));
    if (!std::isfinite(f)) throw DivergenceError("grad_check: probe value is not finite");
    return f;
  };
  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    for (Index i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double fp = eval();
      p[i] = saved - h;
      const double fm = eval();
      p[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[pi](i);
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      max_rel = std::max(max_rel, rel);
    }
  }
  for (Tensor* p : params) p->zero_grad();
  return max_rel;
}

}  // namespace peftlab
