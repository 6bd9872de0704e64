#pragma once

// Minimal reverse-mode gradient tape over row-major double matrices.
// Nodes are appended in evaluation order, so creation order is a topological
// order and backward() is a single reverse sweep.

#include <Eigen/Dense>
#include <functional>
#include <map>

#include "lsm/reservoir.hpp"

namespace lsm::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ParamMap = std::map<std::string, Mat>;

struct Var {
  int id = -1;
};

class Tape {
 public:
  Var constant(Mat v) { return push(std::move(v), false, {}); }

  /// A leaf whose gradient is reported under `name`.
  Var param(const std::string& name, const Mat& v) {
    Var out = push(v, true, {});
    nodes_[out.id].name = name;
    nodes_[out.id].is_param = true;
    return out;
  }

  const Mat& value(Var v) const { return nodes_.at(std::size_t(v.id)).value; }
  /// Gradient of the last backward() target; zero-sized when unreached.
  const Mat& grad(Var v) const { return nodes_.at(std::size_t(v.id)).grad; }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b) {
    check(cols(a) == rows(b), "matmul shape mismatch");
    Mat out = value(a) * value(b);
    return push(std::move(out), any_grad(a, b), [this, a, b](int self) {
      const Mat& g = grad_of(self);
      if (needs(a)) acc(a).noalias() += g * value(b).transpose();
      if (needs(b)) acc(b).noalias() += value(a).transpose() * g;
    });
  }

  /// a * b^T
  Var matmul_nt(Var a, Var b) {
    check(cols(a) == cols(b), "matmul_nt shape mismatch");
    Mat out = value(a) * value(b).transpose();
    return push(std::move(out), any_grad(a, b), [this, a, b](int self) {
      const Mat& g = grad_of(self);
      if (needs(a)) acc(a).noalias() += g * value(b);
      if (needs(b)) acc(b).noalias() += g.transpose() * value(a);
    });
  }

  /// x * w for a binary spike raster x [steps x n] and w [n x k]. The raster
  /// is a constant: no gradient flows back into the liquid.
  Var spike_matmul(const SpikeRaster& x, Var w) {
    check(x.n == rows(w), "spike_matmul shape mismatch");
    const Mat& W = value(w);
    Mat out = Mat::Zero(x.steps, W.cols());
    for (int t = 0; t < x.steps; ++t) x.for_each_active(t, [&](int i) { out.row(t) += W.row(i); });
    return push(std::move(out), needs(w), [this, w, &x](int self) {
      const Mat& g = grad_of(self);
      Mat& gw = acc(w);
      for (int t = 0; t < x.steps; ++t) x.for_each_active(t, [&](int i) { gw.row(i) += g.row(t); });
    });
  }

  Var add(Var a, Var b) {
    check(rows(a) == rows(b) && cols(a) == cols(b), "add shape mismatch");
    Mat out = value(a) + value(b);
    return push(std::move(out), any_grad(a, b), [this, a, b](int self) {
      const Mat& g = grad_of(self);
      if (needs(a)) acc(a) += g;
      if (needs(b)) acc(b) += g;
    });
  }

  /// a + broadcast of the 1 x c row vector over every row of a.
  Var add_row(Var a, Var row) {
    check(rows(row) == 1 && cols(row) == cols(a), "add_row shape mismatch");
    Mat out = value(a).rowwise() + value(row).row(0);
    return push(std::move(out), any_grad(a, row), [this, a, row](int self) {
      const Mat& g = grad_of(self);
      if (needs(a)) acc(a) += g;
      if (needs(row)) acc(row) += g.colwise().sum();
    });
  }

  Var scale(Var a, double s) {
    Mat out = value(a) * s;
    return push(std::move(out), needs(a), [this, a, s](int self) { acc(a) += grad_of(self) * s; });
  }

  Var relu(Var a) {
    Mat out = value(a).cwiseMax(0.0);
    return push(std::move(out), needs(a), [this, a](int self) {
      acc(a) += (value(a).array() > 0.0).select(grad_of(self), 0.0);
    });
  }

  Var sigmoid(Var a) {
    Mat out = value(a).unaryExpr([](double x) { return lsm::sigmoid(x); });
    return push(std::move(out), needs(a), [this, a](int self) {
      const Mat& y = value(Var{self});
      acc(a).array() += grad_of(self).array() * y.array() * (1.0 - y.array());
    });
  }

  /// Row-wise softmax. With `causal`, row i only sees columns j <= i (and,
  /// when window > 0, j > i - window); masked entries are exactly zero.
  Var softmax_rows(Var a, bool causal = false, int window = 0) {
    const Mat& x = value(a);
    Mat out = Mat::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      auto [lo, hi] = allowed(i, x.cols(), causal, window);
      check(lo < hi, "softmax row has no admissible entries");
      double mx = x(i, lo);
      for (Eigen::Index j = lo; j < hi; ++j) mx = std::max(mx, x(i, j));
      double sum = 0;
      for (Eigen::Index j = lo; j < hi; ++j) sum += out(i, j) = std::exp(x(i, j) - mx);
      for (Eigen::Index j = lo; j < hi; ++j) out(i, j) /= sum;
      double total = 0;
      for (Eigen::Index j = lo; j < hi; ++j) total += out(i, j);
      if (!(std::abs(total - 1.0) <= 1e-6)) throw NumericError("attention weights do not sum to 1");
    }
    return push(std::move(out), needs(a), [this, a](int self) {
      const Mat& p = value(Var{self});
      const Mat& g = grad_of(self);
      Eigen::VectorXd dot = (g.array() * p.array()).rowwise().sum();
      acc(a).array() += p.array() * (g.colwise() - dot).array();
    });
  }

  /// Per-row layer norm with learned 1 x c gain and bias.
  Var layer_norm_rows(Var a, Var gain, Var bias, double eps = 1e-5) {
    const Mat& x = value(a);
    check(cols(gain) == x.cols() && cols(bias) == x.cols() && rows(gain) == 1 && rows(bias) == 1,
          "layer_norm shape mismatch");
    const auto n = double(x.cols());
    Eigen::VectorXd inv_std(x.rows());
    Mat xhat(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mu = x.row(i).mean();
      const double var = (x.row(i).array() - mu).square().sum() / n;
      inv_std(i) = 1.0 / std::sqrt(var + eps);
      xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
    }
    Mat out = (xhat.array().rowwise() * value(gain).row(0).array()).matrix().rowwise() + value(bias).row(0);
    const bool ng = needs(a) || needs(gain) || needs(bias);
    return push(std::move(out), ng,
                [this, a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), n](int self) {
                  const Mat& g = grad_of(self);
                  if (needs(gain)) acc(gain) += (g.array() * xhat.array()).colwise().sum().matrix();
                  if (needs(bias)) acc(bias) += g.colwise().sum();
                  if (needs(a)) {
                    Mat dxhat = g.array().rowwise() * value(gain).row(0).array();
                    Eigen::VectorXd m1 = dxhat.rowwise().sum() / n;
                    Eigen::VectorXd m2 = (dxhat.array() * xhat.array()).rowwise().sum() / n;
                    Mat& ga = acc(a);
                    for (Eigen::Index i = 0; i < g.rows(); ++i)
                      ga.row(i).array() +=
                          inv_std(i) * (dxhat.row(i).array() - m1(i) - xhat.row(i).array() * m2(i));
                  }
                });
  }

  /// Mean of every entry, as a 1 x 1 matrix.
  Var mean(Var a) {
    const auto count = double(value(a).size());
    Mat out(1, 1);
    out(0, 0) = value(a).mean();
    return push(std::move(out), needs(a),
                [this, a, count](int self) { acc(a).array() += grad_of(self)(0, 0) / count; });
  }

  /// Averages consecutive groups of `group` rows: [r x c] -> [r/group x c].
  Var mean_row_groups(Var a, int group) {
    check(group >= 1 && rows(a) % group == 0, "mean_row_groups: rows not divisible by group");
    const Mat& x = value(a);
    const Eigen::Index r = x.rows() / group;
    Mat out = Mat::Zero(r, x.cols());
    for (Eigen::Index i = 0; i < r; ++i) {
      for (int j = 0; j < group; ++j) out.row(i) += x.row(i * group + j);
      out.row(i) /= double(group);
    }
    return push(std::move(out), needs(a), [this, a, group](int self) {
      const Mat& g = grad_of(self);
      Mat& ga = acc(a);
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (int j = 0; j < group; ++j) ga.row(i * group + j) += g.row(i) / double(group);
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat of nothing");
    Eigen::Index total = 0;
    bool ng = false;
    for (Var p : parts) {
      check(rows(p) == rows(parts[0]), "concat row mismatch");
      total += cols(p);
      ng = ng || needs(p);
    }
    Mat out(rows(parts[0]), total);
    Eigen::Index at = 0;
    for (Var p : parts) {
      out.middleCols(at, cols(p)) = value(p);
      at += cols(p);
    }
    return push(std::move(out), ng, [this, parts](int self) {
      const Mat& g = grad_of(self);
      Eigen::Index at = 0;
      for (Var p : parts) {
        if (needs(p)) acc(p) += g.middleCols(at, cols(p));
        at += cols(p);
      }
    });
  }

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    check(start >= 0 && count >= 0 && start + count <= cols(a), "slice out of range");
    Mat out = value(a).middleCols(start, count);
    return push(std::move(out), needs(a), [this, a, start, count](int self) {
      acc(a).middleCols(start, count) += grad_of(self);
    });
  }

  /// Mean binary cross-entropy of scores against 0/1 targets. Scores are
  /// clamped to [eps, 1 - eps]; clamped entries pass no gradient.
  Var bce(Var scores, const Mat& target, double eps = 1e-7, double pos_weight = 1.0) {
    const Mat& s = value(scores);
    check(s.rows() == target.rows() && s.cols() == target.cols(), "bce shape mismatch");
    const auto count = double(s.size());
    double total = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double c = std::clamp(s.data()[i], eps, 1.0 - eps), y = target.data()[i];
      total -= pos_weight * y * std::log(c) + (1.0 - y) * std::log(1.0 - c);
    }
    Mat out(1, 1);
    out(0, 0) = total / count;
    return push(std::move(out), needs(scores), [this, scores, target, eps, pos_weight, count](int self) {
      const double g = grad_of(self)(0, 0);
      const Mat& s = value(scores);
      Mat& gs = acc(scores);
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        const double x = s.data()[i], y = target.data()[i];
        if (x <= eps || x >= 1.0 - eps) continue;
        gs.data()[i] += g * (-(pos_weight * y) / x + (1.0 - y) / (1.0 - x)) / count;
      }
    });
  }

  /// Reverse sweep from a scalar node. Throws NumericError naming the first
  /// parameter whose gradient is not finite.
  void backward(Var loss) {
    check(rows(loss) == 1 && cols(loss) == 1, "backward needs a scalar loss");
    for (auto& nd : nodes_) nd.grad.resize(0, 0);
    nodes_[loss.id].grad = Mat::Ones(1, 1);
    for (int id = loss.id; id >= 0; --id) {
      auto& nd = nodes_[std::size_t(id)];
      if (!nd.needs_grad || nd.grad.size() == 0 || !nd.back) continue;
      nd.back(id);
    }
    for (const auto& nd : nodes_)
      if (nd.is_param && nd.grad.size() != 0 && !nd.grad.allFinite())
        throw NumericError("non-finite gradient for parameter '" + nd.name + "'");
  }

  /// Gradients keyed by parameter name; unreached parameters get zeros.
  ParamMap gradients() const {
    ParamMap out;
    for (const auto& nd : nodes_)
      if (nd.is_param)
        out[nd.name] = nd.grad.size() ? nd.grad : Mat::Zero(nd.value.rows(), nd.value.cols());
    return out;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(int)> back;
    std::string name;
    bool is_param = false;
    bool needs_grad = false;
  };

  static void check(bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  }

  static std::pair<Eigen::Index, Eigen::Index> allowed(Eigen::Index i, Eigen::Index cols, bool causal,
                                                       int window) {
    if (!causal) return {0, cols};
    const Eigen::Index hi = std::min(cols, i + 1);
    const Eigen::Index lo = window > 0 ? std::max<Eigen::Index>(0, i + 1 - window) : 0;
    return {lo, hi};
  }

  Var push(Mat v, bool needs_grad, std::function<void(int)> back) {
    nodes_.push_back(Node{std::move(v), Mat(), std::move(back), {}, false, needs_grad});
    return Var{int(nodes_.size()) - 1};
  }

  Eigen::Index rows(Var v) const { return value(v).rows(); }
  Eigen::Index cols(Var v) const { return value(v).cols(); }
  bool needs(Var v) const { return nodes_[std::size_t(v.id)].needs_grad; }
  bool any_grad(Var a, Var b) const { return needs(a) || needs(b); }
  const Mat& grad_of(int id) const { return nodes_[std::size_t(id)].grad; }

  Mat& acc(Var v) {
    auto& nd = nodes_[std::size_t(v.id)];
    if (nd.grad.size() == 0) nd.grad = Mat::Zero(nd.value.rows(), nd.value.cols());
    return nd.grad;
  }

  std::vector<Node> nodes_;
};

}  // namespace lsm::ad
