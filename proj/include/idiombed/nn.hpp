#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "idiombed/common.hpp"

namespace idiombed::nn {

// A named dense parameter. Gradients accumulate across a batch until the
// optimizer consumes them.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  Param(std::string n, Mat v, bool t = true)
      : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())),
        trainable(t) {}

  void zero_grad() { grad.setZero(); }
  size_t count() const { return static_cast<size_t>(value.size()); }
};

// Reverse-mode tape over Eigen matrices. Nodes are created in topological
// order, so the backward sweep is a reverse walk over the node list. One tape
// per batch; parameters receive their gradient contributions when backward()
// finishes.
class Tape {
 public:
  int constant(Mat v) { return push(std::move(v)); }

  int param(Param& p) {
    int id = push(p.value);
    param_leaves_.emplace_back(id, &p);
    return id;
  }

  const Mat& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Mat& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }
  double scalar(int id) const {
    const Mat& m = val(id);
    if (m.rows() != 1 || m.cols() != 1) throw ValidationError("tape node is not a scalar");
    return m(0, 0);
  }

  // ---- ops -----------------------------------------------------------------

  int matmul(int a, int b) {
    int id = push(val(a) * val(b));
    nodes_[id].back = [this, id, a, b] {
      nodes_[a].grad.noalias() += nodes_[id].grad * nodes_[b].value.transpose();
      nodes_[b].grad.noalias() += nodes_[a].value.transpose() * nodes_[id].grad;
    };
    return id;
  }

  // C = A * B^T
  int matmul_nt(int a, int b) {
    int id = push(val(a) * val(b).transpose());
    nodes_[id].back = [this, id, a, b] {
      nodes_[a].grad.noalias() += nodes_[id].grad * nodes_[b].value;
      nodes_[b].grad.noalias() += nodes_[id].grad.transpose() * nodes_[a].value;
    };
    return id;
  }

  int add(int a, int b) {
    int id = push(val(a) + val(b));
    nodes_[id].back = [this, id, a, b] {
      nodes_[a].grad += nodes_[id].grad;
      nodes_[b].grad += nodes_[id].grad;
    };
    return id;
  }

  // Broadcast a 1xC row vector over every row of A.
  int add_rowvec(int a, int b) {
    Mat v = val(a);
    v.rowwise() += Eigen::RowVectorXd(val(b).row(0));
    int id = push(std::move(v));
    nodes_[id].back = [this, id, a, b] {
      nodes_[a].grad += nodes_[id].grad;
      nodes_[b].grad.row(0) += nodes_[id].grad.colwise().sum();
    };
    return id;
  }

  int scale(int a, double s) {
    int id = push(val(a) * s);
    nodes_[id].back = [this, id, a, s] { nodes_[a].grad += nodes_[id].grad * s; };
    return id;
  }

  // Elementwise product with a constant matrix (dropout masks, attention
  // masks in multiplicative form).
  int mul_constant(int a, Mat m) {
    Mat v = val(a).cwiseProduct(m);
    int id = push(std::move(v));
    nodes_[id].back = [this, id, a, m = std::move(m)] {
      nodes_[a].grad += nodes_[id].grad.cwiseProduct(m);
    };
    return id;
  }

  int add_constant(int a, Mat m) {
    int id = push(val(a) + m);
    nodes_[id].back = [this, id, a] { nodes_[a].grad += nodes_[id].grad; };
    return id;
  }

  int relu(int a) {
    Mat v = val(a).cwiseMax(0.0);
    int id = push(std::move(v));
    nodes_[id].back = [this, id, a] {
      nodes_[a].grad += nodes_[id].grad.cwiseProduct(
          (nodes_[a].value.array() > 0.0).cast<double>().matrix());
    };
    return id;
  }

  // tanh-approximated gelu, the usual transformer flavor.
  int gelu(int a) {
    const Mat& x = val(a);
    const double c = std::sqrt(2.0 / M_PI);
    Mat inner = (c * (x.array() + 0.044715 * x.array().cube())).matrix();
    Mat t = inner.array().tanh().matrix();
    Mat v = (0.5 * x.array() * (1.0 + t.array())).matrix();
    int id = push(std::move(v));
    nodes_[id].back = [this, id, a, t = std::move(t), c] {
      const auto& x = nodes_[a].value.array();
      const auto& th = t.array();
      // d/dx [0.5 x (1 + tanh(u))] with u = c (x + 0.044715 x^3)
      Eigen::ArrayXXd du = c * (1.0 + 3.0 * 0.044715 * x.square());
      Eigen::ArrayXXd d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th.square()) * du;
      nodes_[a].grad += nodes_[id].grad.cwiseProduct(d.matrix());
    };
    return id;
  }

  int silu(int a) {
    const Mat& x = val(a);
    Mat s = (1.0 / (1.0 + (-x.array()).exp())).matrix();
    Mat v = x.cwiseProduct(s);
    int id = push(std::move(v));
    nodes_[id].back = [this, id, a, s = std::move(s)] {
      const auto& x = nodes_[a].value.array();
      const auto& sg = s.array();
      Eigen::ArrayXXd d = sg + x * sg * (1.0 - sg);
      nodes_[a].grad += nodes_[id].grad.cwiseProduct(d.matrix());
    };
    return id;
  }

  // Row-wise layer normalization with learned gain/bias (1xC each).
  int layer_norm(int a, int gain, int bias, double eps = 1e-5) {
    const Mat& x = val(a);
    const long rows = x.rows(), cols = x.cols();
    Mat xhat(rows, cols);
    Vec inv_std(rows);
    for (long r = 0; r < rows; ++r) {
      const double mean = x.row(r).mean();
      const double var = (x.row(r).array() - mean).square().sum() / static_cast<double>(cols);
      const double istd = 1.0 / std::sqrt(var + eps);
      inv_std(r) = istd;
      xhat.row(r) = (x.row(r).array() - mean) * istd;
    }
    Mat v = xhat;
    v.array().rowwise() *= val(gain).row(0).array();
    v.rowwise() += Eigen::RowVectorXd(val(bias).row(0));
    int id = push(std::move(v));
    nodes_[id].back = [this, id, a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const Mat& dy = nodes_[id].grad;
      const long rows = dy.rows(), cols = dy.cols();
      nodes_[gain].grad.row(0) += dy.cwiseProduct(xhat).colwise().sum();
      nodes_[bias].grad.row(0) += dy.colwise().sum();
      const Eigen::RowVectorXd g = nodes_[gain].value.row(0);
      for (long r = 0; r < rows; ++r) {
        const Eigen::RowVectorXd dyg = dy.row(r).cwiseProduct(g);
        const double m1 = dyg.mean();
        const double m2 = dyg.cwiseProduct(xhat.row(r)).mean();
        nodes_[a].grad.row(r) +=
            inv_std(r) * (dyg.array() - m1 - xhat.row(r).array() * m2).matrix();
      }
      (void)cols;
    };
    return id;
  }

  int softmax_rows(int a) {
    const Mat& x = val(a);
    Mat y(x.rows(), x.cols());
    for (long r = 0; r < x.rows(); ++r) {
      const double mx = x.row(r).maxCoeff();
      Eigen::ArrayXd e = (x.row(r).array() - mx).exp();
      y.row(r) = (e / e.sum()).matrix();
    }
    int id = push(std::move(y));
    nodes_[id].back = [this, id, a] {
      const Mat& y = nodes_[id].value;
      const Mat& dy = nodes_[id].grad;
      for (long r = 0; r < y.rows(); ++r) {
        const double dot = dy.row(r).dot(y.row(r));
        nodes_[a].grad.row(r) += (dy.row(r).array() - dot).matrix().cwiseProduct(y.row(r));
      }
    };
    return id;
  }

  int slice_rows(int a, long r0, long r1) {
    if (r0 < 0 || r1 > val(a).rows() || r0 >= r1) throw ValidationError("slice_rows out of range");
    Mat v = val(a).middleRows(r0, r1 - r0);
    int id = push(std::move(v));
    nodes_[id].back = [this, id, a, r0, r1] {
      nodes_[a].grad.middleRows(r0, r1 - r0) += nodes_[id].grad;
    };
    return id;
  }

  int slice_cols(int a, long c0, long c1) {
    if (c0 < 0 || c1 > val(a).cols() || c0 >= c1) throw ValidationError("slice_cols out of range");
    Mat v = val(a).middleCols(c0, c1 - c0);
    int id = push(std::move(v));
    nodes_[id].back = [this, id, a, c0, c1] {
      nodes_[a].grad.middleCols(c0, c1 - c0) += nodes_[id].grad;
    };
    return id;
  }

  int concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) throw ValidationError("concat_cols: no parts");
    long rows = val(parts[0]).rows();
    long cols = 0;
    for (int p : parts) cols += val(p).cols();
    Mat v(rows, cols);
    long at = 0;
    for (int p : parts) {
      v.middleCols(at, val(p).cols()) = val(p);
      at += val(p).cols();
    }
    int id = push(std::move(v));
    nodes_[id].back = [this, id, parts] {
      long at = 0;
      for (int p : parts) {
        const long w = nodes_[p].value.cols();
        nodes_[p].grad += nodes_[id].grad.middleCols(at, w);
        at += w;
      }
    };
    return id;
  }

  int mean_rows(int a) {
    const Mat& x = val(a);
    Mat v = x.colwise().mean();
    int id = push(std::move(v));
    nodes_[id].back = [this, id, a] {
      const double inv = 1.0 / static_cast<double>(nodes_[a].value.rows());
      nodes_[a].grad += (Vec::Ones(nodes_[a].value.rows()) * nodes_[id].grad.row(0)) * inv;
    };
    return id;
  }

  // Gathers rows of a (typically an embedding table) by index.
  int gather_rows(int a, std::vector<int> ids) {
    const Mat& t = val(a);
    Mat v(static_cast<long>(ids.size()), t.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= t.rows())
        throw ValidationError("gather_rows: index " + std::to_string(ids[i]) + " out of range");
      v.row(static_cast<long>(i)) = t.row(ids[i]);
    }
    int id = push(std::move(v));
    nodes_[id].back = [this, id, a, ids = std::move(ids)] {
      for (size_t i = 0; i < ids.size(); ++i)
        nodes_[a].grad.row(ids[i]) += nodes_[id].grad.row(static_cast<long>(i));
    };
    return id;
  }

  // Mean token-level negative log likelihood over the rows selected by the
  // mask (true = included).
  int cross_entropy_rows(int logits, std::vector<int> targets, std::vector<bool> mask = {}) {
    const Mat& x = val(logits);
    if (static_cast<long>(targets.size()) != x.rows())
      throw ValidationError("cross_entropy_rows: target/logit row mismatch");
    if (mask.empty()) mask.assign(targets.size(), true);
    if (mask.size() != targets.size())
      throw ValidationError("cross_entropy_rows: mask length mismatch");
    long n_active = 0;
    for (bool b : mask)
      if (b) ++n_active;
    if (n_active == 0) throw ValidationError("cross_entropy_rows: all positions masked");

    Mat probs(x.rows(), x.cols());
    double loss = 0.0;
    for (long r = 0; r < x.rows(); ++r) {
      const double mx = x.row(r).maxCoeff();
      Eigen::ArrayXd e = (x.row(r).array() - mx).exp();
      probs.row(r) = (e / e.sum()).matrix();
      if (mask[static_cast<size_t>(r)]) {
        const int t = targets[static_cast<size_t>(r)];
        if (t < 0 || t >= x.cols()) throw ValidationError("cross_entropy_rows: target id out of range");
        loss -= std::log(std::max(probs(r, t), 1e-300));
      }
    }
    loss /= static_cast<double>(n_active);
    int id = push(Mat::Constant(1, 1, loss));
    nodes_[id].back = [this, id, logits, targets = std::move(targets), mask = std::move(mask),
                       probs = std::move(probs), n_active] {
      const double g = nodes_[id].grad(0, 0) / static_cast<double>(n_active);
      Mat d = probs;
      for (long r = 0; r < d.rows(); ++r) {
        if (!mask[static_cast<size_t>(r)]) {
          d.row(r).setZero();
          continue;
        }
        d(r, targets[static_cast<size_t>(r)]) -= 1.0;
      }
      nodes_[logits].grad += d * g;
    };
    return id;
  }

  // 1 - cos(u, v) for a 1xD node u against a constant direction v.
  int cosine_loss_const(int u, Eigen::RowVectorXd v) {
    const Mat& um = val(u);
    if (um.rows() != 1 || um.cols() != v.cols())
      throw ValidationError("cosine_loss_const: shape mismatch");
    const double nu = um.row(0).norm();
    const double nv = v.norm();
    if (nu == 0.0 || nv == 0.0) throw ValidationError("cosine_loss_const: zero-norm vector");
    const double cosv = um.row(0).dot(v) / (nu * nv);
    int id = push(Mat::Constant(1, 1, 1.0 - cosv));
    nodes_[id].back = [this, id, u, v = std::move(v), nu, nv, cosv] {
      const double g = nodes_[id].grad(0, 0);
      const Eigen::RowVectorXd uu = nodes_[u].value.row(0);
      // d(1-cos)/du = -(v/(|u||v|) - cos * u/|u|^2)
      nodes_[u].grad.row(0) += g * (cosv * uu / (nu * nu) - v / (nu * nv));
    };
    return id;
  }

  // total = sum_i w_i * s_i over scalar nodes.
  int weighted_sum(const std::vector<std::pair<int, double>>& terms) {
    double total = 0.0;
    for (const auto& [id, w] : terms) total += w * scalar(id);
    int id = push(Mat::Constant(1, 1, total));
    nodes_[id].back = [this, id, terms] {
      const double g = nodes_[id].grad(0, 0);
      for (const auto& [t, w] : terms) nodes_[t].grad(0, 0) += g * w;
    };
    return id;
  }

  // Runs the reverse sweep from a scalar root and flushes gradients into the
  // trainable parameters that were placed on this tape.
  void backward(int root) {
    if (val(root).rows() != 1 || val(root).cols() != 1)
      throw ValidationError("backward: root must be a scalar node");
    nodes_[static_cast<size_t>(root)].grad(0, 0) = 1.0;
    for (long i = static_cast<long>(nodes_.size()) - 1; i >= 0; --i) {
      if (nodes_[static_cast<size_t>(i)].back) nodes_[static_cast<size_t>(i)].back();
    }
    for (auto& [id, p] : param_leaves_) {
      if (p->trainable) p->grad += nodes_[static_cast<size_t>(id)].grad;
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> back;
  };

  int push(Mat v) {
    Node n;
    n.grad = Mat::Zero(v.rows(), v.cols());
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Param*>> param_leaves_;
};

// ---------------------------------------------------------------------------
// Adam with bias correction. Steps trainable parameters only; state keys on
// the parameter order, which is fixed at construction.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<Param*> params, double lr, double beta1 = 0.9,
                         double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Param* p : params_) {
      m_.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      Param* p = params_[i];
      if (!p->trainable) continue;
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p->grad;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
      const Mat mhat = m_[i] / bc1;
      const Mat vhat = v_[i] / bc2;
      p->value.array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
    }
  }

  void zero_grad() {
    for (Param* p : params_) p->zero_grad();
  }

  double learning_rate() const { return lr_; }

 private:
  std::vector<Param*> params_;
  std::vector<Mat> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace idiombed::nn
