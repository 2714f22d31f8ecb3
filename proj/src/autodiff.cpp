#include "unimov/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace unimov::ad {

// ---------------------------------------------------------------------------
// ParamStore / AdamW

Parameter& ParamStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  return create(name, Mat::Zero(rows, cols));
}

Parameter& ParamStore::create(const std::string& name, const Mat& init) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = init;
  p->grad = Mat::Zero(init.rows(), init.cols());
  auto& ref = *p;
  params_.emplace(name, std::move(p));
  return ref;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no such parameter: " + name);
  return *it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no such parameter: " + name);
  return *it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, p] : params_) p->zero_grad();
}

void AdamW::step(ParamStore& store) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  store.for_each([&](Parameter& p) {
    auto& mom = state_[p.name];
    if (mom.m.size() == 0) {
      mom.m = Mat::Zero(p.value.rows(), p.value.cols());
      mom.v = Mat::Zero(p.value.rows(), p.value.cols());
    }
    mom.m = beta1_ * mom.m + (1.0 - beta1_) * p.grad;
    mom.v = beta2_ * mom.v.array().matrix() + (1.0 - beta2_) * p.grad.array().square().matrix();
    const Mat m_hat = mom.m / bc1;
    const Mat v_hat = mom.v / bc2;
    // Decoupled decay, applied to the value directly.
    p.value -= lr_ * weight_decay_ * p.value;
    p.value -= lr_ * (m_hat.array() / (v_hat.array().sqrt() + eps_)).matrix();
  });
}

// ---------------------------------------------------------------------------
// Tape

const Mat& Var::value() const { return tape_->value(*this); }

Var Tape::make(Mat value, bool needs_grad, std::function<void(Tape&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(Var v, const Mat& g) {
  Node& n = node(v);
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  n.grad += g;
}

const Mat& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() == 0) {
    static const Mat empty;
    return empty;
  }
  return n.grad;
}

const Mat& Tape::value(Var v) const { return node(v).value; }

Var Tape::constant(Mat v) { return make(std::move(v), false, nullptr); }

Var Tape::input(Mat v) { return make(std::move(v), true, nullptr); }

Var Tape::param(Parameter& p) {
  Var v = make(p.value, true, nullptr);
  node(v).bound = &p;
  return v;
}

Var Tape::add(Var a, Var b) {
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = make(node(a).value + node(b).value, ng, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, b, oi](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;
    t.accumulate(a, g);
    t.accumulate(b, g);
  };
  return out;
}

Var Tape::sub(Var a, Var b) {
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = make(node(a).value - node(b).value, ng, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, b, oi](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;
    t.accumulate(a, g);
    t.accumulate(b, -g);
  };
  return out;
}

Var Tape::neg(Var a) { return scale(a, -1.0); }

Var Tape::hadamard(Var a, Var b) {
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = make((node(a).value.array() * node(b).value.array()).matrix(), ng, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, b, oi](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;
    t.accumulate(a, (g.array() * t.node(b).value.array()).matrix());
    t.accumulate(b, (g.array() * t.node(a).value.array()).matrix());
  };
  return out;
}

Var Tape::matmul(Var a, Var b) {
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = make(node(a).value * node(b).value, ng, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, b, oi](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;
    t.accumulate(a, g * t.node(b).value.transpose());
    t.accumulate(b, t.node(a).value.transpose() * g);
  };
  return out;
}

Var Tape::transpose(Var a) {
  Var out = make(node(a).value.transpose(), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi](Tape& t) { t.accumulate(a, t.nodes_[oi].grad.transpose()); };
  return out;
}

Var Tape::scale(Var a, double s) {
  Var out = make(node(a).value * s, node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, s, oi](Tape& t) { t.accumulate(a, t.nodes_[oi].grad * s); };
  return out;
}

Var Tape::add_scalar(Var a, double s) {
  Var out = make((node(a).value.array() + s).matrix(), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi](Tape& t) { t.accumulate(a, t.nodes_[oi].grad); };
  return out;
}

Var Tape::mul_scalar(Var a, Var s) {
  if (node(s).value.size() != 1) throw std::invalid_argument("mul_scalar: s must be 1x1");
  bool ng = node(a).needs_grad || node(s).needs_grad;
  const double sv = node(s).value(0, 0);
  Var out = make(node(a).value * sv, ng, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, s, sv, oi](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;
    t.accumulate(a, g * sv);
    Mat gs(1, 1);
    gs(0, 0) = (g.array() * t.node(a).value.array()).sum();
    t.accumulate(s, gs);
  };
  return out;
}

Var Tape::reciprocal(Var a) {
  Var out = make(node(a).value.array().inverse().matrix(), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi](Tape& t) {
    const Mat& y = t.nodes_[oi].value;
    t.accumulate(a, (-t.nodes_[oi].grad.array() * y.array().square()).matrix());
  };
  return out;
}

Var Tape::add_rowvec(Var a, Var r) {
  if (node(r).value.rows() != 1 || node(r).value.cols() != node(a).value.cols())
    throw std::invalid_argument("add_rowvec: r must be 1 x cols(a)");
  bool ng = node(a).needs_grad || node(r).needs_grad;
  Mat y = node(a).value;
  y.rowwise() += node(r).value.row(0);
  Var out = make(std::move(y), ng, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, r, oi](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;
    t.accumulate(a, g);
    t.accumulate(r, g.colwise().sum());
  };
  return out;
}

Var Tape::mul_rowvec(Var a, Var r) {
  if (node(r).value.rows() != 1 || node(r).value.cols() != node(a).value.cols())
    throw std::invalid_argument("mul_rowvec: r must be 1 x cols(a)");
  bool ng = node(a).needs_grad || node(r).needs_grad;
  Mat y = node(a).value.array().rowwise() * node(r).value.row(0).array();
  Var out = make(std::move(y), ng, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, r, oi](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;
    t.accumulate(a, (g.array().rowwise() * t.node(r).value.row(0).array()).matrix());
    t.accumulate(r, (g.array() * t.node(a).value.array()).colwise().sum().matrix());
  };
  return out;
}

Var Tape::scale_rows(Var a, Var s) {
  if (node(s).value.cols() != 1 || node(s).value.rows() != node(a).value.rows())
    throw std::invalid_argument("scale_rows: s must be rows(a) x 1");
  bool ng = node(a).needs_grad || node(s).needs_grad;
  Mat y = node(a).value.array().colwise() * node(s).value.col(0).array();
  Var out = make(std::move(y), ng, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, s, oi](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;
    t.accumulate(a, (g.array().colwise() * t.node(s).value.col(0).array()).matrix());
    t.accumulate(s, (g.array() * t.node(a).value.array()).rowwise().sum().matrix());
  };
  return out;
}

Var Tape::exp(Var a) {
  Var out = make(node(a).value.array().exp().matrix(), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi](Tape& t) {
    t.accumulate(a, (t.nodes_[oi].grad.array() * t.nodes_[oi].value.array()).matrix());
  };
  return out;
}

Var Tape::log(Var a) {
  Var out = make(node(a).value.array().log().matrix(), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi](Tape& t) {
    t.accumulate(a, (t.nodes_[oi].grad.array() / t.node(a).value.array()).matrix());
  };
  return out;
}

Var Tape::tanh(Var a) {
  Var out = make(node(a).value.array().tanh().matrix(), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi](Tape& t) {
    const auto y = t.nodes_[oi].value.array();
    t.accumulate(a, (t.nodes_[oi].grad.array() * (1.0 - y.square())).matrix());
  };
  return out;
}

Var Tape::sigmoid(Var a) {
  // 1/(1+exp(-x)), stable on both tails.
  Mat y = node(a).value.unaryExpr([](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  Var out = make(std::move(y), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi](Tape& t) {
    const auto y = t.nodes_[oi].value.array();
    t.accumulate(a, (t.nodes_[oi].grad.array() * y * (1.0 - y)).matrix());
  };
  return out;
}

Var Tape::sqrt(Var a) {
  Var out = make(node(a).value.array().sqrt().matrix(), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi](Tape& t) {
    t.accumulate(a, (t.nodes_[oi].grad.array() / (2.0 * t.nodes_[oi].value.array())).matrix());
  };
  return out;
}

Var Tape::sum(Var a) {
  Mat y(1, 1);
  y(0, 0) = node(a).value.sum();
  Var out = make(std::move(y), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi](Tape& t) {
    const double g = t.nodes_[oi].grad(0, 0);
    t.accumulate(a, Mat::Constant(t.node(a).value.rows(), t.node(a).value.cols(), g));
  };
  return out;
}

Var Tape::mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(node(a).value.size()));
}

Var Tape::row_sum(Var a) {
  Var out = make(node(a).value.rowwise().sum(), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;  // Rx1
    t.accumulate(a, g.replicate(1, t.node(a).value.cols()));
  };
  return out;
}

Var Tape::col_max(Var a) {
  const Mat& x = node(a).value;
  Mat y(1, x.cols());
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    Eigen::Index r;
    y(0, c) = x.col(c).maxCoeff(&r);
    argmax[static_cast<std::size_t>(c)] = r;
  }
  Var out = make(std::move(y), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi, argmax = std::move(argmax)](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;
    Mat ga = Mat::Zero(t.node(a).value.rows(), t.node(a).value.cols());
    for (Eigen::Index c = 0; c < ga.cols(); ++c)
      ga(argmax[static_cast<std::size_t>(c)], c) = g(0, c);
    t.accumulate(a, ga);
  };
  return out;
}

Var Tape::row_softmax(Var a) {
  const Mat& x = node(a).value;
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    Eigen::ArrayXd e = (x.row(r).array() - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  Var out = make(std::move(y), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi](Tape& t) {
    const Mat& y = t.nodes_[oi].value;
    const Mat& g = t.nodes_[oi].grad;
    Mat ga(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = y.row(r).dot(g.row(r));
      ga.row(r) = (y.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
    t.accumulate(a, ga);
  };
  return out;
}

Var Tape::row_logsumexp(Var a) {
  const Mat& x = node(a).value;
  Mat y(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    y(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
  }
  Var out = make(std::move(y), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi](Tape& t) {
    const Mat& x = t.node(a).value;
    const Mat& l = t.nodes_[oi].value;
    const Mat& g = t.nodes_[oi].grad;
    Mat ga(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      ga.row(r) = (g(r, 0) * (x.row(r).array() - l(r, 0)).exp()).matrix();
    t.accumulate(a, ga);
  };
  return out;
}

Var Tape::rows_l2_normalize(Var a) {
  const Mat& x = node(a).value;
  Mat y(x.rows(), x.cols());
  std::vector<double> norms(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double n = x.row(r).norm();
    norms[static_cast<std::size_t>(r)] = n;
    if (n < 1e-12) {
      // Degenerate zero row: fixed unit output, zero gradient.
      y.row(r).setZero();
      y(r, 0) = 1.0;
    } else {
      y.row(r) = x.row(r) / n;
    }
  }
  Var out = make(std::move(y), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi, norms = std::move(norms)](Tape& t) {
    const Mat& y = t.nodes_[oi].value;
    const Mat& g = t.nodes_[oi].grad;
    Mat ga = Mat::Zero(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double n = norms[static_cast<std::size_t>(r)];
      if (n < 1e-12) continue;
      const double dot = y.row(r).dot(g.row(r));
      ga.row(r) = (g.row(r) - dot * y.row(r)) / n;
    }
    t.accumulate(a, ga);
  };
  return out;
}

Var Tape::take_diag(Var a) {
  const Mat& x = node(a).value;
  const Eigen::Index k = std::min(x.rows(), x.cols());
  Mat y(k, 1);
  for (Eigen::Index i = 0; i < k; ++i) y(i, 0) = x(i, i);
  Var out = make(std::move(y), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, k, oi](Tape& t) {
    Mat ga = Mat::Zero(t.node(a).value.rows(), t.node(a).value.cols());
    for (Eigen::Index i = 0; i < k; ++i) ga(i, i) = t.nodes_[oi].grad(i, 0);
    t.accumulate(a, ga);
  };
  return out;
}

Var Tape::concat_cols(Var a, Var b) {
  if (node(a).value.rows() != node(b).value.rows())
    throw std::invalid_argument("concat_cols: row mismatch");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Mat y(node(a).value.rows(), node(a).value.cols() + node(b).value.cols());
  y << node(a).value, node(b).value;
  Var out = make(std::move(y), ng, nullptr);
  int oi = out.index_;
  const Eigen::Index ca = node(a).value.cols();
  node(out).backprop = [a, b, ca, oi](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;
    t.accumulate(a, g.leftCols(ca));
    t.accumulate(b, g.rightCols(g.cols() - ca));
  };
  return out;
}

Var Tape::concat_rows(Var a, Var b) {
  if (node(a).value.cols() != node(b).value.cols())
    throw std::invalid_argument("concat_rows: col mismatch");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Mat y(node(a).value.rows() + node(b).value.rows(), node(a).value.cols());
  y << node(a).value, node(b).value;
  Var out = make(std::move(y), ng, nullptr);
  int oi = out.index_;
  const Eigen::Index ra = node(a).value.rows();
  node(out).backprop = [a, b, ra, oi](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;
    t.accumulate(a, g.topRows(ra));
    t.accumulate(b, g.bottomRows(g.rows() - ra));
  };
  return out;
}

Var Tape::slice_cols(Var a, Eigen::Index c0, Eigen::Index n) {
  Var out = make(node(a).value.middleCols(c0, n), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, c0, n, oi](Tape& t) {
    Mat ga = Mat::Zero(t.node(a).value.rows(), t.node(a).value.cols());
    ga.middleCols(c0, n) = t.nodes_[oi].grad;
    t.accumulate(a, ga);
  };
  return out;
}

Var Tape::gather_rows(Var a, std::vector<int> idx) {
  const Mat& x = node(a).value;
  Mat y(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) y.row(static_cast<Eigen::Index>(k)) = x.row(idx[k]);
  Var out = make(std::move(y), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi, idx = std::move(idx)](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;
    Mat ga = Mat::Zero(t.node(a).value.rows(), t.node(a).value.cols());
    for (std::size_t k = 0; k < idx.size(); ++k)
      ga.row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
    t.accumulate(a, ga);
  };
  return out;
}

Var Tape::row_maxpool2(Var a) {
  const Mat& x = node(a).value;
  const Eigen::Index out_rows = (x.rows() + 1) / 2;
  Mat y(out_rows, x.cols());
  // Routing matrix: which input row won each output element.
  std::vector<Eigen::Index> win(static_cast<std::size_t>(out_rows * x.cols()));
  for (Eigen::Index r = 0; r < out_rows; ++r) {
    const Eigen::Index r0 = 2 * r;
    const Eigen::Index r1 = std::min(r0 + 1, x.rows() - 1);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (x(r0, c) >= x(r1, c)) {
        y(r, c) = x(r0, c);
        win[static_cast<std::size_t>(r * x.cols() + c)] = r0;
      } else {
        y(r, c) = x(r1, c);
        win[static_cast<std::size_t>(r * x.cols() + c)] = r1;
      }
    }
  }
  Var out = make(std::move(y), node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi, win = std::move(win)](Tape& t) {
    const Mat& g = t.nodes_[oi].grad;
    Mat ga = Mat::Zero(t.node(a).value.rows(), t.node(a).value.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); ++c)
        ga(win[static_cast<std::size_t>(r * g.cols() + c)], c) += g(r, c);
    t.accumulate(a, ga);
  };
  return out;
}

Var Tape::resample_rows_linear(Var a, Eigen::Index new_rows) {
  const Eigen::Index old_rows = node(a).value.rows();
  // Constant interpolation matrix P (new x old); gradient is P^T g.
  Mat P = Mat::Zero(new_rows, old_rows);
  if (old_rows == 1) {
    P.col(0).setOnes();
  } else if (new_rows == 1) {
    P.row(0).setConstant(1.0 / static_cast<double>(old_rows));
  } else {
    for (Eigen::Index r = 0; r < new_rows; ++r) {
      const double src = static_cast<double>(r) * static_cast<double>(old_rows - 1) /
                         static_cast<double>(new_rows - 1);
      const Eigen::Index lo = static_cast<Eigen::Index>(std::floor(src));
      const Eigen::Index hi = std::min(lo + 1, old_rows - 1);
      const double w = src - static_cast<double>(lo);
      P(r, lo) += 1.0 - w;
      P(r, hi) += w;
    }
  }
  Var out = make(P * node(a).value, node(a).needs_grad, nullptr);
  int oi = out.index_;
  node(out).backprop = [a, oi, P = std::move(P)](Tape& t) {
    t.accumulate(a, P.transpose() * t.nodes_[oi].grad);
  };
  return out;
}

void Tape::backward(Var loss) {
  if (node(loss).value.size() != 1) throw std::invalid_argument("backward: loss must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  node(loss).grad = Mat::Ones(1, 1);
  for (int i = loss.index_; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0 || !n.needs_grad) continue;
    if (n.backprop) n.backprop(*this);
    if (n.bound) n.bound->grad += n.grad;
  }
}

}  // namespace unimov::ad
