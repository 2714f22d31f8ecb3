#pragma once

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace unimov::ad {

using Mat = Eigen::MatrixXd;

// Named trainable array. Gradients accumulate into `grad` during backward.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Owns parameters by name; iteration order is the sorted name order, which
// keeps optimizer updates and checkpoints deterministic.
class ParamStore {
 public:
  Parameter& create(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Parameter& create(const std::string& name, const Mat& init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grads();
  std::size_t size() const { return params_.size(); }

  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& [name, p] : params_) fn(*p);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [name, p] : params_) fn(*p);
  }

 private:
  std::map<std::string, std::unique_ptr<Parameter>> params_;
};

// Decoupled-weight-decay Adam. State is keyed by parameter name.
class AdamW {
 public:
  AdamW(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
        double weight_decay = 0.01)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(ParamStore& store);
  double learning_rate() const { return lr_; }

 private:
  struct Moments {
    Mat m, v;
  };
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int i) : tape_(t), index_(i) {}
  Tape* tape_ = nullptr;
  int index_ = -1;
};

// Define-by-run reverse-mode tape over dense double matrices.
// One tape per forward pass; backward() releases nothing, so values and
// gradients stay inspectable until the tape is destroyed.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Var constant(Mat v);                 // no gradient tracked
  Var input(Mat v);                    // gradient retrievable via grad()
  Var param(Parameter& p);             // backward accumulates into p.grad

  // Arithmetic.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var neg(Var a);
  Var hadamard(Var a, Var b);          // elementwise product, same shape
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var mul_scalar(Var a, Var s);        // s is 1x1, broadcast multiply
  Var reciprocal(Var a);

  // Broadcasts.
  Var add_rowvec(Var a, Var r);        // r is 1xC, added to every row
  Var mul_rowvec(Var a, Var r);        // r is 1xC, multiplies every row
  Var scale_rows(Var a, Var s);        // s is Rx1, y(i,j) = a(i,j) * s(i)

  // Elementwise functions.
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var sqrt(Var a);

  // Reductions and row ops.
  Var sum(Var a);                      // 1x1
  Var mean(Var a);                     // 1x1
  Var row_sum(Var a);                  // Rx1
  Var col_max(Var a);                  // 1xC, argmax-routed gradient
  Var row_softmax(Var a);              // stable, rows sum to 1
  Var row_logsumexp(Var a);            // Rx1
  Var rows_l2_normalize(Var a);        // unit rows; zero rows map to e1
  Var take_diag(Var a);                // min(R,C) x 1

  // Structure.
  Var concat_cols(Var a, Var b);
  Var concat_rows(Var a, Var b);
  Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n);
  Var gather_rows(Var a, std::vector<int> idx);   // duplicates allowed
  Var row_maxpool2(Var a);                        // rows -> ceil(R/2)
  Var resample_rows_linear(Var a, Eigen::Index new_rows);

  void backward(Var loss);             // loss must be 1x1
  const Mat& grad(Var v) const;        // gradient of an input/param node
  const Mat& value(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Parameter* bound = nullptr;
    std::function<void(Tape&)> backprop;  // empty for leaves
  };

  Var make(Mat value, bool needs_grad, std::function<void(Tape&)> backprop);
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.index_)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.index_)]; }
  void accumulate(Var v, const Mat& g);

  std::vector<Node> nodes_;
};

}  // namespace unimov::ad
