#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace uavxai {

/// Sizes of the independent action factors a network scores. Output rows
/// are the concatenation of the groups in order.
struct FactorLayout {
  std::vector<int> sizes;

  int groups() const { return static_cast<int>(sizes.size()); }
  int total() const { return std::accumulate(sizes.begin(), sizes.end(), 0); }
  int offset(int group) const {
    return std::accumulate(sizes.begin(), sizes.begin() + group, 0);
  }
  friend bool operator==(const FactorLayout&, const FactorLayout&) = default;
};

struct NetworkShape {
  int inputs = 0;
  std::vector<int> hidden{40, 40, 40};
  FactorLayout layout;
  bool dueling = true;

  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

/// Fully connected ReLU trunk with either a plain Q head or a dueling
/// value/advantage pair. Parameters live in one flat vector so optimizers,
/// target copies and checkpoints see a single buffer; each weight matrix is
/// a row-major view into it.
///
/// With dueling enabled each factor group g is aggregated as
///   Q_g(s, a) = V(s) + A_g(s, a) - mean_a' A_g(s, a').
template <typename Scalar = double>
class QNetwork {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  struct Layer {
    Eigen::Index weight_offset = 0;
    Eigen::Index bias_offset = 0;
    int rows = 0;
    int cols = 0;
  };

  /// Everything backward() needs from a forward pass.
  struct Activations {
    std::vector<Matrix> hidden;  // hidden[0] is the input batch
    Matrix value;                // 1 x batch, empty without dueling
    Matrix advantage;            // outputs x batch (raw head output)
    Matrix q;                    // outputs x batch
  };

  QNetwork() = default;

  explicit QNetwork(NetworkShape shape) : shape_(std::move(shape)) {
    if (shape_.inputs <= 0 || shape_.layout.total() <= 0) {
      throw std::invalid_argument("network needs inputs and outputs");
    }
    Eigen::Index cursor = 0;
    auto add = [&cursor](int rows, int cols) {
      Layer l{cursor, cursor + static_cast<Eigen::Index>(rows) * cols, rows, cols};
      cursor = l.bias_offset + rows;
      return l;
    };
    int width = shape_.inputs;
    for (int h : shape_.hidden) {
      trunk_.push_back(add(h, width));
      width = h;
    }
    advantage_head_ = add(shape_.layout.total(), width);
    if (shape_.dueling) value_head_ = add(1, width);
    params_ = Vector::Zero(cursor);
  }

  template <typename Rng>
  QNetwork(NetworkShape shape, Rng& rng) : QNetwork(std::move(shape)) {
    initialize(rng);
  }

  /// He-uniform weights, zero biases.
  template <typename Rng>
  void initialize(Rng& rng) {
    params_.setZero();
    auto fill = [&](const Layer& l) {
      const double bound = std::sqrt(6.0 / l.cols);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(l.rows) * l.cols; ++i) {
        params_[l.weight_offset + i] = static_cast<Scalar>(dist(rng));
      }
    };
    for (const auto& l : trunk_) fill(l);
    fill(advantage_head_);
    if (shape_.dueling) fill(value_head_);
  }

  const NetworkShape& shape() const { return shape_; }
  const FactorLayout& layout() const { return shape_.layout; }
  Vector& parameters() { return params_; }
  const Vector& parameters() const { return params_; }
  Eigen::Index parameter_count() const { return params_.size(); }

  const std::vector<Layer>& trunk_layers() const { return trunk_; }
  const Layer& advantage_layer() const { return advantage_head_; }
  const Layer& value_layer() const { return value_head_; }

  Activations forward(const Matrix& x) const {
    if (x.rows() != shape_.inputs) throw std::invalid_argument("input width mismatch");
    Activations act;
    act.hidden.reserve(trunk_.size() + 1);
    act.hidden.push_back(x);
    for (const auto& l : trunk_) {
      Matrix z = weights(l) * act.hidden.back();
      z.colwise() += bias(l);
      act.hidden.push_back(z.cwiseMax(Scalar(0)));
    }
    const Matrix& top = act.hidden.back();
    act.advantage = weights(advantage_head_) * top;
    act.advantage.colwise() += bias(advantage_head_);
    if (!shape_.dueling) {
      act.q = act.advantage;
      return act;
    }
    act.value = weights(value_head_) * top;
    act.value.colwise() += bias(value_head_);
    act.q.resize(act.advantage.rows(), act.advantage.cols());
    for (int g = 0; g < shape_.layout.groups(); ++g) {
      const int off = shape_.layout.offset(g);
      const int n = shape_.layout.sizes[static_cast<size_t>(g)];
      const auto a = act.advantage.middleRows(off, n);
      const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = a.colwise().mean();
      act.q.middleRows(off, n) = (a.rowwise() - mean).rowwise() + act.value.row(0);
    }
    return act;
  }

  Matrix q_values(const Matrix& x) const { return forward(x).q; }

  /// Gradient of a scalar loss with respect to every parameter, given the
  /// loss gradient `dq` with respect to the aggregated Q outputs.
  Vector backward(const Activations& act, const Matrix& dq) const {
    Vector grad = Vector::Zero(params_.size());
    Matrix d_adv = dq;
    Matrix d_top;
    const Matrix& top = act.hidden.back();
    if (shape_.dueling) {
      for (int g = 0; g < shape_.layout.groups(); ++g) {
        const int off = shape_.layout.offset(g);
        const int n = shape_.layout.sizes[static_cast<size_t>(g)];
        const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = dq.middleRows(off, n).colwise().mean();
        d_adv.middleRows(off, n) = dq.middleRows(off, n).rowwise() - mean;
      }
      const Matrix d_value = dq.colwise().sum();
      weights_mut(grad, value_head_) = d_value * top.transpose();
      bias_mut(grad, value_head_) = d_value.rowwise().sum();
      d_top = weights(value_head_).transpose() * d_value;
      d_top.noalias() += weights(advantage_head_).transpose() * d_adv;
    } else {
      d_top = weights(advantage_head_).transpose() * d_adv;
    }
    weights_mut(grad, advantage_head_) = d_adv * top.transpose();
    bias_mut(grad, advantage_head_) = d_adv.rowwise().sum();

    Matrix d_out = std::move(d_top);
    for (size_t i = trunk_.size(); i-- > 0;) {
      const Matrix& out = act.hidden[i + 1];
      const Matrix& in = act.hidden[i];
      const Matrix dz = (out.array() > Scalar(0)).select(d_out, Scalar(0));
      weights_mut(grad, trunk_[i]) = dz * in.transpose();
      bias_mut(grad, trunk_[i]) = dz.rowwise().sum();
      if (i > 0) d_out = weights(trunk_[i]).transpose() * dz;
    }
    return grad;
  }

  Eigen::Map<const RowMajor> weights(const Layer& l) const {
    return {params_.data() + l.weight_offset, l.rows, l.cols};
  }
  Eigen::Map<const Vector> bias(const Layer& l) const {
    return {params_.data() + l.bias_offset, l.rows};
  }

 private:
  static Eigen::Map<RowMajor> weights_mut(Vector& buf, const Layer& l) {
    return {buf.data() + l.weight_offset, l.rows, l.cols};
  }
  static Eigen::Map<Vector> bias_mut(Vector& buf, const Layer& l) {
    return {buf.data() + l.bias_offset, l.rows};
  }

  NetworkShape shape_;
  std::vector<Layer> trunk_;
  Layer advantage_head_;
  Layer value_head_;
  Vector params_;
};

/// Adam over a flat parameter vector.
template <typename Scalar = double>
class Adam {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam() = default;
  Adam(Eigen::Index size, Options opts)
      : opts_(opts), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

  void step(Vector& params, const Vector& grad) {
    ++t_;
    m_ = opts_.beta1 * m_ + (1.0 - opts_.beta1) * grad;
    v_ = opts_.beta2 * v_ + (1.0 - opts_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(opts_.beta1, t_);
    const double c2 = 1.0 - std::pow(opts_.beta2, t_);
    const Vector update =
        (m_.array() / c1) / ((v_.array() / c2).sqrt() + static_cast<Scalar>(opts_.epsilon));
    params -= static_cast<Scalar>(opts_.learning_rate) * update;
  }

  const Options& options() const { return opts_; }
  long steps() const { return t_; }

 private:
  Options opts_;
  Vector m_;
  Vector v_;
  long t_ = 0;
};

}  // namespace uavxai
