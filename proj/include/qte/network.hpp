#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qte/rng.hpp"

namespace qte {

/**
 * Shape of a fully connected tanh network: `input_dim` inputs, one entry of
 * `hidden` per hidden layer, and `output_dim` linear outputs (logits).
 *
 * Layer l (zero-based) maps V_{l-1} inputs to V_l outputs through a matrix of
 * shape V_l x (V_{l-1} + 1); column 0 holds the bias, column j the weight on
 * input unit j.
 */
struct NetworkArchitecture {
  int input_dim = 0;
  std::vector<int> hidden;
  int output_dim = 1;

  int num_layers() const noexcept { return static_cast<int>(hidden.size()) + 1; }

  int width(int layer) const {
    if (layer < 0) return input_dim;
    if (layer < static_cast<int>(hidden.size())) return hidden[layer];
    return output_dim;
  }

  int rows(int layer) const { return width(layer); }
  int cols(int layer) const { return width(layer - 1) + 1; }
  int layer_size(int layer) const { return rows(layer) * cols(layer); }

  int offset(int layer) const {
    int off = 0;
    for (int l = 0; l < layer; ++l) off += layer_size(l);
    return off;
  }

  int num_weights() const { return offset(num_layers()); }

  void validate() const {
    if (input_dim < 0) throw std::invalid_argument("NetworkArchitecture: negative input_dim");
    if (output_dim < 1) throw std::invalid_argument("NetworkArchitecture: output_dim < 1");
    for (int v : hidden) {
      if (v < 1) throw std::invalid_argument("NetworkArchitecture: hidden width < 1");
    }
  }

  bool operator==(const NetworkArchitecture&) const = default;
};

/// Flat weight vector plus the architecture it is laid out for.
class NetworkWeights {
 public:
  NetworkWeights() = default;
  explicit NetworkWeights(NetworkArchitecture arch)
      : arch_(std::move(arch)), flat_(Eigen::VectorXd::Zero(arch_.num_weights())) {
    arch_.validate();
  }
  NetworkWeights(NetworkArchitecture arch, Eigen::VectorXd flat)
      : arch_(std::move(arch)), flat_(std::move(flat)) {
    arch_.validate();
    if (flat_.size() != arch_.num_weights()) {
      throw std::invalid_argument("NetworkWeights: expected " +
                                  std::to_string(arch_.num_weights()) + " weights, got " +
                                  std::to_string(flat_.size()));
    }
  }

  const NetworkArchitecture& arch() const noexcept { return arch_; }
  const Eigen::VectorXd& flat() const noexcept { return flat_; }
  Eigen::VectorXd& flat() noexcept { return flat_; }

  Eigen::Map<Eigen::MatrixXd> layer(int l) {
    return {flat_.data() + arch_.offset(l), arch_.rows(l), arch_.cols(l)};
  }
  Eigen::Map<const Eigen::MatrixXd> layer(int l) const {
    return {flat_.data() + arch_.offset(l), arch_.rows(l), arch_.cols(l)};
  }

  /// Independent N(0, sd^2) entries.
  static NetworkWeights random(const NetworkArchitecture& arch, double sd, Rng& rng) {
    NetworkWeights w(arch);
    for (Eigen::Index i = 0; i < w.flat_.size(); ++i) w.flat_[i] = sd * std_normal(rng);
    return w;
  }

 private:
  NetworkArchitecture arch_;
  Eigen::VectorXd flat_;
};

inline Eigen::Map<const Eigen::MatrixXd> layer_view(const NetworkArchitecture& arch,
                                                    const double* flat, int l) {
  return {flat + arch.offset(l), arch.rows(l), arch.cols(l)};
}

/// Hidden-layer activations kept from a batched forward pass.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> hidden;  // tanh outputs, V_l x n
};

/// tanh through the vectorized exp; absolute error stays near machine epsilon.
inline Eigen::MatrixXd fast_tanh(const Eigen::MatrixXd& z) {
  return (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
}

/**
 * Batched forward pass. `inputs` is input_dim x n (one subject per column);
 * returns the output logits, output_dim x n.
 */
inline Eigen::MatrixXd mlp_forward(const NetworkArchitecture& arch, const double* flat,
                                   const Eigen::MatrixXd& inputs, ForwardCache* cache) {
  if (inputs.rows() != arch.input_dim) {
    throw std::invalid_argument("mlp_forward: input has " + std::to_string(inputs.rows()) +
                                " rows, network expects " + std::to_string(arch.input_dim));
  }
  const int num_layers = arch.num_layers();
  if (cache) cache->hidden.resize(num_layers - 1);
  Eigen::MatrixXd current;
  const Eigen::MatrixXd* in = &inputs;
  for (int l = 0; l < num_layers; ++l) {
    auto w = layer_view(arch, flat, l);
    Eigen::MatrixXd z(w.rows(), in->cols());
    if (w.cols() > 1) {
      z.noalias() = w.rightCols(w.cols() - 1) * (*in);
      z.colwise() += w.col(0);
    } else {
      z = w.col(0).replicate(1, in->cols());
    }
    if (l + 1 == num_layers) return z;
    current = fast_tanh(z);
    if (cache) {
      cache->hidden[l] = current;
      in = &cache->hidden[l];
    } else {
      in = &current;
    }
  }
  return current;  // unreachable
}

/**
 * Backpropagate d(objective)/d(logits) through the network, accumulating into
 * `grad_flat` (same layout as the weights). Requires the cache from the
 * matching forward call.
 */
inline void mlp_backward(const NetworkArchitecture& arch, const double* flat,
                         const Eigen::MatrixXd& inputs, const ForwardCache& cache,
                         Eigen::MatrixXd grad_logits, double* grad_flat) {
  const int num_layers = arch.num_layers();
  Eigen::MatrixXd delta = std::move(grad_logits);
  for (int l = num_layers - 1; l >= 0; --l) {
    auto w = layer_view(arch, flat, l);
    Eigen::Map<Eigen::MatrixXd> g(grad_flat + arch.offset(l), arch.rows(l), arch.cols(l));
    const Eigen::MatrixXd& in = l == 0 ? inputs : cache.hidden[l - 1];
    g.col(0) += delta.rowwise().sum();
    if (w.cols() > 1) g.rightCols(w.cols() - 1).noalias() += delta * in.transpose();
    if (l == 0) break;
    Eigen::MatrixXd back = w.rightCols(w.cols() - 1).transpose() * delta;
    const Eigen::MatrixXd& h = cache.hidden[l - 1];
    delta = back.array() * (1.0 - h.array().square());
  }
}

/// Column-wise softmax, shifted by the column maximum.
inline Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out = logits;
  for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c).array() -= out.col(c).maxCoeff();
  out.array() = out.array().exp();
  for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c) /= out.col(c).sum();
  return out;
}

}  // namespace qte
