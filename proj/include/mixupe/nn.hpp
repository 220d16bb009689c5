#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixupe/tensor.hpp"

namespace mixupe {

enum class Activation { identity, relu, tanh, softplus };

Activation activation_from_string(const std::string& s);
const char* activation_name(Activation a);

/// Architecture description: input width, hidden widths, logit width.
struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 0;
  Activation hidden_activation = Activation::relu;
  /// Bias-free construction. Keeps bias tensors absent (not zero), so
  /// ReLU nets are exactly positively homogeneous.
  bool homogeneous = false;
};

struct DenseLayer {
  Tensor weight;               // out x in
  std::optional<Tensor> bias;  // 1 x out
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

/**
 * Plain fully connected net producing logits: the last layer has identity
 * activation and no softmax/sigmoid is applied (the loss owns that).
 */
class MlpModel {
 public:
  MlpModel() = default;

  /// Weights ~ uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero
  /// (absent in homogeneous mode). Same (spec, seed) gives the same model.
  static MlpModel init(const MlpSpec& spec, std::uint64_t seed);

  /// Logits for a batch; parameters participate in the gradient tape.
  Tensor forward(const Tensor& x) const;
  /// Logits with parameters treated as constants (jacobians w.r.t. the
  /// input, evaluation, probes).
  Tensor forward_detached(const Tensor& x) const;

  const MlpSpec& spec() const { return spec_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t input_dim() const { return spec_.input_dim; }
  std::size_t output_dim() const { return spec_.output_dim; }

  /// Trainable tensors in a fixed order (weight0, bias0, weight1, ...).
  std::vector<Tensor> parameters() const;
  void clear_grads() const;
  /// Deep copy; the copy shares nothing with this model.
  MlpModel snapshot() const;

 private:
  MlpSpec spec_;
  std::vector<DenseLayer> layers_;

  Tensor run(const Tensor& x, bool detached) const;

  friend void save_model(const MlpModel&, const std::string&);
  friend MlpModel load_model(const std::string&);
};

/// Versioned text checkpoint; doubles are stored as raw IEEE-754 bits so a
/// save/load round trip is bit-exact.
void save_model(const MlpModel& model, const std::string& path);
MlpModel load_model(const std::string& path);

struct OptimizerSpec {
  enum class Kind { sgd_momentum, adam };
  Kind kind = Kind::adam;
  double learning_rate = 0.001;
  double momentum = 0.9;   // sgd_momentum
  double beta1 = 0.9;      // adam
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/**
 * SGD with momentum (v <- mu v + g; theta <- theta - lr v) or Adam with
 * bias correction. step() consumes the gradients and resets them.
 */
class Optimizer {
 public:
  Optimizer(const OptimizerSpec& spec, const std::vector<Tensor>& params);

  void step(const std::vector<Tensor>& params);
  std::uint64_t step_count() const { return step_count_; }
  const OptimizerSpec& spec() const { return spec_; }

 private:
  OptimizerSpec spec_;
  std::vector<std::vector<double>> moment1_;  // velocity / adam m
  std::vector<std::vector<double>> moment2_;  // adam v
  std::vector<std::size_t> sizes_;
  std::uint64_t step_count_ = 0;
};

}  // namespace mixupe
