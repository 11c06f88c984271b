#include "bcrl/net.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "bcrl/kernels.hpp"
#include "bcrl/rng.hpp"

namespace bcrl {

void TrainableNet::build_layout() {
  layers_.clear();
  int offset = 0;
  int in = config_.input_dim;
  for (int l = 0; l < config_.num_hidden; ++l) {
    layers_.push_back({offset, offset + config_.hidden_width * in,
                       config_.hidden_width, in});
    offset += config_.hidden_width * in + config_.hidden_width;
    in = config_.hidden_width;
  }
  layers_.push_back({offset, offset + config_.output_dim * in,
                     config_.output_dim, in});
  offset += config_.output_dim * in + config_.output_dim;
  if (params_.size() == 0) {
    params_ = Eigen::VectorXd::Zero(offset);
  } else if (params_.size() != offset) {
    throw std::invalid_argument("TrainableNet: parameter vector size mismatch");
  }
}

TrainableNet::TrainableNet(NetConfig config, std::uint64_t init_seed)
    : config_(config) {
  if (config_.input_dim < 1 || config_.output_dim < 1 ||
      (config_.num_hidden > 0 && config_.hidden_width < 1)) {
    throw std::invalid_argument("TrainableNet: invalid dimensions");
  }
  build_layout();
  SplitMix64 rng(init_seed);
  for (const LayerView& layer : layers_) {
    // Xavier-uniform weights, zero biases.
    const double bound = std::sqrt(6.0 / (layer.rows + layer.cols));
    for (int i = 0; i < layer.rows * layer.cols; ++i) {
      params_[layer.w_offset + i] = rng.next_in(-bound, bound);
    }
  }
}

TrainableNet::TrainableNet(NetConfig config, Eigen::VectorXd params)
    : config_(config), params_(std::move(params)) {
  build_layout();
}

Eigen::VectorXd TrainableNet::forward(const Eigen::VectorXd& input) const {
  if (input.size() != config_.input_dim) {
    throw std::invalid_argument("TrainableNet::forward: input dim mismatch");
  }
  Eigen::VectorXd h = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerView& layer = layers_[l];
    Eigen::VectorXd z(layer.rows);
    kernels::matvec(params_.data() + layer.w_offset, layer.rows, layer.cols,
                    h.data(), z.data());
    kernels::axpy(1.0, params_.data() + layer.b_offset, z.data(), layer.rows);
    if (l + 1 < layers_.size()) {
      h = z.array().tanh();
    } else {
      h = std::move(z);
    }
  }
  if (config_.head == HeadKind::bounded) {
    const double scale = config_.head_bound / std::sqrt(config_.output_dim);
    h = scale * h.array().tanh();
  }
  return h;
}

void TrainableNet::accumulate_param_gradient(const Eigen::VectorXd& input,
                                             const Eigen::VectorXd& upstream,
                                             Eigen::VectorXd& grad) const {
  if (upstream.size() != config_.output_dim ||
      grad.size() != params_.size()) {
    throw std::invalid_argument("TrainableNet::accumulate_param_gradient: shape mismatch");
  }
  // Forward pass, keeping per-layer inputs and pre-activations.
  std::vector<Eigen::VectorXd> inputs;   // input to each layer
  std::vector<Eigen::VectorXd> preacts;  // z of each layer
  inputs.reserve(layers_.size());
  preacts.reserve(layers_.size());
  Eigen::VectorXd h = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerView& layer = layers_[l];
    inputs.push_back(h);
    Eigen::VectorXd z(layer.rows);
    kernels::matvec(params_.data() + layer.w_offset, layer.rows, layer.cols,
                    h.data(), z.data());
    kernels::axpy(1.0, params_.data() + layer.b_offset, z.data(), layer.rows);
    preacts.push_back(z);
    if (l + 1 < layers_.size()) h = z.array().tanh();
  }

  Eigen::VectorXd delta;
  const Eigen::VectorXd& z_out = preacts.back();
  if (config_.head == HeadKind::bounded) {
    const double scale = config_.head_bound / std::sqrt(config_.output_dim);
    delta = upstream.array() * (1.0 - z_out.array().tanh().square()) * scale;
  } else {
    delta = upstream;
  }

  for (std::size_t l = layers_.size(); l-- > 0;) {
    const LayerView& layer = layers_[l];
    kernels::add_ger(grad.data() + layer.w_offset, delta.data(),
                     inputs[l].data(), 1.0, layer.rows, layer.cols);
    kernels::axpy(1.0, delta.data(), grad.data() + layer.b_offset, layer.rows);
    if (l == 0) break;
    Eigen::VectorXd back(layer.cols);
    kernels::matvec_t(params_.data() + layer.w_offset, layer.rows, layer.cols,
                      delta.data(), back.data());
    delta = back.array() * (1.0 - preacts[l - 1].array().tanh().square());
  }
}

std::string TrainableNet::descriptor() const {
  std::ostringstream out;
  out << "bcrl-net v1 in=" << config_.input_dim
      << " hidden=" << config_.hidden_width << " layers=" << config_.num_hidden
      << " out=" << config_.output_dim
      << " head=" << (config_.head == HeadKind::bounded ? "bounded" : "identity");
  char buf[64];
  std::snprintf(buf, sizeof(buf), " bound=%.17g", config_.head_bound);
  out << buf;
  return out.str();
}

Eigen::VectorXd onehot_input(int num_states, int num_actions, int s, int a) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(num_states + num_actions);
  x[s] = 1.0;
  x[num_states + a] = 1.0;
  return x;
}

}  // namespace bcrl
