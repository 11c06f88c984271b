#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace bcrl {

enum class HeadKind { bounded, identity };

// Fully connected net: `num_hidden` tanh layers of width `hidden_width`,
// then a linear output layer. The bounded head applies
// out_i = head_bound * tanh(z_i) / sqrt(output_dim), which enforces
// ||out||_2 <= head_bound structurally instead of by clipping.
struct NetConfig {
  int input_dim = 0;
  int hidden_width = 64;
  int num_hidden = 2;
  int output_dim = 0;
  HeadKind head = HeadKind::bounded;
  double head_bound = 1.0;

  bool operator==(const NetConfig&) const = default;
};

class TrainableNet {
 public:
  TrainableNet(NetConfig config, std::uint64_t init_seed);
  TrainableNet(NetConfig config, Eigen::VectorXd params);

  const NetConfig& config() const { return config_; }
  int param_count() const { return static_cast<int>(params_.size()); }
  const Eigen::VectorXd& params() const { return params_; }
  Eigen::VectorXd& params() { return params_; }

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;

  // Accumulates d<upstream, net(input)>/dparams into grad. grad must have
  // param_count() entries; activations are recomputed.
  void accumulate_param_gradient(const Eigen::VectorXd& input,
                                 const Eigen::VectorXd& upstream,
                                 Eigen::VectorXd& grad) const;

  // One line that pins the architecture for checkpoint compatibility.
  std::string descriptor() const;

 private:
  struct LayerView {
    int w_offset, b_offset, rows, cols;
  };

  NetConfig config_;
  Eigen::VectorXd params_;
  std::vector<LayerView> layers_;

  void build_layout();
};

// onehot(s) ++ onehot(a), the tabular network input encoding.
Eigen::VectorXd onehot_input(int num_states, int num_actions, int s, int a);

}  // namespace bcrl
