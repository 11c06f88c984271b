#include "bcrl/baselines.hpp"

#include <cmath>
#include <map>

#include "bcrl/kernels.hpp"
#include "bcrl/rng.hpp"

namespace bcrl {

FqeNet::FqeNet(NetConfig trunk_config, double head_radius_in,
               std::uint64_t seed)
    : trunk(trunk_config, seed), head_radius(head_radius_in) {
  SplitMix64 rng = SplitMix64(seed).split(0x68656164);
  head = Eigen::VectorXd(trunk_config.output_dim);
  const double bound = 1.0 / std::sqrt(trunk_config.output_dim);
  for (Eigen::Index i = 0; i < head.size(); ++i) {
    head[i] = rng.next_in(-bound, bound);
  }
}

void FqeConfig::validate() const {
  if (k_iters < 1) throw std::invalid_argument("FqeConfig: k_iters must be >= 1");
  if (inner_steps < 1) throw std::invalid_argument("FqeConfig: inner_steps must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("FqeConfig: learning rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("FqeConfig: batch size must be >= 1");
}

double FqeResult::value_at(const Eigen::VectorXd& p0,
                           const Policy& pi_e) const {
  return p0.dot(state_values(pi_e));
}

FqeLossGrads fqe_regression_grads(const FqeNet& net,
                                  std::span<const Transition> batch,
                                  const Eigen::VectorXd& target_v,
                                  double gamma, int num_states,
                                  int num_actions) {
  // Group by pair: prediction is constant per (s,a), targets vary with s'.
  struct Group {
    double count = 0.0;
    double target_sum = 0.0;
    double target_sq_sum = 0.0;
  };
  std::map<int, Group> groups;
  for (const Transition& t : batch) {
    Group& g = groups[t.s * num_actions + t.a];
    const double y = t.r + gamma * target_v[t.next_s];
    g.count += 1.0;
    g.target_sum += y;
    g.target_sq_sum += y * y;
  }

  FqeLossGrads out;
  out.d_trunk = Eigen::VectorXd::Zero(net.trunk.param_count());
  out.d_head = Eigen::VectorXd::Zero(net.head.size());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& [sa, g] : groups) {
    const Eigen::VectorXd input = onehot_input(
        num_states, num_actions, sa / num_actions, sa % num_actions);
    const Eigen::VectorXd feat = net.trunk.forward(input);
    const double pred = net.head.dot(feat);
    loss += g.count * pred * pred - 2.0 * pred * g.target_sum + g.target_sq_sum;
    const double upstream = 2.0 * inv_b * (g.count * pred - g.target_sum);
    out.d_head += upstream * feat;
    if (!net.trunk_frozen) {
      net.trunk.accumulate_param_gradient(input, upstream * net.head,
                                          out.d_trunk);
    }
  }
  out.loss = loss * inv_b;
  return out;
}

FqeResult fqe_run(FqeNet net, const OfflineDataset& data, const Policy& pi_e,
                  double gamma, const FqeConfig& config) {
  config.validate();
  if (data.tuples.empty()) throw std::invalid_argument("fqe_run: empty dataset");
  const int num_states = data.num_states;
  const int num_actions = data.num_actions;

  SplitMix64 batch_rng = SplitMix64(config.seed).split(0x626174);
  std::vector<std::size_t> order(data.tuples.size());
  const std::size_t batches_per_epoch =
      std::max<std::size_t>(1, data.tuples.size() / config.batch_size);
  const std::size_t effective_batch =
      std::min<std::size_t>(config.batch_size, data.tuples.size());
  std::size_t batch_cursor = batches_per_epoch;

  std::vector<Transition> batch(effective_batch);

  auto q_snapshot = [&]() {
    Eigen::MatrixXd q(num_states, num_actions);
    for (int s = 0; s < num_states; ++s) {
      for (int a = 0; a < num_actions; ++a) {
        q(s, a) = net.value(onehot_input(num_states, num_actions, s, a));
      }
    }
    return q;
  };

  FqeResult result;
  for (int k = 0; k < config.k_iters; ++k) {
    // Bootstrap target from the frozen previous-iteration network.
    const Eigen::MatrixXd q_prev = q_snapshot();
    const Eigen::VectorXd target_v =
        (q_prev.array() * pi_e.probs.array()).rowwise().sum();

    double last_loss = 0.0;
    for (int inner = 0; inner < config.inner_steps; ++inner) {
      if (batch_cursor >= batches_per_epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle(order, batch_rng);
        batch_cursor = 0;
      }
      const std::size_t offset = batch_cursor * effective_batch;
      for (std::size_t i = 0; i < effective_batch; ++i) {
        batch[i] = data.tuples[order[offset + i]];
      }
      ++batch_cursor;

      FqeLossGrads grads = fqe_regression_grads(net, batch, target_v, gamma,
                                                num_states, num_actions);
      if (!std::isfinite(grads.loss)) {
        throw std::runtime_error("fqe_run: non-finite loss at outer " +
                                 std::to_string(k) + " inner " +
                                 std::to_string(inner));
      }
      if (!net.trunk_frozen) {
        net.trunk.params() -= config.learning_rate * grads.d_trunk;
      }
      net.head -= config.learning_rate * grads.d_head;
      const double head_norm = net.head.norm();
      if (head_norm > net.head_radius) {
        net.head *= net.head_radius / head_norm;
      }
      last_loss = grads.loss;
    }
    result.residual_trace.push_back(last_loss);
    result.q_tables.push_back(q_snapshot());
  }
  return result;
}

TrainConfig ablation_config(AblationKind kind, const TrainConfig& reference) {
  TrainConfig cfg = reference;
  switch (kind) {
    case AblationKind::no_design:
      cfg.design_weight = 0.0;
      break;
    case AblationKind::design_only:
      cfg.bc_weight = 0.0;
      break;
  }
  return cfg;
}

}  // namespace bcrl
