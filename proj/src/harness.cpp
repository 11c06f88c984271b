#include "bcrl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "bcrl/features.hpp"
#include "bcrl/kernels.hpp"
#include "bcrl/lspe.hpp"
#include "bcrl/oracles.hpp"
#include "bcrl/rng.hpp"

namespace bcrl {

using nlohmann::json;

namespace {

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

void atomic_write(const std::filesystem::path& path, const std::string& body) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

json policy_spec_json(const PolicySpec& spec) {
  json j;
  j["kind"] = spec.kind;
  if (spec.kind == "softmax") j["temperature"] = spec.temperature;
  if (spec.kind == "random") j["seed"] = spec.seed;
  return j;
}

PolicySpec parse_policy_spec(const json& j, const std::string& where,
                             std::vector<std::string>& problems) {
  PolicySpec spec;
  spec.kind = j.value("kind", "uniform");
  if (spec.kind != "uniform" && spec.kind != "softmax" && spec.kind != "random") {
    problems.push_back(where + ".kind: unknown policy kind '" + spec.kind + "'");
  }
  spec.temperature = j.value("temperature", 1.0);
  if (spec.kind == "softmax" && !(spec.temperature > 0.0)) {
    problems.push_back(where + ".temperature: must be positive");
  }
  spec.seed = j.value("seed", std::uint64_t{0});
  return spec;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems_in)
    : std::runtime_error([&] {
        std::string msg = "config validation failed:";
        for (const std::string& p : problems_in) msg += "\n  - " + p;
        return msg;
      }()),
      problems(std::move(problems_in)) {}

std::string ExperimentConfig::canonical_json() const {
  json j;
  j["mdp"] = {{"kind", mdp.kind},
              {"num_states", mdp.num_states},
              {"num_actions", mdp.num_actions},
              {"gamma", mdp.gamma},
              {"seed", mdp.seed},
              {"stochastic", mdp.stochastic}};
  if (mdp.kind == "low_rank") j["mdp"]["feature_dim"] = mdp.feature_dim;
  j["target_policy"] = policy_spec_json(target_policy);
  j["nu"]["kind"] = nu.kind;
  if (nu.kind == "occupancy") j["nu"]["behavior"] = policy_spec_json(nu.behavior);
  if (nu.kind == "mixture_onpolicy") {
    j["nu"]["weight"] = nu.weight;
    j["nu"]["base_kind"] = nu.base_kind;
    if (nu.base_kind == "occupancy") {
      j["nu"]["base_behavior"] = policy_spec_json(nu.base_behavior);
    }
  }
  j["dataset"]["n"] = dataset_n;
  j["feature"]["kind"] = feature.kind;
  if (feature.kind == "random_fixed" || feature.kind == "trainable") {
    j["feature"]["dim"] = feature.dim;
  }
  if (feature.kind == "random_fixed") j["feature"]["seed"] = feature.seed;
  if (feature.kind == "trainable") {
    j["feature"]["hidden_width"] = feature.hidden_width;
    j["feature"]["num_hidden"] = feature.num_hidden;
    j["train"] = {{"steps", train.steps},
                  {"learning_rate", train.learning_rate},
                  {"ema_tau", train.ema_tau},
                  {"design_weight", train.design_weight},
                  {"design", train.design == DesignKind::none      ? "none"
                             : train.design == DesignKind::logdet ? "logdet"
                                                                  : "min_eig"},
                  {"regime", train.regime == Regime::deterministic
                                 ? "deterministic"
                                 : "stochastic"},
                  {"batch_size", train.batch_size},
                  {"inner_fit_cadence", train.inner_fit_cadence},
                  {"constrain_witness", train.constrain_witness},
                  {"use_target_net", train.use_target_net},
                  {"bc_weight", train.bc_weight},
                  {"rho_bound", train.rho_bound},
                  {"m_spectral_bound", train.m_spectral_bound}};
  }
  j["lspe"] = {{"k_iters", lspe.k_iters}, {"w_radius", lspe.w_radius}};
  j["fqe"] = {{"enabled", fqe.enabled}};
  if (fqe.enabled) {
    j["fqe"]["k_iters"] = fqe.k_iters;
    j["fqe"]["inner_steps"] = fqe.inner_steps;
    j["fqe"]["learning_rate"] = fqe.learning_rate;
    j["fqe"]["batch_size"] = fqe.batch_size;
    j["fqe"]["w_radius"] = fqe.w_radius;
  }
  j["slices"] = slices;
  j["seeds"] = seeds;
  return j.dump(2);
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(canonical_json()); }

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("not valid JSON: ") + e.what()});
  }

  std::vector<std::string> problems;
  ExperimentConfig cfg;

  const json jm = j.value("mdp", json::object());
  cfg.mdp.kind = jm.value("kind", "random_tabular");
  if (cfg.mdp.kind != "random_tabular" && cfg.mdp.kind != "low_rank") {
    problems.push_back("mdp.kind: must be random_tabular or low_rank");
  }
  cfg.mdp.num_states = jm.value("num_states", 6);
  cfg.mdp.num_actions = jm.value("num_actions", 2);
  if (cfg.mdp.num_states < 1) problems.push_back("mdp.num_states: must be >= 1");
  if (cfg.mdp.num_actions < 1) problems.push_back("mdp.num_actions: must be >= 1");
  cfg.mdp.feature_dim = jm.value("feature_dim", 4);
  if (cfg.mdp.kind == "low_rank" &&
      (cfg.mdp.feature_dim < 1 ||
       cfg.mdp.feature_dim > cfg.mdp.num_states * cfg.mdp.num_actions)) {
    problems.push_back("mdp.feature_dim: must be in [1, S*A]");
  }
  cfg.mdp.gamma = jm.value("gamma", 0.9);
  if (!(cfg.mdp.gamma > 0.0 && cfg.mdp.gamma < 1.0)) {
    problems.push_back("mdp.gamma: must be in (0, 1)");
  }
  cfg.mdp.seed = jm.value("seed", std::uint64_t{1});
  cfg.mdp.stochastic = jm.value("stochastic", true);

  cfg.target_policy = parse_policy_spec(j.value("target_policy", json::object()),
                                        "target_policy", problems);

  const json jn = j.value("nu", json::object());
  cfg.nu.kind = jn.value("kind", "uniform");
  if (cfg.nu.kind != "uniform" && cfg.nu.kind != "occupancy" &&
      cfg.nu.kind != "mixture_onpolicy") {
    problems.push_back("nu.kind: must be uniform, occupancy, or mixture_onpolicy");
  }
  if (cfg.nu.kind == "occupancy") {
    cfg.nu.behavior = parse_policy_spec(jn.value("behavior", json::object()),
                                        "nu.behavior", problems);
  }
  if (cfg.nu.kind == "mixture_onpolicy") {
    cfg.nu.weight = jn.value("weight", 0.5);
    if (!(cfg.nu.weight >= 0.0 && cfg.nu.weight <= 1.0)) {
      problems.push_back("nu.weight: must be in [0, 1]");
    }
    cfg.nu.base_kind = jn.value("base_kind", "uniform");
    if (cfg.nu.base_kind != "uniform" && cfg.nu.base_kind != "occupancy") {
      problems.push_back("nu.base_kind: must be uniform or occupancy");
    }
    if (cfg.nu.base_kind == "occupancy") {
      cfg.nu.base_behavior = parse_policy_spec(
          jn.value("base_behavior", json::object()), "nu.base_behavior",
          problems);
    }
  }

  cfg.dataset_n = j.value("dataset", json::object()).value("n", std::size_t{2000});
  if (cfg.dataset_n < 1) problems.push_back("dataset.n: must be >= 1");

  const json jf = j.value("feature", json::object());
  cfg.feature.kind = jf.value("kind", "one_hot");
  if (cfg.feature.kind != "one_hot" && cfg.feature.kind != "low_rank_truth" &&
      cfg.feature.kind != "random_fixed" && cfg.feature.kind != "trainable") {
    problems.push_back(
        "feature.kind: must be one_hot, low_rank_truth, random_fixed, or trainable");
  }
  if (cfg.feature.kind == "low_rank_truth" && cfg.mdp.kind != "low_rank") {
    problems.push_back("feature.kind low_rank_truth requires mdp.kind low_rank");
  }
  cfg.feature.dim = jf.value("dim", 8);
  if ((cfg.feature.kind == "random_fixed" || cfg.feature.kind == "trainable") &&
      cfg.feature.dim < 1) {
    problems.push_back("feature.dim: must be >= 1");
  }
  cfg.feature.seed = jf.value("seed", std::uint64_t{0});
  cfg.feature.hidden_width = jf.value("hidden_width", 64);
  cfg.feature.num_hidden = jf.value("num_hidden", 2);
  if (cfg.feature.kind == "trainable") {
    if (cfg.feature.hidden_width < 1) {
      problems.push_back("feature.hidden_width: must be >= 1");
    }
    if (cfg.feature.num_hidden < 0) {
      problems.push_back("feature.num_hidden: must be >= 0");
    }
  }

  const json jt = j.value("train", json::object());
  cfg.train.steps = jt.value("steps", 2000);
  cfg.train.learning_rate = jt.value("learning_rate", 0.05);
  cfg.train.ema_tau = jt.value("ema_tau", 0.05);
  cfg.train.design_weight = jt.value("design_weight", 0.001);
  const std::string design = jt.value("design", "logdet");
  if (design == "none") {
    cfg.train.design = DesignKind::none;
  } else if (design == "logdet") {
    cfg.train.design = DesignKind::logdet;
  } else if (design == "min_eig") {
    cfg.train.design = DesignKind::min_eig;
  } else {
    problems.push_back("train.design: must be none, logdet, or min_eig");
  }
  const std::string regime = jt.value("regime", "stochastic");
  if (regime == "deterministic") {
    cfg.train.regime = Regime::deterministic;
  } else if (regime == "stochastic") {
    cfg.train.regime = Regime::stochastic;
  } else {
    problems.push_back("train.regime: must be deterministic or stochastic");
  }
  cfg.train.batch_size = jt.value("batch_size", 256);
  cfg.train.inner_fit_cadence = jt.value("inner_fit_cadence", 25);
  cfg.train.constrain_witness = jt.value("constrain_witness", false);
  cfg.train.use_target_net = jt.value("use_target_net", true);
  cfg.train.bc_weight = jt.value("bc_weight", 1.0);
  cfg.train.rho_bound = jt.value("rho_bound", 10.0);
  cfg.train.m_spectral_bound = jt.value("m_spectral_bound", 0.99);
  if (cfg.feature.kind == "trainable") {
    try {
      cfg.train.validate();
    } catch (const std::invalid_argument& e) {
      problems.push_back(std::string("train: ") + e.what());
    }
  }

  const json jl = j.value("lspe", json::object());
  cfg.lspe.k_iters = jl.value("k_iters", 50);
  if (cfg.lspe.k_iters < 1) problems.push_back("lspe.k_iters: must be >= 1");
  cfg.lspe.w_radius = jl.value("w_radius", 0.0);
  if (cfg.lspe.w_radius < 0.0) problems.push_back("lspe.w_radius: must be >= 0");

  const json jq = j.value("fqe", json::object());
  cfg.fqe.enabled = jq.value("enabled", false);
  cfg.fqe.k_iters = jq.value("k_iters", 20);
  cfg.fqe.inner_steps = jq.value("inner_steps", 60);
  cfg.fqe.learning_rate = jq.value("learning_rate", 0.05);
  cfg.fqe.batch_size = jq.value("batch_size", 256);
  cfg.fqe.w_radius = jq.value("w_radius", 0.0);
  if (cfg.fqe.enabled) {
    if (cfg.fqe.k_iters < 1) problems.push_back("fqe.k_iters: must be >= 1");
    if (cfg.fqe.inner_steps < 1) problems.push_back("fqe.inner_steps: must be >= 1");
    if (!(cfg.fqe.learning_rate > 0.0)) {
      problems.push_back("fqe.learning_rate: must be positive");
    }
    if (cfg.fqe.batch_size < 1) problems.push_back("fqe.batch_size: must be >= 1");
    if (cfg.fqe.w_radius < 0.0) problems.push_back("fqe.w_radius: must be >= 0");
  }

  if (j.contains("slices")) {
    cfg.slices = j["slices"].get<std::vector<int>>();
  }
  for (int h : cfg.slices) {
    if (h < 0) {
      problems.push_back("slices: entries must be nonnegative");
      break;
    }
  }
  if (j.contains("seeds")) {
    cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  }
  if (cfg.seeds.empty()) problems.push_back("seeds: must be nonempty");

  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file " + path.string()});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

Policy build_policy(const PolicySpec& spec, const FiniteMdp& mdp) {
  if (spec.kind == "uniform") {
    return Policy::uniform(mdp.num_states, mdp.num_actions);
  }
  if (spec.kind == "softmax") {
    // Softmax over the uniform policy's Q table, a deterministic way to get
    // a nontrivial graded policy out of the instance itself.
    const ValueFunction q =
        exact_value(mdp, Policy::uniform(mdp.num_states, mdp.num_actions));
    Policy pi;
    pi.probs = Eigen::MatrixXd(mdp.num_states, mdp.num_actions);
    for (int s = 0; s < mdp.num_states; ++s) {
      Eigen::VectorXd logits = q.q.row(s).transpose() / spec.temperature;
      logits.array() -= logits.maxCoeff();
      Eigen::VectorXd probs = logits.array().exp();
      pi.probs.row(s) = probs.transpose() / probs.sum();
    }
    return pi;
  }
  if (spec.kind == "random") {
    SplitMix64 rng(spec.seed);
    Policy pi;
    pi.probs = Eigen::MatrixXd(mdp.num_states, mdp.num_actions);
    for (int s = 0; s < mdp.num_states; ++s) {
      double total = 0.0;
      for (int a = 0; a < mdp.num_actions; ++a) {
        const double w = 0.1 + rng.next_double();
        pi.probs(s, a) = w;
        total += w;
      }
      pi.probs.row(s) /= total;
    }
    return pi;
  }
  throw std::invalid_argument("build_policy: unknown kind " + spec.kind);
}

namespace {

StateActionDist build_nu(const NuSpec& spec, const FiniteMdp& mdp,
                         const Policy& pi_e) {
  if (spec.kind == "uniform") {
    return StateActionDist::uniform(mdp.num_states, mdp.num_actions);
  }
  if (spec.kind == "occupancy") {
    const Policy pi_b = build_policy(spec.behavior, mdp);
    return occupancy(mdp, pi_b, mdp.initial_dist);
  }
  if (spec.kind == "mixture_onpolicy") {
    const StateActionDist onpolicy = occupancy(mdp, pi_e, mdp.initial_dist);
    StateActionDist base;
    if (spec.base_kind == "uniform") {
      base = StateActionDist::uniform(mdp.num_states, mdp.num_actions);
    } else {
      const Policy pi_b = build_policy(spec.base_behavior, mdp);
      base = occupancy(mdp, pi_b, mdp.initial_dist);
    }
    return mixture_dist(onpolicy, base, spec.weight);
  }
  throw std::invalid_argument("build_nu: unknown kind " + spec.kind);
}

}  // namespace

ProblemInstance build_problem(const ExperimentConfig& config) {
  ProblemInstance problem;
  if (config.mdp.kind == "low_rank") {
    LowRankMdp low_rank = make_low_rank_mdp(
        config.mdp.seed, config.mdp.num_states, config.mdp.num_actions,
        config.mdp.feature_dim, config.mdp.gamma);
    problem.mdp = std::move(low_rank.mdp);
    problem.phi_star = std::make_unique<FeatureMap>(std::move(low_rank.phi_star));
  } else {
    problem.mdp = make_random_tabular_mdp(
        config.mdp.seed, config.mdp.num_states, config.mdp.num_actions,
        config.mdp.gamma, config.mdp.stochastic);
  }
  problem.pi_e = build_policy(config.target_policy, problem.mdp);
  problem.nu = build_nu(config.nu, problem.mdp, problem.pi_e);
  problem.exact_value = expected_value(exact_value(problem.mdp, problem.pi_e),
                                       problem.pi_e, problem.mdp.initial_dist);
  return problem;
}

namespace {

double resolved_lspe_radius(const ExperimentConfig& config) {
  if (config.lspe.w_radius > 0.0) return config.lspe.w_radius;
  const double pairs = static_cast<double>(config.mdp.num_states) *
                       config.mdp.num_actions;
  return std::sqrt(pairs) / (1.0 - config.mdp.gamma);
}

std::string feature_method_tag(const FeatureSpec& spec) {
  if (spec.kind == "trainable") return "bcrl";
  return "lspe_" + spec.kind;
}

FeatureMap build_fixed_feature(const ExperimentConfig& config,
                               const ProblemInstance& problem) {
  if (config.feature.kind == "one_hot") {
    return FeatureMap::one_hot(config.mdp.num_states, config.mdp.num_actions);
  }
  if (config.feature.kind == "low_rank_truth") {
    return *problem.phi_star;
  }
  if (config.feature.kind == "random_fixed") {
    return FeatureMap::random_fixed(config.mdp.num_states,
                                    config.mdp.num_actions, config.feature.dim,
                                    config.feature.seed);
  }
  throw std::invalid_argument("build_fixed_feature: feature is trainable");
}

std::string report_to_json(const EvalReport& report) {
  json j;
  j["method"] = report.method;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  j["ope_estimate"] = report.ope_estimate;
  j["exact_value"] = report.exact_value;
  j["abs_error"] = report.abs_error;
  j["per_seed_errors"] = report.per_seed_errors;
  j["rmse"] = report.rmse;
  if (report.spearman) {
    j["spearman"] = *report.spearman;
  } else {
    j["spearman"] = nullptr;
  }
  json slices = json::array();
  for (const auto& [h, err] : report.beyond_d0) {
    slices.push_back({{"slice", h}, {"abs_error", err}});
  }
  j["beyond_d0"] = slices;
  j["cov_lambda_min"] = report.cov_lambda_min;
  j["cov_logdet"] = std::isfinite(report.cov_logdet)
                        ? json(report.cov_logdet)
                        : json(nullptr);
  j["cov_condition"] = std::isfinite(report.cov_condition)
                           ? json(report.cov_condition)
                           : json(nullptr);
  return j.dump(2);
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out =
      "method,config_hash,count,rmse,median_abs_error,iqr_low,iqr_high\n";
  for (const SummaryRow& row : rows) {
    out += row.method + "," + row.config_hash + "," +
           std::to_string(row.count) + "," + fmt(row.rmse) + "," +
           fmt(row.median_abs_error) + "," + fmt(row.iqr_low) + "," +
           fmt(row.iqr_high) + "\n";
  }
  return out;
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& config,
                          const std::filesystem::path& out_root) {
  const std::string hash = config.hash();
  const std::filesystem::path run_dir = out_root / hash;
  const std::filesystem::path staging = out_root / (".staging_" + hash);
  std::filesystem::create_directories(staging);

  ProblemInstance problem = build_problem(config);
  const FiniteMdp& mdp = problem.mdp;
  const double gamma = mdp.gamma;
  const double w_radius = resolved_lspe_radius(config);
  const std::string method = feature_method_tag(config.feature);

  RunOutcome outcome;
  try {
    atomic_write(staging / "config.json", config.canonical_json());
    save_mdp(mdp, staging / "mdp.txt");

    for (std::uint64_t run_seed : config.seeds) {
      SplitMix64 seed_root(run_seed);
      const std::uint64_t data_seed = seed_root.split(1).next_u64();
      const std::uint64_t split_seed = seed_root.split(2).next_u64();
      const std::uint64_t net_seed = seed_root.split(3).next_u64();
      const std::uint64_t fqe_seed = seed_root.split(4).next_u64();
      const std::uint64_t train_seed = seed_root.split(5).next_u64();

      // 2N samples, disjoint halves: representation learning sees only the
      // first half, LSPE only the second.
      const std::size_t n = config.dataset_n;
      OfflineDataset full = sample_offline_dataset(mdp, problem.nu, 2 * n,
                                                   data_seed);
      std::vector<std::size_t> indices(2 * n);
      for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
      SplitMix64 split_rng(split_seed);
      shuffle(indices, split_rng);

      OfflineDataset d1{{}, data_seed, mdp.num_states, mdp.num_actions};
      OfflineDataset d2{{}, data_seed, mdp.num_states, mdp.num_actions};
      d1.tuples.reserve(n);
      d2.tuples.reserve(n);
      std::vector<std::size_t> d1_idx(indices.begin(), indices.begin() + n);
      std::vector<std::size_t> d2_idx(indices.begin() + n, indices.end());
      std::sort(d1_idx.begin(), d1_idx.end());
      std::sort(d2_idx.begin(), d2_idx.end());
      for (std::size_t i : d1_idx) d1.tuples.push_back(full.tuples[i]);
      for (std::size_t i : d2_idx) d2.tuples.push_back(full.tuples[i]);

      {
        json idx_json;
        idx_json["seed"] = run_seed;
        idx_json["train_indices"] = d1_idx;
        idx_json["lspe_indices"] = d2_idx;
        atomic_write(staging / ("indices_seed" + std::to_string(run_seed) +
                                ".json"),
                     idx_json.dump());
      }

      FeatureMap phi = [&]() -> FeatureMap {
        if (config.feature.kind != "trainable") {
          return build_fixed_feature(config, problem);
        }
        NetConfig net_cfg;
        net_cfg.input_dim = mdp.num_states + mdp.num_actions;
        net_cfg.hidden_width = config.feature.hidden_width;
        net_cfg.num_hidden = config.feature.num_hidden;
        net_cfg.output_dim = config.feature.dim;
        net_cfg.head = HeadKind::bounded;
        net_cfg.head_bound = 1.0;
        TrainableNet net(net_cfg, net_seed);
        TrainConfig train_cfg = config.train;
        train_cfg.seed = train_seed;
        TrainResult trained = train(std::move(net), train_cfg, d1,
                                    problem.pi_e, gamma);
        write_trace_csv(trained.trace, method,
                        staging / ("trace_" + method + "_seed" +
                                   std::to_string(run_seed) + ".csv"));
        save_checkpoint(trained.net,
                        staging / ("checkpoint_seed" +
                                   std::to_string(run_seed) + ".bin"));
        return trained.phi;
      }();

      LspeResult lspe_result = lspe_run(phi, d2, problem.pi_e, gamma,
                                        config.lspe.k_iters, w_radius);

      EvalReport report;
      report.method = method;
      report.config_hash = hash;
      report.seed = run_seed;
      report.ope_estimate = lspe_result.final_value_at(mdp.initial_dist);
      report.exact_value = problem.exact_value;
      report.abs_error = std::abs(report.ope_estimate - report.exact_value);
      report.per_seed_errors = {report.abs_error};
      report.rmse = report.abs_error;
      const CovarianceReport cov = covariance(phi, problem.nu);
      report.cov_lambda_min = cov.lambda_min;
      report.cov_logdet = cov.logdet;
      report.cov_condition = cov.condition_number;
      report.beyond_d0 = beyond_d0_profile(lspe_result.state_values(), mdp,
                                           problem.pi_e, config.slices);
      outcome.reports.push_back(report);
      atomic_write(staging / ("report_" + method + "_seed" +
                              std::to_string(run_seed) + ".json"),
                   report_to_json(report));

      {
        std::string csv = "k,value\n";
        for (std::size_t k = 0; k < lspe_result.thetas.size(); ++k) {
          const double v =
              lspe_result.thetas[k].dot(lspe_result.phi_pi * mdp.initial_dist);
          csv += std::to_string(k) + "," + fmt(v) + "\n";
        }
        atomic_write(staging / ("lspe_values_" + method + "_seed" +
                                std::to_string(run_seed) + ".csv"),
                     csv);
      }
      {
        std::string csv = "index,eigenvalue\n";
        for (Eigen::Index i = 0; i < cov.eigenvalues.size(); ++i) {
          csv += std::to_string(i) + "," + fmt(cov.eigenvalues[i]) + "\n";
        }
        atomic_write(staging / ("spectra_" + method + "_seed" +
                                std::to_string(run_seed) + ".csv"),
                     csv);
      }
      {
        std::string csv = "slice,abs_error\n";
        for (const auto& [h, err] : report.beyond_d0) {
          csv += std::to_string(h) + "," + fmt(err) + "\n";
        }
        atomic_write(staging / ("slices_" + method + "_seed" +
                                std::to_string(run_seed) + ".csv"),
                     csv);
      }

      if (config.fqe.enabled) {
        NetConfig trunk_cfg;
        trunk_cfg.input_dim = mdp.num_states + mdp.num_actions;
        trunk_cfg.hidden_width = config.feature.hidden_width;
        trunk_cfg.num_hidden = config.feature.num_hidden;
        trunk_cfg.output_dim = config.feature.dim;
        trunk_cfg.head = HeadKind::bounded;
        trunk_cfg.head_bound = 1.0;
        const double fqe_radius = config.fqe.w_radius > 0.0
                                      ? config.fqe.w_radius
                                      : 1.0 / (1.0 - gamma);
        FqeNet fqe_net(trunk_cfg, fqe_radius, fqe_seed);
        FqeConfig fqe_cfg;
        fqe_cfg.k_iters = config.fqe.k_iters;
        fqe_cfg.inner_steps = config.fqe.inner_steps;
        fqe_cfg.learning_rate = config.fqe.learning_rate;
        fqe_cfg.batch_size = config.fqe.batch_size;
        fqe_cfg.seed = fqe_seed;
        FqeResult fqe_result = fqe_run(std::move(fqe_net), d2, problem.pi_e,
                                       gamma, fqe_cfg);

        EvalReport fqe_report;
        fqe_report.method = "fqe";
        fqe_report.config_hash = hash;
        fqe_report.seed = run_seed;
        fqe_report.ope_estimate =
            fqe_result.value_at(mdp.initial_dist, problem.pi_e);
        fqe_report.exact_value = problem.exact_value;
        fqe_report.abs_error =
            std::abs(fqe_report.ope_estimate - fqe_report.exact_value);
        fqe_report.per_seed_errors = {fqe_report.abs_error};
        fqe_report.rmse = fqe_report.abs_error;
        fqe_report.beyond_d0 =
            beyond_d0_profile(fqe_result.state_values(problem.pi_e), mdp,
                              problem.pi_e, config.slices);
        outcome.reports.push_back(fqe_report);
        atomic_write(staging / ("report_fqe_seed" +
                                std::to_string(run_seed) + ".json"),
                     report_to_json(fqe_report));

        std::string csv = "k,value\n";
        for (std::size_t k = 0; k < fqe_result.q_tables.size(); ++k) {
          Eigen::VectorXd v = (fqe_result.q_tables[k].array() *
                               problem.pi_e.probs.array())
                                  .rowwise()
                                  .sum();
          csv += std::to_string(k + 1) + "," + fmt(mdp.initial_dist.dot(v)) +
                 "\n";
        }
        atomic_write(staging / ("lspe_values_fqe_seed" +
                                std::to_string(run_seed) + ".csv"),
                     csv);
      }
    }

    outcome.summary = aggregate(outcome.reports);
    atomic_write(staging / "summary.csv", summary_csv(outcome.summary));

    {
      const auto now = std::chrono::system_clock::now();
      const std::time_t t = std::chrono::system_clock::to_time_t(now);
      char stamp[64];
      std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ",
                    std::gmtime(&t));
      std::string manifest;
      manifest += "config_hash=" + hash + "\n";
      manifest += std::string("timestamp=") + stamp + "\n";
      manifest += "kernel_backend=" +
                  std::string(kernels::backend_name(kernels::active_backend())) +
                  "\n";
      manifest += "seeds=";
      for (std::size_t i = 0; i < config.seeds.size(); ++i) {
        manifest += (i ? "," : "") + std::to_string(config.seeds[i]);
      }
      manifest += "\n";
      atomic_write(staging / "manifest.txt", manifest);
    }
  } catch (...) {
    // Keep whatever was produced for inspection, out of the result path.
    std::filesystem::create_directories(run_dir);
    const std::filesystem::path quarantine = run_dir / "quarantine";
    std::filesystem::remove_all(quarantine);
    std::filesystem::rename(staging, quarantine);
    throw;
  }

  std::filesystem::remove_all(run_dir);
  std::filesystem::rename(staging, run_dir);
  outcome.run_dir = run_dir;
  return outcome;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& base,
                                const std::string& axis,
                                const std::vector<double>& values,
                                const std::filesystem::path& out_root,
                                int jobs) {
  if (axis != "N" && axis != "K" && axis != "lambda" && axis != "seed") {
    throw ConfigError({"sweep axis must be one of N, K, lambda, seed"});
  }
  if (values.empty()) throw ConfigError({"sweep values must be nonempty"});
  {
    std::set<double> unique(values.begin(), values.end());
    if (unique.size() != values.size()) {
      throw ConfigError({"sweep values must be distinct"});
    }
  }

  std::vector<ExperimentConfig> configs;
  configs.reserve(values.size());
  for (double value : values) {
    ExperimentConfig cfg = base;
    if (axis == "N") {
      if (value < 1.0 || value != std::floor(value)) {
        throw ConfigError({"sweep axis N requires positive integers"});
      }
      cfg.dataset_n = static_cast<std::size_t>(value);
    } else if (axis == "K") {
      if (value < 1.0 || value != std::floor(value)) {
        throw ConfigError({"sweep axis K requires positive integers"});
      }
      cfg.lspe.k_iters = static_cast<int>(value);
    } else if (axis == "lambda") {
      if (value < 0.0) throw ConfigError({"sweep axis lambda requires values >= 0"});
      cfg.train.design_weight = value;
    } else {
      if (value < 0.0 || value != std::floor(value)) {
        throw ConfigError({"sweep axis seed requires nonnegative integers"});
      }
      cfg.seeds = {static_cast<std::uint64_t>(value)};
    }
    configs.push_back(std::move(cfg));
  }

  std::vector<RunOutcome> outcomes(configs.size());
  std::vector<std::exception_ptr> failures(configs.size());
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(configs.size())));
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= configs.size()) return;
        try {
          outcomes[i] = run_experiment(configs[i], out_root);
        } catch (...) {
          failures[i] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }

  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    for (const SummaryRow& summary : outcomes[i].summary) {
      SweepRow row;
      row.axis = axis;
      row.value = values[i];
      row.method = summary.method;
      row.config_hash = summary.config_hash;
      row.rmse = summary.rmse;
      row.median_abs_error = summary.median_abs_error;
      rows.push_back(std::move(row));
    }
  }
  std::string csv = "axis,value,method,config_hash,rmse,median_abs_error\n";
  for (const SweepRow& row : rows) {
    csv += row.axis + "," + fmt(row.value) + "," + row.method + "," +
           row.config_hash + "," + fmt(row.rmse) + "," +
           fmt(row.median_abs_error) + "\n";
  }
  atomic_write(out_root / "sweep.csv", csv);
  return rows;
}

void emit_plotdata(const std::filesystem::path& results_root,
                   const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> run_dirs;
  if (std::filesystem::exists(results_root)) {
    for (const auto& entry : std::filesystem::directory_iterator(results_root)) {
      if (entry.is_directory() &&
          std::filesystem::exists(entry.path() / "config.json")) {
        run_dirs.push_back(entry.path());
      }
    }
  }
  std::sort(run_dirs.begin(), run_dirs.end());

  auto collect = [&](const std::string& prefix, const std::string& header,
                     const std::filesystem::path& out_file) {
    std::string out = "config_hash,source," + header + "\n";
    for (const std::filesystem::path& dir : run_dirs) {
      const std::string hash = dir.filename().string();
      std::vector<std::filesystem::path> files;
      for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind(prefix, 0) == 0 && name.size() > 4 &&
            name.substr(name.size() - 4) == ".csv") {
          files.push_back(entry.path());
        }
      }
      std::sort(files.begin(), files.end());
      for (const std::filesystem::path& file : files) {
        std::ifstream in(file);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
          if (first) {
            first = false;  // per-file header
            continue;
          }
          if (!line.empty()) {
            out += hash + "," + file.filename().string() + "," + line + "\n";
          }
        }
      }
    }
    atomic_write(out_file, out);
  };

  collect("lspe_values_", "k,value", out_dir / "ope_vs_iteration.csv");
  collect("spectra_", "index,eigenvalue", out_dir / "spectra.csv");
  collect("slices_", "slice,abs_error", out_dir / "error_vs_slice.csv");
}

CertifyOutcome certify_checkpoint(const ExperimentConfig& config,
                                  const std::filesystem::path& checkpoint,
                                  const std::filesystem::path& report_path) {
  ProblemInstance problem = build_problem(config);
  const TrainableNet net = load_checkpoint(checkpoint);
  const FeatureMap phi = snapshot_features(net, problem.mdp.num_states,
                                           problem.mdp.num_actions);

  const Witness witness =
      fit_witness_exact(phi, problem.mdp, problem.nu, problem.pi_e,
                        /*rho_bound=*/0.0, /*m_spectral_bound=*/0.0,
                        /*constrain=*/false);
  CertifyOutcome outcome;
  outcome.bc_loss = bc_loss_exact(phi, witness, problem.mdp, problem.nu,
                                  problem.pi_e);
  outcome.rho_norm = witness.rho.norm();
  outcome.m_norm = witness.m_spectral_bound;
  outcome.witness_admissible = outcome.m_norm < 1.0;
  outcome.implied_w = witness.implied_w_radius();
  const double lbc_radius = outcome.witness_admissible
                                ? std::max(outcome.implied_w, 1.0)
                                : resolved_lspe_radius(config);
  outcome.lbc_error = exact_lbc_error(problem.mdp, problem.nu, phi,
                                      problem.pi_e, lbc_radius, 64);
  outcome.lambda_min = covariance(phi, problem.nu).lambda_min;

  json j;
  j["config_hash"] = config.hash();
  j["bc_loss"] = outcome.bc_loss;
  j["rho_norm"] = outcome.rho_norm;
  j["m_spectral_norm"] = outcome.m_norm;
  j["witness_admissible"] = outcome.witness_admissible;
  j["implied_w"] = std::isfinite(outcome.implied_w) ? json(outcome.implied_w)
                                                    : json(nullptr);
  j["lbc_probe_radius"] = lbc_radius;
  j["lbc_error"] = outcome.lbc_error;
  j["lambda_min"] = outcome.lambda_min;
  atomic_write(report_path, j.dump(2));
  return outcome;
}

}  // namespace bcrl
