#include "bcrl/mdp.hpp"

#include <algorithm>
#include <bit>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bcrl/rng.hpp"

namespace bcrl {
namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

bool is_distribution(const Eigen::VectorXd& v, double* sum_out = nullptr) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v[i] >= 0.0)) return false;
    s += v[i];
  }
  if (sum_out) *sum_out = s;
  return std::abs(s - 1.0) <= kRowSumTol;
}

// Inverse-CDF draw over nonnegative weights with total mass `total`.
int draw_index(const Eigen::VectorXd& weights, double total, SplitMix64& rng) {
  double u = rng.next_double() * total;
  double acc = 0.0;
  const Eigen::Index n = weights.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding pushed u past the last positive bucket.
  for (Eigen::Index i = n; i-- > 0;) {
    if (weights[i] > 0.0) return static_cast<int>(i);
  }
  throw std::invalid_argument("draw_index: empty support");
}

std::string render(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void append_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void append_f64_le(std::string& out, double d) {
  append_u64_le(out, std::bit_cast<std::uint64_t>(d));
}

std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}
std::uint32_t read_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
double read_f64_le(const unsigned char* p) {
  return std::bit_cast<double>(read_u64_le(p));
}

constexpr char kDatasetMagic[8] = {'B', 'C', 'R', 'L', 'D', 'S', '0', '1'};
constexpr std::size_t kDatasetHeaderSize = 8 + 8 + 8 + 4 + 4;
constexpr std::size_t kDatasetRecordSize = 4 + 4 + 8 + 4;

}  // namespace

void FiniteMdp::validate() const {
  check(num_states >= 1 && num_actions >= 1,
        "FiniteMdp: state and action counts must be positive");
  check(gamma > 0.0 && gamma < 1.0, "FiniteMdp: gamma must be in (0, 1)");
  check(transition.rows() == num_pairs() && transition.cols() == num_states,
        "FiniteMdp: transition must be (S*A) x S");
  check(reward.rows() == num_states && reward.cols() == num_actions,
        "FiniteMdp: reward must be S x A");
  check(initial_dist.size() == num_states, "FiniteMdp: d0 must have S entries");
  for (int sa = 0; sa < num_pairs(); ++sa) {
    Eigen::VectorXd row = transition.row(sa);
    check(is_distribution(row),
          "FiniteMdp: transition row " + std::to_string(sa) +
              " is not a probability distribution");
  }
  check((reward.array().abs() <= 1.0 + 1e-15).all(),
        "FiniteMdp: rewards must lie in [-1, 1]");
  check(is_distribution(initial_dist), "FiniteMdp: d0 must sum to one");
}

void Policy::validate() const {
  check(probs.rows() >= 1 && probs.cols() >= 1, "Policy: empty table");
  for (Eigen::Index s = 0; s < probs.rows(); ++s) {
    Eigen::VectorXd row = probs.row(s);
    check(is_distribution(row),
          "Policy: row " + std::to_string(s) + " is not a distribution");
  }
}

Policy Policy::uniform(int num_states, int num_actions) {
  Policy pi;
  pi.probs = Eigen::MatrixXd::Constant(num_states, num_actions,
                                       1.0 / num_actions);
  return pi;
}

void StateActionDist::validate() const {
  check(weights.rows() >= 1 && weights.cols() >= 1, "StateActionDist: empty");
  check((weights.array() >= 0.0).all(),
        "StateActionDist: negative weight");
  check(std::abs(weights.sum() - 1.0) <= kRowSumTol,
        "StateActionDist: total mass must be one");
}

Eigen::VectorXd StateActionDist::flat() const {
  const int s_count = num_states();
  const int a_count = num_actions();
  Eigen::VectorXd v(s_count * a_count);
  for (int s = 0; s < s_count; ++s)
    for (int a = 0; a < a_count; ++a) v[s * a_count + a] = weights(s, a);
  return v;
}

StateActionDist StateActionDist::uniform(int num_states, int num_actions) {
  StateActionDist nu;
  nu.weights = Eigen::MatrixXd::Constant(num_states, num_actions,
                                         1.0 / (num_states * num_actions));
  return nu;
}

StateActionDist StateActionDist::point_mass(int num_states, int num_actions,
                                            int s, int a) {
  StateActionDist nu;
  nu.weights = Eigen::MatrixXd::Zero(num_states, num_actions);
  nu.weights(s, a) = 1.0;
  return nu;
}

StateActionDist StateActionDist::from_policy(const Eigen::VectorXd& state_dist,
                                             const Policy& pi) {
  StateActionDist nu;
  nu.weights = state_dist.asDiagonal() * pi.probs;
  return nu;
}

FiniteMdp make_random_tabular_mdp(std::uint64_t seed, int num_states,
                                  int num_actions, double gamma,
                                  bool stochastic) {
  check(num_states >= 1 && num_actions >= 1,
        "make_random_tabular_mdp: sizes must be positive");
  check(gamma > 0.0 && gamma < 1.0,
        "make_random_tabular_mdp: gamma must be in (0, 1)");
  SplitMix64 rng(seed);

  FiniteMdp mdp;
  mdp.num_states = num_states;
  mdp.num_actions = num_actions;
  mdp.gamma = gamma;
  mdp.transition = Eigen::MatrixXd::Zero(num_states * num_actions, num_states);
  mdp.reward = Eigen::MatrixXd(num_states, num_actions);
  mdp.initial_dist = Eigen::VectorXd(num_states);

  for (int sa = 0; sa < mdp.num_pairs(); ++sa) {
    if (stochastic) {
      double total = 0.0;
      for (int sp = 0; sp < num_states; ++sp) {
        const double w = 0.05 + rng.next_double();
        mdp.transition(sa, sp) = w;
        total += w;
      }
      mdp.transition.row(sa) /= total;
    } else {
      mdp.transition(sa, static_cast<int>(rng.next_below(num_states))) = 1.0;
    }
  }
  for (int s = 0; s < num_states; ++s)
    for (int a = 0; a < num_actions; ++a)
      mdp.reward(s, a) = rng.next_in(-1.0, 1.0);

  double total = 0.0;
  for (int s = 0; s < num_states; ++s) {
    const double w = 0.05 + rng.next_double();
    mdp.initial_dist[s] = w;
    total += w;
  }
  mdp.initial_dist /= total;

  mdp.validate();
  return mdp;
}

LowRankMdp make_low_rank_mdp(std::uint64_t seed, int num_states,
                             int num_actions, int feature_dim, double gamma) {
  const int num_pairs = num_states * num_actions;
  check(feature_dim >= 1 && feature_dim <= num_pairs,
        "make_low_rank_mdp: feature_dim must be in [1, S*A]");
  check(gamma > 0.0 && gamma < 1.0, "make_low_rank_mdp: gamma must be in (0, 1)");

  FiniteMdp mdp;
  mdp.num_states = num_states;
  mdp.num_actions = num_actions;
  mdp.gamma = gamma;

  Eigen::MatrixXd phi(feature_dim, num_pairs);  // column sa
  Eigen::MatrixXd mu(num_states, feature_dim);  // row s'

  if (feature_dim == num_pairs) {
    // Full-rank case: one-hot factorization of a random kernel, exact for
    // any transition.
    const FiniteMdp base =
        make_random_tabular_mdp(seed, num_states, num_actions, gamma, true);
    phi = Eigen::MatrixXd::Identity(num_pairs, num_pairs);
    mu = base.transition.transpose();
    mdp.transition = base.transition;
  } else {
    SplitMix64 rng(seed);
    // Entries bounded away from zero keep the kernel well mixed, which keeps
    // the fitted transition operator comfortably inside the unit spectral
    // ball at usual discounts.
    for (int sa = 0; sa < num_pairs; ++sa)
      for (int k = 0; k < feature_dim; ++k) phi(k, sa) = rng.next_in(0.2, 1.0);
    for (int sp = 0; sp < num_states; ++sp)
      for (int k = 0; k < feature_dim; ++k) mu(sp, k) = rng.next_in(0.2, 1.0);

    const Eigen::VectorXd mu_total = mu.colwise().sum().transpose();
    for (int sa = 0; sa < num_pairs; ++sa) {
      const double row_mass = phi.col(sa).dot(mu_total);
      if (!(row_mass > 1e-12)) {
        throw std::runtime_error(
            "make_low_rank_mdp: factor normalization failed");
      }
      phi.col(sa) /= row_mass;
    }
    mdp.transition = phi.transpose() * mu.transpose();
  }

  // Push the feature-norm bound into mu so the kernel is untouched.
  const double max_norm = phi.colwise().norm().maxCoeff();
  phi /= max_norm;
  mu *= max_norm;

  SplitMix64 reward_rng = SplitMix64(seed).split(0x72657761);
  Eigen::VectorXd theta(feature_dim);
  for (int k = 0; k < feature_dim; ++k) theta[k] = reward_rng.next_normal();
  Eigen::VectorXd raw = phi.transpose() * theta;
  const double max_abs = raw.cwiseAbs().maxCoeff();
  if (max_abs > 0.0) theta *= 0.9 / max_abs;

  mdp.reward = Eigen::MatrixXd(num_states, num_actions);
  for (int s = 0; s < num_states; ++s)
    for (int a = 0; a < num_actions; ++a)
      mdp.reward(s, a) = theta.dot(phi.col(s * num_actions + a));

  SplitMix64 d0_rng = SplitMix64(seed).split(0x64302064);
  mdp.initial_dist = Eigen::VectorXd(num_states);
  double total = 0.0;
  for (int s = 0; s < num_states; ++s) {
    const double w = 0.05 + d0_rng.next_double();
    mdp.initial_dist[s] = w;
    total += w;
  }
  mdp.initial_dist /= total;

  mdp.validate();
  LowRankMdp out{std::move(mdp),
                 FeatureMap(FeatureKind::low_rank_truth, phi, num_states,
                            num_actions)};
  out.mu = mu;
  out.reward_coef = theta;
  return out;
}

OfflineDataset sample_offline_dataset(const FiniteMdp& mdp,
                                      const StateActionDist& nu, std::size_t n,
                                      std::uint64_t seed) {
  check(n >= 1, "sample_offline_dataset: n must be positive");
  check(nu.num_states() == mdp.num_states &&
            nu.num_actions() == mdp.num_actions,
        "sample_offline_dataset: nu shape mismatch");
  const Eigen::VectorXd flat = nu.flat();
  const double mass = flat.sum();
  if (!(mass > 0.0)) {
    throw std::invalid_argument("sample_offline_dataset: nu has empty support");
  }

  SplitMix64 rng(seed);
  OfflineDataset data;
  data.source_seed = seed;
  data.num_states = mdp.num_states;
  data.num_actions = mdp.num_actions;
  data.tuples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int sa = draw_index(flat, mass, rng);
    const int s = sa / mdp.num_actions;
    const int a = sa % mdp.num_actions;
    Eigen::VectorXd row = mdp.transition.row(sa);
    const int sp = draw_index(row, 1.0, rng);
    data.tuples.push_back({s, a, mdp.reward(s, a), sp});
  }
  return data;
}

StateActionDist mixture_dist(const StateActionDist& a,
                             const StateActionDist& b, double w) {
  check(a.weights.rows() == b.weights.rows() &&
            a.weights.cols() == b.weights.cols(),
        "mixture_dist: shape mismatch");
  check(w >= 0.0 && w <= 1.0, "mixture_dist: weight must be in [0, 1]");
  StateActionDist out;
  out.weights = w * a.weights + (1.0 - w) * b.weights;
  return out;
}

void save_dataset(const OfflineDataset& data,
                  const std::filesystem::path& path) {
  std::string buf;
  buf.reserve(kDatasetHeaderSize + data.tuples.size() * kDatasetRecordSize);
  buf.append(kDatasetMagic, sizeof(kDatasetMagic));
  append_u64_le(buf, data.tuples.size());
  append_u64_le(buf, data.source_seed);
  append_u32_le(buf, static_cast<std::uint32_t>(data.num_states));
  append_u32_le(buf, static_cast<std::uint32_t>(data.num_actions));
  for (const Transition& t : data.tuples) {
    append_u32_le(buf, static_cast<std::uint32_t>(t.s));
    append_u32_le(buf, static_cast<std::uint32_t>(t.a));
    append_f64_le(buf, t.r);
    append_u32_le(buf, static_cast<std::uint32_t>(t.next_s));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("save_dataset: write failed");

  std::ofstream meta(path.string() + ".meta", std::ios::trunc);
  meta << "format_version=1\n"
       << "n=" << data.tuples.size() << "\n"
       << "seed=" << data.source_seed << "\n"
       << "num_states=" << data.num_states << "\n"
       << "num_actions=" << data.num_actions << "\n";
}

OfflineDataset load_dataset(const std::filesystem::path& path,
                            const FiniteMdp* mdp) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < kDatasetHeaderSize) {
    throw std::runtime_error("load_dataset: truncated header");
  }
  if (std::memcmp(buf.data(), kDatasetMagic, 4) != 0) {
    throw std::runtime_error("load_dataset: bad magic");
  }
  if (std::memcmp(buf.data() + 4, kDatasetMagic + 4, 4) != 0) {
    throw std::runtime_error("load_dataset: format version mismatch");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  OfflineDataset data;
  const std::uint64_t n = read_u64_le(p + 8);
  data.source_seed = read_u64_le(p + 16);
  data.num_states = static_cast<int>(read_u32_le(p + 24));
  data.num_actions = static_cast<int>(read_u32_le(p + 28));
  if (buf.size() != kDatasetHeaderSize + n * kDatasetRecordSize) {
    throw std::runtime_error("load_dataset: truncated or oversized record block");
  }
  data.tuples.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const unsigned char* rec = p + kDatasetHeaderSize + i * kDatasetRecordSize;
    Transition t;
    t.s = static_cast<std::int32_t>(read_u32_le(rec));
    t.a = static_cast<std::int32_t>(read_u32_le(rec + 4));
    t.r = read_f64_le(rec + 8);
    t.next_s = static_cast<std::int32_t>(read_u32_le(rec + 16));
    if (t.s < 0 || t.s >= data.num_states || t.a < 0 ||
        t.a >= data.num_actions || t.next_s < 0 ||
        t.next_s >= data.num_states) {
      throw std::runtime_error("load_dataset: index out of range at record " +
                               std::to_string(i));
    }
    data.tuples.push_back(t);
  }
  if (mdp != nullptr) {
    if (mdp->num_states != data.num_states ||
        mdp->num_actions != data.num_actions) {
      throw std::runtime_error("load_dataset: MDP shape mismatch");
    }
    for (std::size_t i = 0; i < data.tuples.size(); ++i) {
      const Transition& t = data.tuples[i];
      if (t.r != mdp->reward(t.s, t.a)) {
        throw std::runtime_error(
            "load_dataset: reward inconsistent with MDP at record " +
            std::to_string(i));
      }
    }
  }
  return data;
}

void save_mdp(const FiniteMdp& mdp, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "bcrl-mdp v1\n";
  out << "states " << mdp.num_states << "\n";
  out << "actions " << mdp.num_actions << "\n";
  out << "gamma " << render(mdp.gamma) << "\n";
  out << "transition\n";
  for (int sa = 0; sa < mdp.num_pairs(); ++sa) {
    for (int sp = 0; sp < mdp.num_states; ++sp) {
      out << (sp ? " " : "") << render(mdp.transition(sa, sp));
    }
    out << "\n";
  }
  out << "reward\n";
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      out << (a ? " " : "") << render(mdp.reward(s, a));
    }
    out << "\n";
  }
  out << "initial_dist\n";
  for (int s = 0; s < mdp.num_states; ++s) {
    out << (s ? " " : "") << render(mdp.initial_dist[s]);
  }
  out << "\n";

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("save_mdp: cannot open " + path.string());
  f << out.str();
}

FiniteMdp load_mdp(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_mdp: cannot open " + path.string());
  std::string line;
  auto expect_line = [&](const std::string& what) {
    if (!std::getline(f, line)) {
      throw std::runtime_error("load_mdp: unexpected end of file before " + what);
    }
    return line;
  };
  if (expect_line("header") != "bcrl-mdp v1") {
    throw std::runtime_error("load_mdp: format version mismatch");
  }
  FiniteMdp mdp;
  {
    std::istringstream ss(expect_line("states"));
    std::string tag;
    ss >> tag >> mdp.num_states;
    if (tag != "states") throw std::runtime_error("load_mdp: expected states");
  }
  {
    std::istringstream ss(expect_line("actions"));
    std::string tag;
    ss >> tag >> mdp.num_actions;
    if (tag != "actions") throw std::runtime_error("load_mdp: expected actions");
  }
  {
    std::istringstream ss(expect_line("gamma"));
    std::string tag;
    ss >> tag >> mdp.gamma;
    if (tag != "gamma") throw std::runtime_error("load_mdp: expected gamma");
  }
  if (expect_line("transition") != "transition") {
    throw std::runtime_error("load_mdp: expected transition block");
  }
  mdp.transition = Eigen::MatrixXd(mdp.num_states * mdp.num_actions,
                                   mdp.num_states);
  for (int sa = 0; sa < mdp.num_pairs(); ++sa) {
    std::istringstream ss(expect_line("transition row"));
    for (int sp = 0; sp < mdp.num_states; ++sp) ss >> mdp.transition(sa, sp);
    if (!ss) throw std::runtime_error("load_mdp: malformed transition row");
  }
  if (expect_line("reward") != "reward") {
    throw std::runtime_error("load_mdp: expected reward block");
  }
  mdp.reward = Eigen::MatrixXd(mdp.num_states, mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s) {
    std::istringstream ss(expect_line("reward row"));
    for (int a = 0; a < mdp.num_actions; ++a) ss >> mdp.reward(s, a);
    if (!ss) throw std::runtime_error("load_mdp: malformed reward row");
  }
  if (expect_line("initial_dist") != "initial_dist") {
    throw std::runtime_error("load_mdp: expected initial_dist block");
  }
  mdp.initial_dist = Eigen::VectorXd(mdp.num_states);
  {
    std::istringstream ss(expect_line("initial_dist row"));
    for (int s = 0; s < mdp.num_states; ++s) ss >> mdp.initial_dist[s];
    if (!ss) throw std::runtime_error("load_mdp: malformed initial_dist");
  }
  mdp.validate();
  return mdp;
}

std::uint64_t mdp_checksum(const FiniteMdp& mdp) {
  std::ostringstream out;
  out << mdp.num_states << '|' << mdp.num_actions << '|' << render(mdp.gamma);
  for (int sa = 0; sa < mdp.num_pairs(); ++sa)
    for (int sp = 0; sp < mdp.num_states; ++sp)
      out << '|' << render(mdp.transition(sa, sp));
  for (int s = 0; s < mdp.num_states; ++s)
    for (int a = 0; a < mdp.num_actions; ++a)
      out << '|' << render(mdp.reward(s, a));
  for (int s = 0; s < mdp.num_states; ++s)
    out << '|' << render(mdp.initial_dist[s]);
  const std::string text = out.str();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace bcrl
