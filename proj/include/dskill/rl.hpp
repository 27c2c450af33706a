#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dskill/env.hpp"

namespace dskill {

/// Fully connected network, relu hidden layers and a linear output layer.
/// Parameters live in one flat vector, layer by layer: W (out x in,
/// column-major) then b.
class Mlp {
 public:
  Mlp() = default;
  /// Zero-initialized parameters.
  explicit Mlp(std::vector<int> sizes);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
  Mlp(std::vector<int> sizes, std::mt19937_64& rng);

  const std::vector<int>& sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int layer_count() const { return static_cast<int>(sizes_.size()) - 1; }
  Eigen::Index parameter_count() const { return theta_.size(); }

  const Eigen::VectorXd& parameters() const { return theta_; }
  void set_parameters(const Eigen::VectorXd& theta);
  /// Mutable access; invalidates outstanding forward caches.
  Eigen::VectorXd& mutable_parameters();
  std::uint64_t version() const { return version_; }

  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
  Eigen::Index weight_offset(int layer) const { return offsets_[static_cast<std::size_t>(layer)]; }

 private:
  void touch();

  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  Eigen::VectorXd theta_;
  std::uint64_t version_ = 0;
};

/// Activations retained by a forward pass for the matching backward pass.
struct MlpCache {
  const Mlp* net = nullptr;
  std::uint64_t version = 0;
  std::vector<Eigen::MatrixXd> inputs;  // input of each layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
};

struct MlpGradient {
  Eigen::VectorXd params;  // same layout as Mlp::parameters()
  Eigen::MatrixXd input;   // d loss / d input, one column per sample
};

/// Batched forward: x is input_dim x batch.
Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& x, MlpCache* cache = nullptr);
Eigen::VectorXd mlp_forward(const Mlp& net, const Eigen::VectorXd& x);
/// Reverse pass for the upstream gradient dy (output_dim x batch); parameter
/// gradients are summed over the batch.
MlpGradient mlp_backward(const Mlp& net, const MlpCache& cache, const Eigen::MatrixXd& dy);

struct SacHyperparams {
  double gamma = 0.99;
  double tau = 0.005;
  double lr = 3e-4;
  int batch_size = 256;
  std::size_t buffer_capacity = 1000000;
  double target_entropy_scale = 1.0;  // target entropy is -scale * action_dim
  std::vector<int> hidden = {256, 256};
  double initial_alpha = 1.0;
  int updates_per_step = 1;  // gradient updates per environment step after warmup
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

/// Squashed Gaussian actor: the network emits [mean; log_std].
struct PolicyNet {
  Mlp net;
  int action_dim = 0;
  // Input normalization (s - obs_shift) .* obs_scale, shared with the critics.
  Eigen::VectorXd obs_shift;
  Eigen::VectorXd obs_scale;

  PolicyNet() = default;
  PolicyNet(int obs_dim, int action_dim, const std::vector<int>& hidden, std::mt19937_64& rng);
  int observation_dim() const { return net.input_dim(); }
  Eigen::MatrixXd normalize(const Eigen::MatrixXd& s) const;
  /// Sets the normalization from sample statistics (columns are samples).
  void fit_normalizer(const Eigen::MatrixXd& samples, double min_std = 1e-2);
};

struct SampledAction {
  Eigen::VectorXd action;
  double log_prob = 0.0;
};

SampledAction sample_action(const PolicyNet& policy, const Eigen::VectorXd& s, std::mt19937_64& rng,
                            bool deterministic);
/// Log-density of tanh(mean + std * eps) given the Gaussian noise eps.
SampledAction squash(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std, const Eigen::VectorXd& eps);

/// Maps an observation to a normalized action vector.
using PolicyFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& observation)>;
PolicyFn deterministic_policy(const PolicyNet& policy);

struct SacBatch {
  Eigen::MatrixXd s, a, s2;  // one column per transition
  Eigen::VectorXd r, done;
};

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int obs_dim, int action_dim);

  void add(const Eigen::VectorXd& s, const Eigen::VectorXd& a, double r, const Eigen::VectorXd& s2, bool done);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::vector<std::size_t> sample_indices(std::size_t n, std::mt19937_64& rng) const;
  /// Stored observations, one column per transition.
  Eigen::MatrixXd observations() const { return s_.leftCols(static_cast<Eigen::Index>(size_)); }
  SacBatch gather(const std::vector<std::size_t>& idx) const;
  SacBatch sample(std::size_t n, std::mt19937_64& rng) const { return gather(sample_indices(n, rng)); }

 private:
  void grow(std::size_t needed);

  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  Eigen::MatrixXd s_, a_, s2_;
  Eigen::VectorXd r_, done_;
};

struct Adam {
  Eigen::VectorXd m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double lr);
  void step(double& theta, double grad, double lr);
};

struct SacAgent {
  SacHyperparams hyper;
  PolicyNet actor;
  Mlp q1, q2, q1_target, q2_target;
  double log_alpha = 0.0;
  Adam actor_opt, q1_opt, q2_opt, alpha_opt;

  SacAgent() = default;
  SacAgent(int obs_dim, int action_dim, const SacHyperparams& hyper);
  double alpha() const;
  double target_entropy() const;
};

/// Reparameterization noise for one update: columns match the batch.
struct SacNoise {
  Eigen::MatrixXd next;     // for the Bellman target actions at s'
  Eigen::MatrixXd current;  // for the actor / temperature losses at s
};

SacNoise draw_sac_noise(int action_dim, int batch, std::mt19937_64& rng);

struct SacLosses {
  double critic = 0.0;
  double actor = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;  // mean -log pi over the batch
};

/// Bellman target y = r + gamma (1 - done) (min target Q(s', a') - alpha log pi(a'|s')).
Eigen::VectorXd bellman_target(const SacAgent& agent, const SacBatch& batch, const Eigen::MatrixXd& eps_next);
/// 0.5 mean (Q1 - y)^2 + 0.5 mean (Q2 - y)^2 with y held fixed.
double critic_loss(const SacAgent& agent, const SacBatch& batch, const Eigen::VectorXd& y,
                   Eigen::VectorXd* grad_q1 = nullptr, Eigen::VectorXd* grad_q2 = nullptr);
/// mean(alpha log pi(a~|s) - min_i Q_i(s, a~)), a~ reparameterized with eps.
double actor_loss(const SacAgent& agent, const SacBatch& batch, const Eigen::MatrixXd& eps,
                  Eigen::VectorXd* grad = nullptr, double* mean_log_prob = nullptr);
/// -log_alpha * mean(log pi + target_entropy).
double alpha_loss(const SacAgent& agent, const SacBatch& batch, const Eigen::MatrixXd& eps, double* grad = nullptr);

/// Losses and gradients above operate on already-normalized observations;
/// sac_update normalizes the raw batch with the actor's normalizer first.
SacLosses sac_update(SacAgent& agent, const SacBatch& batch, const SacNoise& noise);
SacLosses sac_update(SacAgent& agent, const ReplayBuffer& buffer, std::mt19937_64& rng);

struct TrainConfig {
  AgentMode mode = AgentMode::kFloatingHand;
  EnvConfig env;
  SacHyperparams hyper;
  std::size_t budget = 150000;
  std::size_t warmup = 5000;
  std::size_t eval_interval = 5000;
  int eval_episodes = 10;
  ObservationNoise noise;
  // Success ends the episode but is stored as non-terminal, so the critic
  // keeps valuing the open drawer instead of treating it as an absorbing zero.
  bool terminal_on_success = false;
  // Keep collecting past success until the time limit, so the critic sees the
  // open-drawer states and their reward instead of extrapolating into them.
  // Evaluation always stops at success.
  bool continue_after_success = true;
  // Freeze an input normalizer from the warmup data.
  bool normalize_observations = true;

  void validate() const;
};

struct CurvePoint {
  std::size_t steps = 0;
  double episode_return = 0.0;  // mean return of episodes finished since the previous point
  double eval_success = 0.0;
};

struct TrainResult {
  SacAgent agent;
  std::vector<CurvePoint> curve;
  std::size_t episodes = 0;
};

using TrainProgress = std::function<void(const CurvePoint&)>;

TrainResult train(const TrainConfig& cfg, const std::vector<CabinetModel>& cabinets,
                  const TrainProgress& progress = {});

struct EvalResult {
  double success_rate = 0.0;
  double avg_length = 0.0;  // failures count as the episode limit
  std::vector<double> per_seed_success;
  std::vector<double> per_seed_length;
};

/// Deterministic-action rollouts in the given environment. Episode e of seed
/// k runs on cabinets[e % size] from a reset seed derived from (k, e).
EvalResult evaluate(const PolicyFn& policy, const DrawerEnv& env, const std::vector<CabinetModel>& cabinets,
                    int episodes_per_seed, int seeds, const ObservationNoise& noise = {},
                    std::uint64_t seed_base = 0);
std::uint64_t evaluation_reset_seed(std::uint64_t seed_base, int seed, int episode);

void save_checkpoint(const std::string& path, const SacAgent& agent);
SacAgent load_checkpoint(const std::string& path);
std::string agent_to_json(const SacAgent& agent);
SacAgent agent_from_json(const std::string& text);

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve);

}  // namespace dskill
