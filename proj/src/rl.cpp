#include "dskill/rl.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dskill/errors.hpp"

namespace dskill {

namespace {

std::atomic<std::uint64_t> g_mlp_version{1};

constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kLn2 = 0.69314718055994530942;
constexpr double kActionBound = 1.0 - 1e-12;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

// log(1 - tanh(u)^2), stable for large |u|.
double log_one_minus_tanh_sq(double u) { return 2.0 * (kLn2 - u - softplus(-2.0 * u)); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Per-column policy quantities for a batch.
struct SquashedBatch {
  Eigen::MatrixXd a, u, std, eps;
  Eigen::MatrixXd clamp_mask;  // 1 where log_std was inside its clamp range
  Eigen::VectorXd log_prob;
};

SquashedBatch squash_batch(const Eigen::MatrixXd& out, int action_dim, const Eigen::MatrixXd& eps) {
  const Eigen::Index A = action_dim;
  const Eigen::Index B = out.cols();
  SquashedBatch r;
  r.eps = eps;
  const Eigen::MatrixXd raw_ls = out.bottomRows(A);
  const Eigen::MatrixXd ls = raw_ls.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  r.clamp_mask = ((raw_ls.array() > kLogStdMin) && (raw_ls.array() < kLogStdMax)).cast<double>().matrix();
  r.std = ls.array().exp().matrix();
  r.u = out.topRows(A) + r.std.cwiseProduct(eps);
  r.a.resize(A, B);
  r.log_prob.resize(B);
  for (Eigen::Index j = 0; j < B; ++j) {
    double lp = 0.0;
    for (Eigen::Index i = 0; i < A; ++i) {
      const double u = r.u(i, j);
      r.a(i, j) = std::clamp(std::tanh(u), -kActionBound, kActionBound);
      lp += -0.5 * eps(i, j) * eps(i, j) - ls(i, j) - kHalfLog2Pi - log_one_minus_tanh_sq(u);
    }
    r.log_prob[j] = lp;
  }
  return r;
}

Eigen::MatrixXd concat_rows(const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom) {
  Eigen::MatrixXd m(top.rows() + bottom.rows(), top.cols());
  m << top, bottom;
  return m;
}

}  // namespace

// ---------------------------------------------------------------- Mlp

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw ContractViolation("Mlp: need at least input and output sizes");
  Eigen::Index total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] < 1 || sizes_[l + 1] < 1) throw ContractViolation("Mlp: layer sizes must be positive");
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[l] + 1) * sizes_[l + 1];
  }
  theta_ = Eigen::VectorXd::Zero(total);
  touch();
}

Mlp::Mlp(std::vector<int> sizes, std::mt19937_64& rng) : Mlp(std::move(sizes)) {
  for (int l = 0; l < layer_count(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[static_cast<std::size_t>(l)]));
    std::uniform_real_distribution<double> u(-bound, bound);
    const Eigen::Index count = static_cast<Eigen::Index>(sizes_[static_cast<std::size_t>(l)] + 1) * sizes_[static_cast<std::size_t>(l) + 1];
    for (Eigen::Index i = 0; i < count; ++i) theta_[offsets_[static_cast<std::size_t>(l)] + i] = u(rng);
  }
}

void Mlp::touch() { version_ = g_mlp_version.fetch_add(1); }

void Mlp::set_parameters(const Eigen::VectorXd& theta) {
  if (theta.size() != theta_.size()) throw ContractViolation("Mlp::set_parameters: size mismatch");
  theta_ = theta;
  touch();
}

Eigen::VectorXd& Mlp::mutable_parameters() {
  touch();
  return theta_;
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(int layer) const {
  const auto l = static_cast<std::size_t>(layer);
  return {theta_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(int layer) const {
  const auto l = static_cast<std::size_t>(layer);
  return {theta_.data() + offsets_[l] + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1], sizes_[l + 1]};
}

Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& x, MlpCache* cache) {
  if (net.layer_count() < 1) throw ContractViolation("mlp_forward: empty network");
  if (x.rows() != net.input_dim()) {
    throw ContractViolation("mlp_forward: input has " + std::to_string(x.rows()) + " rows, network expects " +
                            std::to_string(net.input_dim()));
  }
  const int L = net.layer_count();
  if (cache != nullptr) {
    cache->net = &net;
    cache->version = net.version();
    cache->inputs.resize(static_cast<std::size_t>(L));
    cache->pre.resize(static_cast<std::size_t>(L));
  }
  Eigen::MatrixXd h = x;
  for (int l = 0; l < L; ++l) {
    Eigen::MatrixXd z = net.weight(l) * h;
    z.colwise() += net.bias(l);
    if (cache != nullptr) {
      cache->inputs[static_cast<std::size_t>(l)] = std::move(h);
      cache->pre[static_cast<std::size_t>(l)] = z;
    }
    h = l + 1 < L ? Eigen::MatrixXd(z.cwiseMax(0.0)) : std::move(z);
  }
  return h;
}

Eigen::VectorXd mlp_forward(const Mlp& net, const Eigen::VectorXd& x) {
  return mlp_forward(net, Eigen::MatrixXd(x), nullptr).col(0);
}

MlpGradient mlp_backward(const Mlp& net, const MlpCache& cache, const Eigen::MatrixXd& dy) {
  if (cache.net != &net || cache.version != net.version()) {
    throw ContractViolation("mlp_backward: cache does not belong to the current network parameters");
  }
  const int L = net.layer_count();
  if (dy.rows() != net.output_dim() || dy.cols() != cache.pre.back().cols()) {
    throw ContractViolation("mlp_backward: output gradient has the wrong shape");
  }
  MlpGradient out;
  out.params = Eigen::VectorXd::Zero(net.parameter_count());
  Eigen::MatrixXd g = dy;
  for (int l = L - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const Eigen::Index rows = net.sizes()[li + 1];
    const Eigen::Index cols = net.sizes()[li];
    Eigen::Map<Eigen::MatrixXd>(out.params.data() + net.weight_offset(l), rows, cols).noalias() =
        g * cache.inputs[li].transpose();
    out.params.segment(net.weight_offset(l) + rows * cols, rows) = g.rowwise().sum();
    Eigen::MatrixXd gin = net.weight(l).transpose() * g;
    if (l > 0) {
      g = gin.cwiseProduct((cache.pre[li - 1].array() > 0.0).cast<double>().matrix());
    } else {
      out.input = std::move(gin);
    }
  }
  return out;
}

// ---------------------------------------------------------------- policy

void SacHyperparams::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ContractViolation("SacHyperparams: gamma must lie in (0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw ContractViolation("SacHyperparams: tau must lie in (0, 1]");
  if (!(lr > 0.0)) throw ContractViolation("SacHyperparams: lr must be > 0");
  if (batch_size < 1) throw ContractViolation("SacHyperparams: batch_size must be >= 1");
  if (buffer_capacity < 1) throw ContractViolation("SacHyperparams: buffer_capacity must be >= 1");
  if (hidden.empty()) throw ContractViolation("SacHyperparams: need at least one hidden layer");
  if (!(initial_alpha > 0.0)) throw ContractViolation("SacHyperparams: initial_alpha must be > 0");
  if (updates_per_step < 1) throw ContractViolation("SacHyperparams: updates_per_step must be >= 1");
}

PolicyNet::PolicyNet(int obs_dim, int act_dim, const std::vector<int>& hidden, std::mt19937_64& rng)
    : action_dim(act_dim) {
  std::vector<int> sizes{obs_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2 * act_dim);
  net = Mlp(sizes, rng);
  obs_shift = Eigen::VectorXd::Zero(obs_dim);
  obs_scale = Eigen::VectorXd::Ones(obs_dim);
}

Eigen::MatrixXd PolicyNet::normalize(const Eigen::MatrixXd& s) const {
  if (s.rows() != obs_shift.size()) throw ContractViolation("PolicyNet::normalize: observation has the wrong length");
  return (s.colwise() - obs_shift).array().colwise() * obs_scale.array();
}

void PolicyNet::fit_normalizer(const Eigen::MatrixXd& samples, double min_std) {
  if (samples.rows() != obs_shift.size() || samples.cols() < 2) {
    throw ContractViolation("PolicyNet::fit_normalizer: need at least two samples of the right length");
  }
  obs_shift = samples.rowwise().mean();
  const Eigen::VectorXd var = (samples.colwise() - obs_shift).array().square().rowwise().mean();
  obs_scale = var.cwiseSqrt().cwiseMax(min_std).cwiseInverse();
}

SampledAction squash(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std, const Eigen::VectorXd& eps) {
  Eigen::MatrixXd out(2 * mean.size(), 1);
  out << mean, log_std;
  const SquashedBatch b = squash_batch(out, static_cast<int>(mean.size()), eps);
  return {b.a.col(0), b.log_prob[0]};
}

SampledAction sample_action(const PolicyNet& policy, const Eigen::VectorXd& s, std::mt19937_64& rng,
                            bool deterministic) {
  const Eigen::VectorXd out = mlp_forward(policy.net, Eigen::MatrixXd(policy.normalize(s))).col(0);
  const Eigen::Index A = policy.action_dim;
  Eigen::VectorXd eps = Eigen::VectorXd::Zero(A);
  if (!deterministic) {
    std::normal_distribution<double> n01;
    for (Eigen::Index i = 0; i < A; ++i) eps[i] = n01(rng);
  }
  return squash(out.head(A), out.tail(A), eps);
}

PolicyFn deterministic_policy(const PolicyNet& policy) {
  return [policy](const Eigen::VectorXd& obs) {
    const Eigen::VectorXd out = mlp_forward(policy.net, Eigen::MatrixXd(policy.normalize(obs))).col(0);
    return Eigen::VectorXd(out.head(policy.action_dim).array().tanh().cwiseMax(-kActionBound).cwiseMin(kActionBound));
  };
}

// ---------------------------------------------------------------- replay

ReplayBuffer::ReplayBuffer(std::size_t capacity, int obs_dim, int action_dim) : capacity_(capacity) {
  if (capacity == 0) throw ContractViolation("ReplayBuffer: capacity must be >= 1");
  s_.resize(obs_dim, 0);
  s2_.resize(obs_dim, 0);
  a_.resize(action_dim, 0);
}

void ReplayBuffer::grow(std::size_t needed) {
  const auto have = static_cast<std::size_t>(s_.cols());
  if (needed <= have) return;
  const auto n = static_cast<Eigen::Index>(std::min(capacity_, std::max(needed, 2 * have + 1024)));
  s_.conservativeResize(Eigen::NoChange, n);
  s2_.conservativeResize(Eigen::NoChange, n);
  a_.conservativeResize(Eigen::NoChange, n);
  r_.conservativeResize(n);
  done_.conservativeResize(n);
}

void ReplayBuffer::add(const Eigen::VectorXd& s, const Eigen::VectorXd& a, double r, const Eigen::VectorXd& s2,
                       bool done) {
  if (s.size() != s_.rows() || s2.size() != s_.rows() || a.size() != a_.rows()) {
    throw ContractViolation("ReplayBuffer::add: dimension mismatch");
  }
  grow(cursor_ + 1);
  const auto c = static_cast<Eigen::Index>(cursor_);
  s_.col(c) = s;
  a_.col(c) = a;
  s2_.col(c) = s2;
  r_[c] = r;
  done_[c] = done ? 1.0 : 0.0;
  cursor_ = (cursor_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, std::mt19937_64& rng) const {
  if (size_ == 0) throw ContractViolation("ReplayBuffer::sample: buffer is empty");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

SacBatch ReplayBuffer::gather(const std::vector<std::size_t>& idx) const {
  const auto n = static_cast<Eigen::Index>(idx.size());
  SacBatch b;
  b.s.resize(s_.rows(), n);
  b.s2.resize(s_.rows(), n);
  b.a.resize(a_.rows(), n);
  b.r.resize(n);
  b.done.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto i = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(j)]);
    b.s.col(j) = s_.col(i);
    b.s2.col(j) = s2_.col(i);
    b.a.col(j) = a_.col(i);
    b.r[j] = r_[i];
    b.done[j] = done_[i];
  }
  return b;
}

// ---------------------------------------------------------------- SAC

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double lr) {
  if (m.size() != theta.size()) {
    m = Eigen::VectorXd::Zero(theta.size());
    v = Eigen::VectorXd::Zero(theta.size());
    t = 0;
  }
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

void Adam::step(double& theta, double grad, double lr) {
  Eigen::VectorXd th = Eigen::VectorXd::Constant(1, theta);
  step(th, Eigen::VectorXd::Constant(1, grad), lr);
  theta = th[0];
}

SacAgent::SacAgent(int obs_dim, int action_dim, const SacHyperparams& h) : hyper(h) {
  hyper.validate();
  std::mt19937_64 rng(splitmix64(hyper.seed));
  actor = PolicyNet(obs_dim, action_dim, hyper.hidden, rng);
  std::vector<int> sizes{obs_dim + action_dim};
  sizes.insert(sizes.end(), hyper.hidden.begin(), hyper.hidden.end());
  sizes.push_back(1);
  q1 = Mlp(sizes, rng);
  q2 = Mlp(sizes, rng);
  q1_target = Mlp(sizes);
  q2_target = Mlp(sizes);
  q1_target.set_parameters(q1.parameters());
  q2_target.set_parameters(q2.parameters());
  log_alpha = std::log(hyper.initial_alpha);
}

double SacAgent::alpha() const { return std::exp(log_alpha); }

double SacAgent::target_entropy() const {
  return -hyper.target_entropy_scale * static_cast<double>(actor.action_dim);
}

SacNoise draw_sac_noise(int action_dim, int batch, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  SacNoise n;
  n.next.resize(action_dim, batch);
  n.current.resize(action_dim, batch);
  for (Eigen::Index i = 0; i < n.next.size(); ++i) n.next.data()[i] = n01(rng);
  for (Eigen::Index i = 0; i < n.current.size(); ++i) n.current.data()[i] = n01(rng);
  return n;
}

Eigen::VectorXd bellman_target(const SacAgent& agent, const SacBatch& batch, const Eigen::MatrixXd& eps_next) {
  const SquashedBatch nxt = squash_batch(mlp_forward(agent.actor.net, batch.s2), agent.actor.action_dim, eps_next);
  const Eigen::MatrixXd in = concat_rows(batch.s2, nxt.a);
  const Eigen::VectorXd qmin =
      mlp_forward(agent.q1_target, in).row(0).cwiseMin(mlp_forward(agent.q2_target, in).row(0)).transpose();
  const Eigen::VectorXd soft = qmin - agent.alpha() * nxt.log_prob;
  return batch.r + agent.hyper.gamma * (Eigen::VectorXd::Ones(batch.r.size()) - batch.done).cwiseProduct(soft);
}

double critic_loss(const SacAgent& agent, const SacBatch& batch, const Eigen::VectorXd& y, Eigen::VectorXd* grad_q1,
                   Eigen::VectorXd* grad_q2) {
  const Eigen::MatrixXd in = concat_rows(batch.s, batch.a);
  const double B = static_cast<double>(in.cols());
  double loss = 0.0;
  auto one = [&](const Mlp& q, Eigen::VectorXd* grad) {
    MlpCache cache;
    const Eigen::RowVectorXd diff = mlp_forward(q, in, grad ? &cache : nullptr).row(0) - y.transpose();
    loss += 0.5 * diff.squaredNorm() / B;
    if (grad != nullptr) *grad = mlp_backward(q, cache, diff / B).params;
  };
  one(agent.q1, grad_q1);
  one(agent.q2, grad_q2);
  return loss;
}

double actor_loss(const SacAgent& agent, const SacBatch& batch, const Eigen::MatrixXd& eps, Eigen::VectorXd* grad,
                  double* mean_log_prob) {
  const int A = agent.actor.action_dim;
  const Eigen::Index Bn = batch.s.cols();
  const double B = static_cast<double>(Bn);
  const double alpha = agent.alpha();

  MlpCache actor_cache;
  const Eigen::MatrixXd out = mlp_forward(agent.actor.net, batch.s, &actor_cache);
  const SquashedBatch sq = squash_batch(out, A, eps);
  const Eigen::MatrixXd in = concat_rows(batch.s, sq.a);
  MlpCache c1, c2;
  const Eigen::RowVectorXd v1 = mlp_forward(agent.q1, in, &c1).row(0);
  const Eigen::RowVectorXd v2 = mlp_forward(agent.q2, in, &c2).row(0);
  const Eigen::RowVectorXd qmin = v1.cwiseMin(v2);
  const double loss = (alpha * sq.log_prob.sum() - qmin.sum()) / B;
  if (mean_log_prob != nullptr) *mean_log_prob = sq.log_prob.mean();
  if (grad == nullptr) return loss;

  // d loss / d a through the selected critic of each sample.
  Eigen::MatrixXd d1 = Eigen::MatrixXd::Zero(1, Bn), d2 = Eigen::MatrixXd::Zero(1, Bn);
  for (Eigen::Index j = 0; j < Bn; ++j) (v1[j] <= v2[j] ? d1 : d2)(0, j) = -1.0 / B;
  const Eigen::MatrixXd ga = mlp_backward(agent.q1, c1, d1).input.bottomRows(A) +
                             mlp_backward(agent.q2, c2, d2).input.bottomRows(A);

  Eigen::MatrixXd dout(2 * A, Bn);
  for (Eigen::Index j = 0; j < Bn; ++j) {
    for (Eigen::Index i = 0; i < A; ++i) {
      const double t = std::tanh(sq.u(i, j));
      const double du = ga(i, j) * (1.0 - t * t) + alpha * 2.0 * t / B;
      dout(i, j) = du;
      dout(A + i, j) = sq.clamp_mask(i, j) * (du * sq.std(i, j) * sq.eps(i, j) - alpha / B);
    }
  }
  *grad = mlp_backward(agent.actor.net, actor_cache, dout).params;
  return loss;
}

double alpha_loss(const SacAgent& agent, const SacBatch& batch, const Eigen::MatrixXd& eps, double* grad) {
  const SquashedBatch sq = squash_batch(mlp_forward(agent.actor.net, batch.s), agent.actor.action_dim, eps);
  const double m = sq.log_prob.mean() + agent.target_entropy();
  if (grad != nullptr) *grad = -m;
  return -agent.log_alpha * m;
}

SacLosses sac_update(SacAgent& agent, const SacBatch& raw, const SacNoise& noise) {
  const double lr = agent.hyper.lr;
  SacBatch batch = raw;
  batch.s = agent.actor.normalize(raw.s);
  batch.s2 = agent.actor.normalize(raw.s2);
  SacLosses out;
  const Eigen::VectorXd y = bellman_target(agent, batch, noise.next);
  Eigen::VectorXd g1, g2;
  out.critic = critic_loss(agent, batch, y, &g1, &g2);
  agent.q1_opt.step(agent.q1.mutable_parameters(), g1, lr);
  agent.q2_opt.step(agent.q2.mutable_parameters(), g2, lr);

  Eigen::VectorXd ga;
  double mean_lp = 0.0;
  out.actor = actor_loss(agent, batch, noise.current, &ga, &mean_lp);
  agent.actor_opt.step(agent.actor.net.mutable_parameters(), ga, lr);

  const double m = mean_lp + agent.target_entropy();
  out.alpha_loss = -agent.log_alpha * m;
  agent.alpha_opt.step(agent.log_alpha, -m, lr);
  out.alpha = agent.alpha();
  out.entropy = -mean_lp;

  const double tau = agent.hyper.tau;
  Eigen::VectorXd& t1 = agent.q1_target.mutable_parameters();
  t1 = (1.0 - tau) * t1 + tau * agent.q1.parameters();
  Eigen::VectorXd& t2 = agent.q2_target.mutable_parameters();
  t2 = (1.0 - tau) * t2 + tau * agent.q2.parameters();
  return out;
}

SacLosses sac_update(SacAgent& agent, const ReplayBuffer& buffer, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(agent.hyper.batch_size);
  if (buffer.size() < n) throw ContractViolation("sac_update: buffer holds fewer transitions than batch_size");
  const SacBatch batch = buffer.sample(n, rng);
  const SacNoise noise = draw_sac_noise(agent.actor.action_dim, static_cast<int>(n), rng);
  return sac_update(agent, batch, noise);
}

// ---------------------------------------------------------------- train / evaluate

void TrainConfig::validate() const {
  hyper.validate();
  if (eval_interval == 0) throw ContractViolation("TrainConfig: eval_interval must be >= 1");
  if (eval_episodes < 1) throw ContractViolation("TrainConfig: eval_episodes must be >= 1");
  if (terminal_on_success && continue_after_success) {
    throw ContractViolation("TrainConfig: terminal_on_success contradicts continue_after_success");
  }
}

std::uint64_t evaluation_reset_seed(std::uint64_t seed_base, int seed, int episode) {
  return splitmix64(splitmix64(seed_base ^ 0xE7A1ULL) + static_cast<std::uint64_t>(seed) * 1000003ULL +
                    static_cast<std::uint64_t>(episode));
}

EvalResult evaluate(const PolicyFn& policy, const DrawerEnv& env, const std::vector<CabinetModel>& cabinets,
                    int episodes_per_seed, int seeds, const ObservationNoise& noise, std::uint64_t seed_base) {
  if (cabinets.empty()) throw ContractViolation("evaluate: no cabinets");
  if (episodes_per_seed < 1 || seeds < 1) throw ContractViolation("evaluate: need at least one episode and seed");
  EvalResult res;
  const int limit = env.config().max_steps;
  for (int k = 0; k < seeds; ++k) {
    int wins = 0;
    double length = 0.0;
    for (int e = 0; e < episodes_per_seed; ++e) {
      const std::uint64_t rs = evaluation_reset_seed(seed_base, k, e);
      std::mt19937_64 noise_rng(rs);
      WorldState s = env.reset(cabinets[static_cast<std::size_t>(e) % cabinets.size()], rs);
      bool success = false;
      for (;;) {
        const StepResult r = env.step(s, Action::FromVector(policy(env.observe(s, noise, &noise_rng))));
        s = r.state;
        if (r.done) {
          success = r.info.success;
          break;
        }
      }
      wins += success ? 1 : 0;
      length += success ? s.step_count : limit;
    }
    res.per_seed_success.push_back(static_cast<double>(wins) / episodes_per_seed);
    res.per_seed_length.push_back(length / episodes_per_seed);
  }
  for (std::size_t k = 0; k < res.per_seed_success.size(); ++k) {
    res.success_rate += res.per_seed_success[k] / seeds;
    res.avg_length += res.per_seed_length[k] / seeds;
  }
  return res;
}

TrainResult train(const TrainConfig& cfg, const std::vector<CabinetModel>& cabinets, const TrainProgress& progress) {
  cfg.validate();
  if (cabinets.empty()) throw ContractViolation("train: no cabinets");
  const DrawerEnv env(cfg.mode, cfg.env);
  const int obs_dim = static_cast<int>(env.observation_dim());
  const int act_dim = static_cast<int>(env.action_dim());
  TrainResult out;
  out.agent = SacAgent(obs_dim, act_dim, cfg.hyper);
  SacAgent& agent = out.agent;
  std::mt19937_64 rng(splitmix64(cfg.hyper.seed + 0x5EEDULL));
  ReplayBuffer buffer(std::max<std::size_t>(1, std::min(cfg.hyper.buffer_capacity, cfg.budget)), obs_dim, act_dim);
  std::uniform_int_distribution<std::size_t> pick_cabinet(0, cabinets.size() - 1);
  std::uniform_real_distribution<double> uniform_action(-1.0, 1.0);

  auto start_episode = [&]() { return env.reset(cabinets[pick_cabinet(rng)], rng()); };
  WorldState state = start_episode();
  Eigen::VectorXd obs = env.observe(state, cfg.noise, &rng);
  double ep_return = 0.0, returns_sum = 0.0;
  int returns_count = 0;

  for (std::size_t step = 1; step <= cfg.budget; ++step) {
    Eigen::VectorXd a(act_dim);
    if (step <= cfg.warmup) {
      for (int i = 0; i < act_dim; ++i) a[i] = uniform_action(rng);
    } else {
      a = sample_action(agent.actor, obs, rng, false).action;
    }
    const StepResult r = env.step(state, Action::FromVector(a));
    const Eigen::VectorXd obs2 = env.observe(r.state, cfg.noise, &rng);
    const bool terminal = cfg.terminal_on_success && r.info.success;
    buffer.add(obs, a, r.reward, obs2, terminal);
    ep_return += r.reward;
    if (step == cfg.warmup && cfg.normalize_observations) agent.actor.fit_normalizer(buffer.observations());
    if (step > cfg.warmup && buffer.size() >= static_cast<std::size_t>(cfg.hyper.batch_size)) {
      for (int u = 0; u < cfg.hyper.updates_per_step; ++u) sac_update(agent, buffer, rng);
    }
    const bool episode_over = cfg.continue_after_success ? r.state.step_count >= cfg.env.max_steps : r.done;
    if (episode_over) {
      returns_sum += ep_return;
      ++returns_count;
      ++out.episodes;
      ep_return = 0.0;
      state = start_episode();
      obs = env.observe(state, cfg.noise, &rng);
    } else {
      state = r.state;
      obs = obs2;
    }
    if (step % cfg.eval_interval == 0) {
      CurvePoint p;
      p.steps = step;
      p.episode_return = returns_count > 0 ? returns_sum / returns_count : ep_return;
      p.eval_success = evaluate(deterministic_policy(agent.actor), env, cabinets, cfg.eval_episodes, 1, cfg.noise,
                                cfg.hyper.seed + 0xC0FFEEULL)
                           .success_rate;
      returns_sum = 0.0;
      returns_count = 0;
      out.curve.push_back(p);
      if (progress) progress(p);
    }
  }
  return out;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr const char* kCheckpointFormat = "dskill-sac";
constexpr int kCheckpointVersion = 1;

nlohmann::json hyper_to_json(const SacHyperparams& h) {
  return {{"gamma", h.gamma},           {"tau", h.tau},
          {"lr", h.lr},                 {"batch_size", h.batch_size},
          {"buffer_capacity", h.buffer_capacity}, {"target_entropy_scale", h.target_entropy_scale},
          {"hidden", h.hidden},         {"initial_alpha", h.initial_alpha},
          {"updates_per_step", h.updates_per_step}, {"seed", h.seed}};
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_std(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string agent_to_json(const SacAgent& agent) {
  nlohmann::json doc;
  doc["format"] = kCheckpointFormat;
  doc["version"] = kCheckpointVersion;
  doc["hyper"] = hyper_to_json(agent.hyper);
  doc["observation_dim"] = agent.actor.observation_dim();
  doc["action_dim"] = agent.actor.action_dim;
  doc["log_alpha"] = agent.log_alpha;
  doc["obs_shift"] = to_std(agent.actor.obs_shift);
  doc["obs_scale"] = to_std(agent.actor.obs_scale);
  doc["actor"] = to_std(agent.actor.net.parameters());
  doc["q1"] = to_std(agent.q1.parameters());
  doc["q2"] = to_std(agent.q2.parameters());
  doc["q1_target"] = to_std(agent.q1_target.parameters());
  doc["q2_target"] = to_std(agent.q2_target.parameters());
  return doc.dump();
}

SacAgent agent_from_json(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.at("format").get<std::string>() != kCheckpointFormat) throw ParseError("checkpoint: unknown format");
    if (doc.at("version").get<int>() != kCheckpointVersion) throw ParseError("checkpoint: unsupported version");
    const auto& hj = doc.at("hyper");
    SacHyperparams h;
    h.gamma = hj.at("gamma");
    h.tau = hj.at("tau");
    h.lr = hj.at("lr");
    h.batch_size = hj.at("batch_size");
    h.buffer_capacity = hj.at("buffer_capacity");
    h.target_entropy_scale = hj.at("target_entropy_scale");
    h.hidden = hj.at("hidden").get<std::vector<int>>();
    h.initial_alpha = hj.at("initial_alpha");
    h.updates_per_step = hj.at("updates_per_step");
    h.seed = hj.at("seed");
    SacAgent agent(doc.at("observation_dim").get<int>(), doc.at("action_dim").get<int>(), h);
    auto load = [&](const char* key, Mlp& net) {
      const auto v = doc.at(key).get<std::vector<double>>();
      if (static_cast<Eigen::Index>(v.size()) != net.parameter_count()) {
        throw ParseError(std::string("checkpoint: '") + key + "' has the wrong parameter count");
      }
      net.set_parameters(from_std(v));
    };
    load("actor", agent.actor.net);
    load("q1", agent.q1);
    load("q2", agent.q2);
    load("q1_target", agent.q1_target);
    load("q2_target", agent.q2_target);
    agent.log_alpha = doc.at("log_alpha");
    const auto shift = doc.at("obs_shift").get<std::vector<double>>();
    const auto scale = doc.at("obs_scale").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(shift.size()) != agent.actor.obs_shift.size() || shift.size() != scale.size()) {
      throw ParseError("checkpoint: normalizer has the wrong length");
    }
    agent.actor.obs_shift = from_std(shift);
    agent.actor.obs_scale = from_std(scale);
    return agent;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const ContractViolation& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const SacAgent& agent) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  os << agent_to_json(agent) << '\n';
}

SacAgent load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot read checkpoint '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return agent_from_json(ss.str());
}

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write curve '" + path + "'");
  os << "step,return,eval_success\n";
  os.precision(10);
  for (const auto& p : curve) os << p.steps << ',' << p.episode_return << ',' << p.eval_success << '\n';
}

}  // namespace dskill
