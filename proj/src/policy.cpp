#include "cso/policy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cso/error.hpp"
#include "cso/parallel.hpp"

namespace cso {

namespace {

constexpr std::array<char, 4> kMagic{'C', 'S', 'O', 'P'};
constexpr std::uint32_t kParamSchema = 1;

struct FeatureSteps {
  std::vector<FeatureVector> features;
  std::vector<int> actions;
};

FeatureSteps featurize_trajectory(const Featurizer& featurizer, const TaskSpec& task, const Trajectory& t) {
  FeatureSteps out;
  std::vector<HistoryEntry> history;
  history.reserve(t.steps.size());
  for (const auto& step : t.steps) {
    out.features.push_back(featurizer(task.query, history));
    out.actions.push_back(step.action);
    history.push_back({step.action, step.observation.payload});
  }
  return out;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::uint64_t bits = 0;
  std::memcpy(&bits, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) fail(ErrorCode::io, "truncated parameter file");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}

}  // namespace

Featurizer::Featurizer(const Vocabulary& vocab, FeatureConfig config) : vocab_(vocab), config_(config) {
  const int tools = vocab.tools();
  const int values = std::max(vocab.arguments(), vocab.answers());
  query_hint_offset_ = 1;
  obs_hint_offset_ = query_hint_offset_ + tools;
  revealed_offset_ = obs_hint_offset_ + tools;
  no_reveal_index_ = revealed_offset_ + values;
  answer_phase_index_ = no_reveal_index_ + 1;
  step_offset_ = answer_phase_index_ + 1;
  hash_offset_ = step_offset_ + kStepBuckets;
  hash_buckets_ = config.dimension - hash_offset_;
  require(config.history_window >= 0, ErrorCode::invalid_argument, "history_window must be nonnegative");
  require(hash_buckets_ >= 1 || config.history_window == 0, ErrorCode::invalid_argument,
          "feature dimension " + std::to_string(config.dimension) + " too small; need at least " +
              std::to_string(hash_offset_ + 1));
}

FeatureVector Featurizer::operator()(std::span<const int> query, std::span<const HistoryEntry> history) const {
  FeatureVector f(static_cast<std::size_t>(config_.dimension), 0.0);
  const int length = static_cast<int>(query.size()) - 1;
  int apparent = 1;
  int revealed = length >= 1 ? query.back() - vocab_.tools() : -1;
  for (const auto& entry : history) {
    if (vocab_.is_reveal(entry.payload)) {
      ++apparent;
      revealed = vocab_.revealed_argument(entry.payload);
    } else if (vocab_.is_final_reveal(entry.payload)) {
      ++apparent;
      revealed = vocab_.revealed_value(entry.payload);
    }
  }

  f[0] = 1.0;
  if (apparent <= length) {
    f[static_cast<std::size_t>(query_hint_offset_ + query[apparent - 1])] = 1.0;
  } else {
    f[static_cast<std::size_t>(answer_phase_index_)] = 1.0;
  }
  if (!history.empty() && vocab_.is_reveal(history.back().payload))
    f[static_cast<std::size_t>(obs_hint_offset_ + vocab_.hinted_tool(history.back().payload))] = 1.0;
  if (revealed >= 0) {
    f[static_cast<std::size_t>(revealed_offset_ + revealed)] = 1.0;
  } else {
    f[static_cast<std::size_t>(no_reveal_index_)] = 1.0;
  }
  const int step = std::min(static_cast<int>(history.size()), kStepBuckets - 1);
  f[static_cast<std::size_t>(step_offset_ + step)] = 1.0;

  const int window = std::min<int>(config_.history_window, static_cast<int>(history.size()));
  for (int lag = 1; lag <= window; ++lag) {
    const auto& entry = history[history.size() - static_cast<std::size_t>(lag)];
    const std::uint64_t token = (static_cast<std::uint64_t>(lag) << 32) | static_cast<std::uint32_t>(entry.action);
    const std::uint64_t h = (token + 1) * 0x9e3779b97f4a7c15ULL;
    const int bucket = static_cast<int>((h >> 32) % static_cast<std::uint64_t>(hash_buckets_));
    f[static_cast<std::size_t>(hash_offset_ + bucket)] += 1.0;
  }

  double norm = 0.0;
  for (double v : f) norm += v * v;
  norm = std::sqrt(norm);
  for (double& v : f) v /= norm;
  return f;
}

PolicyParameters PolicyParameters::zeros(int actions, int features) {
  PolicyParameters p;
  p.actions = actions;
  p.features = features;
  p.weights.assign(static_cast<std::size_t>(actions) * features, 0.0);
  return p;
}

void check_finite(const PolicyParameters& params) {
  for (double w : params.weights)
    if (!std::isfinite(w)) fail(ErrorCode::numeric, "policy parameters contain non-finite weights");
}

std::vector<double> logits(const PolicyParameters& params, const FeatureVector& features) {
  require(static_cast<int>(features.size()) == params.features, ErrorCode::invalid_argument,
          "feature dimension mismatch");
  // Features are sparse one-hot blocks; skip the zeros.
  int nz[256];
  int count = 0;
  const bool sparse = params.features <= 256;
  if (sparse)
    for (int k = 0; k < params.features; ++k)
      if (features[static_cast<std::size_t>(k)] != 0.0) nz[count++] = k;
  std::vector<double> z(static_cast<std::size_t>(params.actions), 0.0);
  for (int a = 0; a < params.actions; ++a) {
    const double* row = params.weights.data() + static_cast<std::size_t>(a) * params.features;
    double s = 0.0;
    if (sparse) {
      for (int i = 0; i < count; ++i) s += row[nz[i]] * features[static_cast<std::size_t>(nz[i])];
    } else {
      for (int k = 0; k < params.features; ++k) s += row[k] * features[static_cast<std::size_t>(k)];
    }
    z[static_cast<std::size_t>(a)] = s;
  }
  return z;
}

std::vector<double> log_probs(const PolicyParameters& params, const FeatureVector& features) {
  auto z = logits(params, features);
  const double m = *std::max_element(z.begin(), z.end());
  if (!std::isfinite(m)) fail(ErrorCode::numeric, "non-finite logits");
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  for (double& v : z) v -= lse;
  return z;
}

double log_prob(const PolicyParameters& params, const FeatureVector& features, int action) {
  require(action >= 0 && action < params.actions, ErrorCode::invalid_argument,
          "action index " + std::to_string(action) + " out of range");
  return log_probs(params, features)[static_cast<std::size_t>(action)];
}

int sample_action(const PolicyParameters& params, const FeatureVector& features, RandomStream& rng) {
  const auto lp = log_probs(params, features);
  const double u = rng.uniform();
  double cumulative = 0.0;
  for (int a = 0; a < params.actions; ++a) {
    cumulative += std::exp(lp[static_cast<std::size_t>(a)]);
    if (u < cumulative) return a;
  }
  // Rounding can leave the cumulative sum just below one.
  for (int a = params.actions - 1; a >= 0; --a)
    if (lp[static_cast<std::size_t>(a)] > -700.0) return a;
  return params.actions - 1;
}

int expert_action(const TaskSpec& task, const WorldState& state, double epsilon, RandomStream& rng) {
  require(epsilon >= 0.0 && epsilon <= 1.0, ErrorCode::invalid_argument, "expert epsilon must lie in [0, 1]");
  const int oracle = oracle_action(task, state);
  const double u = rng.uniform();
  const int pick = rng.uniform_int(task.vocabulary().action_count() - 1);
  if (u >= epsilon) return oracle;
  return pick < oracle ? pick : pick + 1;
}

void add_log_prob_gradient(const PolicyParameters& params, const FeatureVector& features, int action,
                           double coeff, std::span<double> grad) {
  add_log_prob_gradient(params, features, log_probs(params, features), action, coeff, grad);
}

void add_log_prob_gradient(const PolicyParameters& params, const FeatureVector& features,
                           std::span<const double> lp, int action, double coeff, std::span<double> grad) {
  std::vector<int> nz;
  for (int k = 0; k < params.features; ++k)
    if (features[static_cast<std::size_t>(k)] != 0.0) nz.push_back(k);
  for (int a = 0; a < params.actions; ++a) {
    const double indicator = a == action ? 1.0 : 0.0;
    const double scale = coeff * (indicator - std::exp(lp[static_cast<std::size_t>(a)]));
    if (scale == 0.0) continue;
    double* row = grad.data() + static_cast<std::size_t>(a) * params.features;
    for (int k : nz) row[k] += scale * features[static_cast<std::size_t>(k)];
  }
}

void continue_rollout(const PolicyParameters& params, const Featurizer& featurizer, const TaskSpec& task,
                      WorldState state, std::vector<StepRecord>& steps, RandomStream& rng,
                      const RolloutSpec& spec) {
  while (!state.terminal) {
    int action = 0;
    if (spec.actor == Actor::expert) {
      action = expert_action(task, state, spec.expert_epsilon, rng);
    } else {
      action = sample_action(params, featurizer(task, state), rng);
    }
    const auto digest = state_digest(state);
    auto next = transition(task, state, action);
    steps.push_back({digest, action, next.observation});
    state = std::move(next.state);
  }
}

Trajectory rollout(const PolicyParameters& params, const Featurizer& featurizer, const TaskSpec& task,
                   std::uint64_t seed, const RolloutSpec& spec) {
  Trajectory t;
  t.task_id = task.task_id;
  RandomStream rng(seed);
  continue_rollout(params, featurizer, task, initial_state(task), t.steps, rng, spec);
  t.rng_trace = {seed, rng.draws()};
  t.outcome = verify_outcome(task, t);
  const auto vocab = task.vocabulary();
  t.end = !t.steps.empty() && vocab.is_answer(t.steps.back().action) ? EndReason::answer : EndReason::horizon;
  return t;
}

void DemoDataset::add(TaskSpec task, Trajectory trajectory) {
  require(trajectory.outcome == 1, ErrorCode::invalid_argument,
          "demonstration '" + trajectory.id + "' is not successful");
  items_.push_back({std::move(task), std::move(trajectory)});
}

double sft_loss(const PolicyParameters& params, const Featurizer& featurizer, const DemoDataset& demos) {
  require(!demos.empty(), ErrorCode::invalid_argument, "SFT requires a nonempty demonstration set");
  double total = 0.0;
  for (const auto& demo : demos.items()) {
    const auto steps = featurize_trajectory(featurizer, demo.task, demo.trajectory);
    for (std::size_t t = 0; t < steps.actions.size(); ++t)
      total -= log_prob(params, steps.features[t], steps.actions[t]);
  }
  return total / static_cast<double>(demos.size());
}

namespace {

struct SftBatch {
  std::vector<FeatureVector> features;
  std::vector<int> actions;
  double inv_count = 1.0;
};

SftBatch flatten(const Featurizer& featurizer, const DemoDataset& demos) {
  SftBatch batch;
  for (const auto& demo : demos.items()) {
    auto steps = featurize_trajectory(featurizer, demo.task, demo.trajectory);
    for (std::size_t t = 0; t < steps.actions.size(); ++t) {
      batch.features.push_back(std::move(steps.features[t]));
      batch.actions.push_back(steps.actions[t]);
    }
  }
  batch.inv_count = 1.0 / static_cast<double>(demos.size());
  return batch;
}

std::vector<double> batch_gradient(const PolicyParameters& params, const SftBatch& batch, int workers) {
  // d/dW of -(1/N) sum log pi = -(1/N) sum (e_a - pi) f^T
  return deterministic_sum(batch.actions.size(), params.weights.size(), workers,
                           [&](std::size_t i, std::vector<double>& acc) {
                             add_log_prob_gradient(params, batch.features[i], batch.actions[i],
                                                   -batch.inv_count, acc);
                           });
}

double batch_loss(const PolicyParameters& params, const SftBatch& batch, int workers) {
  auto terms = deterministic_sum(batch.actions.size(), 1, workers, [&](std::size_t i, std::vector<double>& acc) {
    acc[0] -= log_prob(params, batch.features[i], batch.actions[i]);
  });
  return terms[0] * batch.inv_count;
}

}  // namespace

std::vector<double> sft_gradient(const PolicyParameters& params, const Featurizer& featurizer,
                                 const DemoDataset& demos, int workers) {
  require(!demos.empty(), ErrorCode::invalid_argument, "SFT requires a nonempty demonstration set");
  return batch_gradient(params, flatten(featurizer, demos), workers);
}

SftResult sft_train(const PolicyParameters& params, const Featurizer& featurizer, const DemoDataset& demos,
                    const SftConfig& config) {
  require(!demos.empty(), ErrorCode::invalid_argument, "SFT requires a nonempty demonstration set");
  check_finite(params);
  const auto batch = flatten(featurizer, demos);
  SftResult result{params, {}};
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double loss = batch_loss(result.params, batch, config.workers);
    if (!std::isfinite(loss)) fail(ErrorCode::numeric, "non-finite SFT loss at epoch " + std::to_string(epoch));
    result.loss_history.push_back(loss);
    const auto grad = batch_gradient(result.params, batch, config.workers);
    for (std::size_t k = 0; k < grad.size(); ++k) result.params.weights[k] -= config.step_size * grad[k];
    ++result.params.version;
  }
  result.loss_history.push_back(batch_loss(result.params, batch, config.workers));
  return result;
}

void save_parameters(const std::filesystem::path& path, const PolicySnapshot& snapshot) {
  const auto& p = snapshot.params();
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io, "cannot write " + path.string());
    out.write(kMagic.data(), kMagic.size());
    write_le<std::uint32_t>(out, kParamSchema);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.actions));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.features));
    for (double w : p.weights) write_le<double>(out, w);
  }
  nlohmann::ordered_json sidecar;
  sidecar["schema"] = kParamSchema;
  sidecar["actions"] = p.actions;
  sidecar["features"] = p.features;
  sidecar["version"] = p.version;
  sidecar["round"] = snapshot.round();
  sidecar["producer"] = snapshot.producer();
  std::ofstream meta(path.string() + ".json");
  if (!meta) fail(ErrorCode::io, "cannot write " + path.string() + ".json");
  meta << sidecar.dump(2) << '\n';
}

PolicySnapshot load_parameters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::missing_artifact, "missing parameter file " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) fail(ErrorCode::io, path.string() + " is not a policy parameter file");
  const auto schema = read_le<std::uint32_t>(in);
  if (schema != kParamSchema)
    fail(ErrorCode::schema_mismatch, path.string() + " has parameter schema " + std::to_string(schema));
  const auto actions = static_cast<int>(read_le<std::uint32_t>(in));
  const auto features = static_cast<int>(read_le<std::uint32_t>(in));
  auto params = PolicyParameters::zeros(actions, features);
  for (double& w : params.weights) w = read_le<double>(in);
  int round = 0;
  std::string producer;
  std::ifstream meta(path.string() + ".json");
  if (meta) {
    try {
      const auto j = nlohmann::json::parse(meta);
      params.version = j.value("version", std::uint64_t{0});
      round = j.value("round", 0);
      producer = j.value("producer", std::string{});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::io, "malformed sidecar for " + path.string() + ": " + e.what());
    }
  }
  check_finite(params);
  return PolicySnapshot(std::move(params), round, std::move(producer));
}

}  // namespace cso
