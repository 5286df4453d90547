#include "gream/policy.hpp"

#include "binary_io.hpp"
#include "gream/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace gream::policy {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

const char* to_string(Mode mode) { return mode == Mode::kDirect ? "direct" : "reasoning"; }

Mode mode_from_string(const std::string& name) {
  if (name == "direct") return Mode::kDirect;
  if (name == "reasoning") return Mode::kReasoning;
  throw ConfigError("unknown generation mode \"" + name + "\" (expected direct or reasoning)");
}

int PolicyShape::slot_vocab(int slot) const {
  const int think = think_levels();
  if (slot < think) return level_sizes[static_cast<std::size_t>(slot)];
  if (slot < think + levels()) return level_sizes[static_cast<std::size_t>(slot - think)];
  return conflict_vocab;
}

std::vector<int> PolicyShape::slot_sequence(Mode mode) const {
  std::vector<int> seq;
  if (mode == Mode::kReasoning)
    for (int s = 0; s < think_levels(); ++s) seq.push_back(s);
  for (int s = think_levels(); s < slot_count(); ++s) seq.push_back(s);
  return seq;
}

std::vector<int> PolicyShape::vocab_sizes(Mode mode) const {
  std::vector<int> out;
  for (int s : slot_sequence(mode)) out.push_back(slot_vocab(s));
  return out;
}

PolicyParams PolicyParams::zeros(const PolicyShape& shape) {
  if (shape.context_dim < 1 || shape.hidden < 1 || shape.level_sizes.empty() || shape.conflict_vocab < 1)
    throw ConfigError("policy shape needs context_dim, hidden, conflict_vocab >= 1 and at least one level");
  for (int v : shape.level_sizes)
    if (v < 1) throw ConfigError("policy level vocabularies must be >= 1");
  PolicyParams p;
  p.shape = shape;
  p.context_weights = Eigen::MatrixXd::Zero(shape.hidden, shape.context_dim);
  p.context_bias = Vector::Zero(shape.hidden);
  for (int s = 0; s < shape.slot_count(); ++s) {
    int v = shape.slot_vocab(s);
    p.slots.push_back({Eigen::MatrixXd::Zero(v, shape.hidden), Vector::Zero(v), Eigen::MatrixXd::Zero(v, shape.hidden)});
  }
  return p;
}

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  visit_blocks([&](const double*, std::size_t k) { n += k; });
  return n;
}

std::vector<double> PolicyParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  visit_blocks([&](const double* p, std::size_t k) { out.insert(out.end(), p, p + k); });
  return out;
}

void PolicyParams::assign_flat(std::span<const double> values) {
  if (values.size() != parameter_count()) throw InputError("flat parameter vector has the wrong length");
  std::size_t off = 0;
  visit_blocks([&](double* p, std::size_t k) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), k, p);
    off += k;
  });
}

void PolicyParams::add_scaled(const PolicyParams& other, double alpha) {
  if (!(shape == other.shape)) throw InputError("parameter shapes differ");
  context_weights += alpha * other.context_weights;
  context_bias += alpha * other.context_bias;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    slots[s].weight += alpha * other.slots[s].weight;
    slots[s].bias += alpha * other.slots[s].bias;
    slots[s].embed += alpha * other.slots[s].embed;
  }
}

bool PolicyParams::all_finite() const {
  bool ok = true;
  visit_blocks([&](const double* p, std::size_t k) {
    for (std::size_t i = 0; i < k && ok; ++i) ok = std::isfinite(p[i]);
  });
  return ok;
}

PolicyParams init_params(const PolicyShape& shape, std::uint64_t seed) {
  PolicyParams p = PolicyParams::zeros(shape);
  Rng rng(derive_seed(seed, 0x9071c7));
  p.visit_blocks([&](double* v, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) v[i] = -0.01 + 0.02 * uniform01(rng);
  });
  return p;
}

void snap_to_float32(PolicyParams& params) {
  params.visit_blocks([](double* v, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) v[i] = static_cast<double>(static_cast<float>(v[i]));
  });
}

Vector transformed_log_probs(const Vector& logits, const SamplingTransform& transform) {
  const Eigen::Index n = logits.size();
  Vector out = Vector::Constant(n, kNegInf);
  if (transform.temperature < kArgmaxTemperature) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < n; ++i)
      if (logits[i] > logits[best]) best = i;
    out[best] = 0.0;
    return out;
  }
  Vector scaled = logits / transform.temperature;
  double m = scaled.maxCoeff();
  double lse = m + std::log((scaled.array() - m).exp().sum());
  Vector logp = scaled.array() - lse;
  if (transform.top_p >= 1.0) return logp;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return logp[a] > logp[b]; });
  double cum = 0.0;
  std::size_t kept = 0;
  while (kept < order.size()) {
    cum += std::exp(logp[order[kept]]);
    ++kept;
    if (cum >= transform.top_p - 1e-12) break;
  }
  while (kept < order.size() && logp[order[kept]] == logp[order[kept - 1]]) {
    cum += std::exp(logp[order[kept]]);
    ++kept;
  }
  double log_mass = std::log(cum);
  for (std::size_t i = 0; i < kept; ++i) out[order[i]] = logp[order[i]] - log_mass;
  return out;
}

namespace {

void check_tokens(const PolicyShape& shape, Mode mode, std::span<const int> tokens) {
  auto vocab = shape.vocab_sizes(mode);
  if (tokens.size() != vocab.size())
    throw InputError(fmt::format("{} sequence needs {} tokens, got {}", to_string(mode), vocab.size(), tokens.size()));
  for (std::size_t t = 0; t < tokens.size(); ++t)
    if (tokens[t] < 0 || tokens[t] >= vocab[t])
      throw InputError(fmt::format("token {} at position {} outside vocabulary [0, {})", tokens[t], t, vocab[t]));
}

void check_context(const PolicyShape& shape, const Vector& context) {
  if (context.size() != shape.context_dim)
    throw InputError(fmt::format("context has dim {}, policy expects {}", context.size(), shape.context_dim));
}

// Hidden state at every position of a teacher-forced sequence.
std::vector<Vector> forward_states(const PolicyParams& p, const Vector& context, Mode mode, std::span<const int> tokens) {
  auto seq = p.shape.slot_sequence(mode);
  std::vector<Vector> states;
  states.reserve(seq.size());
  Vector state = p.context_weights * context + p.context_bias;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    states.push_back(state);
    if (t < tokens.size()) state += p.slots[static_cast<std::size_t>(seq[t])].embed.row(tokens[t]).transpose();
  }
  return states;
}

}  // namespace

Vector LinearPolicy::logits(const Vector& context, Mode mode, std::span<const int> prefix) const {
  const auto& p = *params_;
  check_context(p.shape, context);
  auto seq = p.shape.slot_sequence(mode);
  if (prefix.size() >= seq.size()) throw InputError("prefix already covers every emission slot");
  Vector state = p.context_weights * context + p.context_bias;
  for (std::size_t t = 0; t < prefix.size(); ++t) state += p.slots[static_cast<std::size_t>(seq[t])].embed.row(prefix[t]).transpose();
  const auto& slot = p.slots[static_cast<std::size_t>(seq[prefix.size()])];
  return slot.weight * state + slot.bias;
}

LogProb log_prob(const PolicyParams& params, const Vector& context, Mode mode, std::span<const int> tokens,
                 const SamplingTransform& transform) {
  check_context(params.shape, context);
  check_tokens(params.shape, mode, tokens);
  auto seq = params.shape.slot_sequence(mode);
  auto states = forward_states(params, context, mode, tokens);
  LogProb out;
  out.per_token.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto& slot = params.slots[static_cast<std::size_t>(seq[t])];
    Vector lp = transformed_log_probs(slot.weight * states[t] + slot.bias, transform);
    out.per_token.push_back(lp[tokens[t]]);
    out.total += lp[tokens[t]];
  }
  return out;
}

void accumulate_log_prob_grad(const PolicyParams& params, const Vector& context, Mode mode,
                              std::span<const int> tokens, const SamplingTransform& transform,
                              std::span<const double> weights, PolicyParams& grad) {
  check_context(params.shape, context);
  check_tokens(params.shape, mode, tokens);
  if (weights.size() != tokens.size()) throw InputError("one weight per token required");
  if (transform.temperature < kArgmaxTemperature) return;  // argmax: piecewise constant
  auto seq = params.shape.slot_sequence(mode);
  auto states = forward_states(params, context, mode, tokens);
  std::vector<Vector> dstate(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto s = static_cast<std::size_t>(seq[t]);
    const auto& slot = params.slots[s];
    dstate[t] = Vector::Zero(params.shape.hidden);
    if (weights[t] == 0.0) continue;
    Vector lp = transformed_log_probs(slot.weight * states[t] + slot.bias, transform);
    if (!std::isfinite(lp[tokens[t]])) continue;
    // d log q_y / d logits = (onehot(y) - q) / T, q zero outside the nucleus.
    Vector g = -lp.array().exp();
    g[tokens[t]] += 1.0;
    g *= weights[t] / transform.temperature;
    grad.slots[s].weight.noalias() += g * states[t].transpose();
    grad.slots[s].bias += g;
    dstate[t] = slot.weight.transpose() * g;
  }
  Vector carry = Vector::Zero(params.shape.hidden);
  for (std::size_t t = tokens.size(); t-- > 0;) {
    grad.slots[static_cast<std::size_t>(seq[t])].embed.row(tokens[t]) += carry.transpose();
    carry += dstate[t];
  }
  grad.context_weights.noalias() += carry * context.transpose();
  grad.context_bias += carry;
}

double sft_loss(const PolicyParams& params, std::span<const SftExample> batch) {
  if (batch.empty()) throw InputError("SFT batch must be nonempty");
  double total = 0.0;
  for (const auto& ex : batch) total -= log_prob(params, ex.context, ex.mode, ex.tokens).total;
  return total / static_cast<double>(batch.size());
}

LossAndGrad sft_loss_and_grad(const PolicyParams& params, std::span<const SftExample> batch) {
  if (batch.empty()) throw InputError("SFT batch must be nonempty");
  LossAndGrad out{0.0, PolicyParams::zeros(params.shape)};
  const double w = -1.0 / static_cast<double>(batch.size());
  std::vector<double> weights;
  for (const auto& ex : batch) {
    out.loss -= log_prob(params, ex.context, ex.mode, ex.tokens).total;
    weights.assign(ex.tokens.size(), w);
    accumulate_log_prob_grad(params, ex.context, ex.mode, ex.tokens, {}, weights, out.grad);
  }
  out.loss /= static_cast<double>(batch.size());
  return out;
}

double sft_step(PolicyParams& params, std::span<const SftExample> batch, double learning_rate) {
  auto lg = sft_loss_and_grad(params, batch);
  if (!std::isfinite(lg.loss) || !lg.grad.all_finite())
    throw TrainingError(fmt::format("non-finite SFT loss or gradient (loss = {}, batch size {}, params version {})",
                                    lg.loss, batch.size(), params.version));
  if (learning_rate != 0.0) {
    params.add_scaled(lg.grad, -learning_rate);
    ++params.version;
  }
  return lg.loss;
}

Sample sample_sequence(const TokenPolicy& policy, const Vector& context, const GenerationConfig& cfg, Rng& rng) {
  const auto transform = cfg.transform();
  const std::size_t len = policy.vocab_sizes(cfg.mode).size();
  Sample out;
  out.tokens.reserve(len);
  out.logps.reserve(len);
  for (std::size_t t = 0; t < len; ++t) {
    Vector lp = transformed_log_probs(policy.logits(context, cfg.mode, out.tokens), transform);
    double u = uniform01(rng);
    double cum = 0.0;
    Eigen::Index pick = -1;
    for (Eigen::Index v = 0; v < lp.size(); ++v) {
      if (!std::isfinite(lp[v])) continue;
      pick = v;
      cum += std::exp(lp[v]);
      if (u < cum) break;
    }
    out.tokens.push_back(static_cast<int>(pick));
    out.logps.push_back(lp[pick]);
  }
  return out;
}

ItemIndex answer_of(const TokenPolicy& policy, Mode mode, std::span<const int> tokens) {
  auto off = static_cast<std::size_t>(policy.answer_offset(mode));
  if (tokens.size() <= off) throw InputError("sequence too short to contain an answer");
  return ItemIndex::from_tokens(std::vector<int>(tokens.begin() + static_cast<std::ptrdiff_t>(off), tokens.end()));
}

advantage::RolloutGroup sample_group(const TokenPolicy& policy, const Vector& context, std::size_t G,
                                     const GenerationConfig& cfg, std::uint64_t seed) {
  if (G < 1) throw InputError("sample_group needs G >= 1");
  advantage::RolloutGroup group;
  group.context = context;
  group.samples.resize(G);
  for (std::size_t i = 0; i < G; ++i) {
    Rng rng = make_rng(seed, i);
    Sample s = sample_sequence(policy, context, cfg, rng);
    auto& out = group.samples[i];
    out.generated = answer_of(policy, cfg.mode, s.tokens);
    out.tokens = std::move(s.tokens);
    out.old_logps = std::move(s.logps);
  }
  return group;
}

void score_group(advantage::RolloutGroup& group, const ItemIndex& target, const reward::RewardConfig& cfg) {
  group.target = target;
  for (auto& s : group.samples) {
    s.prefix_len = reward::lcp(target, s.generated);
    s.reward_rs = reward::residual_reward(s.prefix_len, cfg);
    s.exact = reward::exact_match(target, s.generated, cfg);
  }
}

std::vector<ScoredIndex> beam_search(const TokenPolicy& policy, const Vector& context, std::size_t beam_width,
                                     std::size_t K, Mode mode) {
  if (beam_width < 1 || K < 1 || beam_width < K)
    throw InputError(fmt::format("beam search needs beam_width >= K >= 1 (beam_width {}, K {})", beam_width, K));
  struct Hyp {
    std::vector<int> tokens;
    double score;
  };
  auto better = [](const Hyp& a, const Hyp& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  };
  const auto vocab = policy.vocab_sizes(mode);
  std::vector<Hyp> beams{{{}, 0.0}};
  for (std::size_t t = 0; t < vocab.size(); ++t) {
    std::vector<Hyp> cand;
    cand.reserve(beams.size() * static_cast<std::size_t>(vocab[t]));
    for (const auto& h : beams) {
      Vector lp = transformed_log_probs(policy.logits(context, mode, h.tokens), {});
      for (int v = 0; v < vocab[t]; ++v) {
        Hyp next{h.tokens, h.score + lp[v]};
        next.tokens.push_back(v);
        cand.push_back(std::move(next));
      }
    }
    std::size_t keep = std::min(beam_width, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), better);
    cand.resize(keep);
    beams = std::move(cand);
  }
  std::vector<ScoredIndex> out;
  for (const auto& h : beams) {
    ItemIndex ans = answer_of(policy, mode, h.tokens);
    bool dup = std::any_of(out.begin(), out.end(), [&](const ScoredIndex& s) { return s.index == ans; });
    if (dup) continue;
    out.push_back({std::move(ans), h.score});
    if (out.size() == K) break;
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto& sh = params.shape;
  detail::put_magic(out, "GRPM");
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(sh.context_dim));
  detail::put_u32(out, static_cast<std::uint32_t>(sh.hidden));
  detail::put_u32(out, static_cast<std::uint32_t>(sh.levels()));
  for (int v : sh.level_sizes) detail::put_u32(out, static_cast<std::uint32_t>(v));
  detail::put_u32(out, static_cast<std::uint32_t>(sh.conflict_vocab));
  detail::put_u64(out, params.version);
  params.visit_blocks([&](const double* p, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) detail::put_f32(out, static_cast<float>(p[i]));
  });
  if (!out) throw IoError("write failed: " + path.string());
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string what = "checkpoint " + path.string();
  detail::expect_magic(in, "GRPM", what);
  std::uint32_t version = detail::get_u32(in, what);
  if (version != kCheckpointVersion) throw IoError(fmt::format("{}: unsupported version {}", what, version));
  PolicyShape sh;
  sh.context_dim = static_cast<int>(detail::get_u32(in, what));
  sh.hidden = static_cast<int>(detail::get_u32(in, what));
  std::uint32_t levels = detail::get_u32(in, what);
  if (levels == 0 || levels > 64) throw IoError(what + ": implausible level count");
  for (std::uint32_t l = 0; l < levels; ++l) sh.level_sizes.push_back(static_cast<int>(detail::get_u32(in, what)));
  sh.conflict_vocab = static_cast<int>(detail::get_u32(in, what));
  PolicyParams p = PolicyParams::zeros(sh);
  p.version = detail::get_u64(in, what);
  p.visit_blocks([&](double* v, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) v[i] = static_cast<double>(detail::get_f32(in, what));
  });
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(what + ": trailing bytes");
  return p;
}

}  // namespace gream::policy
