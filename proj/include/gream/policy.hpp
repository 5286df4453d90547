#pragma once

#include "gream/advantage.hpp"
#include "gream/random.hpp"
#include "gream/reward.hpp"
#include "gream/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gream::policy {

/// direct: emit the (H+1)-code answer. reasoning: emit the coarse think codes
/// (levels 1 and 2) first, then the answer.
enum class Mode { kDirect, kReasoning };

const char* to_string(Mode mode);
Mode mode_from_string(const std::string& name);

struct PolicyShape {
  int context_dim = 0;
  int hidden = 0;
  std::vector<int> level_sizes;  // semantic vocabularies, one per level
  int conflict_vocab = 1;

  int levels() const { return static_cast<int>(level_sizes.size()); }
  int think_levels() const { return std::min(2, levels()); }
  int slot_count() const { return think_levels() + levels() + 1; }
  int slot_vocab(int slot) const;
  /// Slot ids emitted in order for `mode`.
  std::vector<int> slot_sequence(Mode mode) const;
  std::vector<int> vocab_sizes(Mode mode) const;
  /// Number of leading tokens that precede the answer.
  int answer_offset(Mode mode) const { return mode == Mode::kReasoning ? think_levels() : 0; }

  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;
};

/// Logit table for one emission slot.
struct SlotTable {
  Eigen::MatrixXd weight;  // vocab x hidden
  Vector bias;             // vocab
  Eigen::MatrixXd embed;   // vocab x hidden, added to later positions' state
};

/// Linear context encoder plus per-slot logit tables with additive embeddings
/// of previously emitted codes:
///   state_t = W x + b + sum_{s<t} embed_{slot(s)}[y_s]
///   logits_t = weight_{slot(t)} state_t + bias_{slot(t)}
struct PolicyParams {
  PolicyShape shape;
  Eigen::MatrixXd context_weights;  // hidden x context_dim
  Vector context_bias;              // hidden
  std::vector<SlotTable> slots;
  std::uint64_t version = 0;

  static PolicyParams zeros(const PolicyShape& shape);

  template <class F>
  void visit_blocks(F&& f) {
    f(context_weights.data(), static_cast<std::size_t>(context_weights.size()));
    f(context_bias.data(), static_cast<std::size_t>(context_bias.size()));
    for (auto& s : slots) {
      f(s.weight.data(), static_cast<std::size_t>(s.weight.size()));
      f(s.bias.data(), static_cast<std::size_t>(s.bias.size()));
      f(s.embed.data(), static_cast<std::size_t>(s.embed.size()));
    }
  }
  template <class F>
  void visit_blocks(F&& f) const {
    const_cast<PolicyParams*>(this)->visit_blocks([&](double* p, std::size_t n) { f(static_cast<const double*>(p), n); });
  }

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> values);
  /// this += alpha * other (shapes must match).
  void add_scaled(const PolicyParams& other, double alpha);
  bool all_finite() const;
};

/// Uniform in [-0.01, 0.01] from the seed stream.
PolicyParams init_params(const PolicyShape& shape, std::uint64_t seed);

/// Rounds every parameter to float32 precision (checkpoint precision).
void snap_to_float32(PolicyParams& params);

/// Temperature scaling followed by nucleus truncation.
struct SamplingTransform {
  double temperature = 1.0;
  double top_p = 1.0;
};

inline constexpr double kArgmaxTemperature = 1e-6;

/// Log-probabilities of the transformed distribution; -inf outside the nucleus.
/// Nucleus: sort descending, keep the smallest prefix reaching top_p mass, plus
/// any token tied with the last one kept; renormalize.
Vector transformed_log_probs(const Vector& logits, const SamplingTransform& transform);

/// Anything that yields next-token logits for a context and an emitted prefix.
class TokenPolicy {
 public:
  virtual ~TokenPolicy() = default;
  virtual std::vector<int> vocab_sizes(Mode mode) const = 0;
  virtual Vector logits(const Vector& context, Mode mode, std::span<const int> prefix) const = 0;
  /// Tokens before the answer segment.
  virtual int answer_offset(Mode mode) const = 0;
};

class LinearPolicy final : public TokenPolicy {
 public:
  explicit LinearPolicy(const PolicyParams& params) : params_(&params) {}
  std::vector<int> vocab_sizes(Mode mode) const override { return params_->shape.vocab_sizes(mode); }
  Vector logits(const Vector& context, Mode mode, std::span<const int> prefix) const override;
  int answer_offset(Mode mode) const override { return params_->shape.answer_offset(mode); }
  const PolicyParams& params() const { return *params_; }

 private:
  const PolicyParams* params_;
};

struct LogProb {
  double total = 0.0;
  std::vector<double> per_token;
};

/// Exact log p(tokens | context) under the (optionally transformed) policy.
/// Throws InputError on out-of-vocabulary tokens or a wrong sequence length.
LogProb log_prob(const PolicyParams& params, const Vector& context, Mode mode, std::span<const int> tokens,
                 const SamplingTransform& transform = {});

/// grad += sum_t weights[t] * d log p_t / d params.
void accumulate_log_prob_grad(const PolicyParams& params, const Vector& context, Mode mode,
                              std::span<const int> tokens, const SamplingTransform& transform,
                              std::span<const double> weights, PolicyParams& grad);

struct SftExample {
  Vector context;
  Mode mode = Mode::kDirect;
  std::vector<int> tokens;
};

struct LossAndGrad {
  double loss = 0.0;
  PolicyParams grad;
};

/// Mean over examples of the summed token negative log-likelihood.
double sft_loss(const PolicyParams& params, std::span<const SftExample> batch);
LossAndGrad sft_loss_and_grad(const PolicyParams& params, std::span<const SftExample> batch);

/// One SGD step on the mean NLL; returns the pre-step loss. Throws
/// TrainingError on a non-finite loss or gradient, leaving params untouched.
double sft_step(PolicyParams& params, std::span<const SftExample> batch, double learning_rate);

struct GenerationConfig {
  double temperature = 0.5;
  double top_p = 1.0;
  std::size_t beam_width = 20;
  Mode mode = Mode::kReasoning;

  SamplingTransform transform() const { return {temperature, top_p}; }
};

struct Sample {
  std::vector<int> tokens;
  std::vector<double> logps;
};

/// One ancestral sample from the transformed distribution.
Sample sample_sequence(const TokenPolicy& policy, const Vector& context, const GenerationConfig& cfg, Rng& rng);

/// Extracts the (H+1)-code answer from an emitted sequence.
ItemIndex answer_of(const TokenPolicy& policy, Mode mode, std::span<const int> tokens);

/// G independent samples, deterministic in `seed`. Rewards are left unset.
advantage::RolloutGroup sample_group(const TokenPolicy& policy, const Vector& context, std::size_t G,
                                     const GenerationConfig& cfg, std::uint64_t seed);

/// Fills prefix length, residual reward, and exact-match flag for each sample.
void score_group(advantage::RolloutGroup& group, const ItemIndex& target, const reward::RewardConfig& cfg);

struct ScoredIndex {
  ItemIndex index;
  double score = 0.0;  // total log-prob of the emitted sequence
};

/// Length-synchronous beam search over raw log-probabilities. Ties break
/// lexicographically on the token tuple; answers are deduplicated.
std::vector<ScoredIndex> beam_search(const TokenPolicy& policy, const Vector& context, std::size_t beam_width,
                                     std::size_t K, Mode mode = Mode::kDirect);

// ---- checkpoint ------------------------------------------------------------

/// "GRPM", u32 version, shape header, u64 params version, float32 blocks.
void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace gream::policy
