#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gream::curriculum {

struct BatchTag {
  enum class Kind { kAlign, kReason };
  Kind kind = Kind::kAlign;
  std::size_t index = 0;

  friend bool operator==(const BatchTag&, const BatchTag&) = default;
};

std::string to_string(const BatchTag& tag);

struct Schedule {
  std::vector<std::vector<BatchTag>> epochs;
  // For ramp epochs: whether a reason batch followed align batch i (appended
  // leftovers are not counted). Empty for the final uniform epoch.
  std::vector<std::vector<bool>> inserted_after;
  double gamma = 1.5;
  std::size_t n_align = 0;
  std::size_t n_reason = 0;
  std::uint64_t seed = 0;

  std::size_t insertions(std::size_t epoch) const;
};

/// min(1, gamma * (i / N_align) * (N_reason / N_align)) for the 1-based align step i.
double insert_probability(std::size_t i, std::size_t n_align, std::size_t n_reason, double gamma);

/// Ramp epochs 1..E-1 insert a reason batch after align batch i with
/// insert_probability(i) and append leftovers; epoch E interleaves both pools
/// uniformly at random. Reason batches follow a per-epoch seeded shuffle.
Schedule build_schedule(std::size_t n_align, std::size_t n_reason, double gamma, std::size_t epochs, std::uint64_t seed);

/// Sum over i of insert_probability(i), in closed form.
double expected_insertions(std::size_t n_align, std::size_t n_reason, double gamma);

void write_schedule_json(const std::filesystem::path& path, const Schedule& schedule);

}  // namespace gream::curriculum
