#include "gream/curriculum.hpp"

#include "gream/error.hpp"
#include "gream/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace gream::curriculum {

std::string to_string(const BatchTag& tag) {
  return (tag.kind == BatchTag::Kind::kAlign ? "align:" : "reason:") + std::to_string(tag.index);
}

std::size_t Schedule::insertions(std::size_t epoch) const {
  const auto& flags = inserted_after.at(epoch);
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
}

double insert_probability(std::size_t i, std::size_t n_align, std::size_t n_reason, double gamma) {
  if (n_align == 0) return 0.0;
  const double a = static_cast<double>(n_align);
  return std::min(1.0, gamma * (static_cast<double>(i) / a) * (static_cast<double>(n_reason) / a));
}

namespace {

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

}  // namespace

Schedule build_schedule(std::size_t n_align, std::size_t n_reason, double gamma, std::size_t epochs, std::uint64_t seed) {
  if (epochs < 1) throw ConfigError("curriculum epochs must be >= 1");
  if (!(gamma >= 0.0)) throw ConfigError("curriculum gamma must be >= 0");
  Schedule s;
  s.gamma = gamma;
  s.n_align = n_align;
  s.n_reason = n_reason;
  s.seed = seed;
  using Kind = BatchTag::Kind;
  for (std::size_t e = 0; e < epochs; ++e) {
    Rng rng = make_rng(seed, e);
    std::vector<std::size_t> order(n_reason);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    std::vector<BatchTag> tags;
    tags.reserve(n_align + n_reason);
    std::size_t next = 0;
    if (e + 1 < epochs) {
      std::vector<bool> flags(n_align, false);
      for (std::size_t i = 1; i <= n_align; ++i) {
        tags.push_back({Kind::kAlign, i - 1});
        double u = uniform01(rng);
        if (next < n_reason && u < insert_probability(i, n_align, n_reason, gamma)) {
          tags.push_back({Kind::kReason, order[next++]});
          flags[i - 1] = true;
        }
      }
      while (next < n_reason) tags.push_back({Kind::kReason, order[next++]});
      s.inserted_after.push_back(std::move(flags));
    } else {
      std::vector<Kind> kinds(n_align, Kind::kAlign);
      kinds.insert(kinds.end(), n_reason, Kind::kReason);
      shuffle(kinds, rng);
      std::size_t next_align = 0;
      for (Kind k : kinds) tags.push_back(k == Kind::kAlign ? BatchTag{k, next_align++} : BatchTag{k, order[next++]});
      s.inserted_after.emplace_back();
    }
    s.epochs.push_back(std::move(tags));
  }
  return s;
}

double expected_insertions(std::size_t n_align, std::size_t n_reason, double gamma) {
  if (n_align == 0) return 0.0;
  const double slope = gamma * static_cast<double>(n_reason) / (static_cast<double>(n_align) * static_cast<double>(n_align));
  if (slope <= 0.0) return 0.0;
  // Terms i <= 1/slope lie on the linear part; the rest are capped at 1.
  auto ramp = static_cast<std::size_t>(std::min(static_cast<double>(n_align), std::floor(1.0 / slope)));
  const double r = static_cast<double>(ramp);
  return slope * r * (r + 1.0) / 2.0 + static_cast<double>(n_align - ramp);
}

void write_schedule_json(const std::filesystem::path& path, const Schedule& schedule) {
  nlohmann::json j;
  j["gamma"] = schedule.gamma;
  j["n_align"] = schedule.n_align;
  j["n_reason"] = schedule.n_reason;
  j["seed"] = schedule.seed;
  j["epochs"] = nlohmann::json::array();
  for (const auto& ep : schedule.epochs) {
    std::vector<std::string> tags;
    for (const auto& t : ep) tags.push_back(to_string(t));
    j["epochs"].push_back(tags);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(1) << '\n';
}

}  // namespace gream::curriculum
