#include "stochpersist/stats.hpp"

namespace stochpersist {

RateEstimate pool(std::span<const RateEstimate> parts) {
  RateEstimate out;
  if (parts.empty()) return out;
  double sum = 0.0, var = 0.0;
  out.batches = 0;
  for (const auto& p : parts) {
    sum += p.mean;
    var += p.std_error * p.std_error;
    out.batches += p.batches;
    out.n += p.n;
  }
  const auto r = static_cast<double>(parts.size());
  out.mean = sum / r;
  out.std_error = std::sqrt(var) / r;
  return out;
}

RateEstimate proportion(long hits, long trials) {
  RateEstimate out;
  out.n = trials;
  out.batches = trials;
  if (trials <= 0) return out;
  out.mean = static_cast<double>(hits) / static_cast<double>(trials);
  out.std_error = std::sqrt(out.mean * (1.0 - out.mean) / static_cast<double>(trials));
  return out;
}

}  // namespace stochpersist
