#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "fasmap/error.hpp"
#include "fasmap/rng.hpp"
#include "fasmap/tensor.hpp"

namespace fasmap {

/// Sparse, possibly noisy measurements of a radio-map tensor.
struct ObservationSet {
  std::vector<Index3> omega;  // sorted in storage order
  Tensor3 y;                  // measured values on omega, zero elsewhere
  Tensor3 mask;               // 1 on omega, 0 elsewhere
  double noise_sigma_db = 0.0;
  double sampling_ratio = 0.0;
  std::uint64_t seed = 0;

  const Dims& dims() const { return y.dims(); }
  bool observed(std::size_t i, std::size_t j, std::size_t m) const { return mask(i, j, m) != 0.0; }
};

/// Elementwise product with the 0/1 mask.
inline Tensor3 project_omega(const Tensor3& x, const Tensor3& mask) {
  x.require_same(mask);
  Tensor3 out(x.dims());
  out.flat() = x.flat().cwiseProduct(mask.flat());
  return out;
}

/// Observation set built from explicit indices and values.
inline ObservationSet make_observations(const Dims& dims, std::vector<Index3> omega,
                                        const std::vector<double>& values) {
  if (omega.size() != values.size()) throw DimensionError("index and value counts differ");
  ObservationSet obs;
  obs.y = Tensor3(dims);
  obs.mask = Tensor3(dims);
  for (std::size_t n = 0; n < omega.size(); ++n) {
    const auto& [i, j, m] = omega[n];
    if (i >= dims.rows || j >= dims.cols || m >= dims.modes)
      throw DimensionError("observation index outside tensor " + dims.str());
    if (obs.mask(i, j, m) != 0.0) throw DimensionError("duplicate observation index");
    obs.mask(i, j, m) = 1.0;
    obs.y(i, j, m) = values[n];
  }
  std::sort(omega.begin(), omega.end(), [&](const Index3& a, const Index3& b) {
    return obs.y.offset(a.i, a.j, a.m) < obs.y.offset(b.i, b.j, b.m);
  });
  obs.omega = std::move(omega);
  obs.sampling_ratio = static_cast<double>(obs.omega.size()) / static_cast<double>(dims.size());
  return obs;
}

/// Draws |omega| = round(ratio * eligible) entries uniformly without
/// replacement and adds N(0, noise_sigma^2) to each measured value.
/// `eligible`, if non-empty, is a 0/1 tensor of entries that may be sampled.
inline ObservationSet sample_observations(const Tensor3& truth, double ratio, double noise_sigma_db,
                                          std::uint64_t seed, const Tensor3* eligible = nullptr) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("sampling ratio must lie in (0, 1]");
  if (noise_sigma_db < 0.0) throw ConfigError("noise sigma must be >= 0");
  if (eligible != nullptr) truth.require_same(*eligible);
  std::vector<std::size_t> pool;
  pool.reserve(truth.size());
  for (std::size_t f = 0; f < truth.size(); ++f)
    if (eligible == nullptr || (*eligible)[f] != 0.0) pool.push_back(f);

  const auto count =
      static_cast<std::size_t>(std::llround(ratio * static_cast<double>(pool.size())));
  if (count == 0) throw ConfigError("sampling ratio yields zero observations");

  // Partial Fisher-Yates: the first `count` slots form the sample.
  Rng rng(derive_seed(seed, stream::kSampling));
  for (std::size_t n = 0; n < count; ++n) {
    std::uniform_int_distribution<std::size_t> pick(n, pool.size() - 1);
    std::swap(pool[n], pool[pick(rng)]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());

  Rng noise_rng(derive_seed(seed, stream::kNoise));
  std::normal_distribution<double> noise(0.0, noise_sigma_db > 0.0 ? noise_sigma_db : 1.0);

  const Dims& d = truth.dims();
  ObservationSet obs;
  obs.y = Tensor3(d);
  obs.mask = Tensor3(d);
  obs.omega.reserve(count);
  for (std::size_t f : pool) {
    const std::size_t m = f % d.modes;
    const std::size_t j = (f / d.modes) % d.cols;
    const std::size_t i = f / (d.modes * d.cols);
    obs.omega.push_back({i, j, m});
    obs.mask[f] = 1.0;
    obs.y[f] = truth[f] + (noise_sigma_db > 0.0 ? noise(noise_rng) : 0.0);
  }
  obs.noise_sigma_db = noise_sigma_db;
  obs.sampling_ratio = ratio;
  obs.seed = seed;
  return obs;
}

}  // namespace fasmap
