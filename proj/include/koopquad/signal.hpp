// Seeded excitation signals for the experiments.

#pragma once

#include "koopquad/linalg.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

namespace koopquad {

/// u~_j(t) = amplitude * gamma_j(t) * sin(frequency * t), where gamma_j is
/// drawn from U[gamma_min, gamma_max] and held for `hold` seconds.
struct SineGammaSpec {
  double amplitude = 0.001;
  double frequency = 0.1;  // rad/s
  double gamma_min = -5.0;
  double gamma_max = 5.0;
  double hold = 1e-3;      // s
  bool channel4 = true;    // drive u~_4 as well

  void validate() const {
    if (!(hold > 0.0)) throw DomainError("signal: hold interval must be positive");
    if (!(gamma_max >= gamma_min)) throw DomainError("signal: empty gamma range");
  }
};

/// Immutable, precomputed realisation of a SineGammaSpec on [0, t_final].
/// Copies share the sample table, so the functor is cheap to pass around.
class SineGammaSignal {
 public:
  SineGammaSignal(const SineGammaSpec& spec, double t_final, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    const auto n = static_cast<std::size_t>(std::ceil(t_final / spec_.hold + 1e-9)) + 1;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(spec_.gamma_min, spec_.gamma_max);
    auto table = std::make_shared<std::vector<Vec4>>(n);
    for (auto& g : *table) {
      for (int j = 0; j < 4; ++j) g(j) = dist(rng);
    }
    gamma_ = std::move(table);
  }

  [[nodiscard]] Vec4 operator()(double t) const {
    auto idx = static_cast<std::size_t>(std::floor(t / spec_.hold + 1e-9));
    idx = std::min(idx, gamma_->size() - 1);
    Vec4 u = spec_.amplitude * std::sin(spec_.frequency * t) * (*gamma_)[idx];
    if (!spec_.channel4) u(3) = 0.0;
    return u;
  }

 private:
  SineGammaSpec spec_;
  std::shared_ptr<const std::vector<Vec4>> gamma_;
};

}  // namespace koopquad
