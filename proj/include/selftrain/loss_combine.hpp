// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>

namespace selftrain {

/// Running means of the human-label and pseudo-label losses. Each average
/// starts at its first observation; no bias correction.
struct EmaPair {
  std::optional<double> human;
  std::optional<double> pseudo;
  double decay = 0.9997;

  bool initialized() const noexcept { return human && pseudo; }
};

namespace detail {

inline void check_loss(double l, const char *which) {
  if (!std::isfinite(l) || l < 0.0)
    throw std::domain_error(std::string(which) +
                            " loss must be finite and non-negative, got " +
                            std::to_string(l));
}

inline double ema_step(const std::optional<double> &ema, double decay,
                       double l) {
  return ema ? decay * *ema + (1.0 - decay) * l : l;
}

} // namespace detail

inline EmaPair ema_update(EmaPair pair, double l_human, double l_pseudo) {
  if (!(pair.decay > 0.0 && pair.decay < 1.0))
    throw std::domain_error("EMA decay must lie in (0, 1)");
  detail::check_loss(l_human, "human");
  detail::check_loss(l_pseudo, "pseudo");
  pair.human = detail::ema_step(pair.human, pair.decay, l_human);
  pair.pseudo = detail::ema_step(pair.pseudo, pair.decay, l_pseudo);
  return pair;
}

inline double combine_standard(double l_human, double l_pseudo, double alpha) {
  return l_human + alpha * l_pseudo;
}

/// Ratio human/pseudo of the running means, treated as a constant by the
/// trainer (never differentiated).
inline double normalization_ratio(const EmaPair &pair) {
  if (!pair.initialized())
    throw std::logic_error("loss normalization needs initialized EMAs");
  if (!(*pair.pseudo > 0.0))
    throw std::domain_error("pseudo-loss EMA must be positive");
  return *pair.human / *pair.pseudo;
}

/// (l_h + alpha * (ema_h / ema_p) * l_p) / (1 + alpha)
inline double combine_normalized(double l_human, double l_pseudo, double alpha,
                                 const EmaPair &pair) {
  const double ratio = normalization_ratio(pair);
  return (l_human + alpha * ratio * l_pseudo) / (1.0 + alpha);
}

inline double combine_joint(double l_target, double l_aux, double weight) {
  return l_target + weight * l_aux;
}

struct Standard {
  double alpha = 1.0;
};
struct Normalized {
  double alpha = 1.0;
};
struct Joint {
  double weight = 0.2;
};
struct NormalizedJoint {
  double alpha = 1.0;
  double weight = 0.2;
};

using CombineMode = std::variant<Standard, Normalized, Joint, NormalizedJoint>;

/// Linear coefficients on the three batch losses; the combined loss is
/// human*l_h + pseudo*l_p + aux*l_aux.
struct LossCoefficients {
  double human = 1.0;
  double pseudo = 0.0;
  double aux = 0.0;
};

inline void validate(const CombineMode &mode) {
  std::visit(
      [](const auto &m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (!std::is_same_v<M, Joint>)
          if (!(m.alpha >= 0.0) || !std::isfinite(m.alpha))
            throw std::invalid_argument("alpha must be finite and >= 0");
        if constexpr (std::is_same_v<M, Joint> ||
                      std::is_same_v<M, NormalizedJoint>)
          if (!(m.weight >= 0.0) || !std::isfinite(m.weight))
            throw std::invalid_argument("joint weight must be finite and >= 0");
      },
      mode);
}

inline bool uses_pseudo(const CombineMode &mode) {
  return !std::holds_alternative<Joint>(mode);
}
inline bool uses_aux(const CombineMode &mode) {
  return std::holds_alternative<Joint>(mode) ||
         std::holds_alternative<NormalizedJoint>(mode);
}

/// `pair` must already include this step's losses for normalized modes.
inline LossCoefficients coefficients(const CombineMode &mode,
                                     const EmaPair &pair) {
  return std::visit(
      [&](const auto &m) -> LossCoefficients {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, Standard>) {
          return {1.0, m.alpha, 0.0};
        } else if constexpr (std::is_same_v<M, Normalized>) {
          const double r = normalization_ratio(pair);
          return {1.0 / (1.0 + m.alpha), m.alpha * r / (1.0 + m.alpha), 0.0};
        } else if constexpr (std::is_same_v<M, Joint>) {
          return {1.0, 0.0, m.weight};
        } else {
          const double r = normalization_ratio(pair);
          return {1.0 / (1.0 + m.alpha), m.alpha * r / (1.0 + m.alpha),
                  m.weight};
        }
      },
      mode);
}

/// Scalar value of the combined loss; matches what coefficients() weights.
inline double combine(const CombineMode &mode, const EmaPair &pair,
                      double l_human, double l_pseudo, double l_aux = 0.0) {
  return std::visit(
      [&](const auto &m) -> double {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, Standard>)
          return combine_standard(l_human, l_pseudo, m.alpha);
        else if constexpr (std::is_same_v<M, Normalized>)
          return combine_normalized(l_human, l_pseudo, m.alpha, pair);
        else if constexpr (std::is_same_v<M, Joint>)
          return combine_joint(l_human, l_aux, m.weight);
        else
          return combine_joint(
              combine_normalized(l_human, l_pseudo, m.alpha, pair), l_aux,
              m.weight);
      },
      mode);
}

} // namespace selftrain
