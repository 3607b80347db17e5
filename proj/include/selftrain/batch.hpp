// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "selftrain/random.hpp"

namespace selftrain {

/// Walks a fresh permutation of [0, n) each epoch.
class EpochSampler {
public:
  EpochSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) {}

  std::size_t next() {
    if (n_ == 0)
      throw std::logic_error("sampling from an empty source");
    if (pos_ == order_.size()) {
      order_ = rng_.permutation(n_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

  std::size_t size() const noexcept { return n_; }

private:
  std::size_t n_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Indices into the human and pseudo sources for one batch.
struct MixedBatch {
  std::vector<std::size_t> human;
  std::vector<std::size_t> pseudo;
  /// One source was empty; the batch was filled from the other.
  bool degraded = false;
};

/// Half human, half pseudo per batch. Each source is drawn epoch by epoch
/// from its own stream.
class BatchMixer {
public:
  BatchMixer(std::size_t human_count, std::size_t pseudo_count,
             std::uint64_t seed)
      : human_(human_count, derive_seed(seed, 0x68)),
        pseudo_(pseudo_count, derive_seed(seed, 0x70)) {
    if (human_count == 0 && pseudo_count == 0)
      throw std::invalid_argument("batch mixer needs a non-empty source");
  }

  MixedBatch next(std::size_t batch_size) {
    if (batch_size == 0 || batch_size % 2 != 0)
      throw std::invalid_argument("batch size must be even and positive, got " +
                                  std::to_string(batch_size));
    MixedBatch b;
    const bool has_h = human_.size() > 0, has_p = pseudo_.size() > 0;
    b.degraded = !(has_h && has_p);
    const std::size_t nh = has_p ? (has_h ? batch_size / 2 : 0) : batch_size;
    for (std::size_t i = 0; i < nh; ++i)
      b.human.push_back(human_.next());
    for (std::size_t i = nh; i < batch_size; ++i)
      b.pseudo.push_back(pseudo_.next());
    return b;
  }

private:
  EpochSampler human_;
  EpochSampler pseudo_;
};

inline MixedBatch mix_batch(BatchMixer &mixer, std::size_t batch_size) {
  return mixer.next(batch_size);
}

} // namespace selftrain
