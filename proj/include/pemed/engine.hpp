#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "pemed/network.hpp"

namespace pemed {

/// Everything one interaction sequence carries between clicks.
struct SessionState {
  TensorF image;
  std::vector<Click> clicks;
  /// Soft mask in [0,1] fed back as I_prev.
  TensorF prev_mask;
  /// O_{t-1} as full-resolution logits; present iff t >= 1 and TSIP is on.
  std::optional<TensorF> o_prev;
  int t = 0;
  std::optional<TensorF> gt;

  /// Throws STATE_CORRUPT on a violated invariant.
  void check_invariants(bool tsip_enabled) const;
};

/// Reported after every network pass the engine runs.
struct ForwardEvent {
  std::uint64_t ordinal = 0;  ///< 1-based count over the engine's lifetime
  /// O_{t-1} fed to the temporal term, or nullptr when no term was applied.
  const TensorF* o_in = nullptr;
  const TensorF* raw = nullptr;    ///< F(I_input)
  const TensorF* o_out = nullptr;  ///< O_t
};

struct SelfLoopResult {
  TensorF m0;
  TensorF m1;  ///< equals m0 when the self-loop is disabled
  SessionState state;
};

struct RefineResult {
  TensorF mask;
  SessionState state;
};

/// Drives interaction sequences over a shared read-only network. All methods
/// are const and may be called concurrently for different sessions.
class Engine {
 public:
  using Observer = std::function<void(const ForwardEvent&)>;

  explicit Engine(std::shared_ptr<const NetworkF> network, Observer observer = {});

  const ModelConfig& config() const { return network_->config(); }
  const NetworkF& network() const { return *network_; }

  /// t = 0, no clicks, zero previous mask.
  SessionState new_session(TensorF image, std::optional<TensorF> gt = std::nullopt) const;

  /// First interaction. Pass 1 sees an empty previous mask and yields M0; with
  /// the self-loop enabled a second pass with the same click and I_prev = M0
  /// yields M1. The temporal chain starts at pass 1.
  SelfLoopResult self_loop_init(const TensorF& image, const Click& first_click,
                                std::optional<TensorF> gt = std::nullopt) const;

  /// Later interactions: requires state.t >= 1.
  RefineResult refine(const SessionState& state, const Click& click) const;

  /// self_loop_init when state.t == 0, refine otherwise.
  RefineResult add_click(const SessionState& state, const Click& click) const;

  std::uint64_t forward_count() const noexcept { return forward_count_.load(); }

 private:
  /// One network pass plus the temporal term; returns O_t.
  TensorF run_pass(const TensorF& image, const std::vector<Click>& clicks, const TensorF& prev_mask,
                   const std::optional<TensorF>& o_prev) const;

  std::shared_ptr<const NetworkF> network_;
  Observer observer_;
  mutable std::atomic<std::uint64_t> forward_count_{0};
};

/// Elementwise logistic function.
TensorF sigmoid(const TensorF& logits);

/// 1 where value >= threshold, else 0.
TensorF binarize(const TensorF& mask, float threshold = 0.5f);

}  // namespace pemed
