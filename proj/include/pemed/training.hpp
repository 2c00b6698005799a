#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pemed/checkpoint.hpp"
#include "pemed/config.hpp"
#include "pemed/engine.hpp"

namespace pemed {

/// Synthetic blob corpus. Sizes are fractions of min(H, W).
struct SyntheticParams {
  int min_blobs = 1;
  int max_blobs = 3;
  double min_axis = 0.08;
  double max_axis = 0.30;
  double min_contrast = 0.25;
  double max_contrast = 0.60;
  double min_background = 0.10;
  double max_background = 0.40;
  double noise_sigma = 0.05;
  double min_area_fraction = 0.02;
  double max_area_fraction = 0.50;

  void validate() const;
};

struct Sample {
  TensorF image;  ///< 1 x H x W in [0,1]
  TensorF gt;     ///< 1 x H x W of zeros and ones
};

/// Union of 1-3 rotated filled ellipses as gt; image = background +
/// contrast * gt + N(0, sigma^2), clamped to [0,1]. Draws are rejected until
/// the gt area fraction lies in range. H and W must be positive multiples of
/// `multiple`, else BAD_GEOMETRY.
Sample gen_synthetic_sample(std::uint64_t seed, Index height, Index width, const SyntheticParams& params,
                            Index multiple = 32);

/// Mean over pixels of -(1-p_t)^gamma log p_t, normalized by the total weight
/// sum (1-p_t)^gamma instead of the pixel count. The normalizer is part of the
/// graph. Returns 0 when every weight underflows.
template <class T>
Var<T> normalized_focal_loss(const Var<T>& logits, const Tensor<T>& gt, T gamma);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 8;
  double lr = 5e-3;
  double lr_decay_factor = 0.6;
  int lr_decay_every = 20;
  double gamma = 2.0;
  int max_train_clicks = 5;
  std::uint64_t seed = 0;
  Index train_cases = 2000;
  /// 0 runs whole epochs; otherwise caps the optimizer steps per epoch.
  int steps_per_epoch = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  SyntheticParams synth;

  void validate() const;
  KeyValues to_key_values() const;
  /// Unknown keys are ignored so model and training keys can share one file.
  static TrainConfig from_key_values(const KeyValues& kv);
  static const std::set<std::string>& keys();
};

/// lr * factor^floor((epoch - 1) / every), epochs counted from 1.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

/// Seed of training case i; held-out corpora use a disjoint stream.
std::uint64_t case_seed(std::uint64_t base, std::uint64_t index);

struct TrainingClicks {
  std::vector<Click> clicks;
  TensorF prev_mask;
  std::optional<TensorF> o_prev;
};

/// Simulates k interactions the way inference runs them, without gradients:
/// click 1 is drawn from the safe interior of the largest gt component, the
/// first interaction goes through self_loop_init, clicks 2..k-1 through
/// refine, and click k comes from next_click on the resulting mask. Returns
/// the inputs of the supervised pass: all k clicks plus the prev mask and
/// O_{t-1} that pass sees. With the self-loop on and k == 1 that pass is the
/// loop pass, so prev_mask is M0. Stops early if the prediction becomes exact.
/// Throws EMPTY_GT.
TrainingClicks sample_training_clicks(const TensorF& image, const TensorF& gt, const Engine& engine, int k,
                                      std::mt19937_64& rng);

class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  /// Applies one step to every parameter that has a gradient.
  void step(ParamStore<float>& params, double lr);

 private:
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  int steps = 0;
  double seconds = 0.0;
};

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  /// Receives one JSON object per epoch.
  std::ostream* log = nullptr;
};

/// Loss of one supervised pass, using grad mode as currently set.
VarF training_loss(const NetworkF& net, const TensorF& image, const TensorF& gt, const TrainingClicks& clicks,
                   double gamma);

/// Adam over the synthetic corpus. Throws DIVERGENCE on a non-finite loss.
/// Writes the checkpoint to out_path when given.
Checkpoint train(const TrainConfig& train_cfg, const ModelConfig& model_cfg,
                 const std::optional<std::filesystem::path>& out_path = std::nullopt, const TrainHooks& hooks = {});

}  // namespace pemed
