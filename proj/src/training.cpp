#include "pemed/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <ostream>

#include <json.hpp>

#include "kv_parse.hpp"
#include "pemed/metrics.hpp"

namespace pemed {

using namespace detail;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid_d(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void SyntheticParams::validate() const {
  require(min_blobs >= 1 && max_blobs >= min_blobs, "synthetic blob count range is empty");
  require(min_axis > 0 && max_axis >= min_axis, "synthetic axis range is invalid");
  require(min_contrast >= 0 && max_contrast >= min_contrast, "synthetic contrast range is invalid");
  require(min_background >= 0 && max_background >= min_background && max_background <= 1,
          "synthetic background range is invalid");
  require(noise_sigma >= 0, "synthetic noise sigma must be >= 0");
  require(min_area_fraction >= 0 && max_area_fraction <= 1 && max_area_fraction > min_area_fraction,
          "synthetic area fraction range is invalid");
}

Sample gen_synthetic_sample(std::uint64_t seed, Index height, Index width, const SyntheticParams& params,
                            Index multiple) {
  if (height <= 0 || width <= 0 || multiple <= 0 || height % multiple != 0 || width % multiple != 0) {
    throw Error(ErrorCode::BadGeometry, "synthetic sample size " + std::to_string(height) + "x" +
                                            std::to_string(width) + " is not a positive multiple of " +
                                            std::to_string(multiple));
  }
  params.validate();
  std::mt19937_64 rng(splitmix64(seed));
  using Real = std::uniform_real_distribution<double>;
  const double side = static_cast<double>(std::min(height, width));
  const double n_pixels = static_cast<double>(height * width);

  Sample out{TensorF({1, height, width}), TensorF({1, height, width})};
  constexpr int kMaxAttempts = 1000;
  bool accepted = false;
  for (int attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
    std::fill(out.gt.data().begin(), out.gt.data().end(), 0.0f);
    const int blobs = std::uniform_int_distribution<int>(params.min_blobs, params.max_blobs)(rng);
    for (int b = 0; b < blobs; ++b) {
      const double cy = Real(0.0, static_cast<double>(height))(rng);
      const double cx = Real(0.0, static_cast<double>(width))(rng);
      const double ra = Real(params.min_axis, params.max_axis)(rng) * side;
      const double rb = Real(params.min_axis, params.max_axis)(rng) * side;
      const double angle = Real(0.0, std::numbers::pi)(rng);
      const double cs = std::cos(angle), sn = std::sin(angle);
      for (Index r = 0; r < height; ++r) {
        for (Index c = 0; c < width; ++c) {
          const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
          const double u = (dx * cs + dy * sn) / ra, v = (-dx * sn + dy * cs) / rb;
          if (u * u + v * v <= 1.0) out.gt[r * width + c] = 1.0f;
        }
      }
    }
    double area = 0;
    for (float g : out.gt.data()) area += g;
    const double fraction = area / n_pixels;
    accepted = fraction >= params.min_area_fraction && fraction <= params.max_area_fraction;
  }
  if (!accepted) throw Error(ErrorCode::BadGeometry, "could not draw blobs within the area fraction bounds");

  const double background = Real(params.min_background, params.max_background)(rng);
  const double contrast = Real(params.min_contrast, params.max_contrast)(rng);
  std::normal_distribution<double> noise(0.0, params.noise_sigma > 0 ? params.noise_sigma : 1.0);
  for (Index i = 0; i < out.image.size(); ++i) {
    double v = background + contrast * static_cast<double>(out.gt[i]);
    if (params.noise_sigma > 0) v += noise(rng);
    out.image[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

template <class T>
Var<T> normalized_focal_loss(const Var<T>& logits, const Tensor<T>& gt, T gamma) {
  require_same_shape(logits.shape(), gt.shape(), "normalized_focal_loss");
  if (!(gamma >= T(0))) throw Error(ErrorCode::InvalidArgument, "focal gamma must be >= 0");
  const auto z = logits.value().data();
  const auto g = gt.data();
  const double gm = static_cast<double>(gamma);
  const std::size_t n = z.size();
  // Per pixel with s = +-z (sign from gt): p = sigmoid(s), q = 1 - p,
  // w = q^gamma, l = -log p. Loss A / B with A = sum w l and B = sum w.
  std::vector<double> dA(n), dB(n);
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sign = g[i] >= T(0.5) ? 1.0 : -1.0;
    const double s = sign * static_cast<double>(z[i]);
    const double p = sigmoid_d(s), q = sigmoid_d(-s);
    const double l = softplus(-s);
    const double w = gm == 0.0 ? 1.0 : std::pow(q, gm);
    a += w * l;
    b += w;
    const double dw = gm == 0.0 ? 0.0 : -gm * w * p;
    dA[i] = sign * (dw * l - w * q);
    dB[i] = sign * dw;
  }
  const double loss = b > 0.0 ? a / b : 0.0;
  Tensor<T> out({1});
  out[0] = static_cast<T>(loss);
  return Var<T>::make(std::move(out), {logits},
                      [dA = std::move(dA), dB = std::move(dB), loss, b](Node<T>& node) {
                        if (b <= 0.0) return;
                        const double up = static_cast<double>(node.grad[0]);
                        auto gz = node.parents[0]->grad_buffer().data();
                        for (std::size_t i = 0; i < gz.size(); ++i) {
                          gz[i] += static_cast<T>(up * (dA[i] - loss * dB[i]) / b);
                        }
                      });
}

template Var<float> normalized_focal_loss<float>(const Var<float>&, const Tensor<float>&, float);
template Var<double> normalized_focal_loss<double>(const Var<double>&, const Tensor<double>&, double);

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(lr > 0, "lr must be > 0");
  require(lr_decay_factor > 0 && lr_decay_factor < 1, "lr_decay_factor must lie in (0, 1)");
  require(lr_decay_every >= 1, "lr_decay_every must be >= 1");
  require(gamma >= 0, "gamma must be >= 0");
  require(max_train_clicks >= 1, "max_train_clicks must be >= 1");
  require(train_cases >= 1, "train_cases must be >= 1");
  require(steps_per_epoch >= 0, "steps_per_epoch must be >= 0");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0,
          "invalid Adam hyperparameters");
  synth.validate();
}

const std::set<std::string>& TrainConfig::keys() {
  static const std::set<std::string> k{
      "epochs",           "batch_size",         "lr",
      "lr_decay_factor",  "lr_decay_every",     "gamma",
      "max_train_clicks", "seed",               "train_cases",
      "steps_per_epoch",  "adam_beta1",         "adam_beta2",
      "adam_eps",         "synth_min_blobs",    "synth_max_blobs",
      "synth_min_axis",   "synth_max_axis",     "synth_min_contrast",
      "synth_max_contrast", "synth_min_background", "synth_max_background",
      "synth_noise_sigma", "synth_min_area_fraction", "synth_max_area_fraction"};
  return k;
}

KeyValues TrainConfig::to_key_values() const {
  return {
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"lr", format_double(lr)},
      {"lr_decay_factor", format_double(lr_decay_factor)},
      {"lr_decay_every", std::to_string(lr_decay_every)},
      {"gamma", format_double(gamma)},
      {"max_train_clicks", std::to_string(max_train_clicks)},
      {"seed", std::to_string(seed)},
      {"train_cases", std::to_string(train_cases)},
      {"steps_per_epoch", std::to_string(steps_per_epoch)},
      {"adam_beta1", format_double(adam_beta1)},
      {"adam_beta2", format_double(adam_beta2)},
      {"adam_eps", format_double(adam_eps)},
      {"synth_min_blobs", std::to_string(synth.min_blobs)},
      {"synth_max_blobs", std::to_string(synth.max_blobs)},
      {"synth_min_axis", format_double(synth.min_axis)},
      {"synth_max_axis", format_double(synth.max_axis)},
      {"synth_min_contrast", format_double(synth.min_contrast)},
      {"synth_max_contrast", format_double(synth.max_contrast)},
      {"synth_min_background", format_double(synth.min_background)},
      {"synth_max_background", format_double(synth.max_background)},
      {"synth_noise_sigma", format_double(synth.noise_sigma)},
      {"synth_min_area_fraction", format_double(synth.min_area_fraction)},
      {"synth_max_area_fraction", format_double(synth.max_area_fraction)},
  };
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  TrainConfig c;
  auto get_int = [&](const char* key, auto& field) {
    if (auto it = kv.find(key); it != kv.end()) {
      field = static_cast<std::remove_reference_t<decltype(field)>>(parse_int(key, it->second));
    }
  };
  auto get_real = [&](const char* key, double& field) {
    if (auto it = kv.find(key); it != kv.end()) field = parse_double(key, it->second);
  };
  get_int("epochs", c.epochs);
  get_int("batch_size", c.batch_size);
  get_real("lr", c.lr);
  get_real("lr_decay_factor", c.lr_decay_factor);
  get_int("lr_decay_every", c.lr_decay_every);
  get_real("gamma", c.gamma);
  get_int("max_train_clicks", c.max_train_clicks);
  if (auto it = kv.find("seed"); it != kv.end()) {
    const Index s = parse_int("seed", it->second);
    require(s >= 0, "seed must be >= 0");
    c.seed = static_cast<std::uint64_t>(s);
  }
  get_int("train_cases", c.train_cases);
  get_int("steps_per_epoch", c.steps_per_epoch);
  get_real("adam_beta1", c.adam_beta1);
  get_real("adam_beta2", c.adam_beta2);
  get_real("adam_eps", c.adam_eps);
  get_int("synth_min_blobs", c.synth.min_blobs);
  get_int("synth_max_blobs", c.synth.max_blobs);
  get_real("synth_min_axis", c.synth.min_axis);
  get_real("synth_max_axis", c.synth.max_axis);
  get_real("synth_min_contrast", c.synth.min_contrast);
  get_real("synth_max_contrast", c.synth.max_contrast);
  get_real("synth_min_background", c.synth.min_background);
  get_real("synth_max_background", c.synth.max_background);
  get_real("synth_noise_sigma", c.synth.noise_sigma);
  get_real("synth_min_area_fraction", c.synth.min_area_fraction);
  get_real("synth_max_area_fraction", c.synth.max_area_fraction);
  return c;
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 1) throw Error(ErrorCode::InvalidArgument, "epochs are counted from 1");
  return cfg.lr * std::pow(cfg.lr_decay_factor, static_cast<double>((epoch - 1) / cfg.lr_decay_every));
}

std::uint64_t case_seed(std::uint64_t base, std::uint64_t index) { return splitmix64(splitmix64(base) ^ index); }

TrainingClicks sample_training_clicks(const TensorF& image, const TensorF& gt, const Engine& engine, int k,
                                      std::mt19937_64& rng) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  const std::vector<Component> parts = connected_components(gt);
  if (parts.empty()) throw Error(ErrorCode::EmptyGt, "ground truth has no foreground");
  const Index height = gt.dim(-2), width = gt.dim(-1);

  // Safe interior: pixels at least half as deep as the deepest one.
  const Component& target = parts.front();
  const std::vector<double> depth = interior_distance_sq(target, height, width);
  const double deepest = *std::max_element(depth.begin(), depth.end());
  std::vector<std::size_t> safe;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (depth[i] >= 0.25 * deepest) safe.push_back(i);
  }
  const Pixel first = target[safe[std::uniform_int_distribution<std::size_t>(0, safe.size() - 1)(rng)]];
  const Click click1{first.col, first.row, Polarity::Positive, 1};

  const ModelConfig& cfg = engine.config();
  TrainingClicks out;
  if (k == 1) {
    out.clicks = {click1};
    out.prev_mask = TensorF(gt.shape());
    if (cfg.flags.self_loop) {
      NoGradGuard no_grad;
      const PromptMaps maps = assemble_input(image, out.clicks, out.prev_mask, cfg.disk_radius);
      TensorF o1 = engine.network().forward(maps).value();
      out.prev_mask = sigmoid(o1);
      if (cfg.flags.tsip) out.o_prev = std::move(o1);
    }
    return out;
  }

  SelfLoopResult start = engine.self_loop_init(image, click1);
  SessionState state = std::move(start.state);
  TensorF mask = std::move(start.m1);
  for (int i = 2; i <= k; ++i) {
    Click c;
    try {
      c = next_click(binarize(mask), gt);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoErrorRegion) throw;
      break;
    }
    c.t = i;
    if (i == k) {
      out.clicks = state.clicks;
      out.clicks.push_back(c);
      out.prev_mask = std::move(state.prev_mask);
      out.o_prev = std::move(state.o_prev);
      return out;
    }
    RefineResult r = engine.refine(state, c);
    state = std::move(r.state);
    mask = std::move(r.mask);
  }
  out.clicks = std::move(state.clicks);
  out.prev_mask = std::move(state.prev_mask);
  out.o_prev = std::move(state.o_prev);
  return out;
}

void Adam::step(ParamStore<float>& params, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, var] : params) {
    const TensorF* g = var.grad();
    if (!g) continue;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(static_cast<std::size_t>(g->size()), 0.0);
      v.assign(m.size(), 0.0);
    }
    auto w = var.leaf_value().data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double gi = static_cast<double>((*g)[static_cast<Index>(i)]);
      if (!std::isfinite(gi)) throw Error(ErrorCode::Divergence, "non-finite gradient in " + name);
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      w[i] -= static_cast<float>(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
    }
  }
}

VarF training_loss(const NetworkF& net, const TensorF& image, const TensorF& gt, const TrainingClicks& clicks,
                   double gamma) {
  const ModelConfig& cfg = net.config();
  const PromptMaps maps = assemble_input(image, clicks.clicks, clicks.prev_mask, cfg.disk_radius);
  std::optional<VarF> o_prev;
  if (cfg.flags.tsip && clicks.o_prev) o_prev = VarF(*clicks.o_prev);
  const VarF out = net.tsip_combine(net.forward(maps), o_prev);
  return normalized_focal_loss(out, gt, static_cast<float>(gamma));
}

Checkpoint train(const TrainConfig& train_cfg, const ModelConfig& model_cfg,
                 const std::optional<std::filesystem::path>& out_path, const TrainHooks& hooks) {
  train_cfg.validate();
  model_cfg.validate();
  auto net = std::make_shared<NetworkF>(model_cfg, init_params(model_cfg, train_cfg.seed));
  const Engine engine(net);
  Adam adam(train_cfg.adam_beta1, train_cfg.adam_beta2, train_cfg.adam_eps);
  std::mt19937_64 rng(splitmix64(train_cfg.seed ^ 0x5eed5eed5eedULL));
  const Index size = model_cfg.input_size;

  std::vector<Index> order(static_cast<std::size_t>(train_cfg.train_cases));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
  const auto batches_per_epoch = static_cast<int>((train_cfg.train_cases + train_cfg.batch_size - 1) /
                                                  train_cfg.batch_size);
  const int steps = train_cfg.steps_per_epoch > 0 ? std::min(train_cfg.steps_per_epoch, batches_per_epoch)
                                                  : batches_per_epoch;
  std::size_t cursor = order.size();

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(train_cfg, epoch);
    double loss_sum = 0.0;
    int loss_count = 0;
    for (int step = 0; step < steps; ++step) {
      net->params().zero_grad();
      for (int j = 0; j < train_cfg.batch_size; ++j) {
        if (cursor >= order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        const Index idx = order[cursor++];
        const Sample sample =
            gen_synthetic_sample(case_seed(train_cfg.seed, static_cast<std::uint64_t>(idx)), size, size,
                                 train_cfg.synth, model_cfg.total_stride());
        const int k = std::uniform_int_distribution<int>(1, train_cfg.max_train_clicks)(rng);
        const TrainingClicks clicks = sample_training_clicks(sample.image, sample.gt, engine, k, rng);
        VarF loss;
        try {
          loss = training_loss(*net, sample.image, sample.gt, clicks, train_cfg.gamma);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::NonFinite) throw;
          throw Error(ErrorCode::Divergence, "epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                                                 ": " + e.what());
        }
        const double value = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(value)) {
          throw Error(ErrorCode::Divergence,
                      "loss became non-finite at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
        }
        loss_sum += value;
        ++loss_count;
        backward(scale(loss, 1.0f / static_cast<float>(train_cfg.batch_size)));
      }
      adam.step(net->params(), lr);
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = loss_sum / std::max(loss_count, 1);
    entry.lr = lr;
    entry.steps = steps;
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (hooks.log) {
      *hooks.log << nlohmann::json{{"epoch", entry.epoch},
                                   {"mean_loss", entry.mean_loss},
                                   {"lr", entry.lr},
                                   {"steps", entry.steps},
                                   {"seconds", entry.seconds}}
                        .dump()
                 << '\n'
                 << std::flush;
    }
    if (hooks.on_epoch) hooks.on_epoch(entry);
  }
  net->params().zero_grad();
  if (out_path) save_checkpoint(*out_path, model_cfg, net->params());
  return Checkpoint{model_cfg, net->params()};
}

}  // namespace pemed
