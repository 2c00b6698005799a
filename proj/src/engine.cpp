#include "pemed/engine.hpp"

#include <cmath>

namespace pemed {

void SessionState::check_invariants(bool tsip_enabled) const {
  auto corrupt = [](const std::string& what) { throw Error(ErrorCode::StateCorrupt, what); };
  if (t < 0 || static_cast<std::size_t>(t) != clicks.size()) {
    corrupt("t = " + std::to_string(t) + " but " + std::to_string(clicks.size()) + " clicks recorded");
  }
  if (image.rank() != 3 || image.dim(0) != 1) corrupt("image must be 1xHxW, got " + to_string(image.shape()));
  if (prev_mask.shape() != image.shape()) {
    corrupt("prev_mask " + to_string(prev_mask.shape()) + " does not match image " + to_string(image.shape()));
  }
  for (float v : prev_mask.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) corrupt("prev_mask leaves [0,1]");
  }
  const bool want_o = t >= 1 && tsip_enabled;
  if (o_prev.has_value() != want_o) {
    corrupt(want_o ? "o_prev missing after the first interaction" : "o_prev present where TSIP does not apply");
  }
  if (o_prev && o_prev->shape() != image.shape()) corrupt("o_prev shape " + to_string(o_prev->shape()));
  if (gt && gt->shape() != image.shape()) corrupt("gt shape " + to_string(gt->shape()));
}

Engine::Engine(std::shared_ptr<const NetworkF> network, Observer observer)
    : network_(std::move(network)), observer_(std::move(observer)) {
  if (!network_) throw Error(ErrorCode::InvalidArgument, "engine needs a network");
}

SessionState Engine::new_session(TensorF image, std::optional<TensorF> gt) const {
  const Index size = config().input_size;
  if (image.shape() != Shape{1, size, size}) {
    throw Error(ErrorCode::ShapeMismatch, "session image must be 1x" + std::to_string(size) + "x" +
                                              std::to_string(size) + ", got " + to_string(image.shape()));
  }
  if (gt) require_same_shape(image.shape(), gt->shape(), "session gt");
  SessionState s;
  s.prev_mask = TensorF(image.shape());
  s.image = std::move(image);
  s.gt = std::move(gt);
  return s;
}

TensorF Engine::run_pass(const TensorF& image, const std::vector<Click>& clicks, const TensorF& prev_mask,
                         const std::optional<TensorF>& o_prev) const {
  NoGradGuard no_grad;
  const ModelConfig& cfg = config();
  const PromptMaps maps = assemble_input(image, clicks, prev_mask, cfg.disk_radius);
  const VarF raw = network_->forward(maps);
  const bool apply_tsip = cfg.flags.tsip && o_prev.has_value();
  std::optional<VarF> o_in;
  if (apply_tsip) o_in = VarF(*o_prev);
  TensorF out = network_->tsip_combine(raw, o_in).value();
  const std::uint64_t ordinal = ++forward_count_;
  if (observer_) {
    ForwardEvent ev;
    ev.ordinal = ordinal;
    ev.o_in = apply_tsip ? &*o_prev : nullptr;
    ev.raw = &raw.value();
    ev.o_out = &out;
    observer_(ev);
  }
  return out;
}

SelfLoopResult Engine::self_loop_init(const TensorF& image, const Click& first_click, std::optional<TensorF> gt) const {
  const ModelConfig& cfg = config();
  SessionState state = new_session(image, std::move(gt));
  check_click_bounds(first_click, cfg.input_size, cfg.input_size);
  Click click = first_click;
  click.t = 1;
  state.clicks = {click};

  const TensorF o1 = run_pass(state.image, state.clicks, state.prev_mask, std::nullopt);
  SelfLoopResult result;
  result.m0 = sigmoid(o1);
  TensorF o_last = o1;
  if (cfg.flags.self_loop) {
    o_last = run_pass(state.image, state.clicks, result.m0, o1);
    result.m1 = sigmoid(o_last);
  } else {
    result.m1 = result.m0;
  }
  state.prev_mask = result.m1;
  if (cfg.flags.tsip) state.o_prev = std::move(o_last);
  state.t = 1;
  state.check_invariants(cfg.flags.tsip);
  result.state = std::move(state);
  return result;
}

RefineResult Engine::refine(const SessionState& state, const Click& click) const {
  const ModelConfig& cfg = config();
  state.check_invariants(cfg.flags.tsip);
  if (state.t < 1) throw Error(ErrorCode::StateCorrupt, "refine before the first interaction");
  check_click_bounds(click, state.image.dim(1), state.image.dim(2));

  SessionState next = state;
  Click c = click;
  c.t = state.t + 1;
  next.clicks.push_back(c);
  TensorF o = run_pass(next.image, next.clicks, state.prev_mask, state.o_prev);
  RefineResult result;
  result.mask = sigmoid(o);
  next.prev_mask = result.mask;
  if (cfg.flags.tsip) next.o_prev = std::move(o);
  next.t = state.t + 1;
  result.state = std::move(next);
  return result;
}

RefineResult Engine::add_click(const SessionState& state, const Click& click) const {
  if (state.t == 0) {
    state.check_invariants(config().flags.tsip);
    SelfLoopResult r = self_loop_init(state.image, click, state.gt);
    return {std::move(r.m1), std::move(r.state)};
  }
  return refine(state, click);
}

TensorF sigmoid(const TensorF& logits) {
  TensorF out(logits.shape());
  for (Index i = 0; i < logits.size(); ++i) {
    const float z = logits[i];
    out[i] = z >= 0 ? 1.0f / (1.0f + std::exp(-z)) : std::exp(z) / (1.0f + std::exp(z));
  }
  return out;
}

TensorF binarize(const TensorF& mask, float threshold) {
  TensorF out(mask.shape());
  for (Index i = 0; i < mask.size(); ++i) out[i] = mask[i] >= threshold ? 1.0f : 0.0f;
  return out;
}

}  // namespace pemed
