#include "pemed/service.hpp"

#include <cstdio>

#include <json.hpp>

#include "pemed/base64.hpp"
#include "pemed/image_io.hpp"
#include "pemed/metrics.hpp"
#include "pemed/rle.hpp"

namespace pemed {

using nlohmann::json;

namespace {

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::SessionNotFound: return 404;
    case ErrorCode::ConcurrentModification: return 409;
    case ErrorCode::PayloadTooLarge: return 413;
    case ErrorCode::DecodeError:
    case ErrorCode::UnsupportedFormat:
    case ErrorCode::OutOfBoundsClick:
    case ErrorCode::InvalidArgument: return 400;
    default: return 500;
  }
}

Response from_error(const Error& e) { return error_response(status_for(e.code()), e.code(), e.what()); }

json parse_body(std::string_view body) {
  json j = json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object");
  return j;
}

/// Decodes the one image field present among {prefix}_png_b64 / {prefix}_pgm_b64.
std::optional<TensorF> decode_image_field(const json& body, const std::string& prefix, Index size) {
  const std::string png_key = prefix + "_png_b64", pgm_key = prefix + "_pgm_b64";
  const bool has_png = body.contains(png_key), has_pgm = body.contains(pgm_key);
  if (!has_png && !has_pgm) return std::nullopt;
  if (has_png && has_pgm) throw Error(ErrorCode::InvalidArgument, "give only one of " + png_key + ", " + pgm_key);
  const json& field = has_png ? body[png_key] : body[pgm_key];
  if (!field.is_string()) throw Error(ErrorCode::InvalidArgument, prefix + " payload must be a base64 string");
  const Bytes bytes = base64_decode(field.get<std::string>());
  TensorF image = load_image(bytes, has_png ? ImageFormat::Png8 : ImageFormat::Pgm);
  if (image.dim(1) != size || image.dim(2) != size) image = resize_bilinear(image, size, size);
  return image;
}

Click parse_click(std::string_view text) {
  const json body = parse_body(text);
  auto int_field = [&](const char* key) {
    if (!body.contains(key) || !body[key].is_number_integer()) {
      throw Error(ErrorCode::InvalidArgument, std::string("field '") + key + "' must be an integer");
    }
    return body[key].get<Index>();
  };
  Click c;
  c.x = int_field("x");
  c.y = int_field("y");
  if (!body.contains("polarity") || !body["polarity"].is_string()) {
    throw Error(ErrorCode::InvalidArgument, "field 'polarity' must be \"positive\" or \"negative\"");
  }
  c.polarity = parse_polarity(body["polarity"].get<std::string>());
  return c;
}

}  // namespace

Response error_response(int status, ErrorCode code, const std::string& message) {
  return {status, json{{"error", {{"code", std::string(to_string(code))}, {"message", message}}}}.dump()};
}

SessionService::SessionService(std::shared_ptr<const Engine> engine, std::string checkpoint_id,
                               ServiceOptions options, Clock clock)
    : engine_(std::move(engine)),
      checkpoint_id_(std::move(checkpoint_id)),
      options_(options),
      clock_(std::move(clock)),
      id_rng_(std::random_device{}()) {
  if (!engine_) throw Error(ErrorCode::InvalidArgument, "service needs an engine");
}

std::string SessionService::fresh_id() {
  // Caller holds mutex_.
  while (true) {
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(id_rng_()),
                  static_cast<unsigned long long>(id_rng_()));
    if (issued_.insert(buf).second) return buf;
  }
}

std::shared_ptr<SessionService::Record> SessionService::find(const std::string& id) {
  evict_idle();
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::SessionNotFound, "no session " + id);
  return it->second;
}

std::size_t SessionService::evict_idle() {
  const auto now = clock_();
  std::lock_guard lock(mutex_);
  std::size_t dropped = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (now - it->second->last_active > options_.ttl) {
      it = sessions_.erase(it);
      ++dropped;
    } else {
      ++it;
    }
  }
  return dropped;
}

std::size_t SessionService::session_count() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

Response SessionService::create_session(std::string_view body) {
  try {
    if (body.size() > options_.max_payload_bytes) {
      throw Error(ErrorCode::PayloadTooLarge, "request body exceeds " + std::to_string(options_.max_payload_bytes) +
                                                  " bytes");
    }
    const json request = parse_body(body);
    const Index size = engine_->config().input_size;
    std::optional<TensorF> image = decode_image_field(request, "image", size);
    if (!image) throw Error(ErrorCode::InvalidArgument, "missing image_png_b64 or image_pgm_b64");
    std::optional<TensorF> gt = decode_image_field(request, "gt", size);
    if (gt) gt = binarize(*gt);

    auto record = std::make_shared<Record>();
    record->state = engine_->new_session(std::move(*image), std::move(gt));
    record->created_at = record->last_active = clock_();
    evict_idle();
    std::string id;
    {
      std::lock_guard lock(mutex_);
      id = fresh_id();
      sessions_.emplace(id, std::move(record));
    }
    return {200, json{{"session_id", id}, {"height", size}, {"width", size}}.dump()};
  } catch (const Error& e) {
    return from_error(e);
  }
}

Response SessionService::click_response(const Record& record, const TensorF& mask) const {
  const TensorF binary = binarize(mask);
  json out{{"mask_rle", encode_mask_rle(binary)}, {"click_count", record.state.t}};
  if (record.state.gt) out["dsc"] = dsc(binary, *record.state.gt);
  return {200, out.dump()};
}

Response SessionService::add_click(const std::string& id, std::string_view body) {
  try {
    const std::shared_ptr<Record> record = find(id);
    std::unique_lock busy(record->busy, std::try_to_lock);
    if (!busy.owns_lock()) {
      throw Error(ErrorCode::ConcurrentModification, "session " + id + " is handling another request");
    }
    const Click click = parse_click(body);
    RefineResult r = engine_->add_click(record->state, click);
    record->state = std::move(r.state);
    record->last_active = clock_();
    return click_response(*record, r.mask);
  } catch (const Error& e) {
    return from_error(e);
  }
}

TensorF SessionService::replay(Record& record, const std::vector<Click>& clicks) const {
  SessionState state = engine_->new_session(std::move(record.state.image), std::move(record.state.gt));
  TensorF mask(state.image.shape());
  for (const Click& c : clicks) {
    RefineResult r = engine_->add_click(state, c);
    state = std::move(r.state);
    mask = std::move(r.mask);
  }
  record.state = std::move(state);
  return mask;
}

Response SessionService::reset(const std::string& id) {
  try {
    const std::shared_ptr<Record> record = find(id);
    std::unique_lock busy(record->busy, std::try_to_lock);
    if (!busy.owns_lock()) {
      throw Error(ErrorCode::ConcurrentModification, "session " + id + " is handling another request");
    }
    replay(*record, {});
    record->last_active = clock_();
    return {204, {}};
  } catch (const Error& e) {
    return from_error(e);
  }
}

Response SessionService::undo(const std::string& id) {
  try {
    const std::shared_ptr<Record> record = find(id);
    std::unique_lock busy(record->busy, std::try_to_lock);
    if (!busy.owns_lock()) {
      throw Error(ErrorCode::ConcurrentModification, "session " + id + " is handling another request");
    }
    std::vector<Click> clicks = record->state.clicks;
    if (!clicks.empty()) clicks.pop_back();
    const TensorF mask = replay(*record, clicks);
    record->last_active = clock_();
    return click_response(*record, mask);
  } catch (const Error& e) {
    return from_error(e);
  }
}

Response SessionService::remove(const std::string& id) {
  evict_idle();
  std::lock_guard lock(mutex_);
  if (sessions_.erase(id) == 0) return error_response(404, ErrorCode::SessionNotFound, "no session " + id);
  return {204, {}};
}

Response SessionService::healthz() const {
  return {200, json{{"status", "ok"}, {"checkpoint_id", checkpoint_id_}}.dump()};
}

}  // namespace pemed
