#pragma once

// Session store and request handlers behind the HTTP API. Handlers take and
// return JSON text so they can be exercised without a socket; http.hpp binds
// them to routes.

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <string_view>

#include "pemed/engine.hpp"

namespace pemed {

struct ServiceOptions {
  std::chrono::milliseconds ttl = std::chrono::minutes(30);
  std::size_t max_payload_bytes = std::size_t{8} << 20;
};

struct Response {
  int status = 200;
  std::string body;  ///< JSON, empty for 204
};

class SessionService {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  SessionService(std::shared_ptr<const Engine> engine, std::string checkpoint_id, ServiceOptions options = {},
                 Clock clock = [] { return std::chrono::steady_clock::now(); });

  Response create_session(std::string_view body);
  Response add_click(const std::string& id, std::string_view body);
  Response reset(const std::string& id);
  Response undo(const std::string& id);
  Response remove(const std::string& id);
  Response healthz() const;

  /// Drops sessions idle for longer than the TTL; returns how many.
  std::size_t evict_idle();
  std::size_t session_count() const;
  const ServiceOptions& options() const noexcept { return options_; }

 private:
  struct Record {
    std::mutex busy;
    SessionState state;
    std::chrono::steady_clock::time_point created_at;
    std::chrono::steady_clock::time_point last_active;
  };

  std::shared_ptr<Record> find(const std::string& id);
  std::string fresh_id();
  Response click_response(const Record& record, const TensorF& mask) const;
  /// Runs the click sequence on a fresh state built from the record's image.
  TensorF replay(Record& record, const std::vector<Click>& clicks) const;

  std::shared_ptr<const Engine> engine_;
  std::string checkpoint_id_;
  ServiceOptions options_;
  Clock clock_;

  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Record>> sessions_;
  std::set<std::string> issued_;
  std::mt19937_64 id_rng_;
};

/// JSON error body {"error": {"code": ..., "message": ...}}.
Response error_response(int status, ErrorCode code, const std::string& message);

}  // namespace pemed
