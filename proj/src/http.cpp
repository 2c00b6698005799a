#include "pemed/http.hpp"

namespace pemed {

namespace {

void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  if (!r.body.empty()) res.set_content(r.body, "application/json");
}

}  // namespace

void mount_routes(httplib::Server& server, SessionService& service) {
  server.set_payload_max_length(service.options().max_payload_bytes);
  const std::string id = "([0-9a-f]+)";

  server.Get("/v1/healthz", [&service](const httplib::Request&, httplib::Response& res) { send(res, service.healthz()); });
  server.Post("/v1/sessions", [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.create_session(req.body));
  });
  server.Post("/v1/sessions/" + id + "/clicks", [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.add_click(req.matches[1], req.body));
  });
  server.Post("/v1/sessions/" + id + "/reset", [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.reset(req.matches[1]));
  });
  server.Post("/v1/sessions/" + id + "/undo", [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.undo(req.matches[1]));
  });
  server.Delete("/v1/sessions/" + id, [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.remove(req.matches[1]));
  });
  // httplib answers 413 itself above the payload limit; give it our error body.
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const ErrorCode code = res.status == 413   ? ErrorCode::PayloadTooLarge
                           : res.status == 404 ? ErrorCode::SessionNotFound
                                               : ErrorCode::InvalidArgument;
    send(res, error_response(res.status, code, "request rejected with status " + std::to_string(res.status)));
  });
}

}  // namespace pemed
