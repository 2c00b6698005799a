#pragma once

#include <httplib.h>

#include "pemed/service.hpp"

namespace pemed {

/// Registers the /v1 routes on server. The service must outlive it.
void mount_routes(httplib::Server& server, SessionService& service);

}  // namespace pemed
