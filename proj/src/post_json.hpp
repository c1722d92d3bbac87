#pragma once

// Internal shared HTTP helper; not installed with the public headers.

#include "dalda/backends.hpp"

#include <json.hpp>

#include <string>

namespace dalda::backends {

// POST body as JSON with retry/backoff; maps HTTP failures onto BackendError
// kinds (429 -> rate_limited, 5xx/connect -> unreachable, other -> malformed).
nlohmann::json post_json(const std::string& endpoint, const nlohmann::json& body,
                         const RetryPolicy& retry);

} // namespace dalda::backends
