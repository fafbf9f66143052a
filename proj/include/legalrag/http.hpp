#pragma once

#include <chrono>
#include <nlohmann/json.hpp>
#include <string>

namespace legalrag {

/// A remote service reached by POSTing JSON. `url` is the full request URL,
/// e.g. "http://localhost:8080/v1/embeddings".
struct Endpoint {
    std::string url;
    std::string api_key;  // sent as "Authorization: Bearer <key>" when non-empty
    int timeout_seconds = 60;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{200};
    double backoff_multiplier = 2.0;
};

/// POSTs `body` and returns the parsed JSON response. Connection failures,
/// HTTP 429 and 5xx are retried with exponential backoff; other 4xx fail
/// immediately. Throws TransportError carrying the attempt count.
nlohmann::json post_json(const Endpoint& endpoint, const nlohmann::json& body, const RetryPolicy& retry = {});

/// Like post_json but returns the raw response text (for verbatim logging).
std::string post_json_raw(const Endpoint& endpoint, const nlohmann::json& body, const RetryPolicy& retry = {});

/// Reads an API token from the named environment variable; empty if unset.
std::string token_from_env(const std::string& variable);

}  // namespace legalrag
