#include "legalrag/http.hpp"

#include <httplib.h>

#include <cstdlib>
#include <thread>

#include "legalrag/errors.hpp"
#include "legalrag/log.hpp"

namespace legalrag {

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ValidationError("endpoint URL '" + url + "' has no scheme");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

std::string post_json_raw(const Endpoint& endpoint, const nlohmann::json& body, const RetryPolicy& retry) {
    const auto [origin, path] = split_url(endpoint.url);
    httplib::Client client(origin);
    client.set_connection_timeout(endpoint.timeout_seconds, 0);
    client.set_read_timeout(endpoint.timeout_seconds, 0);
    client.set_write_timeout(endpoint.timeout_seconds, 0);
    httplib::Headers headers;
    if (!endpoint.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint.api_key);

    const std::string payload = body.dump();
    const int max_attempts = std::max(1, retry.max_attempts);
    auto backoff = retry.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        auto res = client.Post(path, headers, payload, "application/json");
        if (res) {
            if (res->status >= 200 && res->status < 300) return res->body;
            last_error = "HTTP " + std::to_string(res->status) + " from " + endpoint.url;
            if (res->status != 429 && res->status < 500) throw TransportError(last_error, attempt, false);
        } else {
            last_error = "request to " + endpoint.url + " failed: " + httplib::to_string(res.error());
        }
        if (attempt < max_attempts) {
            warn(last_error + " (attempt " + std::to_string(attempt) + "/" + std::to_string(max_attempts) +
                 ", retrying)");
            std::this_thread::sleep_for(backoff);
            backoff = std::chrono::milliseconds(
                static_cast<long long>(static_cast<double>(backoff.count()) * retry.backoff_multiplier));
        }
    }
    throw TransportError(last_error + " after " + std::to_string(max_attempts) + " attempts", max_attempts);
}

nlohmann::json post_json(const Endpoint& endpoint, const nlohmann::json& body, const RetryPolicy& retry) {
    const std::string raw = post_json_raw(endpoint, body, retry);
    try {
        return nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("malformed JSON from " + endpoint.url + ": " + e.what());
    }
}

std::string token_from_env(const std::string& variable) {
    if (variable.empty()) return {};
    const char* v = std::getenv(variable.c_str());
    return v == nullptr ? std::string() : std::string(v);
}

}  // namespace legalrag
