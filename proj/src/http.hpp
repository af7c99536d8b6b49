#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "hymem/llm_client.hpp"

namespace hymem::detail {

/// Failure of a JSON POST after retries. status 0 means transport failure.
struct HttpFailure {
  int status = 0;
  std::string message;
};

/// POSTs `body` to base_url + path with bearer auth. Transport errors, 429
/// and 5xx are retried with exponential backoff up to retry.max_attempts
/// attempts in total; other non-2xx statuses fail immediately.
/// Returns the parsed response body or throws HttpFailure.
nlohmann::json post_json(const std::string& base_url, const std::string& path,
                         const nlohmann::json& body, const std::string& api_key,
                         const RetryPolicy& retry);

}  // namespace hymem::detail
