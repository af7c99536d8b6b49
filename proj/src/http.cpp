#include <httplib.h>

#include <thread>

#include "http.hpp"

namespace hymem::detail {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path part, no trailing slash
};

SplitUrl split_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw HttpFailure{0, "base url lacks a scheme: " + base_url};
  }
  const auto path_start = base_url.find('/', scheme_end + 3);
  SplitUrl out;
  if (path_start == std::string::npos) {
    out.origin = base_url;
  } else {
    out.origin = base_url.substr(0, path_start);
    out.prefix = base_url.substr(path_start);
  }
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

bool retryable(int status) { return status == 429 || status >= 500; }

}  // namespace

nlohmann::json post_json(const std::string& base_url, const std::string& path,
                         const nlohmann::json& body, const std::string& api_key,
                         const RetryPolicy& retry) {
  const auto url = split_url(base_url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(retry.timeout);
  client.set_read_timeout(retry.timeout);
  client.set_write_timeout(retry.timeout);

  httplib::Headers headers;
  if (!api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + api_key);
  }
  const auto payload = body.dump();

  HttpFailure last{0, "no attempt made"};
  const int attempts = std::max(1, retry.max_attempts);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(retry.base_delay * (1LL << (attempt - 1)));
    }
    auto res = client.Post(url.prefix + path, headers, payload, "application/json");
    if (!res) {
      last = {0, "transport error: " + httplib::to_string(res.error())};
      continue;
    }
    if (res->status >= 200 && res->status < 300) {
      auto parsed = nlohmann::json::parse(res->body, nullptr, false);
      if (parsed.is_discarded()) {
        throw HttpFailure{res->status, "response body is not JSON"};
      }
      return parsed;
    }
    last = {res->status, "HTTP " + std::to_string(res->status) + ": " +
                             res->body.substr(0, 200)};
    if (!retryable(res->status)) break;
  }
  throw last;
}

}  // namespace hymem::detail
