#include "pop/http_backend.hpp"

#include <chrono>
#include <condition_variable>
#include <mutex>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace pop {

namespace {

bool retryable_status(int status) {
  return status == 408 || status == 429 || (status >= 500 && status < 600);
}

nlohmann::json build_body(const HttpBackendConfig& config, const CompletionRequest& request,
                          int n) {
  nlohmann::json messages = nlohmann::json::array();
  if (!request.system_text.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system_text}});
  }
  if (request.image_ref.empty()) {
    messages.push_back({{"role", "user"}, {"content", request.user_text}});
  } else {
    nlohmann::json parts = nlohmann::json::array();
    parts.push_back({{"type", "text"}, {"text", request.user_text}});
    parts.push_back({{"type", "image_url"}, {"image_url", {{"url", request.image_ref}}}});
    messages.push_back({{"role", "user"}, {"content", std::move(parts)}});
  }
  return {{"model", config.model},
          {"messages", std::move(messages)},
          {"temperature", request.params.temperature},
          {"max_tokens", request.params.max_tokens},
          {"n", n},
          {"seed", request.params.seed}};
}

std::string body_snippet(const std::string& body) {
  constexpr size_t kLimit = 200;
  if (body.size() <= kLimit) return body;
  return body.substr(0, kLimit) + "...";
}

std::vector<std::string> extract_choices(const std::string& body, int n) {
  nlohmann::json parsed = nlohmann::json::parse(body, nullptr, false);
  if (parsed.is_discarded() || !parsed.contains("choices") || !parsed["choices"].is_array()) {
    fail(ErrorKind::EmptyCompletion, "malformed completion response: " + body_snippet(body));
  }
  std::vector<std::string> out;
  for (const nlohmann::json& choice : parsed["choices"]) {
    if (!choice.contains("message") || !choice["message"].contains("content") ||
        !choice["message"]["content"].is_string()) {
      fail(ErrorKind::EmptyCompletion, "choice lacks message.content");
    }
    out.push_back(choice["message"]["content"].get<std::string>());
  }
  if (static_cast<int>(out.size()) != n) {
    fail(ErrorKind::EmptyCompletion, "backend returned " + std::to_string(out.size()) + " of " +
                                         std::to_string(n) + " choices");
  }
  for (const std::string& text : out) {
    if (text.empty()) fail(ErrorKind::EmptyCompletion, "backend returned an empty completion");
  }
  return out;
}

// Bounds the number of requests in flight through one backend.
class InFlightGate {
 public:
  explicit InFlightGate(int limit) : limit_(limit > 0 ? limit : 1) {}

  void acquire() {
    std::unique_lock<std::mutex> lock(mutex_);
    cv_.wait(lock, [this] { return active_ < limit_; });
    ++active_;
  }

  void release() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      --active_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  int limit_;
  int active_ = 0;
};

struct GateGuard {
  explicit GateGuard(InFlightGate& gate) : gate_(gate) { gate_.acquire(); }
  ~GateGuard() { gate_.release(); }
  InFlightGate& gate_;
};

}  // namespace

struct HttpBackend::Impl {
  HttpBackendConfig config;
  InFlightGate gate;

  explicit Impl(HttpBackendConfig c) : config(std::move(c)), gate(config.max_in_flight) {}

  std::vector<std::string> post(const CompletionRequest& request, int n) {
    const std::string body = build_body(config, request, n).dump();
    GateGuard guard(gate);

    std::string last_error;
    for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
      if (attempt > 0) {
        const auto backoff =
            std::chrono::milliseconds(config.backoff_initial_ms * (1LL << (attempt - 1)));
        std::this_thread::sleep_for(backoff);
      }

      httplib::Client client(config.base_url);
      client.set_connection_timeout(config.timeout_sec, 0);
      client.set_read_timeout(config.timeout_sec, 0);
      client.set_write_timeout(config.timeout_sec, 0);
      httplib::Headers headers;
      if (!config.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + config.api_key);
      }

      httplib::Result result = client.Post(config.path, headers, body, "application/json");
      if (!result) {
        last_error = "transport failure: " + httplib::to_string(result.error());
        continue;  // retryable
      }
      if (result->status >= 200 && result->status < 300) {
        return extract_choices(result->body, n);
      }
      if (retryable_status(result->status)) {
        last_error = "status " + std::to_string(result->status);
        continue;
      }
      fail(ErrorKind::BackendRefused, config.base_url + " returned status " +
                                          std::to_string(result->status) + ": " +
                                          body_snippet(result->body));
    }
    fail(ErrorKind::TransportError, config.base_url + " unreachable after " +
                                        std::to_string(config.max_retries + 1) + " attempts (" +
                                        last_error + ")");
  }
};

HttpBackend::HttpBackend(HttpBackendConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {
  if (impl_->config.base_url.empty()) {
    fail(ErrorKind::ConfigError, "http backend needs a base_url");
  }
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::name() const { return "http:" + impl_->config.model; }

std::string HttpBackend::complete(const CompletionRequest& request) {
  return impl_->post(request, 1).front();
}

std::vector<std::string> HttpBackend::complete_many(const CompletionRequest& request, int n) {
  if (n <= 0) return {};
  // One round trip; the server fans out the n samples.
  return impl_->post(request, n);
}

}  // namespace pop
