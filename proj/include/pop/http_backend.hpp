#pragma once

#include <memory>
#include <string>

#include "pop/panel.hpp"

namespace pop {

// Chat-completions HTTP backend. POSTs
//   {model, messages:[{role, content}], temperature, max_tokens, n, seed}
// and reads choices[i].message.content. Images are attached as image_url
// content parts (plain URL or data: base64). Retries transport failures and
// retryable statuses (408/429/5xx) with exponential backoff; other non-success
// statuses raise BackendRefused immediately.
struct HttpBackendConfig {
  std::string base_url;  // e.g. "http://127.0.0.1:8089"
  std::string path = "/v1/chat/completions";
  std::string model = "panel-member";
  std::string api_key;      // optional; sent as a Bearer token
  int max_retries = 2;      // retries after the first attempt
  int backoff_initial_ms = 50;
  int timeout_sec = 30;
  int max_in_flight = 4;    // concurrent requests through this backend
};

class HttpBackend final : public GenerationBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  ~HttpBackend() override;

  std::string name() const override;
  std::string complete(const CompletionRequest& request) override;
  std::vector<std::string> complete_many(const CompletionRequest& request, int n) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pop
