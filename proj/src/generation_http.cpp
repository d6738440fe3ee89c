#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "inject/errors.hpp"
#include "inject/retrieval_prompt.hpp"

namespace inject {

HttpGenerationBackend::HttpGenerationBackend(HttpBackendOptions options) : options_(std::move(options)) {
  const std::string& url = options_.endpoint;
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0)
    throw ContractError("generation endpoint must start with http:// (got '" + url + "')");
  const auto slash = url.find('/', scheme.size());
  base_ = slash == std::string::npos ? url : url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url.substr(slash);
  if (base_.size() == scheme.size()) throw ContractError("generation endpoint has no host: '" + url + "'");
  if (options_.max_retries < 0) throw ContractError("max_retries must be nonnegative");
}

std::string HttpGenerationBackend::generate(const std::string& prompt, int max_words) {
  httplib::Client client(base_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  const std::string body = nlohmann::json{{"prompt", prompt}, {"max_words", max_words}}.dump();

  std::string last_error;
  auto backoff = options_.initial_backoff;
  for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    auto res = client.Post(path_, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "server status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw BackendError("generation endpoint returned status " + std::to_string(res->status) + " for prompt '" +
                         prompt + "'");
    try {
      return nlohmann::json::parse(res->body).at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("malformed generation response: ") + e.what());
    }
  }
  throw BackendError("generation failed after " + std::to_string(options_.max_retries + 1) + " attempts for prompt '" +
                     prompt + "': " + last_error);
}

}  // namespace inject
