#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "theater/injection.hpp"
#include "theater/protocol.hpp"

namespace theater {

struct RequestOptions {
  std::optional<double> temperature;  // overrides the endpoint default
  std::uint64_t seed = 0;             // part of the cache key; sent to the server
};

// Anything that answers a role-tagged message sequence.
class ChatModel {
 public:
  virtual ~ChatModel() = default;
  virtual JudgeResponse complete(const std::vector<Message>& messages,
                                 const RequestOptions& options = {}) = 0;
  virtual std::string model_id() const = 0;
};

struct RetryPolicy {
  int max_attempts = 4;
  double initial_backoff_ms = 500.0;
  double multiplier = 2.0;
  double max_backoff_ms = 8000.0;

  double backoff_ms(int retry_index) const;  // delay before retry #retry_index (0-based)
};

struct EndpointConfig {
  std::string base_url;  // e.g. https://api.openai.com/v1
  std::string model_name;
  double temperature = 0.0;
  int max_tokens = 1024;
  std::string api_key_env;  // name of the environment variable holding the key
  int parallelism = 4;
  double requests_per_second = 0.0;  // 0 = unlimited
  double timeout_s = 120.0;
  RetryPolicy retry;

  void validate() const;  // throws ConfigError
};

// Digest over (model, messages, temperature, seed): lowercase hex SHA-256 of
// the canonical JSON {"messages":[...],"model":...,"seed":...,"temperature":...}.
std::string cache_key(const std::string& model, const std::vector<Message>& messages,
                      double temperature, std::uint64_t seed);

// Lowercase hex SHA-256 of arbitrary bytes.
std::string sha256_hex(std::string_view bytes);

// On-disk content-addressed store: <root>/<model>/<digest>.json. Writes go
// through a temp file + rename so concurrent writers of the same key leave
// one complete file behind.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path root) : root_(std::move(root)) {}

  std::optional<JudgeResponse> load(const std::string& model, const std::string& key) const;
  void store(const std::string& model, const std::string& key, const JudgeResponse& value) const;
  std::filesystem::path path_for(const std::string& model, const std::string& key) const;

 private:
  std::filesystem::path root_;
};

class CountingSemaphore {
 public:
  explicit CountingSemaphore(int permits) : permits_(permits) {}
  void acquire();
  void release();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int permits_;
};

// Spaces request starts at least 1/rate seconds apart.
class RateLimiter {
 public:
  explicit RateLimiter(double per_second);
  void wait();

 private:
  std::mutex mu_;
  double interval_ms_;
  std::chrono::steady_clock::time_point next_;
};

// Chat-completions client: POST <base_url>/chat/completions with
// {model, messages, temperature, max_tokens, seed}; the first choice's
// message content is the raw reply. Retries on timeouts, 429 and 5xx.
class HttpChatClient : public ChatModel {
 public:
  HttpChatClient(EndpointConfig config, std::shared_ptr<ResponseCache> cache);
  ~HttpChatClient() override;

  JudgeResponse complete(const std::vector<Message>& messages,
                         const RequestOptions& options = {}) override;
  std::string model_id() const override { return config_.model_name; }

  JudgeResponse submit(const std::vector<Message>& messages, const RequestOptions& options = {}) {
    return complete(messages, options);
  }

  std::uint64_t network_calls() const { return network_calls_.load(); }
  std::uint64_t cache_hits() const { return cache_hits_.load(); }
  const EndpointConfig& config() const { return config_; }

 private:
  JudgeResponse send_once(const std::string& body, int& status_out, bool& retriable);

  EndpointConfig config_;
  std::shared_ptr<ResponseCache> cache_;
  std::string scheme_host_port_;
  std::string path_;
  CountingSemaphore in_flight_;
  RateLimiter limiter_;
  std::atomic<std::uint64_t> network_calls_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
};

// --- mock judge -----------------------------------------------------------

struct MockJudgeParams {
  double baseline_accuracy = 0.8;
  std::map<BiasKind, double> susceptibility;  // missing kinds count as 0
  std::uint64_t seed = 0;

  double susceptibility_for(BiasKind kind) const;
  void validate() const;  // throws ConfigError
  static MockJudgeParams uniform(double accuracy, double p, std::uint64_t seed);
};

// Deterministic simulated judge. Per task it draws
//   u_base from SplitMix64(derive_seed(seed, task_id))
//   u_cue  from SplitMix64(derive_seed(seed, task_id + "#" + kind))
// and follows the cue (answers the incorrect slot) iff kind != NoneBaseline
// and u_cue < p_kind; otherwise it answers correctly iff u_base < a.
// The reply is "<think>...</think>\nAnswer: X".
JudgeResponse mock_evaluate(const MockJudgeParams& params, const BiasedTask& task);

}  // namespace theater
