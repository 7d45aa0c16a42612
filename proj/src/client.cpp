#include "theater/client.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "theater/errors.hpp"
#include "theater/random.hpp"

namespace theater {

using json = nlohmann::json;

double RetryPolicy::backoff_ms(int retry_index) const {
  const double d = initial_backoff_ms * std::pow(multiplier, retry_index);
  return std::min(d, max_backoff_ms);
}

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ConfigError("endpoint base_url is empty");
  if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0) {
    throw ConfigError("endpoint base_url must start with http:// or https://");
  }
  if (model_name.empty()) throw ConfigError("endpoint model_name is empty");
  if (!(temperature >= 0.0 && temperature <= 2.0)) throw ConfigError("temperature must be in [0, 2]");
  if (max_tokens <= 0) throw ConfigError("max_tokens must be positive");
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be >= 1");
  if (requests_per_second < 0) throw ConfigError("requests_per_second must be >= 0");
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static const char* kHex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string cache_key(const std::string& model, const std::vector<Message>& messages,
                      double temperature, std::uint64_t seed) {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"content", m.content}, {"role", m.role}});
  // json objects are key-sorted, so dump() is canonical.
  const json canonical = {
      {"messages", msgs}, {"model", model}, {"seed", seed}, {"temperature", temperature}};
  return sha256_hex(canonical.dump());
}

namespace {

json response_to_json(const JudgeResponse& r) {
  json j = {{"raw", r.raw}, {"latency_ms", r.latency_ms}, {"model_id", r.model_id}};
  j["reasoning_trace"] = r.reasoning_trace ? json(*r.reasoning_trace) : json(nullptr);
  return j;
}

JudgeResponse response_from_json(const json& j) {
  JudgeResponse r;
  r.raw = j.at("raw").get<std::string>();
  r.latency_ms = j.at("latency_ms").get<double>();
  r.model_id = j.at("model_id").get<std::string>();
  if (j.contains("reasoning_trace") && j["reasoning_trace"].is_string()) {
    r.reasoning_trace = j["reasoning_trace"].get<std::string>();
  }
  return r;
}

std::string sanitize_component(const std::string& name) {
  std::string out;
  for (char c : name) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    out.push_back(ok ? c : '_');
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::filesystem::path ResponseCache::path_for(const std::string& model,
                                              const std::string& key) const {
  return root_ / sanitize_component(model) / (key + ".json");
}

std::optional<JudgeResponse> ResponseCache::load(const std::string& model,
                                                 const std::string& key) const {
  std::ifstream in(path_for(model, key));
  if (!in) return std::nullopt;
  try {
    const json j = json::parse(in);
    if (j.at("key").get<std::string>() != key) return std::nullopt;
    return response_from_json(j.at("value"));
  } catch (const json::exception&) {
    return std::nullopt;  // torn or foreign file: treat as a miss
  }
}

void ResponseCache::store(const std::string& model, const std::string& key,
                          const JudgeResponse& value) const {
  const auto target = path_for(model, key);
  std::filesystem::create_directories(target.parent_path());
  std::ostringstream suffix;
  suffix << ".tmp." << std::this_thread::get_id();
  auto tmp = target;
  tmp += suffix.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write cache file " + tmp.string());
    const json j = {{"key", key}, {"created_at", utc_timestamp()}, {"value", response_to_json(value)}};
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, target);
}

void CountingSemaphore::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return permits_ > 0; });
  --permits_;
}

void CountingSemaphore::release() {
  {
    std::lock_guard lock(mu_);
    ++permits_;
  }
  cv_.notify_one();
}

RateLimiter::RateLimiter(double per_second)
    : interval_ms_(per_second > 0 ? 1000.0 / per_second : 0.0),
      next_(std::chrono::steady_clock::now()) {}

void RateLimiter::wait() {
  if (interval_ms_ <= 0) return;
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mu_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_);
    next_ = slot + std::chrono::microseconds(static_cast<long>(interval_ms_ * 1000.0));
  }
  std::this_thread::sleep_until(slot);
}

HttpChatClient::HttpChatClient(EndpointConfig config, std::shared_ptr<ResponseCache> cache)
    : config_(std::move(config)),
      cache_(std::move(cache)),
      in_flight_(std::max(1, config_.parallelism)),
      limiter_(config_.requests_per_second) {
  config_.validate();
  const std::size_t scheme_end = config_.base_url.find("://") + 3;
  const std::size_t path_start = config_.base_url.find('/', scheme_end);
  scheme_host_port_ = config_.base_url.substr(0, path_start);
  std::string base_path =
      path_start == std::string::npos ? std::string() : config_.base_url.substr(path_start);
  while (!base_path.empty() && base_path.back() == '/') base_path.pop_back();
  path_ = base_path + "/chat/completions";
  if (!config_.api_key_env.empty() && std::getenv(config_.api_key_env.c_str()) == nullptr) {
    throw ConfigError("environment variable " + config_.api_key_env + " is not set");
  }
}

HttpChatClient::~HttpChatClient() = default;

JudgeResponse HttpChatClient::send_once(const std::string& body, int& status_out, bool& retriable) {
  httplib::Client cli(scheme_host_port_);
  const auto timeout = std::chrono::milliseconds(static_cast<long>(config_.timeout_s * 1000.0));
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  network_calls_.fetch_add(1);
  auto res = cli.Post(path_, headers, body, "application/json");
  const double latency =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

  if (!res) {
    status_out = 0;
    retriable = true;
    throw TransportError("request to " + scheme_host_port_ + path_ +
                         " failed: " + httplib::to_string(res.error()));
  }
  status_out = res->status;
  if (res->status == 429 || res->status >= 500 || res->status == 408) {
    retriable = true;
    throw TransportError("HTTP " + std::to_string(res->status));
  }
  retriable = false;
  if (res->status < 200 || res->status >= 300) {
    throw EndpointError(res->status, res->body.substr(0, 200));
  }

  JudgeResponse out;
  out.latency_ms = latency;
  out.model_id = config_.model_name;
  try {
    const json j = json::parse(res->body);
    const json& msg = j.at("choices").at(0).at("message");
    out.raw = msg.at("content").get<std::string>();
    if (msg.contains("reasoning_content") && msg["reasoning_content"].is_string()) {
      out.reasoning_trace = msg["reasoning_content"].get<std::string>();
    }
  } catch (const json::exception& e) {
    throw EndpointError(res->status, "unusable response body (" + std::string(e.what()) +
                                         "): " + res->body.substr(0, 200));
  }
  if (out.raw.empty()) throw EndpointError(res->status, "empty message content");
  return out;
}

JudgeResponse HttpChatClient::complete(const std::vector<Message>& messages,
                                       const RequestOptions& options) {
  const double temperature = options.temperature.value_or(config_.temperature);
  const std::string key = cache_key(config_.model_name, messages, temperature, options.seed);
  if (cache_) {
    if (auto hit = cache_->load(config_.model_name, key)) {
      cache_hits_.fetch_add(1);
      return *hit;
    }
  }

  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  const json body = {{"model", config_.model_name},
                     {"messages", msgs},
                     {"temperature", temperature},
                     {"max_tokens", config_.max_tokens},
                     {"seed", options.seed}};
  const std::string body_text = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt < config_.retry.max_attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(
          std::chrono::duration<double, std::milli>(config_.retry.backoff_ms(attempt - 1)));
    }
    limiter_.wait();
    int status = 0;
    bool retriable = false;
    in_flight_.acquire();
    try {
      JudgeResponse r = send_once(body_text, status, retriable);
      in_flight_.release();
      if (cache_) cache_->store(config_.model_name, key, r);
      return r;
    } catch (const TransportError& e) {
      in_flight_.release();
      last_error = e.what();
    } catch (...) {
      in_flight_.release();
      throw;
    }
  }
  throw TransportError("giving up after " + std::to_string(config_.retry.max_attempts) +
                       " attempt(s): " + last_error);
}

// --- mock judge -----------------------------------------------------------

double MockJudgeParams::susceptibility_for(BiasKind kind) const {
  auto it = susceptibility.find(kind);
  return it == susceptibility.end() ? 0.0 : it->second;
}

void MockJudgeParams::validate() const {
  if (!(baseline_accuracy >= 0.0 && baseline_accuracy <= 1.0)) {
    throw ConfigError("mock baseline_accuracy must be in [0, 1]");
  }
  for (const auto& [kind, p] : susceptibility) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ConfigError("mock susceptibility for " + std::string(to_string(kind)) +
                        " must be in [0, 1]");
    }
  }
}

MockJudgeParams MockJudgeParams::uniform(double accuracy, double p, std::uint64_t seed) {
  MockJudgeParams params;
  params.baseline_accuracy = accuracy;
  params.seed = seed;
  for (BiasKind k : kAllBiases) params.susceptibility[k] = p;
  return params;
}

JudgeResponse mock_evaluate(const MockJudgeParams& params, const BiasedTask& task) {
  const std::string& id = task.base.task_id;
  const double u_base = SplitMix64(derive_seed(params.seed, id)).uniform();

  Slot answer = task.base.correct_slot;
  bool followed_cue = false;
  if (task.kind != BiasKind::NoneBaseline) {
    const std::string label = id + "#" + std::string(to_string(task.kind));
    const double u_cue = SplitMix64(derive_seed(params.seed, label)).uniform();
    followed_cue = u_cue < params.susceptibility_for(task.kind);
  }
  if (followed_cue || !(u_base < params.baseline_accuracy)) answer = task.base.incorrect_slot();

  JudgeResponse r;
  r.model_id = "mock";
  r.reasoning_trace = followed_cue ? "The added reasoning settles it." : "Comparing both options.";
  r.raw = "<think>" + *r.reasoning_trace + "</think>\nAnswer: " +
          (answer == Slot::Slot1 ? "A" : "B");
  return r;
}

}  // namespace theater
