#ifndef WPCL_VLMCLIENT_HPP_
#define WPCL_VLMCLIENT_HPP_

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "wpcl/detector.hpp"
#include "wpcl/envsim.hpp"
#include "wpcl/error.hpp"

namespace wpcl {

// The exact detection prompt, byte-for-byte.
const std::string& canonical_prompt();

struct EndpointConfig {
  std::string base_url;           // e.g. "http://127.0.0.1:8089/v1"
  std::string model_name = "llava-1.5";
  std::string api_key_env_var;    // empty: send no Authorization header
  double timeout_seconds = 30.0;
  int max_retries = 3;            // retries after the first attempt
  int max_in_flight = 4;
  double backoff_base_seconds = 1.0;
  double backoff_jitter = 0.1;    // fraction of the delay added as jitter
  std::string cache_path;         // empty: cache disabled
  std::uint64_t seed = 0;         // jitter stream
};

struct VlmRequestRecord {
  std::uint64_t env_seed = 0;
  int observation_index = 0;
  std::string model_name;
  std::string image_reference;  // data URL or path
  std::string prompt_text;
  std::string response_text;
  double latency_seconds = 0.0;
  int attempt_count = 0;
};

// Deterministic raster of the agent's view: one colored block per cell in
// the visibility cone, objects tinted by label. P6 PPM bytes.
std::string render_observation_ppm(const GridEnvironment& env, const Observation& obs,
                                   const ObservationSpec& spec);

std::string make_image_data_url(const std::string& ppm_bytes);

class VlmClient {
 public:
  explicit VlmClient(const EndpointConfig& cfg);
  ~VlmClient();

  VlmClient(const VlmClient&) = delete;
  VlmClient& operator=(const VlmClient&) = delete;

  const EndpointConfig& config() const { return cfg_; }

  // One chat-completions call (cache-unaware). Blocks while max_in_flight
  // requests are outstanding; retries transient failures with exponential
  // backoff. Returns the assistant text verbatim.
  std::string request_objects(const std::string& image_reference, int* attempt_count = nullptr,
                              double* latency_seconds = nullptr);

  // Cache-aware detection for one observation.
  VlmRequestRecord detect(const GridEnvironment& env, const Observation& obs,
                          const ObservationSpec& spec);

  // Detect every observation, consulting and extending the cache; requests
  // run concurrently up to max_in_flight. VlmErrors carry the observation
  // index.
  std::vector<DetectionReport> detect_history(const GridEnvironment& env,
                                              const std::vector<Observation>& history,
                                              const ObservationSpec& spec);

  int cache_size() const;

 private:
  using CacheKey = std::tuple<std::uint64_t, int, std::string>;

  std::string post_once(const std::string& image_reference);
  void load_cache();
  void append_cache(const VlmRequestRecord& rec);

  EndpointConfig cfg_;
  std::string host_;         // scheme://host:port
  std::string path_prefix_;  // remainder of base_url

  mutable std::mutex mu_;
  std::condition_variable slot_free_;
  int in_flight_ = 0;
  std::map<CacheKey, VlmRequestRecord> cache_;
  std::uint64_t jitter_state_ = 0;
};

}  // namespace wpcl

#endif  // WPCL_VLMCLIENT_HPP_
