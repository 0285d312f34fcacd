#include "wpcl/vlmclient.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "wpcl/rng.hpp"
#include "wpcl/serialize.hpp"

namespace wpcl {

const std::string& canonical_prompt() {
  static const std::string prompt =
      "Give me a list of objects that appear in the given image. Ignore the general "
      "environmental objects such as walls, floors or rooftops. Please only answer with a list "
      "of objects, and separate each object by a comma.";
  return prompt;
}

namespace {

struct Rgb {
  unsigned char r, g, b;
};

Rgb label_color(const std::string& label) {
  const std::uint64_t h = mix64(fnv1a64(label));
  return {static_cast<unsigned char>(64 + (h & 0x7f)),
          static_cast<unsigned char>(64 + ((h >> 8) & 0x7f)),
          static_cast<unsigned char>(64 + ((h >> 16) & 0x7f))};
}

const char kBase64Table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 2 < bytes.size()) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += kBase64Table[(v >> 18) & 63];
    out += kBase64Table[(v >> 12) & 63];
    out += kBase64Table[(v >> 6) & 63];
    out += kBase64Table[v & 63];
    i += 3;
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out += kBase64Table[(v >> 18) & 63];
    out += kBase64Table[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out += kBase64Table[(v >> 18) & 63];
    out += kBase64Table[(v >> 12) & 63];
    out += kBase64Table[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

}  // namespace

std::string render_observation_ppm(const GridEnvironment& env, const Observation& obs,
                                   const ObservationSpec& spec) {
  constexpr int kScale = 6;
  const int r = spec.range;
  const int side = (2 * r + 1) * kScale;
  std::vector<Rgb> px(static_cast<std::size_t>(side) * side, Rgb{24, 24, 24});

  auto paint = [&](int wx, int wy, Rgb color) {
    // World +y is up; image rows grow downward.
    const int cx = (wx - (obs.pose.cell.x - r)) * kScale;
    const int cy = ((obs.pose.cell.y + r) - wy) * kScale;
    for (int dy = 0; dy < kScale; ++dy) {
      for (int dx = 0; dx < kScale; ++dx) {
        px[static_cast<std::size_t>(cy + dy) * side + (cx + dx)] = color;
      }
    }
  };

  for (int wy = obs.pose.cell.y - r; wy <= obs.pose.cell.y + r; ++wy) {
    for (int wx = obs.pose.cell.x - r; wx <= obs.pose.cell.x + r; ++wx) {
      Cell c{wx, wy};
      if (!env.in_bounds(c)) continue;
      paint(wx, wy, env.wall(c) ? Rgb{0, 0, 0} : Rgb{236, 236, 236});
    }
  }
  for (int id : obs.visible_ids) {
    const ObjectInstance& o = env.object(id);
    paint(o.cell.x, o.cell.y, label_color(o.label));
  }
  paint(obs.pose.cell.x, obs.pose.cell.y, Rgb{40, 90, 220});

  std::string out = "P6\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  out.reserve(out.size() + px.size() * 3);
  for (const Rgb& p : px) {
    out += static_cast<char>(p.r);
    out += static_cast<char>(p.g);
    out += static_cast<char>(p.b);
  }
  return out;
}

std::string make_image_data_url(const std::string& ppm_bytes) {
  return "data:image/x-portable-pixmap;base64," + base64_encode(ppm_bytes);
}

namespace {

nlohmann::json record_to_json(const VlmRequestRecord& r) {
  nlohmann::json j;
  j["env_seed"] = r.env_seed;
  j["observation_index"] = r.observation_index;
  j["model_name"] = r.model_name;
  j["image_reference"] = r.image_reference;
  j["prompt_text"] = r.prompt_text;
  j["response_text"] = r.response_text;
  j["latency_seconds"] = r.latency_seconds;
  j["attempt_count"] = r.attempt_count;
  return j;
}

VlmRequestRecord record_from_json(const nlohmann::json& j) {
  VlmRequestRecord r;
  r.env_seed = j.at("env_seed").get<std::uint64_t>();
  r.observation_index = j.at("observation_index").get<int>();
  r.model_name = j.at("model_name").get<std::string>();
  r.image_reference = j.value("image_reference", "");
  r.prompt_text = j.value("prompt_text", "");
  r.response_text = j.at("response_text").get<std::string>();
  r.latency_seconds = j.value("latency_seconds", 0.0);
  r.attempt_count = j.value("attempt_count", 0);
  return r;
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

VlmClient::VlmClient(const EndpointConfig& cfg) : cfg_(cfg) {
  if (cfg_.timeout_seconds <= 0.0) throw ConfigError("vlm timeout must be positive");
  if (cfg_.max_retries < 0) throw ConfigError("vlm max_retries must be nonnegative");
  if (cfg_.max_in_flight < 1) throw ConfigError("vlm max_in_flight must be >= 1");
  if (cfg_.base_url.empty()) throw ConfigError("vlm base_url must be set");

  // Split "scheme://host:port/prefix" into client target and path prefix.
  const std::size_t scheme_end = cfg_.base_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("vlm base_url needs a scheme");
  const std::size_t path_start = cfg_.base_url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    host_ = cfg_.base_url;
  } else {
    host_ = cfg_.base_url.substr(0, path_start);
    path_prefix_ = cfg_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  }
  jitter_state_ = mix_seed(cfg_.seed, 0x6a6974u);
  load_cache();
}

VlmClient::~VlmClient() = default;

void VlmClient::load_cache() {
  if (cfg_.cache_path.empty() || !file_exists(cfg_.cache_path)) return;
  std::istringstream in(read_file(cfg_.cache_path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw IoError("corrupt vlm cache line in " + cfg_.cache_path);
    VlmRequestRecord rec = record_from_json(j);
    cache_[{rec.env_seed, rec.observation_index, rec.model_name}] = std::move(rec);
  }
}

void VlmClient::append_cache(const VlmRequestRecord& rec) {
  // Caller holds mu_.
  cache_[{rec.env_seed, rec.observation_index, rec.model_name}] = rec;
  if (!cfg_.cache_path.empty()) append_line(cfg_.cache_path, record_to_json(rec).dump());
}

int VlmClient::cache_size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return static_cast<int>(cache_.size());
}

std::string VlmClient::post_once(const std::string& image_reference) {
  httplib::Client cli(host_);
  const int sec = static_cast<int>(cfg_.timeout_seconds);
  const int usec = static_cast<int>((cfg_.timeout_seconds - sec) * 1e6);
  cli.set_connection_timeout(sec, usec);
  cli.set_read_timeout(sec, usec);
  cli.set_write_timeout(sec, usec);

  httplib::Headers headers;
  if (!cfg_.api_key_env_var.empty()) {
    const char* key = std::getenv(cfg_.api_key_env_var.c_str());
    if (key == nullptr || *key == '\0') {
      throw VlmError(VlmError::Kind::MissingCredentials,
                     "environment variable " + cfg_.api_key_env_var + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  nlohmann::json body;
  body["model"] = cfg_.model_name;
  body["messages"] = nlohmann::json::array(
      {{{"role", "user"},
        {"content", nlohmann::json::array(
                        {{{"type", "text"}, {"text", canonical_prompt()}},
                         {{"type", "image_url"},
                          {"image_url", {{"url", image_reference}}}}})}}});

  auto res = cli.Post(path_prefix_ + "/chat/completions", headers, body.dump(),
                      "application/json");
  if (!res) {
    switch (res.error()) {
      case httplib::Error::ConnectionTimeout:
      case httplib::Error::Read:
      case httplib::Error::Write:
        throw VlmError(VlmError::Kind::Timeout, "vlm request timed out");
      default:
        throw VlmError(VlmError::Kind::Connection,
                       "vlm connection failed: " + httplib::to_string(res.error()));
    }
  }
  if (res->status != 200) {
    throw VlmError(VlmError::Kind::HttpStatus,
                   "vlm endpoint returned HTTP " + std::to_string(res->status), res->status);
  }

  nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("choices") || !reply["choices"].is_array() ||
      reply["choices"].empty() || !reply["choices"][0].contains("message") ||
      !reply["choices"][0]["message"].contains("content") ||
      !reply["choices"][0]["message"]["content"].is_string()) {
    throw VlmError(VlmError::Kind::MalformedResponse,
                   "vlm response lacks choices[0].message.content text");
  }
  return reply["choices"][0]["message"]["content"].get<std::string>();
}

std::string VlmClient::request_objects(const std::string& image_reference, int* attempt_count,
                                       double* latency_seconds) {
  // Concurrency gate: the whole retry span counts as one in-flight request.
  {
    std::unique_lock<std::mutex> lock(mu_);
    slot_free_.wait(lock, [&] { return in_flight_ < cfg_.max_in_flight; });
    ++in_flight_;
  }
  struct SlotRelease {
    VlmClient* c;
    ~SlotRelease() {
      {
        std::lock_guard<std::mutex> lock(c->mu_);
        --c->in_flight_;
      }
      c->slot_free_.notify_one();
    }
  } release{this};

  const auto started = std::chrono::steady_clock::now();
  for (int attempt = 0;; ++attempt) {
    try {
      std::string text = post_once(image_reference);
      if (attempt_count) *attempt_count = attempt + 1;
      if (latency_seconds) {
        *latency_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      }
      return text;
    } catch (const VlmError& e) {
      const bool transient = e.kind == VlmError::Kind::Timeout ||
                             e.kind == VlmError::Kind::Connection ||
                             (e.kind == VlmError::Kind::HttpStatus &&
                              retryable_status(e.http_status));
      if (!transient || attempt >= cfg_.max_retries) {
        if (attempt_count) *attempt_count = attempt + 1;
        throw;
      }
    }
    double delay = cfg_.backoff_base_seconds * std::pow(2.0, attempt);
    {
      std::lock_guard<std::mutex> lock(mu_);
      jitter_state_ = mix64(jitter_state_);
      const double u = static_cast<double>(jitter_state_ >> 11) / 9007199254740992.0;
      delay *= 1.0 + cfg_.backoff_jitter * u;
    }
    std::this_thread::sleep_for(std::chrono::duration<double>(delay));
  }
}

VlmRequestRecord VlmClient::detect(const GridEnvironment& env, const Observation& obs,
                                   const ObservationSpec& spec) {
  const CacheKey key{env.seed(), obs.index, cfg_.model_name};
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }

  VlmRequestRecord rec;
  rec.env_seed = env.seed();
  rec.observation_index = obs.index;
  rec.model_name = cfg_.model_name;
  rec.image_reference = make_image_data_url(render_observation_ppm(env, obs, spec));
  rec.prompt_text = canonical_prompt();
  rec.response_text = request_objects(rec.image_reference, &rec.attempt_count,
                                      &rec.latency_seconds);

  std::lock_guard<std::mutex> lock(mu_);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;  // another thread landed first
  append_cache(rec);
  return rec;
}

std::vector<DetectionReport> VlmClient::detect_history(const GridEnvironment& env,
                                                       const std::vector<Observation>& history,
                                                       const ObservationSpec& spec) {
  std::vector<DetectionReport> reports(history.size());
  std::vector<std::exception_ptr> errors(history.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= history.size()) return;
      try {
        VlmRequestRecord rec = detect(env, history[i], spec);
        DetectionReport r;
        r.observation_index = history[i].index;
        r.labels = parse_object_list(rec.response_text);
        r.raw_text = rec.response_text;
        reports[i] = std::move(r);
      } catch (VlmError& e) {
        e.observation_index = history[i].index;
        errors[i] = std::make_exception_ptr(e);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const int n_threads =
      std::max(1, std::min<int>(cfg_.max_in_flight, static_cast<int>(history.size())));
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
  return reports;
}

}  // namespace wpcl
