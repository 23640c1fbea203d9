#include "nsdf/sds/protocol.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstring>
#include <mutex>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "nsdf/render/image.hpp"

namespace nsdf::sds {

using nlohmann::json;

std::string base64_encode(const std::vector<unsigned char>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ProtocolError("payload", "base64 length is not a multiple of 4");
  std::vector<unsigned char> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw ProtocolError("payload", "invalid base64");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string encode_image_payload(const Image& image) {
  const std::vector<float> planar = render::to_planar(image);
  std::vector<unsigned char> bytes(planar.size() * sizeof(float));
  std::memcpy(bytes.data(), planar.data(), bytes.size());  // host is little-endian (checked in io/binary.hpp)
  return base64_encode(bytes);
}

Image decode_image_payload(const std::string& b64, int width, int height, int channels) {
  const std::vector<unsigned char> bytes = base64_decode(b64);
  const std::size_t expected = static_cast<std::size_t>(width) * height * channels * sizeof(float);
  if (bytes.size() != expected) throw ProtocolError("image", "payload size does not match width*height*channels");
  std::vector<float> planar(bytes.size() / sizeof(float));
  std::memcpy(planar.data(), bytes.data(), bytes.size());
  return render::from_planar(width, height, channels, planar);
}

namespace {

template <typename T>
T field(const json& j, const char* name) {
  if (!j.contains(name)) throw ProtocolError(name, std::string("missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw ProtocolError(name, std::string("field '") + name + "' has the wrong type");
  }
}

void check_shape(int w, int h, int c) {
  if (w <= 0) throw ProtocolError("width", "width must be positive");
  if (h <= 0) throw ProtocolError("height", "height must be positive");
  if (c <= 0 || c > 4) throw ProtocolError("channels", "channels must be in 1..4");
}

}  // namespace

std::string request_to_json(const GuidanceRequest& r) {
  json j;
  j["width"] = r.image.width;
  j["height"] = r.image.height;
  j["channels"] = r.image.channels();
  j["timestep"] = r.timestep;
  j["prompt"] = r.prompt;
  j["cfg_scale"] = r.cfg_scale;
  if (r.noise_seed) j["noise_seed"] = *r.noise_seed;
  if (r.grid) j["grid"] = {{"rows", r.grid->rows}, {"cols", r.grid->cols}, {"active", r.grid->active}};
  j["image"] = encode_image_payload(r.image);
  return j.dump();
}

GuidanceRequest request_from_json(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception&) {
    throw ProtocolError("body", "request body is not valid JSON");
  }
  if (!j.is_object()) throw ProtocolError("body", "request body must be a JSON object");
  const int w = field<int>(j, "width");
  const int h = field<int>(j, "height");
  const int c = field<int>(j, "channels");
  check_shape(w, h, c);
  GuidanceRequest r;
  r.timestep = field<double>(j, "timestep");
  if (!(r.timestep >= 0.0 && r.timestep <= 1.0)) throw ProtocolError("timestep", "timestep must lie in [0, 1]");
  r.prompt = field<std::string>(j, "prompt");
  r.cfg_scale = field<double>(j, "cfg_scale");
  if (j.contains("noise_seed") && !j["noise_seed"].is_null()) {
    if (!j["noise_seed"].is_number_unsigned() && !j["noise_seed"].is_number_integer())
      throw ProtocolError("noise_seed", "noise_seed must be an unsigned integer");
    if (j["noise_seed"].is_number_integer() && !j["noise_seed"].is_number_unsigned() && j["noise_seed"].get<long long>() < 0)
      throw ProtocolError("noise_seed", "noise_seed must be an unsigned integer");
    r.noise_seed = j["noise_seed"].get<std::uint64_t>();
  }
  if (j.contains("grid") && !j["grid"].is_null()) {
    const json& g = j["grid"];
    GridLayout layout{field<int>(g, "rows"), field<int>(g, "cols"), field<int>(g, "active")};
    if (layout.rows != 2 || layout.cols != 2 || layout.active < 0 || layout.active > 3)
      throw ProtocolError("grid", "grid must be {rows: 2, cols: 2, active: 0..3}");
    r.grid = layout;
  }
  r.image = decode_image_payload(field<std::string>(j, "image"), w, h, c);
  if (!r.image.data.allFinite()) throw ProtocolError("image", "image contains non-finite values");
  return r;
}

std::string response_to_json(const GuidanceResponse& r) {
  json j;
  j["width"] = r.gradient.width;
  j["height"] = r.gradient.height;
  j["channels"] = r.gradient.channels();
  j["gradient"] = encode_image_payload(r.gradient);
  return j.dump();
}

GuidanceResponse response_from_json(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception&) {
    throw ProtocolError("body", "response body is not valid JSON");
  }
  const int w = field<int>(j, "width");
  const int h = field<int>(j, "height");
  const int c = field<int>(j, "channels");
  check_shape(w, h, c);
  GuidanceResponse r;
  r.gradient = decode_image_payload(field<std::string>(j, "gradient"), w, h, c);
  return r;
}

// ---- client ------------------------------------------------------------------

struct RemoteGuidance::Impl {
  std::unique_ptr<httplib::Client> client;
  std::mutex mutex;
};

RemoteGuidance::RemoteGuidance(const std::string& base_url, double timeout_seconds) : impl_(std::make_unique<Impl>()) {
  require(!base_url.empty(), "RemoteGuidance: empty URL");
  impl_->client = std::make_unique<httplib::Client>(base_url);
  if (!impl_->client->is_valid()) throw ValidationError("RemoteGuidance: unsupported URL " + base_url);
  const auto secs = static_cast<time_t>(timeout_seconds);
  const auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
  impl_->client->set_connection_timeout(secs, usecs);
  impl_->client->set_read_timeout(secs, usecs);
  impl_->client->set_write_timeout(secs, usecs);
}

RemoteGuidance::~RemoteGuidance() = default;

GuidanceResponse RemoteGuidance::sds_gradient(const GuidanceRequest& request) {
  request.validate();
  const std::string body = request_to_json(request);
  std::lock_guard<std::mutex> lock(impl_->mutex);
  const auto res = impl_->client->Post("/v1/sds_gradient", body, "application/json");
  if (!res) throw RuntimeError("guidance request failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw RuntimeError("guidance server returned HTTP " + std::to_string(res->status) + ": " + res->body);
  GuidanceResponse r = response_from_json(res->body);
  if (r.gradient.width != request.image.width || r.gradient.height != request.image.height ||
      r.gradient.channels() != request.image.channels())
    throw RuntimeError("guidance server returned a gradient of the wrong shape");
  return r;
}

OracleHealth RemoteGuidance::health() {
  std::lock_guard<std::mutex> lock(impl_->mutex);
  const auto res = impl_->client->Get("/v1/health");
  if (!res) throw RuntimeError("guidance health check failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw RuntimeError("guidance health check returned HTTP " + std::to_string(res->status));
  try {
    const json j = json::parse(res->body);
    return {j.at("status").get<std::string>(), j.at("model_id").get<std::string>(),
            j.at("schedule_hash").get<std::string>()};
  } catch (const json::exception& e) {
    throw RuntimeError(std::string("malformed health response: ") + e.what());
  }
}

void RemoteGuidance::verify_schedule() {
  const OracleHealth h = health();
  if (h.status != "ok") throw RuntimeError("guidance server is not healthy: " + h.status);
  if (h.schedule_hash != schedule_hash())
    throw RuntimeError("guidance server schedule hash " + h.schedule_hash + " does not match client " + schedule_hash());
}

// ---- server ------------------------------------------------------------------

struct GuidanceServer::Impl {
  GuidanceOracle* oracle = nullptr;
  std::size_t max_pixels = 0;
  httplib::Server server;
};

GuidanceServer::GuidanceServer(GuidanceOracle& oracle, std::size_t max_pixels) : impl_(std::make_unique<Impl>()) {
  impl_->oracle = &oracle;
  impl_->max_pixels = max_pixels;
  Impl* im = impl_.get();
  auto error = [](httplib::Response& res, int status, const std::string& msg, const std::string& fld) {
    json j = {{"error", msg}};
    if (!fld.empty()) j["field"] = fld;
    res.status = status;
    res.set_content(j.dump(), "application/json");
  };
  im->server.Get("/v1/health", [im](const httplib::Request&, httplib::Response& res) {
    const OracleHealth h = im->oracle->health();
    res.set_content(json{{"status", h.status}, {"model_id", h.model_id}, {"schedule_hash", h.schedule_hash}}.dump(),
                    "application/json");
  });
  im->server.Post("/v1/sds_gradient", [im, error](const httplib::Request& req, httplib::Response& res) {
    GuidanceRequest request;
    try {
      // Reject oversize payloads before decoding them.
      const json head = json::parse(req.body, nullptr, false);
      if (head.is_object() && head.contains("width") && head.contains("height") && head["width"].is_number_integer() &&
          head["height"].is_number_integer()) {
        const auto px = head["width"].get<long long>() * head["height"].get<long long>();
        if (px > static_cast<long long>(im->max_pixels)) {
          error(res, 413, "image exceeds the configured maximum size", "image");
          return;
        }
      }
      request = request_from_json(req.body);
    } catch (const ProtocolError& e) {
      error(res, 400, e.what(), e.field());
      return;
    } catch (const ValidationError& e) {
      error(res, 400, e.what(), "");
      return;
    }
    try {
      res.set_content(response_to_json(im->oracle->sds_gradient(request)), "application/json");
    } catch (const ValidationError& e) {
      error(res, 400, e.what(), "");
    } catch (const std::exception& e) {
      error(res, 500, e.what(), "");
    }
  });
}

GuidanceServer::~GuidanceServer() { stop(); }

int GuidanceServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw RuntimeError("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw RuntimeError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void GuidanceServer::listen() {
  spdlog::info("guidance server listening");
  impl_->server.listen_after_bind();
}

void GuidanceServer::start() {
  thread_ = std::thread([this] { listen(); });
  impl_->server.wait_until_ready();
}

void GuidanceServer::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace nsdf::sds
