#pragma once

#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "nsdf/sds/sds.hpp"

namespace nsdf::sds {

std::string base64_encode(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> base64_decode(const std::string& text);

/// Little-endian float32 planar payload, base64-encoded.
std::string encode_image_payload(const Image& image);
Image decode_image_payload(const std::string& b64, int width, int height, int channels);

/// Wire-level problem with a named field (maps to HTTP 400).
class ProtocolError : public ValidationError {
 public:
  ProtocolError(const std::string& field, const std::string& what) : ValidationError(what), field_(field) {}
  [[nodiscard]] const std::string& field() const { return field_; }

 private:
  std::string field_;
};

std::string request_to_json(const GuidanceRequest& request);
GuidanceRequest request_from_json(const std::string& body);
std::string response_to_json(const GuidanceResponse& response);
GuidanceResponse response_from_json(const std::string& body);

/// HTTP client for POST /v1/sds_gradient and GET /v1/health. Requests are serialized.
class RemoteGuidance final : public GuidanceOracle {
 public:
  explicit RemoteGuidance(const std::string& base_url, double timeout_seconds = 60.0);
  ~RemoteGuidance() override;
  GuidanceResponse sds_gradient(const GuidanceRequest& request) override;
  OracleHealth health() override;
  /// Throws RuntimeError unless the server is healthy and reports this client's schedule hash.
  void verify_schedule();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Serves an oracle over the wire protocol.
class GuidanceServer {
 public:
  explicit GuidanceServer(GuidanceOracle& oracle, std::size_t max_pixels = 1024 * 1024);
  ~GuidanceServer();
  /// Binds and returns the port (pass 0 for an ephemeral port).
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  /// listen() on a background thread.
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

}  // namespace nsdf::sds
