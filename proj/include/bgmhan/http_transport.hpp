#pragma once

// Plain-HTTP transport for RemoteClient: POSTs the JSON request body to
// SAR_REMOTE_URL and returns the response body.

#include <regex>
#include <string>

#include <httplib.h>

#include "bgmhan/error.hpp"
#include "bgmhan/sar.hpp"

namespace bgmhan {

inline Transport http_transport(const RemoteOptions& opt) {
  static const std::regex url_re(R"(^(http://[^/]+)(/.*)?$)");
  std::smatch m;
  if (opt.url.empty()) throw UsageError("remote client needs SAR_REMOTE_URL");
  if (!std::regex_match(opt.url, m, url_re)) {
    throw UsageError("SAR_REMOTE_URL must look like http://host[:port]/path, got '" + opt.url + "'");
  }
  const std::string base = m[1].str();
  const std::string path = m[2].matched ? m[2].str() : "/";
  const int timeout_ms = opt.timeout_ms;
  return [base, path, timeout_ms](const std::string& body) -> std::string {
    httplib::Client client(base);
    const auto sec = timeout_ms / 1000, usec = (timeout_ms % 1000) * 1000;
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    client.set_write_timeout(sec, usec);
    const auto res = client.Post(path, body, "application/json");
    if (!res) throw TransportError("request to " + base + path + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw TransportError("HTTP status " + std::to_string(res->status));
    return res->body;
  };
}

}  // namespace bgmhan
