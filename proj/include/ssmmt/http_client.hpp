#pragma once

// HTTP image-search adapter. Expects the endpoint to answer
//   GET <path>?q=<keyword>&count=<k>
// with a JSON array of {"url": ..., "data_base64": ...} objects; inline
// base64 payloads are used when present, otherwise each url is fetched.
// The API key is read from SSMMT_SEARCH_KEY and sent as a bearer token.
//
// Kept in its own header so the offline pipeline never pulls in httplib;
// tests and the e2e run use the fixture client exclusively.

#include <atomic>
#include <cstdlib>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "ssmmt/retrieval.hpp"

namespace ssmmt {

inline std::atomic<int64_t>& http_client_instances() {
  static std::atomic<int64_t> count{0};
  return count;
}

class HttpSearchClient : public SearchClient {
public:
  explicit HttpSearchClient(std::string endpoint) : endpoint_(std::move(endpoint)) {
    ++http_client_instances();
    if (const char* key = std::getenv("SSMMT_SEARCH_KEY")) api_key_ = key;
  }

  std::string id() const override { return "http:" + endpoint_; }

  std::vector<SearchResult> fetch(const std::string& keyword, int k) override {
    auto [host, path] = split_endpoint(endpoint_);
    httplib::Client cli(host);
    cli.set_connection_timeout(10);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = cli.Get(path + "?q=" + httplib::detail::encode_url(keyword) +
                           "&count=" + std::to_string(k),
                       headers);
    if (!res || res->status != 200) {
      throw DataError("search endpoint error for '" + keyword + "': status " +
                      (res ? std::to_string(res->status) : "connect failure"));
    }
    nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.is_array()) {
      throw DataError("search endpoint returned non-JSON-array body");
    }
    std::vector<SearchResult> out;
    for (const auto& item : j) {
      if (int(out.size()) >= k) break;
      std::string source = item.value("url", endpoint_);
      if (item.contains("data_base64")) {
        out.push_back({decode_base64(item["data_base64"].get<std::string>()), source});
      } else if (item.contains("url")) {
        auto [img_host, img_path] = split_endpoint(item["url"].get<std::string>());
        httplib::Client img_cli(img_host);
        auto img = img_cli.Get(img_path);
        if (img && img->status == 200) out.push_back({img->body, source});
      }
    }
    return out;
  }

private:
  static std::pair<std::string, std::string> split_endpoint(const std::string& url) {
    auto scheme_end = url.find("://");
    size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    auto path_start = url.find('/', host_start);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
  }

  static std::string decode_base64(const std::string& in) {
    static constexpr char kTable[] =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    int lut[256];
    std::fill(std::begin(lut), std::end(lut), -1);
    for (int i = 0; i < 64; ++i) lut[uint8_t(kTable[i])] = i;
    std::string out;
    int acc = 0, bits = 0;
    for (char c : in) {
      if (c == '=' || c == '\n' || c == '\r') continue;
      int v = lut[uint8_t(c)];
      if (v < 0) throw DataError("invalid base64 in search response");
      acc = (acc << 6) | v;
      bits += 6;
      if (bits >= 8) {
        bits -= 8;
        out.push_back(char((acc >> bits) & 0xff));
      }
    }
    return out;
  }

  std::string endpoint_;
  std::string api_key_;
};

}  // namespace ssmmt
