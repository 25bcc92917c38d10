// Copyright 2026 The MAVL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Optional LLM-backed generator of aspect descriptions for new diseases.
//
// Wire format: HTTP POST to MAVL_LLM_URL with JSON body {"model", "prompt"};
// the endpoint answers {"text"}. MAVL_LLM_KEY, when set, is sent as a bearer
// token. Every answer is cached under
//   <cache_dir>/<fnv64(entity, aspect, template hash)>.json
// and a cached answer is never re-requested.

#pragma once

#include <cstdlib>
#include <map>
#include <string>
#include <vector>

// Eigen (via common.hpp) must precede httplib, whose <resolv.h> defines _res.
#include "mavl/common.hpp"

#include "httplib.h"
#include "json.hpp"

namespace mavl {

struct LlmClientConfig {
  std::string url;  // http://host:port/path
  std::string api_key;
  std::string model = "gpt-4";
  std::string prompt_template =
      "Describe the {aspect} of {entity} as it appears on a chest X-ray in one sentence.";
  std::filesystem::path cache_dir = ".mavl_cache/llm";
  int timeout_seconds = 30;

  static LlmClientConfig from_env() {
    LlmClientConfig c;
    if (const char* u = std::getenv("MAVL_LLM_URL")) c.url = u;
    if (const char* k = std::getenv("MAVL_LLM_KEY")) c.api_key = k;
    return c;
  }
};

inline std::string render_prompt(const std::string& tmpl, const std::string& entity,
                                 const std::string& aspect) {
  std::string out;
  for (size_t i = 0; i < tmpl.size();) {
    if (tmpl.compare(i, 8, "{entity}") == 0) {
      out += entity;
      i += 8;
    } else if (tmpl.compare(i, 8, "{aspect}") == 0) {
      out += aspect;
      i += 8;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

inline std::filesystem::path llm_cache_path(const LlmClientConfig& cfg, const std::string& entity,
                                            const std::string& aspect) {
  uint64_t h = fnv1a(entity);
  h = fnv1a(std::string_view("\0", 1), h);
  h = fnv1a(aspect, h);
  h = fnv1a(std::string_view("\0", 1), h);
  h = fnv1a(hex64(fnv1a(cfg.prompt_template)), h);
  return cfg.cache_dir / (hex64(h) + ".json");
}

class LlmDescriptionClient {
 public:
  explicit LlmDescriptionClient(LlmClientConfig cfg) : cfg_(std::move(cfg)) {}

  // Number of HTTP requests issued by this client so far.
  int requests_issued() const { return requests_; }

  std::map<std::string, std::string> fetch(const std::string& entity,
                                           const std::vector<std::string>& aspect_names) {
    std::map<std::string, std::string> out;
    for (const auto& aspect : aspect_names) out[aspect] = fetch_one(entity, aspect);
    return out;
  }

  std::string fetch_one(const std::string& entity, const std::string& aspect) {
    const auto path = llm_cache_path(cfg_, entity, aspect);
    if (std::filesystem::exists(path)) return read_cached(path, entity, aspect);

    const std::string text = request(entity, aspect);
    nlohmann::json rec = {{"entity", entity},
                          {"aspect", aspect},
                          {"template_hash", hex64(fnv1a(cfg_.prompt_template))},
                          {"text", text}};
    write_file_atomic(path, rec.dump(2) + "\n");
    return text;
  }

 private:
  std::string read_cached(const std::filesystem::path& path, const std::string& entity,
                          const std::string& aspect) const {
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw CacheCorrupt(path.string() + ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string() ||
        rec.value("entity", "") != entity || rec.value("aspect", "") != aspect)
      throw CacheCorrupt(path.string() + ": record does not match " + entity + "/" + aspect);
    return rec["text"].get<std::string>();
  }

  std::string request(const std::string& entity, const std::string& aspect) {
    const std::string ctx = entity + "/" + aspect + ": ";
    if (cfg_.url.empty()) throw NetworkError(ctx + "MAVL_LLM_URL is not set");
    const auto scheme_end = cfg_.url.find("://");
    const auto path_start =
        cfg_.url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    const std::string origin = cfg_.url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : cfg_.url.substr(path_start);

    httplib::Client client(origin);
    client.set_connection_timeout(cfg_.timeout_seconds, 0);
    client.set_read_timeout(cfg_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
    const nlohmann::json body = {{"model", cfg_.model},
                                 {"prompt", render_prompt(cfg_.prompt_template, entity, aspect)}};
    ++requests_;
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) throw NetworkError(ctx + "request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw NetworkError(ctx + "endpoint returned HTTP " + std::to_string(res->status));
    try {
      auto reply = nlohmann::json::parse(res->body);
      return reply.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw NetworkError(ctx + "malformed response: " + e.what());
    }
  }

  LlmClientConfig cfg_;
  int requests_ = 0;
};

inline std::map<std::string, std::string> fetch_descriptions(
    const std::string& entity, const std::vector<std::string>& aspect_names,
    const LlmClientConfig& cfg) {
  LlmDescriptionClient client(cfg);
  return client.fetch(entity, aspect_names);
}

}  // namespace mavl
