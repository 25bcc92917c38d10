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

#include "mavl/llm_client.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "test_util.hpp"

namespace mavl {
namespace {

// Local endpoint answering every POST with a fixed text and counting hits.
class MockEndpoint {
 public:
  MockEndpoint() {
    server_.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
      ++hits_;
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      res.set_content(R"({"text": "grainy, hazy texture"})", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockEndpoint() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/generate"; }
  int hits() const { return hits_; }
  std::string last_body() const { return last_body_; }
  std::string last_auth() const { return last_auth_; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> hits_{0};
  std::string last_body_;
  std::string last_auth_;
};

TEST(LlmClient, ColdCallWritesCacheAndWarmCallIssuesNoRequest) {
  MockEndpoint endpoint;
  LlmClientConfig cfg;
  cfg.url = endpoint.url();
  cfg.api_key = "secret";
  cfg.cache_dir = testing::scratch_dir("llm_cache");

  const auto first = fetch_descriptions("covid-19", {"texture", "shape"}, cfg);
  EXPECT_EQ(first.at("texture"), "grainy, hazy texture");
  EXPECT_EQ(first.at("shape"), "grainy, hazy texture");
  EXPECT_EQ(endpoint.hits(), 2);
  EXPECT_TRUE(std::filesystem::exists(llm_cache_path(cfg, "covid-19", "texture")));
  EXPECT_EQ(endpoint.last_auth(), "Bearer secret");
  const auto body = nlohmann::json::parse(endpoint.last_body());
  EXPECT_EQ(body.at("model"), "gpt-4");
  EXPECT_NE(body.at("prompt").get<std::string>().find("covid-19"), std::string::npos);

  LlmDescriptionClient warm(cfg);
  EXPECT_EQ(warm.fetch_one("covid-19", "texture"), "grainy, hazy texture");
  EXPECT_EQ(warm.requests_issued(), 0);
  EXPECT_EQ(endpoint.hits(), 2);
}

TEST(LlmClient, CacheKeyDependsOnPromptTemplate) {
  LlmClientConfig a, b;
  b.prompt_template = "Explain {aspect} for {entity}.";
  EXPECT_NE(llm_cache_path(a, "covid-19", "texture"), llm_cache_path(b, "covid-19", "texture"));
  EXPECT_NE(llm_cache_path(a, "covid-19", "texture"), llm_cache_path(a, "covid-19", "shape"));
}

TEST(LlmClient, CachedEntryNeedsNoEndpoint) {
  LlmClientConfig cfg;
  cfg.cache_dir = testing::scratch_dir("llm_cached_only");
  cfg.url = "http://127.0.0.1:1/unused";
  nlohmann::json rec = {{"entity", "covid-19"}, {"aspect", "texture"}, {"text", "cached text"}};
  write_file_atomic(llm_cache_path(cfg, "covid-19", "texture"), rec.dump());
  LlmDescriptionClient client(cfg);
  EXPECT_EQ(client.fetch_one("covid-19", "texture"), "cached text");
  EXPECT_EQ(client.requests_issued(), 0);
}

TEST(LlmClient, UnreachableEndpointRaisesNetworkErrorWithContext) {
  LlmClientConfig cfg;
  cfg.cache_dir = testing::scratch_dir("llm_unreachable");
  cfg.url = "http://127.0.0.1:1/generate";
  cfg.timeout_seconds = 2;
  try {
    fetch_descriptions("covid-19", {"texture"}, cfg);
    FAIL() << "expected NetworkError";
  } catch (const NetworkError& e) {
    EXPECT_NE(std::string(e.what()).find("covid-19/texture"), std::string::npos);
  }
  cfg.url.clear();
  EXPECT_THROW(fetch_descriptions("covid-19", {"texture"}, cfg), NetworkError);
}

TEST(LlmClient, CorruptCacheIsReported) {
  LlmClientConfig cfg;
  cfg.cache_dir = testing::scratch_dir("llm_corrupt");
  write_file_atomic(llm_cache_path(cfg, "covid-19", "texture"), "{ truncated");
  EXPECT_THROW(fetch_descriptions("covid-19", {"texture"}, cfg), CacheCorrupt);
  nlohmann::json wrong = {{"entity", "edema"}, {"aspect", "texture"}, {"text", "x"}};
  write_file_atomic(llm_cache_path(cfg, "covid-19", "texture"), wrong.dump());
  EXPECT_THROW(fetch_descriptions("covid-19", {"texture"}, cfg), CacheCorrupt);
}

TEST(LlmClient, PromptTemplateSubstitution) {
  EXPECT_EQ(render_prompt("{aspect} of {entity}; {entity}", "edema", "texture"),
            "texture of edema; edema");
}

}  // namespace
}  // namespace mavl
