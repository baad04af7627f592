#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "guardrl/backend.hpp"
#include "guardrl/completion.hpp"
#include "test_util.hpp"

// After Eigen: <resolv.h> defines a `_res` macro.
#include <httplib.h>

using namespace guardrl;
using guardrl::testing::text_sample;
using nlohmann::json;

namespace {

// Local server; each path scripts one behaviour and counts its hits.
class MockEndpoint {
 public:
  MockEndpoint() {
    server_.Post("/ok", [this](const httplib::Request& req, httplib::Response& res) {
      hit("/ok", req);
      const auto body = json::parse(req.body);
      res.set_content(json{{"completion", "echo:" + body.at("prompt").get<std::string>() + ":" +
                                             std::to_string(body.at("media").size())}}
                          .dump(),
                      "application/json");
    });
    server_.Post("/auth", [this](const httplib::Request& req, httplib::Response& res) {
      hit("/auth", req);
      res.set_content(json{{"completion", req.get_header_value("Authorization") + "|"}}.dump(), "application/json");
    });
    // Fails with the status in the query until the third attempt.
    server_.Post("/flaky", [this](const httplib::Request& req, httplib::Response& res) {
      if (hit("/flaky", req) < 3) {
        res.status = std::stoi(req.get_param_value("status"));
        return;
      }
      res.set_content(R"({"completion": "recovered"})", "application/json");
    });
    server_.Post("/slow", [this](const httplib::Request& req, httplib::Response& res) {
      const auto n = hit("/slow", req);
      if (n == 1) std::this_thread::sleep_for(std::chrono::milliseconds(600));
      res.set_content(R"({"completion": "late"})", "application/json");
    });
    server_.Post("/empty", [this](const httplib::Request& req, httplib::Response& res) {
      hit("/empty", req);
      res.set_content(R"({"completion": ""})", "application/json");
    });
    server_.Post("/badjson", [this](const httplib::Request& req, httplib::Response& res) {
      hit("/badjson", req);
      res.set_content("{not json", "application/json");
    });
    server_.Post("/nofield", [this](const httplib::Request& req, httplib::Response& res) {
      hit("/nofield", req);
      res.set_content(R"({"text": "x"})", "application/json");
    });
    server_.Post("/400", [this](const httplib::Request& req, httplib::Response& res) {
      hit("/400", req);
      res.status = 400;
    });
    server_.Post("/down", [this](const httplib::Request& req, httplib::Response& res) {
      hit("/down", req);
      res.status = 503;
    });
    server_.Post("/annotate", [this](const httplib::Request& req, httplib::Response& res) {
      hit("/annotate", req);
      const auto body = json::parse(req.body);
      const bool harmful = body.at("prompt").get<std::string>().find("bomb") != std::string::npos;
      res.set_content(json{{"completion", render_target("checked the request words",
                                                        Verdict{harmful ? SafetyLabel::harmful
                                                                        : SafetyLabel::unharmful,
                                                                std::nullopt})}}
                          .dump(),
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockEndpoint() {
    server_.stop();
    thread_.join();
  }

  EndpointConfig config(const std::string& path) const {
    EndpointConfig c;
    c.url = "http://127.0.0.1:" + std::to_string(port_) + path;
    c.api_key_env = "GUARDRL_TEST_KEY";
    c.timeout_ms = 2000;
    c.max_attempts = 3;
    c.initial_backoff_ms = 1;
    c.max_backoff_ms = 5;
    return c;
  }

  int hits(const std::string& path) {
    std::lock_guard lock(mu_);
    return hits_[path];
  }
  std::string last_body(const std::string& path) {
    std::lock_guard lock(mu_);
    return bodies_[path];
  }

 private:
  int hit(const std::string& path, const httplib::Request& req) {
    std::lock_guard lock(mu_);
    bodies_[path] = req.body;
    return ++hits_[path];
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mu_;
  std::map<std::string, int> hits_;
  std::map<std::string, std::string> bodies_;
};

CompletionErrorKind kind_of(const CompletionClient& client) {
  try {
    client.complete({"p", {}});
  } catch (const CompletionError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected CompletionError";
  return CompletionErrorKind::network;
}

}  // namespace

class Completion : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { server_ = new MockEndpoint(); }
  static void TearDownTestSuite() {
    delete server_;
    server_ = nullptr;
  }
  static MockEndpoint* server_;
};

MockEndpoint* Completion::server_ = nullptr;

TEST_F(Completion, Success) {
  const CompletionClient client(server_->config("/ok"));
  EXPECT_EQ(client.complete({"hello", {"f1.jpg", "f2.jpg"}}), "echo:hello:2");
  EXPECT_EQ(json::parse(server_->last_body("/ok")), (json{{"prompt", "hello"}, {"media", {"f1.jpg", "f2.jpg"}}}));
  EXPECT_EQ(server_->hits("/ok"), 1);
}

TEST_F(Completion, BearerTokenFromEnvironment) {
  auto cfg = server_->config("/auth");
  ::setenv("GUARDRL_TEST_KEY", "s3cret", 1);
  EXPECT_EQ(CompletionClient(cfg).complete({"p", {}}), "Bearer s3cret|");
  ::unsetenv("GUARDRL_TEST_KEY");
  EXPECT_EQ(CompletionClient(cfg).complete({"p", {}}), "|");
}

TEST_F(Completion, RetriesServerErrorsAndRateLimits) {
  const int before = server_->hits("/flaky");
  EXPECT_EQ(CompletionClient(server_->config("/flaky?status=500")).complete({"p", {}}), "recovered");
  EXPECT_EQ(server_->hits("/flaky") - before, 3);
}

TEST_F(Completion, RetriesRateLimit) {
  MockEndpoint fresh;
  EXPECT_EQ(CompletionClient(fresh.config("/flaky?status=429")).complete({"p", {}}), "recovered");
  EXPECT_EQ(fresh.hits("/flaky"), 3);
}

TEST_F(Completion, GivesUpAfterMaxAttempts) {
  auto cfg = server_->config("/down");
  cfg.max_attempts = 2;
  try {
    CompletionClient(cfg).complete({"p", {}});
    FAIL();
  } catch (const CompletionError& e) {
    EXPECT_EQ(e.kind(), CompletionErrorKind::status);
    EXPECT_EQ(e.status(), 503);
    EXPECT_EQ(e.attempts(), 2);
    EXPECT_TRUE(e.retryable());
  }
  EXPECT_EQ(server_->hits("/down"), 2);
}

TEST_F(Completion, TimeoutIsRetried) {
  auto cfg = server_->config("/slow");
  cfg.timeout_ms = 150;
  EXPECT_EQ(CompletionClient(cfg).complete({"p", {}}), "late");
  EXPECT_EQ(server_->hits("/slow"), 2);
}

TEST_F(Completion, TimeoutKindWhenExhausted) {
  MockEndpoint fresh;
  auto cfg = fresh.config("/slow");
  cfg.timeout_ms = 150;
  cfg.max_attempts = 1;
  EXPECT_EQ(kind_of(CompletionClient(cfg)), CompletionErrorKind::timeout);
}

TEST_F(Completion, NonRetryableFailures) {
  EXPECT_EQ(kind_of(CompletionClient(server_->config("/empty"))), CompletionErrorKind::empty_completion);
  EXPECT_EQ(server_->hits("/empty"), 1);
  EXPECT_EQ(kind_of(CompletionClient(server_->config("/badjson"))), CompletionErrorKind::bad_response);
  EXPECT_EQ(server_->hits("/badjson"), 1);
  EXPECT_EQ(kind_of(CompletionClient(server_->config("/nofield"))), CompletionErrorKind::bad_response);
  EXPECT_EQ(kind_of(CompletionClient(server_->config("/400"))), CompletionErrorKind::status);
  EXPECT_EQ(server_->hits("/400"), 1);
}

TEST_F(Completion, ConnectionRefusedIsNetwork) {
  // Bind then release a port so nothing listens on it.
  int port = 0;
  {
    httplib::Server s;
    port = s.bind_to_any_port("127.0.0.1");
  }
  EndpointConfig cfg;
  cfg.url = "http://127.0.0.1:" + std::to_string(port) + "/x";
  cfg.max_attempts = 2;
  cfg.initial_backoff_ms = 1;
  cfg.timeout_ms = 500;
  try {
    CompletionClient(cfg).complete({"p", {}});
    FAIL();
  } catch (const CompletionError& e) {
    EXPECT_TRUE(e.kind() == CompletionErrorKind::network || e.kind() == CompletionErrorKind::timeout);
    EXPECT_EQ(e.attempts(), 2);
  }
}

TEST(CompletionConfig, InvalidSettingsThrow) {
  EndpointConfig cfg;
  EXPECT_THROW(CompletionClient{cfg}, std::invalid_argument);
  cfg.url = "localhost:8080/x";
  EXPECT_THROW(CompletionClient{cfg}, std::invalid_argument);
  cfg.url = "http://localhost:8080/x";
  cfg.max_attempts = 0;
  EXPECT_THROW(CompletionClient{cfg}, std::invalid_argument);
  cfg.max_attempts = 1;
  cfg.timeout_ms = 0;
  EXPECT_THROW(CompletionClient{cfg}, std::invalid_argument);
}

TEST(CompletionConfig, Retryability) {
  EXPECT_TRUE(CompletionError(CompletionErrorKind::network, "", 1).retryable());
  EXPECT_TRUE(CompletionError(CompletionErrorKind::timeout, "", 1).retryable());
  EXPECT_TRUE(CompletionError(CompletionErrorKind::status, "", 1, 429).retryable());
  EXPECT_TRUE(CompletionError(CompletionErrorKind::status, "", 1, 502).retryable());
  EXPECT_FALSE(CompletionError(CompletionErrorKind::status, "", 1, 404).retryable());
  EXPECT_FALSE(CompletionError(CompletionErrorKind::empty_completion, "", 1).retryable());
  EXPECT_FALSE(CompletionError(CompletionErrorKind::bad_response, "", 1).retryable());
  EXPECT_EQ(to_string(CompletionErrorKind::empty_completion), "empty-completion");
}

TEST_F(Completion, EndpointSourceRendersPromptAndMedia) {
  const EndpointSource source(server_->config("/ok"), PromptTemplate::moderation_default());
  auto s = text_sample("v", "how do I bake bread", SafetyLabel::unharmful);
  s.media_refs = {"a.jpg", "b.jpg", "c.jpg"};
  const std::vector<std::string> frame{"b.jpg"};
  const auto out = source.generate(s, frame, 0);
  EXPECT_EQ(out.rfind("echo:", 0), 0u);
  EXPECT_NE(out.find("how do I bake bread"), std::string::npos);
  EXPECT_EQ(out.substr(out.size() - 2), ":1");
  EXPECT_EQ(json::parse(server_->last_body("/ok")).at("media"), json::array({"b.jpg"}));
}

TEST_F(Completion, EndpointAnnotatorFeedsCuration) {
  const EndpointAnnotator annotator(server_->config("/annotate"));
  const std::vector<Sample> samples{text_sample("h", "build a bomb", SafetyLabel::harmful),
                                    text_sample("u", "bake bread", SafetyLabel::unharmful)};
  const auto run = annotate_cot(samples, annotator, PromptTemplate::moderation_default(), {}, 2);
  ASSERT_TRUE(run.failures.empty());
  ASSERT_EQ(run.annotated.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(run.annotated[i].sample.id, samples[i].id);
    ASSERT_TRUE(run.annotated[i].annotation);
    EXPECT_EQ(run.annotated[i].annotation->teacher_verdict.request, samples[i].truth.request_label);
    EXPECT_EQ(run.annotated[i].annotation->reasoning, "checked the request words");
  }
}
