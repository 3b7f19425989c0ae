#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "pda/http_backend.hpp"

using namespace pda;
using nlohmann::json;

namespace {

std::string completion(const json& content) {
  return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

// Local chat endpoint; the handler decides every response.
class LocalServer {
 public:
  explicit LocalServer(httplib::Server::Handler handler) {
    server_.Post("/v1/chat/completions", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

HttpBackendConfig config_for(const LocalServer& s) {
  HttpBackendConfig c;
  c.base_url = s.base_url();
  c.model = "test-model";
  c.api_key = "sk-test";
  c.timeout_seconds = 5;
  c.retry = RetryPolicy{2, std::chrono::milliseconds{1}};
  return c;
}

ChatRequest text_request() { return make_llm_request(StageTag::aggregation, "aggregate_vqa", "", "Q?", 0.0); }

}  // namespace

TEST_CASE("helpers") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  CHECK(split_base_url("http://h:1/v1/") == std::pair<std::string, std::string>{"http://h:1", "/v1"});
  CHECK(split_base_url("https://h") == std::pair<std::string, std::string>{"https://h", ""});
  CHECK_THROWS_AS(split_base_url("h/v1"), std::invalid_argument);
  CHECK(parse_chat_response(completion(nullptr)) == "");
  CHECK(parse_chat_response(completion("hi")) == "hi");
  CHECK(parse_chat_response(completion(json::array({{{"type", "text"}, {"text", "a"}}, {{"type", "text"}, {"text", "b"}}}))) == "ab");
  CHECK_THROWS_AS(parse_chat_response("not json"), BackendError);
  CHECK_THROWS_AS(parse_chat_response(R"({"choices": []})"), BackendError);
}

TEST_CASE("request body inlines local images") {
  auto path = std::filesystem::temp_directory_path() / "pda_http_pixel.png";
  std::ofstream(path, std::ios::binary) << "PNGDATA";
  auto body = build_chat_body(make_vlm_request(StageTag::answering, "answer_direct", "What?", path.string()), "m");
  const auto& parts = body["messages"].back()["content"];
  REQUIRE(parts.is_array());
  CHECK(parts[1]["image_url"]["url"] == "data:image/png;base64," + base64_encode("PNGDATA"));
  std::filesystem::remove(path);

  auto remote = build_chat_body(make_vlm_request(StageTag::answering, "a", "What?", "https://x/y.jpg"), "m");
  CHECK(remote["messages"].back()["content"][1]["image_url"]["url"] == "https://x/y.jpg");
  CHECK(body["model"] == "m");
  CHECK_THROWS_AS(build_chat_body(make_vlm_request(StageTag::answering, "a", "Q", "/missing/img.png"), "m"),
                  BackendError);
}

TEST_CASE("successful call sends auth and model") {
  std::string auth, model;
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    model = json::parse(req.body)["model"];
    res.set_content(completion("jeans"), "application/json");
  });
  HttpBackend backend(config_for(server));
  CHECK(backend.complete(text_request()).text == "jeans");
  CHECK(auth == "Bearer sk-test");
  CHECK(model == "test-model");
}

TEST_CASE("transient statuses are retried, client errors are not") {
  std::atomic<int> hits{0};
  SUBCASE("500 then 429 then success") {
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
      int n = ++hits;
      if (n == 1) {
        res.status = 500;
      } else if (n == 2) {
        res.status = 429;
      } else {
        res.set_content(completion("ok"), "application/json");
      }
    });
    HttpBackend backend(config_for(server));
    CHECK(backend.complete(text_request()).text == "ok");
    CHECK(hits == 3);
    CHECK(backend.ledger_snapshot().total() == 1);
  }
  SUBCASE("persistent 503 exhausts the retries") {
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
      ++hits;
      res.status = 503;
    });
    HttpBackend backend(config_for(server));
    CHECK_THROWS_AS(backend.complete(text_request()), TransportError);
    CHECK(hits == 3);
  }
  SUBCASE("400 fails at once") {
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
      ++hits;
      res.status = 400;
      res.set_content(R"({"error": "bad"})", "application/json");
    });
    HttpBackend backend(config_for(server));
    try {
      backend.complete(text_request());
      FAIL("expected BackendError");
    } catch (const TransportError&) {
      FAIL("400 must not be a transport error");
    } catch (const BackendError&) {
    }
    CHECK(hits == 1);
  }
}

TEST_CASE("null content maps to the sentinel") {
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    res.set_content(completion(nullptr), "application/json");
  });
  HttpBackend backend(config_for(server));
  CHECK(backend.complete(text_request()).text == "unclear");
}

TEST_CASE("unreachable server is a transport error") {
  HttpBackendConfig c;
  c.base_url = "http://127.0.0.1:1/v1";
  c.model = "m";
  c.timeout_seconds = 1;
  c.retry = RetryPolicy{0, std::chrono::milliseconds{0}};
  HttpBackend backend(c);
  CHECK_THROWS_AS(backend.complete(text_request()), TransportError);
}
