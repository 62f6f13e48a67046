#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include <nlohmann/json.hpp>

#include "idsrag/remote.hpp"

// After the Eigen-dependent headers: resolv.h defines a `_res` macro.
#include <httplib.h>

using namespace idsrag;
using namespace idsrag::remote;
using nlohmann::json;

namespace {

class LocalServer {
public:
    LocalServer() {
        server_.Post("/embed", [](const httplib::Request& req, httplib::Response& res) {
            const auto body = json::parse(req.body);
            const double len = static_cast<double>(body.at("text").get<std::string>().size());
            res.set_content(json{{"embedding", {len, 1.0, 0.0}}}.dump(), "application/json");
        });
        server_.Post("/rerank", [](const httplib::Request& req, httplib::Response& res) {
            const auto body = json::parse(req.body);
            const bool same = body.at("query") == body.at("text");
            res.set_content(json{{"score", same ? 1.0 : 0.25}}.dump(), "application/json");
        });
        server_.Post("/generate", [](const httplib::Request& req, httplib::Response& res) {
            const auto body = json::parse(req.body);
            const std::string text = "model " + body.at("model").get<std::string>() + " saw " +
                                     std::to_string(body.at("prompt").get<std::string>().size());
            res.set_content(json{{"text", text}, {"word_count", 4}, {"token_count", 4}}.dump(), "application/json");
        });
        server_.Post("/flaky", [this](const httplib::Request&, httplib::Response& res) {
            if (flaky_calls_++ == 0) {
                res.status = 503;
                return;
            }
            res.set_content(json{{"score", 0.5}}.dump(), "application/json");
        });
        server_.Post("/broken", [](const httplib::Request&, httplib::Response& res) {
            res.status = 500;
        });
        server_.Post("/bad-width", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(json{{"embedding", {1.0}}}.dump(), "application/json");
        });
        server_.Post("/out-of-range", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(json{{"score", 3.0}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LocalServer() {
        server_.stop();
        thread_.join();
    }
    Endpoint endpoint(const std::string& path, int retries = 0) const {
        return {"http://127.0.0.1:" + std::to_string(port_) + path, 2000, retries};
    }
    int flaky_calls() const { return flaky_calls_; }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> flaky_calls_{0};
};

}  // namespace

TEST(Url, Parse) {
    const auto u = parse_url("http://localhost:11434/api/generate");
    EXPECT_EQ(u.origin, "http://localhost:11434");
    EXPECT_EQ(u.path, "/api/generate");
    EXPECT_EQ(parse_url("http://host:80").path, "/");
    EXPECT_THROW(parse_url("localhost:80/x"), Error);
}

TEST(Endpoint, JsonRoundTrip) {
    const Endpoint e{"http://h:1/p", 1500, 4};
    const auto back = Endpoint::from_json(e.to_json());
    EXPECT_EQ(back.url, e.url);
    EXPECT_EQ(back.timeout_ms, 1500);
    EXPECT_EQ(back.retries, 4);
}

TEST(Http, ProvidersAgainstLocalServer) {
    LocalServer server;
    HttpEmbeddingProvider emb(server.endpoint("/embed"), 3);
    const auto v = emb.embed("abcd");
    EXPECT_EQ(v.values, (std::vector<double>{4.0, 1.0, 0.0}));
    HttpRerankScorer rr(server.endpoint("/rerank"));
    EXPECT_EQ(rr.score("q", "q"), 1.0);
    EXPECT_EQ(rr.score("q", "other"), 0.25);
    HttpGenerationClient gen(server.endpoint("/generate"), "llama3:8b");
    const auto r = gen.generate({"llama3:8b", "hello", 700, 0.0});
    EXPECT_EQ(r.text, "model llama3:8b saw 5");
    EXPECT_EQ(r.word_count, 4u);
}

TEST(Http, RetriesServerErrors) {
    LocalServer server;
    HttpRerankScorer rr(server.endpoint("/flaky", 1));
    EXPECT_EQ(rr.score("a", "b"), 0.5);
    EXPECT_EQ(server.flaky_calls(), 2);
    HttpRerankScorer broken(server.endpoint("/broken", 1));
    EXPECT_THROW(broken.score("a", "b"), Error);
}

TEST(Http, ValidatesReplies) {
    LocalServer server;
    HttpEmbeddingProvider emb(server.endpoint("/bad-width"), 3);
    EXPECT_THROW(emb.embed("x"), Error);
    HttpRerankScorer rr(server.endpoint("/out-of-range"));
    EXPECT_THROW(rr.score("a", "b"), Error);
}

TEST(Http, UnreachableEndpointFails) {
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }
    HttpGenerationClient gen({"http://127.0.0.1:" + std::to_string(port) + "/generate", 500, 0}, "m");
    EXPECT_THROW(gen.generate({"m", "p", 10, 0.0}), Error);
}
