#include <gtest/gtest.h>

#include <thread>

#include "gccspam/clients.hpp"
#include "gccspam/embeddings.hpp"
#include "test_support.hpp"

using namespace gccspam;

namespace {

std::shared_ptr<const SimilarityNetwork> net() {
  return std::make_shared<const SimilarityNetwork>(
      build_network(load_dictionary(testing_support::data_path("dict10.tsv")), 0.7));
}

Errc failure_of(AugmentClient& c) {
  try {
    c.complete("prompt");
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::invalid_argument;
}

}  // namespace

TEST(HttpClient, PostsPromptAndReturnsBody) {
  httplib::Server server;
  server.Post("/v1/gen", [](const httplib::Request& req, httplib::Response& res) {
    res.set_content("echo:" + req.body, "text/plain");
  });
  server.Post("/fail", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string origin = "http://127.0.0.1:" + std::to_string(port);
  HttpClient ok(origin + "/v1/gen", 5);
  EXPECT_EQ(ok.complete("加微信"), "echo:加微信");
  HttpClient bad(origin + "/fail", 5);
  EXPECT_EQ(failure_of(bad), Errc::client_failure);
  server.stop();
  th.join();
  HttpClient down("http://127.0.0.1:1/x", 1);
  EXPECT_EQ(failure_of(down), Errc::client_failure);
  EXPECT_THROW(HttpClient("https://example.com/x"), Error);
  EXPECT_THROW(HttpClient("http:///x"), Error);
}

TEST(SubprocessClient, StdinToStdout) {
  SubprocessClient upper("tr a-z A-Z", 5);
  EXPECT_EQ(upper.complete("spam\tit's\n"), "SPAM\tIT'S\n");
  SubprocessClient failing("exit 4", 5);
  EXPECT_EQ(failure_of(failing), Errc::client_failure);
  SubprocessClient slow("sleep 5", 1);
  EXPECT_EQ(failure_of(slow), Errc::client_failure);
  EXPECT_THROW(SubprocessClient(""), Error);
}

TEST(MakeClient, EnvironmentEndpointWins) {
  ClientSettings s;
  EXPECT_EQ(make_client(s, net(), nullptr)->name(), "mock");
  EXPECT_EQ(make_client(s, net(), "")->name(), "mock");
  EXPECT_EQ(make_client(s, net(), "http://localhost:9/gen")->name(), "http");
  s.kind = "subprocess";
  s.command = "cat";
  EXPECT_EQ(make_client(s, net(), nullptr)->name(), "subprocess");
  s.kind = "carrier-pigeon";
  EXPECT_THROW(make_client(s, net(), nullptr), Error);
}
