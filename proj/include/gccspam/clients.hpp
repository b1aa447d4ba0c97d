#pragma once

// Transport backends for the augmentation client: HTTP endpoint and local
// subprocess. Both exchange one prompt for one raw completion text.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <unistd.h>
#include <sys/wait.h>

#include "gccspam/augment.hpp"
#include "gccspam/error.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that clashes with Eigen names.
#include <httplib.h>

namespace gccspam {

// POSTs the prompt as text/plain to the endpoint; the response body is the
// completion. Only plain http URLs are supported.
class HttpClient : public AugmentClient {
 public:
  explicit HttpClient(const std::string& url, int timeout_seconds = 60) : timeout_(timeout_seconds) {
    if (!url.starts_with("http://")) throw Error(Errc::invalid_argument, "augment endpoint must be an http:// URL: " + url);
    const auto slash = url.find('/', 7);
    origin_ = url.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : url.substr(slash);
    if (origin_.size() <= 7) throw Error(Errc::invalid_argument, "augment endpoint has no host: " + url);
    if (timeout_ < 1) throw Error(Errc::invalid_argument, "augment timeout must be >= 1 second");
  }

  std::string complete(const std::string& prompt) override {
    httplib::Client cli(origin_);
    cli.set_connection_timeout(timeout_, 0);
    cli.set_read_timeout(timeout_, 0);
    cli.set_write_timeout(timeout_, 0);
    auto res = cli.Post(path_, prompt, "text/plain; charset=utf-8");
    if (!res) throw Error(Errc::client_failure, origin_ + path_ + ": " + httplib::to_string(res.error()));
    if (res->status != 200) {
      throw Error(Errc::client_failure, origin_ + path_ + ": HTTP status " + std::to_string(res->status));
    }
    return res->body;
  }

  std::string name() const override { return "http"; }

 private:
  std::string origin_, path_;
  int timeout_;
};

// Runs a shell command with the prompt on stdin and takes its stdout as the
// completion. The command is wrapped in coreutils `timeout`.
class SubprocessClient : public AugmentClient {
 public:
  explicit SubprocessClient(std::string command, int timeout_seconds = 60)
      : command_(std::move(command)), timeout_(timeout_seconds) {
    if (command_.empty()) throw Error(Errc::invalid_argument, "augment.command is empty");
    if (timeout_ < 1) throw Error(Errc::invalid_argument, "augment timeout must be >= 1 second");
  }

  std::string complete(const std::string& prompt) override {
    auto tmpl = (std::filesystem::temp_directory_path() / "gccspam-prompt-XXXXXX").string();
    const int fd = ::mkstemp(tmpl.data());
    if (fd < 0) throw Error(Errc::client_failure, "cannot create prompt file");
    ::close(fd);
    struct Remove {
      std::string p;
      ~Remove() { std::filesystem::remove(p); }
    } cleanup{tmpl};
    {
      std::ofstream out(tmpl, std::ios::binary);
      out << prompt;
      if (!out) throw Error(Errc::client_failure, "cannot write prompt file");
    }
    const std::string cmd = "timeout " + std::to_string(timeout_) + " sh -c " + quote(command_) + " < " + quote(tmpl);
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) throw Error(Errc::client_failure, "cannot start: " + command_);
    std::string out;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
    const int status = ::pclose(pipe);
    if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
      throw Error(Errc::client_failure,
                  "command '" + command_ + "' " + (code == 124 ? "timed out" : "exited with status " + std::to_string(code)));
    }
    return out;
  }

  std::string name() const override { return "subprocess"; }

 private:
  static std::string quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
  }

  std::string command_;
  int timeout_;
};

struct ClientSettings {
  std::string kind = "mock";  // mock | http | subprocess
  std::string endpoint;
  std::string command;
  int timeout = 60;
  std::uint64_t seed = 42;
};

// A non-empty endpoint from the environment wins over the configured kind.
inline std::unique_ptr<AugmentClient> make_client(ClientSettings s, std::shared_ptr<const SimilarityNetwork> net,
                                                  const char* env_endpoint = std::getenv("GCC_SPAM_AUGMENT_ENDPOINT")) {
  if (env_endpoint && *env_endpoint) {
    s.kind = "http";
    s.endpoint = env_endpoint;
  }
  if (s.kind == "http") return std::make_unique<HttpClient>(s.endpoint, s.timeout);
  if (s.kind == "subprocess") return std::make_unique<SubprocessClient>(s.command, s.timeout);
  if (s.kind == "mock") {
    MockClient::Options o;
    o.seed = s.seed;
    return std::make_unique<MockClient>(std::move(net), o);
  }
  throw Error(Errc::invalid_argument, "unknown augment.client '" + s.kind + "' (mock, http, subprocess)");
}

}  // namespace gccspam
