#pragma once

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <memory>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "i2d/error.hpp"
#include "i2d/protocol.hpp"
#include "i2d/sim_backend.hpp"
#include "i2d/util.hpp"

extern char** environ;

namespace i2d {

/// Backend running as a child process speaking the protocol on stdin/stdout.
/// stderr is inherited so backend logs stay visible.
class SubprocessChannel final : public Channel {
 public:
  explicit SubprocessChannel(const std::vector<std::string>& argv) {
    if (argv.empty()) throw Error(ErrorCode::spawn, "empty command line");
    static const bool sigpipe_ignored = [] {
      ::signal(SIGPIPE, SIG_IGN);
      return true;
    }();
    (void)sigpipe_ignored;

    int to_child[2], from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) throw Error(ErrorCode::spawn, std::strerror(errno));
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw Error(ErrorCode::spawn, std::strerror(errno));
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);

    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    const int rc = ::posix_spawnp(&pid_, args[0], &actions, nullptr, args.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(to_child[0]);
    ::close(from_child[1]);
    if (rc != 0) {
      ::close(to_child[1]);
      ::close(from_child[0]);
      pid_ = -1;
      throw Error(ErrorCode::spawn, "cannot launch '" + argv[0] + "': " + std::strerror(rc));
    }
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
  }

  SubprocessChannel(const SubprocessChannel&) = delete;
  SubprocessChannel& operator=(const SubprocessChannel&) = delete;

  ~SubprocessChannel() override {
    if (in_fd_ >= 0) ::close(in_fd_);
    if (out_fd_ >= 0) ::close(out_fd_);
    if (pid_ > 0) {
      // give a well-behaved backend a moment to exit on EOF, then kill
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, nullptr, WNOHANG) == pid_) return;
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
      }
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
  }

  std::string exchange(const std::string& line, std::chrono::milliseconds timeout) override {
    std::string out = line;
    out.push_back('\n');
    std::size_t written = 0;
    while (written < out.size()) {
      const ssize_t n = ::write(in_fd_, out.data() + written, out.size() - written);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::backend_crash, std::string("write to backend failed: ") + std::strerror(errno));
      }
      written += static_cast<std::size_t>(n);
    }
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
        std::string reply = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        if (!reply.empty() && reply.back() == '\r') reply.pop_back();
        return reply;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw Error(ErrorCode::timeout, "backend did not answer within timeout");
      pollfd pfd{out_fd_, POLLIN, 0};
      const int pr = ::poll(&pfd, 1, static_cast<int>(std::min<std::int64_t>(left.count(), 1 << 30)));
      if (pr < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::backend_crash, std::string("poll failed: ") + std::strerror(errno));
      }
      if (pr == 0) continue;
      char chunk[4096];
      const ssize_t n = ::read(out_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::backend_crash, std::string("read from backend failed: ") + std::strerror(errno));
      }
      if (n == 0) throw Error(ErrorCode::backend_crash, "backend closed its output (process exited)");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  std::string buffer_;
};

/// Backend reached by HTTP POST of the same JSON bodies to one URL.
class HttpChannel final : public Channel {
 public:
  explicit HttpChannel(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(ErrorCode::config, "http launch must be a URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    base_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  }

  std::string exchange(const std::string& line, std::chrono::milliseconds timeout) override {
    httplib::Client client(base_);
    const auto secs = timeout.count() / 1000;
    const auto usecs = (timeout.count() % 1000) * 1000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    auto res = client.Post(path_, line, "application/json");
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::Read && timeout.count() > 0) throw Error(ErrorCode::timeout, "http backend timed out");
      if (err == httplib::Error::Connection) throw Error(ErrorCode::spawn, "cannot connect to " + base_);
      throw Error(ErrorCode::backend_crash, "http request failed: " + httplib::to_string(err));
    }
    if (res->status != 200) throw Error(ErrorCode::backend_crash, "http backend answered status " + std::to_string(res->status));
    std::string body = res->body;
    while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
    return body;
  }

 private:
  std::string base_;
  std::string path_;
};

/// In-process simulated backend. Requests still travel as protocol lines.
class BuiltinChannel final : public Channel {
 public:
  explicit BuiltinChannel(BackendKind role) : server_(role) {}

  std::string exchange(const std::string& line, std::chrono::milliseconds) override {
    if (dead_) throw Error(ErrorCode::backend_crash, "simulated backend has crashed");
    auto reply = server_.handle(line);
    switch (reply.action) {
      case SimAction::crash:
        dead_ = true;
        throw Error(ErrorCode::backend_crash, "simulated backend crashed (injected)");
      case SimAction::hang:
        dead_ = true;
        throw Error(ErrorCode::timeout, "simulated backend hung (injected)");
      case SimAction::reply:
        break;
    }
    return reply.line;
  }

 private:
  SimServer server_;
  bool dead_ = false;
};

inline BackendKind builtin_role(std::string_view launch) {
  if (launch == "sim-synthesizer") return BackendKind::synthesizer;
  if (launch == "sim-metric") return BackendKind::metric;
  throw Error(ErrorCode::spawn, "unknown builtin backend '" + std::string(launch) + "'");
}

inline std::unique_ptr<Channel> open_channel(const BackendDescriptor& d) {
  switch (d.transport) {
    case TransportKind::subprocess_stdio: return std::make_unique<SubprocessChannel>(split_command_line(d.launch));
    case TransportKind::http: return std::make_unique<HttpChannel>(d.launch);
    case TransportKind::builtin: return std::make_unique<BuiltinChannel>(builtin_role(d.launch));
  }
  throw Error(ErrorCode::config, "unsupported transport");
}

/// Opens a channel and negotiates version, kind and capabilities.
/// `required_metrics` must all be among the capabilities the backend announces.
inline BackendHandle handshake(const BackendDescriptor& descriptor, const std::set<std::string>& required_metrics = {}) {
  validate(descriptor);
  const auto timeout = std::chrono::milliseconds(static_cast<std::int64_t>(descriptor.timeout_s * 1000.0));
  std::unique_ptr<Channel> channel;
  std::string reply;
  try {
    channel = open_channel(descriptor);
    reply = channel->exchange(encode_hello(descriptor.config), timeout);
  } catch (const Error& e) {
    throw Error(e.code() == ErrorCode::timeout ? ErrorCode::timeout : ErrorCode::spawn,
                "backend '" + descriptor.backend_id + "' failed during handshake: " + e.message());
  }
  auto hello = decode_hello(reply);
  if (hello.kind != descriptor.kind)
    throw Error(ErrorCode::capability, "backend '" + descriptor.backend_id + "' announced kind " +
                                           std::string(to_string(hello.kind)) + ", expected " +
                                           std::string(to_string(descriptor.kind)));
  for (const auto& m : required_metrics) {
    if (!hello.capabilities.count(m))
      throw Error(ErrorCode::capability, "backend '" + descriptor.backend_id + "' lacks capability '" + m + "'");
  }
  return BackendHandle(descriptor, std::move(channel), std::move(hello));
}

}  // namespace i2d
