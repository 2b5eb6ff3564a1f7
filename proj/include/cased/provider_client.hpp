#pragma once

#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <netdb.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cased/mock_provider.hpp"
#include "cased/protocol.hpp"
#include "cased/provider.hpp"

namespace cased {

// A bidirectional stream of LF-terminated lines.
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void send_line(const std::string& line) = 0;
  virtual std::string recv_line(std::chrono::milliseconds timeout) = 0;
};

namespace detail {

class FdLineChannel : public LineChannel {
 public:
  void send_line(const std::string& line) override {
    std::string buf = line;
    buf.push_back('\n');
    std::size_t off = 0;
    while (off < buf.size()) {
      const ssize_t n = write_some(buf.data() + off, buf.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::ProviderError, std::string("write to provider failed: ") + std::strerror(errno),
                    "transport");
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string recv_line(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw Error(ErrorKind::Timeout, "provider did not answer in time", "timeout");
      pollfd pfd{read_fd_, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (rc < 0 && errno == EINTR) continue;
      if (rc < 0) throw Error(ErrorKind::ProviderError, "poll failed", "transport");
      if (rc == 0) continue;
      char chunk[65536];
      const ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw Error(ErrorKind::ProviderError, "provider closed the connection", "transport");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 protected:
  virtual ssize_t write_some(const char* data, std::size_t n) = 0;

  int read_fd_ = -1;
  std::string buffer_;
};

}  // namespace detail

// Runs `/bin/sh -c command` and talks to it over stdin/stdout.
class SubprocessChannel : public detail::FdLineChannel {
 public:
  explicit SubprocessChannel(const std::string& command) {
    ::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) {
      throw Error(ErrorKind::ProviderError, "pipe() failed", "transport");
    }
    pid_ = ::fork();
    if (pid_ < 0) throw Error(ErrorKind::ProviderError, "fork() failed", "transport");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  }

  ~SubprocessChannel() override {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    if (pid_ > 0) {
      int status = 0;
      for (int i = 0; i < 200; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) == pid_) return;
        ::usleep(10000);
      }
      ::kill(pid_, SIGTERM);
      ::waitpid(pid_, &status, 0);
    }
  }

  SubprocessChannel(const SubprocessChannel&) = delete;
  SubprocessChannel& operator=(const SubprocessChannel&) = delete;

 protected:
  ssize_t write_some(const char* data, std::size_t n) override { return ::write(write_fd_, data, n); }

 private:
  pid_t pid_ = -1;
  int write_fd_ = -1;
};

class TcpChannel : public detail::FdLineChannel {
 public:
  TcpChannel(const std::string& host, const std::string& port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0) {
      throw Error(ErrorKind::ProviderError, "cannot resolve " + host + ":" + port, "transport");
    }
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
        read_fd_ = fd;
        break;
      }
      ::close(fd);
    }
    ::freeaddrinfo(res);
    if (read_fd_ < 0) throw Error(ErrorKind::ProviderError, "cannot connect to " + host + ":" + port, "transport");
  }

  ~TcpChannel() override {
    if (read_fd_ >= 0) ::close(read_fd_);
  }

  TcpChannel(const TcpChannel&) = delete;
  TcpChannel& operator=(const TcpChannel&) = delete;

 protected:
  ssize_t write_some(const char* data, std::size_t n) override {
    return ::send(read_fd_, data, n, MSG_NOSIGNAL);
  }
};

struct ClientOptions {
  std::chrono::milliseconds timeout{60000};
  std::size_t max_batch = 256;
};

// Speaks the embedding protocol over any LineChannel. Requests are pipelined
// with distinct ids and responses re-associated by id. Thread-safe: one
// request cycle at a time per client.
class ProviderClient : public EmbeddingProvider {
 public:
  explicit ProviderClient(std::unique_ptr<LineChannel> channel, ClientOptions options = {})
      : channel_(std::move(channel)), options_(options) {
    if (options_.max_batch == 0) options_.max_batch = 1;
    channel_->send_line(R"({"op":"hello"})");
    nlohmann::json hello;
    try {
      hello = nlohmann::json::parse(channel_->recv_line(options_.timeout));
      if (hello.contains("error")) raise(hello["error"]);
      for (const auto& [role, dim] : hello.at("roles").items()) {
        try {
          dims_[parse_role(role)] = dim.get<std::size_t>();
        } catch (const Error&) {
          // Roles this client does not know about are ignored.
        }
      }
      name_ = hello.value("name", "");
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ProviderError, std::string("bad handshake: ") + e.what(), "protocol");
    }
  }

  std::string name() const override { return name_; }
  bool has_role(Role role) const override { return dims_.contains(role); }
  std::size_t dim(Role role) const override {
    auto it = dims_.find(role);
    if (it == dims_.end()) {
      throw Error(ErrorKind::ProviderError, "provider does not serve " + std::string(to_string(role)), "bad_role");
    }
    return it->second;
  }

  // Embeddings that arrived off unit norm by more than 1e-3 and were fixed.
  std::size_t corrections() const noexcept { return corrections_.load(); }

  std::vector<Embedding> embed_texts(Role role, std::span<const std::string> texts) override {
    if (texts.empty()) {
      throw Error(ErrorKind::InvalidRequest, "embed_texts needs at least one text", "invalid_request");
    }
    const std::size_t expected_dim = dim(role);
    std::vector<nlohmann::json> requests;
    std::vector<std::size_t> batch_sizes;
    for (std::size_t start = 0; start < texts.size(); start += options_.max_batch) {
      const std::size_t n = std::min(options_.max_batch, texts.size() - start);
      nlohmann::json req = {{"op", "embed_texts"}, {"role", std::string(to_string(role))}};
      req["texts"] = std::vector<std::string>(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                              texts.begin() + static_cast<std::ptrdiff_t>(start + n));
      requests.push_back(std::move(req));
      batch_sizes.push_back(n);
    }
    auto batches = exchange(std::move(requests), batch_sizes, expected_dim);
    std::vector<Embedding> out;
    out.reserve(texts.size());
    for (auto& b : batches) {
      for (auto& e : b) out.push_back(std::move(e));
    }
    return out;
  }

  std::vector<Embedding> embed_images(std::span<const ImageRef> images) override {
    if (images.empty()) return {};
    const std::size_t expected_dim = dim(Role::JointImage);
    std::vector<nlohmann::json> requests;
    for (const auto& ref : images) {
      nlohmann::json req = {{"op", "embed_image"}, {"role", "joint-image"}};
      if (const auto* p = std::get_if<std::filesystem::path>(&ref)) {
        req["path"] = p->string();
      } else {
        req["image_b64"] = base64_encode(encode_png(std::get<Image>(ref)));
      }
      requests.push_back(std::move(req));
    }
    auto batches = exchange(std::move(requests), std::vector<std::size_t>(images.size(), 1), expected_dim);
    std::vector<Embedding> out;
    out.reserve(images.size());
    for (auto& b : batches) out.push_back(std::move(b.front()));
    return out;
  }

 private:
  [[noreturn]] static void raise(const nlohmann::json& err) {
    const std::string code = err.value("code", "unknown");
    const std::string message = err.value("message", "");
    if (code == "decode") throw Error(ErrorKind::DecodeError, message, code);
    if (code == "invalid_request") throw Error(ErrorKind::InvalidRequest, message, code);
    throw Error(ErrorKind::ProviderError, message, code);
  }

  // Sends every request, then reads until each id has been answered. All
  // responses are drained before an error is raised so the stream stays in
  // sync for the next call.
  std::vector<std::vector<Embedding>> exchange(std::vector<nlohmann::json> requests,
                                               const std::vector<std::size_t>& expected_counts,
                                               std::size_t expected_dim) {
    std::lock_guard lock(mu_);
    std::unordered_map<std::int64_t, std::size_t> slot_of;
    for (std::size_t i = 0; i < requests.size(); ++i) {
      const std::int64_t id = next_id_++;
      requests[i]["id"] = id;
      slot_of[id] = i;
      channel_->send_line(requests[i].dump());
    }
    std::vector<std::vector<Embedding>> results(requests.size());
    std::optional<Error> first_error;
    std::size_t pending = requests.size();
    while (pending > 0) {
      nlohmann::json resp;
      try {
        resp = nlohmann::json::parse(channel_->recv_line(options_.timeout));
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ProviderError, std::string("malformed response: ") + e.what(), "protocol");
      }
      if (!resp.contains("id") || !resp["id"].is_number_integer()) {
        throw Error(ErrorKind::ProviderError, "response without id: " + resp.dump(), "protocol");
      }
      auto it = slot_of.find(resp["id"].get<std::int64_t>());
      if (it == slot_of.end()) {
        throw Error(ErrorKind::ProviderError, "response with unknown id " + resp["id"].dump(), "protocol");
      }
      const std::size_t slot = it->second;
      slot_of.erase(it);
      --pending;
      try {
        if (resp.contains("error")) raise(resp["error"]);
        results[slot] = parse_embeddings(resp.at("embeddings"), expected_counts[slot], expected_dim);
      } catch (const Error& e) {
        if (!first_error) first_error = e;
      } catch (const nlohmann::json::exception& e) {
        if (!first_error) first_error = Error(ErrorKind::ProviderError, e.what(), "protocol");
      }
    }
    if (first_error) throw *first_error;
    return results;
  }

  std::vector<Embedding> parse_embeddings(const nlohmann::json& arr, std::size_t expected_count,
                                          std::size_t expected_dim) {
    if (!arr.is_array() || arr.size() != expected_count) {
      throw Error(ErrorKind::ProviderError, "expected " + std::to_string(expected_count) + " embeddings",
                  "protocol");
    }
    std::vector<Embedding> out;
    out.reserve(arr.size());
    for (const auto& row : arr) {
      auto values = row.get<std::vector<float>>();
      if (values.size() != expected_dim) {
        throw Error(ErrorKind::DimDrift, "embedding dim " + std::to_string(values.size()) +
                                             " differs from handshake dim " + std::to_string(expected_dim),
                    "dim_drift");
      }
      Embedding e(std::move(values));
      if (!is_unit_norm(e, kNormTolerance)) {
        e = l2_normalize(e);
        ++corrections_;
      }
      out.push_back(std::move(e));
    }
    return out;
  }

  static constexpr double kNormTolerance = 1e-3;

  std::unique_ptr<LineChannel> channel_;
  ClientOptions options_;
  std::map<Role, std::size_t> dims_;
  std::string name_;
  std::mutex mu_;
  std::int64_t next_id_ = 1;
  std::atomic<std::size_t> corrections_{0};
};

// Provider spec strings: "mock:SEED", "mock:SEED:PLANT_FILE", "tcp:HOST:PORT",
// anything else is a shell command speaking the protocol on stdio.
inline std::unique_ptr<EmbeddingProvider> make_provider(const std::string& spec, ClientOptions options = {}) {
  if (spec.rfind("mock:", 0) == 0) {
    const std::string rest = spec.substr(5);
    const auto colon = rest.find(':');
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(rest.substr(0, colon));
    } catch (const std::exception&) {
      fail(ErrorKind::UsageError, "bad mock seed in '" + spec + "'");
    }
    if (colon == std::string::npos) return std::make_unique<MockProvider>(seed);
    return std::make_unique<MockProvider>(load_mock_config(seed, rest.substr(colon + 1)));
  }
  if (spec.rfind("tcp:", 0) == 0) {
    const std::string rest = spec.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) fail(ErrorKind::UsageError, "expected tcp:HOST:PORT");
    return std::make_unique<ProviderClient>(
        std::make_unique<TcpChannel>(rest.substr(0, colon), rest.substr(colon + 1)), options);
  }
  return std::make_unique<ProviderClient>(std::make_unique<SubprocessChannel>(spec), options);
}

}  // namespace cased
