// Serves the embedding protocol backed by the deterministic mock provider,
// on stdio (default) or on a TCP port.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <csignal>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cased/mock_provider.hpp"
#include "cased/protocol.hpp"

namespace {

void serve_stream(cased::EmbeddingProvider& provider, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out << cased::protocol::handle_request(provider, line).dump() << '\n' << std::flush;
  }
}

void serve_fd(cased::EmbeddingProvider& provider, int fd) {
  std::string buffer;
  char chunk[65536];
  for (;;) {
    const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n <= 0) return;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (std::size_t nl; (nl = buffer.find('\n', start)) != std::string::npos; start = nl + 1) {
      const std::string line = buffer.substr(start, nl - start);
      if (line.empty()) continue;
      const std::string reply = cased::protocol::handle_request(provider, line).dump() + "\n";
      for (std::size_t sent = 0; sent < reply.size();) {
        const ssize_t w = ::send(fd, reply.data() + sent, reply.size() - sent, MSG_NOSIGNAL);
        if (w <= 0) return;
        sent += static_cast<std::size_t>(w);
      }
    }
    buffer.erase(0, start);
  }
}

int serve_tcp(cased::EmbeddingProvider& provider, int port) {
  const int server = ::socket(AF_INET, SOCK_STREAM, 0);
  if (server < 0) return 1;
  int one = 1;
  ::setsockopt(server, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(server, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(server, 8) < 0) {
    std::cerr << "cannot listen on port " << port << "\n";
    return 1;
  }
  std::cerr << "listening on 127.0.0.1:" << port << "\n";
  for (;;) {
    const int client = ::accept(server, nullptr, nullptr);
    if (client < 0) continue;
    serve_fd(provider, client);  // one connection at a time
    ::close(client);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mock embedding provider speaking the line-delimited JSON protocol"};
  std::uint64_t seed = 0;
  std::size_t dim = 64;
  std::string plant;
  int port = 0;
  app.add_option("--seed", seed, "Hash seed");
  app.add_option("--dim", dim, "Embedding dimension (ignored when --plant sets one)");
  app.add_option("--plant", plant, "JSON file with planted concepts")->check(CLI::ExistingFile);
  app.add_option("--listen", port, "Serve on 127.0.0.1:PORT instead of stdio")->check(CLI::Range(1, 65535));
  CLI11_PARSE(app, argc, argv);

  std::signal(SIGPIPE, SIG_IGN);
  try {
    cased::MockProviderConfig cfg;
    cfg.seed = seed;
    cfg.dim = dim;
    if (!plant.empty()) {
      cfg = cased::load_mock_config(seed, plant);
      if (app.count("--dim") > 0) cfg.dim = dim;
    }
    cased::MockProvider provider(cfg);
    if (port > 0) return serve_tcp(provider, port);
    std::ios::sync_with_stdio(false);
    serve_stream(provider, std::cin, std::cout);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
