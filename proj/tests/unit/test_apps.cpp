#include <acmesh/apps.hpp>

#include <gtest/gtest.h>

#include <netinet/in.h>

#include <atomic>
#include <thread>

using namespace acmesh;
using namespace acmesh::apps;

namespace {

// Minimal SMTP server on 127.0.0.1 that records every DATA payload.
class CaptureServer {
 public:
  CaptureServer() {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    int one = 1;
    setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 4) != 0) {
      throw std::runtime_error("capture server bind failed");
    }
    socklen_t len = sizeof addr;
    getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    thread_ = std::thread([this] { serve(); });
  }
  ~CaptureServer() {
    stop_ = true;
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    thread_.join();
  }

  std::uint16_t port() const { return port_; }
  std::vector<std::string> messages() {
    std::lock_guard lk(mu_);
    return messages_;
  }
  std::vector<std::string> envelope() {
    std::lock_guard lk(mu_);
    return envelope_;
  }

 private:
  void serve() {
    while (!stop_) {
      const int c = ::accept(fd_, nullptr, nullptr);
      if (c < 0) return;
      session(c);
      ::close(c);
    }
  }

  void session(int c) {
    auto say = [&](std::string_view s) { ::send(c, s.data(), s.size(), MSG_NOSIGNAL); };
    std::string buf;
    auto line = [&]() -> std::optional<std::string> {
      for (;;) {
        if (auto p = buf.find("\r\n"); p != std::string::npos) {
          auto l = buf.substr(0, p);
          buf.erase(0, p + 2);
          return l;
        }
        char tmp[256];
        const auto n = ::recv(c, tmp, sizeof tmp, 0);
        if (n <= 0) return std::nullopt;
        buf.append(tmp, static_cast<std::size_t>(n));
      }
    };
    say("220 capture ESMTP\r\n");
    while (auto l = line()) {
      if (l->rfind("HELO", 0) == 0) {
        say("250-capture\r\n250 OK\r\n");  // multi-line reply on purpose
      } else if (l->rfind("MAIL FROM:", 0) == 0 || l->rfind("RCPT TO:", 0) == 0) {
        std::lock_guard lk(mu_);
        envelope_.push_back(*l);
        say("250 OK\r\n");
      } else if (*l == "DATA") {
        say("354 go ahead\r\n");
        std::string msg;
        while (auto d = line()) {
          if (*d == ".") break;
          msg += *d + "\n";
        }
        std::lock_guard lk(mu_);
        messages_.push_back(msg);
        say("250 queued\r\n");
      } else if (*l == "QUIT") {
        say("221 bye\r\n");
        return;
      } else {
        say("500 what\r\n");
      }
    }
  }

  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::thread thread_;
  std::atomic<bool> stop_{false};
  std::mutex mu_;
  std::vector<std::string> messages_;
  std::vector<std::string> envelope_;
};

// A port on which nothing listens: bind, read the port, close.
std::uint16_t dead_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() / ("acmesh-apps-" + std::to_string(::getpid()) + "-" + std::to_string(counter_++));
    std::filesystem::remove_all(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string str() const { return path_.string(); }
  std::size_t count() const {
    if (!std::filesystem::exists(path_)) return 0;
    return static_cast<std::size_t>(std::distance(std::filesystem::directory_iterator(path_), {}));
  }

 private:
  static inline int counter_ = 0;
  std::filesystem::path path_;
};

std::vector<guwmanet::NetPacket> packets_for(const std::string& input, std::uint8_t src = 10, std::uint8_t dst = 20) {
  LineSource source(src, dst);
  std::vector<guwmanet::NetPacket> out;
  for (const auto& f : source.feed(input)) out.push_back({{12, 11}, f});
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Utf8, Sanitize) {
  const std::string r = "\xEF\xBF\xBD";
  EXPECT_EQ(sanitize_utf8("plain"), "plain");
  EXPECT_EQ(sanitize_utf8("caf\xC3\xA9 \xF0\x9F\x98\x80"), "caf\xC3\xA9 \xF0\x9F\x98\x80");
  EXPECT_EQ(sanitize_utf8("a\x80z"), "a" + r + "z");
  EXPECT_EQ(sanitize_utf8("\xE2\x82"), r);               // truncated: one maximal subpart
  EXPECT_EQ(sanitize_utf8("\xE2\x82z"), r + "z");
  EXPECT_EQ(sanitize_utf8("\xC0\xAF"), r + r);           // overlong lead is never valid
  EXPECT_EQ(sanitize_utf8("\xED\xA0\x80"), r + r + r);   // surrogate
  EXPECT_EQ(sanitize_utf8("\xF4\x90\x80\x80"), r + r + r + r);  // above U+10FFFF
  EXPECT_EQ(sanitize_utf8("\xFF"), r);
}

TEST(LineSource, Examples) {
  LineSource s(10, 20);
  auto frames = s.feed("ls -la\n");
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_EQ(guwal::payload_text(frames[0]), "ls -la");
  EXPECT_EQ(frames[0].header.src, 10);
  EXPECT_EQ(frames[0].header.dst, 20);

  const std::string thirty(30, 'k');
  EXPECT_TRUE(s.feed(thirty).empty());
  EXPECT_EQ(s.pending(), thirty);
  frames = s.feed("\n");
  ASSERT_EQ(frames.size(), 3u);
  std::string joined;
  for (const auto& f : frames) joined += guwal::payload_text(f);
  EXPECT_EQ(joined, thirty);

  EXPECT_TRUE(s.feed("no newline yet").empty());
  EXPECT_TRUE(s.feed("\r\n").size() == 2);  // CR dropped, 14 bytes -> 2 frames
  EXPECT_TRUE(s.feed("\n\n").empty());      // empty lines
  EXPECT_THROW(LineSource(64, 1), AddressError);
}

TEST(LineSource, RepeatedLinesGetDistinctCrc) {
  LineSource s(10, 20);
  const auto a = s.feed("su root\n"), b = s.feed("su root\n");
  ASSERT_EQ(a.size(), 1u);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_NE(a[0].crc, b[0].crc);
  EXPECT_EQ(guwal::payload_text(a[0]), guwal::payload_text(b[0]));
}

TEST(Reassembler, JoinsFragmentsPerSource) {
  Reassembler r;
  const auto a = packets_for("ssh admin@10.0.0.7 -p 2222\n", 10);
  const auto b = packets_for("whoami\n", 11);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_FALSE(r.add(a[0], 1));
  auto done_b = r.add(b[0], 2);  // interleaved source
  ASSERT_TRUE(done_b);
  EXPECT_EQ(done_b->text, "whoami");
  EXPECT_FALSE(r.add(a[1], 3));
  const auto done = r.add(a[2], 4);
  ASSERT_TRUE(done);
  EXPECT_EQ(done->text, "ssh admin@10.0.0.7 -p 2222");
  EXPECT_EQ(done->src_guwal, 10);
  EXPECT_EQ(done->packets.size(), 3u);
}

TEST(Reassembler, IdleFlushClosesExactMultiples) {
  Reassembler r;
  const auto p = packets_for(std::string(11, 'x') + "\n");
  ASSERT_EQ(p.size(), 1u);
  EXPECT_FALSE(r.add(p[0], 0));
  EXPECT_TRUE(r.flush_idle(60, 120).empty());
  const auto out = r.flush_idle(120, 120);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].text, std::string(11, 'x'));
}

TEST(Email, HeadersAndBody) {
  ExfilRecord rec{10, 86400.5, "passw0rd", {}};
  SinkConfig cfg;
  const auto msg = format_email(rec, cfg, 7);
  EXPECT_NE(msg.find("X-Acmesh-Src-Guwal: 10\r\n"), std::string::npos);
  EXPECT_NE(msg.find("Date: Fri, 02 Jan 1970 00:00:00 +0000\r\n"), std::string::npos);
  EXPECT_NE(msg.find("Subject: line from guwal 10\r\n"), std::string::npos);
  EXPECT_NE(msg.find("\r\n\r\npassw0rd\r\n"), std::string::npos);
  EXPECT_EQ(msg.find("X-Acmesh-Packet"), std::string::npos);
}

TEST(Sink, SubmitsToSmtpServer) {
  CaptureServer server;
  TempDir dir;
  SinkConfig cfg;
  cfg.spool_dir = dir.str();
  cfg.smtp = SmtpEndpoint{"127.0.0.1", server.port()};
  SmtpSink sink(cfg);
  std::optional<std::string> path;
  for (const auto& p : packets_for("passw0rd\n")) path = sink.accept(p, 100.0);
  ASSERT_TRUE(path);
  EXPECT_EQ(dir.count(), 1u);
  EXPECT_EQ(sink.flush(), 1u);
  EXPECT_EQ(dir.count(), 0u);
  const auto msgs = server.messages();
  ASSERT_EQ(msgs.size(), 1u);
  EXPECT_NE(msgs[0].find("\npassw0rd\n"), std::string::npos);
  EXPECT_NE(msgs[0].find("X-Acmesh-Src-Guwal: 10"), std::string::npos);
  const auto env = server.envelope();
  ASSERT_EQ(env.size(), 2u);
  EXPECT_EQ(env[0], "MAIL FROM:<gateway@acmesh.local>");
  EXPECT_EQ(env[1], "RCPT TO:<collector@example.org>");
}

TEST(Sink, DotStuffing) {
  CaptureServer server;
  smtp_submit({"127.0.0.1", server.port()}, "a@b", "c@d", "Subject: x\r\n\r\n.hidden\r\n..\r\n");
  const auto msgs = server.messages();
  ASSERT_EQ(msgs.size(), 1u);
  // the server sees the stuffed lines; a real server strips one dot
  EXPECT_NE(msgs[0].find("\n..hidden\n...\n"), std::string::npos);
}

TEST(Sink, ServerDownSpoolsThenFlushes) {
  TempDir dir;
  SinkConfig cfg;
  cfg.spool_dir = dir.str();
  cfg.smtp = SmtpEndpoint{"127.0.0.1", dead_port(), 1.0};
  {
    SmtpSink sink(cfg);
    for (const auto& p : packets_for("first\nsecond\n")) sink.accept(p, 5.0);
    EXPECT_EQ(dir.count(), 2u);
    EXPECT_EQ(sink.flush(), 0u);
    EXPECT_EQ(dir.count(), 2u);
  }
  CaptureServer server;
  cfg.smtp = SmtpEndpoint{"127.0.0.1", server.port()};
  SmtpSink later(cfg);
  for (const auto& p : packets_for("third\n")) later.accept(p, 6.0);
  EXPECT_EQ(dir.count(), 3u);  // numbering continued, nothing overwritten
  EXPECT_EQ(later.flush(), 3u);
  EXPECT_EQ(dir.count(), 0u);
  const auto msgs = server.messages();
  ASSERT_EQ(msgs.size(), 3u);
  EXPECT_NE(msgs[0].find("\nfirst\n"), std::string::npos);
  EXPECT_NE(msgs[1].find("\nsecond\n"), std::string::npos);
  EXPECT_NE(msgs[2].find("\nthird\n"), std::string::npos);
}

TEST(Sink, TunnelCarriesExactPacketHex) {
  TempDir dir;
  SinkConfig cfg;
  cfg.spool_dir = dir.str();
  cfg.tunnel = true;
  SmtpSink sink(cfg);
  const auto pkts = packets_for("ssh admin@10.0.0.7 -p 2222\n");
  std::optional<std::string> path;
  for (const auto& p : pkts) path = sink.accept(p, 1.0);
  ASSERT_TRUE(path);
  const auto text = read_file(*path);
  for (const auto& p : pkts) {
    const auto bytes = guwmanet::packet_bytes(p);
    ASSERT_EQ(bytes.size(), 18u);
    std::string hex;
    char buf[3];
    for (auto b : bytes) {
      std::snprintf(buf, sizeof buf, "%02x", b);
      hex += buf;
    }
    EXPECT_NE(text.find("X-Acmesh-Packet: " + hex + "\r\n"), std::string::npos) << hex;
  }
}

TEST(Sink, DuplicateFrameNotMailedTwice) {
  TempDir dir;
  SinkConfig cfg;
  cfg.spool_dir = dir.str();
  SmtpSink sink(cfg);
  const auto p = packets_for("once\n");
  EXPECT_TRUE(sink.accept(p[0], 1.0));
  EXPECT_FALSE(sink.accept(p[0], 30.0));  // retransmitted copy
  EXPECT_EQ(dir.count(), 1u);
  EXPECT_EQ(sink.records().size(), 1u);
  EXPECT_TRUE(sink.accept(p[0], 1000.0));  // outside the window it is a new event
}
