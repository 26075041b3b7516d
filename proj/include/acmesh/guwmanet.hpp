#pragma once

// GUWMANET reactive routing.
//
// Every packet on air is a 10-bit network header (transmitter, last hop; 5
// bits each) followed by a GUWAL frame. The first message toward a
// destination is flooded. A forwarder writes into "last hop" the neighbor it
// first received the message from; a node that overhears its own address
// there learns a temporary route toward the destination through the
// overheard transmitter. The destination's acknowledgement travels back along
// the reverse path and each node it passes persists the route. With a
// persistent route the sender writes the chosen next hop into "last hop" and
// only that neighbor forwards.

#include <acmesh/errors.hpp>
#include <acmesh/guwal.hpp>
#include <acmesh/packet.hpp>

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace acmesh::guwmanet {

inline constexpr std::uint8_t kMaxNetAddress = 31;

struct NetHeader {
  std::uint8_t transmitter = 0;
  std::uint8_t last_hop = 0;

  friend bool operator==(const NetHeader&, const NetHeader&) = default;
};

struct NetPacket {
  NetHeader net;
  guwal::Frame frame;

  friend bool operator==(const NetPacket&, const NetPacket&) = default;
};

// 18 bytes: two header bytes (transmitter and last hop, one address each)
// followed by the 16-byte frame. Used by the tunnel mode of the SMTP sink.
inline std::vector<std::uint8_t> packet_bytes(const NetPacket& p) {
  const auto raw = guwal::serialize(p.frame);
  std::vector<std::uint8_t> out(2 + raw.size());
  out[0] = p.net.transmitter;
  out[1] = p.net.last_hop;
  std::copy(raw.begin(), raw.end(), out.begin() + 2);
  return out;
}

inline Bits encode_net(const NetPacket& p) {
  if (p.net.transmitter > kMaxNetAddress || p.net.last_hop > kMaxNetAddress) {
    throw AddressError("network address out of range [0, 31]");
  }
  Bits bits;
  bits.reserve(kPacketBits);
  for (int b = 4; b >= 0; --b) bits.push_back((p.net.transmitter >> b) & 1);
  for (int b = 4; b >= 0; --b) bits.push_back((p.net.last_hop >> b) & 1);
  for (std::uint8_t byte : guwal::serialize(p.frame)) {
    for (int b = 7; b >= 0; --b) bits.push_back((byte >> b) & 1);
  }
  return bits;
}

inline guwal::RawFrame frame_bytes(const Bits& bits) {
  if (bits.size() != kPacketBits) {
    throw LengthError("net packet must be 138 bits, got " + std::to_string(bits.size()));
  }
  guwal::RawFrame raw{};
  for (std::size_t i = 0; i < guwal::kFrameBytes; ++i) {
    std::uint8_t v = 0;
    for (std::size_t b = 0; b < 8; ++b) v = static_cast<std::uint8_t>(v << 1 | (bits[kNetHeaderBits + 8 * i + b] & 1));
    raw[i] = v;
  }
  return raw;
}

inline bool crc_ok(const Bits& bits) { return guwal::crc_valid(frame_bytes(bits)); }

inline NetPacket decode_net(const Bits& bits) {
  const auto raw = frame_bytes(bits);
  NetPacket p;
  for (std::size_t i = 0; i < 5; ++i) p.net.transmitter = static_cast<std::uint8_t>(p.net.transmitter << 1 | bits[i]);
  for (std::size_t i = 5; i < 10; ++i) p.net.last_hop = static_cast<std::uint8_t>(p.net.last_hop << 1 | bits[i]);
  p.frame = guwal::decode_frame(raw);
  return p;
}

// ---------------------------------------------------------------------------

enum class RouteState { temporary, persistent };

struct RoutingEntry {
  std::uint8_t dest_guwal = 0;
  std::uint8_t next_hop_net = 0;
  RouteState state = RouteState::temporary;
  double created_at = 0.0;

  friend bool operator==(const RoutingEntry&, const RoutingEntry&) = default;
};

struct Timers {
  double ack_timeout = 45.0;
  double temp_route_lifetime = 90.0;
  double dedup_lifetime = 120.0;
  double neighbor_lifetime = 600.0;
  double jitter_max = 2.0;
  int max_retransmissions = 3;
};

// Duplicate-suppression key: GUWAL carries no sequence number, so the CRC
// stands in for message identity.
struct MsgKey {
  std::uint8_t src = 0;
  std::uint8_t dst = 0;
  std::uint16_t crc = 0;

  static MsgKey of(const guwal::Frame& f) { return {f.header.src, f.header.dst, f.crc}; }
  friend auto operator<=>(const MsgKey&, const MsgKey&) = default;
};

struct SeenEntry {
  double first_seen = 0.0;
  double last_seen = 0.0;
  std::uint8_t first_from = 0;  // upstream: transmitter of the earliest copy
  bool forwarded = false;
  double last_tx = -1e9;
};

struct Pending {
  guwal::Frame frame;
  double deadline = 0.0;
  int retransmissions = 0;
  double first_sent = 0.0;
};

enum class ActionKind {
  send,             // originated by this node
  forward,
  send_ack,
  retransmit,
  deliver,
  ack_received,
  learn_route,
  persist_route,
  drop,
  delivery_failed,
};

inline const char* to_string(ActionKind k) {
  switch (k) {
    case ActionKind::send: return "send";
    case ActionKind::forward: return "forward";
    case ActionKind::send_ack: return "send_ack";
    case ActionKind::retransmit: return "retransmit";
    case ActionKind::deliver: return "deliver";
    case ActionKind::ack_received: return "ack_received";
    case ActionKind::learn_route: return "learn_route";
    case ActionKind::persist_route: return "persist_route";
    case ActionKind::drop: return "drop";
    case ActionKind::delivery_failed: return "delivery_failed";
  }
  return "?";
}

struct Action {
  ActionKind kind = ActionKind::drop;
  NetPacket packet;          // transmissions, deliveries, drops
  double delay = 0.0;        // transmissions: hold-off before going on air
  RoutingEntry route;        // learn_route / persist_route
  std::string reason;        // drop / delivery_failed
  bool flood = false;        // transmissions

  bool is_transmission() const {
    return kind == ActionKind::send || kind == ActionKind::forward || kind == ActionKind::send_ack ||
           kind == ActionKind::retransmit;
  }
};

inline std::string hex16(std::uint16_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(4) << std::setfill('0') << v;
  return os.str();
}

// One line of the action trace: `t=<s> node=<net_addr> action=<kind> ...`.
inline std::string format_action(double t, std::uint8_t node, const Action& a) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << "t=" << t << " node=" << unsigned(node)
     << " action=" << to_string(a.kind);
  const auto& f = a.packet.frame;
  switch (a.kind) {
    case ActionKind::learn_route:
    case ActionKind::persist_route:
      os << " dest=" << unsigned(a.route.dest_guwal) << " via=" << unsigned(a.route.next_hop_net);
      break;
    default:
      os << " tx=" << unsigned(a.packet.net.transmitter) << " last_hop=" << unsigned(a.packet.net.last_hop)
         << " type=" << (f.header.type == guwal::FrameType::ack ? "ack" : "data")
         << " src=" << unsigned(f.header.src) << " dst=" << unsigned(f.header.dst) << " crc=" << hex16(f.crc);
      if (a.is_transmission()) os << " delay=" << a.delay << (a.flood ? " mode=flood" : " mode=routed");
      if (!a.reason.empty()) os << " reason=" << a.reason;
  }
  return os.str();
}

class NodeState {
 public:
  NodeState(std::uint8_t net_addr, std::uint8_t guwal_addr, std::uint64_t seed, Timers timers = {})
      : net_addr_(net_addr), guwal_addr_(guwal_addr), timers_(timers), rng_(seed) {
    if (net_addr > kMaxNetAddress) throw AddressError("network address out of range [0, 31]");
    if (guwal_addr > guwal::kMaxAddress) throw AddressError("GUWAL address out of range [0, 63]");
  }

  std::uint8_t net_addr() const noexcept { return net_addr_; }
  std::uint8_t guwal_addr() const noexcept { return guwal_addr_; }
  const Timers& timers() const noexcept { return timers_; }
  const std::map<std::uint8_t, RoutingEntry>& routes() const noexcept { return routes_; }
  const std::vector<Pending>& pending() const noexcept { return pending_; }
  const std::map<MsgKey, SeenEntry>& seen() const noexcept { return seen_; }
  const std::map<std::uint8_t, double>& neighbors() const noexcept { return neighbors_; }

  std::optional<RoutingEntry> route_to(std::uint8_t dest) const {
    auto it = routes_.find(dest);
    if (it == routes_.end()) return std::nullopt;
    return it->second;
  }

  // Test hook and scenario preload.
  void set_route(const RoutingEntry& e) { routes_[e.dest_guwal] = e; }
  void note_neighbor(std::uint8_t net, double now) { neighbors_[net] = now; }

  std::vector<Action> originate(const guwal::Frame& frame, double now) {
    if (frame.header.src != guwal_addr_) throw AddressError("frame source is not this node's GUWAL address");
    auto& s = seen_[MsgKey::of(frame)];
    s = SeenEntry{now, now, net_addr_, true, now};
    Action a = transmission(ActionKind::send, frame);
    a.packet.net.transmitter = net_addr_;
    if (frame.header.ack_requested) {
      std::erase_if(pending_, [&](const Pending& p) { return p.frame.crc == frame.crc && p.frame.header.dst == frame.header.dst; });
      pending_.push_back(Pending{frame, now + timers_.ack_timeout, 0, now});
    }
    return {a};
  }

  std::vector<Action> handle_inbound(const NetPacket& pkt, double now) {
    const auto t = pkt.net.transmitter;
    neighbors_[t] = now;
    if (t == net_addr_) return {drop(pkt, "own_echo")};
    if (pkt.frame.header.type == guwal::FrameType::ack) return handle_ack(pkt, now);
    if (pkt.frame.header.type != guwal::FrameType::data) return {drop(pkt, "reserved_type")};
    return handle_data(pkt, now);
  }

  std::vector<Action> on_timer(double now) {
    std::vector<Action> out;
    for (auto it = pending_.begin(); it != pending_.end();) {
      if (it->deadline > now) {
        ++it;
        continue;
      }
      if (it->retransmissions < timers_.max_retransmissions) {
        ++it->retransmissions;
        it->deadline = now + timers_.ack_timeout;
        auto& s = seen_[MsgKey::of(it->frame)];
        s.last_seen = now;
        s.last_tx = now;
        s.first_from = net_addr_;
        s.forwarded = true;
        Action a = transmission(ActionKind::retransmit, it->frame);
        out.push_back(a);
        ++it;
      } else {
        Action a;
        a.kind = ActionKind::delivery_failed;
        a.packet.frame = it->frame;
        a.packet.net = {net_addr_, net_addr_};
        a.reason = "no_ack_after_" + std::to_string(timers_.max_retransmissions) + "_retransmissions";
        routes_.erase(it->frame.header.dst);
        out.push_back(a);
        it = pending_.erase(it);
      }
    }
    std::erase_if(routes_, [&](const auto& kv) {
      return kv.second.state == RouteState::temporary && now - kv.second.created_at > timers_.temp_route_lifetime;
    });
    std::erase_if(seen_, [&](const auto& kv) { return now - kv.second.last_seen > timers_.dedup_lifetime; });
    std::erase_if(neighbors_, [&](const auto& kv) { return now - kv.second > timers_.neighbor_lifetime; });
    return out;
  }

  // Earliest time at which on_timer has work to do, if any.
  std::optional<double> next_deadline() const {
    std::optional<double> d;
    for (const auto& p : pending_) d = d ? std::min(*d, p.deadline) : p.deadline;
    return d;
  }

 private:
  Action transmission(ActionKind kind, const guwal::Frame& frame) {
    Action a;
    a.kind = kind;
    a.packet.frame = frame;
    a.packet.net.transmitter = net_addr_;
    if (auto r = route_to(frame.header.dst); r && r->state == RouteState::persistent) {
      a.packet.net.last_hop = r->next_hop_net;
      a.flood = false;
    } else {
      a.packet.net.last_hop = net_addr_;
      a.flood = true;
    }
    return a;
  }

  double jitter() {
    // 53 random bits mapped to [0, 1); avoids implementation-defined
    // distribution algorithms so traces match across standard libraries.
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return u * timers_.jitter_max;
  }

  Action drop(const NetPacket& pkt, std::string why) const {
    Action a;
    a.kind = ActionKind::drop;
    a.packet = pkt;
    a.reason = std::move(why);
    return a;
  }

  // Relay toward frame.dst. A designated hop uses its persistent route, then
  // a temporary one; everything else floods with the upstream in last_hop.
  Action relay(const NetPacket& pkt, bool designated) {
    Action a;
    a.kind = ActionKind::forward;
    a.packet.frame = pkt.frame;
    a.packet.net.transmitter = net_addr_;
    auto r = route_to(pkt.frame.header.dst);
    if (designated && r) {
      a.packet.net.last_hop = r->next_hop_net;
      a.flood = false;
    } else {
      a.packet.net.last_hop = seen_.at(MsgKey::of(pkt.frame)).first_from;
      a.flood = true;
      a.delay = jitter();
    }
    return a;
  }

  Action make_ack_action(const guwal::Frame& acked, std::uint8_t upstream) {
    Action a;
    a.kind = ActionKind::send_ack;
    a.packet.frame = guwal::make_ack(acked);
    a.packet.net = {net_addr_, upstream};
    return a;
  }

  std::vector<Action> handle_data(const NetPacket& pkt, double now) {
    const auto& f = pkt.frame;
    const auto t = pkt.net.transmitter;
    const auto l = pkt.net.last_hop;
    const bool for_me = f.header.dst == guwal_addr_;
    const MsgKey key = MsgKey::of(f);
    std::vector<Action> out;

    if (auto it = seen_.find(key); it != seen_.end()) {
      SeenEntry& s = it->second;
      s.last_seen = now;
      if (l == net_addr_ && t != s.first_from && s.forwarded) {
        // overheard a downstream neighbor naming us as its last hop
        auto existing = route_to(f.header.dst);
        if (!existing || existing->state == RouteState::temporary) {
          RoutingEntry e{f.header.dst, t, RouteState::temporary, now};
          routes_[f.header.dst] = e;
          Action a;
          a.kind = ActionKind::learn_route;
          a.route = e;
          a.packet = pkt;
          out.push_back(a);
          return out;
        }
        out.push_back(drop(pkt, "duplicate"));
        return out;
      }
      if (t == s.first_from && t != net_addr_ && now - s.last_tx > 1.0) {
        // the upstream sent the message again: a retransmission
        if (for_me) {
          if (f.header.ack_requested) out.push_back(make_ack_action(f, s.first_from));
          else out.push_back(drop(pkt, "duplicate"));
          s.last_tx = now;
          return out;
        }
        Action a = relay(pkt, l == net_addr_);
        s.forwarded = true;
        s.last_tx = now + a.delay;
        out.push_back(a);
        return out;
      }
      out.push_back(drop(pkt, "duplicate"));
      return out;
    }

    SeenEntry s{now, now, t, false, -1e9};
    seen_[key] = s;
    SeenEntry& entry = seen_[key];

    if (for_me) {
      Action d;
      d.kind = ActionKind::deliver;
      d.packet = pkt;
      out.push_back(d);
      if (f.header.ack_requested) {
        out.push_back(make_ack_action(f, t));
        entry.last_tx = now;
      }
      return out;
    }

    const bool designated = l == net_addr_;
    const bool origin_flood = l == t;
    // A new message naming a neighbor we can hear as its last hop is routed
    // traffic for that neighbor: in a flood we would already hold a copy
    // from it.
    if (!designated && !origin_flood && neighbors_.contains(l)) {
      out.push_back(drop(pkt, "not_selected"));
      return out;
    }
    Action a = relay(pkt, designated);
    entry.forwarded = true;
    entry.last_tx = now + a.delay;
    out.push_back(a);
    return out;
  }

  std::vector<Action> handle_ack(const NetPacket& pkt, double now) {
    const auto& ack = pkt.frame;
    std::vector<Action> out;
    if (pkt.net.last_hop != net_addr_) {
      out.push_back(drop(pkt, "ack_not_selected"));
      return out;
    }
    RoutingEntry e{ack.header.src, pkt.net.transmitter, RouteState::persistent, now};
    routes_[e.dest_guwal] = e;
    Action p;
    p.kind = ActionKind::persist_route;
    p.route = e;
    p.packet = pkt;
    out.push_back(p);

    const std::uint16_t token = guwal::ack_token(ack);
    if (ack.header.dst == guwal_addr_) {
      auto it = std::find_if(pending_.begin(), pending_.end(), [&](const Pending& q) {
        return q.frame.crc == token && q.frame.header.dst == ack.header.src;
      });
      if (it == pending_.end()) {
        out.push_back(drop(pkt, "unmatched_ack"));
        return out;
      }
      Action a;
      a.kind = ActionKind::ack_received;
      a.packet = pkt;
      a.packet.frame = it->frame;
      pending_.erase(it);
      out.push_back(a);
      return out;
    }

    const MsgKey acked{ack.header.dst, ack.header.src, token};
    auto it = seen_.find(acked);
    if (it == seen_.end() || it->second.first_from == net_addr_) {
      out.push_back(drop(pkt, "no_reverse_path"));
      return out;
    }
    it->second.last_seen = now;
    Action a;
    a.kind = ActionKind::forward;
    a.packet.frame = ack;
    a.packet.net = {net_addr_, it->second.first_from};
    out.push_back(a);
    return out;
  }

  std::uint8_t net_addr_;
  std::uint8_t guwal_addr_;
  Timers timers_;
  std::mt19937_64 rng_;
  std::map<std::uint8_t, RoutingEntry> routes_;
  std::map<MsgKey, SeenEntry> seen_;
  std::vector<Pending> pending_;
  std::map<std::uint8_t, double> neighbors_;
};

}  // namespace acmesh::guwmanet
