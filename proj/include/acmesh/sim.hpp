#pragma once

// Discrete-event execution of a Scenario: every node runs the full stack
// (routing, EC, modem) and packets cross the simulated air as sample buffers.

#include <acmesh/apps.hpp>
#include <acmesh/channel.hpp>
#include <acmesh/counter.hpp>
#include <acmesh/guwal.hpp>
#include <acmesh/guwmanet.hpp>
#include <acmesh/phy.hpp>
#include <acmesh/scenario.hpp>
#include <acmesh/wav.hpp>

#include <json.hpp>

#include <deque>
#include <iomanip>
#include <map>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

namespace acmesh::sim {

using dsp::SampleBuffer;

struct TraceRecord {
  double time = 0.0;
  std::uint8_t node = 0;  // net address
  std::string kind;       // action or channel event name
  std::string line;       // full log line
};

struct EventTrace {
  std::vector<TraceRecord> records;

  std::string log() const {
    std::string out;
    for (const auto& r : records) out += r.line + "\n";
    return out;
  }

  json to_json() const {
    json arr = json::array();
    for (const auto& r : records) {
      arr.push_back({{"t", r.time}, {"node", r.node}, {"kind", r.kind}, {"line", r.line}});
    }
    return arr;
  }

  std::size_t count(const std::string& kind) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [&](const TraceRecord& r) { return r.kind == kind; }));
  }
};

struct MessageRecord {
  std::size_t origin = 0;  // node index
  guwal::Frame frame;
  double sent_at = 0.0;
  bool routed = false;  // the first transmission used a persistent route
  std::optional<double> delivered_at;
  std::optional<double> acked_at;
  int retransmissions = 0;
  bool failed = false;

  double latency() const { return delivered_at ? *delivered_at - sent_at : -1.0; }
};

struct RunOptions {
  std::optional<std::uint64_t> seed;       // overrides the scenario seed
  std::optional<std::string> spool_dir;    // overrides the sink's spool dir
  struct WavDump {
    std::string from, to, path;
  };
  std::optional<WavDump> wav_dump;
};

struct SimResult {
  EventTrace trace;
  std::vector<MessageRecord> messages;
  std::vector<apps::ExfilRecord> exfil;
  std::vector<std::string> spooled;
  bool wav_dumped = false;

  bool all_delivered(int max_retx = 3) const {
    return std::all_of(messages.begin(), messages.end(), [&](const MessageRecord& m) {
      return m.delivered_at && !m.failed && m.retransmissions <= max_retx;
    });
  }
};

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct Transmission {
  std::size_t node = 0;
  double start = 0.0, end = 0.0;
  guwmanet::NetPacket packet;
  SampleBuffer samples;
};

enum class EventKind { rx_end = 0, timer = 1, app = 2, tx_attempt = 3 };

struct Event {
  double time = 0.0;
  EventKind kind = EventKind::timer;
  unsigned tiebreak = 0;  // transmitter net address for receptions, node otherwise
  std::uint64_t seq = 0;
  std::size_t node = 0;
  std::size_t ref = 0;  // transmission id or app item id

  bool operator>(const Event& o) const {
    if (time != o.time) return time > o.time;
    if (kind != o.kind) return kind > o.kind;
    if (tiebreak != o.tiebreak) return tiebreak > o.tiebreak;
    return seq > o.seq;
  }
};

struct QueuedTx {
  guwmanet::Action action;
  double ready = 0.0;
};

struct SoftCopy {
  SoftPacket soft;
  double time = 0.0;
};

struct Node {
  NodeSpec spec;
  guwmanet::NodeState proto;
  channel::Receiver receiver;
  std::deque<QueuedTx> txq;
  double busy_until = -1.0;
  std::deque<guwal::Frame> outbox;  // application frames, sent one at a time
  bool awaiting_ack = false;
  std::vector<SoftCopy> merge_buffer;
  std::vector<std::size_t> own_tx;  // transmission ids
  std::optional<apps::LineSource> source;
  std::optional<apps::SmtpSink> sink;

  Node(NodeSpec sp, guwmanet::NodeState st, channel::Receiver rx)
      : spec(std::move(sp)), proto(std::move(st)), receiver(std::move(rx)) {}
};

struct AppItem {
  double time = 0.0;
  std::size_t node = 0;
  std::optional<TrafficItem> traffic;
  std::optional<std::string> keystrokes;
};

}  // namespace detail

class Simulator {
 public:
  Simulator(const Scenario& s, RunOptions opt = {})
      : s_(s), opt_(std::move(opt)), cfg_(s.modem()), noise_(detail::splitmix(opt_.seed.value_or(s.rng_seed))),
        mac_rng_(detail::splitmix(opt_.seed.value_or(s.rng_seed) ^ 0xACull)) {
    validate(s_);
    const auto seed = opt_.seed.value_or(s.rng_seed);
    for (std::size_t i = 0; i < s_.nodes.size(); ++i) {
      const auto& n = s_.nodes[i];
      nodes_.emplace_back(n, guwmanet::NodeState(n.net_addr, n.guwal_addr, detail::splitmix(seed + 1 + i), s_.timers),
                          channel::Receiver(cfg_, s_.channel, n.ec_enabled, n.guard_hz));
    }
    if (s_.source) {
      auto& n = nodes_[s_.index_of(s_.source->node)];
      n.source.emplace(n.spec.guwal_addr, s_.source->attacker);
    }
    if (s_.sink) {
      apps::SinkConfig sc;
      sc.spool_dir = opt_.spool_dir.value_or(s_.sink->spool_dir);
      sc.recipient = s_.sink->recipient;
      sc.tunnel = s_.sink->tunnel;
      if (s_.sink->smtp_host) sc.smtp = apps::SmtpEndpoint{*s_.sink->smtp_host, s_.sink->smtp_port};
      nodes_[s_.index_of(s_.sink->node)].sink.emplace(sc);
    }
    for (const auto& t : s_.traffic) {
      const auto it = std::find_if(s_.nodes.begin(), s_.nodes.end(), [&](const NodeSpec& n) { return n.guwal_addr == t.src; });
      apps_.push_back(detail::AppItem{t.time, static_cast<std::size_t>(it - s_.nodes.begin()), t, std::nullopt});
    }
    for (const auto& k : s_.keystrokes) apps_.push_back(detail::AppItem{k.time, s_.index_of(k.node), std::nullopt, k.data});
    for (std::size_t i = 0; i < apps_.size(); ++i) push(apps_[i].time, detail::EventKind::app, apps_[i].node, i);
  }

  SimResult run() {
    while (!queue_.empty()) {
      const auto ev = queue_.top();
      queue_.pop();
      if (ev.time > s_.duration) break;
      now_ = ev.time;
      retire_old_transmissions();
      switch (ev.kind) {
        case detail::EventKind::rx_end: on_rx_end(ev.node, ev.ref); break;
        case detail::EventKind::timer: on_timer(ev.node); break;
        case detail::EventKind::app: on_app(ev.ref); break;
        case detail::EventKind::tx_attempt: on_tx_attempt(ev.node); break;
      }
    }
    for (auto& n : nodes_) {
      if (!n.sink) continue;
      for (auto& p : n.sink->close()) result_.spooled.push_back(p);
      result_.exfil = n.sink->records();
      n.sink->flush();
    }
    return std::move(result_);
  }

 private:
  void push(double t, detail::EventKind k, std::size_t node, std::size_t ref = 0, unsigned tiebreak = 0) {
    if (k != detail::EventKind::rx_end) tiebreak = s_.nodes[node].net_addr;
    queue_.push(detail::Event{t, k, tiebreak, seq_++, node, ref});
  }

  // Transmissions that can no longer overlap anything still on the air give
  // back their sample buffers.
  void retire_old_transmissions() {
    const double horizon = 2.0 * cfg_.packet_airtime() + 1.0;
    while (first_live_ < tx_.size() && tx_[first_live_].end + horizon < now_) {
      tx_[first_live_].samples = SampleBuffer{};
      ++first_live_;
    }
  }

  void log(std::size_t node, const std::string& kind, const std::string& line) {
    result_.trace.records.push_back(TraceRecord{now_, s_.nodes[node].net_addr, kind, line});
  }

  std::string prefix(std::size_t node) const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << "t=" << now_ << " node=" << unsigned(s_.nodes[node].net_addr);
    return os.str();
  }

  double link_snr(std::size_t from, std::size_t to, double t) const {
    return channel::link_snr_db(link_between(s_, from, to, t), cfg_, s_.channel);
  }

  bool audible(std::size_t from, std::size_t to, double t) const {
    return link_snr(from, to, t) >= s_.channel.decode_snr_db - s_.channel.audible_margin_db;
  }

  double arrival_delay(std::size_t from, std::size_t to) const {
    return distance(s_, from, to) / s_.channel.speed_of_sound;
  }

  // ---- application layer ------------------------------------------------

  void on_app(std::size_t id) {
    const auto& item = apps_[id];
    auto& n = nodes_[item.node];
    std::vector<guwal::Frame> frames;
    if (item.traffic) {
      guwal::Header h{guwal::FrameType::data, false, item.traffic->ack_requested, item.traffic->src, item.traffic->dst};
      frames = guwal::chunk_message(item.traffic->text, h);
    } else if (n.source) {
      frames = n.source->feed(*item.keystrokes);
    }
    for (auto& f : frames) n.outbox.push_back(f);
    pump_outbox(item.node);
  }

  void pump_outbox(std::size_t i) {
    auto& n = nodes_[i];
    while (!n.awaiting_ack && !n.outbox.empty()) {
      const auto f = n.outbox.front();
      n.outbox.pop_front();
      auto actions = n.proto.originate(f, now_);
      MessageRecord m;
      m.origin = i;
      m.frame = f;
      m.sent_at = now_;
      m.routed = !actions.empty() && !actions.front().flood;
      result_.messages.push_back(m);
      if (f.header.ack_requested) n.awaiting_ack = true;
      apply(i, actions);
    }
  }

  MessageRecord* find_message(const guwal::Frame& f) {
    for (auto it = result_.messages.rbegin(); it != result_.messages.rend(); ++it) {
      if (it->frame == f) return &*it;
    }
    return nullptr;
  }

  // ---- protocol actions ------------------------------------------------

  void apply(std::size_t i, const std::vector<guwmanet::Action>& actions) {
    auto& n = nodes_[i];
    for (const auto& a : actions) {
      log(i, guwmanet::to_string(a.kind), guwmanet::format_action(now_, n.spec.net_addr, a));
      using guwmanet::ActionKind;
      switch (a.kind) {
        case ActionKind::send:
        case ActionKind::forward:
        case ActionKind::send_ack:
        case ActionKind::retransmit: {
          n.txq.push_back(detail::QueuedTx{a, now_ + a.delay});
          push(now_ + a.delay, detail::EventKind::tx_attempt, i);
          if (a.kind == ActionKind::retransmit) {
            if (auto* m = find_message(a.packet.frame)) ++m->retransmissions;
          }
          break;
        }
        case ActionKind::deliver: {
          if (auto* m = find_message(a.packet.frame); m && !m->delivered_at) m->delivered_at = now_;
          if (n.sink) {
            if (auto path = n.sink->accept(a.packet, now_)) result_.spooled.push_back(*path);
          }
          break;
        }
        case ActionKind::ack_received: {
          if (auto* m = find_message(a.packet.frame); m && !m->acked_at) m->acked_at = now_;
          n.awaiting_ack = false;
          break;
        }
        case ActionKind::delivery_failed: {
          if (auto* m = find_message(a.packet.frame)) m->failed = true;
          n.awaiting_ack = false;
          break;
        }
        default: break;
      }
    }
    if (auto d = n.proto.next_deadline()) push(std::max(*d, now_), detail::EventKind::timer, i);
    if (!n.awaiting_ack && !n.outbox.empty()) pump_outbox(i);
  }

  void on_timer(std::size_t i) {
    auto& n = nodes_[i];
    const auto d = n.proto.next_deadline();
    if (!d || *d > now_) return;  // superseded timer
    apply(i, n.proto.on_timer(now_));
  }

  // ---- medium access ------------------------------------------------

  // A transmission from another node whose signal is present at node i now
  // and loud enough to sense.
  std::optional<double> channel_busy_until(std::size_t i) const {
    std::optional<double> until;
    for (std::size_t id = first_live_; id < tx_.size(); ++id) {
      const auto& t = tx_[id];
      if (t.node == i) continue;
      const double d = arrival_delay(t.node, i);
      if (now_ < t.start + d || now_ >= t.end + d) continue;
      if (link_snr(t.node, i, now_) < s_.channel.decode_snr_db - s_.channel.sense_margin_db) continue;
      until = std::max(until.value_or(0.0), t.end + d);
    }
    return until;
  }

  void on_tx_attempt(std::size_t i) {
    auto& n = nodes_[i];
    if (n.txq.empty()) return;
    const auto it = std::min_element(n.txq.begin(), n.txq.end(),
                                     [](const detail::QueuedTx& a, const detail::QueuedTx& b) { return a.ready < b.ready; });
    if (it->ready > now_) return;  // a later attempt event exists for it
    if (n.busy_until > now_) {
      push(n.busy_until, detail::EventKind::tx_attempt, i);
      return;
    }
    if (auto busy = channel_busy_until(i)) {
      const double backoff = 0.5 * mac_rng_.uniform();
      const double retry = *busy + backoff;
      std::ostringstream os;
      os << prefix(i) << " event=defer until=" << std::fixed << std::setprecision(3) << retry;
      log(i, "defer", os.str());
      it->ready = retry;
      push(retry, detail::EventKind::tx_attempt, i);
      return;
    }
    const auto q = *it;
    n.txq.erase(it);
    start_transmission(i, q.action);
    if (!n.txq.empty()) push(n.busy_until, detail::EventKind::tx_attempt, i);
  }

  void start_transmission(std::size_t i, const guwmanet::Action& a) {
    auto& n = nodes_[i];
    detail::Transmission t;
    t.node = i;
    t.start = now_;
    t.end = now_ + cfg_.packet_airtime();
    t.packet = a.packet;
    t.samples = phy::modulate_packet(guwmanet::encode_net(a.packet), cfg_);
    if (n.spec.guard_hz) t.samples = counter::lowpass4(t.samples, *n.spec.guard_hz);
    const auto id = tx_.size();
    tx_.push_back(std::move(t));
    n.own_tx.push_back(id);
    n.busy_until = tx_[id].end;

    const auto& f = a.packet.frame;
    std::ostringstream os;
    os << prefix(i) << " event=tx_start kind=" << guwmanet::to_string(a.kind) << " tx=" << unsigned(a.packet.net.transmitter)
       << " last_hop=" << unsigned(a.packet.net.last_hop) << " type=" << (f.header.type == guwal::FrameType::ack ? "ack" : "data")
       << " src=" << unsigned(f.header.src) << " dst=" << unsigned(f.header.dst) << " crc=" << guwmanet::hex16(f.crc)
       << " airtime=" << std::fixed << std::setprecision(3) << cfg_.packet_airtime();
    log(i, "tx_start", os.str());

    for (std::size_t r = 0; r < nodes_.size(); ++r) {
      if (r == i || !audible(i, r, now_)) continue;
      push(tx_[id].end + arrival_delay(i, r), detail::EventKind::rx_end, r, id, s_.nodes[i].net_addr);
    }
  }

  // ---- reception ------------------------------------------------

  void on_rx_end(std::size_t r, std::size_t id) {
    const auto& t = tx_[id];
    auto& n = nodes_[r];
    const double d = arrival_delay(t.node, r);
    const double a0 = t.start + d, a1 = t.end + d;
    std::ostringstream os;
    os << prefix(r) << " event=rx from=" << unsigned(s_.nodes[t.node].net_addr);

    std::string lost;
    for (auto own : n.own_tx) {
      if (tx_[own].start < a1 && tx_[own].end > a0) lost = "half_duplex";
    }
    if (lost.empty()) {
      for (std::size_t u = first_live_; u < tx_.size(); ++u) {
        if (u == id || tx_[u].node == r) continue;
        const double du = arrival_delay(tx_[u].node, r);
        if (tx_[u].start + du < a1 && tx_[u].end + du > a0 && audible(tx_[u].node, r, tx_[u].start)) {
          lost = "collision";
          break;
        }
      }
    }
    if (!lost.empty()) {
      os << " status=lost reason=" << lost;
      log(r, "rx_lost", os.str());
      return;
    }

    const auto lead = static_cast<std::size_t>(noise_.uniform() * 2048.0);
    const auto padded = channel::pad(t.samples, lead, 1024);
    const auto rx = channel::propagate(padded, link_between(s_, t.node, r, t.start), s_.channel, cfg_, noise_);
    maybe_dump(t.node, r, rx);
    auto res = n.receiver.receive(rx);
    os << std::fixed << std::setprecision(2);
    if (res.status != channel::RxStatus::no_preamble) os << " snr=" << res.snr_db;

    if (res.status == channel::RxStatus::crc_fail && res.soft) {
      std::erase_if(n.merge_buffer, [&](const detail::SoftCopy& c) { return now_ - c.time > s_.timers.dedup_lifetime; });
      n.merge_buffer.push_back({*res.soft, now_});
      if (n.merge_buffer.size() > 4) n.merge_buffer.erase(n.merge_buffer.begin());
      if (n.merge_buffer.size() >= 2 && n.spec.ec_enabled) {
        std::vector<SoftPacket> copies;
        for (const auto& c : n.merge_buffer) copies.push_back(c.soft);
        auto m = ec::merge(copies);
        if (m.ok()) {
          n.merge_buffer.clear();
          res.status = channel::RxStatus::ok;
          res.packet = m.packet;
          os << " merged=" << copies.size();
        }
      }
    }
    os << " status=" << channel::to_string(res.status);
    if (res.corrected) os << " corrected=true";
    log(r, res.status == channel::RxStatus::ok ? "rx" : "rx_fail", os.str());
    if (res.status == channel::RxStatus::ok) apply(r, n.proto.handle_inbound(*res.packet, now_));
  }

  void maybe_dump(std::size_t from, std::size_t to, const SampleBuffer& rx) {
    if (!opt_.wav_dump || result_.wav_dumped) return;
    if (s_.nodes[from].id != opt_.wav_dump->from || s_.nodes[to].id != opt_.wav_dump->to) return;
    wav::write_file(opt_.wav_dump->path, rx);
    result_.wav_dumped = true;
  }

  Scenario s_;
  RunOptions opt_;
  phy::ModemConfig cfg_;
  channel::Gaussian noise_;
  channel::Gaussian mac_rng_;
  std::vector<detail::Node> nodes_;
  std::vector<detail::AppItem> apps_;
  std::vector<detail::Transmission> tx_;
  std::size_t first_live_ = 0;
  std::priority_queue<detail::Event, std::vector<detail::Event>, std::greater<>> queue_;
  std::uint64_t seq_ = 0;
  double now_ = 0.0;
  SimResult result_;
};

inline SimResult run_scenario(const Scenario& s, RunOptions opt = {}) { return Simulator(s, std::move(opt)).run(); }

}  // namespace acmesh::sim
