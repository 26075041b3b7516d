#pragma once

// Simulator world description, loaded from JSON (schema_version 1).

#include <acmesh/channel.hpp>
#include <acmesh/errors.hpp>
#include <acmesh/guwmanet.hpp>
#include <acmesh/phy.hpp>

#include <json.hpp>

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace acmesh::sim {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum class Role { drone, victim, attacker };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::drone: return "drone";
    case Role::victim: return "victim";
    case Role::attacker: return "attacker";
  }
  return "?";
}

using Point = std::array<double, 2>;

struct NodeSpec {
  std::string id;
  std::uint8_t net_addr = 0;
  std::uint8_t guwal_addr = 0;
  Point position{0, 0};
  Role role = Role::drone;
  bool ec_enabled = true;
  std::optional<double> guard_hz;  // lowpass guard on this node's audio path
};

// Line-of-sight obstruction between two points, active on [start, end).
struct Blocker {
  Point from{0, 0};
  Point to{0, 0};
  double start = 0.0;
  double end = std::numeric_limits<double>::infinity();
  std::optional<double> penalty_db;  // defaults to the channel's blocking penalty
};

struct DistanceOverride {
  std::string a, b;
  double distance = 0.0;
};

struct TrafficItem {
  double time = 0.0;
  std::uint8_t src = 0;  // GUWAL addresses
  std::uint8_t dst = 0;
  std::string text;
  bool ack_requested = true;
};

struct Keystrokes {
  double time = 0.0;
  std::string node;
  std::string data;
};

struct SourceSpec {
  std::string node;
  std::uint8_t attacker = 0;  // GUWAL destination of every line
};

struct SinkSpec {
  std::string node;
  std::string spool_dir = "spool";
  std::string recipient = "collector@example.org";
  bool tunnel = false;
  std::optional<std::string> smtp_host;
  std::uint16_t smtp_port = 25;
};

struct Scenario {
  int schema_version = kSchemaVersion;
  std::string name;
  std::string profile = "ultrasonic-21k";
  std::uint64_t rng_seed = 1;
  double duration = 600.0;
  channel::ChannelModel channel;
  guwmanet::Timers timers;
  std::vector<NodeSpec> nodes;
  std::vector<Blocker> blockers;
  std::vector<DistanceOverride> distance_overrides;
  std::vector<TrafficItem> traffic;
  std::vector<Keystrokes> keystrokes;
  std::optional<SourceSpec> source;
  std::optional<SinkSpec> sink;

  phy::ModemConfig modem() const { return phy::ModemConfig::by_name(profile); }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].id == id) return i;
    }
    throw ScenarioError("nodes", "no node with id '" + id + "'");
  }
};

// ---------------------------------------------------------------------------
// Geometry

inline double euclid(const Point& a, const Point& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

inline bool segments_cross(const Point& p1, const Point& p2, const Point& q1, const Point& q2) {
  auto cross = [](const Point& o, const Point& a, const Point& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
  };
  const double d1 = cross(q1, q2, p1), d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1), d4 = cross(p1, p2, q2);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

inline double distance(const Scenario& s, std::size_t i, std::size_t j) {
  for (const auto& o : s.distance_overrides) {
    if ((o.a == s.nodes[i].id && o.b == s.nodes[j].id) || (o.a == s.nodes[j].id && o.b == s.nodes[i].id)) {
      return o.distance;
    }
  }
  return euclid(s.nodes[i].position, s.nodes[j].position);
}

// Total blocking loss (dB) on the line of sight i-j at time t.
inline double blocking_db(const Scenario& s, std::size_t i, std::size_t j, double t) {
  double loss = 0.0;
  for (const auto& b : s.blockers) {
    if (t < b.start || t >= b.end) continue;
    if (segments_cross(s.nodes[i].position, s.nodes[j].position, b.from, b.to)) {
      loss += b.penalty_db.value_or(s.channel.blocking_penalty_db);
    }
  }
  return loss;
}

inline channel::Link link_between(const Scenario& s, std::size_t i, std::size_t j, double t) {
  return channel::Link{distance(s, i, j), false, blocking_db(s, i, j, t)};
}

// Links whose budget reaches the squelch level at time t.
inline std::vector<std::vector<std::size_t>> neighbor_graph(const Scenario& s, double t = 0.0) {
  const auto cfg = s.modem();
  std::vector<std::vector<std::size_t>> g(s.nodes.size());
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    for (std::size_t j = 0; j < s.nodes.size(); ++j) {
      if (i != j && channel::link_snr_db(link_between(s, i, j, t), cfg, s.channel) >= s.channel.decode_snr_db) {
        g[i].push_back(j);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

template <typename T>
T get(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ScenarioError(path, "has the wrong type");
  }
}

template <typename T>
T required(const json& obj, const char* key, const std::string& path) {
  if (!obj.contains(key)) throw ScenarioError(path + "." + key, "is required");
  return get<T>(obj.at(key), path + "." + key);
}

template <typename T>
T optional_or(const json& obj, const char* key, const std::string& path, T fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  return get<T>(obj.at(key), path + "." + key);
}

inline Point point(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ScenarioError(path, "must be an [x, y] pair of numbers");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

inline std::uint8_t address(const json& obj, const char* key, const std::string& path, unsigned max) {
  const auto v = required<long long>(obj, key, path);
  if (v < 0 || v > static_cast<long long>(max)) {
    throw ScenarioError(path + "." + key, "must lie in [0, " + std::to_string(max) + "]");
  }
  return static_cast<std::uint8_t>(v);
}

inline void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ScenarioError(path, "must be an object");
}

inline void expect_array(const json& j, const std::string& path) {
  if (!j.is_array()) throw ScenarioError(path, "must be an array");
}

inline std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < text.size() && i + 1 < byte; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + " column " + std::to_string(col);
}

inline void parse_channel(const json& c, channel::ChannelModel& m) {
  expect_object(c, "channel");
  m.ref_loss_db = optional_or(c, "ref_loss_db", "channel", m.ref_loss_db);
  m.spreading_exp = optional_or(c, "spreading_exp", "channel", m.spreading_exp);
  m.absorption_coeff = optional_or(c, "absorption_coeff", "channel", m.absorption_coeff);
  m.noise_floor_db = optional_or(c, "noise_floor_db", "channel", m.noise_floor_db);
  m.decode_snr_db = optional_or(c, "decode_snr_db", "channel", m.decode_snr_db);
  m.speed_of_sound = optional_or(c, "speed_of_sound", "channel", m.speed_of_sound);
  m.blocking_penalty_db = optional_or(c, "blocking_penalty_db", "channel", m.blocking_penalty_db);
  m.sense_margin_db = optional_or(c, "sense_margin_db", "channel", m.sense_margin_db);
  m.audible_margin_db = optional_or(c, "audible_margin_db", "channel", m.audible_margin_db);
  m.hw_knee_hz = optional_or(c, "hw_knee_hz", "channel", m.hw_knee_hz);
  m.hw_rolloff_db_per_khz = optional_or(c, "hw_rolloff_db_per_khz", "channel", m.hw_rolloff_db_per_khz);
  if (m.absorption_coeff < 0) throw ScenarioError("channel.absorption_coeff", "must be non-negative");
  if (!(m.speed_of_sound > 0)) throw ScenarioError("channel.speed_of_sound", "must be positive");
}

}  // namespace detail

inline void validate(const Scenario& s);

inline Scenario parse_scenario(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ScenarioError("<document>", detail::line_col(text, e.byte) + ": invalid JSON");
  }
  using namespace detail;
  expect_object(root, "<document>");
  Scenario s;
  s.schema_version = required<int>(root, "schema_version", "scenario");
  if (s.schema_version != kSchemaVersion) {
    throw ScenarioError("schema_version", "unsupported version " + std::to_string(s.schema_version));
  }
  s.name = optional_or<std::string>(root, "name", "scenario", "");
  s.profile = optional_or<std::string>(root, "profile", "scenario", s.profile);
  try {
    phy::ModemConfig::by_name(s.profile);
  } catch (const RangeError& e) {
    throw ScenarioError("profile", e.what());
  }
  s.rng_seed = optional_or<std::uint64_t>(root, "rng_seed", "scenario", s.rng_seed);
  s.duration = optional_or<double>(root, "duration", "scenario", s.duration);
  if (!(s.duration > 0)) throw ScenarioError("duration", "must be positive");

  if (root.contains("channel")) detail::parse_channel(root["channel"], s.channel);
  if (root.contains("timers")) {
    const auto& t = root["timers"];
    expect_object(t, "timers");
    auto& tm = s.timers;
    tm.ack_timeout = optional_or(t, "ack_timeout", "timers", tm.ack_timeout);
    tm.temp_route_lifetime = optional_or(t, "temp_route_lifetime", "timers", tm.temp_route_lifetime);
    tm.dedup_lifetime = optional_or(t, "dedup_lifetime", "timers", tm.dedup_lifetime);
    tm.neighbor_lifetime = optional_or(t, "neighbor_lifetime", "timers", tm.neighbor_lifetime);
    tm.jitter_max = optional_or(t, "jitter_max", "timers", tm.jitter_max);
    tm.max_retransmissions = optional_or(t, "max_retransmissions", "timers", tm.max_retransmissions);
    if (tm.max_retransmissions < 0 || tm.max_retransmissions > 3) {
      throw ScenarioError("timers.max_retransmissions", "must lie in [0, 3]");
    }
  }

  if (!root.contains("nodes")) throw ScenarioError("nodes", "is required");
  expect_array(root["nodes"], "nodes");
  for (std::size_t i = 0; i < root["nodes"].size(); ++i) {
    const auto& n = root["nodes"][i];
    const std::string path = "nodes[" + std::to_string(i) + "]";
    expect_object(n, path);
    NodeSpec spec;
    spec.id = required<std::string>(n, "id", path);
    spec.net_addr = address(n, "net_addr", path, guwmanet::kMaxNetAddress);
    spec.guwal_addr = address(n, "guwal_addr", path, guwal::kMaxAddress);
    if (!n.contains("position")) throw ScenarioError(path + ".position", "is required");
    spec.position = point(n["position"], path + ".position");
    const auto role = optional_or<std::string>(n, "role", path, "drone");
    if (role == "drone") spec.role = Role::drone;
    else if (role == "victim") spec.role = Role::victim;
    else if (role == "attacker") spec.role = Role::attacker;
    else throw ScenarioError(path + ".role", "must be one of drone, victim, attacker");
    spec.ec_enabled = optional_or(n, "ec_enabled", path, true);
    if (n.contains("guard_hz") && !n["guard_hz"].is_null()) {
      spec.guard_hz = get<double>(n["guard_hz"], path + ".guard_hz");
    }
    s.nodes.push_back(spec);
  }

  if (root.contains("blockers")) {
    expect_array(root["blockers"], "blockers");
    for (std::size_t i = 0; i < root["blockers"].size(); ++i) {
      const auto& b = root["blockers"][i];
      const std::string path = "blockers[" + std::to_string(i) + "]";
      expect_object(b, path);
      Blocker bl;
      if (!b.contains("from")) throw ScenarioError(path + ".from", "is required");
      if (!b.contains("to")) throw ScenarioError(path + ".to", "is required");
      bl.from = point(b["from"], path + ".from");
      bl.to = point(b["to"], path + ".to");
      bl.start = optional_or(b, "start", path, 0.0);
      bl.end = optional_or(b, "end", path, bl.end);
      if (b.contains("penalty_db") && !b["penalty_db"].is_null()) bl.penalty_db = get<double>(b["penalty_db"], path + ".penalty_db");
      if (bl.end <= bl.start) throw ScenarioError(path + ".end", "must be later than start");
      s.blockers.push_back(bl);
    }
  }

  if (root.contains("distance_overrides")) {
    expect_array(root["distance_overrides"], "distance_overrides");
    for (std::size_t i = 0; i < root["distance_overrides"].size(); ++i) {
      const auto& o = root["distance_overrides"][i];
      const std::string path = "distance_overrides[" + std::to_string(i) + "]";
      expect_object(o, path);
      DistanceOverride d{required<std::string>(o, "a", path), required<std::string>(o, "b", path),
                         required<double>(o, "distance", path)};
      if (!(d.distance > 0)) throw ScenarioError(path + ".distance", "must be positive");
      s.distance_overrides.push_back(d);
    }
  }

  if (root.contains("traffic")) {
    expect_array(root["traffic"], "traffic");
    for (std::size_t i = 0; i < root["traffic"].size(); ++i) {
      const auto& t = root["traffic"][i];
      const std::string path = "traffic[" + std::to_string(i) + "]";
      expect_object(t, path);
      TrafficItem item;
      item.time = required<double>(t, "time", path);
      item.src = address(t, "src", path, guwal::kMaxAddress);
      item.dst = address(t, "dst", path, guwal::kMaxAddress);
      item.text = required<std::string>(t, "text", path);
      item.ack_requested = optional_or(t, "ack_requested", path, true);
      if (item.time < 0) throw ScenarioError(path + ".time", "must be non-negative");
      s.traffic.push_back(item);
    }
  }

  if (root.contains("source")) {
    const auto& src = root["source"];
    expect_object(src, "source");
    s.source = SourceSpec{required<std::string>(src, "node", "source"),
                          address(src, "attacker", "source", guwal::kMaxAddress)};
  }
  if (root.contains("keystrokes")) {
    expect_array(root["keystrokes"], "keystrokes");
    for (std::size_t i = 0; i < root["keystrokes"].size(); ++i) {
      const auto& k = root["keystrokes"][i];
      const std::string path = "keystrokes[" + std::to_string(i) + "]";
      expect_object(k, path);
      s.keystrokes.push_back(Keystrokes{required<double>(k, "time", path), required<std::string>(k, "node", path),
                                        required<std::string>(k, "data", path)});
    }
  }
  if (root.contains("sink")) {
    const auto& k = root["sink"];
    expect_object(k, "sink");
    SinkSpec sink;
    sink.node = required<std::string>(k, "node", "sink");
    sink.spool_dir = optional_or(k, "spool_dir", "sink", sink.spool_dir);
    sink.recipient = optional_or(k, "recipient", "sink", sink.recipient);
    sink.tunnel = optional_or(k, "tunnel", "sink", false);
    if (k.contains("smtp_host") && !k["smtp_host"].is_null()) sink.smtp_host = get<std::string>(k["smtp_host"], "sink.smtp_host");
    sink.smtp_port = optional_or<std::uint16_t>(k, "smtp_port", "sink", 25);
    s.sink = sink;
  }

  validate(s);
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ScenarioError("<file>", "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

// Semantic checks that need the whole document.
inline void validate(const Scenario& s) {
  if (s.nodes.empty()) throw ScenarioError("nodes", "must contain at least one node");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    const auto& n = s.nodes[i];
    const std::string path = "nodes[" + std::to_string(i) + "]";
    if (!ids.insert(n.id).second) throw ScenarioError(path + ".id", "duplicate id '" + n.id + "'");
    if (n.guard_hz && !(*n.guard_hz > 0 && *n.guard_hz < s.modem().sample_rate / 2)) {
      throw ScenarioError(path + ".guard_hz", "must lie in (0, fs/2)");
    }
  }
  for (std::size_t i = 0; i < s.distance_overrides.size(); ++i) {
    const auto& o = s.distance_overrides[i];
    const std::string path = "distance_overrides[" + std::to_string(i) + "]";
    if (!ids.contains(o.a)) throw ScenarioError(path + ".a", "unknown node '" + o.a + "'");
    if (!ids.contains(o.b)) throw ScenarioError(path + ".b", "unknown node '" + o.b + "'");
    if (o.a == o.b) throw ScenarioError(path + ".b", "must differ from a");
  }
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    for (std::size_t j = i + 1; j < s.nodes.size(); ++j) {
      if (!(distance(s, i, j) > 0)) {
        throw ScenarioError("nodes[" + std::to_string(j) + "].position",
                            "coincides with node '" + s.nodes[i].id + "'");
      }
    }
  }
  // network addresses must be unique among each node and its 1- and 2-hop
  // neighbors, or last-hop selection becomes ambiguous
  const auto g = neighbor_graph(s);
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    std::set<std::size_t> hood{i};
    for (auto j : g[i]) {
      hood.insert(j);
      for (auto k : g[j]) hood.insert(k);
    }
    std::map<unsigned, std::size_t> seen;
    for (auto k : hood) {
      auto [it, fresh] = seen.emplace(s.nodes[k].net_addr, k);
      if (!fresh) {
        const auto later = std::max(k, it->second);
        throw ScenarioError("nodes[" + std::to_string(later) + "].net_addr",
                            "net address " + std::to_string(s.nodes[k].net_addr) + " repeats within two hops of '" +
                                s.nodes[i].id + "'");
      }
    }
  }
  for (std::size_t i = 0; i < s.traffic.size(); ++i) {
    const auto& t = s.traffic[i];
    const std::string path = "traffic[" + std::to_string(i) + "]";
    const auto owners = std::count_if(s.nodes.begin(), s.nodes.end(), [&](const NodeSpec& n) { return n.guwal_addr == t.src; });
    if (owners != 1) throw ScenarioError(path + ".src", "must be the GUWAL address of exactly one node");
    if (t.time >= s.duration) throw ScenarioError(path + ".time", "lies beyond the scenario duration");
  }
  if (s.source && !ids.contains(s.source->node)) throw ScenarioError("source.node", "unknown node '" + s.source->node + "'");
  if (s.sink && !ids.contains(s.sink->node)) throw ScenarioError("sink.node", "unknown node '" + s.sink->node + "'");
  for (std::size_t i = 0; i < s.keystrokes.size(); ++i) {
    const auto& k = s.keystrokes[i];
    const std::string path = "keystrokes[" + std::to_string(i) + "]";
    if (!s.source || k.node != s.source->node) throw ScenarioError(path + ".node", "is not the configured source node");
  }
}

// ---------------------------------------------------------------------------
// Range sweep: two-node link trials over a list of distances.

struct SweepSpec {
  std::string name;
  std::string profile = "ultrasonic-21k";
  std::uint64_t rng_seed = 1;
  channel::ChannelModel channel;
  std::vector<double> distances;
  int trials = 100;
  bool ec_enabled = true;
  std::optional<double> guard_hz;
  bool blocked = false;
};

inline bool is_sweep_document(const std::string& text) {
  try {
    const auto j = json::parse(text);
    return j.is_object() && j.contains("sweep");
  } catch (const json::exception&) {
    return false;
  }
}

inline SweepSpec parse_sweep(const std::string& text) {
  using namespace detail;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ScenarioError("<document>", line_col(text, e.byte) + ": invalid JSON");
  }
  expect_object(root, "<document>");
  const int version = required<int>(root, "schema_version", "scenario");
  if (version != kSchemaVersion) throw ScenarioError("schema_version", "unsupported version " + std::to_string(version));
  SweepSpec s;
  s.name = optional_or<std::string>(root, "name", "scenario", "");
  s.profile = optional_or<std::string>(root, "profile", "scenario", s.profile);
  try {
    phy::ModemConfig::by_name(s.profile);
  } catch (const RangeError& e) {
    throw ScenarioError("profile", e.what());
  }
  s.rng_seed = optional_or<std::uint64_t>(root, "rng_seed", "scenario", s.rng_seed);
  if (root.contains("channel")) parse_channel(root["channel"], s.channel);
  if (!root.contains("sweep")) throw ScenarioError("sweep", "is required");
  const auto& w = root["sweep"];
  expect_object(w, "sweep");
  if (!w.contains("distances")) throw ScenarioError("sweep.distances", "is required");
  expect_array(w["distances"], "sweep.distances");
  for (std::size_t i = 0; i < w["distances"].size(); ++i) {
    const auto path = "sweep.distances[" + std::to_string(i) + "]";
    const auto d = get<double>(w["distances"][i], path);
    if (!(d > 0)) throw ScenarioError(path, "must be positive");
    s.distances.push_back(d);
  }
  s.trials = optional_or(w, "trials", "sweep", s.trials);
  if (s.trials <= 0) throw ScenarioError("sweep.trials", "must be positive");
  s.ec_enabled = optional_or(w, "ec_enabled", "sweep", true);
  s.blocked = optional_or(w, "blocked", "sweep", false);
  if (w.contains("guard_hz") && !w["guard_hz"].is_null()) s.guard_hz = get<double>(w["guard_hz"], "sweep.guard_hz");
  return s;
}

inline std::vector<channel::SweepPoint> run_sweep(const SweepSpec& s) {
  std::vector<channel::SweepPoint> out;
  channel::TrialSetup t;
  t.cfg = phy::ModemConfig::by_name(s.profile);
  t.model = s.channel;
  t.ec_enabled = s.ec_enabled;
  t.guard_hz = s.guard_hz;
  t.blocked = s.blocked;
  for (std::size_t i = 0; i < s.distances.size(); ++i) {
    t.distance = s.distances[i];
    out.push_back(channel::success_rate(t, s.trials, s.rng_seed * 1000003ull + i));
  }
  return out;
}

inline std::string format_sweep(const std::vector<channel::SweepPoint>& pts) {
  std::ostringstream os;
  os << "distance_m  budget_snr_db  success  trials  rate\n";
  for (const auto& p : pts) {
    os << std::fixed << std::setprecision(2) << std::setw(10) << p.distance << "  " << std::setw(13) << p.mean_snr_db
       << "  " << std::setw(7) << p.successes << "  " << std::setw(6) << p.trials << "  " << std::setprecision(3)
       << p.rate() << "\n";
  }
  return os.str();
}

}  // namespace acmesh::sim
