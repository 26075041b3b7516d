#include <acmesh/sim.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace acmesh;
using namespace acmesh::sim;

namespace {

const std::string kData = ACMESH_DATA_DIR;

std::string field_of(const std::string& text) {
  try {
    validate(parse_scenario(text));
  } catch (const ScenarioError& e) {
    return e.field();
  }
  return "<accepted>";
}

std::string nodes_doc(const std::string& nodes, const std::string& extra = "") {
  return R"({"schema_version": 1, "name": "t", "duration": 400, "nodes": [)" + nodes + "]" + extra + "}";
}

std::string node(const std::string& id, int net, int guwal, double x, double y = 0.0) {
  return R"({"id": ")" + id + R"(", "net_addr": )" + std::to_string(net) + R"(, "guwal_addr": )" + std::to_string(guwal) +
         R"(, "position": [)" + std::to_string(x) + ", " + std::to_string(y) + "]}";
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool has_line(const SimResult& r, const std::string& kind, const std::string& needle) {
  return std::any_of(r.trace.records.begin(), r.trace.records.end(), [&](const TraceRecord& t) {
    return t.kind == kind && t.line.find(needle) != std::string::npos;
  });
}

}  // namespace

TEST(Scenario, ValidationNamesTheField) {
  const auto a = node("A", 1, 1, 0), b = node("B", 2, 2, 5);
  EXPECT_EQ(field_of(nodes_doc(a + "," + b)), "<accepted>");
  EXPECT_EQ(field_of(R"({"schema_version": 2, "nodes": []})"), "schema_version");
  EXPECT_EQ(field_of(nodes_doc("")), "nodes");
  EXPECT_EQ(field_of(nodes_doc(node("A", 40, 1, 0))), "nodes[0].net_addr");
  EXPECT_EQ(field_of(nodes_doc(node("A", 1, 64, 0))), "nodes[0].guwal_addr");
  EXPECT_EQ(field_of(nodes_doc(a + "," + node("A", 2, 2, 5))), "nodes[1].id");
  EXPECT_EQ(field_of(nodes_doc(a + "," + node("B", 2, 2, 0))), "nodes[1].position");
  EXPECT_EQ(field_of(nodes_doc(a + "," + node("B", 1, 2, 5))), "nodes[1].net_addr");
  EXPECT_EQ(field_of(nodes_doc(a + "," + b, R"(, "distance_overrides": [{"a": "A", "b": "Z", "distance": 3}])")),
            "distance_overrides[0].b");
  EXPECT_EQ(field_of(nodes_doc(a + "," + b, R"(, "traffic": [{"time": 0, "src": 9, "dst": 1, "text": "x"}])")),
            "traffic[0].src");
  EXPECT_EQ(field_of(nodes_doc(a + "," + b, R"(, "traffic": [{"time": 900, "src": 1, "dst": 2, "text": "x"}])")),
            "traffic[0].time");
  EXPECT_EQ(field_of(nodes_doc(a + "," + b, R"(, "profile": "fast")")), "profile");
  EXPECT_EQ(field_of(nodes_doc(a + "," + b, R"(, "sink": {"node": "Q"})")), "sink.node");
}

TEST(Scenario, InvalidJsonReportsPosition) {
  try {
    parse_scenario("{\n  \"schema_version\": 1,\n  oops\n}");
    FAIL() << "accepted invalid JSON";
  } catch (const ScenarioError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Scenario, Fig9NeighborGraph) {
  const auto s = load_scenario(kData + "/fig9.json");
  const auto g = neighbor_graph(s);
  std::set<std::pair<std::string, std::string>> edges;
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (auto j : g[i]) {
      auto a = s.nodes[i].id, b = s.nodes[j].id;
      if (a > b) std::swap(a, b);
      edges.insert({a, b});
    }
  }
  const std::set<std::pair<std::string, std::string>> want{{"N2", "N5"}, {"N2", "N3"}, {"N3", "N4"}, {"N1", "N3"}, {"N1", "N4"}};
  EXPECT_EQ(edges, want);
}

TEST(Simulator, DeterministicForSeed) {
  const auto s = load_scenario(kData + "/fig9.json");
  const auto a = Simulator(s).run(), b = Simulator(s).run();
  EXPECT_EQ(a.trace.log(), b.trace.log());
  RunOptions opt;
  opt.seed = 12345;
  const auto c = Simulator(s, opt).run();
  EXPECT_NE(a.trace.log(), c.trace.log());
}

TEST(Simulator, Fig9LatencyAfterRouteEstablished) {
  const auto s = load_scenario(kData + "/fig9.json");
  const auto r = Simulator(s).run();
  ASSERT_EQ(r.messages.size(), 3u);
  EXPECT_TRUE(r.all_delivered());
  EXPECT_FALSE(r.messages[0].routed);
  for (std::size_t i = 1; i < r.messages.size(); ++i) {
    EXPECT_TRUE(r.messages[i].routed);
    EXPECT_NEAR(r.messages[i].latency(), 18.0, 2.0);
  }
  // three hops of roughly one packet airtime each
  EXPECT_GT(r.messages[1].latency(), 3 * 5.93);
}

TEST(Simulator, RangeDecidesDelivery) {
  const std::string traffic = R"(, "traffic": [{"time": 0, "src": 1, "dst": 2, "text": "ping"}])";
  const auto near = Simulator(parse_scenario(nodes_doc(node("A", 1, 1, 0) + "," + node("B", 2, 2, 7.5), traffic))).run();
  EXPECT_TRUE(near.all_delivered());
  const auto far = Simulator(parse_scenario(nodes_doc(node("A", 1, 1, 0) + "," + node("B", 2, 2, 9.0), traffic))).run();
  ASSERT_EQ(far.messages.size(), 1u);
  EXPECT_FALSE(far.messages[0].delivered_at);
  EXPECT_TRUE(far.messages[0].failed);
  EXPECT_EQ(far.messages[0].retransmissions, 3);
  EXPECT_EQ(far.trace.count("delivery_failed"), 1u);
}

TEST(Simulator, HiddenTerminalsCollide) {
  // A and C cannot hear each other, so carrier sense does not help at B
  const std::string traffic =
      R"(, "traffic": [{"time": 0, "src": 1, "dst": 2, "text": "from a"}, {"time": 0, "src": 3, "dst": 2, "text": "from c"}])";
  const auto r = Simulator(parse_scenario(nodes_doc(node("A", 1, 1, 0) + "," + node("B", 2, 2, 7) + "," + node("C", 3, 3, 14), traffic))).run();
  EXPECT_TRUE(has_line(r, "rx_lost", "reason=collision"));
  EXPECT_EQ(r.trace.count("rx_lost") % 2, 0u);  // both frames die together
}

TEST(Simulator, HalfDuplexLosesArrivalsWhileTransmitting) {
  const std::string traffic =
      R"(, "traffic": [{"time": 0, "src": 1, "dst": 2, "text": "a"}, {"time": 0, "src": 2, "dst": 1, "text": "b"}])";
  // simultaneous start: neither senses the other yet
  const auto r = Simulator(parse_scenario(nodes_doc(node("A", 1, 1, 0) + "," + node("B", 2, 2, 3), traffic))).run();
  EXPECT_TRUE(has_line(r, "rx_lost", "reason=half_duplex"));
}

TEST(Simulator, RouteRepairsAroundTimedBlocker) {
  // A reaches C directly until a wall appears at t=100; then the path runs via B
  const std::string extra = R"(,
    "blockers": [{"from": [3.0, -1.0], "to": [3.0, 1.0], "start": 100}],
    "traffic": [{"time": 0, "src": 1, "dst": 3, "text": "early"}, {"time": 150, "src": 1, "dst": 3, "text": "late"}])";
  const auto s = parse_scenario(nodes_doc(node("A", 1, 1, 0) + "," + node("B", 2, 2, 3, 4) + "," + node("C", 3, 3, 6), extra));
  validate(s);
  EXPECT_EQ(neighbor_graph(s, 0.0)[0].size(), 2u);
  EXPECT_EQ(neighbor_graph(s, 120.0)[0].size(), 1u);
  const auto r = Simulator(s).run();
  ASSERT_EQ(r.messages.size(), 2u);
  EXPECT_TRUE(r.messages[0].delivered_at);
  ASSERT_TRUE(r.messages[1].delivered_at);
  // the late message is forwarded by B
  const bool b_forwarded = std::any_of(r.trace.records.begin(), r.trace.records.end(), [](const TraceRecord& t) {
    return t.time > 150 && t.node == 2 && t.kind == "forward";
  });
  EXPECT_TRUE(b_forwarded);
}

TEST(Simulator, KeylogEndToEnd) {
  const auto dir = std::filesystem::temp_directory_path() / "acmesh-sim-keylog";
  std::filesystem::remove_all(dir);
  const auto s = load_scenario(kData + "/keylog_demo.json");
  RunOptions opt;
  opt.spool_dir = dir.string();
  const auto r = Simulator(s, opt).run();
  std::string all;
  for (const auto& p : r.spooled) all += slurp(p);
  for (const char* line : {"ls -la", "su root", "passw0rd", "ssh admin@10.0.0.7 -p 2222"}) {
    EXPECT_NE(all.find(std::string("\r\n") + line + "\r\n"), std::string::npos) << line;
  }
  EXPECT_NE(all.find("X-Acmesh-Src-Guwal: 10"), std::string::npos);
  EXPECT_NE(all.find("X-Acmesh-Packet: "), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Simulator, TraceJsonExport) {
  const auto r = Simulator(load_scenario(kData + "/fig9.json")).run();
  const auto j = r.trace.to_json();
  ASSERT_EQ(j.size(), r.trace.records.size());
  double prev = -1;
  for (const auto& e : j) {
    ASSERT_TRUE(e.contains("t") && e.contains("node") && e.contains("kind") && e.contains("line"));
    EXPECT_GE(e["t"].get<double>(), prev);
    prev = e["t"].get<double>();
  }
  EXPECT_GT(r.trace.count("deliver"), 0u);
  EXPECT_GT(r.trace.count("tx_start"), 0u);
}

TEST(Simulator, WavDumpOfOneLink) {
  const auto path = (std::filesystem::temp_directory_path() / "acmesh-sim-dump.wav").string();
  std::filesystem::remove(path);
  RunOptions opt;
  opt.wav_dump = RunOptions::WavDump{"N5", "N2", path};
  const auto r = Simulator(load_scenario(kData + "/fig9.json"), opt).run();
  EXPECT_TRUE(r.wav_dumped);
  const auto audio = wav::read_file(path);
  phy::Demodulator demod(phy::ModemConfig::ultrasonic_21k());
  EXPECT_FALSE(demod.scan(audio).empty());
  std::filesystem::remove(path);
}
