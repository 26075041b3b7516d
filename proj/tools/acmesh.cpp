// acmesh: command-line front end for the acoustic mesh stack.
//
// Exit status: 0 success, 1 negative outcome (nothing decoded, covert audio
// detected, undelivered traffic), 2 usage or validation error.

#include <acmesh/apps.hpp>
#include <acmesh/channel.hpp>
#include <acmesh/counter.hpp>
#include <acmesh/ec.hpp>
#include <acmesh/guwal.hpp>
#include <acmesh/guwmanet.hpp>
#include <acmesh/phy.hpp>
#include <acmesh/scenario.hpp>
#include <acmesh/sim.hpp>
#include <acmesh/wav.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace acmesh;

namespace {

constexpr int kOk = 0;
constexpr int kNegative = 1;
constexpr int kUsage = 2;

std::string default_profile() {
  const char* env = std::getenv("ACMESH_PROFILE");
  return env && *env ? env : "ultrasonic-21k";
}

std::string read_input(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (unsigned char c : s) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += static_cast<char>(c);
    } else if (c < 0x20 || c == 0x7F) {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\x%02x", c);
      out += buf;
    } else {
      out += static_cast<char>(c);
    }
  }
  return out + "\"";
}

std::vector<std::uint8_t> parse_hex(const std::string& hex) {
  if (hex.size() % 2) throw Error("odd number of hex digits");
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16)));
  }
  return out;
}

// Inverse of guwmanet::packet_bytes.
guwmanet::NetPacket packet_from_bytes(const std::vector<std::uint8_t>& b) {
  if (b.size() != 2 + guwal::kFrameBytes) throw LengthError("tunnel packet must be 18 bytes");
  if (b[0] > guwmanet::kMaxNetAddress || b[1] > guwmanet::kMaxNetAddress) throw AddressError("network address out of range [0, 31]");
  const std::span<const std::uint8_t> raw(b.data() + 2, guwal::kFrameBytes);
  if (!guwal::crc_valid(raw)) throw ChecksumError("tunnel packet fails its CRC");
  return guwmanet::NetPacket{{b[0], b[1]}, guwal::decode_frame(raw)};
}

guwmanet::NetPacket make_packet(const guwal::Frame& f, unsigned net) {
  if (net > guwmanet::kMaxNetAddress) throw AddressError("network address out of range [0, 31]; pass --net");
  return guwmanet::NetPacket{{static_cast<std::uint8_t>(net), static_cast<std::uint8_t>(net)}, f};
}

dsp::SampleBuffer modulate_all(const std::vector<guwmanet::NetPacket>& pkts, const phy::ModemConfig& cfg, double gap) {
  dsp::SampleBuffer out;
  out.sample_rate = cfg.sample_rate;
  const auto gap_samples = static_cast<std::size_t>(std::lround(gap * cfg.sample_rate));
  for (std::size_t i = 0; i < pkts.size(); ++i) {
    if (i) out.samples.insert(out.samples.end(), gap_samples, 0.0);
    const auto b = phy::modulate_packet(guwmanet::encode_net(pkts[i]), cfg);
    out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

struct EncodeOpts {
  std::string text, out, profile = default_profile();
  unsigned src = 0, dst = 0;
  int net = -1;
  bool no_ack = false, priority = false;
  double gap = 0.5;
};

int cmd_encode(const EncodeOpts& o) {
  const auto cfg = phy::ModemConfig::by_name(o.profile);
  guwal::Header h{guwal::FrameType::data, o.priority, !o.no_ack, static_cast<std::uint8_t>(o.src), static_cast<std::uint8_t>(o.dst)};
  if (o.src > guwal::kMaxAddress || o.dst > guwal::kMaxAddress) throw AddressError("GUWAL address out of range [0, 63]");
  std::vector<guwmanet::NetPacket> pkts;
  for (const auto& f : guwal::chunk_message(o.text, h)) pkts.push_back(make_packet(f, o.net < 0 ? o.src : static_cast<unsigned>(o.net)));
  if (pkts.empty()) throw Error("nothing to encode");
  const auto buf = modulate_all(pkts, cfg, o.gap);
  wav::write_file(o.out, buf);
  std::printf("wrote %s: %zu frame(s), %zu samples, %.3f s\n", o.out.c_str(), pkts.size(), buf.size(), buf.duration());
  return kOk;
}

struct DecodeOpts {
  std::string in, profile = default_profile();
  bool no_ec = false, hex = false, verbose = false;
  double min_snr = channel::ChannelModel{}.decode_snr_db;
};

int cmd_decode(const DecodeOpts& o) {
  const auto cfg = phy::ModemConfig::by_name(o.profile);
  auto rx = wav::read_file(o.in);
  if (std::abs(rx.sample_rate - cfg.sample_rate) > 0.5) throw WavError("WAV sample rate does not match the profile");
  const phy::Demodulator demod(cfg);
  int frames = 0, failures = 0;
  for (const auto& d : demod.scan(rx)) {
    ++frames;
    std::optional<guwmanet::NetPacket> pkt;
    std::string status;
    if (d.snr_db < o.min_snr) {
      status = "squelch";
    } else if (o.no_ec) {
      if (guwmanet::crc_ok(d.packet.bits)) {
        pkt = guwmanet::decode_net(d.packet.bits);
        status = "intact";
      } else {
        status = "checksum_error";
      }
    } else {
      const auto r = ec::correct(d.packet);
      pkt = r.packet;
      status = r.status == ec::Status::intact      ? "intact"
               : r.status == ec::Status::corrected ? "corrected"
                                                   : "unrecoverable";
    }
    if (!pkt) {
      ++failures;
      std::printf("frame %d: %s\n", frames, status.c_str());
      continue;
    }
    const auto& f = pkt->frame;
    if (o.hex) {
      std::printf("%s\n", apps::hex_bytes(guwmanet::packet_bytes(*pkt)).c_str());
      continue;
    }
    std::printf("frame %d: tx=%u last_hop=%u type=%s priority=%d ack=%d src=%u dst=%u ptype=%u crc=%04x ec=%s text=%s",
                frames, unsigned(pkt->net.transmitter), unsigned(pkt->net.last_hop),
                f.header.type == guwal::FrameType::ack ? "ack" : "data", f.header.priority ? 1 : 0,
                f.header.ack_requested ? 1 : 0, unsigned(f.header.src), unsigned(f.header.dst), unsigned(f.payload_type),
                unsigned(f.crc), status.c_str(), quoted(guwal::payload_text(f)).c_str());
    if (o.verbose) std::printf(" offset=%zu score=%.3f snr_db=%.2f", d.offset, d.preamble_score, d.snr_db);
    std::printf("\n");
  }
  if (frames == 0) {
    std::fprintf(stderr, "error: no preamble found\n");
    return kNegative;
  }
  return failures ? kNegative : kOk;
}

struct SimOpts {
  std::string scenario, trace, json_out, wav_dump, spool_dir;
  long long seed = -1;
  bool quiet = false;
};

int cmd_simulate(const SimOpts& o) {
  const auto text = read_input(o.scenario);
  if (sim::is_sweep_document(text)) {
    auto spec = sim::parse_sweep(text);
    if (o.seed >= 0) spec.rng_seed = static_cast<std::uint64_t>(o.seed);
    const auto pts = sim::run_sweep(spec);
    const auto table = sim::format_sweep(pts);
    std::cout << "# " << spec.name << " profile=" << spec.profile << "\n" << table;
    if (!o.trace.empty()) write_text(o.trace, table);
    return kOk;
  }
  const auto s = sim::parse_scenario(text);
  sim::RunOptions opt;
  if (o.seed >= 0) opt.seed = static_cast<std::uint64_t>(o.seed);
  if (!o.spool_dir.empty()) opt.spool_dir = o.spool_dir;
  if (!o.wav_dump.empty()) {
    const auto a = o.wav_dump.find(':');
    const auto b = o.wav_dump.find(':', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos) throw CLI::ValidationError("--wav-dump", "expected FROM:TO:PATH");
    opt.wav_dump = sim::RunOptions::WavDump{o.wav_dump.substr(0, a), o.wav_dump.substr(a + 1, b - a - 1), o.wav_dump.substr(b + 1)};
    s.index_of(opt.wav_dump->from);
    s.index_of(opt.wav_dump->to);
  }
  const auto res = sim::run_scenario(s, opt);
  if (!o.trace.empty()) write_text(o.trace, res.trace.log());
  else if (!o.quiet) std::cout << res.trace.log();
  if (!o.json_out.empty()) write_text(o.json_out, res.trace.to_json().dump(1) + "\n");

  std::cout << "# scenario " << s.name << ": " << res.messages.size() << " message(s)\n";
  for (const auto& m : res.messages) {
    std::printf("# message src=%u dst=%u crc=%04x sent=%.3f mode=%s retransmissions=%d ", unsigned(m.frame.header.src),
                unsigned(m.frame.header.dst), unsigned(m.frame.crc), m.sent_at, m.routed ? "routed" : "flood", m.retransmissions);
    if (m.delivered_at) std::printf("delivered=%.3f latency=%.3f\n", *m.delivered_at, m.latency());
    else std::printf("undelivered%s\n", m.failed ? " failed" : "");
  }
  for (const auto& p : res.spooled) std::cout << "# spooled " << p << "\n";
  if (opt.wav_dump && !res.wav_dumped) std::cerr << "warning: link " << o.wav_dump << " carried no audible transmission\n";
  return res.all_delivered() ? kOk : kNegative;
}

struct DetectOpts {
  std::string in, json_out;
  counter::DetectorParams params;
};

int cmd_detect(const DetectOpts& o) {
  const auto audio = wav::read_file(o.in);
  const auto rep = counter::detect_covert(audio, o.params);
  std::cout << rep.log_lines(o.in);
  if (!o.json_out.empty()) {
    nlohmann::json j;
    j["triggered"] = rep.triggered;
    j["windows"] = nlohmann::json::array();
    for (const auto& w : rep.windows) {
      j["windows"].push_back({{"start", w.start}, {"end", w.end}, {"band_energy_ratio", w.band_energy_ratio},
                              {"verdict", counter::to_string(w.verdict)}});
    }
    write_text(o.json_out, j.dump(1) + "\n");
  }
  if (rep.triggered) {
    std::cout << "COVERT\n";
    return kNegative;
  }
  std::cout << (rep.count(counter::Verdict::suspicious) || rep.count(counter::Verdict::covert) ? "SUSPICIOUS\n" : "CLEAN\n");
  return kOk;
}

int cmd_filter(const std::string& in, const std::string& out, double cutoff) {
  wav::write_file(out, counter::lowpass4(wav::read_file(in), cutoff));
  return kOk;
}

int cmd_pitchdown(const std::string& in, const std::string& out, double shift) {
  wav::write_file(out, counter::pitch_down(wav::read_file(in), shift));
  return kOk;
}

struct AirOpts {
  std::string in, out, profile = default_profile();
  double distance = 1.0;
  bool blocked = false;
  unsigned long long seed = 1;
};

int cmd_air(const AirOpts& o) {
  const auto cfg = phy::ModemConfig::by_name(o.profile);
  const auto tx = wav::read_file(o.in);
  channel::Gaussian g(o.seed);
  const channel::ChannelModel m;
  const auto rx = channel::propagate(channel::pad(tx, 0, 1024), channel::Link{o.distance, o.blocked, 0.0}, m, cfg, g);
  wav::write_file(o.out, rx);
  std::printf("link %.2f m%s: budget SNR %.2f dB\n", o.distance, o.blocked ? " (blocked)" : "",
              channel::link_snr_db(channel::Link{o.distance, o.blocked, 0.0}, cfg, m));
  return kOk;
}

struct SinkOpts {
  std::string in = "-", spool_dir = "spool", recipient = "collector@example.org", smtp_host;
  unsigned smtp_port = 25;
  bool tunnel = false;
};

int cmd_sink(const SinkOpts& o) {
  apps::SinkConfig cfg;
  cfg.spool_dir = o.spool_dir;
  cfg.recipient = o.recipient;
  cfg.tunnel = o.tunnel;
  if (!o.smtp_host.empty()) cfg.smtp = apps::SmtpEndpoint{o.smtp_host, static_cast<std::uint16_t>(o.smtp_port)};
  apps::SmtpSink sink(cfg);
  std::istringstream in(read_input(o.in));
  const double now = static_cast<double>(std::chrono::duration_cast<std::chrono::seconds>(
                                             std::chrono::system_clock::now().time_since_epoch())
                                             .count());
  for (std::string line; std::getline(in, line);) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto pkt = packet_from_bytes(parse_hex(line));
    if (auto p = sink.accept(pkt, now)) std::cout << "spooled " << *p << "\n";
  }
  for (const auto& p : sink.close()) std::cout << "spooled " << p << "\n";
  if (cfg.smtp) std::cout << "submitted " << sink.flush() << " message(s)\n";
  return kOk;
}

struct SourceOpts {
  std::string in = "-", wav_out, profile = default_profile();
  unsigned src = 0, dst = 0;
  int net = -1;
  double gap = 0.5;
};

int cmd_source(const SourceOpts& o) {
  apps::LineSource source(static_cast<std::uint8_t>(o.src), static_cast<std::uint8_t>(o.dst));
  std::vector<guwmanet::NetPacket> pkts;
  for (const auto& f : source.feed(read_input(o.in))) {
    pkts.push_back(make_packet(f, o.net < 0 ? o.src : static_cast<unsigned>(o.net)));
    std::cout << apps::hex_bytes(guwmanet::packet_bytes(pkts.back())) << "\n";
  }
  if (!source.pending().empty()) std::cerr << "note: " << source.pending().size() << " byte(s) after the last line feed were not sent\n";
  if (!o.wav_out.empty() && !pkts.empty()) wav::write_file(o.wav_out, modulate_all(pkts, phy::ModemConfig::by_name(o.profile), o.gap));
  return kOk;
}

int cmd_calibrate(int trials, unsigned long long seed, double margin) {
  channel::ChannelModel m;
  const auto cfg = phy::ModemConfig::ultrasonic_21k();
  std::printf("# loopback success vs in-band SNR (%d trials per point)\n", trials);
  double threshold = 0;
  bool found = false;
  for (double snr = -10.0; snr <= -2.0 + 1e-9; snr += 0.5) {
    const double rate = channel::loopback_success(cfg, snr, trials, seed + static_cast<unsigned long long>((snr + 20) * 10));
    std::printf("snr_db=%6.2f success=%.3f\n", snr, rate);
    if (!found && rate >= 0.99) {
      threshold = snr;
      found = true;
    }
    if (rate < 0.99) found = false;
  }
  if (!found) throw Error("modem never reached 99% success in the scanned range");
  m.decode_snr_db = threshold + margin;
  const auto cal = channel::calibrate(m, channel::default_range_21k(), channel::default_range_18k6());
  std::printf("decode_snr_db=%.2f (lowest SNR with sustained >= 99%% success %.2f plus %.2f dB margin)\n",
              m.decode_snr_db, threshold, margin);
  std::printf("ref_loss_db=%.10g\nabsorption_coeff=%.10g\n", cal.ref_loss_db, cal.absorption_coeff);
  std::printf("absorption_db_per_m: 18.6 kHz %.4f, 21 kHz %.4f\n", cal.absorption_db_per_m(18600), cal.absorption_db_per_m(21000));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acmesh - acoustic mesh networking stack"};
  app.require_subcommand(1);
  const std::vector<std::string> profiles{"ultrasonic-21k", "near-ultrasonic-18k6"};

  EncodeOpts enc;
  auto* c_enc = app.add_subcommand("encode", "Encode text into a WAV file");
  c_enc->add_option("--text", enc.text, "Message text")->required();
  c_enc->add_option("--src", enc.src, "Source GUWAL address")->required();
  c_enc->add_option("--dst", enc.dst, "Destination GUWAL address")->required();
  c_enc->add_option("--net", enc.net, "Network address of the transmitter (defaults to --src)");
  c_enc->add_option("--profile", enc.profile)->check(CLI::IsMember(profiles));
  c_enc->add_option("--out", enc.out, "Output WAV")->required();
  c_enc->add_option("--gap", enc.gap, "Silence between frames, seconds")->check(CLI::NonNegativeNumber);
  c_enc->add_flag("--no-ack", enc.no_ack, "Clear the ack-requested flag");
  c_enc->add_flag("--priority", enc.priority, "Set the priority flag");

  DecodeOpts dec;
  auto* c_dec = app.add_subcommand("decode", "Decode frames from a WAV file");
  c_dec->add_option("--in", dec.in, "Input WAV")->required();
  c_dec->add_option("--profile", dec.profile)->check(CLI::IsMember(profiles));
  c_dec->add_option("--min-snr", dec.min_snr, "Squelch level in dB");
  c_dec->add_flag("--no-ec", dec.no_ec, "Skip CRC-guided error correction");
  c_dec->add_flag("--hex", dec.hex, "Print each packet as 18 hex bytes");
  c_dec->add_flag("-v,--verbose", dec.verbose, "Print offsets, scores and SNR");

  SimOpts so;
  auto* c_sim = app.add_subcommand("simulate", "Run a scenario or range sweep");
  c_sim->add_option("--scenario", so.scenario, "Scenario JSON")->required();
  c_sim->add_option("--trace", so.trace, "Write the trace log here instead of stdout");
  c_sim->add_option("--json", so.json_out, "Write the trace as JSON");
  c_sim->add_option("--wav-dump", so.wav_dump, "FROM:TO:PATH - dump the first reception on a link");
  c_sim->add_option("--seed", so.seed, "Override the scenario seed");
  c_sim->add_option("--spool-dir", so.spool_dir, "Override the sink spool directory");
  c_sim->add_flag("-q,--quiet", so.quiet, "Do not print the trace");

  DetectOpts det;
  auto* c_det = app.add_subcommand("detect", "Scan a WAV file for covert ultrasonic modulation");
  c_det->add_option("--in", det.in, "Input WAV")->required();
  c_det->add_option("--json", det.json_out, "Write the report as JSON");
  c_det->add_option("--ratio", det.params.ratio_threshold, "Band energy ratio threshold");
  c_det->add_option("--consecutive", det.params.consecutive, "Covert windows needed to trigger");
  c_det->add_option("--window", det.params.window_seconds, "Window length, seconds");

  std::string f_in, f_out;
  double cutoff = 18000.0;
  auto* c_fil = app.add_subcommand("filter", "Apply the 4-pole lowpass guard");
  c_fil->add_option("--in", f_in)->required();
  c_fil->add_option("--out", f_out)->required();
  c_fil->add_option("--cutoff", cutoff, "Cutoff in Hz");

  std::string p_in, p_out;
  double shift = 19000.0;
  auto* c_pit = app.add_subcommand("pitchdown", "Shift ultrasonic content into the audible range");
  c_pit->add_option("--in", p_in)->required();
  c_pit->add_option("--out", p_out)->required();
  c_pit->add_option("--shift", shift, "Shift in Hz");

  AirOpts air;
  auto* c_air = app.add_subcommand("air", "Pass a WAV through the calibrated air channel");
  c_air->add_option("--in", air.in)->required();
  c_air->add_option("--out", air.out)->required();
  c_air->add_option("--distance", air.distance, "Meters")->check(CLI::PositiveNumber);
  c_air->add_flag("--blocked", air.blocked, "Apply the line-of-sight blocking penalty");
  c_air->add_option("--seed", air.seed);
  c_air->add_option("--profile", air.profile)->check(CLI::IsMember(profiles));

  SinkOpts sk;
  auto* c_sink = app.add_subcommand("sink", "Spool delivered packets as email, optionally submitting via SMTP");
  c_sink->add_option("--in", sk.in, "Hex packet lines ('-' for stdin)");
  c_sink->add_option("--spool-dir", sk.spool_dir);
  c_sink->add_option("--recipient", sk.recipient);
  c_sink->add_option("--smtp-host", sk.smtp_host);
  c_sink->add_option("--smtp-port", sk.smtp_port);
  c_sink->add_flag("--tunnel", sk.tunnel, "Include raw packet hex in each message");

  SourceOpts src;
  auto* c_src = app.add_subcommand("source", "Turn input lines into packets (hex on stdout)");
  c_src->add_option("--in", src.in, "Input file ('-' for stdin)");
  c_src->add_option("--src", src.src, "Source GUWAL address")->required()->check(CLI::Range(0, 63));
  c_src->add_option("--dst", src.dst, "Attacker GUWAL address")->required()->check(CLI::Range(0, 63));
  c_src->add_option("--net", src.net, "Network address (defaults to --src)");
  c_src->add_option("--wav", src.wav_out, "Also write the modulated packets");
  c_src->add_option("--profile", src.profile)->check(CLI::IsMember(profiles));

  int cal_trials = 100;
  unsigned long long cal_seed = 2024;
  double cal_margin = 2.0;
  auto* c_cal = app.add_subcommand("calibrate", "Measure the decode threshold and fit the channel model");
  c_cal->add_option("--trials", cal_trials)->check(CLI::PositiveNumber);
  c_cal->add_option("--seed", cal_seed);
  c_cal->add_option("--margin", cal_margin, "dB added to the measured threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*c_enc) return cmd_encode(enc);
    if (*c_dec) return cmd_decode(dec);
    if (*c_sim) return cmd_simulate(so);
    if (*c_det) return cmd_detect(det);
    if (*c_fil) return cmd_filter(f_in, f_out, cutoff);
    if (*c_pit) return cmd_pitchdown(p_in, p_out, shift);
    if (*c_air) return cmd_air(air);
    if (*c_sink) return cmd_sink(sk);
    if (*c_src) return cmd_source(src);
    if (*c_cal) return cmd_calibrate(cal_trials, cal_seed, cal_margin);
  } catch (const ScenarioError& e) {
    std::fprintf(stderr, "error: scenario %s\n", e.what());
    return kUsage;
  } catch (const AddressError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const PayloadTooLong& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNegative;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNegative;
  }
  return kUsage;
}
