#pragma once

// Command-line front end: argument parsing and the per-role drivers.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "peerprof/pipeline.hpp"
#include "peerprof/reporting.hpp"
#include "peerprof/stages.hpp"
#include "peerprof/transport.hpp"

namespace peerprof {

enum class Role { Server, Client, Local };
enum class NetKind { Tcp, Udp, Sim };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::Server: return "server";
    case Role::Client: return "client";
    case Role::Local: return "local";
  }
  return "?";
}

inline const char* to_string(NetKind n) {
  switch (n) {
    case NetKind::Tcp: return "tcp";
    case NetKind::Udp: return "udp";
    case NetKind::Sim: return "sim";
  }
  return "?";
}

struct CliConfig {
  Role role = Role::Client;
  std::string name;
  NetKind network = NetKind::Tcp;
  std::filesystem::path network_config;
  std::string peer;
  std::string sensor_text;
  SensorSpec sensor;
  std::string compute_text = "echo";
  ComputeSpec compute = Echo{};
  std::string device;
  std::size_t iterations = 1;
  std::size_t warmup = 1;
  std::size_t sync_probes = 16;
  std::size_t probe_spacing_ms = 50;
  bool calibrate = false;
  std::size_t timeout_ms = 5000;
  std::size_t connect_timeout_ms = 5000;
  std::size_t sessions = 1;
  std::size_t accept_timeout_ms = 60'000;
  std::size_t max_datagram = kDefaultMaxDatagram;
  std::filesystem::path result_loc;
  bool generate_plots = false;
  std::optional<SimLinkSpec> sim;

  // Set instead of a runnable config when --help was given.
  std::optional<std::string> help;

  nlohmann::ordered_json snapshot() const {
    nlohmann::ordered_json j;
    j["role"] = to_string(role);
    j["name"] = name;
    j["network"] = to_string(network);
    if (!network_config.empty()) j["network_config"] = network_config.string();
    if (!peer.empty()) j["peer"] = peer;
    if (!sensor_text.empty()) j["sensor"] = sensor_text;
    if (sensor.truncate_bytes) j["resize_bytes"] = *sensor.truncate_bytes;
    j["compute"] = compute_text;
    if (!device.empty()) j["device"] = device;
    j["iterations"] = iterations;
    j["warmup"] = warmup;
    j["sync_probes"] = sync_probes;
    j["probe_spacing_ms"] = probe_spacing_ms;
    j["calibrate"] = calibrate;
    j["timeout_ms"] = timeout_ms;
    if (network == NetKind::Udp) j["max_datagram"] = max_datagram;
    if (sim) {
      nlohmann::ordered_json s;
      s["up_delay_ns"] = sim->up_delay_ns;
      s["down_delay_ns"] = sim->down_delay_ns;
      s["jitter_ns"] = sim->jitter_ns;
      if (sim->bandwidth_bytes_per_s) s["bandwidth_bytes_per_s"] = *sim->bandwidth_bytes_per_s;
      s["loss_prob"] = sim->loss_prob;
      s["down_loss_prob"] = sim->down_loss_prob;
      s["clock_skew_ns"] = sim->clock_skew_ns;
      s["seed"] = sim->seed;
      j["sim"] = std::move(s);
    }
    return j;
  }
};

namespace detail {

[[noreturn]] inline void usage(const std::string& msg) { fail(Errc::Usage, msg); }

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto p = s.find(sep, start);
    out.emplace_back(s.substr(start, p == std::string_view::npos ? s.npos : p - start));
    if (p == std::string_view::npos) return out;
    start = p + 1;
  }
}

inline std::vector<std::string> split_words(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

template <class T>
T number(const std::string& text, const char* flag) {
  T v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc{} || r.ptr != text.data() + text.size())
    usage(std::string(flag) + ": '" + text + "' is not a valid number");
  return v;
}

// synthetic:N[:random[:SEED]] | dataset:DIR | exec:CMD ARGS...
inline SensorSpec parse_sensor(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
  SensorSpec spec;
  if (kind == "synthetic") {
    const auto parts = split(rest, ':');
    Synthetic s;
    s.size_bytes = number<std::uint64_t>(parts[0], "--sensor");
    if (s.size_bytes == 0 || s.size_bytes > kMaxSyntheticBytes)
      usage("--sensor: synthetic size must be 1 .. 1073741824 bytes");
    if (parts.size() >= 2) {
      if (parts[1] == "random") s.fill = Synthetic::Fill::SeededRandom;
      else if (parts[1] != "zero") usage("--sensor: fill must be 'zero' or 'random'");
    }
    if (parts.size() >= 3) s.seed = number<std::uint64_t>(parts[2], "--sensor");
    if (parts.size() > 3) usage("--sensor: too many fields in '" + text + "'");
    spec.source = s;
  } else if (kind == "dataset") {
    if (rest.empty()) usage("--sensor: dataset needs a directory");
    spec.source = DatasetDir{rest};
  } else if (kind == "exec") {
    auto argv = split_words(rest);
    if (argv.empty()) usage("--sensor: exec needs a command");
    spec.source = ExternalSensor{std::move(argv)};
  } else {
    usage("--sensor: unknown sensor '" + kind + "' (synthetic, dataset, exec)");
  }
  return spec;
}

// echo | checksum | exec:CMD | sleep[:MEAN[:STD]][+MEAN[:STD]...][@SEED]
inline ComputeSpec parse_compute(const std::string& text) {
  if (text == "echo") return Echo{};
  if (text == "checksum") return Checksum{};
  if (text.rfind("exec:", 0) == 0) {
    auto argv = split_words(text.substr(5));
    if (argv.empty()) usage("--compute: exec needs a command");
    return ExternalCompute{std::move(argv)};
  }
  if (text == "sleep" || text.rfind("sleep:", 0) == 0) {
    // bare "sleep" keeps the default 18.55 +- 3.34 ms profile
    Sleep s = Sleep::normal(18.55, 3.34);
    std::string body = text.size() > 6 ? text.substr(6) : "";
    if (const auto at = body.find('@'); at != std::string::npos) {
      s.seed = number<std::uint64_t>(body.substr(at + 1), "--compute");
      body.resize(at);
    }
    if (!body.empty()) {
      s.modes.clear();
      for (const auto& mode : split(body, '+')) {
        const auto f = split(mode, ':');
        if (f.size() > 2) usage("--compute: sleep mode '" + mode + "' has too many fields");
        SleepMode m;
        m.mean_ms = number<double>(f[0], "--compute");
        m.std_ms = f.size() == 2 ? number<double>(f[1], "--compute") : 0.0;
        if (!(m.mean_ms > 0) || !(m.std_ms >= 0))
          usage("--compute: sleep needs mean > 0 and std >= 0");
        s.modes.push_back(m);
      }
    }
    return s;
  }
  usage("--compute: unknown compute stage '" + text + "' (echo, checksum, sleep, exec)");
}

}  // namespace detail

// Parses a full argv (argv[0] is the program name). Throws Error(Usage)
// naming the offending flag.
inline CliConfig parse_args(const std::vector<std::string>& args) {
  CliConfig cfg;
  CLI::App app{"peerprof: latency profiler for offloaded computation", "peerprof"};
  bool server = false, client = false, local = false;
  auto* o_server = app.add_flag("--server", server, "Run as the compute server");
  auto* o_client = app.add_flag("--client", client, "Run as the sensing client");
  auto* o_local = app.add_flag("--local", local, "Run sensing and compute in this process, no network");
  o_server->excludes(o_client)->excludes(o_local);
  o_client->excludes(o_local);

  std::string network = "tcp";
  std::string sensor_type, dataset_loc, sensor, compute, model_name;
  std::optional<std::uint64_t> resize;
  std::string result_loc;
  double sim_skew_ms = 0, sim_up_ms = 0, sim_down_ms = 0, sim_jitter_ms = 0, sim_loss = 0,
         sim_down_loss = 0;
  std::optional<double> sim_bw;
  std::uint64_t sim_seed = 0;

  app.add_option("--name", cfg.name, "This device's name in the network config");
  app.add_option("--network", network, "Transport: tcp, udp or sim")
      ->check(CLI::IsMember({"tcp", "udp", "sim"}));
  app.add_option("--network-config", cfg.network_config, "JSON network configuration");
  app.add_option("--peer", cfg.peer, "Name of the server device (client role)");
  app.add_option("--sensor", sensor, "synthetic:N[:zero|random[:SEED]] | dataset:DIR | exec:CMD");
  app.add_option("--sensor-type", sensor_type, "Sensor kind when --sensor is not given");
  app.add_option("--dataset-loc", dataset_loc, "Dataset directory (with --sensor-type dataset)");
  app.add_option("--compute", compute, "echo | checksum | sleep[:MEAN[:STD]][+...][@SEED] | exec:CMD");
  app.add_option("--model-name", model_name, "Alias of --compute");
  app.add_option("--device", cfg.device, "Compute device label (recorded only)");
  app.add_option("--iterations", cfg.iterations, "Number of benchmark iterations")
      ->check(CLI::PositiveNumber);
  app.add_option("--warmup", cfg.warmup, "Leading iterations excluded from summaries");
  app.add_option("--sync-probes", cfg.sync_probes, "Clock probes before the run (0 trusts the clocks)");
  app.add_option("--probe-spacing-ms", cfg.probe_spacing_ms, "Pause between clock probes");
  app.add_flag("--calibrate", cfg.calibrate, "Run the payload sweep to calibrate the clock offset");
  app.add_option("--timeout-ms", cfg.timeout_ms, "Per-reply timeout")->check(CLI::PositiveNumber);
  app.add_option("--connect-timeout-ms", cfg.connect_timeout_ms, "Connect timeout")
      ->check(CLI::PositiveNumber);
  app.add_option("--sessions", cfg.sessions, "Client sessions a server handles before exiting")
      ->check(CLI::PositiveNumber);
  app.add_option("--accept-timeout-ms", cfg.accept_timeout_ms, "How long a server waits for a client")
      ->check(CLI::PositiveNumber);
  app.add_option("--max-datagram", cfg.max_datagram, "UDP frame limit in bytes")
      ->check(CLI::Range(64, 65507));
  app.add_option("--result-loc", result_loc, "Output directory (default: $PEERPROF_RESULT_LOC)");
  app.add_flag("--generate-plots", cfg.generate_plots, "Write SVG histograms");
  app.add_option("--resize-bytes", resize, "Truncate each sample before upload");
  app.add_option("--sim-skew-ms", sim_skew_ms, "Sim: server clock minus client clock");
  app.add_option("--sim-up-ms", sim_up_ms, "Sim: client to server propagation")->check(CLI::NonNegativeNumber);
  app.add_option("--sim-down-ms", sim_down_ms, "Sim: server to client propagation")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--sim-jitter-ms", sim_jitter_ms, "Sim: uniform jitter half-width")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--sim-bandwidth-mbs", sim_bw, "Sim: link bandwidth in MB/s (MB = 2^20 bytes)")
      ->check(CLI::PositiveNumber);
  app.add_option("--sim-loss", sim_loss, "Sim: client to server frame loss probability")
      ->check(CLI::Range(0.0, 0.999));
  app.add_option("--sim-down-loss", sim_down_loss, "Sim: server to client frame loss probability")
      ->check(CLI::Range(0.0, 0.999));
  app.add_option("--sim-seed", sim_seed, "Sim: random seed");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    cfg.help = app.help();
    return cfg;
  } catch (const CLI::ParseError& e) {
    detail::usage(e.what());
  }

  if (server + client + local != 1) detail::usage("exactly one of --server, --client, --local is required");
  cfg.role = server ? Role::Server : client ? Role::Client : Role::Local;
  cfg.network = network == "udp" ? NetKind::Udp : network == "sim" ? NetKind::Sim : NetKind::Tcp;
  if (cfg.role == Role::Server && cfg.network == NetKind::Sim)
    detail::usage("--network sim runs both roles in one process; use --client");

  if (!compute.empty() && !model_name.empty()) detail::usage("--model-name: conflicts with --compute");
  if (!model_name.empty()) compute = model_name;
  if (!compute.empty()) {
    cfg.compute_text = compute;
    cfg.compute = detail::parse_compute(compute);
  }

  if (!sensor.empty() && !sensor_type.empty()) detail::usage("--sensor-type: conflicts with --sensor");
  if (!sensor_type.empty()) {
    if (sensor_type == "dataset") {
      if (dataset_loc.empty()) detail::usage("--dataset-loc: required with --sensor-type dataset");
      sensor = "dataset:" + dataset_loc;
    } else {
      detail::usage("--sensor-type: only 'dataset' is supported; use --sensor for others");
    }
  } else if (!dataset_loc.empty()) {
    if (!sensor.empty()) detail::usage("--dataset-loc: conflicts with --sensor");
    sensor = "dataset:" + dataset_loc;
  }
  if (cfg.role != Role::Server) {
    if (sensor.empty()) detail::usage("--sensor: required for the " + std::string(to_string(cfg.role)) + " role");
    cfg.sensor_text = sensor;
    cfg.sensor = detail::parse_sensor(sensor);
    if (resize) {
      if (*resize == 0) detail::usage("--resize-bytes: must be positive");
      cfg.sensor.truncate_bytes = resize;
    }
  }
  if (cfg.role == Role::Server && compute.empty()) detail::usage("--compute: required for the server role");
  if (cfg.role == Role::Local && compute.empty()) detail::usage("--compute: required for the local role");

  if (cfg.role != Role::Local && cfg.network != NetKind::Sim) {
    if (cfg.name.empty()) detail::usage("--name: required for networked roles");
    if (cfg.network_config.empty()) detail::usage("--network-config: required for networked roles");
  }
  if (cfg.role == Role::Client && cfg.network != NetKind::Sim && cfg.peer.empty())
    detail::usage("--peer: required for the client role");
  if (cfg.network == NetKind::Sim) {
    if (cfg.name.empty()) cfg.name = "client";
    if (cfg.peer.empty()) cfg.peer = "server";
    if (cfg.name == cfg.peer) detail::usage("--peer: must differ from --name");
    SimLinkSpec s;
    s.clock_skew_ns = std::llround(sim_skew_ms * 1e6);
    s.up_delay_ns = std::llround(sim_up_ms * 1e6);
    s.down_delay_ns = std::llround(sim_down_ms * 1e6);
    s.jitter_ns = std::llround(sim_jitter_ms * 1e6);
    if (sim_bw) s.bandwidth_bytes_per_s = *sim_bw * 1024.0 * 1024.0;
    s.loss_prob = sim_loss;
    s.down_loss_prob = sim_down_loss;
    s.seed = sim_seed;
    cfg.sim = s;
  }
  if (cfg.role == Role::Local && cfg.name.empty()) cfg.name = "local";

  if (result_loc.empty())
    if (const char* env = std::getenv("PEERPROF_RESULT_LOC")) result_loc = env;
  cfg.result_loc = result_loc;
  if (cfg.generate_plots && cfg.result_loc.empty())
    detail::usage("--generate-plots: needs --result-loc or PEERPROF_RESULT_LOC");
  return cfg;
}

inline CliConfig parse_args(int argc, const char* const* argv) {
  return parse_args(std::vector<std::string>(argv, argv + argc));
}

// Exit codes: 0 success, 1 usage or configuration error, 2 run aborted or
// peer unreachable.
inline int exit_code_for(Errc code) {
  switch (code) {
    case Errc::Usage:
    case Errc::InvalidConfig:
    case Errc::UnknownDevice:
    case Errc::Bind:
      return 1;
    default:
      return 2;
  }
}

namespace detail {

inline ClientOptions client_options(const CliConfig& cfg) {
  ClientOptions o;
  o.iterations = cfg.iterations;
  o.warmup = cfg.warmup;
  o.sync_probes = cfg.sync_probes;
  o.probe_spacing = std::chrono::milliseconds(cfg.probe_spacing_ms);
  o.timeout = std::chrono::milliseconds(cfg.timeout_ms);
  if (cfg.calibrate) o.calibration = CalibrationPlan::standard(cfg.network == NetKind::Udp);
  o.config_snapshot = cfg.snapshot();
  return o;
}

inline void report(const CliConfig& cfg, const RunResult& run, std::ostream& out) {
  if (!cfg.result_loc.empty()) {
    write_results(cfg.result_loc, run, cfg.generate_plots);
    out << "results written to " << cfg.result_loc.string() << "\n";
  }
  try {
    out << summary_markdown(summary_table(run.records));
  } catch (const Error& e) {
    if (e.code() != Errc::EmptyInput) throw;
  }
}

inline TransportKind transport_of(const CliConfig& cfg) {
  if (cfg.network == NetKind::Udp) return UdpTransport{cfg.max_datagram};
  return TcpTransport{};
}

}  // namespace detail

inline RunResult run_sim(const CliConfig& cfg) {
  auto [client, server] = make_sim_pair(*cfg.sim, cfg.name, cfg.peer);
  Compute compute(cfg.compute);
  ServerSession session(*server, compute);
  attach_sim_server(*client, *server, session);
  Sensor sensor(cfg.sensor);
  return run_client(*client, sensor, detail::client_options(cfg));
}

// Runs a parsed configuration; returns the process exit code.
inline int run(const CliConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  if (cfg.help) {
    out << *cfg.help;
    return 0;
  }
  try {
    if (cfg.role == Role::Local) {
      Sensor sensor(cfg.sensor);
      Compute compute(cfg.compute);
      SystemClock clock;
      LocalOptions o{cfg.iterations, cfg.warmup, cfg.snapshot()};
      detail::report(cfg, run_local(sensor, compute, o, clock), out);
      return 0;
    }
    if (cfg.network == NetKind::Sim) {
      detail::report(cfg, run_sim(cfg), out);
      return 0;
    }
    const NetworkConfig net = NetworkConfig::load(cfg.network_config, cfg.name);
    if (cfg.role == Role::Client) {
      Sensor sensor(cfg.sensor);
      ConnectOptions co;
      co.timeout = std::chrono::milliseconds(cfg.connect_timeout_ms);
      auto ch = connect(net, cfg.peer, detail::transport_of(cfg), co);
      detail::report(cfg, run_client(*ch, sensor, detail::client_options(cfg)), out);
      return 0;
    }
    Compute compute(cfg.compute);
    auto listener = serve(net, detail::transport_of(cfg));
    out << "listening on port " << listener->port() << std::endl;
    for (std::size_t s = 0; s < cfg.sessions; ++s) {
      auto ch = listener->accept(std::chrono::milliseconds(cfg.accept_timeout_ms));
      const ServerSummary sum = run_server(*ch, compute, std::chrono::milliseconds(cfg.accept_timeout_ms));
      out << "session with '" << ch->peer_name() << "': " << sum.data_requests << " requests, "
          << sum.probes << " probes, " << sum.calibrations << " calibration frames, " << sum.errors
          << " errors\n";
    }
    return 0;
  } catch (const Error& e) {
    err << "peerprof: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "peerprof: " << e.what() << "\n";
    return 1;
  }
}

// argv in, exit code out; usage errors print the message and a hint.
inline int main_entry(const std::vector<std::string>& args, std::ostream& out = std::cout,
                      std::ostream& err = std::cerr) {
  CliConfig cfg;
  try {
    cfg = parse_args(args);
  } catch (const Error& e) {
    err << "peerprof: " << e.what() << "\nrun with --help for usage\n";
    return exit_code_for(e.code());
  }
  return run(cfg, out, err);
}

}  // namespace peerprof
