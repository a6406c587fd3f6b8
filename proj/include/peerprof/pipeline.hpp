#pragma once

// Offloaded-inference benchmark loop. The client samples a datum, uploads it,
// waits for the result and records one IterationRecord per loop; the server
// receives, computes and replies. Timing metadata travels inside every
// envelope as a serialized metric subtree:
//
//   client -> server   Data     "server" {request, upload(started)}
//   server -> client   Result   "server" {request, upload(closed), inference,
//                                         serialize-result, download(started)}
//
// The client closes "download" on arrival and grafts the subtree into its
// iteration node.

#include <array>
#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "peerprof/clock.hpp"
#include "peerprof/clock_sync.hpp"
#include "peerprof/error.hpp"
#include "peerprof/metrics_tree.hpp"
#include "peerprof/stages.hpp"
#include "peerprof/transport.hpp"

namespace peerprof {

inline constexpr std::string_view kVersion = "0.1.0";

namespace flag {
inline constexpr std::string_view kWarmup = "warmup";
inline constexpr std::string_view kDropped = "dropped";
inline constexpr std::string_view kTimeout = "timeout";
inline constexpr std::string_view kStageFailed = "stage-failed";
inline constexpr std::string_view kProtocolError = "protocol-error";
inline constexpr std::string_view kNegativeLatency = "negative-corrected-latency";
}  // namespace flag

struct IterationRecord {
  std::size_t iteration = 0;
  std::optional<Nanos> sensing_ns;
  std::optional<std::uint64_t> upload_size_bytes;
  std::optional<Nanos> upload_latency_ns;  // clock-corrected
  std::optional<double> upload_throughput_bps;
  std::optional<Nanos> inference_ns;
  std::optional<std::uint64_t> download_size_bytes;
  std::optional<Nanos> download_latency_ns;  // clock-corrected
  std::optional<double> download_throughput_bps;
  std::optional<Nanos> total_ns;
  std::vector<std::string> flags;

  bool has_flag(std::string_view f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
  }
  void add_flag(std::string_view f) {
    if (!has_flag(f)) flags.emplace_back(f);
  }
  bool operator==(const IterationRecord&) const = default;
};

// The recorded per-iteration metrics, in export order.
enum class Metric {
  Sensing,
  UploadSize,
  UploadLatency,
  UploadThroughput,
  Inference,
  DownloadSize,
  DownloadLatency,
  DownloadThroughput,
  Total,
};

inline constexpr std::array kAllMetrics = {
    Metric::Sensing,      Metric::UploadSize,      Metric::UploadLatency,
    Metric::UploadThroughput, Metric::Inference,   Metric::DownloadSize,
    Metric::DownloadLatency,  Metric::DownloadThroughput, Metric::Total,
};

inline std::string_view metric_column(Metric m) {
  switch (m) {
    case Metric::Sensing: return "sensing_ns";
    case Metric::UploadSize: return "upload_size_bytes";
    case Metric::UploadLatency: return "upload_latency_ns";
    case Metric::UploadThroughput: return "upload_throughput_bps";
    case Metric::Inference: return "inference_ns";
    case Metric::DownloadSize: return "download_size_bytes";
    case Metric::DownloadLatency: return "download_latency_ns";
    case Metric::DownloadThroughput: return "download_throughput_bps";
    case Metric::Total: return "total_ns";
  }
  return {};
}

// Name of the metric's leaf inside an iteration node.
inline std::string_view metric_node(Metric m) {
  switch (m) {
    case Metric::Sensing: return "sensing";
    case Metric::UploadSize: return "upload_size";
    case Metric::UploadLatency: return "upload_latency";
    case Metric::UploadThroughput: return "upload_throughput";
    case Metric::Inference: return "inference";
    case Metric::DownloadSize: return "download_size";
    case Metric::DownloadLatency: return "download_latency";
    case Metric::DownloadThroughput: return "download_throughput";
    case Metric::Total: return "total";
  }
  return {};
}

inline std::string_view metric_unit(Metric m) {
  switch (m) {
    case Metric::UploadSize:
    case Metric::DownloadSize: return "bytes";
    case Metric::UploadThroughput:
    case Metric::DownloadThroughput: return "bytes/s";
    default: return "ns";
  }
}

// Path selecting the metric across summarized iterations of a run tree.
// Offloaded runs keep inference inside the server's subtree.
inline std::string tree_path(Metric m, bool offloaded) {
  if (m == Metric::Inference && offloaded) return "iteration-*/server/inference";
  return "iteration-*/" + std::string(metric_node(m));
}

inline std::optional<double> metric_value(const IterationRecord& r, Metric m) {
  auto as_double = [](const auto& o) -> std::optional<double> {
    if (!o) return std::nullopt;
    return static_cast<double>(*o);
  };
  switch (m) {
    case Metric::Sensing: return as_double(r.sensing_ns);
    case Metric::UploadSize: return as_double(r.upload_size_bytes);
    case Metric::UploadLatency: return as_double(r.upload_latency_ns);
    case Metric::UploadThroughput: return r.upload_throughput_bps;
    case Metric::Inference: return as_double(r.inference_ns);
    case Metric::DownloadSize: return as_double(r.download_size_bytes);
    case Metric::DownloadLatency: return as_double(r.download_latency_ns);
    case Metric::DownloadThroughput: return r.download_throughput_bps;
    case Metric::Total: return as_double(r.total_ns);
  }
  return std::nullopt;
}

// Payload-size sweep used for residual calibration.
struct CalibrationPlan {
  std::vector<std::uint64_t> sizes;
  std::size_t repeats = 5;

  // Eight doubling sizes ending at 8 MiB; datagram transports get eight
  // doubling sizes that fit a datagram (256 B .. 32 KiB).
  static CalibrationPlan standard(bool datagram = false) {
    CalibrationPlan p;
    std::uint64_t s = datagram ? 256 : 64 * 1024;
    for (int i = 0; i < 8; ++i, s *= 2) p.sizes.push_back(s);
    return p;
  }
};

struct RunManifest {
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  Nanos start_wall_ns = 0;
  std::string artifact_version{kVersion};
  std::optional<ClockModel> clock_model;
  std::optional<LineFit> calibration_fit;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["artifact_version"] = artifact_version;
    j["start_wall_ns"] = start_wall_ns;
    j["config"] = config;
    if (clock_model) {
      nlohmann::ordered_json c;
      c["offset_ns"] = clock_model->offset_ns;
      c["rtt_ns"] = clock_model->rtt_ns;
      c["method"] = to_string(clock_model->method);
      if (clock_model->residual_ns) c["residual_ns"] = *clock_model->residual_ns;
      c["effective_offset_ns"] = clock_model->effective_offset();
      c["n_samples"] = clock_model->n_samples;
      j["clock_model"] = std::move(c);
    }
    if (calibration_fit) {
      j["calibration_fit"] = {{"slope_ns_per_byte", calibration_fit->slope_ns_per_byte},
                              {"intercept_ns", calibration_fit->intercept_ns},
                              {"r2", calibration_fit->r2}};
    }
    return j;
  }
};

struct RunResult {
  std::vector<IterationRecord> records;
  MetricNode tree;
  RunManifest manifest;
  bool offloaded = true;
};

struct ClientOptions {
  std::size_t iterations = 1;
  std::size_t warmup = 1;
  std::size_t sync_probes = 16;
  std::chrono::milliseconds probe_spacing{50};
  std::optional<CalibrationPlan> calibration;
  std::chrono::milliseconds timeout{5000};
  nlohmann::ordered_json config_snapshot = nlohmann::ordered_json::object();
};

struct LocalOptions {
  std::size_t iterations = 1;
  std::size_t warmup = 1;
  nlohmann::ordered_json config_snapshot = nlohmann::ordered_json::object();
};

namespace detail {

inline std::string be64(std::uint64_t v) {
  std::string s;
  put_be<std::uint64_t>(s, v);
  return s;
}

inline std::string iteration_name(std::size_t i, const IterationRecord& r) {
  if (r.has_flag(flag::kWarmup)) return "warmup-" + std::to_string(i);
  if (r.has_flag(flag::kDropped)) return "dropped-" + std::to_string(i);
  return "iteration-" + std::to_string(i);
}

inline Nanos to_ns(std::chrono::milliseconds ms) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(ms).count();
}

// Request id the server echoes back, so late replies can be told apart.
inline std::optional<std::uint64_t> request_id(const MetricNode& tree) {
  const auto* r = tree.find("request");
  if (!r || !r->value || *r->value < 0) return std::nullopt;
  return static_cast<std::uint64_t>(*r->value);
}

inline std::optional<MetricNode> try_deserialize(const std::optional<std::string>& meta) {
  if (!meta) return std::nullopt;
  try {
    return deserialize(*meta);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline void check_abort(std::size_t drops, std::size_t iterations) {
  if (2 * drops > iterations)
    fail(Errc::RunAborted, std::to_string(drops) + " of " + std::to_string(iterations) +
                               " iterations dropped");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Clock synchronization over a channel

// Sends `probes` PROBE_REQ frames and estimates the clock offset from the
// replies. Lost probes are skipped; zero probes means the device clocks are
// trusted as already synchronized.
inline ClockModel synchronize(Channel& ch, std::size_t probes, std::chrono::milliseconds spacing,
                              std::chrono::milliseconds timeout) {
  if (probes == 0) return ClockModel{};
  std::vector<ProbeSample> samples;
  for (std::size_t i = 0; i < probes; ++i) {
    if (i > 0) ch.clock().pause(detail::to_ns(spacing));
    Envelope req;
    req.type = MsgType::ProbeReq;
    req.payload = detail::be64(i) + detail::be64(0);
    ch.send(req);
    try {
      for (;;) {
        const Received r = ch.recv(timeout);
        if (r.env.type != MsgType::ProbeResp || r.env.payload.size() != 16) continue;
        if (detail::get_be<std::uint64_t>(r.env.payload.data()) != i) continue;  // stale
        ProbeSample s;
        s.t1 = req.send_ts;
        s.t2 = static_cast<Nanos>(detail::get_be<std::uint64_t>(r.env.payload.data() + 8));
        s.t3 = r.env.send_ts;
        s.t4 = r.recv_ts;
        if (s.t4 >= s.t1 && s.t3 >= s.t2 && s.rtt() >= 0) samples.push_back(s);
        break;
      }
    } catch (const Error& e) {
      if (e.code() != Errc::Timeout) throw;
    }
  }
  if (samples.empty()) fail(Errc::RunAborted, "no probe reply received; cannot estimate clock offset");
  return estimate_offset(samples);
}

struct CalibrationResult {
  ClockModel model;
  LineFit fit;
  std::vector<SweepPoint> points;
};

// Payload sweep: each point is a client->server timing corrected by the
// probe model, so the fitted intercept is the residual offset error.
inline CalibrationResult calibrate(Channel& ch, const ClockModel& model, const CalibrationPlan& plan,
                                   std::chrono::milliseconds timeout) {
  CalibrationResult out;
  std::uint64_t id = 0;
  for (const auto size : plan.sizes) {
    for (std::size_t rep = 0; rep < plan.repeats; ++rep, ++id) {
      MetricNode meta = new_root("calibrate");
      record_value(meta, "request", MetricKind::count(), static_cast<double>(id), "id");
      start_timing(meta, "upload", MetricKind::latency(), ch.clock().now());
      Envelope env;
      env.type = MsgType::Control;
      env.metadata = serialize(meta);
      env.payload.assign(size, '\0');
      ch.send(env);
      try {
        for (;;) {
          const Received r = ch.recv(timeout);
          if (r.env.type != MsgType::Control) continue;
          auto tree = detail::try_deserialize(r.env.metadata);
          if (!tree || tree->name != "calibrate" || detail::request_id(*tree) != id) continue;
          const auto* up = tree->find("upload");
          if (!up || !up->value) break;
          const auto raw = static_cast<Nanos>(*up->value);
          out.points.push_back({size, correct_one_way(raw, model, Direction::ClientToServer).ns});
          break;
        }
      } catch (const Error& e) {
        if (e.code() != Errc::Timeout) throw;
      }
    }
  }
  out.fit = fit_intercept(out.points);
  out.model = residual_calibrate(model, out.points);
  return out;
}

namespace detail {

inline void log_clock_model(MetricNode& root, const ClockModel& m, const std::optional<LineFit>& fit) {
  MetricNode sync = new_root("clock-sync");
  record_value(sync, "offset", MetricKind::custom("offset"), static_cast<double>(m.offset_ns), "ns");
  record_value(sync, "probe_rtt", MetricKind::latency(), static_cast<double>(m.rtt_ns), "ns");
  record_value(sync, "probes", MetricKind::count(), static_cast<double>(m.n_samples), "samples");
  if (m.residual_ns)
    record_value(sync, "residual", MetricKind::custom("offset"), static_cast<double>(*m.residual_ns), "ns");
  if (fit) {
    record_value(sync, "sweep_slope", MetricKind::custom("slope"), fit->slope_ns_per_byte, "ns/byte");
    record_value(sync, "sweep_r2", MetricKind::custom("r2"), fit->r2, "");
  }
  merge_remote(root, std::move(sync));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Client

inline RunResult run_client(Channel& ch, Sensor& sensor, const ClientOptions& opts) {
  if (opts.iterations == 0) fail(Errc::Usage, "iterations must be >= 1");
  RunResult run;
  run.offloaded = true;
  run.manifest.config = opts.config_snapshot;
  run.manifest.start_wall_ns = SystemClock{}.now();
  run.tree = new_root("benchmark");
  Clock& clock = ch.clock();

  ClockModel model = synchronize(ch, opts.sync_probes, opts.probe_spacing, opts.timeout);
  std::optional<LineFit> fit;
  if (opts.calibration) {
    CalibrationResult cal = calibrate(ch, model, *opts.calibration, opts.timeout);
    model = cal.model;
    fit = cal.fit;
  }
  run.manifest.clock_model = model;
  run.manifest.calibration_fit = fit;
  detail::log_clock_model(run.tree, model, fit);

  std::size_t drops = 0;
  for (std::size_t i = 0; i < opts.iterations; ++i) {
    IterationRecord rec;
    rec.iteration = i;
    if (i < opts.warmup) rec.add_flag(flag::kWarmup);
    MetricNode it = new_root("pending");
    const std::uint64_t request = i;

    const Nanos t0 = clock.now();
    auto& sensing = start_timing(it, "sensing", MetricKind::latency(), t0);
    std::optional<Sample> sample;
    try {
      sample = sensor.sample();
    } catch (const Error& e) {
      if (e.code() != Errc::StageFailed) throw;
      rec.add_flag(flag::kStageFailed);
    }

    if (sample) {
      clock.account(sample->sensing_ns);
      rec.sensing_ns = stop_timing(sensing, clock.now());
      rec.upload_size_bytes = sample->data.size();
      record_value(it, "upload_size", MetricKind::size(), static_cast<double>(*rec.upload_size_bytes),
                   "bytes");

      MetricNode meta = new_root("server");
      record_value(meta, "request", MetricKind::count(), static_cast<double>(request), "id");
      start_timing(meta, "upload", MetricKind::latency(), clock.now());
      Envelope env;
      env.type = MsgType::Data;
      env.metadata = serialize(meta);
      env.payload = std::move(sample->data);
      ch.send(env);

      std::optional<Received> reply;
      std::optional<MetricNode> server_tree;
      try {
        for (;;) {
          Received r = ch.recv(opts.timeout);
          if (r.env.type != MsgType::Result && r.env.type != MsgType::Control) continue;
          auto tree = detail::try_deserialize(r.env.metadata);
          if (!tree || detail::request_id(*tree) != request) continue;  // stale or foreign
          if (tree->name == "error") {
            rec.add_flag(flag::kStageFailed);
            break;
          }
          if (r.env.type != MsgType::Result) continue;
          reply = std::move(r);
          server_tree = std::move(tree);
          break;
        }
      } catch (const Error& e) {
        if (e.code() == Errc::Timeout) {
          rec.add_flag(flag::kTimeout);
        } else if (e.code() == Errc::Malformed || e.code() == Errc::ProtocolError) {
          rec.add_flag(flag::kProtocolError);
        } else {
          throw;
        }
      }

      if (reply && server_tree) {
        try {
          MetricNode& down = server_tree->at("download");
          stop_timing(down, reply->recv_ts, ClockDomain::Cross);
          const Nanos t_end = clock.now();
          const auto raw_up = static_cast<Nanos>(server_tree->at("upload").value.value());
          const auto raw_down = static_cast<Nanos>(down.value.value());
          const auto up = correct_one_way(raw_up, model, Direction::ClientToServer);
          const auto dn = correct_one_way(raw_down, model, Direction::ServerToClient);
          rec.inference_ns = static_cast<Nanos>(server_tree->at("inference").value.value());
          rec.upload_latency_ns = up.ns;
          rec.download_latency_ns = dn.ns;
          rec.download_size_bytes = reply->env.payload.size();
          if (up.negative || dn.negative) rec.add_flag(flag::kNegativeLatency);
          if (!up.negative && up.ns > 0)
            rec.upload_throughput_bps = throughput(*rec.upload_size_bytes, up.ns);
          if (!dn.negative && dn.ns > 0)
            rec.download_throughput_bps = throughput(*rec.download_size_bytes, dn.ns);

          merge_remote(it, std::move(*server_tree));
          record_value(it, "upload_latency", MetricKind::latency(), static_cast<double>(up.ns), "ns");
          if (rec.upload_throughput_bps)
            record_value(it, "upload_throughput", MetricKind::throughput(), *rec.upload_throughput_bps,
                         "bytes/s");
          record_value(it, "download_size", MetricKind::size(),
                       static_cast<double>(*rec.download_size_bytes), "bytes");
          record_value(it, "download_latency", MetricKind::latency(), static_cast<double>(dn.ns), "ns");
          if (rec.download_throughput_bps)
            record_value(it, "download_throughput", MetricKind::throughput(),
                         *rec.download_throughput_bps, "bytes/s");
          auto& total = start_timing(it, "total", MetricKind::latency(), t0);
          rec.total_ns = stop_timing(total, t_end);
        } catch (const std::bad_optional_access&) {
          rec.add_flag(flag::kProtocolError);
        } catch (const Error& e) {
          if (e.code() != Errc::NoMatches && e.code() != Errc::NotStarted &&
              e.code() != Errc::AlreadyStopped)
            throw;
          rec.add_flag(flag::kProtocolError);
        }
      }
    }

    if (!rec.total_ns) {
      rec.add_flag(flag::kDropped);
      // Partial metrics of a dropped iteration are not reported.
      rec.upload_latency_ns.reset();
      rec.download_latency_ns.reset();
      rec.upload_throughput_bps.reset();
      rec.download_throughput_bps.reset();
      rec.inference_ns.reset();
      rec.download_size_bytes.reset();
      ++drops;
      detail::check_abort(drops, opts.iterations);
    }
    it.name = detail::iteration_name(i, rec);
    merge_remote(run.tree, std::move(it));
    run.records.push_back(std::move(rec));
  }

  try {
    MetricNode bye = new_root("bye");
    Envelope env;
    env.type = MsgType::Control;
    env.metadata = serialize(bye);
    ch.send(env);
  } catch (const Error&) {
    // the run is complete either way
  }
  return run;
}

// ---------------------------------------------------------------------------
// Server

struct ServerSummary {
  std::size_t data_requests = 0;
  std::size_t probes = 0;
  std::size_t calibrations = 0;
  std::size_t errors = 0;
  std::size_t ignored = 0;
  bool finished = false;
};

class ServerSession {
 public:
  ServerSession(Channel& ch, Compute& compute) : ch_(ch), compute_(compute) {}

  // Receives and handles one frame; false once the client has said goodbye.
  bool step(std::chrono::milliseconds timeout) {
    if (summary_.finished) return false;
    handle(ch_.recv(timeout));
    return !summary_.finished;
  }

  void handle(const Received& r) {
    switch (r.env.type) {
      case MsgType::ProbeReq: return on_probe(r);
      case MsgType::Data: return on_data(r);
      case MsgType::Control: return on_control(r);
      default: ++summary_.ignored;
    }
  }

  const ServerSummary& summary() const { return summary_; }
  bool finished() const { return summary_.finished; }

 private:
  void on_probe(const Received& r) {
    if (r.env.payload.size() != 16) {
      ++summary_.ignored;
      return;
    }
    Envelope resp;
    resp.type = MsgType::ProbeResp;
    resp.payload = r.env.payload.substr(0, 8) + detail::be64(static_cast<std::uint64_t>(r.recv_ts));
    ch_.send(resp);
    ++summary_.probes;
  }

  void reply_error(std::optional<std::uint64_t> request, const std::string& message) {
    MetricNode err = new_root("error");
    err.warning = message;
    if (request) record_value(err, "request", MetricKind::count(), static_cast<double>(*request), "id");
    Envelope env;
    env.type = MsgType::Control;
    env.metadata = serialize(err);
    ch_.send(env);
    ++summary_.errors;
  }

  void on_data(const Received& r) {
    ++summary_.data_requests;
    auto tree = detail::try_deserialize(r.env.metadata);
    MetricNode* upload = tree ? tree->find("upload") : nullptr;
    if (!tree || !upload || !upload->start_ts || upload->stop_ts) {
      reply_error(tree ? detail::request_id(*tree) : std::nullopt, "malformed metadata");
      return;
    }
    Clock& clock = ch_.clock();
    stop_timing(*upload, r.recv_ts, ClockDomain::Cross);

    auto& inference = start_timing(*tree, "inference", MetricKind::latency(), clock.now());
    Inference out;
    try {
      out = compute_.infer(r.env.payload);
    } catch (const Error& e) {
      if (e.code() != Errc::StageFailed) throw;
      reply_error(detail::request_id(*tree), e.what());
      return;
    }
    clock.account(out.inference_ns);
    stop_timing(inference, clock.now());

    // Result serialization is timed separately from inference.
    auto& ser = start_timing(*tree, "serialize-result", MetricKind::latency(), clock.now());
    Envelope env;
    env.type = MsgType::Result;
    env.payload = std::move(out.output);
    stop_timing(ser, clock.now());
    start_timing(*tree, "download", MetricKind::latency(), clock.now());
    env.metadata = serialize(*tree);
    ch_.send(env);
  }

  void on_control(const Received& r) {
    auto tree = detail::try_deserialize(r.env.metadata);
    if (!tree) {
      ++summary_.ignored;  // HELLO retries and unknown control frames
      return;
    }
    if (tree->name == "bye") {
      summary_.finished = true;
      return;
    }
    if (tree->name == "calibrate") {
      MetricNode* upload = tree->find("upload");
      if (!upload || !upload->start_ts || upload->stop_ts) {
        reply_error(detail::request_id(*tree), "malformed calibration metadata");
        return;
      }
      stop_timing(*upload, r.recv_ts, ClockDomain::Cross);
      Envelope env;
      env.type = MsgType::Control;
      env.metadata = serialize(*tree);
      ch_.send(env);
      ++summary_.calibrations;
      return;
    }
    ++summary_.ignored;
  }

  Channel& ch_;
  Compute& compute_;
  ServerSummary summary_;
};

// Serves one client session until it says goodbye, closes the channel, or
// stays silent for `idle_timeout`.
inline ServerSummary run_server(Channel& ch, Compute& compute, std::chrono::milliseconds idle_timeout) {
  ServerSession session(ch, compute);
  try {
    while (session.step(idle_timeout)) {
    }
  } catch (const Error& e) {
    if (e.code() != Errc::ChannelClosed && e.code() != Errc::Timeout) throw;
  }
  return session.summary();
}

// Wires a server session into a simulated client channel: whenever the client
// waits on an empty inbox, the server handles its next queued frame.
inline void attach_sim_server(SimChannel& client, SimChannel& server, ServerSession& session) {
  client.set_idle_hook([&server, &session] {
    if (!server.has_pending() || session.finished()) return false;
    try {
      session.step(std::chrono::hours(24));
    } catch (const Error& e) {
      if (e.code() != Errc::Malformed && e.code() != Errc::ProtocolError) throw;
    }
    return true;
  });
}

// ---------------------------------------------------------------------------
// Local (no network)

inline RunResult run_local(Sensor& sensor, Compute& compute, const LocalOptions& opts, Clock& clock) {
  if (opts.iterations == 0) fail(Errc::Usage, "iterations must be >= 1");
  RunResult run;
  run.offloaded = false;
  run.manifest.config = opts.config_snapshot;
  run.manifest.start_wall_ns = SystemClock{}.now();
  run.tree = new_root("benchmark");

  std::size_t drops = 0;
  for (std::size_t i = 0; i < opts.iterations; ++i) {
    IterationRecord rec;
    rec.iteration = i;
    if (i < opts.warmup) rec.add_flag(flag::kWarmup);
    MetricNode it = new_root("pending");
    try {
      const Nanos t0 = clock.now();
      auto& sensing = start_timing(it, "sensing", MetricKind::latency(), t0);
      Sample s = sensor.sample();
      clock.account(s.sensing_ns);
      rec.sensing_ns = stop_timing(sensing, clock.now());

      auto& inference = start_timing(it, "inference", MetricKind::latency(), clock.now());
      Inference out = compute.infer(s.data);
      clock.account(out.inference_ns);
      rec.inference_ns = stop_timing(inference, clock.now());

      auto& total = start_timing(it, "total", MetricKind::latency(), t0);
      rec.total_ns = stop_timing(total, clock.now());
    } catch (const Error& e) {
      if (e.code() != Errc::StageFailed) throw;
      rec.add_flag(flag::kStageFailed);
      rec.add_flag(flag::kDropped);
      rec.inference_ns.reset();
      ++drops;
      detail::check_abort(drops, opts.iterations);
    }
    it.name = detail::iteration_name(i, rec);
    merge_remote(run.tree, std::move(it));
    run.records.push_back(std::move(rec));
  }
  return run;
}

}  // namespace peerprof
