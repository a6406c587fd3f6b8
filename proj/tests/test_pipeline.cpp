#include <gtest/gtest.h>

#include <future>

#include "peerprof/pipeline.hpp"
#include "peerprof/reporting.hpp"
#include "test_util.hpp"

using namespace peerprof;
using namespace std::chrono_literals;

namespace {

constexpr Nanos kMs = 1'000'000;

struct SimRig {
  std::unique_ptr<SimChannel> client, server;
  Compute compute;
  ServerSession session;

  SimRig(const SimLinkSpec& spec, ComputeSpec c)
      : client(), server(), compute(std::move(c)), session(init(spec), compute) {
    attach_sim_server(*client, *server, session);
  }

 private:
  SimChannel& init(const SimLinkSpec& spec) {
    auto [a, b] = make_sim_pair(spec, "client", "server");
    client = std::move(a);
    server = std::move(b);
    return *server;
  }
};

ClientOptions opts(std::size_t iterations, std::size_t warmup = 1) {
  ClientOptions o;
  o.iterations = iterations;
  o.warmup = warmup;
  o.sync_probes = 4;
  o.probe_spacing = 10ms;
  return o;
}

bool has_all_eight(const IterationRecord& r) {
  return r.sensing_ns && r.upload_size_bytes && r.upload_latency_ns && r.upload_throughput_bps &&
         r.inference_ns && r.download_size_bytes && r.download_latency_ns && r.download_throughput_bps;
}

}  // namespace

TEST(Pipeline, SimEchoBookkeeping) {
  SimLinkSpec spec;
  spec.up_delay_ns = 2 * kMs;
  spec.down_delay_ns = 2 * kMs;
  SimRig rig(spec, Echo{});
  Sensor sensor(SensorSpec{Synthetic{256}, std::nullopt});
  const RunResult run = run_client(*rig.client, sensor, opts(10));
  ASSERT_EQ(run.records.size(), 10u);
  EXPECT_TRUE(run.records[0].has_flag(flag::kWarmup));
  EXPECT_EQ(summary_table(run.records).front().stats.n, 9u);
  for (const auto& r : run.records) {
    EXPECT_TRUE(has_all_eight(r));
    EXPECT_FALSE(r.has_flag(flag::kDropped));
    EXPECT_GE(*r.total_ns, *r.sensing_ns + *r.upload_latency_ns + *r.inference_ns + *r.download_latency_ns);
  }
  EXPECT_EQ(rig.session.summary().probes, 4u);
  EXPECT_EQ(rig.session.summary().data_requests, 10u);
  // nothing drives the sim server once the client returns
  while (rig.server->has_pending()) rig.session.step(1s);
  EXPECT_TRUE(rig.session.finished());
  EXPECT_TRUE(run.tree.find("warmup-0"));
  EXPECT_TRUE(run.tree.find("iteration-9"));
  const auto& server = run.tree.at("iteration-3").at("server");
  EXPECT_TRUE(server.at("upload").stop_ts);
  EXPECT_TRUE(server.at("inference").stop_ts);
  EXPECT_TRUE(server.at("serialize-result").stop_ts);
  EXPECT_TRUE(server.at("download").stop_ts);
}

TEST(Pipeline, ZeroJitterUploadIsExact) {
  SimLinkSpec spec;
  spec.up_delay_ns = 3 * kMs;
  spec.down_delay_ns = 3 * kMs;
  spec.clock_skew_ns = 11 * kMs;
  spec.bandwidth_bytes_per_s = 50.0 * (1 << 20);
  SimRig rig(spec, Echo{});
  Sensor sensor(SensorSpec{Synthetic{100'000}, std::nullopt});
  const RunResult run = run_client(*rig.client, sensor, opts(5, 0));
  const auto& transfers = rig.client->link().transfers();
  std::vector<Nanos> up_truth;
  for (const auto& t : transfers)
    if (t.from == SimSide::Client && t.frame_bytes > 100'000) up_truth.push_back(t.deliver_at - t.sent_at);
  ASSERT_EQ(up_truth.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(*run.records[i].upload_latency_ns, up_truth[i]);
  EXPECT_EQ(run.manifest.clock_model->offset_ns, 11 * kMs);
}

TEST(Pipeline, ServerReplyCarriesClosedNodes) {
  auto [c, s] = make_sim_pair(SimLinkSpec{}, "client", "server");
  Compute echo(Echo{});
  ServerSession session(*s, echo);
  MetricNode meta = new_root("server");
  record_value(meta, "request", MetricKind::count(), 0, "id");
  start_timing(meta, "upload", MetricKind::latency(), c->clock().now());
  Envelope e;
  e.type = MsgType::Data;
  e.metadata = serialize(meta);
  e.payload = "payload!";
  c->send(e);
  session.step(1s);
  const Received r = c->recv(1s);
  EXPECT_EQ(r.env.type, MsgType::Result);
  EXPECT_EQ(r.env.payload, "payload!");
  const MetricNode tree = deserialize(*r.env.metadata);
  EXPECT_TRUE(tree.at("upload").stop_ts);
  EXPECT_TRUE(tree.at("inference").stop_ts);
  EXPECT_TRUE(tree.at("download").start_ts);
  EXPECT_FALSE(tree.at("download").stop_ts);
}

TEST(Pipeline, MalformedMetadataGetsErrorReply) {
  auto [c, s] = make_sim_pair(SimLinkSpec{}, "client", "server");
  Compute echo(Echo{});
  ServerSession session(*s, echo);
  Envelope e;
  e.type = MsgType::Data;
  e.metadata = "{not json";
  c->send(e);
  session.step(1s);
  const Received r = c->recv(1s);
  EXPECT_EQ(r.env.type, MsgType::Control);
  EXPECT_EQ(deserialize(*r.env.metadata).name, "error");
  EXPECT_EQ(session.summary().errors, 1u);
}

TEST(Pipeline, FailingComputeDropsIteration) {
  SimRig rig(SimLinkSpec{}, ExternalCompute{{"sh", "-c", "cat >/dev/null; exit 9"}});
  Sensor sensor(SensorSpec{Synthetic{10}, std::nullopt});
  ClientOptions o = opts(3, 0);
  // every iteration fails, so the run aborts
  EXPECT_EQ(testutil::code_of([&] { run_client(*rig.client, sensor, o); }), Errc::RunAborted);
}

TEST(Pipeline, OneFailureIsFlagged) {
  testutil::TempDir dir;
  const auto flag_file = dir.path / "failed";
  // fails on the first call only
  const std::string script = "cat >/dev/null; if [ -e " + flag_file.string() + " ]; then printf ok; else touch " +
                             flag_file.string() + "; exit 9; fi";
  SimLinkSpec spec;
  spec.up_delay_ns = kMs;
  spec.down_delay_ns = kMs;
  SimRig rig(spec, ExternalCompute{{"sh", "-c", script}});
  Sensor sensor(SensorSpec{Synthetic{10}, std::nullopt});
  const RunResult run = run_client(*rig.client, sensor, opts(4, 0));
  EXPECT_TRUE(run.records[0].has_flag(flag::kDropped));
  EXPECT_TRUE(run.records[0].has_flag(flag::kStageFailed));
  EXPECT_TRUE(run.tree.find("dropped-0"));
  for (std::size_t i = 1; i < 4; ++i) EXPECT_TRUE(has_all_eight(run.records[i]));
}

TEST(Pipeline, LossBecomesTimeoutDrops) {
  SimLinkSpec spec;
  spec.up_delay_ns = kMs;
  spec.down_delay_ns = kMs;
  spec.loss_prob = 0.2;
  spec.seed = 4;
  SimRig rig(spec, Echo{});
  Sensor sensor(SensorSpec{Synthetic{100}, std::nullopt});
  ClientOptions o = opts(100, 0);
  o.timeout = 200ms;
  const RunResult run = run_client(*rig.client, sensor, o);
  std::size_t drops = 0;
  for (const auto& r : run.records)
    if (r.has_flag(flag::kDropped)) {
      ++drops;
      EXPECT_TRUE(r.has_flag(flag::kTimeout));
      EXPECT_FALSE(r.upload_latency_ns);
    }
  EXPECT_GT(drops, 5u);
  EXPECT_LT(drops, 40u);
}

TEST(Pipeline, CalibrationRecoversResidual) {
  SimLinkSpec spec;
  spec.clock_skew_ns = -2'010'000;
  spec.bandwidth_bytes_per_s = 1024.0 * 1024 * 1000;
  SimRig rig(spec, Echo{});
  const CalibrationResult cal = calibrate(*rig.client, ClockModel{}, CalibrationPlan::standard(), 1s);
  EXPECT_EQ(cal.points.size(), 40u);
  EXPECT_NEAR(cal.fit.intercept_ns, -2'010'000, 1'000);
  EXPECT_NEAR(cal.fit.slope_ns_per_byte, 1e9 / (1024.0 * 1024 * 1000), 1e-3);
  EXPECT_EQ(cal.model.method, SyncMethod::ResidualCalibrated);
}

TEST(Pipeline, LocalRun) {
  Sensor sensor(SensorSpec{Synthetic{64}, std::nullopt});
  Compute echo(Echo{});
  SystemClock clock;
  const RunResult run = run_local(sensor, echo, LocalOptions{5, 1, {}}, clock);
  ASSERT_EQ(run.records.size(), 5u);
  for (const auto& r : run.records) {
    EXPECT_TRUE(r.sensing_ns && r.inference_ns && r.total_ns);
    EXPECT_FALSE(r.upload_latency_ns || r.upload_size_bytes || r.download_latency_ns);
    EXPECT_LE(std::abs(*r.total_ns - *r.sensing_ns - *r.inference_ns), kMs);
  }
  EXPECT_FALSE(run.offloaded);
  EXPECT_EQ(tree_path(Metric::Inference, false), "iteration-*/inference");
  EXPECT_EQ(summarize(run.tree, "iteration-*/inference").n, 4u);
}

TEST(Pipeline, TwoPathConsistency) {
  SimLinkSpec spec;
  spec.up_delay_ns = kMs;
  spec.down_delay_ns = 2 * kMs;
  spec.jitter_ns = kMs / 3;
  spec.bandwidth_bytes_per_s = 20.0 * (1 << 20);
  spec.clock_skew_ns = 123'456;
  spec.seed = 8;
  SimRig rig(spec, Echo{});
  Sensor sensor(SensorSpec{Synthetic{30'000}, std::nullopt});
  const RunResult run = run_client(*rig.client, sensor, opts(25, 3));
  for (const auto& row : summary_table(run.records)) {
    Metric m{};
    for (Metric k : kAllMetrics)
      if (metric_column(k) == row.metric) m = k;
    const SampleStats t = summarize(run.tree, tree_path(m, true));
    EXPECT_EQ(t.n, row.stats.n) << row.metric;
    EXPECT_EQ(t.mean, row.stats.mean) << row.metric;
    EXPECT_EQ(t.std, row.stats.std) << row.metric;
    EXPECT_EQ(t.min, row.stats.min) << row.metric;
    EXPECT_EQ(t.max, row.stats.max) << row.metric;
  }
}

TEST(Pipeline, ManifestJson) {
  SimRig rig(SimLinkSpec{}, Echo{});
  Sensor sensor(SensorSpec{Synthetic{8}, std::nullopt});
  ClientOptions o = opts(2, 0);
  o.config_snapshot = {{"iterations", 2}};
  const RunResult run = run_client(*rig.client, sensor, o);
  const auto j = run.manifest.to_json();
  EXPECT_EQ(j["artifact_version"], std::string(kVersion));
  EXPECT_EQ(j["config"]["iterations"], 2);
  EXPECT_EQ(j["clock_model"]["method"], "probe");
}

TEST(Pipeline, TcpServerRoundTrip) {
  const auto net = testutil::loopback_config({"cluster", "jetson"});
  auto sc = net;
  sc.self_name = "cluster";
  auto cc = net;
  cc.self_name = "jetson";
  auto listener = serve(sc, TcpTransport{});
  auto server = std::async(std::launch::async, [&] {
    auto ch = listener->accept(5s);
    Compute echo(Echo{});
    return run_server(*ch, echo, 5s);
  });
  auto ch = connect(cc, "cluster", TcpTransport{});
  Sensor sensor(SensorSpec{Synthetic{4096}, std::nullopt});
  ClientOptions o = opts(5, 1);
  o.probe_spacing = 1ms;
  o.sync_probes = 16;
  const RunResult run = run_client(*ch, sensor, o);
  const ServerSummary sum = server.get();
  EXPECT_EQ(sum.probes, 16u);
  EXPECT_EQ(sum.data_requests, 5u);
  EXPECT_TRUE(sum.finished);
  for (const auto& r : run.records) EXPECT_TRUE(r.total_ns);
  // same host, one clock: the probe offset is tiny
  EXPECT_LT(std::abs(run.manifest.clock_model->offset_ns), 5 * kMs);
}
