#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "peerprof/cli.hpp"
#include "test_util.hpp"

using namespace peerprof;

namespace {

std::vector<std::string> argv_of(std::initializer_list<std::string> args) {
  std::vector<std::string> v{"peerprof"};
  v.insert(v.end(), args);
  return v;
}

std::string usage_message(std::initializer_list<std::string> args) {
  try {
    parse_args(argv_of(args));
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Usage);
    return e.what();
  }
  ADD_FAILURE() << "parsed";
  return {};
}

}  // namespace

TEST(Cli, ServerConfig) {
  const CliConfig c = parse_args(argv_of({"--server", "--name", "cluster", "--network", "tcp", "--network-config",
                                          "net.json", "--compute", "echo", "--iterations", "10005"}));
  EXPECT_EQ(c.role, Role::Server);
  EXPECT_EQ(c.name, "cluster");
  EXPECT_EQ(c.iterations, 10005u);
  EXPECT_TRUE(std::holds_alternative<Echo>(c.compute));
}

TEST(Cli, ClientConfig) {
  const CliConfig c = parse_args(argv_of({"--client", "--name", "jetson", "--network", "tcp", "--network-config",
                                          "net.json", "--sensor", "synthetic:1048576", "--peer", "cluster",
                                          "--iterations", "100", "--result-loc", "out", "--generate-plots"}));
  EXPECT_EQ(c.role, Role::Client);
  EXPECT_EQ(c.peer, "cluster");
  EXPECT_EQ(std::get<Synthetic>(c.sensor.source).size_bytes, 1048576u);
  EXPECT_EQ(c.result_loc, "out");
  EXPECT_TRUE(c.generate_plots);
}

TEST(Cli, UsageErrorsNameTheFlag) {
  EXPECT_NE(usage_message({"--client", "--server"}).find("--"), std::string::npos);
  EXPECT_NE(usage_message({"--client", "--name", "j", "--network-config", "n", "--peer", "p"}).find("--sensor"),
            std::string::npos);
  EXPECT_NE(usage_message({"--server", "--name", "c", "--network-config", "n"}).find("--compute"), std::string::npos);
  EXPECT_NE(usage_message({"--local", "--sensor", "synthetic:0", "--compute", "echo"}).find("--sensor"),
            std::string::npos);
  EXPECT_NE(usage_message({"--local", "--sensor", "synthetic:1", "--compute", "gpu"}).find("--compute"),
            std::string::npos);
  EXPECT_NE(usage_message({"--local", "--sensor", "synthetic:1", "--compute", "echo", "--iterations", "0"})
                .find("--iterations"),
            std::string::npos);
  EXPECT_NE(usage_message({"--client", "--network", "zmq", "--sensor", "synthetic:1"}).find("--network"),
            std::string::npos);
  EXPECT_NE(usage_message({"--bogus"}).find("--bogus"), std::string::npos);
  usage_message({});
}

TEST(Cli, SelectorsAndAliases) {
  auto c = parse_args(argv_of({"--local", "--sensor-type", "dataset", "--dataset-loc", "/data", "--model-name",
                               "sleep:5:0.1+20:0.1@7"}));
  EXPECT_EQ(std::get<DatasetDir>(c.sensor.source).path, "/data");
  const auto& s = std::get<Sleep>(c.compute);
  ASSERT_EQ(s.modes.size(), 2u);
  EXPECT_EQ(s.modes[1].mean_ms, 20.0);
  EXPECT_EQ(s.seed, 7u);
  c = parse_args(argv_of({"--local", "--sensor", "exec:sh -c true", "--compute", "sleep"}));
  EXPECT_EQ(std::get<ExternalSensor>(c.sensor.source).argv.size(), 3u);
  EXPECT_EQ(std::get<Sleep>(c.compute).modes[0].mean_ms, 18.55);
}

TEST(Cli, SimFlags) {
  const auto c = parse_args(argv_of({"--client", "--network", "sim", "--sensor", "synthetic:10", "--sim-skew-ms", "3",
                                     "--sim-up-ms", "5", "--sim-down-ms", "5", "--sim-bandwidth-mbs", "10"}));
  ASSERT_TRUE(c.sim);
  EXPECT_EQ(c.sim->clock_skew_ns, 3'000'000);
  EXPECT_EQ(c.sim->up_delay_ns, 5'000'000);
  EXPECT_EQ(*c.sim->bandwidth_bytes_per_s, 10.0 * (1 << 20));
}

TEST(Cli, ResultLocFromEnvironment) {
  ::setenv("PEERPROF_RESULT_LOC", "/tmp/from-env", 1);
  const auto c = parse_args(argv_of({"--local", "--sensor", "synthetic:1", "--compute", "echo"}));
  ::unsetenv("PEERPROF_RESULT_LOC");
  EXPECT_EQ(c.result_loc, "/tmp/from-env");
}

TEST(Cli, SimRunCorrectsUploadLatency) {
  testutil::TempDir dir;
  std::ostringstream out, err;
  const int rc = main_entry(argv_of({"--client", "--network", "sim", "--sim-skew-ms", "3", "--sim-up-ms", "5",
                                     "--sim-down-ms", "5", "--sensor", "synthetic:1000", "--iterations", "20",
                                     "--result-loc", (dir.path / "r").string()}),
                            out, err);
  ASSERT_EQ(rc, 0) << err.str();
  std::ifstream in(dir.path / "r" / "summary.md");
  const std::string md((std::istreambuf_iterator<char>(in)), {});
  EXPECT_NE(md.find("| upload_latency_ns | 19 | 5.00 |"), std::string::npos) << md;
}

TEST(Cli, AbsentServerExitsTwo) {
  testutil::TempDir dir;
  const auto net = testutil::loopback_config({"jetson", "cluster"});
  std::ofstream(dir.path / "net.json") << testutil::config_json(net);
  std::ostringstream out, err;
  const int rc = main_entry(argv_of({"--client", "--name", "jetson", "--network-config", (dir.path / "net.json").string(),
                                     "--peer", "cluster", "--sensor", "synthetic:10", "--connect-timeout-ms", "300",
                                     "--result-loc", (dir.path / "r").string()}),
                            out, err);
  EXPECT_EQ(rc, 2);
  EXPECT_FALSE(std::filesystem::exists(dir.path / "r"));
}

TEST(Cli, ExitCodes) {
  std::ostringstream out, err;
  EXPECT_EQ(main_entry(argv_of({"--client", "--server"}), out, err), 1);
  EXPECT_EQ(main_entry(argv_of({"--help"}), out, err), 0);
  EXPECT_NE(out.str().find("--network-config"), std::string::npos);
  EXPECT_EQ(main_entry(argv_of({"--client", "--name", "a", "--network-config", "/nonexistent.json", "--peer", "b",
                                "--sensor", "synthetic:1"}),
                       out, err),
            1);
}
