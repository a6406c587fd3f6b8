#include <gtest/gtest.h>

#include <fstream>
#include <regex>

#include "peerprof/reporting.hpp"
#include "test_util.hpp"

using namespace peerprof;

namespace {

IterationRecord full(std::size_t i, double scale) {
  IterationRecord r;
  r.iteration = i;
  r.sensing_ns = static_cast<Nanos>(1'000'000 * scale);
  r.upload_size_bytes = 1 << 20;
  r.upload_latency_ns = -17;
  r.upload_throughput_bps = 1.0 / 3.0 * scale;
  r.inference_ns = 18'550'000;
  r.download_size_bytes = 32;
  r.download_latency_ns = 12'345;
  r.download_throughput_bps = 2.5e9 * scale;
  r.total_ns = INT64_MAX;
  return r;
}

std::vector<std::size_t> counts_in_svg(const std::string& svg) {
  std::vector<std::size_t> out;
  const std::regex re("data-count=\"(\\d+)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator(); ++it)
    out.push_back(std::stoul((*it)[1]));
  return out;
}

}  // namespace

TEST(Csv, HeaderAndRows) {
  std::vector<IterationRecord> recs{full(0, 1), full(1, 2), full(2, 3)};
  const std::string csv = export_csv(recs);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "iteration,sensing_ns,upload_size_bytes,upload_latency_ns,upload_throughput_bps,inference_ns,"
            "download_size_bytes,download_latency_ns,download_throughput_bps,total_ns,flags");
  EXPECT_EQ(testutil::code_of([] { export_csv({}); }), Errc::EmptyInput);
}

TEST(Csv, FlagsAreQuoted) {
  IterationRecord r;
  r.flags = {"warmup", "dropped"};
  const std::string csv = export_csv({r});
  EXPECT_NE(csv.find(",,,,,,,,,,\"warmup;dropped\"\n"), std::string::npos) << csv;
  IterationRecord single;
  single.flags = {"warmup"};
  EXPECT_NE(export_csv({single}).find(",warmup\n"), std::string::npos);
}

TEST(Csv, ParseBackIsExact) {
  std::mt19937_64 rng(31);
  std::vector<IterationRecord> recs;
  for (std::size_t i = 0; i < 200; ++i) {
    IterationRecord r = full(i, std::uniform_real_distribution<double>(1e-3, 1e3)(rng));
    r.upload_throughput_bps = std::ldexp(std::uniform_real_distribution<double>(0.5, 1)(rng),
                                         std::uniform_int_distribution<int>(-60, 60)(rng));
    if (i % 7 == 0) r.download_latency_ns.reset();
    if (i % 5 == 0) r.flags = {"negative-corrected-latency", "dropped"};
    recs.push_back(r);
  }
  EXPECT_EQ(parse_csv(export_csv(recs)), recs);
}

TEST(Summary, Arithmetic) {
  std::vector<IterationRecord> recs;
  for (int i = 1; i <= 3; ++i) {
    IterationRecord r;
    r.iteration = static_cast<std::size_t>(i);
    r.sensing_ns = i * 1'000'000;
    recs.push_back(r);
  }
  IterationRecord w;
  w.sensing_ns = 100'000'000;
  w.flags = {"warmup"};
  recs.insert(recs.begin(), w);
  const auto rows = summary_table(recs);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].metric, "sensing_ns");
  EXPECT_EQ(rows[0].stats.n, 3u);
  EXPECT_EQ(rows[0].stats.mean, 2'000'000.0);
  EXPECT_EQ(rows[0].stats.std, 1'000'000.0);
  const std::string md = summary_markdown(rows);
  EXPECT_NE(md.find("| sensing_ns | 3 | 2.00 | 1.00 | 1.00 | 3.00 | ms |"), std::string::npos) << md;

  EXPECT_EQ(summary_table(recs, {}).front().stats.n, 4u);
  EXPECT_EQ(testutil::code_of([&] { summary_table({w}); }), Errc::EmptyInput);
}

TEST(Summary, CopiesOfOneValue) {
  std::vector<IterationRecord> recs(50);
  for (auto& r : recs) r.upload_throughput_bps = 0.3;
  const auto rows = summary_table(recs);
  EXPECT_EQ(rows[0].stats.mean, 0.3);
  EXPECT_EQ(rows[0].stats.std, 0.0);
}

TEST(Histogram, EqualBars) {
  const std::vector<double> v{1, 1, 2, 2};
  const std::string svg = histogram_svg(v, 2, "t");
  EXPECT_EQ(counts_in_svg(svg), (std::vector<std::size_t>{2, 2}));
  const std::regex heights("class=\"bin\" data-count=\"2\" x=\"[0-9.]+\" y=\"([0-9.]+)\" width=\"[0-9.]+\" height=\"([0-9.]+)\"");
  std::vector<std::string> hs;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), heights); it != std::sregex_iterator(); ++it)
    hs.push_back((*it)[2]);
  ASSERT_EQ(hs.size(), 2u);
  EXPECT_EQ(hs[0], hs[1]);
  EXPECT_NE(svg.find("width=\"640\" height=\"400\""), std::string::npos);
}

TEST(Histogram, SingleValue) {
  const std::vector<double> v{5};
  const std::string svg = histogram_svg(v, 10, "one");
  EXPECT_EQ(counts_in_svg(svg), (std::vector<std::size_t>{1}));
  EXPECT_NE(svg.find("height=\"310.00\""), std::string::npos);
}

TEST(Histogram, DeterministicAndEscaped) {
  std::vector<double> v;
  for (int i = 0; i < 100; ++i) v.push_back(i * 0.37);
  EXPECT_EQ(histogram_svg(v, 7, "a<b & \"c\""), histogram_svg(v, 7, "a<b & \"c\""));
  EXPECT_NE(histogram_svg(v, 7, "a<b").find("a&lt;b"), std::string::npos);
  EXPECT_EQ(testutil::code_of([] { histogram_svg({}, 3, ""); }), Errc::EmptyInput);
  const std::vector<double> one{1.0};
  EXPECT_EQ(testutil::code_of([&] { histogram_svg(one, 0, ""); }), Errc::InvalidConfig);
}

TEST(Histogram, CountsAddUp) {
  std::mt19937_64 rng(1);
  std::vector<double> v;
  for (int i = 0; i < 1000; ++i) v.push_back(std::normal_distribution<double>(0, 1)(rng));
  const auto c = counts_in_svg(histogram_svg(v, 13, "n"));
  EXPECT_EQ(c.size(), 13u);
  EXPECT_EQ(std::accumulate(c.begin(), c.end(), std::size_t{0}), 1000u);
}

TEST(Results, WritesAllFilesAtomically) {
  testutil::TempDir dir;
  RunResult run;
  run.tree = new_root("benchmark");
  run.records = {full(0, 1), full(1, 1)};
  run.records[0].flags = {"warmup"};
  const auto out = dir.path / "out";
  write_results(out, run, true);
  for (const char* f : {"metrics.json", "records.csv", "manifest.json", "summary.md", "sensing.svg", "total.svg"})
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  // rerun replaces the earlier result set
  write_results(out, run, false);
  EXPECT_FALSE(std::filesystem::exists(out / "sensing.svg"));
  // foreign directories are left alone
  const auto foreign = dir.path / "foreign";
  std::filesystem::create_directories(foreign);
  std::ofstream(foreign / "keep.txt") << "x";
  EXPECT_EQ(testutil::code_of([&] { write_results(foreign, run, false); }), Errc::InvalidConfig);
  EXPECT_TRUE(std::filesystem::exists(foreign / "keep.txt"));
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path)) ++entries;
  EXPECT_EQ(entries, 2u);  // no staging leftovers
}
