#pragma once

// Summaries, CSV export and SVG histograms for a finished run.

#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "peerprof/error.hpp"
#include "peerprof/metrics_tree.hpp"
#include "peerprof/pipeline.hpp"
#include "peerprof/stats.hpp"

namespace peerprof {

inline constexpr std::string_view kCsvHeader =
    "iteration,sensing_ns,upload_size_bytes,upload_latency_ns,upload_throughput_bps,inference_ns,"
    "download_size_bytes,download_latency_ns,download_throughput_bps,total_ns,flags";

namespace detail {

template <class T>
std::string num(T v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string csv_quote(std::string_view s) {
  if (s.find_first_of(",\"\r\n;") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

// Splits one CSV line honouring RFC 4180 quotes (no embedded newlines).
inline std::vector<std::string> csv_split(std::string_view line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cells.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back();
    } else {
      cells.back() += c;
    }
  }
  if (quoted) fail(Errc::Malformed, "unterminated quote in CSV row");
  return cells;
}

template <class T>
std::optional<T> parse_cell(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  T v{};
  const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (r.ec != std::errc{} || r.ptr != cell.data() + cell.size())
    fail(Errc::Malformed, "bad CSV number '" + cell + "'");
  return v;
}

}  // namespace detail

inline std::string export_csv(const std::vector<IterationRecord>& records) {
  if (records.empty()) fail(Errc::EmptyInput, "no records to export");
  std::string out(kCsvHeader);
  out += '\n';
  auto cell = [&out](const auto& o) {
    out += ',';
    if (o) out += detail::num(*o);
  };
  for (const auto& r : records) {
    out += detail::num(r.iteration);
    cell(r.sensing_ns);
    cell(r.upload_size_bytes);
    cell(r.upload_latency_ns);
    cell(r.upload_throughput_bps);
    cell(r.inference_ns);
    cell(r.download_size_bytes);
    cell(r.download_latency_ns);
    cell(r.download_throughput_bps);
    cell(r.total_ns);
    out += ',';
    std::string flags;
    for (std::size_t i = 0; i < r.flags.size(); ++i) flags += (i ? ";" : "") + r.flags[i];
    out += detail::csv_quote(flags);
    out += '\n';
  }
  return out;
}

inline std::vector<IterationRecord> parse_csv(std::string_view text) {
  std::vector<IterationRecord> out;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (header) {
      if (line != kCsvHeader) fail(Errc::Malformed, "unexpected CSV header");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const auto c = detail::csv_split(line);
    if (c.size() != 11) fail(Errc::Malformed, "CSV row has " + std::to_string(c.size()) + " cells");
    IterationRecord r;
    r.iteration = detail::parse_cell<std::size_t>(c[0]).value_or(0);
    r.sensing_ns = detail::parse_cell<Nanos>(c[1]);
    r.upload_size_bytes = detail::parse_cell<std::uint64_t>(c[2]);
    r.upload_latency_ns = detail::parse_cell<Nanos>(c[3]);
    r.upload_throughput_bps = detail::parse_cell<double>(c[4]);
    r.inference_ns = detail::parse_cell<Nanos>(c[5]);
    r.download_size_bytes = detail::parse_cell<std::uint64_t>(c[6]);
    r.download_latency_ns = detail::parse_cell<Nanos>(c[7]);
    r.download_throughput_bps = detail::parse_cell<double>(c[8]);
    r.total_ns = detail::parse_cell<Nanos>(c[9]);
    std::string_view flags = c[10];
    while (!flags.empty()) {
      const auto semi = flags.find(';');
      r.flags.emplace_back(flags.substr(0, semi));
      if (semi == std::string_view::npos) break;
      flags.remove_prefix(semi + 1);
    }
    out.push_back(std::move(r));
  }
  if (header) fail(Errc::Malformed, "empty CSV");
  return out;
}

struct SummaryRow {
  std::string metric;
  SampleStats stats;
  std::string unit;
};

inline const std::vector<std::string>& default_excluded_flags() {
  static const std::vector<std::string> flags{std::string(flag::kWarmup), std::string(flag::kDropped)};
  return flags;
}

// One row per metric with at least one value among the included records.
inline std::vector<SummaryRow> summary_table(const std::vector<IterationRecord>& records,
                                             const std::vector<std::string>& exclude = default_excluded_flags()) {
  std::vector<const IterationRecord*> kept;
  for (const auto& r : records) {
    const bool skip = std::any_of(exclude.begin(), exclude.end(), [&](const auto& f) { return r.has_flag(f); });
    if (!skip) kept.push_back(&r);
  }
  if (kept.empty()) fail(Errc::EmptyInput, "every record is excluded from the summary");
  std::vector<SummaryRow> rows;
  for (const Metric m : kAllMetrics) {
    std::vector<double> values;
    for (const auto* r : kept)
      if (auto v = metric_value(*r, m)) values.push_back(*v);
    if (values.empty()) continue;
    rows.push_back({std::string(metric_column(m)), sample_stats(values), std::string(metric_unit(m))});
  }
  return rows;
}

inline std::string summary_markdown(const std::vector<SummaryRow>& rows) {
  std::string out = "| metric | n | mean | std | min | max | unit |\n|---|---|---|---|---|---|---|\n";
  char buf[256];
  for (const auto& r : rows) {
    double scale = 1.0;
    std::string unit = r.unit;
    const char* fmt = "| %s | %zu | %.0f | %.0f | %.0f | %.0f | %s |\n";
    if (r.unit == "ns") {
      scale = 1e-6;
      unit = "ms";
      fmt = "| %s | %zu | %.2f | %.2f | %.2f | %.2f | %s |\n";
    } else if (r.unit == "bytes/s") {
      scale = 1.0 / (1024.0 * 1024.0);
      unit = "MiB/s";
      fmt = "| %s | %zu | %.2f | %.2f | %.2f | %.2f | %s |\n";
    }
    std::snprintf(buf, sizeof buf, fmt, r.metric.c_str(), r.stats.n, r.stats.mean * scale,
                  r.stats.std * scale, r.stats.min * scale, r.stats.max * scale, unit.c_str());
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Histograms

struct Histogram {
  double lo = 0.0;
  double width = 1.0;
  std::vector<std::size_t> counts;
};

// Equal-width bins over [min, max]; the maximum falls in the last bin. A
// single distinct value gets one bin of width 1.
inline Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (values.empty()) fail(Errc::EmptyInput, "histogram of no values");
  if (bins == 0) fail(Errc::InvalidConfig, "histogram needs at least one bin");
  for (double v : values)
    if (!std::isfinite(v)) fail(Errc::NonFinite, "histogram value is not finite");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  Histogram h;
  h.lo = *lo;
  if (*hi == *lo) {
    h.counts.assign(1, values.size());
    return h;
  }
  h.width = (*hi - *lo) / static_cast<double>(bins);
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto i = static_cast<std::size_t>((v - h.lo) / h.width);
    ++h.counts[std::min(i, bins - 1)];
  }
  return h;
}

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

}  // namespace detail

inline std::string histogram_svg(std::span<const double> values, std::size_t bins, std::string_view title) {
  const Histogram h = histogram(values, bins);
  constexpr double W = 640, H = 400, left = 60, right = 20, top = 40, bottom = 50;
  const double plot_w = W - left - right;
  const double plot_h = H - top - bottom;
  const std::size_t peak = *std::max_element(h.counts.begin(), h.counts.end());
  const double bar_w = plot_w / static_cast<double>(h.counts.size());

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"400\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
       detail::xml_escape(title) + "</text>\n";
  s += "<line x1=\"60\" y1=\"350\" x2=\"620\" y2=\"350\" stroke=\"black\"/>\n";
  s += "<line x1=\"60\" y1=\"40\" x2=\"60\" y2=\"350\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double bh = plot_h * static_cast<double>(h.counts[i]) / static_cast<double>(peak);
    const double x = left + bar_w * static_cast<double>(i);
    s += "<rect class=\"bin\" data-count=\"" + std::to_string(h.counts[i]) + "\" x=\"" + detail::fixed(x, 2) +
         "\" y=\"" + detail::fixed(top + plot_h - bh, 2) + "\" width=\"" + detail::fixed(bar_w, 2) +
         "\" height=\"" + detail::fixed(bh, 2) + "\" fill=\"steelblue\" stroke=\"white\"/>\n";
  }
  const double hi = h.lo + h.width * static_cast<double>(h.counts.size());
  s += "<text x=\"60\" y=\"370\" text-anchor=\"start\" font-family=\"sans-serif\" font-size=\"12\">" +
       detail::fixed(h.lo, 3) + "</text>\n";
  s += "<text x=\"620\" y=\"370\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" +
       detail::fixed(hi, 3) + "</text>\n";
  s += "<text x=\"50\" y=\"50\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" +
       std::to_string(peak) + "</text>\n";
  s += "</svg>\n";
  return s;
}

// ---------------------------------------------------------------------------
// Results directory

namespace detail {

inline void write_file(const std::filesystem::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::Io, "cannot write " + p.string());
}

}  // namespace detail

// Writes metrics.json, records.csv, manifest.json, summary.md and, when
// asked, one histogram per latency metric. Files are staged in a sibling
// directory and renamed into place, so `dir` is either complete or absent.
// An existing `dir` is replaced only if it looks like an earlier result set.
inline void write_results(const std::filesystem::path& dir, const RunResult& run, bool plots) {
  namespace fs = std::filesystem;
  if (dir.empty()) fail(Errc::InvalidConfig, "empty result location");
  const fs::path target = fs::absolute(dir).lexically_normal();
  const fs::path parent = target.has_filename() ? target.parent_path() : target.parent_path().parent_path();
  const std::string leaf = target.has_filename() ? target.filename().string()
                                                  : target.parent_path().filename().string();
  const fs::path final_dir = parent / leaf;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (fs::exists(final_dir) && !fs::exists(final_dir / "manifest.json"))
    fail(Errc::InvalidConfig, final_dir.string() + " exists and does not hold earlier results");

  const fs::path tmp = parent / ("." + leaf + ".tmp-" + std::to_string(::getpid()));
  fs::remove_all(tmp, ec);
  if (!fs::create_directory(tmp, ec)) fail(Errc::Io, "cannot create " + tmp.string());
  try {
    detail::write_file(tmp / "metrics.json", serialize(run.tree));
    detail::write_file(tmp / "records.csv", export_csv(run.records));
    detail::write_file(tmp / "manifest.json", run.manifest.to_json().dump(2) + "\n");
    std::string md = "# Benchmark summary\n\n";
    try {
      md += summary_markdown(summary_table(run.records));
    } catch (const Error& e) {
      if (e.code() != Errc::EmptyInput) throw;
      md += "No iterations were summarized.\n";
    }
    detail::write_file(tmp / "summary.md", md);
    if (plots) {
      for (const Metric m : {Metric::Sensing, Metric::UploadLatency, Metric::Inference,
                             Metric::DownloadLatency, Metric::Total}) {
        std::vector<double> ms;
        for (const auto& r : run.records) {
          if (r.has_flag(flag::kWarmup) || r.has_flag(flag::kDropped)) continue;
          if (auto v = metric_value(r, m)) ms.push_back(*v / 1e6);
        }
        if (ms.empty()) continue;
        const std::string name(metric_node(m));
        detail::write_file(tmp / (name + ".svg"), histogram_svg(ms, 20, name + " (ms)"));
      }
    }
    if (fs::exists(final_dir)) fs::remove_all(final_dir);
    fs::rename(tmp, final_dir);
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
}

}  // namespace peerprof
