#pragma once

// Pluggable data sources (sensors) and computations (inference stages).

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include "peerprof/clock.hpp"
#include "peerprof/error.hpp"
#include "peerprof/subprocess.hpp"
#include "peerprof/wire.hpp"

namespace peerprof {

inline constexpr std::uint64_t kMaxSyntheticBytes = 1ull << 30;
inline constexpr std::chrono::milliseconds kDefaultStageTimeout{30'000};

// ---------------------------------------------------------------------------
// Sensors

struct DatasetDir {
  std::filesystem::path path;
};

struct Synthetic {
  enum class Fill { Zero, SeededRandom };
  std::uint64_t size_bytes = 0;
  Fill fill = Fill::Zero;
  std::uint64_t seed = 0;
};

struct ExternalSensor {
  std::vector<std::string> argv;
  std::chrono::milliseconds timeout = kDefaultStageTimeout;
};

struct SensorSpec {
  std::variant<DatasetDir, Synthetic, ExternalSensor> source;
  // Pre-upload reduction standing in for image resizing; its cost is part of
  // sensing time.
  std::optional<std::uint64_t> truncate_bytes;
};

struct Sample {
  std::string data;
  Nanos sensing_ns = 0;
};

class Sensor {
 public:
  explicit Sensor(SensorSpec spec) : spec_(std::move(spec)) {
    if (const auto* d = std::get_if<DatasetDir>(&spec_.source)) {
      std::error_code ec;
      if (!std::filesystem::is_directory(d->path, ec))
        fail(Errc::StageFailed, "dataset directory " + d->path.string() + " does not exist");
      for (const auto& e : std::filesystem::directory_iterator(d->path))
        if (e.is_regular_file()) files_.push_back(e.path());
      std::sort(files_.begin(), files_.end(),
                [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
      if (files_.empty()) fail(Errc::StageFailed, "dataset directory " + d->path.string() + " is empty");
    } else if (const auto* s = std::get_if<Synthetic>(&spec_.source)) {
      if (s->size_bytes == 0 || s->size_bytes > kMaxSyntheticBytes)
        fail(Errc::StageFailed, "synthetic sample size must be 1 byte .. 1 GiB");
      rng_.seed(s->seed);
    } else if (std::get<ExternalSensor>(spec_.source).argv.empty()) {
      fail(Errc::StageFailed, "external sensor needs a command");
    }
  }

  Sample sample() {
    const Stopwatch sw;
    Sample out;
    if (std::holds_alternative<DatasetDir>(spec_.source)) {
      const auto& file = files_[next_file_];
      std::ifstream in(file, std::ios::binary);
      if (!in) fail(Errc::StageFailed, "cannot read " + file.string());
      std::ostringstream ss;
      ss << in.rdbuf();
      out.data = ss.str();
      if (++next_file_ == files_.size()) {
        next_file_ = 0;
        ++wraps_;
      }
    } else if (const auto* s = std::get_if<Synthetic>(&spec_.source)) {
      if (s->fill == Synthetic::Fill::Zero) {
        out.data.assign(s->size_bytes, '\0');
      } else {
        out.data.resize(s->size_bytes);
        std::size_t i = 0;
        while (i < out.data.size()) {
          std::uint64_t word = rng_();
          for (int b = 0; b < 8 && i < out.data.size(); ++b, word >>= 8)
            out.data[i++] = static_cast<char>(word & 0xFF);
        }
      }
    } else {
      const auto& ext = std::get<ExternalSensor>(spec_.source);
      ProcessResult r = run_process(ext.argv, {}, ext.timeout);
      if (r.timed_out) fail(Errc::StageFailed, "sensor command timed out");
      if (r.exit_code != 0)
        fail(Errc::StageFailed, "sensor command failed (exit=" + std::to_string(r.exit_code) + ")");
      out.data = std::move(r.out);
    }
    if (spec_.truncate_bytes && out.data.size() > *spec_.truncate_bytes)
      out.data.resize(*spec_.truncate_bytes);
    out.sensing_ns = sw.elapsed();
    return out;
  }

  // Number of times a dataset has been cycled through.
  std::uint64_t wraps() const { return wraps_; }
  const SensorSpec& spec() const { return spec_; }

 private:
  SensorSpec spec_;
  std::vector<std::filesystem::path> files_;
  std::size_t next_file_ = 0;
  std::uint64_t wraps_ = 0;
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Compute stages

struct Echo {};

struct Checksum {};  // 4-byte big-endian CRC32 of the input

struct SleepMode {
  double weight = 1.0;
  double mean_ms = 0.0;
  double std_ms = 0.0;
};

// Sleeps for a duration drawn from a mixture of normals truncated at zero;
// returns the first `result_bytes` of the input, zero-padded.
struct Sleep {
  std::vector<SleepMode> modes;
  std::uint64_t seed = 0;
  std::size_t result_bytes = 32;

  static Sleep normal(double mean_ms, double std_ms, std::uint64_t seed = 0) {
    return Sleep{{SleepMode{1.0, mean_ms, std_ms}}, seed, 32};
  }
};

struct ExternalCompute {
  std::vector<std::string> argv;
  std::chrono::milliseconds timeout = kDefaultStageTimeout;
};

using ComputeSpec = std::variant<Echo, Sleep, Checksum, ExternalCompute>;

struct Inference {
  std::string output;
  Nanos inference_ns = 0;
};

class Compute {
 public:
  explicit Compute(ComputeSpec spec) : spec_(std::move(spec)) {
    if (const auto* s = std::get_if<Sleep>(&spec_)) {
      if (s->modes.empty()) fail(Errc::StageFailed, "sleep stage needs at least one mode");
      std::vector<double> weights;
      for (const auto& m : s->modes) {
        if (!(m.mean_ms > 0) || !(m.std_ms >= 0) || !(m.weight > 0))
          fail(Errc::StageFailed, "sleep mode needs mean > 0, std >= 0, weight > 0");
        weights.push_back(m.weight);
      }
      pick_ = std::discrete_distribution<std::size_t>(weights.begin(), weights.end());
      rng_.seed(s->seed);
    } else if (const auto* e = std::get_if<ExternalCompute>(&spec_); e && e->argv.empty()) {
      fail(Errc::StageFailed, "external compute needs a command");
    }
  }

  // Next sleep duration in milliseconds (Sleep stages only). infer() consumes
  // the same sequence, so a seed fixes the durations of a run.
  double next_sleep_ms() {
    const auto& s = std::get<Sleep>(spec_);
    const SleepMode& m = s.modes.size() == 1 ? s.modes.front() : s.modes[pick_(rng_)];
    if (m.std_ms == 0) return m.mean_ms;
    std::normal_distribution<double> dist(m.mean_ms, m.std_ms);
    for (;;) {
      const double v = dist(rng_);
      if (v >= 0) return v;
    }
  }

  Inference infer(std::string_view input) {
    Inference out;
    if (std::holds_alternative<Echo>(spec_)) {
      const Stopwatch sw;
      out.output.assign(input);
      out.inference_ns = sw.elapsed();
    } else if (std::holds_alternative<Checksum>(spec_)) {
      const Stopwatch sw;
      const std::uint32_t crc = crc32_of(input);
      out.output = {static_cast<char>(crc >> 24), static_cast<char>(crc >> 16 & 0xFF),
                    static_cast<char>(crc >> 8 & 0xFF), static_cast<char>(crc & 0xFF)};
      out.inference_ns = sw.elapsed();
    } else if (const auto* s = std::get_if<Sleep>(&spec_)) {
      const double ms = next_sleep_ms();
      const Stopwatch sw;
      std::this_thread::sleep_until(std::chrono::steady_clock::now() +
                                    std::chrono::nanoseconds(std::llround(ms * 1e6)));
      out.output.assign(input.substr(0, std::min(input.size(), s->result_bytes)));
      out.output.resize(s->result_bytes, '\0');
      out.inference_ns = sw.elapsed();
    } else {
      const auto& ext = std::get<ExternalCompute>(spec_);
      const Stopwatch sw;
      ProcessResult r = run_process(ext.argv, input, ext.timeout);
      out.inference_ns = sw.elapsed();
      if (r.timed_out) fail(Errc::StageFailed, "compute command timed out");
      if (r.exit_code != 0)
        fail(Errc::StageFailed, "compute command failed (exit=" + std::to_string(r.exit_code) + ")");
      out.output = std::move(r.out);
    }
    return out;
  }

  const ComputeSpec& spec() const { return spec_; }

 private:
  ComputeSpec spec_;
  std::mt19937_64 rng_;
  std::discrete_distribution<std::size_t> pick_;
};

}  // namespace peerprof
