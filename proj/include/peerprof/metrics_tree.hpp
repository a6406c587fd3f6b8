#pragma once

// Tree-structured metrics log. Nodes are timed or measured events; a subtree
// can be serialized into a message, extended by the receiving device and
// grafted back into the sender's tree.

#include <cmath>
#include <cstdint>
#include <functional>
#include <list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "peerprof/clock.hpp"
#include "peerprof/error.hpp"
#include "peerprof/stats.hpp"

namespace peerprof {

inline constexpr std::size_t kMaxTreeDepth = 64;
inline constexpr std::size_t kMaxChildren = 100'000;
inline constexpr std::size_t kMaxNameBytes = 256;
inline constexpr std::size_t kMaxCustomLabelBytes = 64;
inline constexpr int kMetricsFormatVersion = 1;

namespace detail {

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // overlong forms, surrogates, out of range
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
      return false;
    i += len;
  }
  return true;
}

}  // namespace detail

class MetricKind {
 public:
  enum class Tag { Latency, Size, Throughput, Count, Custom };

  static MetricKind latency() { return MetricKind(Tag::Latency); }
  static MetricKind size() { return MetricKind(Tag::Size); }
  static MetricKind throughput() { return MetricKind(Tag::Throughput); }
  static MetricKind count() { return MetricKind(Tag::Count); }
  static MetricKind custom(std::string label) {
    if (label.empty() || label.size() > kMaxCustomLabelBytes || !detail::valid_utf8(label))
      fail(Errc::InvalidName, "custom metric label must be 1..64 bytes of UTF-8");
    MetricKind k(Tag::Custom);
    k.label_ = std::move(label);
    return k;
  }

  Tag tag() const noexcept { return tag_; }
  const std::string& label() const noexcept { return label_; }

  std::string to_string() const {
    switch (tag_) {
      case Tag::Latency: return "latency";
      case Tag::Size: return "size";
      case Tag::Throughput: return "throughput";
      case Tag::Count: return "count";
      case Tag::Custom: return "custom:" + label_;
    }
    return {};
  }

  static MetricKind parse(std::string_view s) {
    if (s == "latency") return latency();
    if (s == "size") return size();
    if (s == "throughput") return throughput();
    if (s == "count") return count();
    if (s.starts_with("custom:")) return custom(std::string(s.substr(7)));
    fail(Errc::Malformed, "unknown metric kind '" + std::string(s) + "'");
  }

  bool operator==(const MetricKind&) const = default;

 private:
  explicit MetricKind(Tag t) : tag_(t) {}
  Tag tag_;
  std::string label_;
};

struct MetricNode {
  std::string name;
  MetricKind kind = MetricKind::custom("group");
  std::optional<Nanos> start_ts;
  std::optional<Nanos> stop_ts;
  std::optional<double> value;
  std::optional<std::string> unit;
  std::optional<std::string> warning;
  // std::list keeps handles to children valid while siblings are added.
  std::list<MetricNode> children;

  bool operator==(const MetricNode&) const = default;

  MetricNode* find(std::string_view child_name) {
    for (auto& c : children)
      if (c.name == child_name) return &c;
    return nullptr;
  }
  const MetricNode* find(std::string_view child_name) const {
    for (const auto& c : children)
      if (c.name == child_name) return &c;
    return nullptr;
  }
  MetricNode& at(std::string_view child_name) {
    if (auto* c = find(child_name)) return *c;
    fail(Errc::NoMatches, "no child '" + std::string(child_name) + "' under '" + name + "'");
  }
  const MetricNode& at(std::string_view child_name) const {
    if (const auto* c = find(child_name)) return *c;
    fail(Errc::NoMatches, "no child '" + std::string(child_name) + "' under '" + name + "'");
  }

  std::size_t depth() const {
    std::size_t d = 0;
    for (const auto& c : children) d = std::max(d, c.depth());
    return d + 1;
  }
};

// Which clocks produced a node's start and stop timestamps.
enum class ClockDomain { Same, Cross };

inline constexpr std::string_view kCrossClockWarning = "cross-clock-raw";

namespace detail {

inline void check_name(std::string_view name) {
  if (name.empty()) fail(Errc::EmptyName, "metric node name is empty");
  if (name.size() > kMaxNameBytes) fail(Errc::InvalidName, "metric node name longer than 256 bytes");
  if (name.find('/') != std::string_view::npos)
    fail(Errc::InvalidName, "metric node name '" + std::string(name) + "' contains '/'");
  if (!valid_utf8(name)) fail(Errc::InvalidName, "metric node name is not UTF-8");
}

inline void check_can_add(const MetricNode& parent, std::string_view name) {
  check_name(name);
  if (parent.find(name) != nullptr)
    fail(Errc::DuplicateChild, "'" + std::string(name) + "' already exists under '" + parent.name + "'");
  if (parent.children.size() >= kMaxChildren)
    fail(Errc::TooManyChildren, "'" + parent.name + "' already has 100000 children");
}

}  // namespace detail

inline MetricNode new_root(std::string name) {
  detail::check_name(name);
  MetricNode n;
  n.name = std::move(name);
  return n;
}

inline MetricNode& start_timing(MetricNode& parent, std::string child_name, MetricKind kind,
                                Nanos now) {
  detail::check_can_add(parent, child_name);
  MetricNode child;
  child.name = std::move(child_name);
  child.kind = std::move(kind);
  child.start_ts = now;
  return parent.children.emplace_back(std::move(child));
}

// Closes a timed node and returns stop - start. With ClockDomain::Cross the
// difference mixes two clocks; a negative result is kept (flagged) so that it
// can be corrected later instead of being clamped.
inline Nanos stop_timing(MetricNode& node, Nanos now, ClockDomain domain = ClockDomain::Same) {
  if (!node.start_ts) fail(Errc::NotStarted, "'" + node.name + "' was never started");
  if (node.stop_ts) fail(Errc::AlreadyStopped, "'" + node.name + "' already stopped");
  const Nanos elapsed = now - *node.start_ts;
  if (elapsed < 0 && domain == ClockDomain::Same)
    fail(Errc::StopBeforeStart, "'" + node.name + "' stopped before it started");
  node.stop_ts = now;
  node.value = static_cast<double>(elapsed);
  node.unit = "ns";
  if (elapsed < 0) node.warning = std::string(kCrossClockWarning);
  return elapsed;
}

inline MetricNode& record_value(MetricNode& parent, std::string child_name, MetricKind kind,
                                double value, std::string unit) {
  if (!std::isfinite(value)) fail(Errc::NonFinite, "'" + child_name + "' value is not finite");
  using Tag = MetricKind::Tag;
  // Latency leaves may hold clock-corrected values, which can go negative.
  if (value < 0 &&
      (kind.tag() == Tag::Size || kind.tag() == Tag::Throughput || kind.tag() == Tag::Count))
    fail(Errc::NegativeQuantity, "'" + child_name + "' is a negative " + kind.to_string());
  detail::check_can_add(parent, child_name);
  MetricNode child;
  child.name = std::move(child_name);
  child.kind = std::move(kind);
  child.value = value;
  child.unit = std::move(unit);
  return parent.children.emplace_back(std::move(child));
}

// Grafts `remote` verbatim as a new child of `local_parent`.
inline MetricNode& merge_remote(MetricNode& local_parent, MetricNode remote) {
  detail::check_can_add(local_parent, remote.name);
  return local_parent.children.emplace_back(std::move(remote));
}

// ---------------------------------------------------------------------------
// Canonical encoding
//
//   {"version":1,"root":NODE}
//   NODE = {"name":..,"kind":..,"start_ts":..,"stop_ts":..,"value":..,
//           "unit":..,"warning":..,"children":[NODE,..]}
//
// Keys appear in exactly that order, absent fields (and empty children) are
// omitted, timestamps are integers, reals use the shortest round-trip form.

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson node_to_json(const MetricNode& n, std::size_t depth) {
  if (depth > kMaxTreeDepth) fail(Errc::DepthExceeded, "metric tree deeper than 64");
  ojson j = ojson::object();
  j["name"] = n.name;
  j["kind"] = n.kind.to_string();
  if (n.start_ts) j["start_ts"] = *n.start_ts;
  if (n.stop_ts) j["stop_ts"] = *n.stop_ts;
  if (n.value) {
    if (!std::isfinite(*n.value)) fail(Errc::NonFinite, "'" + n.name + "' value is not finite");
    j["value"] = *n.value;
  }
  if (n.unit) j["unit"] = *n.unit;
  if (n.warning) j["warning"] = *n.warning;
  if (!n.children.empty()) {
    ojson arr = ojson::array();
    for (const auto& c : n.children) arr.push_back(node_to_json(c, depth + 1));
    j["children"] = std::move(arr);
  }
  return j;
}

inline const std::string& json_string(const ojson& j, const char* field) {
  if (!j.is_string()) fail(Errc::Malformed, std::string("field '") + field + "' is not a string");
  return j.get_ref<const std::string&>();
}

inline Nanos json_int(const ojson& j, const char* field) {
  if (j.is_number_integer() && !j.is_number_unsigned()) return j.get<std::int64_t>();
  if (j.is_number_unsigned()) {
    const auto u = j.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(INT64_MAX))
      fail(Errc::Malformed, std::string("field '") + field + "' out of range");
    return static_cast<Nanos>(u);
  }
  fail(Errc::Malformed, std::string("field '") + field + "' is not an integer");
}

inline MetricNode node_from_json(const ojson& j, std::size_t depth) {
  if (depth > kMaxTreeDepth) fail(Errc::DepthExceeded, "metric tree deeper than 64");
  if (!j.is_object()) fail(Errc::Malformed, "metric node is not an object");
  MetricNode n;
  bool has_name = false, has_kind = false;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const ojson& v = it.value();
    if (key == "name") {
      n.name = json_string(v, "name");
      has_name = true;
    } else if (key == "kind") {
      n.kind = MetricKind::parse(json_string(v, "kind"));
      has_kind = true;
    } else if (key == "start_ts") {
      n.start_ts = json_int(v, "start_ts");
    } else if (key == "stop_ts") {
      n.stop_ts = json_int(v, "stop_ts");
    } else if (key == "value") {
      if (!v.is_number()) fail(Errc::Malformed, "field 'value' is not a number");
      n.value = v.get<double>();
    } else if (key == "unit") {
      n.unit = json_string(v, "unit");
    } else if (key == "warning") {
      n.warning = json_string(v, "warning");
    } else if (key == "children") {
      if (!v.is_array()) fail(Errc::Malformed, "field 'children' is not an array");
      if (v.size() > kMaxChildren) fail(Errc::Malformed, "more than 100000 children");
      for (const auto& c : v) {
        MetricNode child = node_from_json(c, depth + 1);
        if (n.find(child.name) != nullptr)
          fail(Errc::Malformed, "duplicate sibling name '" + child.name + "'");
        n.children.push_back(std::move(child));
      }
    } else {
      fail(Errc::Malformed, "unknown field '" + key + "'");
    }
  }
  if (!has_name || !has_kind) fail(Errc::Malformed, "metric node lacks name or kind");
  try {
    check_name(n.name);
  } catch (const Error& e) {
    fail(Errc::Malformed, e.what());
  }
  return n;
}

}  // namespace detail

inline std::string serialize(const MetricNode& root) {
  detail::ojson doc = detail::ojson::object();
  doc["version"] = kMetricsFormatVersion;
  doc["root"] = detail::node_to_json(root, 1);
  try {
    return doc.dump();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidName, std::string("unencodable metric tree: ") + e.what());
  }
}

inline MetricNode deserialize(std::string_view bytes) {
  // Object/array nesting is two levels per tree level, plus the envelope.
  constexpr int kMaxJsonDepth = 2 * static_cast<int>(kMaxTreeDepth) + 2;
  detail::ojson doc;
  try {
    doc = detail::ojson::parse(
        bytes.begin(), bytes.end(),
        [](int depth, nlohmann::json::parse_event_t, detail::ojson&) {
          if (depth > kMaxJsonDepth) fail(Errc::DepthExceeded, "metric tree deeper than 64");
          return true;
        });
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::Malformed, e.what());
  }
  if (!doc.is_object()) fail(Errc::Malformed, "metrics document is not an object");
  const auto version = doc.find("version");
  if (version == doc.end() || !version->is_number_integer())
    fail(Errc::Malformed, "metrics document lacks a version");
  if (version->get<std::int64_t>() != kMetricsFormatVersion)
    fail(Errc::UnknownVersion, "metrics format version " + version->dump());
  const auto root = doc.find("root");
  if (root == doc.end() || doc.size() != 2) fail(Errc::Malformed, "metrics document lacks a root");
  return detail::node_from_json(*root, 1);
}

// ---------------------------------------------------------------------------
// Queries

namespace detail {

inline bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (p < pattern.size() && pattern[p] == text[t]) {
      ++p;
      ++t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

inline std::vector<std::string_view> split_path(std::string_view path) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    const auto next = path.find('/', pos);
    const auto seg = path.substr(pos, next == std::string_view::npos ? std::string_view::npos
                                                                        : next - pos);
    if (!seg.empty()) out.push_back(seg);
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

inline void collect(const MetricNode& node, const std::vector<std::string_view>& segs,
                    std::size_t i, std::vector<const MetricNode*>& out) {
  for (const auto& c : node.children) {
    if (!glob_match(segs[i], c.name)) continue;
    if (i + 1 == segs.size())
      out.push_back(&c);
    else
      collect(c, segs, i + 1, out);
  }
}

}  // namespace detail

// Nodes below `root` matching a slash-separated path; each segment may use
// '*' wildcards ("iteration-*/sensing"). Results are in tree order.
inline std::vector<const MetricNode*> select(const MetricNode& root, std::string_view path) {
  const auto segs = detail::split_path(path);
  std::vector<const MetricNode*> out;
  if (!segs.empty()) detail::collect(root, segs, 0, out);
  return out;
}

inline SampleStats summarize(const MetricNode& root, std::string_view path) {
  std::vector<double> values;
  for (const auto* n : select(root, path))
    if (n->value) values.push_back(*n->value);
  if (values.empty()) fail(Errc::NoMatches, "no measured node matches '" + std::string(path) + "'");
  return sample_stats(values);
}

}  // namespace peerprof
