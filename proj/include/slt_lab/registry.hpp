#pragma once

// File-based run registry.
//
//   <root>/runs/<experiment_id>/<run_id>/
//       config.json        run record + task configuration
//       metrics.csv        step,train_loss,val_loss,train_acc,val_acc
//       llc.csv            step,lambda_hat,std_dev,anchor_loss,free_energy
//       loss_curve.csv     step,loss           (only when recorded)
//       events.json        JSON array
//       summary.json       task result
//       checkpoints/ckpt_<step>.bin
//
// Checkpoints are one text header line followed by raw little-endian
// 64-bit floats. Every JSON document carries "format_version".

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <json.hpp>

#include "slt_lab/error.hpp"
#include "slt_lab/models.hpp"
#include "slt_lab/training.hpp"

namespace slt {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

enum class RunStatus { Running, Done, Failed };

inline std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Running: return "Running";
    case RunStatus::Done: return "Done";
    case RunStatus::Failed: return "Failed";
  }
  return "Unknown";
}

inline RunStatus run_status_from_string(std::string_view s) {
  if (s == "Running") return RunStatus::Running;
  if (s == "Done") return RunStatus::Done;
  if (s == "Failed") return RunStatus::Failed;
  throw Error(ErrorCode::ParseFailure, "unknown run status '" + std::string(s) + "'");
}

struct RunRecord {
  std::string run_id;
  std::string experiment_id;
  std::uint64_t config_hash = 0;
  std::string created_at;  // ISO-8601 UTC
  RunStatus status = RunStatus::Running;

  bool operator==(const RunRecord&) const = default;
};

/// 17 significant digits: enough for an exact double round trip.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseFailure, where + ": cannot parse number '" + s + "'");
  }
}

/// FNV-1a over the canonical (key-sorted, compact) JSON rendering.
inline std::uint64_t config_hash(const json& config) {
  const std::string canonical = config.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// 26-character Crockford base32 ULID: 48-bit millisecond time + 80 random
/// bits, monotonic within the process.
inline std::string new_ulid() {
  static std::mutex mu;
  static std::uint64_t last_ms = 0;
  static std::array<std::uint8_t, 10> last_rand{};
  static std::random_device device;

  std::lock_guard lock(mu);
  auto ms = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch()).count());
  std::array<std::uint8_t, 10> rnd{};
  if (ms <= last_ms) {
    ms = last_ms;
    rnd = last_rand;
    for (int i = 9; i >= 0; --i) {
      if (++rnd[static_cast<std::size_t>(i)] != 0) break;
    }
  } else {
    for (auto& b : rnd) b = static_cast<std::uint8_t>(device() & 0xFF);
  }
  last_ms = ms;
  last_rand = rnd;

  std::array<std::uint8_t, 16> bytes{};
  for (int i = 0; i < 6; ++i) bytes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(ms >> (8 * (5 - i)));
  std::copy(rnd.begin(), rnd.end(), bytes.begin() + 6);

  static constexpr char kAlphabet[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
  std::string out(26, '0');
  // 128 bits -> 26 symbols of 5 bits, most significant first (top 2 bits padded).
  for (int k = 0; k < 26; ++k) {
    const int bit = 128 - 5 * (26 - k);  // position of the symbol's lowest bit from the top, may be negative
    unsigned value = 0;
    for (int b = 0; b < 5; ++b) {
      const int pos = bit + b;  // bit index counted from the most significant bit
      if (pos < 0) continue;
      const std::uint8_t byte = bytes[static_cast<std::size_t>(pos / 8)];
      const unsigned v = (byte >> (7 - pos % 8)) & 1U;
      value = (value << 1) | v;
    }
    out[static_cast<std::size_t>(k)] = kAlphabet[value & 31U];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Atomic file helpers

inline void write_file_atomic(const fs::path& path, std::string_view contents) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "rename to " + path.string() + " failed: " + ec.message());
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Missing, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseFailure, path.string() + ": " + e.what());
  }
}

/// Appends whole lines with one O_APPEND write so readers never see half a
/// row. Whoever creates the file writes the header.
inline void append_lines(const fs::path& path, std::string_view header, const std::vector<std::string>& lines) {
  int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_EXCL, 0644);
  const bool fresh = fd >= 0;
  if (!fresh && errno == EEXIST) fd = ::open(path.c_str(), O_WRONLY | O_APPEND);
  if (fd < 0) throw Error(ErrorCode::IoFailure, "cannot append to " + path.string() + ": " + std::strerror(errno));
  std::string block;
  if (fresh) {
    block.append(header);
    block.push_back('\n');
  }
  for (const auto& l : lines) {
    block.append(l);
    block.push_back('\n');
  }
  std::size_t done = 0;
  while (done < block.size()) {
    const ssize_t n = ::write(fd, block.data() + done, block.size() - done);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      ::close(fd);
      throw Error(ErrorCode::IoFailure, "append failed for " + path.string());
    }
    done += static_cast<std::size_t>(n);
  }
  ::close(fd);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline void save_checkpoint_file(const fs::path& path, std::size_t step, const ModelSpec& spec,
                                 const ParamVector& params) {
  const auto layout = make_layout(spec);
  if (params.size() != layout->total()) throw Error(ErrorCode::LayoutMismatch, "parameter count does not match spec");
  if (params.layout && params.layout->digest() != layout->digest()) {
    throw Error(ErrorCode::LayoutMismatch, "parameter layout does not match spec");
  }
  std::string out = "slt-ckpt format_version=" + std::to_string(kFormatVersion) +
                    " family=" + std::string(to_string(spec.family())) + " step=" + std::to_string(step) +
                    " param_count=" + std::to_string(params.size()) + " encoding=f64 endianness=little" +
                    " layout_digest=" + layout->digest() + "\n";
  const std::size_t header = out.size();
  out.resize(header + 8 * params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(params.values[i]);
    for (int b = 0; b < 8; ++b) out[header + 8 * i + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  write_file_atomic(path, out);
}

struct CheckpointHeader {
  std::string family;
  std::size_t step = 0;
  std::size_t param_count = 0;
  std::string layout_digest;
};

inline ParamVector load_checkpoint_file(const fs::path& path, const ModelSpec& spec,
                                        CheckpointHeader* header_out = nullptr) {
  const std::string bytes = read_file(path);
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos) throw Error(ErrorCode::LayoutMismatch, path.string() + ": missing header line");
  std::istringstream header(bytes.substr(0, newline));
  std::string magic;
  header >> magic;
  if (magic != "slt-ckpt") throw Error(ErrorCode::LayoutMismatch, path.string() + ": not a checkpoint file");
  CheckpointHeader h;
  std::string token;
  std::string encoding, endianness;
  while (header >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    if (key == "family") h.family = value;
    else if (key == "step") h.step = std::stoull(value);
    else if (key == "param_count") h.param_count = std::stoull(value);
    else if (key == "layout_digest") h.layout_digest = value;
    else if (key == "encoding") encoding = value;
    else if (key == "endianness") endianness = value;
  }
  const auto layout = make_layout(spec);
  if (encoding != "f64" || endianness != "little") throw Error(ErrorCode::LayoutMismatch, "unsupported value encoding");
  if (h.family != to_string(spec.family()) || h.layout_digest != layout->digest() || h.param_count != layout->total()) {
    throw Error(ErrorCode::LayoutMismatch, path.string() + ": header does not match the model layout");
  }
  const std::size_t payload = bytes.size() - newline - 1;
  if (payload != 8 * h.param_count) {
    throw Error(ErrorCode::LayoutMismatch, path.string() + ": payload is " + std::to_string(payload) + " bytes, expected " +
                                               std::to_string(8 * h.param_count));
  }
  ParamVector params{std::vector<double>(h.param_count), layout};
  const char* p = bytes.data() + newline + 1;
  for (std::size_t i = 0; i < h.param_count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[8 * i + static_cast<std::size_t>(b)])) << (8 * b);
    params.values[i] = std::bit_cast<double>(bits);
  }
  if (header_out) *header_out = h;
  return params;
}

// ---------------------------------------------------------------------------
// Rows

struct LlcRow {
  std::size_t step = 0;
  double lambda_hat = 0.0;
  double std_dev = 0.0;
  double anchor_loss = 0.0;
  double free_energy = 0.0;

  bool operator==(const LlcRow&) const = default;
};

inline constexpr std::string_view kMetricsHeader = "step,train_loss,val_loss,train_acc,val_acc";
inline constexpr std::string_view kLlcHeader = "step,lambda_hat,std_dev,anchor_loss,free_energy";
inline constexpr std::string_view kLossCurveHeader = "step,loss";

inline std::string metrics_line(const MetricRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  return std::to_string(r.step) + "," + format_double(r.train_loss) + "," + opt(r.val_loss) + "," + opt(r.train_acc) +
         "," + opt(r.val_acc);
}

inline std::string llc_line(const LlcRow& r) {
  return std::to_string(r.step) + "," + format_double(r.lambda_hat) + "," + format_double(r.std_dev) + "," +
         format_double(r.anchor_loss) + "," + format_double(r.free_energy);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  out.push_back(cell);
  return out;
}

/// Reads a CSV with a fixed header; returns data rows as cells.
inline std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::string_view header, std::size_t columns) {
  std::vector<std::vector<std::string>> rows;
  if (!fs::exists(path)) return rows;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != header) throw Error(ErrorCode::ParseFailure, path.string() + ":1: unexpected header");
      continue;
    }
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != columns) {
      throw Error(ErrorCode::ParseFailure, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                               std::to_string(columns) + " columns");
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Registry

struct RunHandle {
  RunRecord record;
  fs::path dir;
};

struct LoadedRun {
  RunRecord record;
  json config;
  TrainingTrace trace;  // records + loss curve; checkpoints listed by step with empty params
  std::vector<LlcRow> llc;
  json events = json::array();
  std::optional<json> summary;
  std::vector<std::size_t> checkpoint_steps;
};

class Registry {
 public:
  explicit Registry(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const noexcept { return root_; }
  fs::path experiment_dir(std::string_view experiment_id) const { return root_ / "runs" / std::string(experiment_id); }

  /// Creates runs/<exp>/<run_id>/config.json with status Running.
  RunHandle create_run(std::string_view experiment_id, const json& config) const {
    RunHandle h;
    h.record.experiment_id = std::string(experiment_id);
    h.record.config_hash = config_hash(config);
    h.record.created_at = utc_timestamp();
    h.record.status = RunStatus::Running;
    do {
      h.record.run_id = new_ulid();
      h.dir = experiment_dir(experiment_id) / h.record.run_id;
    } while (fs::exists(h.dir));
    std::error_code ec;
    fs::create_directories(h.dir / "checkpoints", ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + h.dir.string() + ": " + ec.message());
    write_config(h, config);
    return h;
  }

  void set_status(RunHandle& h, RunStatus status) const {
    json doc = read_json(h.dir / "config.json");
    h.record.status = status;
    doc["run"]["status"] = std::string(to_string(status));
    write_file_atomic(h.dir / "config.json", doc.dump(2));
  }

  fs::path save_checkpoint(const RunHandle& h, std::size_t step, const ModelSpec& spec, const ParamVector& params) const {
    if (h.record.status != RunStatus::Running) throw Error(ErrorCode::InvalidConfig, "run is not Running");
    const fs::path path = checkpoint_path(h.dir, step);
    save_checkpoint_file(path, step, spec, params);
    return path;
  }

  static fs::path checkpoint_path(const fs::path& run_dir, std::size_t step) {
    return run_dir / "checkpoints" / ("ckpt_" + std::to_string(step) + ".bin");
  }

  void append_metrics(const RunHandle& h, const std::vector<MetricRecord>& rows) const {
    std::vector<std::string> lines;
    for (const auto& r : rows) lines.push_back(metrics_line(r));
    append_lines(h.dir / "metrics.csv", kMetricsHeader, lines);
  }

  void append_llc(const RunHandle& h, const std::vector<LlcRow>& rows) const {
    std::vector<std::string> lines;
    for (const auto& r : rows) lines.push_back(llc_line(r));
    append_lines(h.dir / "llc.csv", kLlcHeader, lines);
  }

  void append_loss_curve(const RunHandle& h, const std::vector<double>& losses, std::size_t first_step = 1) const {
    std::vector<std::string> lines;
    lines.reserve(losses.size());
    for (std::size_t k = 0; k < losses.size(); ++k) lines.push_back(std::to_string(first_step + k) + "," + format_double(losses[k]));
    append_lines(h.dir / "loss_curve.csv", kLossCurveHeader, lines);
  }

  void append_events(const RunHandle& h, const std::vector<json>& events) const {
    const fs::path path = h.dir / "events.json";
    json doc = fs::exists(path) ? read_json(path) : json{{"format_version", kFormatVersion}, {"events", json::array()}};
    for (const auto& e : events) doc["events"].push_back(e);
    write_file_atomic(path, doc.dump(2));
  }

  void write_summary(const RunHandle& h, json summary) const {
    summary["format_version"] = kFormatVersion;
    write_file_atomic(h.dir / "summary.json", summary.dump(2));
  }

  /// Sorted run ids of one experiment (or of all experiments when empty).
  std::vector<std::string> list_runs(std::string_view experiment_id = {}) const {
    std::vector<std::string> ids;
    const fs::path runs = root_ / "runs";
    if (!fs::exists(runs)) return ids;
    for (const auto& exp : fs::directory_iterator(runs)) {
      if (!exp.is_directory()) continue;
      if (!experiment_id.empty() && exp.path().filename() != experiment_id) continue;
      for (const auto& run : fs::directory_iterator(exp.path())) {
        if (run.is_directory() && fs::exists(run.path() / "config.json")) ids.push_back(run.path().filename().string());
      }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  /// Locates a run directory by id across experiments.
  fs::path find_run(std::string_view run_id) const {
    const fs::path runs = root_ / "runs";
    if (fs::exists(runs)) {
      for (const auto& exp : fs::directory_iterator(runs)) {
        const fs::path candidate = exp.path() / std::string(run_id);
        if (fs::exists(candidate / "config.json")) return candidate;
      }
    }
    throw Error(ErrorCode::Missing, "no run '" + std::string(run_id) + "' under " + root_.string());
  }

  /// Completed run for a task key, if any (resumability).
  std::optional<std::string> find_done(std::string_view experiment_id, std::string_view task_key) const {
    for (const auto& id : list_runs(experiment_id)) {
      const json doc = read_json(experiment_dir(experiment_id) / id / "config.json");
      if (doc.value("task_key", std::string()) == task_key && doc["run"].value("status", std::string()) == "Done" &&
          fs::exists(experiment_dir(experiment_id) / id / "summary.json")) {
        return id;
      }
    }
    return std::nullopt;
  }

  LoadedRun load_run(std::string_view run_id) const { return load_run_dir(find_run(run_id)); }

  static LoadedRun load_run_dir(const fs::path& dir) {
    if (!fs::exists(dir / "config.json")) throw Error(ErrorCode::Missing, "no run at " + dir.string());
    LoadedRun out;
    const json doc = read_json(dir / "config.json");
    try {
      const auto& run = doc.at("run");
      out.record.run_id = run.at("run_id").get<std::string>();
      out.record.experiment_id = run.at("experiment_id").get<std::string>();
      out.record.config_hash = std::stoull(run.at("config_hash").get<std::string>(), nullptr, 16);
      out.record.created_at = run.at("created_at").get<std::string>();
      out.record.status = run_status_from_string(run.at("status").get<std::string>());
      out.config = doc.at("config");
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseFailure, (dir / "config.json").string() + ": " + e.what());
    }

    const fs::path metrics = dir / "metrics.csv";
    std::size_t row_no = 1;
    for (const auto& cells : read_csv(metrics, kMetricsHeader, 5)) {
      ++row_no;
      const std::string where = metrics.string() + ":" + std::to_string(row_no);
      MetricRecord r;
      r.step = static_cast<std::size_t>(parse_double(cells[0], where));
      r.train_loss = parse_double(cells[1], where);
      if (!cells[2].empty()) r.val_loss = parse_double(cells[2], where);
      if (!cells[3].empty()) r.train_acc = parse_double(cells[3], where);
      if (!cells[4].empty()) r.val_acc = parse_double(cells[4], where);
      out.trace.records.push_back(r);
    }

    const fs::path curve = dir / "loss_curve.csv";
    row_no = 1;
    for (const auto& cells : read_csv(curve, kLossCurveHeader, 2)) {
      ++row_no;
      out.trace.loss_curve.push_back(parse_double(cells[1], curve.string() + ":" + std::to_string(row_no)));
    }

    const fs::path llc = dir / "llc.csv";
    row_no = 1;
    for (const auto& cells : read_csv(llc, kLlcHeader, 5)) {
      ++row_no;
      const std::string where = llc.string() + ":" + std::to_string(row_no);
      LlcRow r;
      r.step = static_cast<std::size_t>(parse_double(cells[0], where));
      r.lambda_hat = parse_double(cells[1], where);
      r.std_dev = parse_double(cells[2], where);
      r.anchor_loss = parse_double(cells[3], where);
      r.free_energy = parse_double(cells[4], where);
      out.llc.push_back(r);
    }

    if (fs::exists(dir / "events.json")) out.events = read_json(dir / "events.json").value("events", json::array());
    if (fs::exists(dir / "summary.json")) out.summary = read_json(dir / "summary.json");

    if (fs::exists(dir / "checkpoints")) {
      for (const auto& f : fs::directory_iterator(dir / "checkpoints")) {
        const std::string name = f.path().filename().string();
        if (name.starts_with("ckpt_") && name.ends_with(".bin")) {
          out.checkpoint_steps.push_back(std::stoull(name.substr(5, name.size() - 9)));
        }
      }
      std::sort(out.checkpoint_steps.begin(), out.checkpoint_steps.end());
    }
    return out;
  }

 private:
  static void write_config(const RunHandle& h, const json& config) {
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(h.record.config_hash));
    json doc;
    doc["format_version"] = kFormatVersion;
    doc["run"] = {{"run_id", h.record.run_id},
                  {"experiment_id", h.record.experiment_id},
                  {"config_hash", hash},
                  {"created_at", h.record.created_at},
                  {"status", std::string(to_string(h.record.status))}};
    doc["config"] = config;
    if (config.contains("task_key")) doc["task_key"] = config["task_key"];
    write_file_atomic(h.dir / "config.json", doc.dump(2));
  }

  fs::path root_;
};

}  // namespace slt
