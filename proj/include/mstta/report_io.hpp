#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mstta/data_io.hpp"
#include "mstta/pipeline.hpp"

namespace mstta {

enum class ReportFormat { json, csv };

inline ReportFormat report_format_from_string(const std::string& s) {
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  throw OutOfRangeError("unknown report format: " + s);
}

namespace detail {

inline std::string fmt_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// Reports are written whole or not at all: contents land in a temp file that
/// is renamed over the target only after a successful write.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  write_file(tmp, content);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move report into place at " + path.string());
  }
}

}  // namespace detail

inline nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["mode"] = to_string(cfg.mode);
  j["lambda"] = cfg.lambda;
  j["alpha"] = cfg.ms.alpha;
  j["k"] = cfg.ms.k;
  j["neighbor_source"] = to_string(cfg.ms.neighbor_source);
  if (cfg.ms.bank_capacity == kUnboundedCapacity) {
    j["bank_capacity"] = nullptr;
  } else {
    j["bank_capacity"] = cfg.ms.bank_capacity;
  }
  j["q"] = cfg.cache_q;
  if (cfg.entropy_threshold) {
    j["entropy_threshold"] = *cfg.entropy_threshold;
  } else {
    j["entropy_threshold"] = nullptr;
  }
  j["softmax_scale"] = cfg.softmax_scale;
  j["seed"] = cfg.seed;
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  cfg.mode = run_mode_from_string(j.at("mode").get<std::string>());
  cfg.lambda = j.at("lambda").get<double>();
  cfg.ms.alpha = j.at("alpha").get<double>();
  cfg.ms.k = j.at("k").get<std::size_t>();
  cfg.ms.neighbor_source = neighbor_source_from_string(j.at("neighbor_source").get<std::string>());
  cfg.ms.bank_capacity =
      j.at("bank_capacity").is_null() ? kUnboundedCapacity : j.at("bank_capacity").get<std::size_t>();
  cfg.cache_q = j.at("q").get<std::size_t>();
  if (!j.at("entropy_threshold").is_null()) {
    cfg.entropy_threshold = j.at("entropy_threshold").get<double>();
  }
  cfg.softmax_scale = j.at("softmax_scale").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

inline nlohmann::json report_to_json(const Report& r) {
  nlohmann::json j;
  j["n_samples"] = r.n_samples;
  j["top1_accuracy"] = r.top1_accuracy;
  j["per_class_accuracy"] = r.per_class_accuracy;
  j["per_class_counts"] = r.per_class_counts;
  j["compactness_before"] = r.compactness_before;
  j["compactness_after"] = r.compactness_after;
  j["norm_warning"] = r.norm_warning;
  j["config"] = config_to_json(r.config_echo);
  j["wall_time_ms"] = r.wall_time_ms;
  return j;
}

inline Report report_from_json(const nlohmann::json& j) {
  Report r;
  r.n_samples = j.at("n_samples").get<std::size_t>();
  r.top1_accuracy = j.at("top1_accuracy").get<double>();
  r.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
  r.per_class_counts = j.at("per_class_counts").get<std::vector<std::size_t>>();
  r.compactness_before = j.at("compactness_before").get<double>();
  r.compactness_after = j.at("compactness_after").get<double>();
  r.norm_warning = j.at("norm_warning").get<bool>();
  r.config_echo = config_from_json(j.at("config"));
  r.wall_time_ms = j.at("wall_time_ms").get<std::int64_t>();
  return r;
}

namespace detail {

inline std::string report_csv_columns() {
  return "mode,alpha,k,q,lambda,softmax_scale,neighbor_source,seed,n_samples,"
         "top1_accuracy,compactness_before,compactness_after,norm_warning,wall_time_ms";
}

inline std::string report_csv_row(const Report& r) {
  const RunConfig& c = r.config_echo;
  std::string row = to_string(c.mode);
  row += "," + fmt_fixed6(c.ms.alpha);
  row += "," + std::to_string(c.ms.k);
  row += "," + std::to_string(c.cache_q);
  row += "," + fmt_fixed6(c.lambda);
  row += "," + fmt_fixed6(c.softmax_scale);
  row += "," + to_string(c.ms.neighbor_source);
  row += "," + std::to_string(c.seed);
  row += "," + std::to_string(r.n_samples);
  row += "," + fmt_fixed6(r.top1_accuracy);
  row += "," + fmt_fixed6(r.compactness_before);
  row += "," + fmt_fixed6(r.compactness_after);
  row += std::string(",") + (r.norm_warning ? "1" : "0");
  row += "," + std::to_string(r.wall_time_ms);
  return row;
}

}  // namespace detail

inline std::string report_to_csv(const Report& r) {
  return detail::report_csv_columns() + "\n" + detail::report_csv_row(r) + "\n";
}

inline void write_report(const Report& r, const std::filesystem::path& path, ReportFormat format) {
  const std::string content =
      format == ReportFormat::json ? report_to_json(r).dump(2) + "\n" : report_to_csv(r);
  detail::write_text_atomic(path, content);
}

inline nlohmann::json sweep_to_json(SweepAxis axis, const std::vector<SweepRow>& rows) {
  nlohmann::json j;
  j["axis"] = to_string(axis);
  j["rows"] = nlohmann::json::array();
  for (const SweepRow& row : rows) {
    j["rows"].push_back({{"value", row.value}, {"report", report_to_json(row.report)}});
  }
  return j;
}

inline std::string sweep_to_csv(SweepAxis axis, const std::vector<SweepRow>& rows) {
  std::string out = "axis,value," + detail::report_csv_columns() + "\n";
  for (const SweepRow& row : rows) {
    out += to_string(axis) + "," + detail::fmt_fixed6(row.value) + "," +
           detail::report_csv_row(row.report) + "\n";
  }
  return out;
}

inline void write_sweep(SweepAxis axis, const std::vector<SweepRow>& rows,
                        const std::filesystem::path& path, ReportFormat format) {
  const std::string content = format == ReportFormat::json ? sweep_to_json(axis, rows).dump(2) + "\n"
                                                           : sweep_to_csv(axis, rows);
  detail::write_text_atomic(path, content);
}

/// Diagnostic export of live cache contents for the CLI inspect path.
inline nlohmann::json cache_dump_json(const EntropyCache& cache) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < cache.num_classes(); ++c) {
    nlohmann::json entries = nlohmann::json::array();
    for (const CacheEntry& e : cache.class_entries(c)) {
      entries.push_back({{"entropy", e.entropy}, {"arrival_index", e.arrival_index}});
    }
    classes.push_back({{"class", c}, {"entries", std::move(entries)}});
  }
  return {{"num_classes", cache.num_classes()},
          {"q", cache.capacity_per_class()},
          {"total", cache.total_size()},
          {"classes", std::move(classes)}};
}

}  // namespace mstta
