#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mstta/mstta.hpp"

namespace {

using namespace mstta;

void print_error(const std::exception& e) { std::cerr << "error: " << e.what() << "\n"; }

std::string checksum_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::size_t threads_from_env() {
  const char* v = std::getenv("MSTTA_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  std::size_t n = 0;
  const auto [ptr, ec] = std::from_chars(v, v + std::string_view(v).size(), n);
  if (ec != std::errc{} || *ptr != '\0' || n == 0) {
    throw OutOfRangeError("MSTTA_THREADS must be a positive integer");
  }
  return n;
}

// ---- config files -----------------------------------------------------------
// A config file is either a flat JSON object or flat TOML (key = value lines,
// '#' comments). Values parse to the same scalar types either way; flags given
// on the command line always win over file values, and unknown keys are errors.

std::string strip_toml_line(const std::string& line) {
  std::string out;
  bool in_quote = false;
  for (char ch : line) {
    if (ch == '"') in_quote = !in_quote;
    if (ch == '#' && !in_quote) break;
    out.push_back(ch);
  }
  const auto b = out.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = out.find_last_not_of(" \t\r");
  return out.substr(b, e - b + 1);
}

nlohmann::json toml_scalar(const std::string& raw, const std::string& key) {
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    return raw.substr(1, raw.size() - 2);
  }
  if (raw == "true") return true;
  if (raw == "false") return false;
  std::int64_t i = 0;
  auto [ip, iec] = std::from_chars(raw.data(), raw.data() + raw.size(), i);
  if (iec == std::errc{} && ip == raw.data() + raw.size()) return i;
  double d = 0.0;
  auto [dp, dec] = std::from_chars(raw.data(), raw.data() + raw.size(), d);
  if (dec == std::errc{} && dp == raw.data() + raw.size()) return d;
  throw OutOfRangeError("config key '" + key + "': cannot parse value '" + raw + "'");
}

nlohmann::json load_config_object(const std::string& path) {
  std::string content;
  try {
    content = detail::read_file(path);
  } catch (const IoError& e) {
    throw OutOfRangeError(std::string(e.what()) + " (from --config)");
  }
  const auto first = content.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && content[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(content);
    } catch (const nlohmann::json::exception& e) {
      throw OutOfRangeError("config JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw OutOfRangeError("config JSON: top level must be an object");
    return j;
  }
  nlohmann::json obj = nlohmann::json::object();
  std::size_t pos = 0;
  while (pos <= content.size()) {
    const auto nl = content.find('\n', pos);
    const std::string line =
        strip_toml_line(content.substr(pos, nl == std::string::npos ? nl : nl - pos));
    pos = (nl == std::string::npos) ? content.size() + 1 : nl + 1;
    if (line.empty()) continue;
    if (line.front() == '[') throw OutOfRangeError("config TOML: sections are not supported");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw OutOfRangeError("config TOML: expected key = value: " + line);
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    std::string raw = line.substr(eq + 1);
    raw.erase(0, raw.find_first_not_of(" \t"));
    if (key.empty()) throw OutOfRangeError("config TOML: empty key in line: " + line);
    obj[key] = toml_scalar(raw, key);
  }
  return obj;
}

struct ConfigBinding {
  std::string key;  // config key; flag name is "--" + key
  std::function<void(const nlohmann::json&)> apply;
};

double as_number(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number()) throw OutOfRangeError("config key '" + key + "' must be a number");
  return v.get<double>();
}

std::uint64_t as_unsigned(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) {
    throw OutOfRangeError("config key '" + key + "' must be an integer");
  }
  if (v.is_number_integer() && v.get<std::int64_t>() < 0) {
    throw OutOfRangeError("config key '" + key + "' must be non-negative");
  }
  return v.get<std::uint64_t>();
}

std::string as_string(const nlohmann::json& v, const std::string& key) {
  if (!v.is_string()) throw OutOfRangeError("config key '" + key + "' must be a string");
  return v.get<std::string>();
}

void merge_config(const CLI::App* cmd, const std::string& path,
                  const std::vector<ConfigBinding>& bindings) {
  if (path.empty()) return;
  const nlohmann::json obj = load_config_object(path);
  for (const auto& [key, value] : obj.items()) {
    const auto it = std::find_if(bindings.begin(), bindings.end(),
                                 [&](const ConfigBinding& b) { return b.key == key; });
    if (it == bindings.end()) throw OutOfRangeError("unknown config key: " + key);
    if (cmd->count("--" + key) > 0) continue;  // explicit flag wins
    it->apply(value);
  }
}

// ---- subcommand state -------------------------------------------------------

struct SynthFlags {
  SynthSpec spec;
  std::string out;
  std::string config;
};

struct RunFlags {
  std::string data;
  std::string mode = "ms-tta";
  double alpha = 0.8;
  std::size_t k = 3;
  std::size_t q = 3;
  double lambda = 1.0;
  double scale = kDefaultSoftmaxScale;
  std::string neighbor_source = "bank_raw";
  std::optional<std::size_t> bank_capacity;
  std::optional<double> entropy_threshold;
  std::uint64_t seed = 0;
  std::string report;
  std::string format;
  std::string dump_cache;
  std::string config;

  RunConfig to_config() const {
    RunConfig cfg;
    cfg.mode = run_mode_from_string(mode);
    cfg.lambda = lambda;
    cfg.ms.alpha = alpha;
    cfg.ms.k = k;
    cfg.ms.neighbor_source = neighbor_source_from_string(neighbor_source);
    cfg.ms.bank_capacity = bank_capacity.value_or(kUnboundedCapacity);
    cfg.cache_q = q;
    cfg.entropy_threshold = entropy_threshold;
    cfg.softmax_scale = scale;
    cfg.seed = seed;
    cfg.validate();
    return cfg;
  }
};

void add_run_options(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--data", f.data, "dataset directory");
  cmd->add_option("--mode", f.mode, "clip|baseline|ms-tta")->capture_default_str();
  cmd->add_option("--alpha", f.alpha, "mean-shift blend weight in [0,1]")->capture_default_str();
  cmd->add_option("--k", f.k, "neighbor count")->capture_default_str();
  cmd->add_option("--q", f.q, "cache capacity per class")->capture_default_str();
  cmd->add_option("--lambda", f.lambda, "fusion weight for the auxiliary logits")
      ->capture_default_str();
  cmd->add_option("--scale", f.scale, "softmax scale for entropy")->capture_default_str();
  cmd->add_option("--neighbor-source", f.neighbor_source, "bank_raw|cache_refined")
      ->capture_default_str();
  cmd->add_option("--bank-capacity", f.bank_capacity, "bound the neighbor bank (default unbounded)");
  cmd->add_option("--entropy-threshold", f.entropy_threshold,
                  "absolute cache admission threshold (default disabled)");
  cmd->add_option("--seed", f.seed, "recorded in the report")->capture_default_str();
  cmd->add_option("--report", f.report, "write the report/table here");
  cmd->add_option("--config", f.config, "TOML or JSON config file; flags override it");
}

std::vector<ConfigBinding> run_bindings(RunFlags& f) {
  return {
      {"data", [&f](const nlohmann::json& v) { f.data = as_string(v, "data"); }},
      {"mode", [&f](const nlohmann::json& v) { f.mode = as_string(v, "mode"); }},
      {"alpha", [&f](const nlohmann::json& v) { f.alpha = as_number(v, "alpha"); }},
      {"k", [&f](const nlohmann::json& v) { f.k = as_unsigned(v, "k"); }},
      {"q", [&f](const nlohmann::json& v) { f.q = as_unsigned(v, "q"); }},
      {"lambda", [&f](const nlohmann::json& v) { f.lambda = as_number(v, "lambda"); }},
      {"scale", [&f](const nlohmann::json& v) { f.scale = as_number(v, "scale"); }},
      {"neighbor-source",
       [&f](const nlohmann::json& v) { f.neighbor_source = as_string(v, "neighbor-source"); }},
      {"bank-capacity",
       [&f](const nlohmann::json& v) { f.bank_capacity = as_unsigned(v, "bank-capacity"); }},
      {"entropy-threshold",
       [&f](const nlohmann::json& v) { f.entropy_threshold = as_number(v, "entropy-threshold"); }},
      {"seed", [&f](const nlohmann::json& v) { f.seed = as_unsigned(v, "seed"); }},
      {"report", [&f](const nlohmann::json& v) { f.report = as_string(v, "report"); }},
      {"format", [&f](const nlohmann::json& v) { f.format = as_string(v, "format"); }},
  };
}

std::vector<ConfigBinding> synth_bindings(SynthFlags& f) {
  return {
      {"classes", [&f](const nlohmann::json& v) { f.spec.c = as_unsigned(v, "classes"); }},
      {"dim", [&f](const nlohmann::json& v) { f.spec.d = as_unsigned(v, "dim"); }},
      {"per-class",
       [&f](const nlohmann::json& v) { f.spec.n_per_class = as_unsigned(v, "per-class"); }},
      {"kappa-text",
       [&f](const nlohmann::json& v) { f.spec.kappa_text = as_number(v, "kappa-text"); }},
      {"kappa-test",
       [&f](const nlohmann::json& v) { f.spec.kappa_test = as_number(v, "kappa-test"); }},
      {"shift-angle",
       [&f](const nlohmann::json& v) { f.spec.shift_angle = as_number(v, "shift-angle"); }},
      {"label-noise",
       [&f](const nlohmann::json& v) { f.spec.label_noise = as_number(v, "label-noise"); }},
      {"seed", [&f](const nlohmann::json& v) { f.spec.seed = as_unsigned(v, "seed"); }},
      {"out", [&f](const nlohmann::json& v) { f.out = as_string(v, "out"); }},
  };
}

// ---- subcommand bodies ------------------------------------------------------

int load_phase(const std::string& dir, std::optional<EmbDataset>& ds) {
  try {
    ds.emplace(read_dataset(dir));
    return 0;
  } catch (const IoError& e) {
    print_error(e);
    return 3;
  } catch (const Error& e) {
    print_error(e);
    return 4;
  }
}

int do_synth(const CLI::App* cmd, SynthFlags f) {
  try {
    merge_config(cmd, f.config, synth_bindings(f));
    if (f.out.empty()) throw OutOfRangeError("--out is required");
    f.spec.validate();
  } catch (const Error& e) {
    print_error(e);
    return 2;
  }
  try {
    const EmbDataset ds = synth_generate(f.spec);
    write_dataset(ds, f.out);
    std::cout << "checksum=" << checksum_hex(dataset_checksum(ds)) << "\n";
    std::cout << "n=" << ds.n() << " d=" << ds.dim() << " c=" << ds.num_classes() << " dir=" << f.out
              << "\n";
    return 0;
  } catch (const IoError& e) {
    print_error(e);
    return 3;
  } catch (const Error& e) {
    print_error(e);
    return 2;
  }
}

int do_run(const CLI::App* cmd, RunFlags f) {
  RunConfig cfg;
  ReportFormat format = ReportFormat::json;
  try {
    merge_config(cmd, f.config, run_bindings(f));
    if (f.data.empty()) throw OutOfRangeError("--data is required");
    cfg = f.to_config();
    if (!f.format.empty()) format = report_format_from_string(f.format);
  } catch (const Error& e) {
    print_error(e);
    return 2;
  }
  std::optional<EmbDataset> ds;
  if (const int rc = load_phase(f.data, ds); rc != 0) return rc;
  try {
    std::optional<StreamState> state;
    const Report report = evaluate_stream(*ds, cfg, f.dump_cache.empty() ? nullptr : &state);
    if (!f.report.empty()) write_report(report, f.report, format);
    if (!f.dump_cache.empty()) {
      detail::write_text_atomic(f.dump_cache, cache_dump_json(state->cache).dump(2) + "\n");
    }
    std::cout << "mode=" << to_string(cfg.mode) << " acc=" << detail::fmt_fixed6(report.top1_accuracy)
              << " n=" << report.n_samples << "\n";
    return 0;
  } catch (const IoError& e) {
    print_error(e);
    return 3;
  } catch (const Error& e) {
    print_error(e);
    return 4;
  }
}

// CLI11's lexical cast quietly turns an empty token into 0.0, so grid values
// arrive as raw strings and are parsed strictly here.
std::vector<double> parse_values(const std::vector<std::string>& raw) {
  std::vector<double> values;
  values.reserve(raw.size());
  for (const std::string& tok : raw) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size()) {
      throw OutOfRangeError("--values: cannot parse '" + tok + "'");
    }
    values.push_back(v);
  }
  if (values.empty()) throw OutOfRangeError("--values must be non-empty");
  return values;
}

int do_sweep(const CLI::App* cmd, RunFlags f, const std::string& axis_str,
             const std::vector<std::string>& raw_values) {
  RunConfig cfg;
  SweepAxis axis = SweepAxis::alpha;
  ReportFormat format = ReportFormat::csv;
  std::vector<double> values;
  std::size_t threads = 1;
  try {
    merge_config(cmd, f.config, run_bindings(f));
    if (f.data.empty()) throw OutOfRangeError("--data is required");
    cfg = f.to_config();
    axis = sweep_axis_from_string(axis_str);
    if (!f.format.empty()) format = report_format_from_string(f.format);
    values = parse_values(raw_values);
    threads = threads_from_env();
  } catch (const Error& e) {
    print_error(e);
    return 2;
  }
  std::optional<EmbDataset> ds;
  if (const int rc = load_phase(f.data, ds); rc != 0) return rc;
  try {
    const std::vector<SweepRow> rows = sweep(*ds, cfg, axis, values, threads);
    const std::string table =
        format == ReportFormat::json ? sweep_to_json(axis, rows).dump(2) + "\n" : sweep_to_csv(axis, rows);
    std::cout << table;
    if (!f.report.empty()) write_sweep(axis, rows, f.report, format);
    return 0;
  } catch (const IoError& e) {
    print_error(e);
    return 3;
  } catch (const Error& e) {
    print_error(e);
    return 4;
  }
}

int do_inspect(const std::string& data, const std::string& cache_dump, bool as_json) {
  if (!data.empty()) {
    std::optional<EmbDataset> ds;
    if (const int rc = load_phase(data, ds); rc != 0) return rc;
    const std::string checksum = checksum_hex(dataset_checksum(*ds));
    if (as_json) {
      nlohmann::json j{{"n", ds->n()},
                       {"d", ds->dim()},
                       {"c", ds->num_classes()},
                       {"norm_warning", ds->norm_warning()},
                       {"checksum", checksum},
                       {"provenance", ds->provenance()}};
      if (!ds->class_names().empty()) j["class_names"] = ds->class_names();
      std::cout << j.dump(2) << "\n";
    } else {
      std::cout << "n=" << ds->n() << " d=" << ds->dim() << " c=" << ds->num_classes() << "\n"
                << "norm_warning=" << (ds->norm_warning() ? 1 : 0) << "\n"
                << "checksum=" << checksum << "\n";
      if (!ds->provenance().empty()) std::cout << "provenance=" << ds->provenance() << "\n";
    }
    return 0;
  }
  try {
    const std::string raw = detail::read_file(cache_dump);
    const nlohmann::json j = nlohmann::json::parse(raw);
    nlohmann::json summary{{"num_classes", j.at("num_classes")},
                           {"q", j.at("q")},
                           {"total", j.at("total")},
                           {"classes", nlohmann::json::array()}};
    for (const auto& cls : j.at("classes")) {
      const auto& entries = cls.at("entries");
      double lo = 0.0, hi = 0.0;
      for (std::size_t i = 0; i < entries.size(); ++i) {
        const double h = entries[i].at("entropy").get<double>();
        lo = (i == 0) ? h : std::min(lo, h);
        hi = (i == 0) ? h : std::max(hi, h);
      }
      nlohmann::json row{{"class", cls.at("class")}, {"count", entries.size()}};
      if (!entries.empty()) {
        row["entropy_min"] = lo;
        row["entropy_max"] = hi;
      }
      summary["classes"].push_back(std::move(row));
    }
    if (as_json) {
      std::cout << summary.dump(2) << "\n";
    } else {
      std::cout << "cache total=" << summary["total"] << " q=" << summary["q"]
                << " classes=" << summary["num_classes"] << "\n";
      for (const auto& row : summary["classes"]) {
        std::cout << "class " << row["class"] << ": count=" << row["count"];
        if (row.contains("entropy_min")) {
          std::cout << " entropy=[" << detail::fmt_double(row["entropy_min"].get<double>()) << ", "
                    << detail::fmt_double(row["entropy_max"].get<double>()) << "]";
        }
        std::cout << "\n";
      }
    }
    return 0;
  } catch (const IoError& e) {
    print_error(e);
    return 3;
  } catch (const nlohmann::json::exception& e) {
    print_error(e);
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streaming test-time adaptation over precomputed embeddings"};
  app.require_subcommand(1);

  SynthFlags synth_flags;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic shift benchmark");
  synth->add_option("--classes", synth_flags.spec.c, "number of classes")->capture_default_str();
  synth->add_option("--dim", synth_flags.spec.d, "embedding dimension")->capture_default_str();
  synth->add_option("--per-class", synth_flags.spec.n_per_class, "samples per class")
      ->capture_default_str();
  synth->add_option("--kappa-text", synth_flags.spec.kappa_text, "text anchor concentration")
      ->capture_default_str();
  synth->add_option("--kappa-test", synth_flags.spec.kappa_test, "test feature concentration")
      ->capture_default_str();
  synth->add_option("--shift-angle", synth_flags.spec.shift_angle, "anchor rotation in radians")
      ->capture_default_str();
  synth->add_option("--label-noise", synth_flags.spec.label_noise, "label flip fraction")
      ->capture_default_str();
  synth->add_option("--seed", synth_flags.spec.seed, "generator seed")->capture_default_str();
  synth->add_option("--out", synth_flags.out, "output directory");
  synth->add_option("--config", synth_flags.config, "TOML or JSON config file; flags override it");

  RunFlags run_flags;
  CLI::App* run = app.add_subcommand("run", "evaluate one mode over a dataset stream");
  add_run_options(run, run_flags);
  run->add_option("--format", run_flags.format, "json|csv (default json)");
  run->add_option("--dump-cache", run_flags.dump_cache, "write final cache state as JSON");

  RunFlags sweep_flags;
  std::string sweep_axis;
  std::vector<std::string> sweep_values;
  CLI::App* swp = app.add_subcommand("sweep", "evaluate a grid along one axis");
  add_run_options(swp, sweep_flags);
  swp->add_option("--axis", sweep_axis, "alpha|k|q|lambda")->required();
  swp->add_option("--values", sweep_values, "comma-separated grid values")
      ->required()
      ->delimiter(',');
  swp->add_option("--format", sweep_flags.format, "json|csv (default csv)");

  std::string inspect_data;
  std::string inspect_cache;
  bool inspect_json = false;
  CLI::App* ins = app.add_subcommand("inspect", "describe a dataset or cache dump");
  CLI::Option_group* target = ins->add_option_group("target", "what to inspect");
  target->add_option("--data", inspect_data, "dataset directory");
  target->add_option("--cache-dump", inspect_cache, "cache dump JSON from run --dump-cache");
  target->require_option(1);
  ins->add_flag("--json", inspect_json, "emit machine-readable JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (synth->parsed()) return do_synth(synth, synth_flags);
  if (run->parsed()) return do_run(run, run_flags);
  if (swp->parsed()) return do_sweep(swp, sweep_flags, sweep_axis, sweep_values);
  return do_inspect(inspect_data, inspect_cache, inspect_json);
}
