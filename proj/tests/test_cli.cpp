#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "helpers.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& scratch() {
  static const fs::path p = [] {
    const fs::path dir = fs::temp_directory_path() / "mstta_cli_tests";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
  }();
  return p;
}

struct CmdResult {
  int code = -1;
  std::string out;
};

CmdResult run_cli(const std::string& args, const std::string& env = {}) {
  static int counter = 0;
  const fs::path capture = scratch() / ("capture_" + std::to_string(counter++) + ".txt");
  std::string cmd;
  if (!env.empty()) cmd += env + " ";
  cmd += std::string(MSTTA_CLI_EXE) + " " + args + " > " + capture.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CmdResult r;
  r.code = (raw == -1) ? 127 : (WIFEXITED(raw) ? WEXITSTATUS(raw) : 128);
  std::ifstream in(capture);
  r.out.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return r;
}

std::string acc_of(const std::string& out) {
  const auto pos = out.find("acc=");
  REQUIRE(pos != std::string::npos);
  return out.substr(pos + 4, 8);
}

const std::string& dataset_dir() {
  static const std::string dir = [] {
    const fs::path p = scratch() / "ds";
    const CmdResult r =
        run_cli("synth --classes 6 --dim 16 --per-class 40 --seed 3 --out " + p.string());
    REQUIRE(r.code == 0);
    return p.string();
  }();
  return dir;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::trunc);
  out << s;
}

nlohmann::json parse_file(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("synth writes a complete dataset directory") {
  const fs::path dir = scratch() / "synth_basic";
  const CmdResult r =
      run_cli("synth --classes 4 --dim 8 --per-class 5 --seed 1 --out " + dir.string());
  REQUIRE(r.code == 0);
  REQUIRE(r.out.find("checksum=") != std::string::npos);
  REQUIRE(r.out.find("n=20 d=8 c=4") != std::string::npos);
  for (const char* f : {"manifest.json", "features.f32", "labels.i64", "text.f32"}) {
    REQUIRE(fs::exists(dir / f));
  }

  const fs::path dir2 = scratch() / "synth_basic2";
  const CmdResult r2 =
      run_cli("synth --classes 4 --dim 8 --per-class 5 --seed 1 --out " + dir2.string());
  REQUIRE(r2.code == 0);
  REQUIRE(r2.out.substr(0, r2.out.find('\n')) == r.out.substr(0, r.out.find('\n')));
}

TEST_CASE("synth rejects infeasible specs and surfaces write failures") {
  REQUIRE(run_cli("synth --classes 1 --out " + (scratch() / "nope").string()).code == 2);
  REQUIRE(run_cli("synth --classes 10 --dim 4 --out " + (scratch() / "nope2").string())
              .code == 2);
  REQUIRE(run_cli("synth").code == 2);  // --out is required
  REQUIRE(run_cli("synth --out /proc/mstta_cannot_write/ds").code == 3);
}

TEST_CASE("run prints a stable summary line") {
  const CmdResult r = run_cli("run --data " + dataset_dir());
  REQUIRE(r.code == 0);
  REQUIRE(r.out.rfind("mode=ms-tta acc=0.", 0) == 0);
  REQUIRE(r.out.find(" n=240") != std::string::npos);
}

TEST_CASE("a zero fusion weight reproduces the clip summary") {
  const CmdResult clip = run_cli("run --data " + dataset_dir() + " --mode clip");
  const CmdResult lam0 = run_cli("run --data " + dataset_dir() + " --lambda 0");
  REQUIRE(clip.code == 0);
  REQUIRE(lam0.code == 0);
  REQUIRE(clip.out.rfind("mode=clip ", 0) == 0);
  REQUIRE(acc_of(clip.out) == acc_of(lam0.out));
}

TEST_CASE("a zero-alpha run matches the baseline report") {
  const fs::path r1 = scratch() / "alpha0.json";
  const fs::path r2 = scratch() / "baseline.json";
  REQUIRE(run_cli("run --data " + dataset_dir() + " --alpha 0 --report " + r1.string())
              .code == 0);
  REQUIRE(
      run_cli("run --data " + dataset_dir() + " --mode baseline --report " + r2.string())
          .code == 0);
  const auto a = parse_file(r1);
  const auto b = parse_file(r2);
  REQUIRE(std::abs(a.at("top1_accuracy").get<double>() -
                   b.at("top1_accuracy").get<double>()) <= 1e-9);
  REQUIRE(a.at("per_class_accuracy") == b.at("per_class_accuracy"));
  REQUIRE(a.at("compactness_after") == b.at("compactness_after"));
}

TEST_CASE("re-running writes an identical report apart from timing") {
  const fs::path r1 = scratch() / "idem1.json";
  const fs::path r2 = scratch() / "idem2.json";
  REQUIRE(run_cli("run --data " + dataset_dir() + " --report " + r1.string()).code == 0);
  REQUIRE(run_cli("run --data " + dataset_dir() + " --report " + r2.string()).code == 0);
  auto a = parse_file(r1);
  auto b = parse_file(r2);
  a.erase("wall_time_ms");
  b.erase("wall_time_ms");
  REQUIRE(a == b);
}

TEST_CASE("run emits CSV on request") {
  const fs::path rep = scratch() / "run.csv";
  REQUIRE(
      run_cli("run --data " + dataset_dir() + " --format csv --report " + rep.string())
          .code == 0);
  std::ifstream in(rep);
  std::string header;
  std::string row;
  std::string extra;
  REQUIRE(static_cast<bool>(std::getline(in, header)));
  REQUIRE(static_cast<bool>(std::getline(in, row)));
  REQUIRE_FALSE(static_cast<bool>(std::getline(in, extra)));
  REQUIRE(header.rfind("mode,alpha,k,q,", 0) == 0);
  REQUIRE(row.rfind("ms-tta,0.800000,3,3,", 0) == 0);
}

TEST_CASE("sweep prints one CSV row per value") {
  const CmdResult r = run_cli("sweep --data " + dataset_dir() +
                              " --axis alpha --values 0,0.2,0.4,0.6,0.8,1.0");
  REQUIRE(r.code == 0);
  REQUIRE(std::count(r.out.begin(), r.out.end(), '\n') == 7);
  REQUIRE(r.out.rfind("axis,value,", 0) == 0);
  REQUIRE(r.out.find("alpha,0.600000,") != std::string::npos);

  const CmdResult k = run_cli("sweep --data " + dataset_dir() + " --axis k --values 1,2,4");
  REQUIRE(k.code == 0);
  REQUIRE(std::count(k.out.begin(), k.out.end(), '\n') == 4);

  REQUIRE(run_cli("sweep --data " + dataset_dir() + " --axis alpha --values \"\"").code ==
          2);
  REQUIRE(run_cli("sweep --data " + dataset_dir() + " --axis beta --values 1").code == 2);
  REQUIRE(run_cli("sweep --data " + dataset_dir() + " --axis alpha").code == 2);
}

TEST_CASE("sweep JSON matches across worker counts") {
  const std::string cmd =
      "sweep --data " + dataset_dir() + " --axis alpha --values 0,0.4,0.8 --format json";
  const CmdResult serial = run_cli(cmd);
  const CmdResult parallel = run_cli(cmd, "MSTTA_THREADS=3");
  REQUIRE(serial.code == 0);
  REQUIRE(parallel.code == 0);
  auto a = nlohmann::json::parse(serial.out);
  auto b = nlohmann::json::parse(parallel.out);
  REQUIRE(a.at("rows").size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    a["rows"][i]["report"].erase("wall_time_ms");
    b["rows"][i]["report"].erase("wall_time_ms");
  }
  REQUIRE(a == b);
  REQUIRE(run_cli(cmd, "MSTTA_THREADS=abc").code == 2);
  REQUIRE(run_cli(cmd, "MSTTA_THREADS=0").code == 2);
}

TEST_CASE("sweep tables can be written to disk") {
  const fs::path rep = scratch() / "sweep.csv";
  REQUIRE(run_cli("sweep --data " + dataset_dir() + " --axis q --values 1,3 --report " +
                  rep.string())
              .code == 0);
  REQUIRE(fs::exists(rep));
  std::ifstream in(rep);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  REQUIRE(lines == 3);
}

TEST_CASE("inspect reports dataset shape and checksum") {
  const CmdResult r = run_cli("inspect --data " + dataset_dir());
  REQUIRE(r.code == 0);
  REQUIRE(r.out.find("n=240 d=16 c=6") != std::string::npos);
  REQUIRE(r.out.find("norm_warning=0") != std::string::npos);
  REQUIRE(r.out.find("checksum=") != std::string::npos);

  const CmdResult j = run_cli("inspect --json --data " + dataset_dir());
  REQUIRE(j.code == 0);
  const auto parsed = nlohmann::json::parse(j.out);
  REQUIRE(parsed.at("n") == 240);
  REQUIRE(parsed.at("d") == 16);
  REQUIRE(parsed.at("c") == 6);
  REQUIRE(parsed.at("provenance").get<std::string>().find("seed=3") != std::string::npos);

  REQUIRE(run_cli("inspect --data " + (scratch() / "missing_ds").string()).code == 3);
  REQUIRE(run_cli("inspect").code == 2);  // exactly one target is required
}

TEST_CASE("cache dumps round trip through inspect") {
  const fs::path dump = scratch() / "cache.json";
  REQUIRE(run_cli("run --data " + dataset_dir() + " --dump-cache " + dump.string()).code ==
          0);
  const auto parsed = parse_file(dump);
  REQUIRE(parsed.at("num_classes") == 6);
  REQUIRE(parsed.at("q") == 3);
  REQUIRE(parsed.at("total").get<std::size_t>() <= 18);

  const CmdResult human = run_cli("inspect --cache-dump " + dump.string());
  REQUIRE(human.code == 0);
  REQUIRE(human.out.find("cache total=") != std::string::npos);

  const CmdResult j = run_cli("inspect --json --cache-dump " + dump.string());
  REQUIRE(j.code == 0);
  REQUIRE_NOTHROW(nlohmann::json::parse(j.out));

  REQUIRE(run_cli("inspect --cache-dump " + (scratch() / "no_dump.json").string()).code ==
          3);
}

TEST_CASE("flag validation failures exit with code 2") {
  REQUIRE(run_cli("run --data " + dataset_dir() + " --alpha 1.5").code == 2);
  REQUIRE(run_cli("run --data " + dataset_dir() + " --mode bogus").code == 2);
  REQUIRE(run_cli("run --data " + dataset_dir() + " --q 0").code == 2);
  REQUIRE(run_cli("run --data " + dataset_dir() + " --neighbor-source hive").code == 2);
  REQUIRE(run_cli("run").code == 2);  // --data is required
  REQUIRE(run_cli("run --data " + dataset_dir() + " --frobnicate 1").code == 2);
  REQUIRE(run_cli("").code == 2);  // a subcommand is required
  REQUIRE(run_cli("--help").code == 0);
  REQUIRE(run_cli("run --help").code == 0);
}

TEST_CASE("I/O and dataset-validation failures use distinct exit codes") {
  REQUIRE(run_cli("run --data " + (scratch() / "absent").string()).code == 3);

  // corrupting a payload turns the load into a validation failure
  const fs::path broken = scratch() / "broken_ds";
  fs::copy(dataset_dir(), broken, fs::copy_options::recursive);
  const fs::path labels = broken / "labels.i64";
  fs::resize_file(labels, fs::file_size(labels) - 8);
  REQUIRE(run_cli("run --data " + broken.string()).code == 4);

  REQUIRE(run_cli("run --data " + dataset_dir() +
                  " --report /no_such_dir_mstta/r.json")
              .code == 3);
}

TEST_CASE("config files merge under explicit flags") {
  const fs::path toml = scratch() / "cfg.toml";
  write_text(toml, "mode = \"clip\"\n# comment\nalpha = 0.4\n");
  const CmdResult from_toml =
      run_cli("run --data " + dataset_dir() + " --config " + toml.string());
  REQUIRE(from_toml.code == 0);
  REQUIRE(from_toml.out.rfind("mode=clip ", 0) == 0);

  const fs::path json = scratch() / "cfg.json";
  write_text(json, "{\"mode\": \"baseline\", \"k\": 5}\n");
  const CmdResult from_json =
      run_cli("run --data " + dataset_dir() + " --config " + json.string());
  REQUIRE(from_json.code == 0);
  REQUIRE(from_json.out.rfind("mode=baseline ", 0) == 0);

  const CmdResult overridden = run_cli("run --data " + dataset_dir() + " --config " +
                                       json.string() + " --mode ms-tta");
  REQUIRE(overridden.code == 0);
  REQUIRE(overridden.out.rfind("mode=ms-tta ", 0) == 0);

  const CmdResult flag_first =
      run_cli("run --data " + dataset_dir() + " --mode clip --config " + toml.string());
  REQUIRE(flag_first.code == 0);
  REQUIRE(flag_first.out.rfind("mode=clip ", 0) == 0);
}

TEST_CASE("config files reject unknown keys and unsupported syntax") {
  const fs::path bad = scratch() / "bad.toml";
  write_text(bad, "alphaa = 0.3\n");
  const CmdResult r = run_cli("run --data " + dataset_dir() + " --config " + bad.string());
  REQUIRE(r.code == 2);
  REQUIRE(r.out.find("unknown config key") != std::string::npos);

  const fs::path sect = scratch() / "sect.toml";
  write_text(sect, "[run]\nalpha = 0.4\n");
  REQUIRE(run_cli("run --data " + dataset_dir() + " --config " + sect.string()).code == 2);

  const fs::path badjson = scratch() / "bad.json";
  write_text(badjson, "{\"alpha\": [0.1]}\n");
  REQUIRE(run_cli("run --data " + dataset_dir() + " --config " + badjson.string()).code ==
          2);

  REQUIRE(run_cli("run --data " + dataset_dir() + " --config " +
                  (scratch() / "absent.toml").string())
              .code == 2);
}

TEST_CASE("config files can provide the dataset and output paths") {
  const fs::path cfg = scratch() / "data.toml";
  write_text(cfg, "data = \"" + dataset_dir() + "\"\nmode = \"clip\"\n");
  const CmdResult r = run_cli("run --config " + cfg.string());
  REQUIRE(r.code == 0);
  REQUIRE(r.out.rfind("mode=clip ", 0) == 0);

  const fs::path synth_cfg = scratch() / "synth.toml";
  const fs::path out_dir = scratch() / "synth_from_cfg";
  write_text(synth_cfg, "classes = 5\nper-class = 4\ndim = 8\nout = \"" +
                            out_dir.string() + "\"\n");
  const CmdResult s = run_cli("synth --config " + synth_cfg.string());
  REQUIRE(s.code == 0);
  REQUIRE(s.out.find("n=20 d=8 c=5") != std::string::npos);
  REQUIRE(fs::exists(out_dir / "manifest.json"));
}

TEST_CASE("sweep honors config files too") {
  const fs::path cfg = scratch() / "sweep.toml";
  write_text(cfg, "q = 1\n");
  const CmdResult r = run_cli("sweep --data " + dataset_dir() +
                              " --axis lambda --values 0,1 --config " + cfg.string());
  REQUIRE(r.code == 0);
  REQUIRE(r.out.find(",3,1,") != std::string::npos);  // k stays 3, q comes from the file
}
