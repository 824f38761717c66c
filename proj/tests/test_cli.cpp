#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "mcbp/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using mcbp::cli::dispatch;

namespace {

fs::path tmpdir() {
  static const fs::path dir = [] {
    fs::path p(MCBP_TEST_TMPDIR);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string path(const std::string& name) { return (tmpdir() / name).string(); }

std::string slurp(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

json run_json(const std::vector<std::string>& args) {
  const Run r = run(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  return json::parse(r.out);
}

}  // namespace

TEST_CASE("generate, quantize, compress and decompress round trip") {
  const json gen = run_json({"gen-weights", "--rows", "32", "--cols", "96", "--seed", "7", "--out", path("w.f32")});
  CHECK(gen["command"] == "gen-weights");
  CHECK(gen["seed"] == 7);

  const json q = run_json({"quantize", "--in", path("w.f32"), "--out", path("w.i8"), "--params", path("w.json")});
  CHECK(q["result"]["params"]["delta_w"].size() == 32);
  CHECK(json::parse(slurp(path("w.json"))) == q["result"]["params"]);
  CHECK(q["inputs"][0]["path"] == path("w.f32"));

  const json c = run_json({"compress", "--in", path("w.i8"), "--m", "4", "--segment-len", "40", "--out", path("w.bstc")});
  CHECK(c["result"]["header"]["rows"] == 32);
  CHECK(c["result"]["header"]["num_segments"] == 3);
  CHECK(c["result"]["file_bytes"] == fs::file_size(path("w.bstc")));

  run_json({"decompress", "--in", path("w.bstc"), "--out", path("w2.i8")});
  CHECK(slurp(path("w.i8")) == slurp(path("w2.i8")));

  const json s = run_json({"sparsity-stats", "--in", path("w.bstc"), "--csv", path("sp.csv")});
  CHECK(s["result"]["per_plane_sr"].size() == 8);
  CHECK(slurp(path("sp.csv")).rfind("plane,sr,p0\n", 0) == 0);
}

TEST_CASE("gemm verifies against the dense product") {
  run_json({"gen-weights", "--rows", "16", "--cols", "40", "--seed", "8", "--out", path("g.f32")});
  run_json({"quantize", "--in", path("g.f32"), "--out", path("g.i8")});
  run_json({"gen-weights", "--rows", "40", "--cols", "5", "--seed", "9", "--out", path("x.f32")});
  run_json({"quantize", "--activations", "--in", path("x.f32"), "--out", path("x.codes")});
  const Run r = run({"gemm", "--weights", path("g.i8"), "--acts", path("x.codes"), "--verify", "--workers", "3",
                     "--tile-k", "16", "--tile-m", "8", "--tile-n", "2"});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("VERIFIED exact\n", 0) == 0);
  const json j = json::parse(r.out.substr(r.out.find('\n') + 1));
  CHECK(j["result"]["verified"] == true);
  CHECK(j["result"]["rows"] == 16);
  CHECK(j["result"]["cols"] == 5);

  // The counters do not depend on the worker count.
  const json one = run_json({"gemm", "--weights", path("g.i8"), "--acts", path("x.codes"), "--workers", "1",
                             "--tile-k", "16", "--tile-m", "8", "--tile-n", "2"});
  CHECK(one["result"]["counters"] == j["result"]["counters"]);
  CHECK(one["result"]["output_crc32"] == j["result"]["output_crc32"]);
}

TEST_CASE("dse writes a CSV and recommends a group size") {
  const json j = run_json({"dse", "--rows", "64", "--cols", "128", "--m", "2..5", "--csv", path("dse.csv")});
  CHECK(j["result"]["rows"].size() == 4);
  const int m = j["result"]["recommended_m"];
  CHECK(m >= 2);
  CHECK(m <= 5);
  std::istringstream csv(slurp(path("dse.csv")));
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 5);
}

TEST_CASE("predict reports traffic and an alpha curve") {
  const json j = run_json({"predict", "--seq-len", "128", "--dim", "32", "--topk", "16", "--sweep-alpha",
                           "0.3,0.6,0.9", "--csv", path("curve.csv"), "--bound-mode", "estimate"});
  CHECK(j["result"]["curve"].size() == 3);
  CHECK(j["result"]["baseline_key_bits"] == 128 * 32 * 4);
  CHECK(j["result"]["recall"].get<double>() >= 0.0);
  CHECK(j["config"]["bound_mode"] == "estimate");
  CHECK(slurp(path("curve.csv")).rfind("alpha,key_bits,traffic_ratio,selected,recall\n", 0) == 0);
  CHECK(run_json({"predict", "--seq-len", "128", "--dim", "32"}) == run_json({"predict", "--seq-len", "128", "--dim", "32"}));
}

TEST_CASE("layer runs both paths and report combines outputs") {
  {
    std::ofstream cfg(path("layer.json"));
    cfg << R"({"H": 64, "d": 16, "heads": 4, "ffn_mult": 2})";
  }
  const Run r = run({"layer", "--config", path("layer.json"), "--prompt-len", "8", "--decode-steps", "2", "--keep-all",
                     "--out", path("layer_report.json"), "--csv", path("layer.csv")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.empty());
  const json rep = json::parse(slurp(path("layer_report.json")));
  CHECK(rep["result"]["diff"]["exact"] == true);
  CHECK(rep["result"]["decode"]["steps"] == 2);
  CHECK(rep["config"]["H"] == 64);
  CHECK(slurp(path("layer.csv")).rfind("stage,field,value\n", 0) == 0);

  const json combined = run_json({"report", "--inputs", path("layer_report.json"), path("layer_report.json"), "--csv",
                                  path("combined.csv")});
  CHECK(combined["result"]["reports"].size() == 2);
  CHECK(combined["result"]["reports"][0] == rep);
}

TEST_CASE("bad layer configs are rejected") {
  {
    std::ofstream cfg(path("bad.json"));
    cfg << R"({"H": 64, "d": 16, "heads": 4, "extra": 1})";
  }
  const Run r = run({"layer", "--config", path("bad.json")});
  CHECK(r.code == mcbp::cli::kExitDataError);
  CHECK(r.err.find("error") != std::string::npos);
}

TEST_CASE("exit codes") {
  CHECK(run({}).code == mcbp::cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == mcbp::cli::kExitUsage);
  CHECK(run({"compress", "--m", "4"}).code == mcbp::cli::kExitUsage);
  CHECK(run({"compress", "--in", "x", "--m", "99", "--out", "y"}).code == mcbp::cli::kExitUsage);
  CHECK(run({"gen-weights", "--rows", "2"}).code == mcbp::cli::kExitUsage);

  const Run missing = run({"decompress", "--in", path("does-not-exist.bstc"), "--out", path("never.i8")});
  CHECK(missing.code == mcbp::cli::kExitDataError);
  CHECK(missing.err.find("cannot open") != std::string::npos);

  {
    std::ofstream junk(path("junk.bstc"), std::ios::binary);
    junk << "BSTC not really a container";
  }
  CHECK(run({"decompress", "--in", path("junk.bstc"), "--out", path("never.i8")}).code == mcbp::cli::kExitDataError);
  CHECK(run({"dse", "--rows", "8", "--cols", "8", "--m", "5..2"}).code == mcbp::cli::kExitDataError);

  const Run help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("gemm") != std::string::npos);
}

TEST_CASE("parse_range") {
  CHECK(mcbp::cli::parse_range("3") == std::vector<int>{3});
  CHECK(mcbp::cli::parse_range("1..4") == std::vector<int>{1, 2, 3, 4});
  CHECK(mcbp::cli::parse_range("2..2") == std::vector<int>{2});
  CHECK_THROWS_AS(mcbp::cli::parse_range("4..1"), mcbp::Error);
  CHECK_THROWS_AS(mcbp::cli::parse_range("a..3"), mcbp::Error);
  CHECK_THROWS_AS(mcbp::cli::parse_range(""), mcbp::Error);
  CHECK_THROWS_AS(mcbp::cli::parse_range("1..2x"), mcbp::Error);
}

TEST_CASE("the installed tool binary runs") {
  const char* tool = std::getenv("MCBP_TOOL");
  if (tool == nullptr) return;
  const std::string out = path("version.txt");
  REQUIRE(std::system((std::string(tool) + " --version > " + out).c_str()) == 0);
  CHECK_FALSE(slurp(out).empty());
  const int status = std::system((std::string(tool) + " gemm > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(status) == mcbp::cli::kExitUsage);
}
