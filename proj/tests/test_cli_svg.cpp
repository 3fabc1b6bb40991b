#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "levyfilter/cli.hpp"
#include "levyfilter/errors.hpp"
#include "levyfilter/serialization.hpp"
#include "levyfilter/svg.hpp"

using namespace levyfilter;
namespace fs = std::filesystem;

namespace {

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

struct CaptureErr {
  std::ostringstream buffer;
  std::streambuf* old;
  CaptureErr() : old(std::cerr.rdbuf(buffer.rdbuf())) {}
  ~CaptureErr() { std::cerr.rdbuf(old); }
};

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("levyfilter_test_" + name);
  fs::remove_all(dir);
  return dir;
}

Json read_json(const fs::path& p) {
  std::ifstream in(p);
  return Json::parse(in);
}

}  // namespace

TEST_CASE("svg output") {
  const std::vector<PlotSeries> two{{"a", {0.5, 0.1}, {0.2, 0.05}}, {"b", {0.5, 0.1}, {0.3, 0.1}}};
  const auto svg = emit_svg(two, {true, true, "gap", "eps", "gap"});
  CHECK(count_of(svg, "<polyline") == 2);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(emit_svg(two, {true, true, "gap", "eps", "gap"}) == svg);
  CHECK(count_of(emit_svg({two[0]}, {}), "<polyline") == 1);
  CHECK_THROWS_AS(emit_svg({{"z", {0.0, 1.0}, {1.0, 2.0}}}, {true, false, "", "", ""}),
                  InvalidArgument);
  CHECK_THROWS_AS(emit_svg({{"n", {0.0, 1.0}, {NAN, 2.0}}}, {}), InvalidArgument);
  CHECK_THROWS_AS(emit_svg({{"s", {1.0}, {1.0}}}, {}), InvalidArgument);
}

TEST_CASE("cli exit codes and messages") {
  SUBCASE("unknown flag") {
    CaptureErr cap;
    CHECK(cli::run({"validate", "--preset", "example6", "--bogus"}) == 1);
    CHECK(cap.buffer.str().find("--bogus") != std::string::npos);
  }
  SUBCASE("unknown config key is named") {
    const auto dir = scratch("badcfg");
    fs::create_directories(dir);
    std::ofstream(dir / "cfg.json") << R"({"model": {"preset": "example6"}, "validate": {"sampels": 10}})";
    CaptureErr cap;
    CHECK(cli::run({"validate", "--config", (dir / "cfg.json").string(), "--out", (dir / "o").string()}) == 1);
    CHECK(cap.buffer.str().find("sampels") != std::string::npos);
  }
  SUBCASE("horizon off the step grid") {
    const auto dir = scratch("grid");
    CaptureErr cap;
    CHECK(cli::run({"simulate", "--preset", "example6", "--T", "1", "--dt", "0.03", "--out",
                    dir.string()}) == 1);
  }
}

TEST_CASE("cli validate and run sections") {
  const auto dir = scratch("validate");
  CHECK(cli::run({"validate", "--preset", "example6", "--out", dir.string()}) == 0);
  const auto j = read_json(dir / "validation.json");
  CHECK(j.at("ok").get<bool>());
  for (const auto& c : j.at("checks")) CHECK(c.at("violations").get<int>() == 0);

  const auto dir2 = scratch("runsection");
  fs::create_directories(dir2);
  std::ofstream(dir2 / "cfg.json")
      << R"({"model": {"preset": "example6"}, "command": "validate", "run": {"samples": 50}, "seed": 4})";
  CHECK(cli::run({"validate", "--config", (dir2 / "cfg.json").string(), "--out", (dir2 / "o").string()}) == 0);
  const auto rc = read_json(dir2 / "o" / "run_config.json");
  CHECK(rc.at("run").at("samples").get<int>() == 50);
  CHECK(rc.at("seed").get<int>() == 4);
  CHECK(fs::exists(dir2 / "o" / "input_config.json"));
  {
    CaptureErr cap;
    CHECK(cli::run({"simulate", "--config", (dir2 / "cfg.json").string(), "--out", (dir2 / "p").string()}) == 1);
    CHECK(cap.buffer.str().find("command") != std::string::npos);
  }
}

TEST_CASE("cli converge smoke run") {
  const auto dir = scratch("converge");
  CHECK(cli::run({"converge", "--preset", "example6", "--eps", "0.5,0.1,0.02", "--seed", "7",
                  "--replications", "4", "--particles", "50", "--plot", "--out", dir.string()}) == 0);
  for (const char* f : {"convergence.csv", "replications.csv", "convergence.json", "gap_vs_eps.svg",
                        "run_config.json"})
    CHECK_MESSAGE(fs::exists(dir / f), std::string(f));
  const auto j = read_json(dir / "convergence.json");
  CHECK(j.contains("trend"));
}
