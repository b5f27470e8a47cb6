#include <gtest/gtest.h>

#include <cocycle_lab/runner.hpp>
#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

using namespace clab;
namespace fs = std::filesystem;

namespace {

Json minimal_lyapunov() {
  return Json::parse(R"({
    "subshift": {"alphabet_size": 2, "transitions": [[1, 1], [1, 1]]},
    "potential": {"bernoulli": [0.5, 0.5]},
    "cocycle": {"kind": "m0"},
    "experiment": {"kind": "lyapunov", "params": {"n": 200, "samples": 16}},
    "rng_seed": 3,
    "output_dir": "unused"
  })");
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("cocycle_lab_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string config_error(const Json& doc) {
  try {
    auto cfg = parse_config(doc);
    validate_experiment(cfg);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Cli, LyapunovCsvHeader) {
  auto out = compute_experiment(parse_config(minimal_lyapunov()), 1);
  const auto& csv = out.files.at("lyapunov.csv");
  EXPECT_EQ(csv.substr(0, csv.find("\r\n")), "i,lambda_hat,stderr,n,samples");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Cli, DeadEndSymbolIsConfigError) {
  auto doc = minimal_lyapunov();
  doc["subshift"]["transitions"] = Json::parse("[[0, 0], [0, 0]]");
  EXPECT_NE(config_error(doc).find("no allowed successor"), std::string::npos);
}

TEST(Cli, UnknownKeysNameTheirPath) {
  auto doc = minimal_lyapunov();
  doc["experiment"]["params"]["bogus"] = 1;
  EXPECT_EQ(config_error(doc), "experiment.params.bogus: unknown key");
  doc = minimal_lyapunov();
  doc["cocycle"]["extra"] = true;
  EXPECT_EQ(config_error(doc), "cocycle.extra: unknown key");
  doc = minimal_lyapunov();
  doc["experiment"]["kind"] = "nope";
  EXPECT_FALSE(config_error(doc).empty());
}

TEST(Cli, WorkerCountDoesNotChangeBytes) {
  auto cfg = parse_config(minimal_lyapunov());
  auto a = compute_experiment(cfg, 1);
  auto b = compute_experiment(cfg, 8);
  EXPECT_EQ(a.files, b.files);
  EXPECT_EQ(build_manifest(cfg, a).dump(), build_manifest(cfg, b).dump());
}

TEST(Cli, ManifestRoundTrip) {
  auto cfg = parse_config(minimal_lyapunov());
  cfg.output_dir = scratch("manifest").string();
  auto out = compute_experiment(cfg, 2);
  commit_output(cfg, out);
  EXPECT_TRUE(verify_manifest(cfg.output_dir).empty());
  {
    std::ofstream f(fs::path(cfg.output_dir) / "lyapunov.csv", std::ios::app);
    f << "tampered";
  }
  EXPECT_EQ(verify_manifest(cfg.output_dir), std::vector<std::string>{"lyapunov.csv: checksum mismatch"});
  fs::remove_all(cfg.output_dir);
}

TEST(Cli, RefusalWritesNothing) {
  auto doc = minimal_lyapunov();
  doc["experiment"] = Json::parse(R"({"kind": "tower", "params": {"m": 4, "delta": 0.2, "base_word_budget": 3}})");
  auto cfg = parse_config(doc);
  cfg.output_dir = scratch("refusal").string();
  EXPECT_THROW(run_experiment(cfg, 1), NumericRefusal);
  EXPECT_FALSE(fs::exists(cfg.output_dir));
}

TEST(Report, SinglePointPlotHasOneMarker) {
  auto svg = render_plot({{{1.0}, {2.0}, "p"}}, "linear", "t", "x", "y");
  std::size_t n = 0;
  for (auto p = svg.text.find("<circle"); p != std::string::npos; p = svg.text.find("<circle", p + 1)) ++n;
  EXPECT_EQ(n, 1u);
  EXPECT_NE(svg.text.find("width=\"800\""), std::string::npos);
  EXPECT_NE(svg.text.find("height=\"600\""), std::string::npos);
}

TEST(Report, SemilogyDropsNonPositiveWithNote) {
  auto svg = render_plot({{{1, 2, 3}, {0.1, 0.0, 0.01}, "p"}}, "semilogy", "t", "x", "y");
  ASSERT_EQ(svg.notes.size(), 1u);
  EXPECT_NE(svg.notes[0].find("1"), std::string::npos);
  EXPECT_THROW(render_plot({{{1}, {0.0}, "p"}}, "semilogy", "t", "x", "y"), NumericRefusal);
  EXPECT_THROW(render_plot({{{}, {}, "p"}}, "linear", "t", "x", "y"), NumericRefusal);
  EXPECT_THROW(render_plot({{{1}, {NAN}, "p"}}, "linear", "t", "x", "y"), NumericRefusal);
  EXPECT_THROW(render_plot({{{1}, {1}, "p"}}, "loglog", "t", "x", "y"), ConfigError);
}

TEST(Report, PlotsAreDeterministic) {
  std::vector<PlotSeries> s{{{1, 2, 3, 4}, {1e-1, 1e-2, 1e-4, 1e-5}, "a"}, {{1, 2}, {0.5, 0.25}, "b & c"}};
  EXPECT_EQ(render_plot(s, "semilogy", "t", "x", "y").text, render_plot(s, "semilogy", "t", "x", "y").text);
}

TEST(Report, CsvQuotingAndNumbers) {
  Csv c({"a", "b"});
  c.row({std::string("x,y"), std::string("say \"hi\"")});
  c.row({0.1, long(-3)});
  c.row({std::nan(""), 1e300});
  EXPECT_EQ(c.str(), "a,b\r\n\"x,y\",\"say \"\"hi\"\"\"\r\n0.10000000000000001,-3\r\nnan,1.0000000000000001e+300\r\n");
  EXPECT_THROW(c.row({1.0}), std::logic_error);
}

TEST(Report, Sha256KnownAnswer) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Report, AtomicWriteLeavesNoTemporary) {
  auto dir = scratch("atomic");
  write_atomic(dir / "sub" / "f.txt", "hello");
  EXPECT_EQ(read_file(dir / "sub" / "f.txt"), "hello");
  std::size_t n = 0;
  for ([[maybe_unused]] auto& e : fs::directory_iterator(dir / "sub")) ++n;
  EXPECT_EQ(n, 1u);
  fs::remove_all(dir);
}

TEST(Config, CocycleJsonRoundTrip) {
  const auto s = SubshiftSpec::full(2);
  for (auto& c : {m0_cocycle(), remark39_cocycle(), random_cocycle(SubshiftSpec::full(2), 3, 1, 1, 4)}) {
    auto back = parse_cocycle(Fields(cocycle_json(c), "cocycle"), s);
    ASSERT_EQ(back.d, c.d);
    ASSERT_EQ(back.gen.size(), c.gen.size());
    for (std::size_t k = 0; k < c.gen.size(); ++k) EXPECT_EQ(back.gen[k], c.gen[k]);
  }
}

#ifdef CLAB_EXE
namespace {
int exit_code(const std::string& args) {
  int st = std::system((std::string(CLAB_EXE) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}
}  // namespace

TEST(Cli, ExitCodes) {
  auto dir = scratch("exit");
  fs::create_directories(dir);
  auto write = [&](const std::string& name, Json doc) {
    doc["output_dir"] = (dir / ("out_" + name)).string();
    std::ofstream(dir / name) << doc.dump();
    return (dir / name).string();
  };
  auto good = write("good.json", minimal_lyapunov());
  auto bad = minimal_lyapunov();
  bad["experiment"]["params"]["n"] = -1;
  auto badp = write("bad.json", bad);
  auto refuse = minimal_lyapunov();
  refuse["experiment"] = Json::parse(R"({"kind": "tower", "params": {"m": 4, "delta": 0.2, "base_word_budget": 3}})");
  auto refp = write("refuse.json", refuse);
  std::ofstream(dir / "broken.json") << "{";

  EXPECT_EQ(exit_code("validate " + good), 0);
  EXPECT_EQ(exit_code("run " + good + " --workers 2"), 0);
  EXPECT_TRUE(fs::exists(dir / "out_good.json" / "manifest.json"));
  EXPECT_EQ(exit_code("run " + badp), 2);
  EXPECT_EQ(exit_code("run " + (dir / "broken.json").string()), 2);
  EXPECT_EQ(exit_code("run " + refp), 3);
  EXPECT_FALSE(fs::exists(dir / "out_refuse.json"));
  EXPECT_EQ(exit_code(""), 2);
  EXPECT_EQ(exit_code("list-kinds"), 0);
  fs::remove_all(dir);
}
#endif
