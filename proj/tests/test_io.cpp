#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "isswalk/config.hpp"
#include "isswalk/io.hpp"
#include "isswalk/plot.hpp"

using namespace isswalk;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "isswalk_unit" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + ISSWALK_CLI + " " + args + " > /dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string cfg(const std::string& name) { return std::string(ISSWALK_SOURCE_DIR) + "/configs/" + name; }

}  // namespace

TEST(Hash, KnownVectors) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Csv, RoundTripWithSchemaColumn) {
  const fs::path d = scratch("csv");
  put(d / "a.csv", csv_text({"x", "y"}, {{"1", "2.5"}, {"3", "nan"}}));
  const Csv c = read_csv(d / "a.csv");
  ASSERT_EQ(c.header.size(), 3u);
  EXPECT_EQ(c.header[0], "schema_version");
  EXPECT_EQ(c.rows.size(), 2u);
  EXPECT_DOUBLE_EQ(c.num(0, "y"), 2.5);
  EXPECT_TRUE(std::isnan(c.num(1, "y")));
  EXPECT_FALSE(c.has("z"));
}

TEST(Csv, RaggedRowIsSchemaMismatch) {
  const fs::path d = scratch("ragged");
  put(d / "bad.csv", "a,b\n1,2\n3\n");
  EXPECT_THROW(read_csv(d / "bad.csv"), SchemaMismatch);
}

TEST(Csv, NumberFormattingIsStable) {
  EXPECT_EQ(fmt_num(0.1), "0.1");
  EXPECT_EQ(fmt_num(1.0 / 3), "0.333333333333");
}

TEST(Manifest, KeepsEarlierFilesAndHashes) {
  const fs::path d = scratch("manifest");
  {
    OutputSet o(d);
    o.write("a.txt", "abc");
    o.write_manifest("first", "PASS");
  }
  {
    OutputSet o(d);
    o.write("b.txt", "");
    o.write_manifest("second", "FAIL");
  }
  const Json m = Json::parse(read_file(d / "manifest.json"));
  ASSERT_EQ(m["files"].size(), 2u);
  EXPECT_EQ(m["files"][0]["path"], "a.txt");
  EXPECT_EQ(m["files"][0]["sha256"], sha256_hex("abc"));
  EXPECT_EQ(m["files"][1]["bytes"], 0);
  EXPECT_EQ(m["runs"].size(), 2u);
  EXPECT_EQ(m["runs"][1]["verdict"], "FAIL");
}

TEST(Config, OverridesParseAsJsonOrString) {
  Json t = default_config();
  apply_override(t, "controller.epsilon=3.5");
  apply_override(t, "controller.kind=pd_time");
  apply_override(t, "pd_bench.clock_scales=[0.9,1.1]");
  EXPECT_EQ(t["controller"]["epsilon"], 3.5);
  EXPECT_EQ(t["controller"]["kind"], "pd_time");
  EXPECT_EQ(t["pd_bench"]["clock_scales"].size(), 2u);
  EXPECT_THROW(apply_override(t, "controller.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(t, "controller.epsilon=fast"), ConfigError);
  EXPECT_THROW(apply_override(t, "controller..epsilon=1"), ConfigError);
  EXPECT_THROW(apply_override(t, "novalue"), ConfigError);
}

TEST(Config, SyntaxErrorsCarryLineAndColumn) {
  try {
    parse_config_text("{\n  \"a\": 1,\n  \"b\": ]\n}", "x.json");
    FAIL() << "no throw";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.message().rfind("x.json:3:", 0), 0u) << e.message();
  }
}

TEST(Config, TypedRangeChecks) {
  EXPECT_THROW(load_config("", {"controller.epsilon=-1"}), ConfigError);
  EXPECT_THROW(load_config("", {"controller.kind=magic"}), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/x.json"), ConfigError);
  const ExperimentConfig c = load_config(cfg("pd_walk.json"));
  EXPECT_EQ(c.controller.kind, ControllerKind::kPdTime);
  EXPECT_EQ(c.controller.gains.kp.size(), 6);
}

TEST(Plot, EmptyCsvGivesEmptyAxes) {
  const fs::path d = scratch("plot_empty");
  put(d / "e.csv", "");
  const Csv c = read_csv(d / "e.csv");
  for (auto k : {PlotKind::kTrace, PlotKind::kGainCurve, PlotKind::kPhasePortrait, PlotKind::kHistogram}) {
    const std::string svg = render_plot(c, k);
    EXPECT_NE(svg.find("<svg"), std::string::npos);
    EXPECT_EQ(svg.find("<polyline"), std::string::npos);
  }
}

TEST(Plot, MissingColumnIsSchemaMismatch) {
  const fs::path d = scratch("plot_bad");
  put(d / "b.csv", "foo,bar\n1,2\n");
  EXPECT_THROW(render_plot(read_csv(d / "b.csv"), PlotKind::kHistogram), SchemaMismatch);
  EXPECT_THROW(plot_kind_from_string("pie"), ConfigError);
}

TEST(Plot, DeterministicOutput) {
  const fs::path d = scratch("plot_det");
  put(d / "g.csv", csv_text({"magnitude", "mean", "ci_lo", "ci_hi", "iota"},
                            {{"0", "0", "0", "0", "0"}, {"0.01", "0.3", "0.25", "0.35", "0.3"}}));
  const Csv c = read_csv(d / "g.csv");
  const std::string a = render_plot(c, PlotKind::kGainCurve);
  EXPECT_EQ(a, render_plot(c, PlotKind::kGainCurve));
  EXPECT_NE(a.find("<polyline"), std::string::npos);
}

TEST(Gait, ArtifactJsonRoundTrip) {
  GaitArtifact g;
  g.epsilon = 7;
  g.spectral_radius = 0.35;
  g.x_star.q = Vec::LinSpaced(9, 0, 1);
  g.x_star.qdot = Vec::LinSpaced(9, -1, 0);
  const GaitArtifact back = json_gait(Json::parse(gait_json(g).dump()));
  EXPECT_EQ(back.x_star.q, g.x_star.q);
  EXPECT_EQ(back.x_star.qdot, g.x_star.qdot);
  EXPECT_EQ(back.spectral_radius, 0.35);
  Json bad = gait_json(g);
  bad["schema_version"] = 99;
  EXPECT_THROW(json_gait(bad), SchemaMismatch);
}

TEST(Cli, ExitCodesAndOutputs) {
  const fs::path d = scratch("cli");
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("bogus"), 1);
  EXPECT_EQ(run_cli("simulate -c /nonexistent.json -o " + (d / "x").string()), 1);
  EXPECT_FALSE(fs::exists(d / "x"));
  EXPECT_EQ(run_cli("simulate --set controller.nope=1 -o " + (d / "x").string()), 1);
  put(d / "bad.json", "{\n  \"controller\": {\"epsilon\": }\n}\n");
  EXPECT_EQ(run_cli("simulate -c " + (d / "bad.json").string()), 1);

  // Zero steps: header only, written where HZD_OUT_DIR points.
  EXPECT_EQ(run_cli("simulate --steps 0", "HZD_OUT_DIR=" + (d / "zero").string()), 0);
  const Csv tr = read_csv(d / "zero" / "trace.csv");
  EXPECT_TRUE(tr.rows.empty());
  EXPECT_EQ(tr.header.front(), "schema_version");
  EXPECT_TRUE(fs::exists(d / "zero" / "manifest.json"));
  EXPECT_EQ(run_cli("plot --kind trace --in " + (d / "zero" / "trace.csv").string() + " -o " +
                    (d / "zero").string()),
            0);
  EXPECT_NE(read_file(d / "zero" / "trace.svg").find("<svg"), std::string::npos);
  EXPECT_EQ(run_cli("plot --kind pie --in " + (d / "zero" / "trace.csv").string()), 1);

  // Strict check above its bound fails the analysis.
  EXPECT_EQ(run_cli("lyap-check -c " + cfg("chain5.json") + " --set lyap.kappa_scale=10 -o " +
                    (d / "strict").string()),
            2);
  EXPECT_EQ(run_cli("lyap-check -c " + cfg("chain5.json") + " -o " + (d / "strict_ok").string()), 0);
}
