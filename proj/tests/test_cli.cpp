#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "instyle/cli.hpp"
#include "instyle/iemb.hpp"
#include "instyle/styler.hpp"
#include "instyle/synthgen.hpp"
#include "support.hpp"

using namespace instyle;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const fs::path& path) { return path.string(); }

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  f << j.dump();
}

// Small dataset config so the stage chain runs quickly.
json small_config() {
  return {{"epochs", 2},
          {"batch_size", 16},
          {"synth", {{"n_styles", 2}, {"queries_per_style", 96}, {"pool_size", 1200}}}};
}

}  // namespace

TEST_CASE("synth writes the default dataset and is repeatable") {
  const auto dir = testing::scratch_dir("cli_synth");
  auto r = cli({"synth", "--out", p(dir / "a"), "--seed", "7"});
  REQUIRE(r.code == 0);
  CHECK(r.err.find("event=synth") != std::string::npos);
  std::size_t iemb_files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) iemb_files += e.path().extension() == ".iemb";
  CHECK(iemb_files == 6);
  CHECK(fs::exists(dir / "a" / "truth.jsonl"));
  REQUIRE(cli({"synth", "--out", p(dir / "b"), "--seed", "7"}).code == 0);
  CHECK(testing::hash_tree(dir / "a") == testing::hash_tree(dir / "b"));
}

TEST_CASE("invalid held-out fraction is a config error") {
  const auto dir = testing::scratch_dir("cli_bad");
  const auto r = cli({"synth", "--out", p(dir), "--held-out", "1.5"});
  CHECK(r.code == 2);
  CHECK(r.err.find("ConfigInvalid") != std::string::npos);
  CHECK(r.err.find("held_out_fraction") != std::string::npos);
}

TEST_CASE("usage errors") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"match", "--queries", "x"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
  const auto dir = testing::scratch_dir("cli_cfg");
  write_json(dir / "bad.json", {{"batch_size", 1}});
  CHECK(cli({"synth", "--out", p(dir / "d"), "--config", p(dir / "bad.json")}).code == 2);
  std::ofstream(dir / "broken.json") << "{not json";
  CHECK(cli({"synth", "--out", p(dir / "d"), "--config", p(dir / "broken.json")}).code == 2);
  CHECK(cli({"synth", "--out", p(dir / "d"), "--config", p(dir / "missing.json")}).code == 2);
}

TEST_CASE("stage by stage") {
  const auto dir = testing::scratch_dir("cli_stages");
  write_json(dir / "cfg.json", small_config());
  const auto cfg = p(dir / "cfg.json");
  const auto data = dir / "data";
  REQUIRE(cli({"synth", "--config", cfg, "--out", p(data)}).code == 0);
  const auto inputs_before = testing::hash_tree(data);

  auto r = cli({"match", "--config", cfg, "--queries", p(data / "style0_queries.iemb"), "--clips",
                p(data / "pool.iemb"), "--out", p(dir / "s0_pseudo.jsonl"), "--tag", "style0"});
  REQUIRE(r.code == 0);
  CHECK(r.err.find("pairs=72") != std::string::npos);

  r = cli({"stylize", "--config", cfg, "--pairs", p(dir / "s0_pseudo.jsonl"), "--queries",
           p(data / "style0_queries.iemb"), "--clips", p(data / "pool.iemb"), "--out", p(dir / "s0_styled.iemb"),
           "--style-out", p(dir / "s0.styl"), "--tag", "style0"});
  REQUIRE(r.code == 0);
  CHECK(load_style(dir / "s0.styl").style_tag == "style0");

  r = cli({"filter", "--config", cfg, "--styled", p(dir / "s0_styled.iemb"), "--clips", p(data / "pool.iemb"),
           "--out", p(dir / "s0_gen.jsonl"), "--tag", "style0"});
  REQUIRE(r.code == 0);
  const auto gen = load_generated_pairs(dir / "s0_gen.jsonl");
  CHECK(gen.threshold == 0.28);
  CHECK(gen.pairs.size() > 72);

  r = cli({"sweep", "--styled", p(dir / "s0_styled.iemb"), "--clips", p(data / "pool.iemb")});
  REQUIRE(r.code == 0);
  const auto sweep = json::parse(r.out).at("sweep");
  REQUIRE(sweep.size() == 5);
  CHECK(sweep[2].at("retained").get<std::size_t>() == gen.pairs.size());

  r = cli({"train", "--config", cfg, "--pairs", p(dir / "s0_gen.jsonl"), "--styled", p(dir / "s0_styled.iemb"),
           "--clips", p(data / "pool.iemb"), "--out", p(dir / "a.adpt"), "--log", p(dir / "loss.csv")});
  REQUIRE(r.code == 0);
  CHECK(r.err.find("event=epoch epoch=1") != std::string::npos);

  const std::vector<std::string> eval{"eval", "--queries", p(data / "style0_test.iemb"), "--candidates",
                                      p(data / "test_clips.iemb"), "--truth", p(data / "truth.jsonl")};
  auto zs_args = eval;
  zs_args.push_back("--zero-shot");
  auto model_args = eval;
  model_args.insert(model_args.end(), {"--model", p(dir / "a.adpt")});
  const auto zs = cli(zs_args), trained = cli(model_args);
  REQUIRE(zs.code == 0);
  REQUIRE(trained.code == 0);
  const auto zj = json::parse(zs.out), tj = json::parse(trained.out);
  CHECK(zj.at("query_count").get<int>() == 24);
  for (const char* key : {"r1", "r5", "r10", "median_rank", "query_count"}) CHECK(tj.contains(key));
  CHECK(tj.at("r1").get<double>() >= zj.at("r1").get<double>());

  auto both = model_args;
  both.push_back("--zero-shot");
  CHECK(cli(both).code == 2);

  CHECK(testing::hash_tree(data) == inputs_before);
}

TEST_CASE("flags win over the config file") {
  const auto dir = testing::scratch_dir("cli_override");
  const auto set = testing::random_unit_set(20, 4, 1);
  iemb::save_embeddings(dir / "a.iemb", set);
  write_json(dir / "cfg.json", {{"threshold", 0.5}});
  REQUIRE(cli({"filter", "--config", p(dir / "cfg.json"), "--styled", p(dir / "a.iemb"), "--clips",
               p(dir / "a.iemb"), "--out", p(dir / "g.jsonl")})
              .code == 0);
  CHECK(load_generated_pairs(dir / "g.jsonl").threshold == 0.5);
  REQUIRE(cli({"filter", "--config", p(dir / "cfg.json"), "--threshold", "0.3", "--styled", p(dir / "a.iemb"),
               "--clips", p(dir / "a.iemb"), "--out", p(dir / "g.jsonl")})
              .code == 0);
  CHECK(load_generated_pairs(dir / "g.jsonl").threshold == 0.3);
}

TEST_CASE("zero-shot eval on an identity fixture") {
  const auto dir = testing::scratch_dir("cli_identity");
  const auto eye = testing::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  iemb::save_embeddings(dir / "q.iemb", eye);
  std::ofstream t(dir / "truth.jsonl");
  t << json{{"kind", "synth_truth"}, {"config", json::object()}, {"styles", {"s"}}}.dump() << '\n';
  for (int i = 0; i < 3; ++i) t << json{{"style", "s"}, {"query_id", i}, {"clip_id", i}}.dump() << '\n';
  t.close();
  const auto r = cli({"eval", "--zero-shot", "--queries", p(dir / "q.iemb"), "--candidates", p(dir / "q.iemb"),
                      "--truth", p(dir / "truth.jsonl"), "--ranks-csv", p(dir / "ranks.csv")});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out).at("r1").get<double>() == 100.0);
  CHECK(fs::exists(dir / "ranks.csv"));
}

TEST_CASE("a high threshold on weak pairs warns but succeeds") {
  const auto dir = testing::scratch_dir("cli_weak");
  iemb::save_embeddings(dir / "s.iemb", testing::random_unit_set(50, 16, 1));
  iemb::save_embeddings(dir / "c.iemb", testing::random_unit_set(50, 16, 2));
  const auto r = cli({"filter", "--threshold", "0.99", "--styled", p(dir / "s.iemb"), "--clips",
                      p(dir / "c.iemb"), "--out", p(dir / "g.jsonl")});
  CHECK(r.code == 0);
  CHECK(r.err.find("event=warning") != std::string::npos);
  const auto g = load_generated_pairs(dir / "g.jsonl");
  CHECK(g.pairs.empty());
  CHECK(g.candidates == 50);
}

TEST_CASE("missing inputs exit 2, stage failures exit 1 with the error name") {
  const auto dir = testing::scratch_dir("cli_fail");
  auto r = cli({"match", "--queries", p(dir / "nope.iemb"), "--clips", p(dir / "nope.iemb"), "--out",
                p(dir / "p.jsonl")});
  CHECK(r.code == 2);
  iemb::save_embeddings(dir / "big.iemb", testing::random_unit_set(10, 4, 1));
  iemb::save_embeddings(dir / "small.iemb", testing::random_unit_set(3, 4, 2));
  r = cli({"match", "--queries", p(dir / "big.iemb"), "--clips", p(dir / "small.iemb"), "--out",
           p(dir / "p.jsonl")});
  CHECK(r.code == 1);
  CHECK(r.err.find("PoolExhausted") != std::string::npos);
  std::ofstream(dir / "junk.iemb") << "XXXXjunk";
  r = cli({"match", "--queries", p(dir / "junk.iemb"), "--clips", p(dir / "small.iemb"), "--out",
           p(dir / "p.jsonl")});
  CHECK(r.code == 1);
  CHECK(r.err.find("MagicMismatch") != std::string::npos);
}

TEST_CASE("pipeline report sections") {
  const auto dir = testing::scratch_dir("cli_pipeline");
  auto cfg = small_config();
  cfg["synth"]["n_styles"] = 1;
  write_json(dir / "k1.json", cfg);
  auto r = cli({"pipeline", "--config", p(dir / "k1.json"), "--out", p(dir / "k1")});
  REQUIRE(r.code == 0);
  auto report = json::parse(r.out);
  CHECK(report.contains("zero_shot"));
  CHECK(report.contains("in_style"));
  CHECK_FALSE(report.contains("mixed"));
  CHECK(json::parse(std::ifstream(dir / "k1" / "report.json")) == report);
  CHECK(fs::exists(dir / "k1" / "adapter_in_style.adpt"));
  CHECK(fs::exists(dir / "k1" / "style0_generated.jsonl"));

  write_json(dir / "k2.json", small_config());
  r = cli({"pipeline", "--config", p(dir / "k2.json"), "--out", p(dir / "k2")});
  REQUIRE(r.code == 0);
  report = json::parse(r.out);
  CHECK(report.contains("mixed"));
  CHECK(report.at("pairs").size() == 2);

  // loading the written dataset gives the same report
  r = cli({"pipeline", "--config", p(dir / "k2.json"), "--data", p(dir / "k2" / "data"), "--out", p(dir / "k2b")});
  REQUIRE(r.code == 0);
  auto loaded = json::parse(r.out);
  CHECK(loaded.at("in_style") == report.at("in_style"));
  CHECK(loaded.at("mixed") == report.at("mixed"));
}

TEST_CASE("default K=2 seed 7 pipeline matches the recorded report") {
  const auto dir = testing::scratch_dir("cli_golden");
  const auto r = cli({"pipeline", "--seed", "7", "--out", p(dir)});
  REQUIRE(r.code == 0);
  const auto golden = json::parse(std::ifstream(fs::path(INSTYLE_FIXTURES) / "pipeline_k2_seed7.json"));
  const auto got = json::parse(r.out);
  CHECK(got.at("zero_shot") == golden.at("zero_shot"));
  CHECK(got.at("in_style") == golden.at("in_style"));
  CHECK(got.at("mixed") == golden.at("mixed"));
  CHECK(got.at("pairs") == golden.at("pairs"));
  CHECK(got == golden);
}
