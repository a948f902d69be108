#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fairsim/fairsim.hpp"

namespace fs = std::filesystem;
using namespace fairsim;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(FAIRSIM_CLI_PATH) + " " + args + " 2>/dev/null >/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir;
  static double pipeline_seconds;
  static bool pipeline_ok;

  static std::string p(const std::string& name) { return (dir / name).string(); }

  // synth -> apl (x5) -> train-rrm -> eval bias, timed once for the suite.
  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / "fairsim_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto t0 = std::chrono::steady_clock::now();
    const std::string store = "--store " + p("store");
    pipeline_ok =
        run("synth --n 2000 --dim 64 --seed 7 --out " + p("store")) == 0 &&
        run("apl " + store + " --attribute gender --token male --out " + p("male.json")) == 0 &&
        run("apl " + store + " --attribute gender --token female --polarity -1 --out " +
            p("female.json")) == 0 &&
        run("apl " + store + " --attribute glasses --out " + p("glasses.json")) == 0 &&
        run("apl " + store + " --attribute hat --out " + p("hat.json")) == 0 &&
        run("apl " + store + " --attribute bangs --out " + p("bangs.json")) == 0 &&
        run("train-rrm " + store + " --bias-attr gender --bias-protos " + p("male.json") + "," +
            p("female.json") + " --target-protos " + p("glasses.json") + "," + p("hat.json") +
            "," + p("bangs.json") + " --out " + p("rrm.frrm")) == 0 &&
        run("eval bias " + store + " --rrm " + p("rrm.frrm") + " --out " + p("bias_rrm.json")) == 0;
    pipeline_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  static void TearDownTestSuite() { fs::remove_all(dir); }
};

fs::path Cli::dir;
double Cli::pipeline_seconds = 0.0;
bool Cli::pipeline_ok = false;

}  // namespace

TEST_F(Cli, MissingRequiredFlagIsUsageError) {
  EXPECT_EQ(run("synth --n 10"), 2);
  EXPECT_EQ(run("eval bias --out x.json"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, FullPipelineUnderOneMinuteEmitsBiasReport) {
  ASSERT_TRUE(pipeline_ok);
  EXPECT_LT(pipeline_seconds, 60.0);
  const auto report = nlohmann::json::parse(slurp(p("bias_rrm.json")));
  EXPECT_EQ(report.at("k"), 100);
  EXPECT_EQ(report.at("per_query").size(), 12u);
  EXPECT_EQ(report.at("config_hash").get<std::string>().size(), 16u);
  const auto sidecar = nlohmann::json::parse(slurp(p("rrm.frrm.json")));
  EXPECT_EQ(sidecar.at("dim"), 64);
  EXPECT_LE(report.at("mean_bias").get<double>(), sidecar.at("epoch_metric")[0].get<double>());
}

TEST_F(Cli, IdentityRrmGivesByteIdenticalBiasReport) {
  ASSERT_TRUE(pipeline_ok);
  save_rrm(p("identity.frrm"), Rrm::identity("gender", 64));
  const std::string store = "--store " + p("store");
  ASSERT_EQ(run("eval bias " + store + " --out " + p("plain.json")), 0);
  ASSERT_EQ(run("eval bias " + store + " --rrm " + p("identity.frrm") + " --out " + p("ident.json")), 0);
  EXPECT_EQ(slurp(p("plain.json")), slurp(p("ident.json")));
  ASSERT_EQ(run("eval bias " + store + " --template-from-encoder toy --out " + p("templ.json")), 0);
  const auto a = nlohmann::json::parse(slurp(p("plain.json")));
  const auto b = nlohmann::json::parse(slurp(p("templ.json")));
  EXPECT_NEAR(a.at("mean_bias").get<double>(), b.at("mean_bias").get<double>(), 1e-6);
}

TEST_F(Cli, SameConfigSameBytes) {
  ASSERT_EQ(run("synth --n 200 --seed 3 --out " + p("s1")), 0);
  ASSERT_EQ(run("synth --n 200 --seed 3 --out " + p("s2")), 0);
  for (const char* f : {"store.femb", "meta.jsonl", "queries.jsonl", "texts.femb", "vocab.json",
                        "ground_truth.json", "manifest.json"})
    EXPECT_EQ(slurp(fs::path(p("s1")) / f), slurp(fs::path(p("s2")) / f)) << f;
  ASSERT_EQ(run("synth --n 200 --seed 4 --out " + p("s3")), 0);
  EXPECT_NE(slurp(fs::path(p("s1")) / "manifest.json"), slurp(fs::path(p("s3")) / "manifest.json"));
}

TEST_F(Cli, DataErrorsExitThree) {
  fs::create_directories(p("bad"));
  std::ofstream(p("bad") + "/store.femb", std::ios::binary) << "NOPE";
  std::ofstream(p("bad") + "/meta.jsonl") << "";
  EXPECT_EQ(run("eval bias --store " + p("bad") + " --out " + p("x.json")), 3);
  EXPECT_EQ(run("ingest --embeddings " + p("bad") + "/store.femb --meta " + p("bad") +
                "/meta.jsonl --out " + p("y")), 3);
}

TEST_F(Cli, DivergenceExitsFour) {
  ASSERT_TRUE(pipeline_ok);
  EXPECT_EQ(run("train-rrm --store " + p("store") + " --bias-attr gender --bias-protos " +
                p("male.json") + "," + p("female.json") + " --target-protos " + p("hat.json") +
                " --lr 1e300 --lambda 0 --max-epochs 2 --out " + p("boom.frrm")),
            4);
  EXPECT_TRUE(fs::exists(p("boom.frrm") + ".last_finite"));
  EXPECT_FALSE(fs::exists(p("boom.frrm")));
}

TEST_F(Cli, OtherSubcommandsProduceArtifacts) {
  ASSERT_TRUE(pipeline_ok);
  const std::string store = "--store " + p("store");
  EXPECT_EQ(run("gradcheck --loss rrm --dim 6 --seed 1 --out " + p("gc.json")), 0);
  EXPECT_TRUE(nlohmann::json::parse(slurp(p("gc.json"))).at("passed").get<bool>());
  EXPECT_EQ(run("gradcheck --loss apl --dim 5 --seed 2 --out " + p("gc2.json")), 0);
  EXPECT_EQ(run("eval recall " + store + " --out " + p("recall.json")), 0);
  EXPECT_EQ(run("eval recall " + store + " --rrm " + p("rrm.frrm") + " --label rrm --out " +
                p("recall_rrm.json")), 0);
  EXPECT_EQ(run("eval bias " + store + " --label vanilla --out " + p("bias_v.json")), 0);
  EXPECT_EQ(run("eval bias " + store + " --rrm " + p("rrm.frrm") + " --label rrm --out " +
                p("bias_r.json")), 0);
  EXPECT_EQ(run("report --vanilla-bias " + p("bias_v.json") + " --vanilla-recall " +
                p("recall.json") + " --row rrm,lambda=0.8," + p("bias_r.json") + "," +
                p("recall_rrm.json") + " --out " + p("summary.csv")), 0);
  const std::string csv = slurp(p("summary.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_NE(csv.find("rrm,lambda=0.8,"), std::string::npos);
  EXPECT_EQ(run("eval tas-bfd " + store + " --attr gender --bias-protos " + p("male.json") + "," +
                p("female.json") + " --target-protos " + p("hat.json") + " --out " + p("curve.csv")), 0);
  EXPECT_EQ(run("eval pca " + store + " --attr gender --out " + p("pca.csv")), 0);
  EXPECT_EQ(run("eval zeroshot " + store + " --attr gender --protos " + p("male.json") + "," +
                p("female.json") + " --out " + p("zs.json")), 0);
  EXPECT_EQ(run("baseline clip-clip " + store + " --m 2 --out " + p("mask.json")), 0);
  EXPECT_EQ(run("eval bias " + store + " --mask " + p("mask.json") + " --out " + p("bias_m.json")), 0);
  EXPECT_EQ(run("baseline bsce " + store + " --attr gender --out " + p("bsce.json")), 0);
  EXPECT_EQ(load_prototype(p("bsce.json")).encoder_id, "bsce");
  EXPECT_EQ(run("eval bias " + store + " --rrm " + p("rrm.frrm") + " --mask " + p("mask.json") +
                " --out " + p("z.json")), 2);

  // retrieve with a raw f32 query: the top hit for a stored row is that row.
  const auto stored = ingest(fs::path(p("store")) / "store.femb", fs::path(p("store")) / "meta.jsonl");
  const auto row = stored.row(5);
  std::ofstream(p("q.f32"), std::ios::binary)
      .write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size_bytes()));
  EXPECT_EQ(run("retrieve " + store + " --query-embedding " + p("q.f32") + " --k 3 --out " + p("hits.json")), 0);
  EXPECT_EQ(nlohmann::json::parse(slurp(p("hits.json"))).at("hits")[0].at("row"), 5);
}

TEST_F(Cli, ConfigFileMergesUnderFlagsAndRejectsUnknownKeys) {
  std::ofstream(p("cfg.json")) << R"({"synth": {"n": 150, "dim": 16}})";
  ASSERT_EQ(run("--config " + p("cfg.json") + " synth --dim 20 --out " + p("cfgstore")), 0);
  const auto m = nlohmann::json::parse(slurp(fs::path(p("cfgstore")) / "manifest.json"));
  EXPECT_EQ(m.at("count"), 150);
  EXPECT_EQ(m.at("dim"), 20);
  std::ofstream(p("bad.json")) << R"({"synth": {"rows": 150}})";
  EXPECT_EQ(run("--config " + p("bad.json") + " synth --out " + p("never")), 3);
}
