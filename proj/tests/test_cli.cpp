#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "cased/dense.hpp"
#include "cased/evaluate.hpp"
#include "fixtures.hpp"

using namespace cased;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

Result run(const std::string& args) {
  static int n = 0;
  const fs::path err_file = fs::temp_directory_path() / ("cased_cli_err_" + std::to_string(++n));
  const std::string cmd = quote(CASED_CLI) + " " + args + " 2>" + quote(err_file.string());
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  for (std::size_t k; (k = std::fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, k);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = detail::read_file_bytes(err_file);
  fs::remove(err_file);
  return r;
}

// Index, plant file and a few images shared by every test.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "cased_cli";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    json plant = {{"dim", 64},
                  {"concepts",
                   {{{"name", "cat"}, {"aliases", {"kitten"}}, {"color", fixtures::kCatColor}},
                    {{"name", "dog"}, {"aliases", {"puppy"}}, {"color", fixtures::kDogColor}}}}};
    detail::write_file_bytes(dir_ / "plant.json", plant.dump());
    const auto world = fixtures::planted_world();
    write_caption_lines(dir_ / "captions.txt", world.captions);
    std::mt19937_64 rng(1);
    write_png(dir_ / "cat.png", fixtures::planted_image(fixtures::kCatColor, 32, 32, 0.1, rng));
    write_png(dir_ / "dog.png", fixtures::planted_image(fixtures::kDogColor, 32, 32, 0.1, rng));
    write_png(dir_ / "split.png", fixtures::split_image(fixtures::kCatColor, fixtures::kDogColor, 64, 64, 0.05, rng));
    const auto r = run("--provider " + provider() + " --index " + index() + " build-index --captions " +
                       quote((dir_ / "captions.txt").string()));
    ASSERT_EQ(r.code, 0) << r.err;
  }

  static std::string provider() { return quote("mock:7:" + (dir_ / "plant.json").string()); }
  static std::string index() { return quote((dir_ / "index").string()); }
  static std::string path(const std::string& name) { return quote((dir_ / name).string()); }
  static std::string common() { return "--provider " + provider() + " --index " + index() + " "; }

  static fs::path dir_;
};

fs::path CliTest::dir_;

}  // namespace

TEST_F(CliTest, BuildIndexReportsCountsAndWritesFiles) {
  EXPECT_TRUE(fs::exists(dir_ / "index" / "meta.json"));
  const auto index = CaptionIndex::load(dir_ / "index");
  EXPECT_EQ(index.size(), 240u);
  EXPECT_EQ(index.dim(), 64u);
}

TEST_F(CliTest, BuildIndexFromVfeb) {
  const auto world = fixtures::planted_world();
  save_caption_files(world.index.store(), dir_ / "pre.vfeb", dir_ / "pre.txt");
  const auto r = run("--index " + path("pre_index") + " --output " + path("pre.out") + " build-index --captions " +
                     path("pre.txt") + " --embeddings " + path("pre.vfeb") + " --kind quantized-ivf --lists 4 --probe 4");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = json::parse(detail::read_file_bytes(dir_ / "pre.out"));
  EXPECT_EQ(out["count"], 240);
  EXPECT_EQ(out["kind"], "quantized-ivf");
  const auto manifest = json::parse(detail::read_file_bytes(dir_ / "pre.out.manifest.json"));
  EXPECT_EQ(manifest["command"], "build-index");
  EXPECT_EQ(manifest["inputs"].size(), 2u);
  EXPECT_EQ(manifest["inputs"][(dir_ / "pre.vfeb").string()].get<std::string>().size(), 64u);  // sha-256 hex
}

TEST_F(CliTest, ClassifyRecoversPlantedLabels) {
  const auto r = run(common() + "classify " + path("cat.png") + " " + path("dog.png"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, (dir_ / "cat.png").string() + "\tcat\n" + (dir_ / "dog.png").string() + "\tdog\n");
  // Manifest goes to stderr when there is no output path.
  const auto manifest = json::parse(r.err);
  EXPECT_EQ(manifest["command"], "classify");
  EXPECT_EQ(manifest["config"]["alpha"], 0.7);
  EXPECT_TRUE(manifest.contains("wall_clock_seconds"));
}

TEST_F(CliTest, ClassifyJsonIsDeterministicAcrossJobs) {
  const std::string images = path("cat.png") + " " + path("dog.png") + " " + path("split.png");
  const auto a = run(common() + "--json --jobs 1 classify " + images);
  const auto b = run(common() + "--json --jobs 3 classify " + images);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto j = json::parse(a.out);
  ASSERT_EQ(j.size(), 3u);
  EXPECT_EQ(j[0]["top"], "cat");
  EXPECT_EQ(j[0]["retrieved_caption_ids"].size(), 10u);
}

TEST_F(CliTest, SegmentWritesLabelMapsAndOverlay) {
  const auto r = run(common() + "--output " + path("seg") + " segment " + path("split.png"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0]["cells"].size(), 16u);
  EXPECT_EQ(j[0]["cells"][4][1], "cat");
  EXPECT_EQ(j[0]["cells"][4][14], "dog");
  const auto map = read_label_map(dir_ / "seg" / "split.png", dir_ / "seg" / "split.json", false);
  EXPECT_EQ(map.width, 64);
  EXPECT_TRUE(fs::exists(dir_ / "seg" / "manifest.json"));

  detail::write_file_bytes(dir_ / "cells.json", r.out);
  const auto o = run("--output " + path("overlay.png") + " export-overlay --cells " + path("cells.json") +
                     " --image " + path("split.png") + " --blend " + path("blend.png"));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto overlay = read_label_map(dir_ / "overlay.png", dir_ / "overlay.json", false);
  EXPECT_EQ(overlay.to_strings(), map.to_strings());
  EXPECT_EQ(read_png(dir_ / "blend.png").width, 64);
}

TEST_F(CliTest, LabelRegionsAndProposeVocab) {
  detail::write_file_bytes(dir_ / "regions.jsonl", "{\"id\": 1, \"bbox\": [0, 0, 20, 64]}\n{\"id\": 2, \"bbox\": [44, 0, 64, 64]}\n");
  const auto r = run(common() + "label-regions --image " + path("split.png") + " --regions " + path("regions.jsonl"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j[0]["top"], "cat");
  EXPECT_EQ(j[1]["top"], "dog");
  EXPECT_EQ(j[1]["id"], 2);

  const auto p = run(common() + "propose-vocab " + path("dog.png"));
  ASSERT_EQ(p.code, 0) << p.err;
  const auto v = json::parse(p.out)[0]["vocabulary"].get<std::vector<std::string>>();
  EXPECT_NE(std::find(v.begin(), v.end(), "dog"), v.end());
}

TEST_F(CliTest, EvaluateClassificationAndSegmentation) {
  detail::write_file_bytes(dir_ / "preds.csv", "id,prediction,ground_truth\n1,cat,cat\n2,kitten,cat\n3,dog,dog\n");
  const auto r = run("evaluate --pred " + path("preds.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_DOUBLE_EQ(j["metrics"]["cluster_accuracy"].get<double>(), 1.0);
  EXPECT_NEAR(j["metrics"]["semantic_iou"].get<double>(), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(j["kernel"], "exact");

  const auto e = run("--provider " + provider() + " evaluate --pred " + path("preds.csv") + " --kernel embedding");
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_GT(json::parse(e.out)["metrics"]["semantic_similarity"].get<double>(), 0.9);

  ASSERT_EQ(run(common() + "--output " + path("seg") + " segment " + path("split.png")).code, 0);
  fs::create_directories(dir_ / "gt_seg");
  std::vector<std::string> labels(256);
  for (int i = 0; i < 256; ++i) labels[static_cast<std::size_t>(i)] = (i % 16) < 8 ? "cat" : "dog";
  write_label_map(SegmentationMap{16, labels, {}}.upsample(64, 64), dir_ / "gt_seg" / "split.png",
                  dir_ / "gt_seg" / "split.json");
  const auto s = run("--output " + path("seg_report.json") + " evaluate --task segmentation --pred " +
                     path("seg") + " --gt " + path("gt_seg"));
  ASSERT_EQ(s.code, 0) << s.err;
  const auto report = json::parse(detail::read_file_bytes(dir_ / "seg_report.json"));
  EXPECT_GE(report["metrics"]["HJI"].get<double>(), 0.8);
  EXPECT_DOUBLE_EQ(report["metrics"]["HR"].get<double>(), 1.0);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("classify").code, 2);
  EXPECT_EQ(run("--alpha 2 " + common() + "classify " + path("cat.png")).code, 2);
  EXPECT_EQ(run("classify " + path("cat.png")).code, 2);  // no --index
  EXPECT_EQ(run("evaluate --task detection --pred " + path("preds.csv")).code, 2);
  EXPECT_EQ(run("--index " + path("ivf_bad") + " build-index --captions " + path("captions.txt") +
                " --kind quantized-ivf --lists 1000 --probe 8")
                .code,
            2);
  EXPECT_EQ(run(common() + "classify " + path("missing.png")).code, 3);
  EXPECT_EQ(run("--provider mock:1 --index " + path("nowhere") + " classify " + path("cat.png")).code, 3);
  detail::write_file_bytes(dir_ / "bad.csv", "id,prediction,ground_truth\n1,\"oops\n");
  EXPECT_EQ(run("evaluate --pred " + path("bad.csv")).code, 3);
  EXPECT_EQ(run("--provider 'exit 0' --index " + index() + " classify " + path("cat.png")).code, 4);
  EXPECT_EQ(run("--provider tcp:127.0.0.1:1 --index " + index() + " classify " + path("cat.png")).code, 4);
}

TEST_F(CliTest, SubprocessProviderMatchesInProcessMock) {
  const std::string server = quote(std::string(MOCK_SERVER) + " --seed 7 --plant " + (dir_ / "plant.json").string());
  const auto a = run("--provider " + server + " --index " + index() + " --json classify " + path("cat.png"));
  const auto b = run(common() + "--json classify " + path("cat.png"));
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
}
