// cased: command-line front end for vocabulary-free classification,
// segmentation and evaluation.

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cased/caption_index.hpp"
#include "cased/classifier.hpp"
#include "cased/dense.hpp"
#include "cased/evaluate.hpp"
#include "cased/label_map.hpp"
#include "cased/metrics.hpp"
#include "cased/provider_client.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitProvider = 4;

struct GlobalOptions {
  std::string index;
  std::string provider = "mock:0";
  double alpha = cased::kDefaultAlpha;
  std::size_t topk = cased::kDefaultTopK;
  std::string templates;
  std::string scales = "2,4,8";
  std::string pos_keep = "noun";
  std::string meta_words;
  std::string lexicon;
  std::string output;
  std::string manifest;
  bool json_out = false;
  std::size_t jobs = 1;
  int timeout_s = 60;
};

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) cased::fail(cased::ErrorKind::IoError, "cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

std::vector<int> parse_scales(const std::string& list) {
  std::vector<int> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      cased::fail(cased::ErrorKind::UsageError, "bad --scales entry '" + item + "'");
    }
  }
  return out;
}

class Run {
 public:
  Run(std::string command, const GlobalOptions& g) : command_(std::move(command)), g_(g) {
    start_ = std::chrono::steady_clock::now();
  }

  const GlobalOptions& globals() const { return g_; }

  void input(const fs::path& p) {
    if (fs::is_regular_file(p)) inputs_[p.string()] = sha256_file(p);
  }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }
  void config(const std::string& key, json value) { config_[key] = std::move(value); }

  cased::ClassifierConfig classifier_config() {
    cased::ClassifierConfig cfg;
    cfg.alpha = g_.alpha;
    cfg.k = g_.topk;
    if (!g_.templates.empty()) {
      cfg.templates = cased::TemplateSet::load(g_.templates);
      input(g_.templates);
    }
    cfg.filter = filter_config();
    config("alpha", cfg.alpha);
    config("topk", cfg.k);
    config("templates", g_.templates.empty() ? json("default") : json(g_.templates));
    config("template_count", cfg.templates.size());
    return cfg;
  }

  cased::FilterConfig filter_config() {
    cased::FilterConfig f;
    try {
      f.keep_pos = cased::PosSet::parse(g_.pos_keep);
    } catch (const cased::Error& e) {
      cased::fail(cased::ErrorKind::UsageError, e.what());
    }
    const fs::path meta = g_.meta_words.empty() ? cased::default_meta_words_path() : fs::path(g_.meta_words);
    f.meta_words = cased::load_meta_words(meta);
    if (!g_.lexicon.empty()) f.pos_lexicon_path = g_.lexicon;
    input(meta);
    config("pos_keep", g_.pos_keep);
    config("meta_words", meta.string());
    config("lexicon", f.pos_lexicon_path.string());
    return f;
  }

  cased::GridSpec grid() {
    cased::GridSpec spec;
    spec.scales = parse_scales(g_.scales);
    try {
      spec.validate();
    } catch (const cased::Error& e) {
      cased::fail(cased::ErrorKind::UsageError, e.what());
    }
    config("scales", spec.scales);
    return spec;
  }

  cased::CaptionIndex load_index() {
    if (g_.index.empty()) cased::fail(cased::ErrorKind::UsageError, "--index is required");
    auto index = cased::CaptionIndex::load(g_.index);
    const fs::path meta = fs::path(g_.index) / "meta.json";
    config("index", g_.index);
    config("index_id", sha256_file(meta).substr(0, 16) + "-" + sha256_file(fs::path(g_.index) / "embeddings.vfeb").substr(0, 16));
    return index;
  }

  std::unique_ptr<cased::EmbeddingProvider> provider() {
    cased::ClientOptions opt;
    opt.timeout = std::chrono::seconds(g_.timeout_s);
    config("provider", g_.provider);
    return cased::make_provider(g_.provider, opt);
  }

  // Writes the run manifest next to the output (or to --manifest). Without an
  // output path it goes to stderr as one JSON line.
  void finish() {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json m = {{"command", command_},
              {"config", config_},
              {"inputs", inputs_},
              {"outputs", outputs_},
              {"wall_clock_seconds", seconds}};
    fs::path target = g_.manifest;
    if (target.empty() && !g_.output.empty()) {
      target = fs::is_directory(g_.output) ? fs::path(g_.output) / "manifest.json"
                                           : fs::path(g_.output + ".manifest.json");
    }
    if (target.empty()) {
      std::cerr << m.dump() << "\n";
    } else {
      cased::detail::write_file_bytes(target, m.dump(2) + "\n");
    }
  }

 private:
  std::string command_;
  const GlobalOptions& g_;
  std::chrono::steady_clock::time_point start_;
  json config_ = json::object();
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
};

void emit(const GlobalOptions& g, const std::string& text) {
  if (g.output.empty() || fs::is_directory(g.output)) {
    std::cout << text;
  } else {
    cased::detail::write_file_bytes(g.output, text);
  }
}

// ---- commands ----

struct BuildIndexArgs {
  std::string captions;
  std::string embeddings;
  std::string kind = "exact-flat";
  std::size_t lists = 64;
  std::size_t probe = 8;
  std::uint64_t seed = 0x5eed;
};

int cmd_build_index(Run& run, const BuildIndexArgs& a) {
  const auto& g = run.globals();
  if (g.index.empty()) cased::fail(cased::ErrorKind::UsageError, "--index DIR is required");
  run.input(a.captions);
  cased::CaptionStore store;
  if (!a.embeddings.empty()) {
    run.input(a.embeddings);
    store = cased::load_caption_file(a.embeddings, a.captions);
  } else {
    // No precomputed matrix: embed the captions with the provider.
    auto provider = run.provider();
    const auto texts = cased::read_caption_lines(a.captions);
    const auto embs = provider->embed_texts(cased::Role::JointText, texts);
    store = cased::make_caption_store(texts, embs);
  }
  const auto kind = cased::parse_index_kind(a.kind);
  std::optional<cased::IvfParams> params;
  if (kind == cased::IndexKind::QuantizedIvf) params = cased::IvfParams{a.lists, a.probe, a.seed, 12};
  const std::size_t renormalized = store.renormalized();
  auto index = cased::CaptionIndex::build(std::move(store), kind, params);
  index.save(g.index);
  run.output(g.index);
  run.config("kind", a.kind);
  if (params) run.config("ivf", {{"n_lists", a.lists}, {"n_probe", a.probe}, {"seed", a.seed}});
  json out = {{"index", g.index},
              {"kind", a.kind},
              {"count", index.size()},
              {"dim", index.dim()},
              {"renormalized", renormalized}};
  emit(g, out.dump(g.json_out ? 2 : -1) + "\n");
  return kExitOk;
}

std::vector<cased::Embedding> embed_image_files(cased::EmbeddingProvider& provider,
                                                const std::vector<std::string>& images, Run& run) {
  std::vector<cased::ImageRef> refs;
  for (const auto& p : images) {
    if (!fs::is_regular_file(p)) cased::fail(cased::ErrorKind::IoError, "cannot read image " + p);
    run.input(p);
    refs.emplace_back(fs::absolute(p));
  }
  return provider.embed_images(refs);
}

int cmd_classify(Run& run, const std::vector<std::string>& images) {
  const auto& g = run.globals();
  const auto index = run.load_index();
  auto cfg = run.classifier_config();
  auto provider = run.provider();
  const auto embs = embed_image_files(*provider, images, run);
  cased::Classifier classifier(index, cfg, *provider);
  std::vector<cased::Prediction> preds(images.size());
  cased::parallel_for(images.size(), g.jobs, [&](std::size_t i) { preds[i] = classifier.classify(embs[i]); });
  std::string text;
  if (g.json_out) {
    json arr = json::array();
    for (std::size_t i = 0; i < images.size(); ++i) {
      json j = preds[i].to_json();
      j["image"] = images[i];
      arr.push_back(std::move(j));
    }
    text = arr.dump(2) + "\n";
  } else {
    for (std::size_t i = 0; i < images.size(); ++i) text += images[i] + "\t" + preds[i].top() + "\n";
  }
  emit(g, text);
  if (!g.output.empty()) run.output(g.output);
  return kExitOk;
}

int cmd_segment(Run& run, const std::vector<std::string>& images) {
  const auto& g = run.globals();
  const auto index = run.load_index();
  auto cfg = run.classifier_config();
  const auto spec = run.grid();
  auto provider = run.provider();
  cased::Classifier classifier(index, cfg, *provider);
  const bool to_dir = !g.output.empty();
  if (to_dir) fs::create_directories(g.output);
  json arr = json::array();
  for (const auto& path : images) {
    run.input(path);
    const cased::Image img = cased::read_png(path);
    const auto seg = cased::segment_dense(img, *provider, classifier, spec, {g.jobs, g.json_out});
    json j = seg.to_json(g.json_out);
    j["image"] = path;
    if (to_dir) {
      const std::string stem = fs::path(path).stem().string();
      const fs::path png = fs::path(g.output) / (stem + ".png");
      const fs::path table = fs::path(g.output) / (stem + ".json");
      cased::write_label_map(seg.upsample(img.width, img.height), png, table);
      run.output(png);
      run.output(table);
      j["label_map"] = png.string();
    }
    arr.push_back(std::move(j));
  }
  std::cout << arr.dump(g.json_out ? 2 : -1) << "\n";
  return kExitOk;
}

int cmd_label_regions(Run& run, const std::string& image_path, const std::string& regions_path) {
  const auto& g = run.globals();
  const auto index = run.load_index();
  auto cfg = run.classifier_config();
  auto provider = run.provider();
  run.input(image_path);
  run.input(regions_path);
  const cased::Image img = cased::read_png(image_path);
  auto regions = cased::read_region_file(regions_path);
  cased::embed_regions(regions, img, *provider);
  cased::Classifier classifier(index, cfg, *provider);
  const auto labels = cased::label_regions(regions, classifier, g.jobs);
  json arr = json::array();
  for (const auto& l : labels) {
    json j = g.json_out ? l.prediction.to_json() : json{{"top", l.prediction.top()}};
    j["id"] = l.id;
    arr.push_back(std::move(j));
  }
  if (!g.output.empty()) {
    fs::create_directories(g.output);
    const std::string stem = fs::path(image_path).stem().string();
    const fs::path png = fs::path(g.output) / (stem + ".png");
    const fs::path table = fs::path(g.output) / (stem + ".json");
    cased::write_label_map(cased::paint_regions(regions, labels, img.width, img.height), png, table);
    run.output(png);
    run.output(table);
  }
  std::cout << arr.dump(g.json_out ? 2 : -1) << "\n";
  return kExitOk;
}

int cmd_propose_vocab(Run& run, const std::vector<std::string>& images) {
  const auto& g = run.globals();
  const auto index = run.load_index();
  auto filter = run.filter_config();
  run.config("topk", g.topk);
  auto provider = run.provider();
  const auto embs = embed_image_files(*provider, images, run);
  std::vector<std::vector<std::string>> names(images.size());
  cased::parallel_for(images.size(), g.jobs, [&](std::size_t i) {
    names[i] = cased::propose_vocabulary(embs[i], index, filter, g.topk);
  });
  json arr = json::array();
  for (std::size_t i = 0; i < images.size(); ++i) arr.push_back({{"image", images[i]}, {"vocabulary", names[i]}});
  emit(g, arr.dump(g.json_out ? 2 : -1) + "\n");
  if (!g.output.empty()) run.output(g.output);
  return kExitOk;
}

struct EvaluateArgs {
  std::string task = "classification";
  std::string pred;
  std::string gt;
  std::string kernel = "exact";
  std::string jaccard_pooling = "dataset";
  std::string recall_pooling = "image";
};

cased::Pooling parse_pooling(const std::string& s) {
  if (s == "dataset") return cased::Pooling::Dataset;
  if (s == "image") return cased::Pooling::PerImage;
  cased::fail(cased::ErrorKind::UsageError, "pooling must be 'dataset' or 'image'");
}

int cmd_evaluate(Run& run, const EvaluateArgs& a) {
  const auto& g = run.globals();
  cased::Task task;
  try {
    task = cased::parse_task(a.task);
  } catch (const cased::Error& e) {
    cased::fail(cased::ErrorKind::UsageError, e.what());
  }
  cased::SegmentationOptions opt{parse_pooling(a.jaccard_pooling), parse_pooling(a.recall_pooling)};
  run.input(a.pred);
  if (!a.gt.empty()) run.input(a.gt);
  run.config("task", a.task);
  run.config("kernel", a.kernel);
  run.config("jaccard_pooling", a.jaccard_pooling);
  run.config("recall_pooling", a.recall_pooling);
  std::unique_ptr<cased::EmbeddingProvider> provider;
  std::unique_ptr<cased::SimilarityKernel> kernel;
  if (a.kernel == "exact") {
    kernel = std::make_unique<cased::ExactMatchKernel>();
  } else if (a.kernel == "embedding") {
    provider = run.provider();
    kernel = std::make_unique<cased::EmbeddingKernel>(*provider);
  } else {
    cased::fail(cased::ErrorKind::UsageError, "--kernel must be 'exact' or 'embedding'");
  }
  const std::optional<fs::path> gt = a.gt.empty() ? std::nullopt : std::optional<fs::path>(a.gt);
  const auto report = cased::evaluate_dataset(a.pred, gt, task, *kernel, opt);
  json j = report.to_json();
  j["task"] = a.task;
  j["kernel"] = kernel->name();
  emit(g, j.dump(2) + "\n");
  if (!g.output.empty()) run.output(g.output);
  return kExitOk;
}

// Turns a `segment` JSON result (or the cell grid of one) into an indexed
// PNG + label table at the image's resolution, optionally with an RGB blend.
int cmd_export_overlay(Run& run, const std::string& cells_path, const std::string& image_path,
                       const std::string& blend_path, double opacity) {
  const auto& g = run.globals();
  if (g.output.empty()) cased::fail(cased::ErrorKind::UsageError, "--output PNG is required");
  run.input(cells_path);
  run.input(image_path);
  json j;
  try {
    j = json::parse(cased::detail::read_file_bytes(cells_path));
  } catch (const json::exception& e) {
    cased::fail(cased::ErrorKind::ParseError, cells_path + ": " + e.what());
  }
  if (j.is_array()) {
    if (j.empty()) cased::fail(cased::ErrorKind::ParseError, cells_path + ": empty result list");
    j = j.front();
  }
  const auto seg = cased::SegmentationMap::from_json(j);
  const cased::Image img = cased::read_png(image_path);
  const auto map = seg.upsample(img.width, img.height);
  const fs::path png = g.output;
  fs::path table = png;
  table.replace_extension(".json");
  cased::write_label_map(map, png, table);
  run.output(png);
  run.output(table);
  if (!blend_path.empty()) {
    cased::Image out = img;
    for (std::size_t i = 0; i < map.size(); ++i) {
      if (map.ignored(i)) continue;
      const auto c = cased::palette_color(static_cast<std::size_t>(map.pixels[i]));
      for (int ch = 0; ch < 3; ++ch) {
        auto& v = out.rgb[i * 3 + static_cast<std::size_t>(ch)];
        v = static_cast<std::uint8_t>((1.0 - opacity) * v + opacity * c[static_cast<std::size_t>(ch)] + 0.5);
      }
    }
    cased::write_png(blend_path, out);
    run.output(blend_path);
  }
  return kExitOk;
}

int exit_code_for(const cased::Error& e) {
  if (e.is_provider_side()) return kExitProvider;
  switch (e.kind()) {
    case cased::ErrorKind::UsageError:
    case cased::ErrorKind::InvalidParams:
      return kExitUsage;
    default:
      return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vocabulary-free image classification and segmentation by caption retrieval"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--index", g.index, "Caption index directory");
  app.add_option("--provider", g.provider, "mock:SEED[:PLANT], tcp:HOST:PORT or a provider command");
  app.add_option("--alpha", g.alpha, "Weight of the image-to-name score")->check(CLI::Range(0.0, 1.0));
  app.add_option("--topk", g.topk, "Captions retrieved per image")->check(CLI::PositiveNumber);
  app.add_option("--templates", g.templates, "Prompt template file, one per line")->check(CLI::ExistingFile);
  app.add_option("--scales", g.scales, "Comma-separated grid scales");
  app.add_option("--pos-keep", g.pos_keep, "Parts of speech kept as candidates (noun,adjective,verb)");
  app.add_option("--meta-words", g.meta_words, "Meta-word list file")->check(CLI::ExistingFile);
  app.add_option("--lexicon", g.lexicon, "POS lexicon TSV")->check(CLI::ExistingFile);
  app.add_option("--output", g.output, "Output file or directory");
  app.add_option("--manifest", g.manifest, "Run manifest path");
  app.add_flag("--json", g.json_out, "Full JSON output");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--timeout", g.timeout_s, "Provider timeout in seconds")->check(CLI::PositiveNumber);

  BuildIndexArgs build;
  auto* build_cmd = app.add_subcommand("build-index", "Build a caption index from captions (+ VFEB embeddings)");
  build_cmd->add_option("--captions", build.captions, "UTF-8 captions, one per line")->required()->check(CLI::ExistingFile);
  build_cmd->add_option("--embeddings", build.embeddings, "VFEB matrix aligned with the captions")->check(CLI::ExistingFile);
  build_cmd->add_option("--kind", build.kind, "exact-flat or quantized-ivf");
  build_cmd->add_option("--lists", build.lists, "IVF lists");
  build_cmd->add_option("--probe", build.probe, "IVF lists probed per query");
  build_cmd->add_option("--seed", build.seed, "IVF training seed");

  std::vector<std::string> images;
  auto* classify_cmd = app.add_subcommand("classify", "Name the content of each image");
  classify_cmd->add_option("images", images, "PNG images")->required();

  auto* segment_cmd = app.add_subcommand("segment", "Dense 16x16 labeling of each image");
  segment_cmd->add_option("images", images, "PNG images")->required();

  std::string image, regions;
  auto* regions_cmd = app.add_subcommand("label-regions", "Label class-agnostic regions of one image");
  regions_cmd->add_option("--image", image, "PNG image")->required();
  regions_cmd->add_option("--regions", regions, "Region JSONL file")->required()->check(CLI::ExistingFile);

  auto* propose_cmd = app.add_subcommand("propose-vocab", "Candidate vocabulary for each image");
  propose_cmd->add_option("images", images, "PNG images")->required();

  EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against ground truth");
  eval_cmd->add_option("--task", eval.task, "classification or segmentation");
  eval_cmd->add_option("--pred", eval.pred, "Prediction CSV or directory")->required();
  eval_cmd->add_option("--gt", eval.gt, "Ground-truth CSV or directory");
  eval_cmd->add_option("--kernel", eval.kernel, "exact or embedding");
  eval_cmd->add_option("--jaccard-pooling", eval.jaccard_pooling, "dataset or image");
  eval_cmd->add_option("--recall-pooling", eval.recall_pooling, "dataset or image");

  std::string cells, blend;
  double opacity = 0.5;
  auto* overlay_cmd = app.add_subcommand("export-overlay", "Write a segment result as an indexed PNG");
  overlay_cmd->add_option("--cells", cells, "JSON written by segment")->required()->check(CLI::ExistingFile);
  overlay_cmd->add_option("--image", image, "Source PNG (sets the resolution)")->required();
  overlay_cmd->add_option("--blend", blend, "Also write an RGB blend to this path");
  overlay_cmd->add_option("--opacity", opacity, "Blend opacity")->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  Run run(name, g);
  try {
    int rc = kExitOk;
    if (name == "build-index") rc = cmd_build_index(run, build);
    else if (name == "classify") rc = cmd_classify(run, images);
    else if (name == "segment") rc = cmd_segment(run, images);
    else if (name == "label-regions") rc = cmd_label_regions(run, image, regions);
    else if (name == "propose-vocab") rc = cmd_propose_vocab(run, images);
    else if (name == "evaluate") rc = cmd_evaluate(run, eval);
    else if (name == "export-overlay") rc = cmd_export_overlay(run, cells, image, blend, opacity);
    run.finish();
    return rc;
  } catch (const cased::Error& e) {
    std::cerr << "cased " << name << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "cased " << name << ": " << e.what() << "\n";
    return kExitData;
  }
}
