#pragma once

// Dataset-level evaluation: reads prediction / ground-truth files and
// produces a MetricReport.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cased/label_map.hpp"
#include "cased/metrics.hpp"
#include "cased/vfeb.hpp"

namespace cased {

// RFC 4180 style: quoted fields may contain commas, quotes ("") and newlines.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, in_quotes = false, any = false;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    quoted = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      if (!field.empty() || quoted) fail(ErrorKind::ParseError, "stray quote in CSV field");
      in_quotes = quoted = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_row();
      any = false;
    } else if (c == '\r') {
      // tolerated before \n
    } else {
      if (quoted) fail(ErrorKind::ParseError, "text after closing quote in CSV field");
      field.push_back(c);
    }
  }
  if (in_quotes) fail(ErrorKind::ParseError, "unterminated quoted CSV field");
  if (any || !row.empty()) end_row();
  return rows;
}

namespace detail {
inline std::size_t column(const std::vector<std::string>& header, const std::string& name,
                          const std::filesystem::path& path) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  fail(ErrorKind::ParseError, path.string() + ": missing column '" + name + "'");
}

// id -> value of `value_column`; duplicate ids are an error.
inline std::map<std::string, std::string> read_id_column(const std::filesystem::path& path,
                                                         const std::string& value_column) {
  const auto rows = parse_csv(read_file_bytes(path));
  if (rows.empty()) fail(ErrorKind::ParseError, path.string() + ": empty CSV");
  const std::size_t id_col = column(rows[0], "id", path);
  const std::size_t v_col = column(rows[0], value_column, path);
  std::map<std::string, std::string> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != rows[0].size()) {
      fail(ErrorKind::ParseError, path.string() + ": row " + std::to_string(r + 1) + " has " +
                                      std::to_string(row.size()) + " fields");
    }
    if (!out.emplace(row[id_col], row[v_col]).second) {
      fail(ErrorKind::ParseError, path.string() + ": duplicate id '" + row[id_col] + "'");
    }
  }
  return out;
}

inline bool has_column(const std::filesystem::path& path, const std::string& name) {
  const auto rows = parse_csv(read_file_bytes(path));
  return !rows.empty() && std::find(rows[0].begin(), rows[0].end(), name) != rows[0].end();
}
}  // namespace detail

// Classification files are CSV with columns id,prediction,ground_truth. When
// `gt_file` is given, ground truth comes from its id,ground_truth columns and
// ids must match one-to-one.
inline LabelPairBatch read_classification_pairs(const std::filesystem::path& pred_file,
                                                const std::optional<std::filesystem::path>& gt_file) {
  const auto preds = detail::read_id_column(pred_file, "prediction");
  const auto gts = detail::read_id_column(gt_file ? *gt_file : pred_file, "ground_truth");
  LabelPairBatch batch;
  for (const auto& [id, p] : preds) {
    auto it = gts.find(id);
    if (it == gts.end()) fail(ErrorKind::ParseError, "no ground truth for id '" + id + "'");
    batch.push_back({p, it->second});
  }
  if (gts.size() != preds.size()) fail(ErrorKind::ParseError, "ground truth has ids without predictions");
  if (batch.empty()) fail(ErrorKind::ParseError, "no samples");
  return batch;
}

// Segmentation inputs are directories of <id>.png (indexed) + <id>.json
// (palette index -> label). Ground-truth indices missing from the table
// (e.g. 255) are ignore pixels; so are unlabeled prediction indices.
inline std::vector<std::string> segmentation_ids(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::IoError, dir.string() + " is not a directory");
  std::set<std::string> ids;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".png") ids.insert(e.path().stem().string());
  }
  return {ids.begin(), ids.end()};
}

inline SegPairBatch read_segmentation_pairs(const std::filesystem::path& pred_dir,
                                            const std::filesystem::path& gt_dir) {
  const auto gt_ids = segmentation_ids(gt_dir);
  const auto pred_ids = segmentation_ids(pred_dir);
  if (gt_ids != pred_ids) fail(ErrorKind::ParseError, "prediction and ground-truth ids differ");
  if (gt_ids.empty()) fail(ErrorKind::ParseError, "no segmentation samples");
  SegPairBatch batch;
  for (const auto& id : gt_ids) {
    LabelMap pred = read_label_map(pred_dir / (id + ".png"), pred_dir / (id + ".json"), true);
    LabelMap gt = read_label_map(gt_dir / (id + ".png"), gt_dir / (id + ".json"), true);
    if (pred.width != gt.width || pred.height != gt.height) {
      fail(ErrorKind::DimensionMismatch, id + ": prediction and ground truth differ in size");
    }
    batch.push_back({std::move(pred), std::move(gt)});
  }
  return batch;
}

enum class Task { Classification, Segmentation };

inline Task parse_task(std::string_view s) {
  if (s == "classification") return Task::Classification;
  if (s == "segmentation") return Task::Segmentation;
  fail(ErrorKind::InvalidArgument, "unknown task '" + std::string(s) + "'");
}

inline MetricReport evaluate_dataset(const std::filesystem::path& pred, const std::optional<std::filesystem::path>& gt,
                                     Task task, SimilarityKernel& kernel, const SegmentationOptions& opt = {}) {
  if (task == Task::Classification) return evaluate_classification(read_classification_pairs(pred, gt), kernel);
  if (!gt) fail(ErrorKind::InvalidArgument, "segmentation evaluation needs a ground-truth directory");
  return evaluate_segmentation(read_segmentation_pairs(pred, *gt), kernel, opt);
}

}  // namespace cased
