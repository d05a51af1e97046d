#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlnet/config.hpp"
#include "mlnet/metrics.hpp"
#include "mlnet/pnm.hpp"
#include "mlnet/preprocess.hpp"
#include "mlnet/train.hpp"

// Dataset layout: a root directory with images/ (PNM), maps/ (grayscale PNM,
// matching stems) and fixations/ (CSV "row,col" per line, zero-based, at
// original image resolution). Maps are required for training unless targets
// are synthesized from fixations; fixations are required for NSS/AUC.

namespace mlnet {

struct DatasetEntry {
  std::string stem;
  std::filesystem::path image;
  std::optional<std::filesystem::path> map;
  std::optional<std::filesystem::path> fixations;
};

inline FixationSet read_fixation_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open fixations " + path.string());
  FixationSet out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected 'row,col'");
    }
    try {
      std::size_t used = 0;
      const long long row = std::stoll(line.substr(0, comma), &used);
      const long long col = std::stoll(line.substr(comma + 1));
      out.push_back(Fixation{row, col});
      (void)used;
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": malformed fixation '" + line + "'");
    }
  }
  return out;
}

inline void write_fixation_csv(const std::filesystem::path& path,
                               const FixationSet& fix) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write fixations " + path.string());
  for (const Fixation& f : fix) {
    out << f.row << "," << f.col << "\n";
  }
}

inline std::vector<DatasetEntry> scan_dataset(
    const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const fs::path images = root / "images";
  if (!fs::is_directory(images)) {
    throw DataError("dataset root " + root.string() + " has no images/");
  }
  auto index_dir = [](const fs::path& dir) {
    std::map<std::string, fs::path> by_stem;
    if (fs::is_directory(dir)) {
      for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file()) {
          by_stem[e.path().stem().string()] = e.path();
        }
      }
    }
    return by_stem;
  };
  const auto maps = index_dir(root / "maps");
  const auto fixations = index_dir(root / "fixations");

  std::vector<DatasetEntry> entries;
  for (const auto& e : fs::directory_iterator(images)) {
    if (!e.is_regular_file()) continue;
    DatasetEntry entry;
    entry.stem = e.path().stem().string();
    entry.image = e.path();
    if (auto it = maps.find(entry.stem); it != maps.end()) {
      entry.map = it->second;
    }
    if (auto it = fixations.find(entry.stem); it != fixations.end()) {
      entry.fixations = it->second;
    }
    entries.push_back(std::move(entry));
  }
  std::sort(entries.begin(), entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) {
              return a.stem < b.stem;
            });
  if (entries.empty()) {
    throw DataError("dataset root " + root.string() + " has no images");
  }
  return entries;
}

// Loads and preprocesses the training set. Targets come from maps/ (padded,
// area-averaged to the tap size, max-normalized), or are rendered from
// fixations when cfg.gt_from_fixations is set.
inline std::vector<TrainItem> load_train_dataset(
    const std::filesystem::path& root, const RunConfig& cfg) {
  const auto entries = scan_dataset(root);
  const std::int64_t W = cfg.model.input_width;
  const std::int64_t H = cfg.model.input_height;
  const std::int64_t tw = cfg.model.tap_width();
  const std::int64_t th = cfg.model.tap_height();

  std::vector<TrainItem> items;
  for (const DatasetEntry& entry : entries) {
    TrainItem item;
    item.name = entry.stem;
    const PnmImage img = read_pnm(entry.image);
    auto pre = preprocess(img, W, H, cfg.model.channel_means);
    item.image = pre.tensor;

    if (cfg.gt_from_fixations) {
      if (!entry.fixations) {
        throw DataError("missing fixations for " + entry.stem);
      }
      FixationSet orig = read_fixation_csv(*entry.fixations);
      // Into tap coordinates: through the preprocess transform, then /8.
      FixationSet tap_fix;
      for (const Fixation& f : orig) {
        auto [xi, yi] = pre.transform.to_input(static_cast<double>(f.col),
                                               static_cast<double>(f.row));
        const std::int64_t row = std::clamp<std::int64_t>(
            static_cast<std::int64_t>(std::lround(yi / 8.0)), 0, th - 1);
        const std::int64_t col = std::clamp<std::int64_t>(
            static_cast<std::int64_t>(std::lround(xi / 8.0)), 0, tw - 1);
        tap_fix.push_back(Fixation{row, col});
      }
      const double scale =
          static_cast<double>(W) / static_cast<double>(pre.transform.padded_w);
      const double tap_sigma = cfg.blur_sigma * scale / 8.0;
      SaliencyMap m = fixation_map(tap_fix, th, tw, tap_sigma);
      item.target = map_to_target(m);
    } else {
      if (!entry.map) {
        throw DataError("missing map for " + entry.stem);
      }
      const PnmImage gt = read_pnm(*entry.map);
      SaliencyMap m = preprocess_map(gt, tw, th, pre.transform);
      item.target = map_to_target(m);
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace mlnet
