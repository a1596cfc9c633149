#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "layoutdm/error.hpp"
#include "layoutdm/layout.hpp"
#include "layoutdm/random.hpp"

namespace layoutdm {

namespace fs = std::filesystem;

struct SplitRatios {
  double train = 0.85;
  double val = 0.05;
  double test = 0.10;
};

struct Corpus {
  std::string name;
  std::vector<std::string> categories;
  int max_elements = kDefaultMaxElements;
  std::vector<Layout> train;
  std::vector<Layout> val;
  std::vector<Layout> test;
  int discarded = 0;  // layouts dropped for having more than M elements

  int num_categories() const { return static_cast<int>(categories.size()); }
  std::size_t size() const { return train.size() + val.size() + test.size(); }

  const std::vector<Layout>& split(const std::string& which) const {
    if (which == "train") return train;
    if (which == "val") return val;
    if (which == "test") return test;
    throw Error(ErrorCode::kInvalidArgument, "unknown split '" + which + "'");
  }
};

inline std::uint64_t layout_hash(const Layout& layout, std::uint64_t seed = 0) {
  const std::string text = to_json(layout).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix_seed(h ^ seed);
}

/// Assigns every layout to a split from a hash of its content, so identical layouts always
/// share a split.
inline void assign_splits(Corpus& corpus, std::vector<Layout> layouts, const SplitRatios& ratios, std::uint64_t seed) {
  const double total = ratios.train + ratios.val + ratios.test;
  LAYOUTDM_REQUIRE(ratios.train >= 0 && ratios.val >= 0 && ratios.test >= 0 && total > 0,
                   ErrorCode::kInvalidArgument, "split ratios must be non-negative");
  for (auto& l : layouts) {
    const double u = static_cast<double>(layout_hash(l, seed) >> 11) * 0x1.0p-53 * total;
    if (u < ratios.train) {
      corpus.train.push_back(std::move(l));
    } else if (u < ratios.train + ratios.val) {
      corpus.val.push_back(std::move(l));
    } else {
      corpus.test.push_back(std::move(l));
    }
  }
}

/// Raises INVALID_ARGUMENT when the same layout appears in two splits.
inline void check_disjoint(const Corpus& corpus) {
  std::unordered_map<std::uint64_t, int> owner;
  const std::array<const std::vector<Layout>*, 3> splits{&corpus.train, &corpus.val, &corpus.test};
  for (int s = 0; s < 3; ++s) {
    for (const auto& l : *splits[s]) {
      const auto [it, inserted] = owner.emplace(layout_hash(l), s);
      LAYOUTDM_REQUIRE(inserted || it->second == s, ErrorCode::kInvalidArgument, "layout appears in two splits");
    }
  }
}

struct LoadOptions {
  int max_elements = 0;  // 0: the value stored in corpus.json, else kDefaultMaxElements
  SplitRatios ratios;
  std::uint64_t seed = 0;
  std::vector<std::string> categories;  // required by the rico adapter; names for layout-json
};

namespace detail {

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  LAYOUTDM_REQUIRE(in.good(), ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json parse_json(const std::string& text, const std::string& where) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, where + ": " + ex.what());
  }
}

inline std::vector<Layout> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  LAYOUTDM_REQUIRE(in.good(), ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<Layout> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(layout_from_json(parse_json(line, path.string() + ":" + std::to_string(number))));
  }
  return out;
}

inline std::vector<fs::path> json_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// Converts a pixel box to a clamped center-size box on the given canvas.
inline BBox from_corners(double x1, double y1, double x2, double y2, double width, double height) {
  return clamp_box({(x1 + x2) / 2 / width, (y1 + y2) / 2 / height, (x2 - x1) / width, (y2 - y1) / height});
}

// `root` holds the screen's [x1, y1, x2, y2] bounds; element bounds are relative to its corner.
inline void collect_rico(const nlohmann::json& node, const std::unordered_map<std::string, int>& ids,
                         const std::array<double, 4>& root, Layout& out) {
  if (node.contains("componentLabel")) {
    const std::string label = node.at("componentLabel").get<std::string>();
    const auto it = ids.find(label);
    LAYOUTDM_REQUIRE(it != ids.end(), ErrorCode::kUnknownCategory, "unknown rico category '" + label + "'");
    const auto& b = node.at("bounds");
    out.elements.push_back({it->second, from_corners(b.at(0).get<double>() - root[0], b.at(1).get<double>() - root[1],
                                                     b.at(2).get<double>() - root[0], b.at(3).get<double>() - root[1],
                                                     root[2] - root[0], root[3] - root[1])});
  }
  if (node.contains("children")) {
    for (const auto& child : node.at("children")) collect_rico(child, ids, root, out);
  }
}

}  // namespace detail

/// Reads a category list file: {"categories": [...]} or a bare JSON array of names.
inline std::vector<std::string> load_category_names(const fs::path& path) {
  const auto j = detail::parse_json(detail::read_file(path), path.string());
  try {
    const auto& list = j.is_array() ? j : j.at("categories");
    auto names = list.get<std::vector<std::string>>();
    LAYOUTDM_REQUIRE(!names.empty(), ErrorCode::kParseError, "empty category list in " + path.string());
    return names;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + ex.what());
  }
}

inline std::vector<std::string> publaynet_categories() { return {"text", "title", "list", "table", "figure"}; }

/// Keeps layouts with at most M elements; returns how many were dropped.
inline int apply_element_limit(std::vector<Layout>& layouts, int max_elements) {
  const auto before = layouts.size();
  std::erase_if(layouts, [&](const Layout& l) { return l.size() > max_elements; });
  return static_cast<int>(before - layouts.size());
}

inline nlohmann::json corpus_meta(const Corpus& c) {
  return {{"name", c.name},
          {"categories", c.categories},
          {"max_elements", c.max_elements},
          {"discarded", c.discarded},
          {"counts", {{"train", c.train.size()}, {"val", c.val.size()}, {"test", c.test.size()}}}};
}

inline void write_jsonl(const fs::path& path, const std::vector<Layout>& layouts) {
  std::ofstream out(path, std::ios::binary);
  LAYOUTDM_REQUIRE(out.good(), ErrorCode::kIoError, "cannot write " + path.string());
  for (const auto& l : layouts) out << to_json(l).dump() << '\n';
}

/// Writes corpus.json plus train/val/test JSONL files into `dir`.
inline void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "corpus.json", std::ios::binary);
    LAYOUTDM_REQUIRE(out.good(), ErrorCode::kIoError, "cannot write corpus.json");
    out << corpus_meta(corpus).dump(2) << '\n';
  }
  write_jsonl(dir / "train.jsonl", corpus.train);
  write_jsonl(dir / "val.jsonl", corpus.val);
  write_jsonl(dir / "test.jsonl", corpus.test);
}

/// Loads a corpus. Schemas:
///   layout-json  a directory written by save_corpus, or one JSONL file of layouts
///   rico         a directory of semantic-annotation JSON files (one screen each)
///   publaynet    a COCO-style annotation file, or a directory of them
inline Corpus load_corpus(const fs::path& path, const std::string& schema, const LoadOptions& options = {}) {
  LAYOUTDM_REQUIRE(fs::exists(path), ErrorCode::kParseError, "no such path: " + path.string());
  Corpus corpus;
  corpus.max_elements = options.max_elements > 0 ? options.max_elements : kDefaultMaxElements;
  corpus.name = path.filename().string();
  std::vector<Layout> layouts;

  if (schema == "layout-json") {
    if (fs::is_directory(path)) {
      LAYOUTDM_REQUIRE(fs::exists(path / "corpus.json"), ErrorCode::kParseError,
                       "missing corpus.json in " + path.string());
      const auto meta = detail::parse_json(detail::read_file(path / "corpus.json"), "corpus.json");
      try {
        corpus.name = meta.value("name", corpus.name);
        corpus.categories = meta.at("categories").get<std::vector<std::string>>();
        corpus.discarded = meta.value("discarded", 0);
        if (options.max_elements <= 0) corpus.max_elements = meta.value("max_elements", kDefaultMaxElements);
      } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::kParseError, std::string("corpus.json: ") + ex.what());
      }
      const std::array<std::pair<const char*, std::vector<Layout>*>, 3> splits{
          {{"train.jsonl", &corpus.train}, {"val.jsonl", &corpus.val}, {"test.jsonl", &corpus.test}}};
      for (auto [file, target] : splits) {
        if (fs::exists(path / file)) *target = detail::read_jsonl(path / file);
        corpus.discarded += apply_element_limit(*target, corpus.max_elements);
        for (const auto& l : *target) validate(l, corpus.num_categories(), corpus.max_elements);
      }
      check_disjoint(corpus);
      return corpus;
    }
    layouts = detail::read_jsonl(path);
    int categories = 0;
    for (const auto& l : layouts)
      for (const auto& e : l.elements) categories = std::max(categories, e.category);
    corpus.categories = options.categories;
    for (int c = static_cast<int>(corpus.categories.size()); c < categories; ++c)
      corpus.categories.push_back("category" + std::to_string(c + 1));
  } else if (schema == "rico") {
    LAYOUTDM_REQUIRE(fs::is_directory(path), ErrorCode::kParseError, "rico schema expects a directory");
    LAYOUTDM_REQUIRE(!options.categories.empty(), ErrorCode::kInvalidArgument,
                     "rico schema needs a category list (see data/rico25_categories.json)");
    corpus.categories = options.categories;
    std::unordered_map<std::string, int> ids;
    for (std::size_t i = 0; i < corpus.categories.size(); ++i) ids[corpus.categories[i]] = static_cast<int>(i) + 1;
    const auto files = detail::json_files(path);
    LAYOUTDM_REQUIRE(!files.empty(), ErrorCode::kParseError, "no .json files in " + path.string());
    for (const auto& file : files) {
      const auto j = detail::parse_json(detail::read_file(file), file.string());
      try {
        const auto& b = j.at("bounds");
        const std::array<double, 4> root{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                                         b.at(3).get<double>()};
        LAYOUTDM_REQUIRE(root[2] > root[0] && root[3] > root[1], ErrorCode::kParseError,
                         "empty root bounds in " + file.string());
        Layout l;
        l.canvas = {static_cast<int>(root[2] - root[0]), static_cast<int>(root[3] - root[1])};
        if (j.contains("children"))
          for (const auto& child : j.at("children")) detail::collect_rico(child, ids, root, l);
        layouts.push_back(std::move(l));
      } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::kParseError, file.string() + ": " + ex.what());
      }
    }
  } else if (schema == "publaynet") {
    std::vector<fs::path> files;
    if (fs::is_directory(path)) {
      files = detail::json_files(path);
    } else {
      files.push_back(path);
    }
    LAYOUTDM_REQUIRE(!files.empty(), ErrorCode::kParseError, "no .json files in " + path.string());
    corpus.categories = publaynet_categories();
    for (const auto& file : files) {
      const auto j = detail::parse_json(detail::read_file(file), file.string());
      try {
        std::unordered_map<int, int> category_ids;
        for (const auto& c : j.at("categories")) {
          const std::string name = c.at("name").get<std::string>();
          const auto it = std::find(corpus.categories.begin(), corpus.categories.end(), name);
          LAYOUTDM_REQUIRE(it != corpus.categories.end(), ErrorCode::kUnknownCategory,
                           "unknown publaynet category '" + name + "'");
          category_ids[c.at("id").get<int>()] = static_cast<int>(it - corpus.categories.begin()) + 1;
        }
        std::vector<int> image_ids;
        std::unordered_map<int, std::size_t> index;
        std::vector<Layout> images;
        for (const auto& img : j.at("images")) {
          index[img.at("id").get<int>()] = images.size();
          Layout l;
          l.canvas = {img.at("width").get<int>(), img.at("height").get<int>()};
          LAYOUTDM_REQUIRE(l.canvas[0] > 0 && l.canvas[1] > 0, ErrorCode::kParseError, "image with empty size");
          images.push_back(std::move(l));
        }
        for (const auto& a : j.at("annotations")) {
          const auto img = index.find(a.at("image_id").get<int>());
          LAYOUTDM_REQUIRE(img != index.end(), ErrorCode::kParseError, "annotation for an unknown image");
          const auto cat = category_ids.find(a.at("category_id").get<int>());
          LAYOUTDM_REQUIRE(cat != category_ids.end(), ErrorCode::kUnknownCategory, "annotation with unknown category");
          Layout& l = images[img->second];
          const auto& b = a.at("bbox");
          const double x = b.at(0).get<double>(), y = b.at(1).get<double>();
          l.elements.push_back({cat->second, detail::from_corners(x, y, x + b.at(2).get<double>(),
                                                                  y + b.at(3).get<double>(), l.canvas[0],
                                                                  l.canvas[1])});
        }
        for (auto& l : images) layouts.push_back(std::move(l));
      } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::kParseError, file.string() + ": " + ex.what());
      }
    }
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown corpus schema '" + schema + "'");
  }

  corpus.discarded = apply_element_limit(layouts, corpus.max_elements);
  for (const auto& l : layouts) validate(l, corpus.num_categories(), corpus.max_elements);
  assign_splits(corpus, std::move(layouts), options.ratios, options.seed);
  return corpus;
}

/// Grid-snapped synthetic layouts. Each layout picks a column count, fills the first E cells
/// of the grid row by row and aligns every element to the top-left corner of its cell, so
/// without jitter every element shares an edge with a neighbour in its row or column.
struct SyntheticSpec {
  int num_categories = 5;
  int grid_rows = 5;
  int grid_cols = 4;
  double jitter = 0.0;  // standard deviation of the Gaussian added to each coordinate
  int min_elements = 1;
  int max_elements = 10;
  int size = 5000;
  std::uint64_t seed = 0;
  std::vector<double> category_probs;  // defaults to a fixed decreasing profile
  SplitRatios ratios;

  std::vector<double> probabilities() const {
    if (!category_probs.empty()) return category_probs;
    std::vector<double> p(num_categories);
    double total = 0;
    for (int c = 0; c < num_categories; ++c) total += (p[c] = 1.0 / (c + 2));
    for (double& v : p) v /= total;
    return p;
  }

  void validate() const {
    LAYOUTDM_REQUIRE(num_categories >= 1, ErrorCode::kInvalidArgument, "need at least one category");
    LAYOUTDM_REQUIRE(grid_rows >= 1 && grid_cols >= 1, ErrorCode::kInvalidArgument, "grid must be non-empty");
    LAYOUTDM_REQUIRE(jitter >= 0, ErrorCode::kInvalidArgument, "jitter must be >= 0");
    LAYOUTDM_REQUIRE(min_elements >= 0 && min_elements <= max_elements, ErrorCode::kInvalidArgument,
                     "bad element-count range");
    LAYOUTDM_REQUIRE(max_elements <= grid_rows * grid_cols, ErrorCode::kInvalidArgument,
                     "grid too small for max_elements");
    LAYOUTDM_REQUIRE(size >= 0, ErrorCode::kInvalidArgument, "size must be >= 0");
    const auto p = probabilities();
    LAYOUTDM_REQUIRE(static_cast<int>(p.size()) == num_categories, ErrorCode::kInvalidArgument,
                     "one probability per category");
    double total = 0;
    for (double v : p) {
      LAYOUTDM_REQUIRE(v >= 0, ErrorCode::kInvalidArgument, "category probabilities must be >= 0");
      total += v;
    }
    LAYOUTDM_REQUIRE(std::abs(total - 1) < 1e-9, ErrorCode::kInvalidArgument, "category probabilities must sum to 1");
  }

  nlohmann::json to_json() const {
    return {{"num_categories", num_categories}, {"grid_rows", grid_rows},       {"grid_cols", grid_cols},
            {"jitter", jitter},                 {"min_elements", min_elements}, {"max_elements", max_elements},
            {"size", size},                     {"seed", seed},                 {"category_probs", probabilities()}};
  }
};

/// Width and height of a category's box as fractions of its cell.
inline std::array<double, 2> synthetic_size(int category) {
  static constexpr std::array<std::array<double, 2>, 5> kShapes{
      {{0.9, 0.45}, {0.6, 0.8}, {0.75, 0.3}, {0.4, 0.6}, {0.85, 0.9}}};
  const auto& s = kShapes[(category - 1) % kShapes.size()];
  const double shrink = 1.0 - 0.1 * ((category - 1) / static_cast<int>(kShapes.size()) % 4);
  return {s[0] * shrink, s[1] * shrink};
}

inline Layout synthetic_layout(const SyntheticSpec& spec, const std::vector<double>& probs, Rng& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  Layout l;
  const int e = uniform_int(rng, spec.min_elements, spec.max_elements);
  const int min_cols = std::max(1, (e + spec.grid_rows - 1) / spec.grid_rows);
  const int cols = uniform_int(rng, min_cols, spec.grid_cols);
  const double cell_w = 1.0 / cols;
  const double cell_h = 1.0 / spec.grid_rows;
  for (int k = 0; k < e; ++k) {
    const int category = sample_categorical(probs, spec.num_categories, 1.0, rng) + 1;
    const auto frac = synthetic_size(category);
    const double w = frac[0] * cell_w;
    const double h = frac[1] * cell_h;
    const double left = (k % cols) * cell_w + 0.05 * cell_w;
    const double top = (k / cols) * cell_h + 0.05 * cell_h;
    BBox b{left + w / 2, top + h / 2, w, h};
    if (spec.jitter > 0) {
      b.cx += spec.jitter * noise(rng);
      b.cy += spec.jitter * noise(rng);
      b.w += spec.jitter * noise(rng);
      b.h += spec.jitter * noise(rng);
      b = clamp_box(b);
    }
    l.elements.push_back({category, b});
  }
  return l;
}

inline Corpus gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Corpus corpus;
  corpus.name = "synthetic";
  for (int c = 1; c <= spec.num_categories; ++c) corpus.categories.push_back("category" + std::to_string(c));
  corpus.max_elements = spec.max_elements;
  Rng rng(derive_seed(spec.seed, "corpus"));
  const auto probs = spec.probabilities();
  std::vector<Layout> layouts;
  layouts.reserve(spec.size);
  for (int i = 0; i < spec.size; ++i) layouts.push_back(synthetic_layout(spec, probs, rng));
  assign_splits(corpus, std::move(layouts), spec.ratios, spec.seed);
  return corpus;
}

/// Adds independent zero-mean Gaussian noise with standard deviation `std_dev` to every
/// coordinate and clamps back into [0, 1]. Categories are untouched.
inline Layout perturb_for_refinement(const Layout& layout, Rng& rng, double std_dev = 0.1) {
  LAYOUTDM_REQUIRE(std_dev >= 0, ErrorCode::kInvalidArgument, "noise std must be >= 0");
  if (std_dev == 0) return layout;
  std::normal_distribution<double> noise(0.0, std_dev);
  Layout out = layout;
  for (auto& e : out.elements) {
    e.bbox.cx += noise(rng);
    e.bbox.cy += noise(rng);
    e.bbox.w += noise(rng);
    e.bbox.h += noise(rng);
    e.bbox = clamp_box(e.bbox);
  }
  return out;
}

}  // namespace layoutdm
