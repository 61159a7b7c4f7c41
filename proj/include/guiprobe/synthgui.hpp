#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "guiprobe/image.hpp"
#include "guiprobe/vocab.hpp"

namespace guiprobe {

// One rendered element. `group` is the coarse reporting class ("text" or
// "icon_widget"); `kind` is the instruction word (widget/text/icon).
struct ElementAnnotation {
  Box bbox;
  std::string group;
  std::string color;
  std::string shape;
  std::string kind;
  std::string instruction_text;
  std::vector<int> instruction;
};

struct PlatformPreset {
  std::string name;
  int height = 0;
  int width = 0;
  int min_elements = 0;  // distractor count range (target excluded)
  int max_elements = 0;
  int min_elem_px = 0;
  int max_elem_px = 0;
  std::vector<std::array<double, 3>> backgrounds;

  static PlatformPreset mobile();
  static PlatformPreset desktop();
  static PlatformPreset web();
  static PlatformPreset by_name(const std::string& name);
  static std::vector<PlatformPreset> all();

  void validate() const;
};

struct Sample {
  std::string platform;
  int height = 0;
  int width = 0;
  std::array<double, 3> background{};
  ElementAnnotation target;
  std::vector<ElementAnnotation> distractors;
  std::uint64_t seed = 0;
  Image image;  // render() of the fields above
};

// Color table shared by generator and tests: name -> 8-bit-exact RGB.
const std::vector<std::pair<std::string, std::array<double, 3>>>& element_colors();

Sample generate_screen(std::uint64_t seed, const PlatformPreset& preset);
Image render(const Sample& sample);

// ---- corpus on disk ----

struct CorpusParams {
  int n = 0;
  std::vector<PlatformPreset> presets;
  std::uint64_t master_seed = 0;
};

struct CorpusRecord {
  std::string id;
  std::string image_path;  // relative to corpus dir
  std::string platform;
  std::string instruction_text;
  std::vector<int> instruction_tokens;
  Box target_bbox;
  std::string kind;  // coarse group: "text" | "icon_widget"
  std::vector<ElementAnnotation> distractors;
};

struct Corpus {
  std::string dir;
  int version = 0;
  std::uint64_t master_seed = 0;
  std::vector<PlatformPreset> presets;
  std::vector<std::string> split_train, split_val, split_test;
  std::vector<CorpusRecord> records;

  const CorpusRecord& record(const std::string& id) const;
  Image load_image(const CorpusRecord& rec) const;
  std::vector<std::string> split(const std::string& name) const;
};

// train/val/test by index hash, 80/10/10
int split_of(std::uint64_t master_seed, int index);

void make_corpus(const CorpusParams& params, const std::string& out_dir);
Corpus load_corpus(const std::string& dir);

}  // namespace guiprobe
