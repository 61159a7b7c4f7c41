#include "guiprobe/synthgui.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>
#include <utility>

#include "json.hpp"

#include "guiprobe/errors.hpp"
#include "guiprobe/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace guiprobe {

namespace {

constexpr int kMargin = 2;        // canvas edge and element separation, pixels
constexpr int kCorpusVersion = 1;

std::array<double, 3> c8(int r, int g, int b) {
  return {r / 255.0, g / 255.0, b / 255.0};
}

struct ShapeDef {
  const char* shape;
  const char* kind;   // instruction word
  const char* group;  // reporting class
};

const ShapeDef kShapes[] = {
    {"box", "widget", "icon_widget"},   {"bar", "widget", "icon_widget"},
    {"line", "text", "text"},           {"block", "text", "text"},
    {"circle", "icon", "icon_widget"},  {"triangle", "icon", "icon_widget"},
    {"cross", "icon", "icon_widget"},   {"plus", "icon", "icon_widget"},
};
constexpr int kNumShapes = static_cast<int>(std::size(kShapes));

struct PxRect {
  int x = 0, y = 0, w = 0, h = 0;
};

bool rects_too_close(const PxRect& a, const PxRect& b) {
  return a.x < b.x + b.w + kMargin && b.x < a.x + a.w + kMargin &&
         a.y < b.y + b.h + kMargin && b.y < a.y + a.h + kMargin;
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

json box_json(const Box& b) {
  return json::array({round6(b.x0), round6(b.y0), round6(b.x1), round6(b.y1)});
}

Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("corpus: bad bbox array");
  return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
             j[3].get<double>()};
}

}  // namespace

const std::vector<std::pair<std::string, std::array<double, 3>>>& element_colors() {
  static const std::vector<std::pair<std::string, std::array<double, 3>>> colors = {
      {"red", c8(220, 40, 40)},     {"green", c8(40, 170, 60)},
      {"blue", c8(45, 90, 230)},    {"yellow", c8(240, 200, 30)},
      {"orange", c8(240, 130, 20)}, {"purple", c8(140, 60, 200)},
      {"pink", c8(240, 120, 180)},  {"cyan", c8(40, 200, 230)},
      {"teal", c8(20, 150, 140)},   {"magenta", c8(210, 40, 170)},
      {"lime", c8(150, 220, 40)},   {"brown", c8(140, 90, 40)},
      {"navy", c8(30, 50, 120)},    {"olive", c8(120, 130, 30)},
  };
  return colors;
}

PlatformPreset PlatformPreset::mobile() {
  PlatformPreset p;
  p.name = "mobile";
  p.height = 384;
  p.width = 192;
  p.min_elements = 4;
  p.max_elements = 8;
  p.min_elem_px = 18;
  p.max_elem_px = 52;
  p.backgrounds = {c8(245, 245, 245), c8(236, 240, 244), c8(250, 248, 240),
                   c8(24, 26, 32), c8(40, 42, 48)};
  return p;
}

PlatformPreset PlatformPreset::desktop() {
  PlatformPreset p;
  p.name = "desktop";
  p.height = 288;
  p.width = 448;
  p.min_elements = 8;
  p.max_elements = 16;
  p.min_elem_px = 18;
  p.max_elem_px = 56;
  p.backgrounds = {c8(242, 243, 245), c8(228, 232, 238), c8(30, 32, 38),
                   c8(46, 50, 58), c8(252, 250, 244)};
  return p;
}

PlatformPreset PlatformPreset::web() {
  PlatformPreset p;
  p.name = "web";
  p.height = 288;
  p.width = 448;
  p.min_elements = 10;
  p.max_elements = 16;
  p.min_elem_px = 18;
  p.max_elem_px = 44;
  p.backgrounds = {c8(255, 255, 255), c8(248, 248, 250), c8(240, 244, 248),
                   c8(28, 30, 36), c8(34, 38, 46)};
  return p;
}

PlatformPreset PlatformPreset::by_name(const std::string& name) {
  if (name == "mobile") return mobile();
  if (name == "desktop") return desktop();
  if (name == "web") return web();
  throw DataError("unknown platform preset '" + name + "'");
}

std::vector<PlatformPreset> PlatformPreset::all() {
  return {mobile(), desktop(), web()};
}

void PlatformPreset::validate() const {
  if (height < 64 || width < 64)
    throw DataError("preset '" + name + "': canvas must be at least 64x64");
  if (min_elements < 1 || max_elements < min_elements)
    throw DataError("preset '" + name + "': bad element count range");
  if (min_elem_px < 10 || max_elem_px < min_elem_px)
    throw DataError("preset '" + name + "': bad element size range");
  // widest glyph is the bar at 2x base size; tallest is the block at base size
  if (2 * max_elem_px > width - 2 * kMargin || max_elem_px > height - 2 * kMargin)
    throw DataError("preset '" + name + "': element sizes do not fit canvas");
  if (backgrounds.empty())
    throw DataError("preset '" + name + "': empty background palette");
}

namespace {

// Draw a pixel rectangle for one element of the given shape.
PxRect draw_rect(Rng& rng, const PlatformPreset& p, const std::string& shape) {
  const int s = rng.uniform_int(p.min_elem_px, p.max_elem_px);
  PxRect r;
  if (shape == "box" || shape == "circle" || shape == "triangle" ||
      shape == "cross" || shape == "plus") {
    r.w = r.h = s;
  } else if (shape == "bar") {
    r.h = std::max(10, s / 2);
    r.w = std::min(2 * s, p.width - 2 * kMargin);
  } else if (shape == "line") {
    r.h = rng.uniform_int(10, 14);
    const int wmax = std::min(5 * r.h, p.width - 2 * kMargin);
    r.w = rng.uniform_int(3 * r.h, wmax);
  } else if (shape == "block") {
    r.w = rng.uniform_int(p.min_elem_px, p.max_elem_px);
    r.h = rng.uniform_int(p.min_elem_px, p.max_elem_px);
  } else {
    throw DataError("unknown shape '" + shape + "'");
  }
  return r;
}

}  // namespace

Sample generate_screen(std::uint64_t seed, const PlatformPreset& preset) {
  preset.validate();
  Rng rng(seed);
  const auto& colors = element_colors();

  for (int attempt = 0; attempt < 100; ++attempt) {
    Sample s;
    s.platform = preset.name;
    s.height = preset.height;
    s.width = preset.width;
    s.seed = seed;
    s.background = preset.backgrounds[rng.uniform_int(
        0, static_cast<int>(preset.backgrounds.size()) - 1)];

    const int n = rng.uniform_int(preset.min_elements, preset.max_elements) + 1;

    std::vector<PxRect> rects;
    std::vector<ElementAnnotation> elems;
    std::set<std::pair<int, int>> used_pairs;  // (shape idx, color idx)
    bool ok = true;

    for (int e = 0; e < n && ok; ++e) {
      const int shape_i = rng.uniform_int(0, kNumShapes - 1);
      int color_i = -1;
      for (int t = 0; t < 200; ++t) {
        const int ci =
            rng.uniform_int(0, static_cast<int>(colors.size()) - 1);
        if (!used_pairs.count({shape_i, ci})) {
          color_i = ci;
          break;
        }
      }
      if (color_i < 0) {
        ok = false;
        break;
      }

      const ShapeDef& sd = kShapes[shape_i];
      PxRect r = draw_rect(rng, preset, sd.shape);
      bool placed = false;
      for (int t = 0; t < 200 && !placed; ++t) {
        r.x = rng.uniform_int(kMargin, preset.width - kMargin - r.w);
        r.y = rng.uniform_int(kMargin, preset.height - kMargin - r.h);
        placed = std::none_of(rects.begin(), rects.end(), [&](const PxRect& o) {
          return rects_too_close(r, o);
        });
      }
      if (!placed) {
        ok = false;
        break;
      }

      used_pairs.insert({shape_i, color_i});
      rects.push_back(r);

      ElementAnnotation a;
      a.bbox = Box{static_cast<double>(r.x) / preset.width,
                   static_cast<double>(r.y) / preset.height,
                   static_cast<double>(r.x + r.w) / preset.width,
                   static_cast<double>(r.y + r.h) / preset.height};
      a.group = sd.group;
      a.color = colors[color_i].first;
      a.shape = sd.shape;
      a.kind = sd.kind;
      a.instruction_text =
          "click the " + a.color + " " + a.shape + " " + a.kind;
      elems.push_back(std::move(a));
    }
    if (!ok) continue;

    const int target_i =
        rng.uniform_int(0, static_cast<int>(elems.size()) - 1);
    const Vocabulary vocab = Vocabulary::standard();
    for (auto& a : elems) a.instruction = vocab.tokenize_words(a.instruction_text);

    s.target = elems[target_i];
    for (int e = 0; e < static_cast<int>(elems.size()); ++e)
      if (e != target_i) s.distractors.push_back(elems[e]);

    s.image = render(s);
    return s;
  }
  throw DataError("generate_screen: preset '" + preset.name +
                  "' too small to place requested elements");
}

namespace {

// Glyph ink test in local element coordinates. (px, py) is the pixel center
// offset from the element origin; (w, h) the element size in pixels.
bool glyph_ink(const std::string& shape, double px, double py, int xi, int yi,
               int w, int h) {
  const double p = px / w;
  const double q = py / h;
  if (shape == "box" || shape == "bar") return true;
  if (shape == "line") {
    const int dash = std::max(4, h);
    const int gap = std::max(2, h / 2);
    return xi % (dash + gap) < dash;
  }
  if (shape == "block") {
    const int stripe = std::max(2, h / 7);
    const int vgap = std::max(2, stripe / 2);
    if (yi % (stripe + vgap) >= stripe) return false;
    const int dash = std::max(4, 2 * stripe);
    const int gap = std::max(2, stripe);
    return xi % (dash + gap) < dash;
  }
  if (shape == "circle") {
    const double r = 0.46 * std::min(w, h);
    const double dx = px - 0.5 * w;
    const double dy = py - 0.5 * h;
    return dx * dx + dy * dy <= r * r;
  }
  if (shape == "triangle") {
    // apex top-center, base bottom; inset to keep ink off the bbox border
    const double ax = 0.5, ay = 0.06, bx = 0.06, by = 0.94, cx = 0.94, cy = 0.94;
    const auto side = [](double x0, double y0, double x1, double y1, double x,
                         double y) {
      return (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
    };
    const double d1 = side(ax, ay, bx, by, p, q);
    const double d2 = side(bx, by, cx, cy, p, q);
    const double d3 = side(cx, cy, ax, ay, p, q);
    const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
    const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
    return !(neg && pos);
  }
  if (shape == "cross") {
    const double t = 0.13;
    if (p < 0.06 || p > 0.94 || q < 0.06 || q > 0.94) return false;
    return std::abs(p - q) <= t || std::abs(p + q - 1.0) <= t;
  }
  if (shape == "plus") {
    const double t = 0.13;
    const bool horiz = std::abs(q - 0.5) <= t && p >= 0.06 && p <= 0.94;
    const bool vert = std::abs(p - 0.5) <= t && q >= 0.06 && q <= 0.94;
    return horiz || vert;
  }
  throw DataError("unknown shape '" + shape + "'");
}

void draw_element(Image& img, const ElementAnnotation& a,
                  const std::vector<std::pair<std::string, std::array<double, 3>>>&
                      colors) {
  const std::array<double, 3>* rgb = nullptr;
  for (const auto& [name, val] : colors)
    if (name == a.color) rgb = &val;
  if (!rgb) throw DataError("render: unknown color '" + a.color + "'");

  const int x0 = static_cast<int>(std::lround(a.bbox.x0 * img.width));
  const int y0 = static_cast<int>(std::lround(a.bbox.y0 * img.height));
  const int x1 = static_cast<int>(std::lround(a.bbox.x1 * img.width));
  const int y1 = static_cast<int>(std::lround(a.bbox.y1 * img.height));
  const int w = x1 - x0;
  const int h = y1 - y0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double px = (x - x0) + 0.5;
      const double py = (y - y0) + 0.5;
      if (!glyph_ink(a.shape, px, py, x - x0, y - y0, w, h)) continue;
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = (*rgb)[ch];
    }
  }
}

}  // namespace

Image render(const Sample& sample) {
  Image img(sample.height, sample.width);
  img.fill(sample.background[0], sample.background[1], sample.background[2]);
  const auto& colors = element_colors();
  for (const auto& d : sample.distractors) draw_element(img, d, colors);
  draw_element(img, sample.target, colors);
  return img;
}

int split_of(std::uint64_t master_seed, int index) {
  const std::uint64_t h =
      hash_mix(hash_mix(master_seed, 0x53504C4954ULL),
               static_cast<std::uint64_t>(index));
  const int bucket = static_cast<int>(h % 10);
  if (bucket < 8) return 0;
  return bucket == 8 ? 1 : 2;
}

namespace {

json preset_json(const PlatformPreset& p) {
  json j;
  j["name"] = p.name;
  j["height"] = p.height;
  j["width"] = p.width;
  j["min_elements"] = p.min_elements;
  j["max_elements"] = p.max_elements;
  j["min_elem_px"] = p.min_elem_px;
  j["max_elem_px"] = p.max_elem_px;
  json bgs = json::array();
  for (const auto& b : p.backgrounds)
    bgs.push_back(json::array({round6(b[0]), round6(b[1]), round6(b[2])}));
  j["backgrounds"] = bgs;
  return j;
}

PlatformPreset preset_from_json(const json& j) {
  PlatformPreset p;
  p.name = j.at("name").get<std::string>();
  p.height = j.at("height").get<int>();
  p.width = j.at("width").get<int>();
  p.min_elements = j.at("min_elements").get<int>();
  p.max_elements = j.at("max_elements").get<int>();
  p.min_elem_px = j.at("min_elem_px").get<int>();
  p.max_elem_px = j.at("max_elem_px").get<int>();
  for (const auto& b : j.at("backgrounds"))
    p.backgrounds.push_back({b[0].get<double>(), b[1].get<double>(),
                             b[2].get<double>()});
  return p;
}

std::string sample_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", index);
  return buf;
}

}  // namespace

void make_corpus(const CorpusParams& params, const std::string& out_dir) {
  if (params.n < 1) throw DataError("make_corpus: n must be >= 1");
  if (params.presets.empty()) throw DataError("make_corpus: no presets");
  for (const auto& p : params.presets) p.validate();

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw DataError("make_corpus: cannot create '" + out_dir + "': " + ec.message());

  std::ofstream ann(fs::path(out_dir) / "annotations.jsonl",
                    std::ios::binary | std::ios::trunc);
  if (!ann) throw DataError("make_corpus: cannot write annotations in '" + out_dir + "'");

  std::vector<std::string> splits[3];
  for (int i = 0; i < params.n; ++i) {
    const PlatformPreset& preset = params.presets[i % params.presets.size()];
    const std::uint64_t seed =
        hash_mix(params.master_seed, static_cast<std::uint64_t>(i));
    const Sample s = generate_screen(seed, preset);
    const std::string id = sample_id(i);
    const std::string rel = "images/" + id + ".png";
    write_png(s.image, (fs::path(out_dir) / rel).string());
    splits[split_of(params.master_seed, i)].push_back(id);

    json rec;
    rec["id"] = id;
    rec["image_path"] = rel;
    rec["platform"] = s.platform;
    rec["instruction_text"] = s.target.instruction_text;
    rec["instruction_tokens"] = s.target.instruction;
    rec["target_bbox"] = box_json(s.target.bbox);
    rec["kind"] = s.target.group;
    json ds = json::array();
    for (const auto& d : s.distractors) {
      json dj;
      dj["bbox"] = box_json(d.bbox);
      dj["kind"] = d.group;
      dj["color"] = d.color;
      dj["shape"] = d.shape;
      ds.push_back(dj);
    }
    rec["distractors"] = ds;
    ann << rec.dump() << "\n";
  }
  ann.close();
  if (!ann) throw DataError("make_corpus: write failure in '" + out_dir + "'");

  json manifest;
  manifest["version"] = kCorpusVersion;
  manifest["master_seed"] = params.master_seed;
  manifest["n"] = params.n;
  json pj = json::array();
  for (const auto& p : params.presets) pj.push_back(preset_json(p));
  manifest["presets"] = pj;
  manifest["splits"] =
      json{{"train", splits[0]}, {"val", splits[1]}, {"test", splits[2]}};
  std::ofstream mf(fs::path(out_dir) / "manifest.json",
                   std::ios::binary | std::ios::trunc);
  mf << manifest.dump(2) << "\n";
  mf.close();
  if (!mf) throw DataError("make_corpus: cannot write manifest in '" + out_dir + "'");
}

Corpus load_corpus(const std::string& dir) {
  Corpus c;
  c.dir = dir;

  std::ifstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!mf) throw DataError("load_corpus: missing manifest in '" + dir + "'");
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw DataError(std::string("load_corpus: bad manifest: ") + e.what());
  }
  c.version = manifest.at("version").get<int>();
  if (c.version != kCorpusVersion)
    throw DataError("load_corpus: unsupported corpus version");
  c.master_seed = manifest.at("master_seed").get<std::uint64_t>();
  for (const auto& pj : manifest.at("presets"))
    c.presets.push_back(preset_from_json(pj));
  c.split_train = manifest.at("splits").at("train").get<std::vector<std::string>>();
  c.split_val = manifest.at("splits").at("val").get<std::vector<std::string>>();
  c.split_test = manifest.at("splits").at("test").get<std::vector<std::string>>();

  std::ifstream ann(fs::path(dir) / "annotations.jsonl", std::ios::binary);
  if (!ann) throw DataError("load_corpus: missing annotations in '" + dir + "'");
  std::string line;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(std::string("load_corpus: bad annotation line: ") + e.what());
    }
    CorpusRecord r;
    r.id = rec.at("id").get<std::string>();
    r.image_path = rec.at("image_path").get<std::string>();
    r.platform = rec.at("platform").get<std::string>();
    r.instruction_text = rec.at("instruction_text").get<std::string>();
    r.instruction_tokens = rec.at("instruction_tokens").get<std::vector<int>>();
    r.target_bbox = box_from_json(rec.at("target_bbox"));
    r.kind = rec.at("kind").get<std::string>();
    for (const auto& dj : rec.at("distractors")) {
      ElementAnnotation d;
      d.bbox = box_from_json(dj.at("bbox"));
      d.group = dj.at("kind").get<std::string>();
      d.color = dj.at("color").get<std::string>();
      d.shape = dj.at("shape").get<std::string>();
      r.distractors.push_back(std::move(d));
    }
    c.records.push_back(std::move(r));
  }
  return c;
}

const CorpusRecord& Corpus::record(const std::string& id) const {
  for (const auto& r : records)
    if (r.id == id) return r;
  throw DataError("corpus: no record with id '" + id + "'");
}

Image Corpus::load_image(const CorpusRecord& rec) const {
  return read_png((fs::path(dir) / rec.image_path).string());
}

std::vector<std::string> Corpus::split(const std::string& name) const {
  if (name == "train") return split_train;
  if (name == "val") return split_val;
  if (name == "test") return split_test;
  if (name == "all") {
    std::vector<std::string> ids;
    for (const auto& r : records) ids.push_back(r.id);
    return ids;
  }
  throw DataError("corpus: unknown split '" + name + "'");
}

}  // namespace guiprobe
