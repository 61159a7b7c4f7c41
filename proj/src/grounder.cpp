#include "guiprobe/grounder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "guiprobe/errors.hpp"
#include "guiprobe/optim.hpp"
#include "guiprobe/rng.hpp"

using nlohmann::json;

namespace guiprobe {

void ModelConfig::validate() const {
  if (patch_size < 4) throw DataError("model config: patch_size must be >= 4");
  if (embed_dim < 8) throw DataError("model config: embed_dim must be >= 8");
  if (embed_dim % 4 != 0)
    throw DataError("model config: embed_dim must be divisible by 4");
  if (heads < 1 || embed_dim % heads != 0)
    throw DataError("model config: embed_dim must be divisible by heads");
  if (embed_dim % 2 != 0)
    throw DataError("model config: embed_dim must be even");
  if (encoder_layers < 1 || decoder_layers < 1)
    throw DataError("model config: need at least one layer per stack");
  if (mlp_mult < 1) throw DataError("model config: mlp_mult must be >= 1");
  if (max_seq < 1) throw DataError("model config: max_seq must be >= 1");
  if (output_mode != "point" && output_mode != "bbox")
    throw DataError("model config: output_mode must be 'point' or 'bbox'");
}

double GroundingPrediction::px() const {
  return is_box ? (bx0 + bx1) / 2000.0 : x / 1000.0;
}

double GroundingPrediction::py() const {
  return is_box ? (by0 + by1) / 2000.0 : y / 1000.0;
}

namespace {

// "(ddd,ddd)" or "(ddd,ddd,ddd,ddd)" -> field values; empty on any violation
std::vector<int> parse_fields(const std::string& s, int n_fields) {
  const size_t expect = 2 + 4 * static_cast<size_t>(n_fields) - 1;
  if (s.size() != expect) return {};
  if (s.front() != '(' || s.back() != ')') return {};
  std::vector<int> out;
  size_t pos = 1;
  for (int f = 0; f < n_fields; ++f) {
    if (f > 0) {
      if (s[pos] != ',') return {};
      ++pos;
    }
    int v = 0;
    for (int d = 0; d < 3; ++d, ++pos) {
      if (s[pos] < '0' || s[pos] > '9') return {};
      v = v * 10 + (s[pos] - '0');
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

GroundingPrediction parse_prediction(const std::string& s,
                                     const std::string& mode) {
  GroundingPrediction p;
  if (mode == "point") {
    const auto f = parse_fields(s, 2);
    if (f.empty()) return p;
    p.valid = true;
    p.x = f[0];
    p.y = f[1];
  } else if (mode == "bbox") {
    const auto f = parse_fields(s, 4);
    if (f.empty()) return p;
    if (f[0] > f[2] || f[1] > f[3]) return p;
    p.valid = true;
    p.is_box = true;
    p.bx0 = f[0];
    p.by0 = f[1];
    p.bx1 = f[2];
    p.by1 = f[3];
  } else {
    throw DataError("parse_prediction: unknown output mode '" + mode + "'");
  }
  return p;
}

GroundingPrediction parse_prediction(const std::vector<int>& tokens,
                                     const Vocabulary& vocab,
                                     const std::string& mode) {
  std::string s;
  for (int id : tokens) {
    if (id < 0 || id >= vocab.size()) {
      GroundingPrediction p;
      p.raw_tokens = tokens;
      return p;
    }
    const std::string& t = vocab.token(id);
    if (t.size() != 1) {  // specials or words can never form a coordinate
      GroundingPrediction p;
      p.raw_tokens = tokens;
      return p;
    }
    s += t;
  }
  GroundingPrediction p = parse_prediction(s, mode);
  p.raw_tokens = tokens;
  return p;
}

Tensor visual_pos_encoding(int grid_rows, int grid_cols, int dim) {
  constexpr double kTau = 6.283185307179586476925286766559;
  const int quarter = dim / 4;
  Tensor pe = Tensor::zeros({grid_rows * grid_cols, dim});
  for (int r = 0; r < grid_rows; ++r) {
    const double nr = (r + 0.5) / grid_rows;
    for (int c = 0; c < grid_cols; ++c) {
      const double nc = (c + 0.5) / grid_cols;
      const int row = r * grid_cols + c;
      for (int j = 0; j < quarter; ++j) {
        const double fr = kTau * (j + 1) * nr;
        const double fc = kTau * (j + 1) * nc;
        pe.at(row, j) = std::sin(fr);
        pe.at(row, quarter + j) = std::cos(fr);
        pe.at(row, 2 * quarter + j) = std::sin(fc);
        pe.at(row, 3 * quarter + j) = std::cos(fc);
      }
    }
  }
  return pe;
}

Tensor text_pos_encoding(int length, int dim) {
  Tensor pe = Tensor::zeros({length, dim});
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim / 2; ++i) {
      const double div = std::exp(-std::log(10000.0) * (2.0 * i) / dim);
      pe.at(pos, 2 * i) = std::sin(pos * div);
      pe.at(pos, 2 * i + 1) = std::cos(pos * div);
    }
  }
  return pe;
}

Grounder Grounder::init(const ModelConfig& cfg, const Vocabulary& vocab,
                        std::uint64_t seed) {
  cfg.validate();
  Grounder g;
  g.cfg_ = cfg;
  g.vocab_ = vocab;
  g.meta_.seed = seed;

  const int D = cfg.embed_dim;
  const int M = D * cfg.mlp_mult;
  const int V = vocab.size();
  const int pd = cfg.patch_size * cfg.patch_size * 3;
  auto& P = g.params_;

  P["patch_embed.w"] = Tensor::zeros({pd, D});
  P["patch_embed.b"] = Tensor::zeros({D});
  const auto add_stack = [&](const std::string& stem, int layers) {
    for (int l = 0; l < layers; ++l) {
      const std::string base = stem + std::to_string(l);
      P[base + ".ln1.g"] = Tensor::zeros({D});
      P[base + ".ln1.b"] = Tensor::zeros({D});
      for (const char* m : {"wq", "wk", "wv", "wo"})
        P[base + ".attn." + m] = Tensor::zeros({D, D});
      for (const char* m : {"bq", "bk", "bv", "bo"})
        P[base + ".attn." + m] = Tensor::zeros({D});
      P[base + ".ln2.g"] = Tensor::zeros({D});
      P[base + ".ln2.b"] = Tensor::zeros({D});
      P[base + ".mlp.w1"] = Tensor::zeros({D, M});
      P[base + ".mlp.b1"] = Tensor::zeros({M});
      P[base + ".mlp.w2"] = Tensor::zeros({M, D});
      P[base + ".mlp.b2"] = Tensor::zeros({D});
    }
  };
  add_stack("enc", cfg.encoder_layers);
  P["enc_ln.g"] = Tensor::zeros({D});
  P["enc_ln.b"] = Tensor::zeros({D});
  P["token_embed"] = Tensor::zeros({V, D});
  P["seg_embed"] = Tensor::zeros({3, D});
  add_stack("dec", cfg.decoder_layers);
  P["dec_ln.g"] = Tensor::zeros({D});
  P["dec_ln.b"] = Tensor::zeros({D});
  P["out.w"] = Tensor::zeros({D, V});
  P["out.b"] = Tensor::zeros({V});

  // Deterministic init: iterate the name-sorted map, drawing sequentially.
  Rng rng(seed);
  for (auto& [name, t] : P) {
    if (t.ndim() == 1) {
      const bool gain = name.size() >= 2 && name.compare(name.size() - 2, 2, ".g") == 0;
      std::fill(t.data.begin(), t.data.end(), gain ? 1.0 : 0.0);
    } else {
      for (double& v : t.data) v = rng.normal(0.0, 0.02);
    }
    snap_to_float32(t);
  }
  return g;
}

long Grounder::param_count() const {
  long n = 0;
  for (const auto& [name, t] : params_) n += static_cast<long>(t.numel());
  return n;
}

Tape::Val Grounder::param(Tape& tape, const std::string& name,
                          ParamVals* param_vals) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw DataError("grounder: no parameter '" + name + "'");
  if (!param_vals) return tape.constant(it->second);
  auto found = param_vals->find(name);
  if (found != param_vals->end()) return found->second;
  Tensor t = it->second;
  t.requires_grad = true;
  const Tape::Val v = tape.leaf(std::move(t));
  param_vals->emplace(name, v);
  return v;
}

Tape::Val Grounder::attention(Tape& tape, Tape::Val x, const std::string& base,
                              const Tensor* mask, ParamVals* reg) const {
  const int D = cfg_.embed_dim;
  const int dk = D / cfg_.heads;
  const auto q = tape.add_bias(tape.matmul(x, param(tape, base + ".wq", reg)),
                               param(tape, base + ".bq", reg));
  const auto k = tape.add_bias(tape.matmul(x, param(tape, base + ".wk", reg)),
                               param(tape, base + ".bk", reg));
  const auto v = tape.add_bias(tape.matmul(x, param(tape, base + ".wv", reg)),
                               param(tape, base + ".bv", reg));
  std::vector<Tape::Val> heads;
  for (int h = 0; h < cfg_.heads; ++h) {
    const auto qh = tape.slice_cols(q, h * dk, (h + 1) * dk);
    const auto kh = tape.slice_cols(k, h * dk, (h + 1) * dk);
    const auto vh = tape.slice_cols(v, h * dk, (h + 1) * dk);
    auto scores =
        tape.scale(tape.matmul(qh, tape.transpose(kh)), 1.0 / std::sqrt(dk));
    const auto probs = mask ? tape.softmax_rows_masked(scores, *mask)
                            : tape.softmax_rows(scores);
    heads.push_back(tape.matmul(probs, vh));
  }
  const auto ctx = cfg_.heads == 1 ? heads[0] : tape.concat_cols(heads);
  return tape.add_bias(tape.matmul(ctx, param(tape, base + ".wo", reg)),
                       param(tape, base + ".bo", reg));
}

Tape::Val Grounder::block(Tape& tape, Tape::Val x, const std::string& base,
                          const Tensor* mask, ParamVals* reg) const {
  const auto ln1 = tape.layer_norm(x, param(tape, base + ".ln1.g", reg),
                                   param(tape, base + ".ln1.b", reg));
  x = tape.add(x, attention(tape, ln1, base + ".attn", mask, reg));
  const auto ln2 = tape.layer_norm(x, param(tape, base + ".ln2.g", reg),
                                   param(tape, base + ".ln2.b", reg));
  const auto h1 =
      tape.relu(tape.add_bias(tape.matmul(ln2, param(tape, base + ".mlp.w1", reg)),
                              param(tape, base + ".mlp.b1", reg)));
  const auto h2 = tape.add_bias(tape.matmul(h1, param(tape, base + ".mlp.w2", reg)),
                                param(tape, base + ".mlp.b2", reg));
  return tape.add(x, h2);
}

Tape::Val Grounder::build_image_leaf(Tape& tape, const Image& img,
                                     bool requires_grad) const {
  Tensor t;
  t.shape = {img.height, img.width, 3};
  t.data = img.data;
  t.requires_grad = requires_grad;
  return requires_grad ? tape.leaf(std::move(t)) : tape.constant(std::move(t));
}

Tape::Val Grounder::build_encoder(Tape& tape, Tape::Val image, int height,
                                  int width, ParamVals* reg) const {
  const int p = cfg_.patch_size;
  const int padb = (p - height % p) % p;
  const int padr = (p - width % p) % p;
  Tape::Val im = image;
  if (padb > 0 || padr > 0) im = tape.pad_replicate(im, padb, padr);
  const int grid_r = (height + padb) / p;
  const int grid_c = (width + padr) / p;

  const auto patches = tape.patchify(im, p);
  auto x = tape.add_bias(tape.matmul(patches, param(tape, "patch_embed.w", reg)),
                         param(tape, "patch_embed.b", reg));
  x = tape.add(x, tape.constant(visual_pos_encoding(grid_r, grid_c, cfg_.embed_dim)));
  for (int l = 0; l < cfg_.encoder_layers; ++l)
    x = block(tape, x, "enc" + std::to_string(l), nullptr, reg);
  return tape.layer_norm(x, param(tape, "enc_ln.g", reg),
                         param(tape, "enc_ln.b", reg));
}

namespace {

// Decoder attention layout: all rows see the visual+instruction context;
// prefix rows additionally see prefix positions up to themselves.
Tensor decoder_mask(int context_rows, int prefix_rows) {
  const int T = context_rows + prefix_rows;
  Tensor m = Tensor::zeros({T, T});
  for (int i = 0; i < T; ++i) {
    for (int j = 0; j < T; ++j) {
      const bool allowed =
          j < context_rows || (i >= context_rows && j <= i);
      if (allowed) m.at(i, j) = 1.0;
    }
  }
  return m;
}

}  // namespace

Tape::Val Grounder::build_logits_rows(Tape& tape, Tape::Val visual,
                                      const std::vector<int>& instruction,
                                      const std::vector<int>& prefix,
                                      ParamVals* reg) const {
  if (static_cast<int>(prefix.size()) > cfg_.max_seq)
    throw DataError("grounder: prefix longer than max_seq");
  const int V = vocab_.size();
  for (int id : instruction)
    if (id < 0 || id >= V) throw DataError("grounder: instruction token out of range");
  for (int id : prefix)
    if (id < 0 || id >= V) throw DataError("grounder: prefix token out of range");

  const int D = cfg_.embed_dim;
  const auto seg = param(tape, "seg_embed", reg);
  const auto seg_row = [&](int k) {
    return tape.reshape(tape.slice_rows(seg, k, k + 1), {D});
  };
  const auto tok = param(tape, "token_embed", reg);

  std::vector<Tape::Val> parts;
  parts.push_back(tape.add_bias(visual, seg_row(0)));
  if (!instruction.empty()) {
    auto e = tape.embed_rows(tok, instruction);
    e = tape.add(e, tape.constant(
                        text_pos_encoding(static_cast<int>(instruction.size()), D)));
    parts.push_back(tape.add_bias(e, seg_row(1)));
  }
  std::vector<int> prefix_ids;
  prefix_ids.push_back(Vocabulary::kBos);
  prefix_ids.insert(prefix_ids.end(), prefix.begin(), prefix.end());
  auto pe = tape.embed_rows(tok, prefix_ids);
  pe = tape.add(pe, tape.constant(
                        text_pos_encoding(static_cast<int>(prefix_ids.size()), D)));
  parts.push_back(tape.add_bias(pe, seg_row(2)));

  auto x = tape.concat_rows(parts);
  const int T = tape.value(x).rows();
  const int P = static_cast<int>(prefix_ids.size());
  const Tensor mask = decoder_mask(T - P, P);
  for (int l = 0; l < cfg_.decoder_layers; ++l)
    x = block(tape, x, "dec" + std::to_string(l), &mask, reg);
  x = tape.layer_norm(x, param(tape, "dec_ln.g", reg), param(tape, "dec_ln.b", reg));
  const auto rows = tape.slice_rows(x, T - P, T);
  return tape.add_bias(tape.matmul(rows, param(tape, "out.w", reg)),
                       param(tape, "out.b", reg));
}

Tape::Val Grounder::build_lm_loss(Tape& tape, Tape::Val image, int height,
                                  int width, const std::vector<int>& instruction,
                                  const std::vector<int>& targets,
                                  ParamVals* reg) const {
  if (targets.empty()) throw DataError("grounder: lm_loss needs non-empty targets");
  for (int id : targets)
    if (id < 0 || id >= vocab_.size())
      throw DataError("grounder: target token out of range");
  const auto visual = build_encoder(tape, image, height, width, reg);
  const std::vector<int> prefix(targets.begin(), targets.end() - 1);
  const auto logits = build_logits_rows(tape, visual, instruction, prefix, reg);
  return tape.cross_entropy_rows(logits, targets);
}

Tensor Grounder::encode_image(const Image& img) const {
  Tape tape;
  const auto im = build_image_leaf(tape, img, false);
  const auto out = build_encoder(tape, im, img.height, img.width, nullptr);
  return tape.value(out);
}

Tensor Grounder::forward_logits(const Image& img,
                                const std::vector<int>& instruction,
                                const std::vector<int>& prefix) const {
  Tape tape;
  const auto im = build_image_leaf(tape, img, false);
  const auto vis = build_encoder(tape, im, img.height, img.width, nullptr);
  const auto logits = build_logits_rows(tape, vis, instruction, prefix, nullptr);
  const Tensor& L = tape.value(logits);
  const int r = L.rows() - 1;
  Tensor out = Tensor::zeros({L.cols()});
  for (int c = 0; c < L.cols(); ++c) out.data[c] = L.at(r, c);
  return out;
}

GroundingPrediction Grounder::generate(const Image& img,
                                       const std::vector<int>& instruction) const {
  Tensor vis;
  {
    Tape tape;
    const auto im = build_image_leaf(tape, img, false);
    vis = tape.value(build_encoder(tape, im, img.height, img.width, nullptr));
  }
  std::vector<int> out;
  for (int step = 0; step < cfg_.max_seq; ++step) {
    Tape tape;
    const auto logits =
        build_logits_rows(tape, tape.constant(vis), instruction, out, nullptr);
    const Tensor& L = tape.value(logits);
    const int r = L.rows() - 1;
    int best = 0;
    double best_v = L.at(r, 0);
    for (int c = 1; c < L.cols(); ++c) {
      if (L.at(r, c) > best_v) {  // strict: ties keep the lowest id
        best_v = L.at(r, c);
        best = c;
      }
    }
    if (best == Vocabulary::kEos) break;
    out.push_back(best);
  }
  return parse_prediction(out, vocab_, cfg_.output_mode);
}

double Grounder::lm_loss(const Image& img, const std::vector<int>& instruction,
                         const std::vector<int>& targets) const {
  Tape tape;
  const auto im = build_image_leaf(tape, img, false);
  const auto loss =
      build_lm_loss(tape, im, img.height, img.width, instruction, targets, nullptr);
  return tape.value(loss).data[0];
}

namespace {

int milli(double v) {
  const long r = std::lround(v * 1000.0);
  return static_cast<int>(std::min(999L, std::max(0L, r)));
}

}  // namespace

std::string Grounder::target_string_for(const Box& gt) const {
  char buf[32];
  if (cfg_.output_mode == "point") {
    std::snprintf(buf, sizeof buf, "(%03d,%03d)", milli(gt.cx()), milli(gt.cy()));
  } else {
    std::snprintf(buf, sizeof buf, "(%03d,%03d,%03d,%03d)", milli(gt.x0),
                  milli(gt.y0), milli(gt.x1), milli(gt.y1));
  }
  return buf;
}

std::vector<int> Grounder::target_ids_for(const Box& gt) const {
  std::vector<int> ids = vocab_.tokenize_chars(target_string_for(gt));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

// ---- checkpoint container ----
//
//   bytes 0-3   magic "GPCK"
//   bytes 4-7   container version, uint32 LE
//   bytes 8-15  header length, uint64 LE
//   header      JSON: format_version, config, vocab, meta, tensor directory
//   payload     per directory entry: uint32 ndim, uint32 dims[], float32 data[]
//
// All multi-byte values are little-endian; floats are IEEE-754 binary32.

namespace {

constexpr char kMagic[4] = {'G', 'P', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

void Grounder::save(const std::string& path) const {
  json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = {{"patch_size", cfg_.patch_size},
                      {"embed_dim", cfg_.embed_dim},
                      {"encoder_layers", cfg_.encoder_layers},
                      {"decoder_layers", cfg_.decoder_layers},
                      {"heads", cfg_.heads},
                      {"mlp_mult", cfg_.mlp_mult},
                      {"max_seq", cfg_.max_seq},
                      {"output_mode", cfg_.output_mode}};
  header["vocab"] = vocab_.tokens();
  header["meta"] = {{"steps", meta_.steps},
                    {"seed", meta_.seed},
                    {"final_loss", meta_.final_loss},
                    {"val_sr", meta_.val_sr}};
  json dir = json::array();
  for (const auto& [name, t] : params_)
    dir.push_back({{"name", name}, {"shape", t.shape}});
  header["tensors"] = dir;
  const std::string htext = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("checkpoint: cannot write '" + path + "'");
  f.write(kMagic, 4);
  write_pod<std::uint32_t>(f, kCheckpointVersion);
  write_pod<std::uint64_t>(f, htext.size());
  f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& [name, t] : params_) {
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(t.ndim()));
    for (int d : t.shape) write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(d));
    for (double v : t.data) write_pod<float>(f, static_cast<float>(v));
  }
  f.close();
  if (!f) throw DataError("checkpoint: write failure on '" + path + "'");
}

Grounder Grounder::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot read '" + path + "'");
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic in '" + path + "'");
  const auto version = read_pod<std::uint32_t>(f);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version in '" + path + "'");
  const auto hlen = read_pod<std::uint64_t>(f);
  std::string htext(hlen, '\0');
  f.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw DataError("checkpoint: truncated header in '" + path + "'");

  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  }

  Grounder g;
  const json& c = header.at("config");
  g.cfg_.patch_size = c.at("patch_size").get<int>();
  g.cfg_.embed_dim = c.at("embed_dim").get<int>();
  g.cfg_.encoder_layers = c.at("encoder_layers").get<int>();
  g.cfg_.decoder_layers = c.at("decoder_layers").get<int>();
  g.cfg_.heads = c.at("heads").get<int>();
  g.cfg_.mlp_mult = c.at("mlp_mult").get<int>();
  g.cfg_.max_seq = c.at("max_seq").get<int>();
  g.cfg_.output_mode = c.at("output_mode").get<std::string>();
  g.cfg_.validate();
  g.vocab_ = Vocabulary::from_tokens(header.at("vocab").get<std::vector<std::string>>());
  const json& m = header.at("meta");
  g.meta_.steps = m.at("steps").get<long>();
  g.meta_.seed = m.at("seed").get<std::uint64_t>();
  g.meta_.final_loss = m.at("final_loss").get<double>();
  g.meta_.val_sr = m.at("val_sr").get<double>();

  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    const auto ndim = read_pod<std::uint32_t>(f);
    if (!f || ndim != shape.size())
      throw DataError("checkpoint: shape prefix mismatch for '" + name + "'");
    std::vector<int> stored(ndim);
    for (auto& d : stored) d = static_cast<int>(read_pod<std::uint32_t>(f));
    if (stored != shape)
      throw DataError("checkpoint: shape mismatch for '" + name + "'");
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.data) v = static_cast<double>(read_pod<float>(f));
    if (!f) throw DataError("checkpoint: truncated tensor '" + name + "'");
    g.params_[name] = std::move(t);
  }
  f.peek();
  if (!f.eof()) throw DataError("checkpoint: trailing bytes in '" + path + "'");
  return g;
}

}  // namespace guiprobe
