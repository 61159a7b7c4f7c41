#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "guiprobe/image.hpp"
#include "guiprobe/tape.hpp"
#include "guiprobe/vocab.hpp"

namespace guiprobe {

struct ModelConfig {
  int patch_size = 16;
  int embed_dim = 128;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int heads = 4;
  int mlp_mult = 4;
  int max_seq = 20;  // decode cap; bbox output needs 18 tokens
  std::string output_mode = "point";  // point | bbox

  void validate() const;
};

// Decoded model output. Coordinates are milli-normalized integers (0-999
// over the unit image axes).
struct GroundingPrediction {
  std::vector<int> raw_tokens;  // decoded ids, EOS excluded
  bool valid = false;
  bool is_box = false;
  int x = 0, y = 0;                      // point mode
  int bx0 = 0, by0 = 0, bx1 = 0, by1 = 0;  // bbox mode

  // landing position in normalized units: the point itself, or the
  // predicted box's center
  double px() const;
  double py() const;
};

// Strict grammar: "(xxx,yyy)" for point, "(x0,y0,x1,y1)" with three digits
// per field for bbox. Anything else is invalid (never an exception).
GroundingPrediction parse_prediction(const std::string& s, const std::string& mode);
GroundingPrediction parse_prediction(const std::vector<int>& tokens,
                                     const Vocabulary& vocab,
                                     const std::string& mode);

struct TrainMeta {
  long steps = 0;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  double val_sr = -1.0;  // -1 = not measured
};

// The victim model: patch encoder + autoregressive coordinate decoder.
// All forward entry points are const and safe to share across threads.
class Grounder {
 public:
  using ParamVals = std::map<std::string, Tape::Val>;

  static Grounder init(const ModelConfig& cfg, const Vocabulary& vocab,
                       std::uint64_t seed);
  static Grounder load(const std::string& path);
  void save(const std::string& path) const;

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  const TrainMeta& meta() const { return meta_; }
  TrainMeta& meta() { return meta_; }
  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  long param_count() const;

  // ---- inference (values only) ----
  Tensor encode_image(const Image& img) const;  // [patches x embed_dim]
  Tensor forward_logits(const Image& img, const std::vector<int>& instruction,
                        const std::vector<int>& prefix) const;  // [V]
  GroundingPrediction generate(const Image& img,
                               const std::vector<int>& instruction) const;
  double lm_loss(const Image& img, const std::vector<int>& instruction,
                 const std::vector<int>& targets) const;

  // ---- graph building (training and attacks) ----
  // When `param_vals` is non-null, parameters enter the tape as gradient
  // leaves (one per name, recorded there); otherwise they are constants.
  Tape::Val build_image_leaf(Tape& tape, const Image& img,
                             bool requires_grad) const;
  Tape::Val build_encoder(Tape& tape, Tape::Val image, int height, int width,
                          ParamVals* param_vals) const;
  Tape::Val build_logits_rows(Tape& tape, Tape::Val visual,
                              const std::vector<int>& instruction,
                              const std::vector<int>& prefix,
                              ParamVals* param_vals) const;
  Tape::Val build_lm_loss(Tape& tape, Tape::Val image, int height, int width,
                          const std::vector<int>& instruction,
                          const std::vector<int>& targets,
                          ParamVals* param_vals) const;

  // training target string for a ground-truth box, per output_mode
  std::string target_string_for(const Box& gt) const;
  std::vector<int> target_ids_for(const Box& gt) const;  // chars + EOS

 private:
  Grounder() = default;

  Tape::Val param(Tape& tape, const std::string& name,
                  ParamVals* param_vals) const;
  Tape::Val attention(Tape& tape, Tape::Val x, const std::string& base,
                      const Tensor* mask, ParamVals* param_vals) const;
  Tape::Val block(Tape& tape, Tape::Val x, const std::string& base,
                  const Tensor* mask, ParamVals* param_vals) const;

  ModelConfig cfg_;
  Vocabulary vocab_ = Vocabulary::standard();
  std::map<std::string, Tensor> params_;
  TrainMeta meta_;
};

// positional encodings (deterministic functions, not parameters)
Tensor visual_pos_encoding(int grid_rows, int grid_cols, int dim);
Tensor text_pos_encoding(int length, int dim);

}  // namespace guiprobe
