#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "coad/augmentation.hpp"
#include "coad/corpus.hpp"
#include "coad/rng.hpp"
#include "coad/tensor/ops.hpp"
#include "coad/tensor/tensor.hpp"

namespace coad {

struct ModelConfig {
  int layers = 2;
  int hidden = 64;
  int heads = 2;
  int ff = 256;
  double dropout = 0.1;
  int max_length = 64;     // longest input sequence; also the position table size
  int symptom_vocab = 0;   // real symptoms + END + PAD
  int disease_vocab = 0;
  int status_vocab = kStatusCount;
  std::uint64_t seed = 0;  // weight initialization

  // Throws ConfigError.
  void validate() const;

  // Backbone shape of the full-size decoder (L=6, H=768, A=6).
  static ModelConfig paper_scale();

  ModelConfig with_vocab(const Vocab& vocab) const;

  int end_id() const { return symptom_vocab - 2; }
  int pad_id() const { return symptom_vocab - 1; }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

// Explicit prefix gets 0..N-2, every position of repeated group g gets
// N-1+g, so each anchor carries its plain-sequence position.
std::vector<int> chain_positions(int n, int m);

// One or more sequences of equal (padded) length, flattened row-major.
struct ModelInput {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> tokens;               // batch * length
  std::vector<int> statuses;             // batch * length
  std::vector<int> positions;            // batch * length
  std::vector<std::uint8_t> masks;       // batch * length * length, (q, k) row-major per sequence

  // A single sequence with an explicit mask.
  static ModelInput single(std::span<const SymptomEntry> tokens, std::span<const int> positions,
                           const AttentionMask& mask);
  // A single plain sequence: positions 0..L-1 and a causal mask.
  static ModelInput plain(std::span<const SymptomEntry> tokens);
};

template <typename T>
struct ModelOutput {
  tensor::Variable<T> hidden;          // [batch*length, H]
  tensor::Variable<T> symptom_logits;  // [batch*length, symptom_vocab]
  tensor::Variable<T> disease_logits;  // [batch*length, disease_vocab]
};

enum class Init { normal, zero };

template <typename T>
class CoadModel {
 public:
  using Param = std::pair<std::string, tensor::Variable<T>>;

  explicit CoadModel(const ModelConfig& config, Init init = Init::normal);

  CoadModel(CoadModel&&) noexcept = default;
  CoadModel& operator=(CoadModel&&) noexcept = default;
  CoadModel(const CoadModel&) = delete;
  CoadModel& operator=(const CoadModel&) = delete;

  // Deep copy of all parameters.
  CoadModel clone() const;

  const ModelConfig& config() const { return config_; }

  // Dropout is active iff `dropout_rng` is non-null. Throws ShapeError on
  // over-long input, mask/length mismatch or out-of-range ids.
  ModelOutput<T> forward(tensor::Tape<T>& tape, const ModelInput& input, Rng* dropout_rng = nullptr) const;

  const std::vector<Param>& parameters() const { return params_; }
  tensor::Variable<T>& parameter(const std::string& name);
  const tensor::Variable<T>& parameter(const std::string& name) const;
  std::size_t parameter_count() const;

  void zero_grad();

  // Checkpoint with the model config and vocabulary echoed in the header.
  void save(const std::filesystem::path& path, const Vocab& vocab, const nlohmann::json& extra = {}) const;

 private:
  struct Block {
    tensor::Variable<T> ln1_g, ln1_b, w_qkv, b_qkv, w_out, b_out, ln2_g, ln2_b, w_in, b_in, w_ff, b_ff;
  };

  tensor::Variable<T> add_param(const std::string& name, tensor::Shape shape, double stddev, double fill, Init init,
                                Rng& rng);
  tensor::Variable<T> attention(tensor::Tape<T>& tape, const Block& block, const tensor::Variable<T>& x,
                                const ModelInput& input, Rng* rng) const;

  ModelConfig config_;
  std::vector<Param> params_;
  tensor::Variable<T> tok_emb_, status_emb_, pos_emb_, emb_ln_g_, emb_ln_b_, ln_f_g_, ln_f_b_;
  tensor::Variable<T> sym_w_, sym_b_, dis_w_, dis_b_;
  std::vector<Block> blocks_;
};

template <typename T>
struct LoadedModel {
  CoadModel<T> model;
  Vocab vocab;
  nlohmann::json meta;  // the full config echo
};

// Values are converted to T when the stored width differs. Throws DataError
// when the stored parameters do not match the echoed config.
template <typename T>
LoadedModel<T> load_model(const std::filesystem::path& path);

}  // namespace coad
