#include "coad/model.hpp"

#include <cmath>

#include "coad/error.hpp"
#include "coad/tensor/checkpoint.hpp"

namespace coad {

using tensor::Shape;
using tensor::Tape;
using tensor::Tensor;
using tensor::Variable;

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (layers < 1 || hidden < 1 || heads < 1 || ff < 1) fail("layers, hidden, heads and ff must be positive");
  if (hidden % heads != 0) fail("hidden width must be divisible by the head count");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (max_length < 1) fail("max_length must be positive");
  if (symptom_vocab < 3) fail("symptom vocabulary must hold at least one symptom plus END and PAD");
  if (disease_vocab < 1) fail("disease vocabulary must be non-empty");
  if (status_vocab != kStatusCount) fail("status vocabulary must have exactly 3 entries");
}

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.layers = 6;
  c.hidden = 768;
  c.heads = 6;
  c.ff = 3072;
  c.max_length = 512;
  return c;
}

ModelConfig ModelConfig::with_vocab(const Vocab& vocab) const {
  ModelConfig c = *this;
  c.symptom_vocab = vocab.symptom_token_count();
  c.disease_vocab = vocab.disease_count();
  return c;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"layers", layers},
          {"hidden", hidden},
          {"heads", heads},
          {"ff", ff},
          {"dropout", dropout},
          {"max_length", max_length},
          {"symptom_vocab", symptom_vocab},
          {"disease_vocab", disease_vocab},
          {"status_vocab", status_vocab},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.layers = j.at("layers");
    c.hidden = j.at("hidden");
    c.heads = j.at("heads");
    c.ff = j.at("ff");
    c.dropout = j.at("dropout");
    c.max_length = j.at("max_length");
    c.symptom_vocab = j.at("symptom_vocab");
    c.disease_vocab = j.at("disease_vocab");
    c.status_vocab = j.at("status_vocab");
    c.seed = j.at("seed");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model config echo: ") + e.what());
  }
  return c;
}

std::vector<int> chain_positions(int n, int m) {
  std::vector<int> out;
  for (int i = 0; i < n - 1; ++i) out.push_back(i);
  for (int g = 0; g <= m; ++g) {
    const int size = g < m ? m - g : 1;
    for (int i = 0; i < size; ++i) out.push_back(n - 1 + g);
  }
  return out;
}

ModelInput ModelInput::single(std::span<const SymptomEntry> tokens, std::span<const int> positions,
                              const AttentionMask& mask) {
  if (positions.size() != tokens.size() || mask.size() != tokens.size()) {
    throw ShapeError("model input: tokens, positions and mask disagree on length");
  }
  ModelInput in;
  in.batch = 1;
  in.length = tokens.size();
  for (const auto& t : tokens) {
    in.tokens.push_back(t.symptom);
    in.statuses.push_back(to_int(t.status));
  }
  in.positions.assign(positions.begin(), positions.end());
  in.masks.assign(mask.bits().begin(), mask.bits().end());
  return in;
}

ModelInput ModelInput::plain(std::span<const SymptomEntry> tokens) {
  std::vector<int> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  return single(tokens, positions, AttentionMask::causal(tokens.size()));
}

template <typename T>
CoadModel<T>::CoadModel(const ModelConfig& config, Init init) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const auto h = static_cast<std::size_t>(config_.hidden);
  const auto f = static_cast<std::size_t>(config_.ff);
  constexpr double kStd = 0.02;

  tok_emb_ = add_param("tok_emb", {static_cast<std::size_t>(config_.symptom_vocab), h}, kStd, 0, init, rng);
  status_emb_ = add_param("status_emb", {static_cast<std::size_t>(config_.status_vocab), h}, kStd, 0, init, rng);
  pos_emb_ = add_param("pos_emb", {static_cast<std::size_t>(config_.max_length), h}, kStd, 0, init, rng);
  emb_ln_g_ = add_param("emb_ln.gamma", {h}, 0, 1, init, rng);
  emb_ln_b_ = add_param("emb_ln.beta", {h}, 0, 0, init, rng);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    Block b;
    b.ln1_g = add_param(p + "ln1.gamma", {h}, 0, 1, init, rng);
    b.ln1_b = add_param(p + "ln1.beta", {h}, 0, 0, init, rng);
    b.w_qkv = add_param(p + "attn.w_qkv", {h, 3 * h}, kStd, 0, init, rng);
    b.b_qkv = add_param(p + "attn.b_qkv", {3 * h}, 0, 0, init, rng);
    b.w_out = add_param(p + "attn.w_out", {h, h}, kStd, 0, init, rng);
    b.b_out = add_param(p + "attn.b_out", {h}, 0, 0, init, rng);
    b.ln2_g = add_param(p + "ln2.gamma", {h}, 0, 1, init, rng);
    b.ln2_b = add_param(p + "ln2.beta", {h}, 0, 0, init, rng);
    b.w_in = add_param(p + "ff.w_in", {h, f}, kStd, 0, init, rng);
    b.b_in = add_param(p + "ff.b_in", {f}, 0, 0, init, rng);
    b.w_ff = add_param(p + "ff.w_out", {f, h}, kStd, 0, init, rng);
    b.b_ff = add_param(p + "ff.b_out", {h}, 0, 0, init, rng);
    blocks_.push_back(std::move(b));
  }
  ln_f_g_ = add_param("ln_f.gamma", {h}, 0, 1, init, rng);
  ln_f_b_ = add_param("ln_f.beta", {h}, 0, 0, init, rng);
  sym_w_ = add_param("symptom_head.w", {h, static_cast<std::size_t>(config_.symptom_vocab)}, kStd, 0, init, rng);
  sym_b_ = add_param("symptom_head.b", {static_cast<std::size_t>(config_.symptom_vocab)}, 0, 0, init, rng);
  dis_w_ = add_param("disease_head.w", {h, static_cast<std::size_t>(config_.disease_vocab)}, kStd, 0, init, rng);
  dis_b_ = add_param("disease_head.b", {static_cast<std::size_t>(config_.disease_vocab)}, 0, 0, init, rng);
}

template <typename T>
Variable<T> CoadModel<T>::add_param(const std::string& name, Shape shape, double stddev, double fill, Init init,
                                    Rng& rng) {
  Tensor<T> value(std::move(shape), static_cast<T>(fill));
  // Layer-norm gains stay at 1 under zero init so the network is well defined.
  if (stddev > 0) {
    for (auto& v : value.values()) {
      const double draw = rng.normal() * stddev;
      v = init == Init::zero ? T{0} : static_cast<T>(draw);
    }
  }
  auto var = Variable<T>::parameter(std::move(value));
  params_.emplace_back(name, var);
  return var;
}

template <typename T>
CoadModel<T> CoadModel<T>::clone() const {
  CoadModel copy(config_, Init::zero);
  for (std::size_t i = 0; i < params_.size(); ++i) copy.params_[i].second.value() = params_[i].second.value();
  return copy;
}

template <typename T>
Variable<T>& CoadModel<T>::parameter(const std::string& name) {
  for (auto& [n, v] : params_) {
    if (n == name) return v;
  }
  throw ConfigError("no parameter named " + name);
}

template <typename T>
const Variable<T>& CoadModel<T>::parameter(const std::string& name) const {
  return const_cast<CoadModel*>(this)->parameter(name);
}

template <typename T>
std::size_t CoadModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : params_) n += v.value().size();
  return n;
}

template <typename T>
void CoadModel<T>::zero_grad() {
  for (auto& [name, v] : params_) v.zero_grad();
}

template <typename T>
Variable<T> CoadModel<T>::attention(Tape<T>& tape, const Block& block, const Variable<T>& x, const ModelInput& input,
                                    Rng* rng) const {
  const auto h = static_cast<std::size_t>(config_.hidden);
  const auto heads = static_cast<std::size_t>(config_.heads);
  const auto dh = h / heads;
  const auto len = input.length;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  auto qkv = tensor::add_bias(tape, tensor::matmul(tape, x, block.w_qkv), block.b_qkv);
  std::vector<Variable<T>> per_sequence;
  per_sequence.reserve(input.batch);
  for (std::size_t b = 0; b < input.batch; ++b) {
    auto seq = input.batch == 1 ? qkv : tensor::slice_rows(tape, qkv, b * len, len);
    const std::span<const std::uint8_t> mask(input.masks.data() + b * len * len, len * len);
    std::vector<Variable<T>> head_out;
    head_out.reserve(heads);
    for (std::size_t a = 0; a < heads; ++a) {
      auto q = tensor::slice_cols(tape, seq, a * dh, dh);
      auto k = tensor::slice_cols(tape, seq, h + a * dh, dh);
      auto v = tensor::slice_cols(tape, seq, 2 * h + a * dh, dh);
      auto scores = tensor::scale(tape, tensor::matmul_nt(tape, q, k), inv_sqrt);
      auto probs = tensor::masked_softmax(tape, scores, mask);
      if (rng) probs = tensor::dropout(tape, probs, config_.dropout, *rng);
      head_out.push_back(tensor::matmul(tape, probs, v));
    }
    per_sequence.push_back(heads == 1 ? head_out[0] : tensor::concat_cols<T>(tape, head_out));
  }
  auto merged = input.batch == 1 ? per_sequence[0] : tensor::concat_rows<T>(tape, per_sequence);
  return tensor::add_bias(tape, tensor::matmul(tape, merged, block.w_out), block.b_out);
}

template <typename T>
ModelOutput<T> CoadModel<T>::forward(Tape<T>& tape, const ModelInput& input, Rng* rng) const {
  const auto rows = input.batch * input.length;
  if (input.batch == 0 || input.length == 0) throw ShapeError("forward: empty input");
  if (input.tokens.size() != rows || input.statuses.size() != rows || input.positions.size() != rows) {
    throw ShapeError("forward: token/status/position arrays must hold batch*length entries");
  }
  if (input.masks.size() != input.batch * input.length * input.length) {
    throw ShapeError("forward: mask size " + std::to_string(input.masks.size()) + " does not match input length " +
                     std::to_string(input.length));
  }
  if (input.length > static_cast<std::size_t>(config_.max_length)) {
    throw ShapeError("forward: sequence length " + std::to_string(input.length) + " exceeds max length " +
                     std::to_string(config_.max_length));
  }

  auto x = tensor::add(tape, tensor::embedding(tape, tok_emb_, input.tokens),
                       tensor::embedding(tape, status_emb_, input.statuses));
  x = tensor::add(tape, x, tensor::embedding(tape, pos_emb_, input.positions));
  x = tensor::layer_norm(tape, x, emb_ln_g_, emb_ln_b_);
  if (rng) x = tensor::dropout(tape, x, config_.dropout, *rng);

  for (const auto& block : blocks_) {
    auto a = attention(tape, block, tensor::layer_norm(tape, x, block.ln1_g, block.ln1_b), input, rng);
    if (rng) a = tensor::dropout(tape, a, config_.dropout, *rng);
    x = tensor::add(tape, x, a);

    auto f = tensor::layer_norm(tape, x, block.ln2_g, block.ln2_b);
    f = tensor::gelu(tape, tensor::add_bias(tape, tensor::matmul(tape, f, block.w_in), block.b_in));
    f = tensor::add_bias(tape, tensor::matmul(tape, f, block.w_ff), block.b_ff);
    if (rng) f = tensor::dropout(tape, f, config_.dropout, *rng);
    x = tensor::add(tape, x, f);
  }
  auto hidden = tensor::layer_norm(tape, x, ln_f_g_, ln_f_b_);

  ModelOutput<T> out;
  out.symptom_logits = tensor::add_bias(tape, tensor::matmul(tape, hidden, sym_w_), sym_b_);
  out.disease_logits = tensor::add_bias(tape, tensor::matmul(tape, hidden, dis_w_), dis_b_);
  out.hidden = std::move(hidden);
  return out;
}

template <typename T>
void CoadModel<T>::save(const std::filesystem::path& path, const Vocab& vocab, const nlohmann::json& extra) const {
  nlohmann::json echo = extra.is_object() ? extra : nlohmann::json::object();
  echo["model"] = config_.to_json();
  echo["vocab"] = {{"symptoms", vocab.symptoms()}, {"diseases", vocab.diseases()}};
  std::vector<std::pair<std::string, const Tensor<T>*>> list;
  for (const auto& [name, v] : params_) list.emplace_back(name, &v.value());
  tensor::write_checkpoint<T>(path, echo.dump(), list);
}

template <typename T>
LoadedModel<T> load_model(const std::filesystem::path& path) {
  const auto ck = tensor::read_checkpoint(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ck.config_json);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint config echo is not valid JSON: ") + e.what());
  }
  if (!meta.contains("model") || !meta.contains("vocab")) throw DataError("checkpoint lacks model/vocab echo");
  const auto config = ModelConfig::from_json(meta["model"]);
  Vocab vocab(meta["vocab"].at("symptoms").get<std::vector<std::string>>(),
              meta["vocab"].at("diseases").get<std::vector<std::string>>());
  if (config.with_vocab(vocab) != config) throw DataError("checkpoint vocabulary does not match the model config");

  CoadModel<T> model(config, Init::zero);
  const auto& params = model.parameters();
  if (params.size() != ck.entries.size()) {
    throw DataError("checkpoint holds " + std::to_string(ck.entries.size()) + " parameters, config implies " +
                    std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = ck.entries[i];
    auto var = params[i].second;
    if (e.name != params[i].first || e.shape != var.shape()) {
      throw DataError("checkpoint parameter " + e.name + " " + tensor::shape_string(e.shape) + " does not match " +
                      params[i].first + " " + tensor::shape_string(var.shape()));
    }
    for (std::size_t k = 0; k < e.values.size(); ++k) var.value()[k] = static_cast<T>(e.values[k]);
  }
  return {std::move(model), std::move(vocab), std::move(meta)};
}

template class CoadModel<float>;
template class CoadModel<double>;
template LoadedModel<float> load_model<float>(const std::filesystem::path&);
template LoadedModel<double> load_model<double>(const std::filesystem::path&);

}  // namespace coad
