#include "coad/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "coad/error.hpp"
#include "coad/log.hpp"

namespace coad {

using tensor::Tape;
using tensor::Variable;

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "no_d") return Variant::no_d;
  if (name == "no_s") return Variant::no_s;
  if (name == "plain") return Variant::plain;
  throw ConfigError("unknown variant '" + name + "' (expected full, no_d, no_s or plain)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_d: return "no_d";
    case Variant::no_s: return "no_s";
    case Variant::plain: return "plain";
  }
  return "full";
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (steps < 0) throw ConfigError("step budget must be non-negative");
}

TrainConfig TrainConfig::preset(const std::string& dataset) {
  TrainConfig c;
  if (dataset == "dxy") {
    c.lr = 5e-6;
    c.batch_size = 64;
  } else if (dataset == "muzhi") {
    c.lr = 1e-6;
    c.batch_size = 64;
  } else if (dataset == "muzhi2") {
    c.lr = 5e-6;
    c.batch_size = 32;
  } else if (dataset == "ped") {
    c.lr = 1e-6;
    c.batch_size = 32;
  } else {
    throw ConfigError("unknown preset '" + dataset + "' (expected dxy, muzhi, muzhi2 or ped)");
  }
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"variant", to_string(variant)}, {"lr", lr},
          {"batch_size", batch_size},      {"steps", steps},
          {"clip_norm", clip_norm},        {"seed", seed},
          {"weights", to_string(weights)}, {"final_label", to_string(final_label)}};
}

SequenceExample to_example(const ExpandedSample& sample, const Vocab& vocab) {
  (void)vocab;
  SequenceExample ex;
  const auto prefix = static_cast<std::size_t>(sample.prefix_length());
  const auto len = sample.repeated_tokens.size();
  ex.tokens = sample.repeated_tokens;
  ex.positions = chain_positions(sample.n, sample.m);
  ex.mask = sample.mask;
  ex.s_target.assign(len, kIgnore);
  ex.d_target.assign(len, kIgnore);
  ex.weight.assign(len, 0.0);
  ex.next_target.assign(len, kIgnore);
  ex.anchor.assign(len, 0);
  ex.final_position.assign(len, 0);
  for (std::size_t r = 0; r < sample.group_of.size(); ++r) {
    ex.s_target[prefix + r] = sample.s_labels[r];
    ex.d_target[prefix + r] = sample.d_labels[r];
    ex.weight[prefix + r] = sample.weights[r];
  }
  for (std::size_t g = 0; g < sample.anchors.size(); ++g) {
    const auto pos = prefix + static_cast<std::size_t>(sample.anchors[g]);
    ex.anchor[pos] = 1;
    if (static_cast<int>(g) < sample.m) {
      ex.next_target[pos] = sample.plain_tokens[static_cast<std::size_t>(sample.n) + g].symptom;
    } else {
      ex.next_target[pos] = sample.s_labels.back();
      ex.final_position[pos] = 1;
    }
  }
  return ex;
}

SequenceExample plain_example(const PatientRecord& record, const Vocab& vocab, FinalLabel final_label) {
  validate_record(record, vocab);
  SequenceExample ex;
  ex.tokens = record.plain_sequence();
  const auto len = ex.tokens.size();
  ex.positions.resize(len);
  std::iota(ex.positions.begin(), ex.positions.end(), 0);
  ex.mask = AttentionMask::causal(len);
  ex.s_target.assign(len, kIgnore);
  ex.d_target.assign(len, kIgnore);
  ex.weight.assign(len, 0.0);
  ex.next_target.assign(len, kIgnore);
  ex.anchor.assign(len, 0);
  ex.final_position.assign(len, 0);
  const auto first = static_cast<std::size_t>(record.n() - 1);
  for (std::size_t p = first; p < len; ++p) {
    const bool last = p + 1 == len;
    const int next = last ? (final_label == FinalLabel::end ? vocab.end_id() : kIgnore) : ex.tokens[p + 1].symptom;
    ex.s_target[p] = next;
    ex.next_target[p] = next;
    ex.anchor[p] = 1;
    ex.weight[p] = 1.0;
    if (last) {
      ex.d_target[p] = record.disease;
      ex.final_position[p] = 1;
    }
  }
  return ex;
}

std::vector<SequenceExample> build_examples(std::span<const PatientRecord> records, const PrefixIndex& index,
                                            const Vocab& vocab, const TrainConfig& config) {
  std::vector<SequenceExample> out(records.size());
  const AugmentOptions options{config.final_label, config.weights};
  const auto n = static_cast<std::ptrdiff_t>(records.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = config.variant == Variant::plain
                                           ? plain_example(r, vocab, config.final_label)
                                           : to_example(expand_record(r, index, vocab, options), vocab);
  }
  return out;
}

Batch collate(std::span<const SequenceExample> samples, std::size_t pad_to, int pad_id) {
  Batch b;
  b.input.batch = samples.size();
  b.input.length = pad_to;
  const auto rows = samples.size() * pad_to;
  b.input.tokens.assign(rows, pad_id);
  b.input.statuses.assign(rows, to_int(SymptomStatus::uncertain));
  b.input.positions.assign(rows, 0);
  b.input.masks.assign(samples.size() * pad_to * pad_to, 0);
  b.s_target.assign(rows, kIgnore);
  b.d_target.assign(rows, kIgnore);
  b.weight.assign(rows, 0.0);
  b.next_target.assign(rows, kIgnore);
  b.anchor.assign(rows, 0);
  b.final_position.assign(rows, 0);
  b.pad.assign(rows, 1);

  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& ex = samples[s];
    const auto len = ex.length();
    if (len > pad_to) {
      throw ShapeError("collate: sample of length " + std::to_string(len) + " exceeds pad_to " + std::to_string(pad_to));
    }
    b.lengths.push_back(len);
    const auto base = s * pad_to;
    for (std::size_t p = 0; p < len; ++p) {
      b.input.tokens[base + p] = ex.tokens[p].symptom;
      b.input.statuses[base + p] = to_int(ex.tokens[p].status);
      b.input.positions[base + p] = ex.positions[p];
      b.s_target[base + p] = ex.s_target[p];
      b.d_target[base + p] = ex.d_target[p];
      b.weight[base + p] = ex.weight[p];
      b.next_target[base + p] = ex.next_target[p];
      b.anchor[base + p] = ex.anchor[p];
      b.final_position[base + p] = ex.final_position[p];
      b.pad[base + p] = 0;
    }
    auto* mask = b.input.masks.data() + s * pad_to * pad_to;
    for (std::size_t q = 0; q < pad_to; ++q) {
      for (std::size_t k = 0; k < pad_to; ++k) {
        if (q < len && k < len) {
          mask[q * pad_to + k] = ex.mask(q, k) ? 1 : 0;
        } else {
          mask[q * pad_to + k] = q == k ? 1 : 0;
        }
      }
    }
  }
  return b;
}

Batch collate(std::span<const ExpandedSample> samples, std::size_t pad_to, const Vocab& vocab) {
  std::vector<SequenceExample> examples;
  examples.reserve(samples.size());
  for (const auto& s : samples) examples.push_back(to_example(s, vocab));
  return collate(examples, pad_to, vocab.pad_id());
}

SequenceExample uncollate(const Batch& batch, std::size_t index) {
  const auto len = batch.lengths.at(index);
  const auto pad_to = batch.length();
  const auto base = index * pad_to;
  SequenceExample ex;
  ex.mask = AttentionMask(len);
  const auto* mask = batch.input.masks.data() + index * pad_to * pad_to;
  for (std::size_t p = 0; p < len; ++p) {
    ex.tokens.push_back({batch.input.tokens[base + p], status_from_int(batch.input.statuses[base + p])});
    ex.positions.push_back(batch.input.positions[base + p]);
    ex.s_target.push_back(batch.s_target[base + p]);
    ex.d_target.push_back(batch.d_target[base + p]);
    ex.weight.push_back(batch.weight[base + p]);
    ex.next_target.push_back(batch.next_target[base + p]);
    ex.anchor.push_back(batch.anchor[base + p]);
    ex.final_position.push_back(batch.final_position[base + p]);
    for (std::size_t k = 0; k < len; ++k) ex.mask.set(p, k, mask[p * pad_to + k] != 0);
  }
  return ex;
}

VariantTargets variant_targets(const Batch& batch, Variant variant) {
  const auto rows = batch.s_target.size();
  VariantTargets t;
  t.s_target.assign(rows, kIgnore);
  t.s_weight.assign(rows, 0.0);
  t.d_target.assign(rows, kIgnore);
  t.d_weight.assign(rows, 0.0);
  for (std::size_t p = 0; p < rows; ++p) {
    if (batch.pad[p]) continue;
    switch (variant) {
      case Variant::full:
      case Variant::plain:
        t.s_target[p] = batch.s_target[p];
        t.s_weight[p] = batch.weight[p];
        t.d_target[p] = batch.d_target[p];
        t.d_weight[p] = batch.weight[p];
        break;
      case Variant::no_d:
        t.s_target[p] = batch.s_target[p];
        t.s_weight[p] = batch.weight[p];
        if (batch.final_position[p]) {
          t.d_target[p] = batch.d_target[p];
          t.d_weight[p] = 1.0;
        }
        break;
      case Variant::no_s:
        if (batch.anchor[p]) {
          t.s_target[p] = batch.next_target[p];
          t.s_weight[p] = 1.0;
        }
        t.d_target[p] = batch.d_target[p];
        t.d_weight[p] = batch.weight[p];
        break;
    }
    if (t.s_target[p] == kIgnore) t.s_weight[p] = 0.0;
    if (t.d_target[p] == kIgnore) t.d_weight[p] = 0.0;
  }
  return t;
}

namespace {

// Rescales weights so each sequence with an active label contributes 1/(number
// of such sequences) in total.
template <typename T>
std::vector<T> per_sequence_weights(const std::vector<int>& targets, const std::vector<double>& weights,
                                    std::size_t batch, std::size_t length) {
  std::vector<double> sums(batch, 0.0);
  for (std::size_t p = 0; p < targets.size(); ++p) {
    if (targets[p] != kIgnore) sums[p / length] += weights[p];
  }
  const auto active = std::count_if(sums.begin(), sums.end(), [](double s) { return s > 0.0; });
  std::vector<T> out(targets.size(), T{0});
  if (active == 0) return out;
  for (std::size_t p = 0; p < targets.size(); ++p) {
    const double s = sums[p / length];
    if (targets[p] != kIgnore && s > 0.0) out[p] = static_cast<T>(weights[p] / (s * static_cast<double>(active)));
  }
  return out;
}

}  // namespace

template <typename T>
LossTerms<T> compute_loss(Tape<T>& tape, const ModelOutput<T>& outputs, const Batch& batch, Variant variant) {
  const auto targets = variant_targets(batch, variant);
  const auto sw = per_sequence_weights<T>(targets.s_target, targets.s_weight, batch.size(), batch.length());
  const auto dw = per_sequence_weights<T>(targets.d_target, targets.d_weight, batch.size(), batch.length());
  LossTerms<T> terms;
  terms.symptom = tensor::cross_entropy<T>(tape, outputs.symptom_logits, targets.s_target, kIgnore, sw);
  terms.disease = tensor::cross_entropy<T>(tape, outputs.disease_logits, targets.d_target, kIgnore, dw);
  terms.total = tensor::add(tape, terms.symptom, terms.disease);
  return terms;
}

template <typename T>
Adam<T>::Adam(std::vector<Variable<T>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.value().size(), T{0});
    v_.emplace_back(p.value().size(), T{0});
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T step_size = static_cast<T>(lr_ / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(eps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& value = params_[i].value();
    const auto& grad = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < m.size(); ++k) {
      const T g = grad[k];
      m[k] = b1 * m[k] + (T{1} - b1) * g;
      v[k] = b2 * v[k] + (T{1} - b2) * g * g;
      value[k] -= step_size * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
  }
}

template <typename T>
double clip_grad_norm(std::span<const Variable<T>> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (T g : p.grad().values()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / (norm + 1e-12));
    for (auto p : params) {
      for (auto& g : p.grad().values()) g *= factor;
    }
  }
  return norm;
}

nlohmann::json TrainLogEntry::to_json() const {
  return {{"step", step},         {"epoch", epoch}, {"loss_total", loss_total}, {"loss_sym", loss_sym},
          {"loss_dis", loss_dis}, {"lr", lr},       {"seed", seed}};
}

template <typename T>
TrainResult<T> train(const Corpus& corpus, const ModelConfig& model_config, const TrainConfig& train_config,
                     std::ostream* log_out) {
  train_config.validate();
  if (corpus.train.empty()) throw ConfigError("training split is empty");
  const auto config = model_config.with_vocab(corpus.vocab);
  config.validate();

  const auto index = build_prefix_index(corpus.train);
  const auto examples = build_examples(corpus.train, index, corpus.vocab, train_config);
  for (const auto& ex : examples) {
    if (ex.length() > static_cast<std::size_t>(config.max_length)) {
      throw ConfigError("training sequence of length " + std::to_string(ex.length()) + " exceeds max_length " +
                        std::to_string(config.max_length));
    }
  }

  TrainResult<T> result{CoadModel<T>(config), {}, 0.0};
  auto& model = result.model;
  std::vector<Variable<T>> params;
  for (const auto& [name, v] : model.parameters()) params.push_back(v);
  Adam<T> adam(params, train_config.lr);
  Rng rng(train_config.seed);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch_size = static_cast<std::size_t>(train_config.batch_size);
  long step = 0;
  int epoch = 0;
  while (step < train_config.steps) {
    ++epoch;
    rng.shuffle(std::span<std::size_t>(order));
    double sum_total = 0, sum_sym = 0, sum_dis = 0;
    long epoch_steps = 0;
    for (std::size_t start = 0; start < order.size() && step < train_config.steps; start += batch_size) {
      const auto end = std::min(order.size(), start + batch_size);
      std::vector<SequenceExample> chunk;
      std::size_t pad_to = 0;
      for (std::size_t i = start; i < end; ++i) {
        chunk.push_back(examples[order[i]]);
        pad_to = std::max(pad_to, chunk.back().length());
      }
      const auto batch = collate(chunk, pad_to, config.pad_id());

      Tape<T> tape;
      const auto out = model.forward(tape, batch.input, config.dropout > 0.0 ? &rng : nullptr);
      const auto loss = compute_loss(tape, out, batch, train_config.variant);
      const double total = loss.total.value()[0];
      if (!std::isfinite(total)) {
        throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step + 1));
      }
      if (step == 0) result.initial_loss = total;
      model.zero_grad();
      tape.backward(loss.total);
      clip_grad_norm<T>(params, train_config.clip_norm);
      adam.step();
      ++step;
      ++epoch_steps;
      sum_total += total;
      sum_sym += loss.symptom.value()[0];
      sum_dis += loss.disease.value()[0];
    }
    TrainLogEntry entry;
    entry.step = step;
    entry.epoch = epoch;
    entry.loss_total = sum_total / static_cast<double>(std::max(epoch_steps, 1L));
    entry.loss_sym = sum_sym / static_cast<double>(std::max(epoch_steps, 1L));
    entry.loss_dis = sum_dis / static_cast<double>(std::max(epoch_steps, 1L));
    entry.lr = train_config.lr;
    entry.seed = train_config.seed;
    if (log_out) *log_out << entry.to_json().dump() << '\n';
    log::debug("epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
               " loss " + std::to_string(entry.loss_total));
    result.log.push_back(entry);
  }
  return result;
}

template <typename T>
double teacher_forced_accuracy(const CoadModel<T>& model, std::span<const SequenceExample> examples) {
  long hits = 0, total = 0;
  for (const auto& ex : examples) {
    Tape<T> tape(false);
    const auto input = ModelInput::single(ex.tokens, ex.positions, ex.mask);
    const auto out = model.forward(tape, input);
    const auto& logits = out.symptom_logits.value();
    const auto classes = logits.cols();
    for (std::size_t p = 0; p < ex.length(); ++p) {
      if (!ex.anchor[p] || ex.final_position[p] || ex.next_target[p] == kIgnore) continue;
      const T* row = logits.data() + p * classes;
      const auto best = static_cast<int>(std::max_element(row, row + classes) - row);
      hits += best == ex.next_target[p];
      ++total;
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(total);
}

template LossTerms<float> compute_loss(Tape<float>&, const ModelOutput<float>&, const Batch&, Variant);
template LossTerms<double> compute_loss(Tape<double>&, const ModelOutput<double>&, const Batch&, Variant);
template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm<float>(std::span<const Variable<float>>, double);
template double clip_grad_norm<double>(std::span<const Variable<double>>, double);
template TrainResult<float> train(const Corpus&, const ModelConfig&, const TrainConfig&, std::ostream*);
template TrainResult<double> train(const Corpus&, const ModelConfig&, const TrainConfig&, std::ostream*);
template double teacher_forced_accuracy(const CoadModel<float>&, std::span<const SequenceExample>);
template double teacher_forced_accuracy(const CoadModel<double>&, std::span<const SequenceExample>);

}  // namespace coad
