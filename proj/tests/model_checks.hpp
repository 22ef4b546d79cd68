#pragma once

#include <algorithm>
#include <cmath>

#include "coad/augmentation.hpp"
#include "coad/model.hpp"

namespace coad::oracle {

// Largest absolute difference between the repeated-input forward at chain
// positions (explicit prefix and group anchors) and the plain causal forward,
// over hidden states and both heads. Dropout off.
template <typename T>
double anchor_equivalence_error(const CoadModel<T>& model, const PatientRecord& record, const Vocab& vocab) {
  std::vector<PatientRecord> train{record};
  const auto sample = expand_record(record, build_prefix_index(train), vocab);
  tensor::Tape<T> t1(false), t2(false);
  const auto repeated =
      model.forward(t1, ModelInput::single(sample.repeated_tokens, chain_positions(sample.n, sample.m), sample.mask));
  const auto plain = model.forward(t2, ModelInput::plain(sample.plain_tokens));

  std::vector<std::size_t> chain;
  for (int i = 0; i + 1 < sample.n; ++i) chain.push_back(static_cast<std::size_t>(i));
  for (int a : sample.anchors) chain.push_back(static_cast<std::size_t>(sample.prefix_length() + a));

  double worst = 0;
  const auto compare = [&](const tensor::Tensor<T>& a, const tensor::Tensor<T>& b) {
    const auto cols = a.cols();
    for (std::size_t p = 0; p < chain.size(); ++p) {
      for (std::size_t c = 0; c < cols; ++c) {
        worst = std::max(worst, std::abs(static_cast<double>(a.at(chain[p], c)) - static_cast<double>(b.at(p, c))));
      }
    }
  };
  compare(repeated.hidden.value(), plain.hidden.value());
  compare(repeated.symptom_logits.value(), plain.symptom_logits.value());
  compare(repeated.disease_logits.value(), plain.disease_logits.value());
  return worst;
}

}  // namespace coad::oracle
