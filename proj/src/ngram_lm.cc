#include "cif/ngram_lm.h"

#include <cmath>
#include <stdexcept>

#include "cif/labels.h"

namespace cif {

NGramLM::NGramLM(std::size_t order, std::size_t vocab_size, double smoothing)
    : order_(order), vocab_size_(vocab_size), smoothing_(smoothing) {
  if (order < 1) throw std::invalid_argument("ngram: order must be at least 1");
  if (smoothing <= 0.0) throw std::invalid_argument("ngram: smoothing must be positive");
  for (std::size_t id = 0; id < vocab_size; ++id) {
    if (static_cast<int>(id) != kBlankId && static_cast<int>(id) != kPadId)
      support_.push_back(static_cast<int>(id));
  }
  if (support_.empty()) throw std::invalid_argument("ngram: vocabulary has no predictable labels");
}

std::vector<int> NGramLM::context(const std::vector<int>& history) const {
  std::vector<int> ctx(order_ - 1, kEosId);
  const std::size_t take = std::min(history.size(), order_ - 1);
  std::copy(history.end() - static_cast<std::ptrdiff_t>(take), history.end(),
            ctx.end() - static_cast<std::ptrdiff_t>(take));
  return ctx;
}

void NGramLM::add(const std::vector<int>& sequence) {
  std::vector<int> history;
  auto count = [&](int word) {
    if (word < 0 || static_cast<std::size_t>(word) >= vocab_size_ || word == kBlankId ||
        word == kPadId) {
      throw std::invalid_argument("ngram: label id " + std::to_string(word) + " cannot be modelled");
    }
    const auto ctx = context(history);
    counts_[ctx][word] += 1.0;
    totals_[ctx] += 1.0;
    history.push_back(word);
  };
  for (int w : sequence) count(w);
  count(kEosId);
}

double NGramLM::log_prob(const std::vector<int>& history, int word) const {
  const auto ctx = context(history);
  double c = 0.0, total = 0.0;
  if (auto it = counts_.find(ctx); it != counts_.end()) {
    total = totals_.at(ctx);
    if (auto w = it->second.find(word); w != it->second.end()) c = w->second;
  }
  return std::log((c + smoothing_) / (total + smoothing_ * static_cast<double>(support_.size())));
}

double NGramLM::sequence_log_prob(const std::vector<int>& sequence) const {
  std::vector<int> history;
  double total = 0.0;
  for (int w : sequence) {
    total += log_prob(history, w);
    history.push_back(w);
  }
  return total + log_prob(history, kEosId);
}

NGramLM ngram_train(const std::vector<std::vector<int>>& corpus, std::size_t order,
                    std::size_t vocab_size, double smoothing) {
  if (corpus.empty()) throw std::invalid_argument("ngram: empty training corpus");
  NGramLM lm(order, vocab_size, smoothing);
  for (const auto& s : corpus) lm.add(s);
  return lm;
}

}  // namespace cif
