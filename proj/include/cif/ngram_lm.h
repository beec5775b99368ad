// Additive-smoothed n-gram language model over label ids.

#ifndef CIF_NGRAM_LM_H_
#define CIF_NGRAM_LM_H_

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace cif {

class NGramLM {
 public:
  // `vocab_size` counts every label id; blank and pad are never predicted,
  // so each conditional distribution covers the remaining ids (EOS included).
  NGramLM(std::size_t order, std::size_t vocab_size, double smoothing = 0.1);

  // Adds one sequence (without EOS; EOS is appended as the terminal token).
  void add(const std::vector<int>& sequence);

  std::size_t order() const { return order_; }
  double smoothing() const { return smoothing_; }
  const std::vector<int>& support() const { return support_; }

  // log P(word | the last order-1 ids of `history`); the history is padded on
  // the left with EOS.
  double log_prob(const std::vector<int>& history, int word) const;
  // Sum of conditional log-probs of every token and the closing EOS.
  double sequence_log_prob(const std::vector<int>& sequence) const;

 private:
  std::vector<int> context(const std::vector<int>& history) const;

  std::size_t order_;
  std::size_t vocab_size_;
  double smoothing_;
  std::vector<int> support_;
  std::map<std::vector<int>, std::map<int, double>> counts_;
  std::map<std::vector<int>, double> totals_;
};

// Throws on an empty corpus or order 0.
NGramLM ngram_train(const std::vector<std::vector<int>>& corpus, std::size_t order,
                    std::size_t vocab_size, double smoothing = 0.1);

}  // namespace cif

#endif  // CIF_NGRAM_LM_H_
