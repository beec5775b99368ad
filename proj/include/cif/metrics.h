// Label error rates and boundary placement quality.

#ifndef CIF_METRICS_H_
#define CIF_METRICS_H_

#include <cstddef>
#include <string>
#include <vector>

namespace cif {

struct ErrorBreakdown {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t reference_length = 0;

  std::size_t errors() const { return substitutions + deletions + insertions; }
  // errors / reference length; 0 for an empty reference with no insertions.
  double rate() const;
};

// Unit-cost Levenshtein alignment.  Among equal-cost alignments the
// backtrace prefers substitution (or match), then insertion, then deletion.
ErrorBreakdown edit_distance(const std::vector<int>& reference, const std::vector<int>& hypothesis);

struct BoundaryScore {
  std::size_t matched = 0;
  std::size_t reference = 0;
  std::size_t predicted = 0;
  double precision() const;  // 1 when nothing is predicted
  double recall() const;     // 1 when there is nothing to find
  double f1() const;
};

// Each predicted boundary, left to right, claims the earliest unclaimed
// reference boundary within +-tolerance.
BoundaryScore boundary_f1(const std::vector<std::size_t>& reference,
                          const std::vector<std::size_t>& predicted, std::size_t tolerance);

// Frame boundaries mapped to encoder steps: round(b / reduction).
std::vector<std::size_t> encoded_boundaries(const std::vector<std::size_t>& frame_boundaries,
                                            std::size_t reduction);
// A firing at encoder step u closes its segment after u, i.e. at u + 1.
std::vector<std::size_t> firing_boundaries(const std::vector<std::size_t>& positions);

class MetricsAccumulator {
 public:
  void add_transcript(const std::vector<int>& reference, const std::vector<int>& hypothesis);
  void add_boundaries(const BoundaryScore& score);

  const ErrorBreakdown& errors() const { return errors_; }
  const BoundaryScore& boundaries() const { return boundaries_; }
  std::size_t utterances() const { return utterances_; }
  // {"<rate_key>", "sub", "del", "ins", "boundary_precision",
  //  "boundary_recall", "boundary_f1", "n_utts"}
  std::string to_json(const std::string& rate_key = "cer") const;

 private:
  ErrorBreakdown errors_;
  BoundaryScore boundaries_;
  std::size_t utterances_ = 0;
};

}  // namespace cif

#endif  // CIF_METRICS_H_
