// Synthetic grouped-symbol transduction data, vocabularies, padding and the
// JSON-lines dataset format.

#ifndef CIF_DATA_H_
#define CIF_DATA_H_

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cif/tensor.h"

namespace cif {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Sample {
  std::string id;
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<double> features;  // row-major [frames, dim]
  std::vector<int> labels;       // symbol ids followed by EOS
  std::vector<std::size_t> boundaries;  // end frame (exclusive) of each symbol segment

  Tensor feature_tensor() const;
  // Labels without the trailing EOS.
  std::vector<int> symbols() const;
  void validate() const;
};

class Vocabulary {
 public:
  // Reserved labels followed by `symbols`.
  explicit Vocabulary(std::vector<std::string> symbols = {});
  // Default symbol names: a, b, c, ...
  static Vocabulary with_symbols(std::size_t count);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  std::size_t size() const { return labels_.size(); }
  const std::string& label(int id) const;
  int id(const std::string& label) const;
  const std::vector<std::string>& labels() const { return labels_; }
  // Space-separated labels.
  std::string render(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> labels_;
};

struct TaskSpec {
  std::size_t symbols = 16;
  std::size_t dim = 8;
  std::size_t min_segment = 4;
  std::size_t max_segment = 8;
  std::size_t min_labels = 3;
  std::size_t max_labels = 7;
  double noise = 0.1;
  // Symbols come in pairs whose prototypes differ by this much; 0 gives
  // independent prototypes.
  double confusion = 0.0;
  std::uint64_t prototype_seed = 2024;

  static TaskSpec easy();
  static TaskSpec hard();
  static TaskSpec named(const std::string& name);
  void validate(std::size_t reduction = 1) const;
};

// Prototype vector of every symbol, [symbols, dim].
std::vector<std::vector<double>> task_prototypes(const TaskSpec& spec);

// Each symbol is rendered as k copies of its prototype plus Gaussian noise,
// with k drawn per segment.  Neighbouring symbols always differ.
std::vector<Sample> gen_grouped_symbols(const TaskSpec& spec, std::size_t count,
                                        std::uint64_t seed, const std::string& id_prefix = "utt");

struct PaddedBatch {
  std::vector<Tensor> features;  // each [max_frames, dim], zero padded
  std::vector<std::size_t> frame_lengths;
  std::vector<std::vector<int>> labels;  // each max_labels long, padded with `pad_id`
  std::vector<std::size_t> label_lengths;
  std::size_t max_frames = 0;
  std::size_t max_labels = 0;

  std::size_t size() const { return features.size(); }
  // 1 for real frames, 0 for padding.
  std::vector<double> frame_mask(std::size_t row) const;
};

PaddedBatch batch_pad(const std::vector<Sample>& samples, int pad_id);

std::string sample_to_json(const Sample& sample);
Sample sample_from_json(const std::string& line);

class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path);
  // Next sample, or nullopt at end of file.  Malformed lines raise DataError
  // with the path and line number.
  std::optional<Sample> next();

 private:
  std::string path_;
  std::ifstream in_;
  std::size_t line_ = 0;
};

class DatasetWriter {
 public:
  explicit DatasetWriter(const std::string& path);
  void write(const Sample& sample);
  void close();

 private:
  std::string path_;
  std::ofstream out_;
};

std::vector<Sample> read_dataset(const std::string& path);
void write_dataset(const std::string& path, const std::vector<Sample>& samples);

}  // namespace cif

#endif  // CIF_DATA_H_
