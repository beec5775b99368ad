#include "cif/data.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "cif/labels.h"
#include "json.hpp"

namespace cif {

Tensor Sample::feature_tensor() const { return Tensor::constant({frames, dim}, features); }

std::vector<int> Sample::symbols() const {
  std::vector<int> out = labels;
  if (!out.empty() && out.back() == kEosId) out.pop_back();
  return out;
}

void Sample::validate() const {
  auto fail = [&](const std::string& msg) { throw DataError("sample '" + id + "': " + msg); };
  if (features.size() != frames * dim) fail("feature count does not match frames x dim");
  if (labels.empty() || labels.back() != kEosId) fail("labels must end with EOS");
  if (boundaries.size() + 1 != labels.size()) fail("expected one boundary per non-EOS label");
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    if (i > 0 && boundaries[i] <= boundaries[i - 1]) fail("boundaries must be strictly increasing");
  }
  if (!boundaries.empty() && boundaries.back() > frames) fail("last boundary exceeds frame count");
}

Vocabulary::Vocabulary(std::vector<std::string> symbols) {
  labels_ = {"<BLK>", "<EOS>", "<PAD>"};
  for (auto& s : symbols) {
    if (std::find(labels_.begin(), labels_.end(), s) != labels_.end())
      throw DataError("vocabulary: duplicate label '" + s + "'");
    if (s.empty() || s.find_first_of(" \t\n") != std::string::npos)
      throw DataError("vocabulary: labels must be non-empty and contain no whitespace");
    labels_.push_back(std::move(s));
  }
}

Vocabulary Vocabulary::with_symbols(std::size_t count) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    std::size_t x = i;
    do {
      name.insert(name.begin(), static_cast<char>('a' + x % 26));
      x /= 26;
    } while (x-- > 0);
    names.push_back(name);
  }
  return Vocabulary(std::move(names));
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  const Vocabulary reference;
  if (lines.size() < reference.size() ||
      !std::equal(reference.labels_.begin(), reference.labels_.end(), lines.begin())) {
    throw DataError("vocabulary '" + path + "' must start with <BLK>, <EOS>, <PAD>");
  }
  return Vocabulary(std::vector<std::string>(lines.begin() + reference.size(), lines.end()));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary '" + path + "'");
  for (const auto& l : labels_) out << l << '\n';
  if (!out) throw DataError("failed writing vocabulary '" + path + "'");
}

const std::string& Vocabulary::label(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= labels_.size())
    throw DataError("label id " + std::to_string(id) + " outside vocabulary");
  return labels_[id];
}

int Vocabulary::id(const std::string& label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) throw DataError("unknown label '" + label + "'");
  return static_cast<int>(it - labels_.begin());
}

std::string Vocabulary::render(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += label(ids[i]);
  }
  return out;
}

TaskSpec TaskSpec::easy() { return TaskSpec{}; }

TaskSpec TaskSpec::hard() {
  TaskSpec t;
  t.min_segment = 4;
  t.max_segment = 12;
  t.noise = 0.35;
  t.confusion = 0.6;
  return t;
}

TaskSpec TaskSpec::named(const std::string& name) {
  if (name == "easy") return easy();
  if (name == "hard") return hard();
  throw DataError("unknown task '" + name + "' (expected easy or hard)");
}

void TaskSpec::validate(std::size_t reduction) const {
  if (symbols < 2) throw DataError("task needs at least two symbols");
  if (dim == 0) throw DataError("task feature dimension must be positive");
  if (min_segment == 0 || min_segment > max_segment)
    throw DataError("invalid segment-length range");
  if (min_segment < reduction)
    throw DataError("segments shorter than the time-reduction factor");
  if (min_labels == 0 || min_labels > max_labels) throw DataError("invalid label-count range");
  if (noise < 0.0 || confusion < 0.0) throw DataError("noise and confusion must be non-negative");
}

std::vector<std::vector<double>> task_prototypes(const TaskSpec& spec) {
  std::mt19937_64 rng(spec.prototype_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> protos(spec.symbols, std::vector<double>(spec.dim));
  for (std::size_t s = 0; s < spec.symbols; ++s) {
    if (spec.confusion > 0.0 && s % 2 == 1) {
      std::vector<double> dir(spec.dim);
      double norm = 0.0;
      for (auto& x : dir) {
        x = normal(rng);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < spec.dim; ++j)
        protos[s][j] = protos[s - 1][j] + spec.confusion * dir[j] / norm;
    } else {
      for (auto& x : protos[s]) x = normal(rng);
    }
  }
  return protos;
}

std::vector<Sample> gen_grouped_symbols(const TaskSpec& spec, std::size_t count,
                                        std::uint64_t seed, const std::string& id_prefix) {
  spec.validate();
  const auto protos = task_prototypes(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> seg(spec.min_segment, spec.max_segment);
  std::uniform_int_distribution<std::size_t> len(spec.min_labels, spec.max_labels);
  std::uniform_int_distribution<std::size_t> sym(0, spec.symbols - 1);
  std::uniform_int_distribution<std::size_t> other(1, spec.symbols - 1);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Sample s;
    char id[64];
    std::snprintf(id, sizeof(id), "%s%06zu", id_prefix.c_str(), n);
    s.id = id;
    s.dim = spec.dim;
    const std::size_t labels = len(rng);
    std::size_t previous = spec.symbols;
    for (std::size_t i = 0; i < labels; ++i) {
      const std::size_t symbol =
          previous == spec.symbols ? sym(rng) : (previous + other(rng)) % spec.symbols;
      previous = symbol;
      const std::size_t k = seg(rng);
      for (std::size_t f = 0; f < k; ++f)
        for (std::size_t j = 0; j < spec.dim; ++j)
          s.features.push_back(protos[symbol][j] + spec.noise * noise(rng));
      s.frames += k;
      s.labels.push_back(static_cast<int>(symbol) + kReservedLabels);
      s.boundaries.push_back(s.frames);
    }
    s.labels.push_back(kEosId);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<double> PaddedBatch::frame_mask(std::size_t row) const {
  std::vector<double> m(max_frames, 0.0);
  std::fill(m.begin(), m.begin() + frame_lengths.at(row), 1.0);
  return m;
}

PaddedBatch batch_pad(const std::vector<Sample>& samples, int pad_id) {
  if (samples.empty()) throw DataError("batch_pad: empty batch");
  PaddedBatch b;
  const std::size_t dim = samples[0].dim;
  for (const auto& s : samples) {
    if (s.dim != dim) throw DataError("batch_pad: mixed feature dimensions");
    b.max_frames = std::max(b.max_frames, s.frames);
    b.max_labels = std::max(b.max_labels, s.labels.size());
  }
  for (const auto& s : samples) {
    std::vector<double> f(b.max_frames * dim, 0.0);
    std::copy(s.features.begin(), s.features.end(), f.begin());
    b.features.push_back(Tensor::constant({b.max_frames, dim}, std::move(f)));
    b.frame_lengths.push_back(s.frames);
    std::vector<int> l(b.max_labels, pad_id);
    std::copy(s.labels.begin(), s.labels.end(), l.begin());
    b.labels.push_back(std::move(l));
    b.label_lengths.push_back(s.labels.size());
  }
  return b;
}

std::string sample_to_json(const Sample& s) {
  std::string out = "{\"id\":" + nlohmann::json(s.id).dump() + ",\"features\":[";
  char buf[40];
  for (std::size_t t = 0; t < s.frames; ++t) {
    out += t ? ",[" : "[";
    for (std::size_t j = 0; j < s.dim; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", s.features[t * s.dim + j]);
      if (j) out += ',';
      out += buf;
    }
    out += ']';
  }
  out += "],\"labels\":[";
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s.labels[i]);
  }
  out += "],\"boundaries\":[";
  for (std::size_t i = 0; i < s.boundaries.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s.boundaries[i]);
  }
  out += "]}";
  return out;
}

Sample sample_from_json(const std::string& line) {
  Sample s;
  try {
    const auto j = nlohmann::json::parse(line);
    s.id = j.at("id").get<std::string>();
    const auto& feats = j.at("features");
    if (!feats.is_array()) throw DataError("'features' must be an array of frames");
    s.frames = feats.size();
    s.dim = s.frames ? feats[0].size() : 0;
    s.features.reserve(s.frames * s.dim);
    for (const auto& row : feats) {
      if (!row.is_array() || row.size() != s.dim)
        throw DataError("every frame must have " + std::to_string(s.dim) + " values");
      for (const auto& v : row) s.features.push_back(v.get<double>());
    }
    s.labels = j.at("labels").get<std::vector<int>>();
    s.boundaries = j.at("boundaries").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(e.what());
  }
  s.validate();
  return s;
}

DatasetReader::DatasetReader(const std::string& path) : path_(path), in_(path) {
  if (!in_) throw DataError("cannot open dataset '" + path + "'");
}

std::optional<Sample> DatasetReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      return sample_from_json(line);
    } catch (const DataError& e) {
      throw DataError(path_ + ":" + std::to_string(line_) + ": " + e.what());
    }
  }
  return std::nullopt;
}

DatasetWriter::DatasetWriter(const std::string& path) : path_(path), out_(path) {
  if (!out_) throw DataError("cannot write dataset '" + path + "'");
}

void DatasetWriter::write(const Sample& sample) {
  out_ << sample_to_json(sample) << '\n';
  if (!out_) throw DataError("failed writing dataset '" + path_ + "'");
}

void DatasetWriter::close() {
  out_.close();
  if (out_.fail()) throw DataError("failed closing dataset '" + path_ + "'");
}

std::vector<Sample> read_dataset(const std::string& path) {
  DatasetReader reader(path);
  std::vector<Sample> out;
  while (auto s = reader.next()) out.push_back(std::move(*s));
  return out;
}

void write_dataset(const std::string& path, const std::vector<Sample>& samples) {
  DatasetWriter w(path);
  for (const auto& s : samples) w.write(s);
  w.close();
}

}  // namespace cif
