// Binary checkpoint container.
//
// Layout (all integers little-endian):
//   magic      8 bytes  "CIFCKPT\0"
//   version    u32      currently 1
//   n_header   u32
//   n_header x { key: u32 length + bytes, value: u32 length + bytes }
//   n_tensors  u32
//   n_tensors x { name: u32 length + bytes, rank: u32, dims: rank x u64,
//                 values: prod(dims) x f64 (IEEE-754 binary64, little-endian) }
//   end mark   4 bytes  "END\0"
//
// Readers reject other versions, truncated files and trailing garbage.

#ifndef CIF_CHECKPOINT_H_
#define CIF_CHECKPOINT_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cif/parameters.h"

namespace cif {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<NamedTensor> tensors;

  const std::string* header_value(const std::string& key) const;
  const NamedTensor* tensor(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace cif

#endif  // CIF_CHECKPOINT_H_
