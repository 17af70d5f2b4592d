#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace latent_steer {

struct ParamEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const ParamEntry&) const = default;
};

// Name -> contiguous range in one flat parameter vector. Registration order
// defines the blob order in checkpoints.
class ParamLayout {
 public:
  std::size_t add(std::string name, std::vector<int> shape);
  const ParamEntry& at(std::string_view name) const;
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t total() const { return total_; }

  bool operator==(const ParamLayout&) const = default;

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

}  // namespace latent_steer
