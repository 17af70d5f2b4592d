#include "latent_steer/params.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "latent_steer/error.hpp"

namespace latent_steer {

std::size_t ParamLayout::add(std::string name, std::vector<int> shape) {
  const auto length = static_cast<std::size_t>(
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>()));
  const std::size_t offset = total_;
  entries_.push_back({std::move(name), std::move(shape), offset, length});
  total_ += length;
  return offset;
}

const ParamEntry& ParamLayout::at(std::string_view name) const {
  const auto it = std::find_if(entries_.begin(), entries_.end(), [&](const ParamEntry& e) { return e.name == name; });
  if (it == entries_.end()) throw IndexError("unknown parameter " + std::string(name));
  return *it;
}

}  // namespace latent_steer
