#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "photon/autodiff.h"

namespace photon {

// Named, ordered collection of trainable tensors. Registration order is the
// iteration and serialization order.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  // Normal(0, stddev) initialised matrix/vector.
  ad::Param& normal(const std::string& name, Shape shape, real stddev);
  ad::Param& constant(const std::string& name, Shape shape, real value);

  ad::Param& get(const std::string& name);
  const ad::Param& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::uint64_t scalar_count() const;

  void zero_grad();

 private:
  ad::Param& add(const std::string& name, Tensor init);

  std::mt19937_64 rng_;
  std::vector<std::string> names_;
  std::vector<ad::Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace photon
