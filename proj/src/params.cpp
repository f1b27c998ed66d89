#include "photon/params.h"

namespace photon {

ad::Param& ParamStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw ContractError("param store: duplicate parameter '" + name + "'");
  index_[name] = params_.size();
  names_.push_back(name);
  params_.emplace_back(std::move(init));
  return params_.back();
}

ad::Param& ParamStore::normal(const std::string& name, Shape shape, real stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& x : t.data()) x = static_cast<real>(dist(rng_));
  return add(name, std::move(t));
}

ad::Param& ParamStore::constant(const std::string& name, Shape shape, real value) {
  return add(name, Tensor(std::move(shape), value));
}

ad::Param& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("param store: no parameter '" + name + "'");
  return params_[it->second];
}

const ad::Param& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("param store: no parameter '" + name + "'");
  return params_[it->second];
}

std::uint64_t ParamStore::scalar_count() const {
  std::uint64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace photon
