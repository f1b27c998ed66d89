#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace photon {

#ifdef PHOTON_FLOAT32
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

// Error hierarchy shared by every module. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array. The last extent is the fastest-varying one.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = 0);
  Tensor(Shape shape, std::vector<real> data);

  static Tensor scalar(real v) { return Tensor({1}, {v}); }
  static Tensor from_rows(const std::vector<std::vector<real>>& rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<real> data() { return data_; }
  std::span<const real> data() const { return data_; }
  const std::vector<real>& vec() const { return data_; }

  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }
  real& at(std::initializer_list<std::size_t> idx);
  real at(std::initializer_list<std::size_t> idx) const;

  // Copy with a new shape of equal element count.
  Tensor reshaped(Shape shape) const;
  // Row `r` of a tensor viewed as [numel / last, last].
  std::vector<real> row(std::size_t r) const;

  void fill(real v);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const;

  Shape shape_;
  std::vector<real> data_;
};

}  // namespace photon
