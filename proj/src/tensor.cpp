#include "photon/tensor.h"

#include <cmath>
#include <sstream>

namespace photon {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, real fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape_) + " does not match buffer of " +
                         std::to_string(data_.size()) + " scalars");
  }
}

Tensor Tensor::from_rows(const std::vector<std::vector<real>>& rows) {
  if (rows.empty()) throw DimensionError("tensor: from_rows needs at least one row");
  const std::size_t width = rows.front().size();
  std::vector<real> data;
  data.reserve(rows.size() * width);
  for (const auto& r : rows) {
    if (r.size() != width) throw DimensionError("tensor: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), width}, std::move(data));
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) throw DimensionError("tensor: index rank mismatch for " + shape_str(shape_));
  std::size_t off = 0;
  std::size_t d = 0;
  for (auto i : idx) {
    if (i >= shape_[d]) throw DimensionError("tensor: index out of range for " + shape_str(shape_));
    off = off * shape_[d] + i;
    ++d;
  }
  return off;
}

real& Tensor::at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
real Tensor::at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

std::vector<real> Tensor::row(std::size_t r) const {
  const std::size_t w = shape_.empty() ? 0 : shape_.back();
  if (w == 0 || (r + 1) * w > data_.size()) throw DimensionError("tensor: row out of range");
  return {data_.begin() + static_cast<std::ptrdiff_t>(r * w), data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * w)};
}

void Tensor::fill(real v) {
  for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (auto x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace photon
