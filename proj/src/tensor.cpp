#include "ltfl/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "ltfl/error.hpp"

namespace ltfl {

std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : shape(std::move(dims)), data(shape_product(shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> values)
    : shape(std::move(dims)), data(std::move(values)) {
  if (shape_product(shape) != data.size()) {
    throw DimensionError("tensor data length", shape_product(shape), data.size());
  }
}

std::size_t Tensor::row_size() const {
  if (shape.empty()) return 1;
  return shape_product(std::span(shape).subspan(1));
}

std::span<const double> Tensor::row(std::size_t i) const {
  const std::size_t n = row_size();
  return {data.data() + i * n, n};
}

std::span<double> Tensor::row(std::size_t i) {
  const std::size_t n = row_size();
  return {data.data() + i * n, n};
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape.size()) throw DimensionError("tensor index rank", shape.size(), index.size());
  std::size_t off = 0;
  std::size_t d = 0;
  for (std::size_t i : index) {
    if (i >= shape[d]) throw DimensionError("tensor index out of range", shape[d], i);
    off = off * shape[d] + i;
    ++d;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data[offset(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data[offset(index)]; }

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace ltfl
