#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace ltfl {

/// Dense row-major array of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);
  Tensor(std::vector<std::size_t> dims, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  /// Number of elements in one slice along the leading dimension.
  std::size_t row_size() const;
  std::span<const double> row(std::size_t i) const;
  std::span<double> row(std::size_t i);

  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;
};

std::size_t shape_product(std::span<const std::size_t> shape);

}  // namespace ltfl
