#ifndef VPRG_TENSOR_HPP_
#define VPRG_TENSOR_HPP_

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace vprg {

// Dense row-major tensor of doubles. Rank is 1, 2 or 3 everywhere in this
// codebase; shape {r} is a vector, {r,c} a matrix, {a,b,c} a stacked grid.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor row(std::initializer_list<double> v);          // 1 x n
  static Tensor matrix(std::size_t r, std::size_t c, std::initializer_list<double> v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // 2-D accessors (rank must be 2).
  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_[1]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  // 3-D accessor (rank must be 3).
  double& at3(std::size_t a, std::size_t b, std::size_t c) {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  double at3(std::size_t a, std::size_t b, std::size_t c) const {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v);
  void add_scaled(const Tensor& o, double s);   // *this += s * o
  double max_abs() const;
  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace vprg

#endif  // VPRG_TENSOR_HPP_
