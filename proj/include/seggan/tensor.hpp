#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace seggan {

/// Four-axis shape [N, C, H, W].
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense row-major NCHW array of doubles with an optional gradient slot.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
               shape_.w +
           x;
  }
  double& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const {
    return data_[index(n, c, y, x)];
  }

  /// Pointer to the start of plane (n, c).
  double* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const double* plane(int n, int c) const {
    return data_.data() + index(n, c, 0, 0);
  }

  bool has_grad() const { return grad_.has_value(); }
  /// Allocates a zero gradient if absent.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();
  void drop_grad() { grad_.reset(); }

  /// Copy of sample `n` as a [1, C, H, W] tensor.
  Tensor slice(int n) const;
  /// Writes a [1, C, H, W] tensor into sample `n`.
  void set_slice(int n, const Tensor& sample);

  bool all_finite() const;
  double sum() const;

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

 private:
  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

/// Throws ConfigError naming both shapes when they differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

/// A trainable tensor. `value.grad()` holds the accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  bool decay_exempt = false;
};

/// Non-trainable state persisted in checkpoints (batch-norm running stats).
struct Buffer {
  std::string name;
  std::vector<double>* data = nullptr;
};

}  // namespace seggan
