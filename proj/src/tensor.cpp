#include "seggan/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "seggan/error.hpp"

namespace seggan {

std::string Shape::str() const {
  std::ostringstream os;
  os << "[" << n << "," << c << "," << h << "," << w << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ConfigError("negative tensor dimension " + shape.str());
  }
  data_.assign(shape.size(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_.str());
  }
}

std::vector<double>& Tensor::grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  return *grad_;
}

const std::vector<double>& Tensor::grad() const {
  if (!grad_) throw std::logic_error("tensor has no gradient");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) {
    std::fill(grad_->begin(), grad_->end(), 0.0);
  } else {
    grad_.emplace(data_.size(), 0.0);
  }
}

Tensor Tensor::slice(int n) const {
  Tensor out({1, shape_.c, shape_.h, shape_.w});
  const std::size_t len = out.size();
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(n * len), len,
              out.data_.begin());
  return out;
}

void Tensor::set_slice(int n, const Tensor& sample) {
  require_same_shape(sample.shape(), {1, shape_.c, shape_.h, shape_.w},
                     "set_slice");
  std::copy(sample.data_.begin(), sample.data_.end(),
            data_.begin() + static_cast<std::ptrdiff_t>(n * sample.size()));
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::sum() const {
  return std::accumulate(data_.begin(), data_.end(), 0.0);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(shape_, other.shape_, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ConfigError(std::string(what) + ": shape mismatch " + a.str() +
                      " vs " + b.str());
  }
}

}  // namespace seggan
