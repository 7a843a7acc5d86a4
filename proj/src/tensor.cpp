#include "auxq/tensor.hpp"

#include "auxq/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace auxq {

ValidationError::ValidationError(std::vector<std::string> violations)
    : Error([&] {
          std::string msg = "validation failed:";
          for (const auto& v : violations) msg += "\n  - " + v;
          return msg;
      }()),
      violations_(std::move(violations))
{
}

std::size_t numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(numel(shape_), fill)
{
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (numel(shape_) != data_.size())
        throw ShapeError("tensor: shape " + to_string(shape_) + " holds " + std::to_string(numel(shape_)) +
                         " values, got " + std::to_string(data_.size()));
}

template <typename T>
T Tensor<T>::item() const
{
    if (data_.size() != 1) throw ShapeError("tensor.item: shape " + to_string(shape_) + " is not a scalar");
    return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const&
{
    return Tensor(std::move(shape), data_);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) &&
{
    return Tensor(std::move(shape), std::move(data_));
}

template <typename T>
void Tensor<T>::fill(T value)
{
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b)
{
    return a.shape() == b.shape() && std::memcmp(a.raw(), b.raw(), a.size() * sizeof(T)) == 0;
}

template <typename T>
bool all_finite(const Tensor<T>& t)
{
    return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.shape() != b.shape())
        throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

template class Tensor<float>;
template class Tensor<double>;
template bool bit_equal(const Tensor<float>&, const Tensor<float>&);
template bool bit_equal(const Tensor<double>&, const Tensor<double>&);
template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace auxq
