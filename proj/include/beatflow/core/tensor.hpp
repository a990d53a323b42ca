#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace beatflow {

using Index = std::int64_t;
using Shape = std::vector<int>;

inline Index shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), Index{1},
                           [](Index a, int b) { return a * b; });
}

std::string shape_string(const Shape& shape);

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A loss or sample turned NaN or infinite.
class NumericError : public DomainError {
public:
    using DomainError::DomainError;
};

/// A model stage used before it has been trained.
class UntrainedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major (C-order) array of arbitrary rank.
///
/// Storage is a contiguous Eigen column vector, so every tensor can be viewed
/// as a matrix through `Eigen::Map` without copying.
template <typename Scalar>
class Tensor {
public:
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatMap = Eigen::Map<RowMat>;
    using ConstMatMap = Eigen::Map<const RowMat>;

    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vec::Zero(shape_size(shape_))) {}

    Tensor(Shape shape, Vec data) : shape_(std::move(shape)), data_(std::move(data))
    {
        if (data_.size() != shape_size(shape_)) {
            throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor filled(Shape shape, Scalar value)
    {
        Tensor t(std::move(shape));
        t.data_.setConstant(value);
        return t;
    }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] int rank() const noexcept { return static_cast<int>(shape_.size()); }
    [[nodiscard]] int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis < 0 ? axis + rank() : axis)); }
    [[nodiscard]] Index size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.size() == 0; }

    [[nodiscard]] Vec& vec() noexcept { return data_; }
    [[nodiscard]] const Vec& vec() const noexcept { return data_; }
    [[nodiscard]] Scalar* data() noexcept { return data_.data(); }
    [[nodiscard]] const Scalar* data() const noexcept { return data_.data(); }

    Scalar& operator[](Index i) { return data_[i]; }
    const Scalar& operator[](Index i) const { return data_[i]; }

    /// View as a rows x cols row-major matrix; rows * cols must equal size().
    [[nodiscard]] MatMap matrix(Index rows, Index cols) { return MatMap(data_.data(), rows, cols); }
    [[nodiscard]] ConstMatMap matrix(Index rows, Index cols) const { return ConstMatMap(data_.data(), rows, cols); }

    /// Same data, different shape.
    [[nodiscard]] Tensor reshaped(Shape shape) const
    {
        if (shape_size(shape) != size()) {
            throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    void reshape_inplace(Shape shape)
    {
        if (shape_size(shape) != size()) {
            throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        shape_ = std::move(shape);
    }

    [[nodiscard]] bool all_finite() const { return data_.allFinite(); }

    template <typename Other>
    [[nodiscard]] Tensor<Other> cast() const
    {
        return Tensor<Other>(shape_, data_.template cast<Other>());
    }

    void set_zero() { data_.setZero(); }

private:
    Shape shape_;
    Vec data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace beatflow
