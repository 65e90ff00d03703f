#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mwcr {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

// Error hierarchy. The CLI maps InputError to exit code 2 and NumericalError to 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class SchemaError : public InputError {
public:
    using InputError::InputError;
};

class ParseError : public InputError {
public:
    ParseError(const std::string& what, std::size_t row) : InputError(what), row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

class EmptyDataError : public InputError {
public:
    using InputError::InputError;
};

class SizeViolationError : public InputError {
public:
    using InputError::InputError;
};

class DomainError : public InputError {
public:
    using InputError::InputError;
};

class CapExceededError : public InputError {
public:
    CapExceededError(const std::string& what, double count) : InputError(what), count_(count) {}
    double count() const noexcept { return count_; }

private:
    double count_;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class SingularDesignError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class InsufficientOutputationsError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class CannotAssessError : public NumericalError {
public:
    CannotAssessError(const std::string& what, Index coordinate)
        : NumericalError(what), coordinate_(coordinate) {}
    Index coordinate() const noexcept { return coordinate_; }

private:
    Index coordinate_;
};

class MergeError : public Error {
public:
    using Error::Error;
};

/// Symmetrize in place: A <- (A + A^T) / 2.
template <typename Derived>
void symmetrize(Eigen::MatrixBase<Derived>& a) {
    a = (0.5 * (a + a.transpose())).eval();
}

}  // namespace mwcr
