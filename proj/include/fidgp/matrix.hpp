#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "fidgp/errors.hpp"

namespace fidgp {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. The workhorse container for all
/// deterministic linear algebra; sizes here stay desk-scale (at most a
/// few thousand entries per factorization).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vector data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Matrix(std::size_t r, std::size_t c, Vector d);
    Matrix(std::initializer_list<std::initializer_list<double>> init);

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return rows * cols; }
    bool empty() const { return rows == 0 || cols == 0; }

    static Matrix identity(std::size_t n);
    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }

    bool all_finite() const;
    std::string shape_str() const;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

Vector matvec(const Matrix& a, const Vector& x);
Vector matvec_t(const Matrix& a, const Vector& x);  // a^T x

double dot(const Vector& a, const Vector& b);
double norm2(const Vector& a);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);

/// vec(a b^T) laid out row-major to match Matrix storage.
Matrix outer(const Vector& a, const Vector& b);

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw ShapeMismatch(std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
    }
}

}  // namespace fidgp
