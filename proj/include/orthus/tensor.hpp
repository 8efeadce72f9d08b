#pragma once

#include "orthus/common.hpp"

namespace orthus {

// Dense tensor of rank 1 or 2. Data lives in a row-major Eigen matrix; the
// scalar type selects the precision (float for training, double for checks).
template <class S>
struct Tensor {
    Shape shape;
    MatrixX<S> mat;

    Tensor() = default;

    explicit Tensor(MatrixX<S> m) : shape{m.rows(), m.cols()}, mat(std::move(m)) {}

    Tensor(Shape s, MatrixX<S> m) : shape(std::move(s)), mat(std::move(m)) {
        if (shape.empty() || shape.size() > 2) fail("tensor rank must be 1 or 2, got ", shape.size());
        for (Index d : shape)
            if (d <= 0) fail("tensor dimensions must be positive, got ", shape_str(shape));
        Index rows = shape.size() == 2 ? shape[0] : 1;
        Index cols = shape.back();
        if (mat.rows() != rows || mat.cols() != cols)
            throw ShapeError("tensor storage " + std::to_string(mat.rows()) + "x" +
                             std::to_string(mat.cols()) + " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Index rows, Index cols) { return Tensor(MatrixX<S>::Zero(rows, cols)); }
    static Tensor scalar(S v) {
        MatrixX<S> m(1, 1);
        m(0, 0) = v;
        return Tensor(std::move(m));
    }

    Index rows() const { return mat.rows(); }
    Index cols() const { return mat.cols(); }
    Index numel() const { return mat.size(); }
    S item() const {
        if (mat.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape));
        return mat(0, 0);
    }
};

template <class S>
bool same_dims(const MatrixX<S>& a, const MatrixX<S>& b) {
    return a.rows() == b.rows() && a.cols() == b.cols();
}

}  // namespace orthus
