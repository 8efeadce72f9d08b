#pragma once

#include "orthus/rng.hpp"
#include "orthus/tensor.hpp"

namespace orthus::testutil {

template <class S>
MatrixX<S> random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0) {
    MatrixX<S> m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = S(rng.gaussian(Stream::Misc) * scale);
    return m;
}

template <class S>
bool bitwise_equal(const MatrixX<S>& a, const MatrixX<S>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return std::memcmp(a.data(), b.data(), sizeof(S) * a.size()) == 0;
}

}  // namespace orthus::testutil
