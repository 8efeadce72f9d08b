#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace orthus {

using Index = Eigen::Index;

// Row-major dense storage; all kernels operate on 2-D views of it.
template <class S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& s) {
    Index n = 1;
    for (Index d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct TrainError : Error {
    using Error::Error;
};
struct DecodeError : Error {
    using Error::Error;
};
struct CheckpointError : Error {
    using Error::Error;
};

template <class... Ts>
[[noreturn]] void fail(Ts&&... parts) {
    std::ostringstream os;
    (os << ... << parts);
    throw Error(os.str());
}

// FNV-1a over raw bytes; used for parameter freeze checks.
inline uint64_t fnv1a(std::span<const unsigned char> bytes, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

template <class S>
uint64_t hash_matrix(const MatrixX<S>& m, uint64_t h = 0xcbf29ce484222325ull) {
    auto* p = reinterpret_cast<const unsigned char*>(m.data());
    return fnv1a({p, size_t(m.size()) * sizeof(S)}, h);
}

}  // namespace orthus
