#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "sllab/errors.hpp"

namespace sllab {

/// Row-major rank-2 value block. The engine works on matrices throughout:
/// scalars are 1x1, row vectors 1xN. Value count always equals rows*cols.
template <typename T>
struct TensorData {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> v;

    TensorData() = default;
    TensorData(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), v(r * c, fill) {}
    TensorData(std::size_t r, std::size_t c, std::vector<T> values)
        : rows(r), cols(c), v(std::move(values)) {
        require(v.size() == rows * cols, "TensorData: value count must equal rows*cols");
    }

    static TensorData scalar(T x) { return TensorData(1, 1, std::vector<T>{x}); }
    static TensorData row(std::vector<T> values) {
        const std::size_t n = values.size();
        return TensorData(1, n, std::move(values));
    }

    std::size_t numel() const { return rows * cols; }
    T& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    const T& at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
    bool same_shape(const TensorData& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (const T& x : v) {
            if (!std::isfinite(static_cast<double>(x))) return false;
        }
        return true;
    }
};

template <typename T, typename U>
TensorData<T> tensor_cast(const TensorData<U>& src) {
    TensorData<T> out(src.rows, src.cols);
    for (std::size_t i = 0; i < src.v.size(); ++i) out.v[i] = static_cast<T>(src.v[i]);
    return out;
}

}  // namespace sllab
