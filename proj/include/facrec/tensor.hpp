#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace facrec {

// Dense row-major float tensor. Kept deliberately small: the model works on
// a flat parameter vector and named slices; Tensor is the unit of
// serialization and of the few standalone numeric ops.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
        data.assign(numel(shape), 0.0f);
    }
    Tensor(std::vector<size_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel(shape)) throw std::invalid_argument("tensor: data/shape mismatch");
    }

    static size_t numel(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) n *= d;
        return n;
    }

    size_t size() const { return data.size(); }
    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }
};

}  // namespace facrec
