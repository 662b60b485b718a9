#pragma once

#include <string>
#include <vector>

#include "ctml/errors.hpp"

namespace ctml {

// NCHW; lower-rank data uses size-1 leading dims, scalars are {1,1,1,1}.
struct Shape {
    int n = 1, c = 1, h = 1, w = 1;

    long long count() const
    {
        return static_cast<long long>(n) * c * static_cast<long long>(h) * w;
    }
    bool operator==(const Shape&) const = default;
    std::string str() const
    {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
               "," + std::to_string(w) + ")";
    }
};

template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(s), v(static_cast<size_t>(s.count()), T(0)) {}
    Tensor(Shape s, std::vector<T> data) : shape(s), v(std::move(data))
    {
        if (static_cast<long long>(v.size()) != s.count())
            throw dimension_error("tensor data size " + std::to_string(v.size()) +
                                  " does not match shape " + s.str());
    }

    static Tensor zeros(Shape s) { return Tensor(s); }
    static Tensor full(Shape s, T val)
    {
        Tensor t(s);
        for (auto& x : t.v) x = val;
        return t;
    }

    size_t index(int in, int ic, int iy, int ix) const
    {
        return ((static_cast<size_t>(in) * shape.c + ic) * shape.h + iy) * shape.w + ix;
    }
    T& at(int in, int ic, int iy, int ix) { return v[index(in, ic, iy, ix)]; }
    T at(int in, int ic, int iy, int ix) const { return v[index(in, ic, iy, ix)]; }

    long long count() const { return shape.count(); }
    bool is_scalar() const { return shape == Shape{1, 1, 1, 1}; }
    T scalar() const
    {
        if (!is_scalar()) throw dimension_error("tensor " + shape.str() + " is not scalar");
        return v[0];
    }
};

} // namespace ctml
