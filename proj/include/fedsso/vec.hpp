#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fedsso/errors.hpp"

namespace fedsso {

// Flat model parameter vector. Every model flattens its own layout into one
// of these so the server-side algebra never needs to know about layouts.
using ParamVector = std::vector<double>;

namespace vec {

inline void check_dim(const ParamVector& v, std::size_t d, const char* ctx) {
    if (v.size() != d) {
        throw InvalidDimension(std::string(ctx) + ": expected length " + std::to_string(d) +
                               ", got " + std::to_string(v.size()));
    }
}

inline bool all_finite(const ParamVector& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

inline double dot(const ParamVector& a, const ParamVector& b) {
    check_dim(b, a.size(), "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const ParamVector& a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(const ParamVector& a) {
    double m = 0.0;
    for (double x : a) m = std::max(m, std::abs(x));
    return m;
}

// y += c * x
inline void axpy(double c, const ParamVector& x, ParamVector& y) {
    check_dim(y, x.size(), "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

inline void scale(ParamVector& x, double c) {
    for (double& v : x) v *= c;
}

inline ParamVector sub(const ParamVector& a, const ParamVector& b) {
    check_dim(b, a.size(), "sub");
    ParamVector r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

inline ParamVector add(const ParamVector& a, const ParamVector& b) {
    check_dim(b, a.size(), "add");
    ParamVector r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

inline ParamVector scaled(const ParamVector& a, double c) {
    ParamVector r(a);
    scale(r, c);
    return r;
}

inline ParamVector zeros(std::size_t d) { return ParamVector(d, 0.0); }

}  // namespace vec
}  // namespace fedsso
