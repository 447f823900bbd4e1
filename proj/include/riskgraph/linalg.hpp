#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace riskgraph {

// Dense row-major matrix of doubles. Deliberately minimal: the model kernels
// write their loops explicitly, this is just shaped storage.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

    void resize(int r, int c) {
        rows = r;
        cols = c;
        a.assign(static_cast<size_t>(r) * c, 0.0);
    }

    void zero() { std::fill(a.begin(), a.end(), 0.0); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// out = M x, M is (rows x cols), x has cols entries, out has rows entries.
inline void matvec(const Matrix& m, const double* x, double* out) {
    for (int r = 0; r < m.rows; ++r) {
        const double* mr = m.row(r);
        double s = 0.0;
        for (int c = 0; c < m.cols; ++c) s += mr[c] * x[c];
        out[r] = s;
    }
}

// out = M^T x, x has rows entries, out has cols entries. Accumulates.
inline void matTvec_acc(const Matrix& m, const double* x, double* out) {
    for (int r = 0; r < m.rows; ++r) {
        const double* mr = m.row(r);
        const double xr = x[r];
        for (int c = 0; c < m.cols; ++c) out[c] += mr[c] * xr;
    }
}

// M += u v^T (u has rows entries, v has cols entries).
inline void outer_acc(Matrix& m, const double* u, const double* v) {
    for (int r = 0; r < m.rows; ++r) {
        double* mr = m.row(r);
        const double ur = u[r];
        for (int c = 0; c < m.cols; ++c) mr[c] += ur * v[c];
    }
}

inline double dot(const double* x, const double* y, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

}  // namespace riskgraph
