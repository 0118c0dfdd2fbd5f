#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pacecast {

// Row-major dense kernels, sized for desk-scale sequence models. Loop orders
// keep the inner dimension contiguous, and dot products use eight independent
// accumulators: the explicit reassociation lets the compiler vectorize
// without relaxed-math flags while keeping a fixed, reproducible summation
// order.

template <typename S>
inline S dot(const S* a, const S* b, int n) {
  S acc0 = S(0), acc1 = S(0), acc2 = S(0), acc3 = S(0);
  S acc4 = S(0), acc5 = S(0), acc6 = S(0), acc7 = S(0);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 += a[i] * b[i];
    acc1 += a[i + 1] * b[i + 1];
    acc2 += a[i + 2] * b[i + 2];
    acc3 += a[i + 3] * b[i + 3];
    acc4 += a[i + 4] * b[i + 4];
    acc5 += a[i + 5] * b[i + 5];
    acc6 += a[i + 6] * b[i + 6];
    acc7 += a[i + 7] * b[i + 7];
  }
  S acc = ((acc0 + acc1) + (acc2 + acc3)) + ((acc4 + acc5) + (acc6 + acc7));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// C[m x n] = or += A[m x k] * B[k x n]
template <typename S>
void gemm(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false) {
  for (int i = 0; i < m; ++i) {
    S* ci = c + static_cast<std::size_t>(i) * n;
    if (!accumulate)
      for (int j = 0; j < n; ++j) ci[j] = S(0);
    const S* ai = a + static_cast<std::size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const S s = ai[l];
      const S* bl = b + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) ci[j] += s * bl[j];
    }
  }
}

// C[m x n] = or += A[m x k] * B[n x k]^T
template <typename S>
void gemm_nt(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate = false) {
  for (int i = 0; i < m; ++i) {
    const S* ai = a + static_cast<std::size_t>(i) * k;
    S* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const S acc = dot(ai, b + static_cast<std::size_t>(j) * k, k);
      ci[j] = accumulate ? ci[j] + acc : acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <typename S>
void gemm_tn_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* ai = a + static_cast<std::size_t>(i) * k;
    const S* bi = b + static_cast<std::size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const S s = ai[l];
      S* cl = c + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) cl[j] += s * bi[j];
    }
  }
}

template <typename S>
struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;

  void init_shape(std::string tensor_name, std::vector<int> dims) {
    name = std::move(tensor_name);
    shape = std::move(dims);
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    value.assign(n, S(0));
    grad.assign(n, S(0));
  }
  std::size_t size() const { return value.size(); }
};

}  // namespace pacecast
