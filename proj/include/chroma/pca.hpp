#pragma once

#include <vector>

#include "chroma/colorspace.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

// Principal directions of the training color fields, used by the specificity
// loss to weight deviations by inverse variance.
struct PcaBasis {
    Tensor mean;        // (D), D = 2*H*W of the flattened field
    Tensor components;  // (k, D), orthonormal rows, leading direction first
    Tensor sigmas;      // (k), standard deviations, non-increasing

    int k() const { return components.extent(0); }
    int dim() const { return mean.extent(0); }
};

struct PcaProjection {
    Tensor coeffs;    // (k)
    Tensor residual;  // (D), orthogonal to every component
};

// Eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.
// Returns eigenvalues descending; eigenvector i is the i-th row of vectors.
struct EigenResult {
    Tensor values;   // (n)
    Tensor vectors;  // (n, n), row i pairs with values[i]
};
EigenResult symmetric_eigen(const Tensor& m);

// Flattens a field's ab channels to the (D) vector the basis works on.
Tensor flatten_field(const ColorField& field);

// Fits the top-k basis of the sample covariance of the flattened fields.
// Uses the Gram-matrix trick when there are fewer samples than dimensions.
PcaBasis pca_fit(const std::vector<Tensor>& samples, int k);
PcaBasis pca_fit_fields(const std::vector<ColorField>& fields, int k);

PcaProjection pca_project(const PcaBasis& basis, const Tensor& flat);

}  // namespace chroma
