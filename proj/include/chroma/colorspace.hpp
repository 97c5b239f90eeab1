#pragma once

#include <vector>

#include "chroma/image.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

// One training/evaluation sample: chrominance targets plus the paired
// lightness channel they were separated from.
struct ColorField {
    Tensor ab;  // (2, H, W), a then b, normalized to [-1, 1]
    Tensor L;   // (H, W), lightness in [0, 100]

    int height() const { return ab.extent(1); }
    int width() const { return ab.extent(2); }
};

// ab values are divided by this to land in the decoder's tanh range.
inline constexpr double kAbScale = 110.0;

// Empirical distribution of quantized ab colors over a training corpus,
// with the inverse-probability weights derived from it. Weights are rescaled
// so their corpus mean is exactly 1; bins never seen in training fall back
// to the smoothing floor.
struct AbHistogram {
    double bin_size = 10.0;  // ab units per bin side
    int bins = 22;           // per axis, covering [-110, 110)
    double floor = 1e-4;
    Tensor probs;            // (bins, bins) indexed [a_bin][b_bin], sums to 1
    double weight_norm = 1.0;  // divisor giving the unit-mean rescale

    int bin_of(double ab_normalized) const;
    double prob(double a_norm, double b_norm) const;
    bool in_support(double a_norm, double b_norm) const { return prob(a_norm, b_norm) > 0.0; }
    // Rescaled 1/H weight for the bin containing the given color.
    double weight(double a_norm, double b_norm) const;
};

ColorField rgb_to_lab(const ImageU8& img);
ImageU8 lab_to_rgb(const ColorField& field);

// Converts just the lightness plane of an RGB image (used for grey inputs).
Tensor rgb_to_lightness(const ImageU8& img);

AbHistogram build_histogram(const std::vector<ColorField>& fields, double bin_size = 10.0);

// Per-pixel colorfulness weights of a field under the corpus histogram, (H, W).
Tensor pixel_weights(const ColorField& field, const AbHistogram& hist);

}  // namespace chroma
