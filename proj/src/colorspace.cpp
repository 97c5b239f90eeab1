#include "chroma/colorspace.hpp"

#include <algorithm>
#include <cmath>

#include "chroma/error.hpp"

namespace chroma {

namespace {

// D65 reference white.
constexpr double kXn = 0.95047;
constexpr double kYn = 1.0;
constexpr double kZn = 1.08883;
constexpr double kDelta = 6.0 / 29.0;

double srgb_to_linear(double c) {
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double c) {
    return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
    return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

double lab_f_inv(double t) {
    return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

struct Lab {
    double L, a, b;
};

Lab rgb_bytes_to_lab(double r, double g, double b) {
    const double rl = srgb_to_linear(r / 255.0);
    const double gl = srgb_to_linear(g / 255.0);
    const double bl = srgb_to_linear(b / 255.0);
    const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    const double fx = lab_f(x / kXn);
    const double fy = lab_f(y / kYn);
    const double fz = lab_f(z / kZn);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

unsigned char to_byte(double c) {
    const double scaled = std::round(c * 255.0);
    return static_cast<unsigned char>(std::clamp(scaled, 0.0, 255.0));
}

}  // namespace

ColorField rgb_to_lab(const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DataError("rgb_to_lab: expected 1 or 3 channels, got " + std::to_string(img.channels));
    ColorField field;
    field.ab = Tensor({2, img.height, img.width});
    field.L = Tensor({img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double r = img.at(y, x, 0);
            const double g = img.channels == 3 ? img.at(y, x, 1) : r;
            const double b = img.channels == 3 ? img.at(y, x, 2) : r;
            const Lab lab = rgb_bytes_to_lab(r, g, b);
            field.L.at2(y, x) = lab.L;
            field.ab.at3(0, y, x) = lab.a / kAbScale;
            field.ab.at3(1, y, x) = lab.b / kAbScale;
        }
    return field;
}

Tensor rgb_to_lightness(const ImageU8& img) {
    return rgb_to_lab(img).L;
}

ImageU8 lab_to_rgb(const ColorField& field) {
    ImageU8 img(field.height(), field.width(), 3);
    for (int y = 0; y < field.height(); ++y)
        for (int x = 0; x < field.width(); ++x) {
            const double L = field.L.at2(y, x);
            const double a = field.ab.at3(0, y, x) * kAbScale;
            const double b = field.ab.at3(1, y, x) * kAbScale;
            const double fy = (L + 16.0) / 116.0;
            const double fx = fy + a / 500.0;
            const double fz = fy - b / 200.0;
            const double xr = kXn * lab_f_inv(fx);
            const double yr = kYn * lab_f_inv(fy);
            const double zr = kZn * lab_f_inv(fz);
            const double rl = 3.2404542 * xr - 1.5371385 * yr - 0.4985314 * zr;
            const double gl = -0.9692660 * xr + 1.8760108 * yr + 0.0415560 * zr;
            const double bl = 0.0556434 * xr - 0.2040259 * yr + 1.0572252 * zr;
            img.at(y, x, 0) = to_byte(linear_to_srgb(std::clamp(rl, 0.0, 1.0)));
            img.at(y, x, 1) = to_byte(linear_to_srgb(std::clamp(gl, 0.0, 1.0)));
            img.at(y, x, 2) = to_byte(linear_to_srgb(std::clamp(bl, 0.0, 1.0)));
        }
    return img;
}

int AbHistogram::bin_of(double ab_normalized) const {
    const double units = ab_normalized * kAbScale + bins * bin_size / 2.0;
    const int idx = static_cast<int>(std::floor(units / bin_size));
    return std::clamp(idx, 0, bins - 1);
}

double AbHistogram::prob(double a_norm, double b_norm) const {
    return probs.at2(bin_of(a_norm), bin_of(b_norm));
}

double AbHistogram::weight(double a_norm, double b_norm) const {
    return 1.0 / std::max(prob(a_norm, b_norm), floor) / weight_norm;
}

AbHistogram build_histogram(const std::vector<ColorField>& fields, double bin_size) {
    AbHistogram hist;
    hist.bin_size = bin_size;
    hist.bins = static_cast<int>(std::ceil(2.0 * kAbScale / bin_size));
    hist.probs = Tensor({hist.bins, hist.bins});

    std::int64_t total = 0;
    for (const ColorField& f : fields) {
        for (int y = 0; y < f.height(); ++y)
            for (int x = 0; x < f.width(); ++x) {
                const int ba = hist.bin_of(f.ab.at3(0, y, x));
                const int bb = hist.bin_of(f.ab.at3(1, y, x));
                hist.probs.at2(ba, bb) += 1.0;
                ++total;
            }
    }
    if (total == 0) throw DataError("build_histogram: empty corpus");
    for (std::int64_t i = 0; i < hist.probs.size(); ++i) hist.probs[i] /= static_cast<double>(total);

    // Unit-mean rescale: the corpus-expected raw weight sum(H_b / max(H_b, floor)).
    double norm = 0.0;
    for (std::int64_t i = 0; i < hist.probs.size(); ++i)
        norm += hist.probs[i] / std::max(hist.probs[i], hist.floor);
    hist.weight_norm = norm;
    return hist;
}

Tensor pixel_weights(const ColorField& field, const AbHistogram& hist) {
    Tensor w({field.height(), field.width()});
    for (int y = 0; y < field.height(); ++y)
        for (int x = 0; x < field.width(); ++x)
            w.at2(y, x) = hist.weight(field.ab.at3(0, y, x), field.ab.at3(1, y, x));
    return w;
}

}  // namespace chroma
