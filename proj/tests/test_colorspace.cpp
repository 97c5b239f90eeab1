#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <map>
#include <vector>

#include "chroma/colorspace.hpp"
#include "chroma/error.hpp"
#include "chroma/rng.hpp"

using namespace chroma;

namespace {

ColorField constant_field(int h, int w, double a, double b, double L = 50.0) {
    ColorField f;
    f.ab = Tensor({2, h, w});
    f.L = Tensor({h, w}, L);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            f.ab.at3(0, y, x) = a;
            f.ab.at3(1, y, x) = b;
        }
    return f;
}

ColorField random_field(int h, int w, Rng& rng) {
    ColorField f;
    f.ab = Tensor({2, h, w});
    f.L = Tensor({h, w}, 50.0);
    for (std::int64_t i = 0; i < f.ab.size(); ++i) f.ab[i] = 2.0 * rng.uniform() - 1.0;
    return f;
}

}  // namespace

TEST_CASE("neutral grey maps to the Lab neutral axis") {
    ImageU8 img(1, 1, 3);
    img.at(0, 0, 0) = img.at(0, 0, 1) = img.at(0, 0, 2) = 128;
    const ColorField f = rgb_to_lab(img);
    CHECK(std::abs(f.ab.at3(0, 0, 0)) < 1e-3);
    CHECK(std::abs(f.ab.at3(1, 0, 0)) < 1e-3);
}

TEST_CASE("white maps to L near 100 with no chroma") {
    ImageU8 img(1, 1, 3);
    img.at(0, 0, 0) = img.at(0, 0, 1) = img.at(0, 0, 2) = 255;
    const ColorField f = rgb_to_lab(img);
    CHECK(f.L.at2(0, 0) == doctest::Approx(100.0).epsilon(1e-4));
    CHECK(std::abs(f.ab.at3(0, 0, 0)) < 1e-3);
    CHECK(std::abs(f.ab.at3(1, 0, 0)) < 1e-3);
}

TEST_CASE("rgb -> lab -> rgb round trip stays within one byte per channel") {
    Rng rng(101);
    ImageU8 img(10, 100, 3);
    for (auto& p : img.pixels) p = static_cast<unsigned char>(rng.below(256));
    const ImageU8 back = lab_to_rgb(rgb_to_lab(img));
    int worst = 0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<int>(img.pixels[i]) - static_cast<int>(back.pixels[i])));
    CHECK(worst <= 1);
}

TEST_CASE("single-channel input is treated as neutral grey") {
    ImageU8 img(2, 2, 1);
    for (auto& p : img.pixels) p = 200;
    const ColorField f = rgb_to_lab(img);
    for (std::int64_t i = 0; i < f.ab.size(); ++i) CHECK(std::abs(f.ab[i]) < 1e-3);
}

TEST_CASE("histogram of a constant corpus concentrates on one bin") {
    const AbHistogram hist = build_histogram({constant_field(4, 4, 0.5, -0.5)});
    int occupied = 0;
    for (std::int64_t i = 0; i < hist.probs.size(); ++i)
        if (hist.probs[i] > 0.0) ++occupied;
    CHECK(occupied == 1);
    CHECK(hist.prob(0.5, -0.5) == doctest::Approx(1.0));
}

TEST_CASE("histogram splits a 3:1 two-color corpus as 0.75/0.25") {
    // 3 fields of one color, 1 of another, equal pixel counts.
    std::vector<ColorField> corpus = {constant_field(2, 2, 0.5, 0.5), constant_field(2, 2, 0.5, 0.5),
                                      constant_field(2, 2, 0.5, 0.5), constant_field(2, 2, -0.5, -0.5)};
    const AbHistogram hist = build_histogram(corpus);
    CHECK(hist.prob(0.5, 0.5) == doctest::Approx(0.75));
    CHECK(hist.prob(-0.5, -0.5) == doctest::Approx(0.25));
}

TEST_CASE("histogram matches a hash-map tally oracle on random fields") {
    Rng rng(103);
    std::vector<ColorField> corpus;
    for (int i = 0; i < 10; ++i) corpus.push_back(random_field(5, 7, rng));
    const AbHistogram hist = build_histogram(corpus);

    std::map<std::pair<int, int>, std::int64_t> tally;
    std::int64_t total = 0;
    for (const ColorField& f : corpus)
        for (int y = 0; y < f.height(); ++y)
            for (int x = 0; x < f.width(); ++x) {
                const auto key = std::make_pair(
                    std::clamp(static_cast<int>(std::floor((f.ab.at3(0, y, x) * 110.0 + 110.0) / 10.0)), 0, 21),
                    std::clamp(static_cast<int>(std::floor((f.ab.at3(1, y, x) * 110.0 + 110.0) / 10.0)), 0, 21));
                ++tally[key];
                ++total;
            }
    double sum = 0.0;
    for (const auto& [key, count] : tally) {
        CHECK(hist.probs.at2(key.first, key.second) ==
              doctest::Approx(static_cast<double>(count) / total).epsilon(1e-12));
        sum += hist.probs.at2(key.first, key.second);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("empty corpus is rejected") {
    CHECK_THROWS_AS(build_histogram({}), DataError);
}

TEST_CASE("uniform two-bin histogram yields unit weights everywhere") {
    std::vector<ColorField> corpus = {constant_field(2, 2, 0.5, 0.5), constant_field(2, 2, -0.5, -0.5)};
    const AbHistogram hist = build_histogram(corpus);
    for (const ColorField& f : corpus) {
        const Tensor w = pixel_weights(f, hist);
        for (std::int64_t i = 0; i < w.size(); ++i) CHECK(w[i] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("imbalanced bins weight the rare color exactly three times the common one") {
    std::vector<ColorField> corpus = {constant_field(2, 2, 0.5, 0.5), constant_field(2, 2, 0.5, 0.5),
                                      constant_field(2, 2, 0.5, 0.5), constant_field(2, 2, -0.5, -0.5)};
    const AbHistogram hist = build_histogram(corpus);
    const double common = hist.weight(0.5, 0.5);
    const double rare = hist.weight(-0.5, -0.5);
    CHECK(rare / common == doctest::Approx(3.0).epsilon(1e-12));
    // Corpus mean of the weights is exactly 1.
    CHECK(0.75 * common + 0.25 * rare == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pixel weights match a direct inverse-probability oracle") {
    Rng rng(107);
    std::vector<ColorField> corpus;
    for (int i = 0; i < 6; ++i) corpus.push_back(random_field(4, 4, rng));
    const AbHistogram hist = build_histogram(corpus);
    const ColorField& probe = corpus[2];
    const Tensor w = pixel_weights(probe, hist);
    for (int y = 0; y < probe.height(); ++y)
        for (int x = 0; x < probe.width(); ++x) {
            const double p = hist.prob(probe.ab.at3(0, y, x), probe.ab.at3(1, y, x));
            const double expect = (1.0 / std::max(p, 1e-4)) / hist.weight_norm;
            CHECK(w.at2(y, x) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("weight ratios equal inverse probability ratios above the floor") {
    Rng rng(109);
    std::vector<ColorField> corpus;
    for (int i = 0; i < 8; ++i) corpus.push_back(random_field(6, 6, rng));
    const AbHistogram hist = build_histogram(corpus);
    const ColorField& f = corpus[0];
    const double pa = hist.prob(f.ab.at3(0, 0, 0), f.ab.at3(1, 0, 0));
    const double pb = hist.prob(f.ab.at3(0, 3, 3), f.ab.at3(1, 3, 3));
    if (pa > 1e-4 && pb > 1e-4) {
        const double wa = hist.weight(f.ab.at3(0, 0, 0), f.ab.at3(1, 0, 0));
        const double wb = hist.weight(f.ab.at3(0, 3, 3), f.ab.at3(1, 3, 3));
        CHECK(wa / wb == doctest::Approx(pb / pa).epsilon(1e-9));
    }
}

TEST_CASE("quantizing a bin center returns the same bin") {
    const AbHistogram hist = build_histogram({constant_field(1, 1, 0.0, 0.0)});
    for (int i = 0; i < hist.bins; ++i) {
        const double center_units = -110.0 + (i + 0.5) * hist.bin_size;
        CHECK(hist.bin_of(center_units / 110.0) == i);
    }
}

TEST_CASE("concatenated corpora mix histograms by pixel count") {
    Rng rng(113);
    std::vector<ColorField> a, b, both;
    for (int i = 0; i < 2; ++i) a.push_back(random_field(4, 4, rng));
    for (int i = 0; i < 3; ++i) b.push_back(random_field(2, 2, rng));
    both = a;
    both.insert(both.end(), b.begin(), b.end());
    const AbHistogram ha = build_histogram(a);
    const AbHistogram hb = build_histogram(b);
    const AbHistogram hc = build_histogram(both);
    const double na = 2 * 16, nb = 3 * 4;
    for (std::int64_t i = 0; i < hc.probs.size(); ++i)
        CHECK(hc.probs[i] ==
              doctest::Approx((na * ha.probs[i] + nb * hb.probs[i]) / (na + nb)).epsilon(1e-12));
}
