#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "ipldm/metrics.hpp"

using namespace ipldm;

namespace {

Tensor random_image(Rng& rng, int64_t h, int64_t w) {
    Tensor img = Tensor::zeros({1, h, w});
    for (int64_t i = 0; i < img.numel(); ++i)
        img.data()[i] = static_cast<float>(rng.uniform());
    return img;
}

// Independent per-window SSIM: explicit double loop over every valid center.
double ssim_oracle(const Tensor& x, const Tensor& y) {
    const int win = 11;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    int64_t h = x.dim(1), w = x.dim(2);
    double kernel[win][win];
    double ksum = 0.0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            double di = i - 5.0, dj = j - 5.0;
            kernel[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
            ksum += kernel[i][j];
        }
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) kernel[i][j] /= ksum;

    double acc = 0.0;
    int64_t count = 0;
    for (int64_t cy = 0; cy + win <= h; ++cy)
        for (int64_t cx = 0; cx + win <= w; ++cx) {
            double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    double px = x.data()[(cy + i) * w + cx + j];
                    double py = y.data()[(cy + i) * w + cx + j];
                    mx += kernel[i][j] * px;
                    my += kernel[i][j] * py;
                    mxx += kernel[i][j] * px * px;
                    myy += kernel[i][j] * py * py;
                    mxy += kernel[i][j] * px * py;
                }
            double vx = mxx - mx * mx, vy = myy - my * my, cov = mxy - mx * my;
            acc += ((2 * mx * my + c1) * (2 * cov + c2)) /
                   ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    return acc / static_cast<double>(count);
}

// Direct three-sum KID evaluation (diagonals excluded everywhere; cross
// pairs with i == j drop when the sets are the same size).
double kid_oracle(const FeatureSet& xs, const FeatureSet& ys) {
    std::size_t n = xs.features.size(), m = ys.features.size();
    std::size_t p = xs.features[0].size();
    auto k = [p](const std::vector<double>& a, const std::vector<double>& b) {
        double dot = 0.0;
        for (std::size_t i = 0; i < p; ++i) dot += a[i] * b[i];
        return std::pow(dot / static_cast<double>(p) + 1.0, 3.0);
    };
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) sxx += k(xs.features[i], xs.features[j]);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (i != j) syy += k(ys.features[i], ys.features[j]);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            if (n == m && i == j) continue;
            sxy += k(xs.features[i], ys.features[j]);
        }
    double cross = n == m ? n * (n - 1.0) : static_cast<double>(n * m);
    return sxx / (n * (n - 1.0)) + syy / (m * (m - 1.0)) - 2.0 * sxy / cross;
}

// Pair-counting ARI over all C(n,2) pairs.
double ari_oracle(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    std::size_t n = a.size();
    double n11 = 0, n00 = 0, n10 = 0, n01 = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            bool same_a = a[i] == a[j], same_b = b[i] == b[j];
            if (same_a && same_b) ++n11;
            else if (!same_a && !same_b) ++n00;
            else if (same_a) ++n10;
            else ++n01;
        }
    double total = n11 + n00 + n10 + n01;
    double expected = (n11 + n10) * (n11 + n01) / total;
    double max_ri = 0.5 * ((n11 + n10) + (n11 + n01));
    if (max_ri == expected) return 1.0;
    return (n11 - expected) / (max_ri - expected);
}

FeatureSet features_1d(std::vector<double> vals) {
    FeatureSet fs;
    for (double v : vals) fs.features.push_back({v});
    return fs;
}

}  // namespace

TEST_CASE("ssim of an image with itself is 1, constants too") {
    Rng rng(1);
    auto x = random_image(rng, 32, 32);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-9));
    auto c1 = Tensor::full({1, 16, 16}, 0.42f);
    auto c2 = Tensor::full({1, 16, 16}, 0.42f);
    CHECK(ssim(c1, c2) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ssim matches the per-window oracle on random pairs") {
    Rng rng(2);
    for (int trial = 0; trial < 3; ++trial) {
        auto x = random_image(rng, 64, 64);
        auto y = random_image(rng, 64, 64);
        CHECK(std::abs(ssim(x, y) - ssim_oracle(x, y)) < 1e-6);
    }
}

TEST_CASE("ssim is symmetric and bounded") {
    Rng rng(3);
    auto x = random_image(rng, 32, 48);
    auto y = random_image(rng, 32, 48);
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));
    CHECK(ssim(x, y) <= 1.0);
    CHECK_THROWS_AS(ssim(x, random_image(rng, 48, 32)), DimError);
}

TEST_CASE("psnr basics") {
    auto x = Tensor::full({1, 16, 16}, 0.5f);
    CHECK(std::isinf(psnr(x, x)));
    // MSE = 0.01 -> 20 dB (up to float32 pixel quantization).
    auto y = Tensor::full({1, 16, 16}, 0.6f);
    CHECK(psnr(x, y) == doctest::Approx(20.0).epsilon(1e-6));
    Rng rng(4);
    auto a = random_image(rng, 20, 20);
    auto b = random_image(rng, 20, 20);
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        mse += d * d;
    }
    mse /= a.numel();
    CHECK(std::abs(psnr(a, b) - 10.0 * std::log10(1.0 / mse)) < 1e-9);
}

TEST_CASE("rmse basics") {
    auto x = Tensor::from({1, 1, 2}, {0.0f, 0.0f});
    auto y = Tensor::from({1, 1, 2}, {1.0f, 1.0f});
    CHECK(rmse(x, x) == 0.0);
    CHECK(rmse(x, y) == doctest::Approx(1.0));
    Rng rng(5);
    auto a = random_image(rng, 13, 9);
    auto b = random_image(rng, 13, 9);
    double acc = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = a.data()[i] - b.data()[i];
        acc += d * d;
    }
    CHECK(std::abs(rmse(a, b) - std::sqrt(acc / a.numel())) < 1e-9);
}

TEST_CASE("ari trivial and oracle cases") {
    CHECK(ari({0, 0, 1, 1}, {5, 5, 7, 7}) == doctest::Approx(1.0));
    // One predicted cluster against several true clusters: expected-RI cancellation.
    CHECK(ari({0, 0, 1, 1, 2, 2}, {0, 0, 0, 0, 0, 0}) == doctest::Approx(0.0));
    std::vector<int64_t> t{0, 0, 1, 1}, p{0, 1, 0, 1};
    CHECK(std::abs(ari(t, p) - ari_oracle(t, p)) < 1e-9);
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<int64_t> a, b;
        for (int i = 0; i < 20; ++i) {
            a.push_back(rng.uniform_int(0, 3));
            b.push_back(rng.uniform_int(0, 4));
        }
        CHECK(std::abs(ari(a, b) - ari_oracle(a, b)) < 1e-9);
    }
    CHECK_THROWS_AS(ari({0, 1}, {0, 1, 2}), DimError);
}

TEST_CASE("ari is invariant to label permutations") {
    std::vector<int64_t> t{0, 0, 1, 1, 2, 2, 2};
    std::vector<int64_t> p{1, 1, 0, 0, 2, 2, 0};
    std::vector<int64_t> p_renamed{7, 7, 9, 9, 3, 3, 9};
    CHECK(ari(t, p) == doctest::Approx(ari(t, p_renamed)).epsilon(1e-12));
}

TEST_CASE("feature extraction is seeded and discriminative") {
    Rng rng(7);
    std::vector<Tensor> imgs{random_image(rng, 64, 64), random_image(rng, 64, 64)};
    auto f1 = extract_features(imgs, 99);
    auto f2 = extract_features(imgs, 99);
    REQUIRE(f1.features.size() == 2);
    CHECK(f1.features[0].size() == 64);
    for (std::size_t j = 0; j < 64; ++j)
        CHECK(f1.features[0][j] == f2.features[0][j]);
    double diff = 0.0;
    for (std::size_t j = 0; j < 64; ++j)
        diff += std::abs(f1.features[0][j] - f1.features[1][j]);
    CHECK(diff > 0.0);
}

TEST_CASE("fid scalar cases") {
    // Sets built to have exact sample mean/variance.
    double r = std::sqrt(0.5);
    auto self = features_1d({-r, r});
    CHECK(std::abs(fid(self, self)) < 1e-6);
    auto shifted = features_1d({1.0 - r, 1.0 + r});
    CHECK(fid(self, shifted) == doctest::Approx(1.0).epsilon(1e-3));
    auto wide = features_1d({-std::sqrt(2.0), std::sqrt(2.0)});
    // Equal means, variances 1 vs 4: Tr(1 + 4 - 2*2) = 1.
    CHECK(fid(self, wide) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK_THROWS_AS(fid(features_1d({0.0}), self), DimError);
}

TEST_CASE("fid of a feature set against itself is 0 and non-negative in general") {
    Rng rng(8);
    std::vector<Tensor> imgs;
    for (int i = 0; i < 8; ++i) imgs.push_back(random_image(rng, 32, 32));
    auto fs = extract_features(imgs, 1);
    CHECK(std::abs(fid(fs, fs)) < 1e-6);
    std::vector<Tensor> other;
    for (int i = 0; i < 8; ++i) other.push_back(random_image(rng, 32, 32));
    auto fs2 = extract_features(other, 1);
    CHECK(fid(fs, fs2) >= 0.0);
}

TEST_CASE("kid trivial and oracle cases") {
    auto a = features_1d({0.0, 1.0});
    auto b = features_1d({0.0, 1.0});
    CHECK(std::abs(kid(a, b)) < 1e-9);
    auto c = features_1d({2.0, 3.0});
    CHECK(std::abs(kid(a, c) - kid_oracle(a, c)) < 1e-9);
    Rng rng(9);
    std::vector<Tensor> xs, ys;
    for (int i = 0; i < 5; ++i) xs.push_back(random_image(rng, 32, 32));
    for (int i = 0; i < 7; ++i) ys.push_back(random_image(rng, 32, 32));
    auto fx = extract_features(xs, 3);
    auto fy = extract_features(ys, 3);
    CHECK(std::abs(kid(fx, fy) - kid_oracle(fx, fy)) < 1e-9);
    CHECK_THROWS_AS(kid(features_1d({1.0}), a), DimError);
}

TEST_CASE("kid stays near zero for identically distributed sets") {
    Rng rng(10);
    double acc = 0.0;
    int trials = 20;
    for (int t = 0; t < trials; ++t) {
        FeatureSet a, b;
        for (int i = 0; i < 50; ++i) {
            a.features.push_back({rng.normal(), rng.normal()});
            b.features.push_back({rng.normal(), rng.normal()});
        }
        acc += kid(a, b);
    }
    CHECK(std::abs(acc / trials) < 0.05);
}

TEST_CASE("kmeans recovers well-separated clusters deterministically") {
    Rng rng(11);
    std::vector<std::vector<double>> pts;
    std::vector<int64_t> truth;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 10; ++i) {
            pts.push_back({c * 10.0 + rng.normal() * 0.1, c * -5.0 + rng.normal() * 0.1});
            truth.push_back(c);
        }
    auto a1 = kmeans_cluster(pts, 3, 42);
    auto a2 = kmeans_cluster(pts, 3, 42);
    CHECK(a1 == a2);
    CHECK(ari(truth, a1) == doctest::Approx(1.0));
}

TEST_CASE("identity_ari is 1 for perfectly separated embeddings") {
    std::vector<Tensor> imgs;
    std::vector<int64_t> ids;
    for (int s = 0; s < 4; ++s)
        for (int i = 0; i < 3; ++i) {
            imgs.push_back(Tensor::full({1, 8, 8}, static_cast<float>(s)));
            ids.push_back(s);
        }
    // Oracle embedder: one-hot by mean intensity.
    Embedder embed = [](const Tensor& img) {
        double mean = 0.0;
        for (int64_t i = 0; i < img.numel(); ++i) mean += img.data()[i];
        mean /= img.numel();
        std::vector<double> e(4, 0.0);
        e[static_cast<std::size_t>(std::lround(mean))] = 1.0;
        return e;
    };
    CHECK(identity_ari(imgs, ids, embed, 4, 7) == doctest::Approx(1.0));
    CHECK(identity_ari(imgs, ids, embed, 4, 7) ==
          doctest::Approx(identity_ari(imgs, ids, embed, 4, 7)));
}

TEST_CASE("identity_ari is near zero for random embeddings") {
    Rng rng(12);
    std::vector<Tensor> imgs;
    std::vector<int64_t> ids;
    for (int s = 0; s < 8; ++s)
        for (int i = 0; i < 6; ++i) {
            imgs.push_back(Tensor::zeros({1, 4, 4}));
            ids.push_back(s);
        }
    double acc = 0.0;
    int trials = 5;
    for (int t = 0; t < trials; ++t) {
        Rng local(splitmix64(1000 + static_cast<uint64_t>(t)));
        Embedder embed = [&local](const Tensor&) {
            std::vector<double> e(16);
            for (auto& v : e) v = local.normal();
            return e;
        };
        acc += identity_ari(imgs, ids, embed, 8, static_cast<uint64_t>(t));
    }
    CHECK(std::abs(acc / trials) < 0.1);
    Embedder trivial = [](const Tensor&) { return std::vector<double>{0.0}; };
    std::vector<Tensor> few(imgs.begin(), imgs.begin() + 4);
    std::vector<int64_t> few_ids(ids.begin(), ids.begin() + 4);
    CHECK_THROWS_AS(identity_ari(few, few_ids, trivial, 8, 0), ContractError);
}

TEST_CASE("age bins cover the profile ranges with the published labels") {
    auto bins = age_bins(Profile::Elderly);
    REQUIRE(bins.size() == 6);
    CHECK(bins[0].label == "40-50");
    CHECK(bins[5].label == "91-100");
    CHECK(bin_index(bins, 40.0) == 0);
    CHECK(bin_index(bins, 70.0) == 2);
    CHECK(bin_index(bins, 71.0) == 3);
    CHECK(bin_index(bins, 100.0) == 5);
    auto inf_bins = age_bins(Profile::Infant);
    REQUIRE(inf_bins.size() == 6);
    CHECK(bin_index(inf_bins, 3.0) == 0);
    CHECK(bin_index(inf_bins, 36.0) == 5);
}
