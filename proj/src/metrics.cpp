#include "ipldm/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "ipldm/conv.hpp"
#include "ipldm/ops.hpp"

namespace ipldm {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

void require_image_pair(const Tensor& x, const Tensor& y, const char* what) {
    if (x.shape() != y.shape())
        throw DimError(std::string(what) + ": shape mismatch " + shape_str(x.shape()) +
                       " vs " + shape_str(y.shape()));
    if (x.ndim() != 3 || x.dim(0) != 1)
        throw DimError(std::string(what) + ": expected [1,H,W] images");
}

// Separable valid-mode Gaussian filter; output is (H-10) x (W-10).
std::vector<double> gaussian_filter_valid(const std::vector<double>& img, int64_t h,
                                          int64_t w, const std::vector<double>& kernel) {
    int64_t k = static_cast<int64_t>(kernel.size());
    int64_t wo = w - k + 1, ho = h - k + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h * wo));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < wo; ++x) {
            double acc = 0.0;
            for (int64_t i = 0; i < k; ++i)
                acc += kernel[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y * w + x + i)];
            tmp[static_cast<std::size_t>(y * wo + x)] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(ho * wo));
    for (int64_t y = 0; y < ho; ++y)
        for (int64_t x = 0; x < wo; ++x) {
            double acc = 0.0;
            for (int64_t i = 0; i < k; ++i)
                acc += kernel[static_cast<std::size_t>(i)] *
                       tmp[static_cast<std::size_t>((y + i) * wo + x)];
            out[static_cast<std::size_t>(y * wo + x)] = acc;
        }
    return out;
}

}  // namespace

double ssim(const Tensor& x, const Tensor& y) {
    require_image_pair(x, y, "ssim");
    int64_t h = x.dim(1), w = x.dim(2);
    if (h < kSsimWindow || w < kSsimWindow)
        throw DimError("ssim: images smaller than the 11x11 window");

    std::vector<double> kernel(kSsimWindow);
    double ksum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        double d = i - (kSsimWindow - 1) / 2.0;
        kernel[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        ksum += kernel[static_cast<std::size_t>(i)];
    }
    for (auto& v : kernel) v /= ksum;

    std::size_t n = static_cast<std::size_t>(h * w);
    std::vector<double> xs(n), ys(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = x.data()[i];
        ys[i] = y.data()[i];
        xx[i] = xs[i] * xs[i];
        yy[i] = ys[i] * ys[i];
        xy[i] = xs[i] * ys[i];
    }
    auto mu_x = gaussian_filter_valid(xs, h, w, kernel);
    auto mu_y = gaussian_filter_valid(ys, h, w, kernel);
    auto e_xx = gaussian_filter_valid(xx, h, w, kernel);
    auto e_yy = gaussian_filter_valid(yy, h, w, kernel);
    auto e_xy = gaussian_filter_valid(xy, h, w, kernel);

    double acc = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
        double vx = e_xx[i] - mu_x[i] * mu_x[i];
        double vy = e_yy[i] - mu_y[i] * mu_y[i];
        double cov = e_xy[i] - mu_x[i] * mu_y[i];
        double num = (2.0 * mu_x[i] * mu_y[i] + kC1) * (2.0 * cov + kC2);
        double den = (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kC1) * (vx + vy + kC2);
        acc += num / den;
    }
    return acc / static_cast<double>(mu_x.size());
}

double psnr(const Tensor& x, const Tensor& y) {
    require_image_pair(x, y, "psnr");
    double mse = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        double d = static_cast<double>(x.data()[i]) - static_cast<double>(y.data()[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(x.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double rmse(const Tensor& x, const Tensor& y) {
    require_image_pair(x, y, "rmse");
    double acc = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        double d = static_cast<double>(x.data()[i]) - static_cast<double>(y.data()[i]);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(x.numel()));
}

double ari(const std::vector<int64_t>& labels_true, const std::vector<int64_t>& labels_pred) {
    if (labels_true.size() != labels_pred.size())
        throw DimError("ari: label lists differ in length");
    if (labels_true.size() < 2) throw DimError("ari: need at least 2 items");
    std::map<int64_t, int64_t> tmap, pmap;
    for (int64_t l : labels_true) tmap.emplace(l, static_cast<int64_t>(tmap.size()));
    for (int64_t l : labels_pred) pmap.emplace(l, static_cast<int64_t>(pmap.size()));
    int64_t rt = static_cast<int64_t>(tmap.size()), rp = static_cast<int64_t>(pmap.size());
    std::vector<std::vector<int64_t>> cont(static_cast<std::size_t>(rt),
                                           std::vector<int64_t>(static_cast<std::size_t>(rp), 0));
    for (std::size_t i = 0; i < labels_true.size(); ++i)
        ++cont[static_cast<std::size_t>(tmap[labels_true[i]])]
             [static_cast<std::size_t>(pmap[labels_pred[i]])];

    auto comb2 = [](int64_t v) { return static_cast<double>(v) * (v - 1) / 2.0; };
    double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (int64_t i = 0; i < rt; ++i) {
        int64_t row = 0;
        for (int64_t j = 0; j < rp; ++j) {
            sum_ij += comb2(cont[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
            row += cont[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
        sum_a += comb2(row);
    }
    for (int64_t j = 0; j < rp; ++j) {
        int64_t col = 0;
        for (int64_t i = 0; i < rt; ++i)
            col += cont[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        sum_b += comb2(col);
    }
    double total = comb2(static_cast<int64_t>(labels_true.size()));
    double expected = sum_a * sum_b / total;
    double max_ri = 0.5 * (sum_a + sum_b);
    if (max_ri == expected) return 1.0;  // both partitions trivial
    return (sum_ij - expected) / (max_ri - expected);
}

FeatureSet extract_features(const std::vector<Tensor>& images, uint64_t seed) {
    if (images.empty()) throw ContractError("extract_features: empty image list");
    NoGrad ng;
    Rng rng(splitmix64(seed ^ 0xfea7ULL));
    const int channels[5] = {1, 8, 16, 32, 64};
    std::vector<Tensor> kernels, biases;
    for (int l = 0; l < 4; ++l) {
        float std_dev = std::sqrt(2.0f / static_cast<float>(channels[l] * 9));
        kernels.push_back(Tensor::randn({channels[l + 1], channels[l], 3, 3}, rng, std_dev));
        biases.push_back(Tensor::zeros({channels[l + 1]}));
    }
    FeatureSet fs;
    fs.extractor_seed = seed;
    const Shape& s0 = images[0].shape();
    for (const auto& img : images) {
        if (img.shape() != s0)
            throw DimError("extract_features: images must share one shape");
        Tensor h = reshape(img, {1, 1, img.dim(1), img.dim(2)});
        for (int l = 0; l < 4; ++l) {
            h = conv2d(h, kernels[static_cast<std::size_t>(l)],
                       biases[static_cast<std::size_t>(l)], 2, 1);
            if (l < 3) h = relu(h);
        }
        // Global average pool to p = 64.
        int64_t c = h.dim(1), plane = h.dim(2) * h.dim(3);
        std::vector<double> feat(static_cast<std::size_t>(c));
        for (int64_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (int64_t p = 0; p < plane; ++p) acc += h.data()[ch * plane + p];
            feat[static_cast<std::size_t>(ch)] = acc / static_cast<double>(plane);
        }
        fs.features.push_back(std::move(feat));
    }
    return fs;
}

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

void moments(const FeatureSet& fs, Vec& mu, Mat& sigma) {
    int64_t n = static_cast<int64_t>(fs.features.size());
    int64_t p = static_cast<int64_t>(fs.features[0].size());
    Mat x(n, p);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < p; ++j)
            x(i, j) = fs.features[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    mu = x.colwise().mean();
    Mat centered = x.rowwise() - mu.transpose();
    sigma = centered.transpose() * centered / static_cast<double>(n - 1);
}

// Symmetric PSD square root with negative eigenvalues clamped to 0.
Mat sqrtm_psd(const Mat& a) {
    Mat sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
    Vec vals = eig.eigenvalues();
    for (int64_t i = 0; i < vals.size(); ++i) vals(i) = vals(i) > 0.0 ? std::sqrt(vals(i)) : 0.0;
    return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double fid(const FeatureSet& real, const FeatureSet& gen) {
    if (real.features.size() < 2 || gen.features.size() < 2)
        throw DimError("fid requires at least 2 samples per set");
    if (real.features[0].size() != gen.features[0].size())
        throw DimError("fid: feature dimensions differ");
    Vec mu_r, mu_g;
    Mat s_r, s_g;
    moments(real, mu_r, s_r);
    moments(gen, mu_g, s_g);
    Mat root_r = sqrtm_psd(s_r);
    Mat inner = root_r * s_g * root_r;
    double tr_sqrt = sqrtm_psd(inner).trace();
    double mean_term = (mu_r - mu_g).squaredNorm();
    return mean_term + s_r.trace() + s_g.trace() - 2.0 * tr_sqrt;
}

double kid(const FeatureSet& xs, const FeatureSet& ys) {
    std::size_t n = xs.features.size(), m = ys.features.size();
    if (n < 2 || m < 2) throw DimError("kid requires at least 2 samples per set");
    std::size_t p = xs.features[0].size();
    if (p != ys.features[0].size()) throw DimError("kid: feature dimensions differ");
    auto kernel = [p](const std::vector<double>& a, const std::vector<double>& b) {
        double dot = 0.0;
        for (std::size_t i = 0; i < p; ++i) dot += a[i] * b[i];
        double base = dot / static_cast<double>(p) + 1.0;
        return base * base * base;
    };
    // Diagonal terms are excluded from every sum; with equally sized sets the
    // index-matched cross pairs drop too, so identical sets cancel exactly.
    double kxx = 0.0, kyy = 0.0, kxy = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) kxx += kernel(xs.features[i], xs.features[j]);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (i != j) kyy += kernel(ys.features[i], ys.features[j]);
    bool paired = n == m;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            if (paired && i == j) continue;
            kxy += kernel(xs.features[i], ys.features[j]);
        }
    double nn = static_cast<double>(n), mm = static_cast<double>(m);
    double cross_count = paired ? nn * (nn - 1.0) : nn * mm;
    return kxx / (nn * (nn - 1.0)) + kyy / (mm * (mm - 1.0)) - 2.0 * kxy / cross_count;
}

std::vector<int64_t> kmeans_cluster(const std::vector<std::vector<double>>& points, int k,
                                    uint64_t seed, int iters) {
    if (k < 1) throw DomainError("kmeans: k must be >= 1");
    if (static_cast<int>(points.size()) < k)
        throw ContractError("kmeans: fewer points than clusters");
    std::size_t n = points.size(), p = points[0].size();
    Rng rng(splitmix64(seed ^ 0x6b6dULL));

    auto dist2 = [p](const std::vector<double>& a, const std::vector<double>& b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < p; ++i) {
            double d = a[i] - b[i];
            acc += d * d;
        }
        return acc;
    };

    // k-means++ seeding.
    std::vector<std::vector<double>> centers;
    centers.push_back(points[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int64_t>(n) - 1))]);
    std::vector<double> d2(n);
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = dist2(points[i], centers[0]);
            for (std::size_t c = 1; c < centers.size(); ++c)
                best = std::min(best, dist2(points[i], centers[c]));
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            // All remaining points coincide with centers; reuse the first point.
            centers.push_back(points[0]);
            continue;
        }
        double r = rng.uniform() * total;
        double acc = 0.0;
        std::size_t chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            acc += d2[i];
            if (r < acc) {
                chosen = i;
                break;
            }
        }
        centers.push_back(points[chosen]);
    }

    std::vector<int64_t> assign(n, 0);
    for (int it = 0; it < iters; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int64_t best_c = 0;
            double best_d = dist2(points[i], centers[0]);
            for (int c = 1; c < k; ++c) {
                double d = dist2(points[i], centers[static_cast<std::size_t>(c)]);
                if (d < best_d) {
                    best_d = d;
                    best_c = c;
                }
            }
            if (assign[i] != best_c) changed = true;
            assign[i] = best_c;
        }
        for (int c = 0; c < k; ++c) {
            std::vector<double> mean(p, 0.0);
            int64_t count = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (assign[i] == c) {
                    for (std::size_t j = 0; j < p; ++j) mean[j] += points[i][j];
                    ++count;
                }
            if (count > 0) {
                for (std::size_t j = 0; j < p; ++j) mean[j] /= static_cast<double>(count);
                centers[static_cast<std::size_t>(c)] = mean;
            }
        }
        if (!changed) break;
    }
    return assign;
}

double identity_ari(const std::vector<Tensor>& images,
                    const std::vector<int64_t>& subject_ids, const Embedder& embed, int k,
                    uint64_t seed) {
    if (images.size() != subject_ids.size())
        throw DimError("identity_ari: image/id count mismatch");
    if (static_cast<int>(images.size()) < k)
        throw ContractError("identity_ari: fewer images than subjects");
    std::vector<std::vector<double>> points;
    points.reserve(images.size());
    for (const auto& img : images) points.push_back(embed(img));
    auto clusters = kmeans_cluster(points, k, seed);
    return ari(subject_ids, clusters);
}

std::vector<AgeBin> age_bins(Profile profile) {
    ProfileRange range = profile_range(profile);
    std::vector<AgeBin> bins;
    double width = (range.age_max - range.age_min) / 6.0;
    for (int i = 0; i < 6; ++i) {
        AgeBin b;
        b.lo = range.age_min + width * i;
        b.hi = range.age_min + width * (i + 1);
        if (profile == Profile::Elderly) {
            // Decade labels per the usual reporting convention.
            static const char* labels[6] = {"40-50", "51-60", "61-70",
                                            "71-80", "81-90", "91-100"};
            b.label = labels[i];
        } else {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.0f-%.0f", b.lo, b.hi);
            b.label = buf;
        }
        bins.push_back(b);
    }
    return bins;
}

int bin_index(const std::vector<AgeBin>& bins, double age) {
    for (std::size_t i = 0; i < bins.size(); ++i)
        if (age <= bins[i].hi || i == bins.size() - 1) return static_cast<int>(i);
    return static_cast<int>(bins.size()) - 1;
}

}  // namespace ipldm
