#pragma once

#include <functional>
#include <string>

#include "ipldm/phantom.hpp"
#include "ipldm/tensor.hpp"

namespace ipldm {

// Per-pair image metrics over [1,H,W] tensors in [0,1].
double ssim(const Tensor& x, const Tensor& y);
double psnr(const Tensor& x, const Tensor& y);  // +infinity for identical images
double rmse(const Tensor& x, const Tensor& y);

// Chance-adjusted Rand index between two labelings.
double ari(const std::vector<int64_t>& labels_true, const std::vector<int64_t>& labels_pred);

// Features for FID/KID from a fixed seeded random conv net (p = 64).
// Internally comparable across runs, NOT comparable to Inception-based
// numbers.
struct FeatureSet {
    std::vector<std::vector<double>> features;  // [N][p]
    uint64_t extractor_seed = 0;
};

FeatureSet extract_features(const std::vector<Tensor>& images, uint64_t seed);

// ||mu_r - mu_g||^2 + Tr(Sr + Sg - 2 sqrt(Sr Sg)); symmetric-eigendecomposition
// matrix square root with negative eigenvalues clamped at 0.
double fid(const FeatureSet& real, const FeatureSet& gen);

// Unbiased polynomial-kernel MMD^2 with k(x,y) = (x.y/p + 1)^3.
double kid(const FeatureSet& x, const FeatureSet& y);

// Seeded k-means++ with a fixed iteration count.
std::vector<int64_t> kmeans_cluster(const std::vector<std::vector<double>>& points, int k,
                                    uint64_t seed, int iters = 50);

using Embedder = std::function<std::vector<double>(const Tensor&)>;

// Embeds the generated images, k-means clusters them and scores the clusters
// against the true subject ids.
double identity_ari(const std::vector<Tensor>& images,
                    const std::vector<int64_t>& subject_ids, const Embedder& embed, int k,
                    uint64_t seed);

struct AgeBin {
    double lo, hi;
    std::string label;
};

// Six equal bins over the profile range; for the elderly profile these are
// the decade columns 40-50 ... 91-100.
std::vector<AgeBin> age_bins(Profile profile);
int bin_index(const std::vector<AgeBin>& bins, double age);

}  // namespace ipldm
