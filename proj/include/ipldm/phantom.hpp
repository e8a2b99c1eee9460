#pragma once

#include <utility>

#include "ipldm/tensor.hpp"

namespace ipldm {

struct SamplingError : ContractError {
    explicit SamplingError(const std::string& msg) : ContractError(msg) {}
};

enum class Profile { Elderly, Infant };

struct ProfileRange {
    double age_min, age_max;
};

// Elderly ages are years, infant ages are months.
inline ProfileRange profile_range(Profile p) {
    return p == Profile::Elderly ? ProfileRange{40.0, 100.0} : ProfileRange{3.0, 36.0};
}

inline const char* profile_name(Profile p) {
    return p == Profile::Elderly ? "elderly" : "infant";
}

Profile profile_from_name(const std::string& name);

// Age-bin width used by the re-balanced triplet sampler.
inline double rebalance_bin_width(Profile p) { return p == Profile::Elderly ? 5.0 : 3.0; }

struct IdentitySpec {
    int64_t subject_id = 0;
    uint64_t geometry_seed = 0;
    double skull_eccentricity = 1.0;  // [0.7, 1.0]
    double fold_phase = 0.0;          // [0, 2*pi)
    double ventricle_base = 0.05;     // [0.05, 0.12], fraction of image width
};

struct PhantomRecord {
    Tensor image;  // [1,H,W] in [0,1]
    int64_t subject_id = 0;
    double age = 0.0;
};

struct Dataset {
    std::vector<PhantomRecord> records;
    Profile profile = Profile::Elderly;
    int resolution = 64;
};

struct TripletSample {
    PhantomRecord anchor, positive, negative;
};

// Deterministic identity parameters derived from a per-dataset master seed.
IdentitySpec make_identity(int64_t subject_id, uint64_t master_seed);

// Pure function of (spec, age, resolution): elliptical skull, seeded fold
// texture, central ventricle whose area grows with age (elderly) or whose
// tissue contrast sharpens with age (infant).
PhantomRecord render_phantom(const IdentitySpec& spec, double age, int resolution,
                             Profile profile);

Dataset generate_dataset(int n_subjects, std::pair<int, int> scans_per_subject_range,
                         Profile profile, int resolution, uint64_t seed);

// Same subject identities as generate_dataset(seed) but a fresh scan stream;
// used for held-out evaluation sets.
Dataset generate_holdout(int n_subjects, std::pair<int, int> scans_per_subject_range,
                         Profile profile, int resolution, uint64_t seed);

TripletSample sample_triplet(const Dataset& ds, Rng& rng);

// (source, target): same subject, distinct ages, direction flipped with p=1/2.
std::pair<PhantomRecord, PhantomRecord> sample_pair(const Dataset& ds, Rng& rng);

// Count of pixels below intensity 0.2 inside the central disk; the
// measurable proxy for ventricle area.
int64_t ventricle_pixel_count(const Tensor& image);

}  // namespace ipldm
