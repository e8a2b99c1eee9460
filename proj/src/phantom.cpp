#include "ipldm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace ipldm {

Profile profile_from_name(const std::string& name) {
    if (name == "elderly") return Profile::Elderly;
    if (name == "infant") return Profile::Infant;
    throw DomainError("unknown profile '" + name + "' (expected elderly|infant)");
}

IdentitySpec make_identity(int64_t subject_id, uint64_t master_seed) {
    IdentitySpec spec;
    spec.subject_id = subject_id;
    spec.geometry_seed =
        splitmix64(master_seed ^ splitmix64(0x1d377157ULL + static_cast<uint64_t>(subject_id)));
    Rng rng(spec.geometry_seed);
    spec.skull_eccentricity = rng.uniform(0.7, 1.0);
    spec.fold_phase = rng.uniform(0.0, 2.0 * M_PI);
    spec.ventricle_base = rng.uniform(0.05, 0.12);
    return spec;
}

namespace {

constexpr double kSkullAxis = 0.92;
constexpr double kRimInner = 0.93;
constexpr double kTissueBase = 0.55;
constexpr double kVentIntensity = 0.08;
constexpr double kCentralDisk = 0.55;  // oracle region, normalized radius

struct FoldComponent {
    double freq, cx, cy, phase, amp;
};

std::vector<FoldComponent> fold_texture(const IdentitySpec& spec) {
    Rng rng(splitmix64(spec.geometry_seed ^ 0xf01dULL));
    std::vector<FoldComponent> comps(4);
    double amp_total = 0.18;
    for (auto& c : comps) {
        c.freq = rng.uniform(4.0, 10.0) * M_PI;
        double theta = rng.uniform(0.0, M_PI);
        c.cx = std::cos(theta);
        c.cy = std::sin(theta);
        c.phase = rng.uniform(0.0, 2.0 * M_PI) + spec.fold_phase;
        c.amp = amp_total / static_cast<double>(comps.size());
    }
    return comps;
}

}  // namespace

PhantomRecord render_phantom(const IdentitySpec& spec, double age, int resolution,
                             Profile profile) {
    ProfileRange range = profile_range(profile);
    if (age < range.age_min || age > range.age_max)
        throw DomainError("age " + std::to_string(age) + " outside " +
                          profile_name(profile) + " range [" + std::to_string(range.age_min) +
                          ", " + std::to_string(range.age_max) + "]");
    if (resolution != 32 && resolution != 64 && resolution != 128)
        throw DomainError("resolution must be one of {32, 64, 128}");

    double tau = (age - range.age_min) / (range.age_max - range.age_min);
    // Elderly: ventricle area grows linearly from base to 3x base.
    // Infant: fixed small ventricle; fold contrast sharpens with age.
    double vent_radius, amp_scale;
    if (profile == Profile::Elderly) {
        vent_radius = 2.0 * spec.ventricle_base * std::sqrt(1.0 + 2.0 * tau);
        amp_scale = 1.0;
    } else {
        vent_radius = 2.0 * spec.ventricle_base * 0.7;
        amp_scale = 0.35 + 0.65 * tau;
    }

    auto comps = fold_texture(spec);
    double a = kSkullAxis;
    double b = kSkullAxis * spec.skull_eccentricity;

    int r = resolution;
    Tensor img = Tensor::zeros({1, r, r});
    float* px = img.data();
    for (int y = 0; y < r; ++y) {
        double ny = (y + 0.5) / r * 2.0 - 1.0;
        for (int x = 0; x < r; ++x) {
            double nx = (x + 0.5) / r * 2.0 - 1.0;
            double rell = std::sqrt((nx / a) * (nx / a) + (ny / b) * (ny / b));
            double v = 0.0;
            if (rell <= 1.0) {
                if (rell > kRimInner) {
                    v = 0.85;
                } else {
                    double tex = 0.0;
                    for (const auto& c : comps)
                        tex += c.amp * std::sin(c.freq * (nx * c.cx + ny * c.cy) + c.phase);
                    v = kTissueBase + amp_scale * tex;
                    // Soft-edged ventricle (wider along x).
                    double vr = std::sqrt((nx / (1.25 * vent_radius)) * (nx / (1.25 * vent_radius)) +
                                          (ny / (0.8 * vent_radius)) * (ny / (0.8 * vent_radius)));
                    double blend = std::clamp((1.05 - vr) / 0.10, 0.0, 1.0);
                    v = v * (1.0 - blend) + kVentIntensity * blend;
                }
            }
            px[y * r + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return PhantomRecord{img, spec.subject_id, age};
}

int64_t ventricle_pixel_count(const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 1)
        throw DimError("ventricle_pixel_count expects [1,H,W]");
    int64_t h = image.dim(1), w = image.dim(2);
    int64_t count = 0;
    for (int64_t y = 0; y < h; ++y) {
        double ny = (y + 0.5) / static_cast<double>(h) * 2.0 - 1.0;
        for (int64_t x = 0; x < w; ++x) {
            double nx = (x + 0.5) / static_cast<double>(w) * 2.0 - 1.0;
            if (nx * nx + ny * ny > kCentralDisk * kCentralDisk) continue;
            if (image.data()[y * w + x] < 0.2f) ++count;
        }
    }
    return count;
}

namespace {

double draw_age(Profile profile, Rng& rng) {
    ProfileRange range = profile_range(profile);
    if (profile == Profile::Elderly) {
        double age = rng.normal(70.0, 12.0);
        return std::clamp(age, range.age_min, range.age_max);
    }
    // Three clusters near 6, 12 and 24 months.
    double u = rng.uniform();
    double age;
    if (u < 0.35)
        age = rng.normal(6.0, 1.2);
    else if (u < 0.70)
        age = rng.normal(12.0, 1.8);
    else
        age = rng.normal(24.0, 2.6);
    return std::clamp(age, range.age_min, range.age_max);
}

Dataset generate_with_streams(int n_subjects, std::pair<int, int> scans_range,
                              Profile profile, int resolution, uint64_t seed,
                              uint64_t scan_stream) {
    if (n_subjects < 2) throw DomainError("generate_dataset requires n_subjects >= 2");
    if (scans_range.first < 1 || scans_range.second < scans_range.first)
        throw DomainError("invalid scans_per_subject range");

    Dataset ds;
    ds.profile = profile;
    ds.resolution = resolution;
    double min_gap = profile == Profile::Elderly ? 0.5 : 0.25;
    for (int s = 0; s < n_subjects; ++s) {
        IdentitySpec spec = make_identity(s, seed);
        Rng rng(splitmix64(spec.geometry_seed ^ splitmix64(0xa9e5ULL + scan_stream)));
        int n_scans = static_cast<int>(rng.uniform_int(scans_range.first, scans_range.second));
        std::vector<double> ages;
        while (static_cast<int>(ages.size()) < n_scans) {
            double age = draw_age(profile, rng);
            bool distinct = true;
            for (double other : ages)
                if (std::abs(other - age) < min_gap) distinct = false;
            if (distinct) ages.push_back(age);
        }
        std::sort(ages.begin(), ages.end());
        for (double age : ages) ds.records.push_back(render_phantom(spec, age, resolution, profile));
    }
    return ds;
}

}  // namespace

Dataset generate_dataset(int n_subjects, std::pair<int, int> scans_per_subject_range,
                         Profile profile, int resolution, uint64_t seed) {
    return generate_with_streams(n_subjects, scans_per_subject_range, profile, resolution,
                                 seed, 0);
}

Dataset generate_holdout(int n_subjects, std::pair<int, int> scans_per_subject_range,
                         Profile profile, int resolution, uint64_t seed) {
    return generate_with_streams(n_subjects, scans_per_subject_range, profile, resolution,
                                 seed, 1);
}

namespace {

// Indices of records whose subject has at least two scans.
std::vector<std::size_t> eligible_anchors(const Dataset& ds) {
    std::map<int64_t, int> scan_count;
    for (const auto& r : ds.records) ++scan_count[r.subject_id];
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ds.records.size(); ++i)
        if (scan_count[ds.records[i].subject_id] >= 2) out.push_back(i);
    return out;
}

int age_bin(const Dataset& ds, double age) {
    double width = rebalance_bin_width(ds.profile);
    return static_cast<int>((age - profile_range(ds.profile).age_min) / width);
}

}  // namespace

TripletSample sample_triplet(const Dataset& ds, Rng& rng) {
    auto anchors = eligible_anchors(ds);
    if (anchors.empty())
        throw SamplingError("sample_triplet requires a subject with >= 2 scans");
    bool has_other_subject = false;
    for (const auto& r : ds.records)
        if (r.subject_id != ds.records[anchors[0]].subject_id) has_other_subject = true;
    if (!has_other_subject) throw SamplingError("sample_triplet requires >= 2 subjects");

    // Inverse-frequency weights per age bin re-balance the anchor draw.
    std::map<int, int> bin_counts;
    for (std::size_t idx : anchors) ++bin_counts[age_bin(ds, ds.records[idx].age)];
    std::vector<double> weights(anchors.size());
    for (std::size_t i = 0; i < anchors.size(); ++i)
        weights[i] = 1.0 / bin_counts[age_bin(ds, ds.records[anchors[i]].age)];

    std::size_t a_idx = anchors[rng.weighted_index(weights)];
    const auto& anchor = ds.records[a_idx];

    std::vector<std::size_t> positives, negatives;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        if (i == a_idx) continue;
        if (ds.records[i].subject_id == anchor.subject_id)
            positives.push_back(i);
        else
            negatives.push_back(i);
    }
    const auto& pos = ds.records[positives[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int64_t>(positives.size()) - 1))]];
    const auto& neg = ds.records[negatives[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int64_t>(negatives.size()) - 1))]];
    return TripletSample{anchor, pos, neg};
}

std::pair<PhantomRecord, PhantomRecord> sample_pair(const Dataset& ds, Rng& rng) {
    std::map<int64_t, std::vector<std::size_t>> by_subject;
    for (std::size_t i = 0; i < ds.records.size(); ++i)
        by_subject[ds.records[i].subject_id].push_back(i);
    std::vector<int64_t> eligible;
    for (const auto& [sid, idxs] : by_subject)
        if (idxs.size() >= 2) eligible.push_back(sid);
    if (eligible.empty()) throw SamplingError("sample_pair requires a subject with >= 2 scans");

    int64_t sid = eligible[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int64_t>(eligible.size()) - 1))];
    const auto& idxs = by_subject[sid];
    int64_t i = rng.uniform_int(0, static_cast<int64_t>(idxs.size()) - 1);
    int64_t j = rng.uniform_int(0, static_cast<int64_t>(idxs.size()) - 2);
    if (j >= i) ++j;
    const auto& ra = ds.records[idxs[static_cast<std::size_t>(i)]];
    const auto& rb = ds.records[idxs[static_cast<std::size_t>(j)]];
    // Order young->old, then flip with probability 1/2.
    const auto* young = &ra;
    const auto* old = &rb;
    if (young->age > old->age) std::swap(young, old);
    if (rng.uniform() < 0.5) return {*young, *old};
    return {*old, *young};
}

}  // namespace ipldm
