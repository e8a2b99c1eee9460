#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "ipldm/phantom.hpp"

using namespace ipldm;

TEST_CASE("rendering is a pure function of (spec, age, resolution)") {
    auto spec = make_identity(3, 99);
    auto a = render_phantom(spec, 62.5, 64, Profile::Elderly);
    auto b = render_phantom(spec, 62.5, 64, Profile::Elderly);
    REQUIRE(a.image.numel() == b.image.numel());
    for (int64_t i = 0; i < a.image.numel(); ++i)
        CHECK(a.image.data()[i] == b.image.data()[i]);
}

TEST_CASE("pixel values stay in [0,1] and age range is enforced") {
    auto spec = make_identity(1, 5);
    for (int res : {32, 64, 128}) {
        auto rec = render_phantom(spec, 77.0, res, Profile::Elderly);
        for (int64_t i = 0; i < rec.image.numel(); ++i) {
            CHECK(rec.image.data()[i] >= 0.0f);
            CHECK(rec.image.data()[i] <= 1.0f);
        }
    }
    CHECK_THROWS_AS(render_phantom(spec, 39.0, 64, Profile::Elderly), DomainError);
    CHECK_THROWS_AS(render_phantom(spec, 101.0, 64, Profile::Elderly), DomainError);
    CHECK_THROWS_AS(render_phantom(spec, 2.0, 64, Profile::Infant), DomainError);
    CHECK_THROWS_AS(render_phantom(spec, 70.0, 48, Profile::Elderly), DomainError);
}

TEST_CASE("ventricle pixel count grows strictly with age (elderly)") {
    for (int64_t sid : {0, 4, 9}) {
        auto spec = make_identity(sid, 123);
        int64_t prev = -1;
        for (double age : {45.0, 55.0, 65.0, 75.0, 85.0, 95.0}) {
            auto rec = render_phantom(spec, age, 64, Profile::Elderly);
            int64_t count = ventricle_pixel_count(rec.image);
            CHECK(count > prev);
            prev = count;
        }
    }
}

TEST_CASE("ventricle count at 80 exceeds count at 45") {
    auto spec = make_identity(7, 321);
    auto young = render_phantom(spec, 45.0, 64, Profile::Elderly);
    auto old = render_phantom(spec, 80.0, 64, Profile::Elderly);
    CHECK(ventricle_pixel_count(old.image) > ventricle_pixel_count(young.image));
}

TEST_CASE("different geometry seeds produce visibly different images") {
    auto a = render_phantom(make_identity(0, 1), 70.0, 64, Profile::Elderly);
    auto b = render_phantom(make_identity(1, 1), 70.0, 64, Profile::Elderly);
    double mad = 0.0;
    for (int64_t i = 0; i < a.image.numel(); ++i)
        mad += std::abs(a.image.data()[i] - b.image.data()[i]);
    mad /= static_cast<double>(a.image.numel());
    CHECK(mad > 0.02);
}

TEST_CASE("infant images sharpen with age") {
    auto spec = make_identity(2, 17);
    auto young = render_phantom(spec, 4.0, 64, Profile::Infant);
    auto old = render_phantom(spec, 34.0, 64, Profile::Infant);
    // RMS contrast of the tissue region increases with age.
    auto contrast = [](const Tensor& img) {
        double mu = 0.0, n = 0.0;
        for (int64_t i = 0; i < img.numel(); ++i)
            if (img.data()[i] > 0.25f && img.data()[i] < 0.8f) {
                mu += img.data()[i];
                n += 1.0;
            }
        mu /= n;
        double var = 0.0;
        for (int64_t i = 0; i < img.numel(); ++i)
            if (img.data()[i] > 0.25f && img.data()[i] < 0.8f) {
                double d = img.data()[i] - mu;
                var += d * d;
            }
        return std::sqrt(var / n);
    };
    CHECK(contrast(old.image) > contrast(young.image) * 1.2);
}

TEST_CASE("dataset counting contract and reproducibility") {
    auto ds = generate_dataset(10, {1, 5}, Profile::Elderly, 32, 42);
    CHECK(ds.records.size() >= 10);
    CHECK(ds.records.size() <= 50);
    std::map<int64_t, int> per_subject;
    for (const auto& r : ds.records) ++per_subject[r.subject_id];
    CHECK(per_subject.size() == 10);
    for (const auto& [sid, n] : per_subject) {
        CHECK(n >= 1);
        CHECK(n <= 5);
    }
    auto ds2 = generate_dataset(10, {1, 5}, Profile::Elderly, 32, 42);
    REQUIRE(ds.records.size() == ds2.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        CHECK(ds.records[i].subject_id == ds2.records[i].subject_id);
        CHECK(ds.records[i].age == ds2.records[i].age);
        for (int64_t j = 0; j < ds.records[i].image.numel(); ++j)
            CHECK(ds.records[i].image.data()[j] == ds2.records[i].image.data()[j]);
    }
    CHECK_THROWS_AS(generate_dataset(1, {1, 5}, Profile::Elderly, 32, 42), DomainError);
}

TEST_CASE("per-subject scan ages are distinct") {
    auto ds = generate_dataset(20, {2, 5}, Profile::Elderly, 32, 7);
    std::map<int64_t, std::set<double>> ages;
    std::map<int64_t, int> counts;
    for (const auto& r : ds.records) {
        ages[r.subject_id].insert(r.age);
        ++counts[r.subject_id];
    }
    for (const auto& [sid, n] : counts)
        CHECK(static_cast<int>(ages[sid].size()) == n);
}

TEST_CASE("elderly ages follow a clipped normal centered near 70") {
    auto ds = generate_dataset(500, {1, 1}, Profile::Elderly, 32, 1234);
    double mean = 0.0;
    for (const auto& r : ds.records) {
        CHECK(r.age >= 40.0);
        CHECK(r.age <= 100.0);
        mean += r.age;
    }
    mean /= static_cast<double>(ds.records.size());
    CHECK(mean > 68.0);
    CHECK(mean < 72.0);
}

TEST_CASE("infant ages concentrate in three clusters") {
    auto ds = generate_dataset(500, {1, 1}, Profile::Infant, 32, 99);
    int near6 = 0, near12 = 0, near24 = 0;
    for (const auto& r : ds.records) {
        if (std::abs(r.age - 6.0) <= 3.0) ++near6;
        if (std::abs(r.age - 12.0) <= 3.0) ++near12;
        if (std::abs(r.age - 24.0) <= 4.0) ++near24;
    }
    double n = static_cast<double>(ds.records.size());
    CHECK(near6 / n >= 0.20);
    CHECK(near12 / n >= 0.20);
    CHECK(near24 / n >= 0.20);
}

TEST_CASE("holdout keeps identities but draws fresh ages") {
    auto train = generate_dataset(5, {2, 3}, Profile::Elderly, 32, 11);
    auto hold = generate_holdout(5, {2, 3}, Profile::Elderly, 32, 11);
    std::set<int64_t> train_sids, hold_sids;
    for (const auto& r : train.records) train_sids.insert(r.subject_id);
    for (const auto& r : hold.records) hold_sids.insert(r.subject_id);
    CHECK(train_sids == hold_sids);
    std::set<double> train_ages;
    for (const auto& r : train.records) train_ages.insert(r.age);
    int overlap = 0;
    for (const auto& r : hold.records)
        if (train_ages.count(r.age)) ++overlap;
    CHECK(overlap == 0);
}

TEST_CASE("triplet sampling honors subject constraints") {
    auto ds = generate_dataset(6, {2, 4}, Profile::Elderly, 32, 5);
    Rng rng(77);
    for (int i = 0; i < 200; ++i) {
        auto t = sample_triplet(ds, rng);
        CHECK(t.anchor.subject_id == t.positive.subject_id);
        CHECK(t.anchor.subject_id != t.negative.subject_id);
        // Distinct scans: same subject but never the same record.
        CHECK(t.anchor.age != t.positive.age);
    }
}

TEST_CASE("two subjects with two scans force the triplet layout") {
    Dataset ds;
    ds.profile = Profile::Elderly;
    ds.resolution = 32;
    auto s0 = make_identity(0, 3), s1 = make_identity(1, 3);
    ds.records.push_back(render_phantom(s0, 50.0, 32, Profile::Elderly));
    ds.records.push_back(render_phantom(s0, 60.0, 32, Profile::Elderly));
    ds.records.push_back(render_phantom(s1, 55.0, 32, Profile::Elderly));
    ds.records.push_back(render_phantom(s1, 65.0, 32, Profile::Elderly));
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        auto t = sample_triplet(ds, rng);
        CHECK(t.positive.subject_id == t.anchor.subject_id);
        CHECK(t.negative.subject_id != t.anchor.subject_id);
    }
}

TEST_CASE("triplet sampling fails without a repeat-scan subject") {
    Dataset ds;
    ds.profile = Profile::Elderly;
    ds.resolution = 32;
    ds.records.push_back(render_phantom(make_identity(0, 3), 50.0, 32, Profile::Elderly));
    ds.records.push_back(render_phantom(make_identity(1, 3), 60.0, 32, Profile::Elderly));
    Rng rng(1);
    CHECK_THROWS_AS(sample_triplet(ds, rng), SamplingError);
}

TEST_CASE("age re-balancing flattens a long-tail anchor distribution") {
    // 90% of scans land in one 5-year bin, the rest spread over three bins.
    Dataset ds;
    ds.profile = Profile::Elderly;
    ds.resolution = 32;
    int sid = 0;
    auto add_subject = [&](double age_a, double age_b) {
        auto spec = make_identity(sid++, 9);
        ds.records.push_back(render_phantom(spec, age_a, 32, Profile::Elderly));
        ds.records.push_back(render_phantom(spec, age_b, 32, Profile::Elderly));
    };
    for (int i = 0; i < 27; ++i) add_subject(70.0 + 0.1 * i, 71.0 + 0.1 * i);  // bin 6
    add_subject(45.0, 46.0);                                                   // bin 1
    add_subject(55.0, 56.0);                                                   // bin 3
    add_subject(90.0, 91.0);                                                   // bin 10

    Rng rng(33);
    std::map<int, int> bin_hits;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        auto t = sample_triplet(ds, rng);
        int bin = static_cast<int>((t.anchor.age - 40.0) / 5.0);
        ++bin_hits[bin];
    }
    // Four nonempty bins; each should get ~1/4 of anchors within +-50%.
    REQUIRE(bin_hits.size() == 4);
    for (const auto& [bin, hits] : bin_hits) {
        double freq = static_cast<double>(hits) / draws;
        CHECK(freq > 0.125);
        CHECK(freq < 0.375);
    }
}

TEST_CASE("pair sampling stays intra-subject with balanced direction") {
    auto ds = generate_dataset(8, {2, 3}, Profile::Elderly, 32, 21);
    Rng rng(55);
    int younger_first = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        auto [src, tgt] = sample_pair(ds, rng);
        CHECK(src.subject_id == tgt.subject_id);
        CHECK(src.age != tgt.age);
        if (src.age < tgt.age) ++younger_first;
    }
    double ratio = static_cast<double>(younger_first) / draws;
    CHECK(ratio > 0.45);
    CHECK(ratio < 0.55);
}

TEST_CASE("pair sampling on a two-scan subject yields both directions") {
    Dataset ds;
    ds.profile = Profile::Elderly;
    ds.resolution = 32;
    auto spec = make_identity(0, 3);
    auto other = make_identity(1, 3);
    ds.records.push_back(render_phantom(spec, 50.0, 32, Profile::Elderly));
    ds.records.push_back(render_phantom(spec, 60.0, 32, Profile::Elderly));
    ds.records.push_back(render_phantom(other, 70.0, 32, Profile::Elderly));
    Rng rng(2);
    bool seen_fwd = false, seen_rev = false;
    for (int i = 0; i < 100; ++i) {
        auto [src, tgt] = sample_pair(ds, rng);
        CHECK(src.subject_id == 0);
        if (src.age == 50.0) seen_fwd = true;
        if (src.age == 60.0) seen_rev = true;
    }
    CHECK(seen_fwd);
    CHECK(seen_rev);
}
