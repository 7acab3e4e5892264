#include "support.hpp"

#include "aodip/domain_forge.hpp"
#include "aodip/errors.hpp"

#include <doctest.h>

#include <fstream>
#include <set>

using namespace aodip;
using namespace aodip::test;

namespace {

// Nearest class-centroid classifier fit on one domain.
struct PrototypeOracle {
    std::vector<std::vector<double>> centroids;

    explicit PrototypeOracle(const DomainDataset& fit) : centroids(std::size_t(fit.num_classes)) {
        std::vector<int> counts(std::size_t(fit.num_classes), 0);
        for (auto& c : centroids) c.assign(std::size_t(fit.samples.cols()), 0.0);
        for (Eigen::Index i = 0; i < fit.size(); ++i) {
            const auto y = std::size_t(fit.labels[std::size_t(i)]);
            ++counts[y];
            for (Eigen::Index j = 0; j < fit.samples.cols(); ++j) centroids[y][std::size_t(j)] += fit.samples(i, j);
        }
        for (std::size_t k = 0; k < centroids.size(); ++k) {
            for (double& v : centroids[k]) v /= counts[k];
        }
    }

    double accuracy(const DomainDataset& ds) const {
        int correct = 0;
        for (Eigen::Index i = 0; i < ds.size(); ++i) {
            int best = 0;
            double best_d = 1e300;
            for (std::size_t k = 0; k < centroids.size(); ++k) {
                double d = 0.0;
                for (Eigen::Index j = 0; j < ds.samples.cols(); ++j) {
                    const double e = ds.samples(i, j) - centroids[k][std::size_t(j)];
                    d += e * e;
                }
                if (d < best_d) {
                    best_d = d;
                    best = int(k);
                }
            }
            correct += best == ds.labels[std::size_t(i)];
        }
        return 100.0 * correct / double(ds.size());
    }
};

std::vector<AugmentationName> all_ops() {
    std::vector<AugmentationName> ops;
    for (int i = 0; i < kAugmentationCount; ++i) ops.push_back(AugmentationName(i));
    return ops;
}

}  // namespace

TEST_CASE("synthetic domains: cardinality, shared labels and seed determinism") {
    const auto a = generate_synthetic_domains(4, 10, 50, 1);
    REQUIRE(a.size() == 4);
    for (std::size_t j = 0; j < a.size(); ++j) {
        CHECK(a[j].domain_id == "domain" + std::to_string(j));
        CHECK(a[j].size() == 500);
        CHECK(a[j].num_classes == 10);
        CHECK(std::set<int>(a[j].labels.begin(), a[j].labels.end()) == std::set<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
        CHECK(a[j].samples.allFinite());
        a[j].validate();
    }
    const auto b = generate_synthetic_domains(4, 10, 50, 1);
    for (std::size_t j = 0; j < a.size(); ++j) {
        CHECK(a[j].samples == b[j].samples);
        CHECK(dataset_digest(a[j]) == dataset_digest(b[j]));
    }
    CHECK(generate_synthetic_domains(4, 10, 50, 2)[0].samples != a[0].samples);
    CHECK_THROWS_AS(generate_synthetic_domains(1, 10, 5, 1), InvalidInput);
    CHECK_THROWS_AS(generate_synthetic_domains(2, 1, 5, 1), InvalidInput);
    CHECK_THROWS_AS(generate_synthetic_domains(2, 2, 0, 1), InvalidInput);
}

TEST_CASE("prototype oracle: domain 0 is separable, domain 3 is shifted") {
    double in_domain = 0.0, cross = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto doms = generate_synthetic_domains(4, 10, 50, seed);
        const auto [fit, held] = split_holdout(doms[0], 0.3, seed);
        const PrototypeOracle oracle(fit);
        in_domain += oracle.accuracy(held) / 5.0;
        cross += oracle.accuracy(doms[3]) / 5.0;
    }
    MESSAGE("prototype oracle: domain0 " << in_domain << "%, domain3 " << cross << "%");
    CHECK(in_domain >= 95.0);
    CHECK(cross <= 80.0);
}

TEST_CASE("dataset validation catches broken invariants") {
    auto ds = generate_synthetic_domains(2, 3, 2, 0)[0];
    ds.labels[0] = 3;
    CHECK_THROWS_AS(ds.validate(), InvalidInput);
    ds.labels[0] = 0;
    ds.labels.pop_back();
    CHECK_THROWS_AS(ds.validate(), InvalidInput);
}

TEST_CASE("op vocabulary: the fixed 14 names round trip and unknown names are rejected") {
    std::set<std::string> names;
    for (auto op : all_ops()) {
        const std::string n(to_string(op));
        names.insert(n);
        CHECK(parse_augmentation_name(n) == op);
    }
    CHECK(names == std::set<std::string>{"AutoContrast", "Brightness", "Color", "Contrast", "Equalize", "Identity",
                                         "Posterize", "Rotate", "Sharpness", "ShearX", "ShearY", "Solarize",
                                         "TranslateX", "TranslateY"});
    CHECK_THROWS_AS(parse_augmentation_name("Invert"), InvalidInput);
    CHECK_THROWS_AS(apply_augmentation({AugmentationName(99), 0.5}, Vec::Ones(4)), InvalidInput);
}

TEST_CASE("Identity leaves samples unchanged at any magnitude") {
    CounterRng rng(1);
    for (int i = 0; i < 100; ++i) {
        const Vec x = random_vec(rng, 32);
        CHECK(apply_augmentation({AugmentationName::Identity, rng.uniform(), rng.next_u64()}, x) == x);
    }
}

TEST_CASE("Rotate by m then -m on the same pairs restores the sample") {
    CounterRng rng(2);
    for (int i = 0; i < 200; ++i) {
        const Vec x = random_vec(rng, 32);
        const double m = rng.uniform();
        const std::uint64_t layout = rng.next_u64();
        const Vec y = apply_augmentation({AugmentationName::Rotate, m, layout}, x);
        const Vec back = apply_augmentation({AugmentationName::Rotate, -m, layout}, y);
        REQUIRE((back - x).cwiseAbs().maxCoeff() <= 1e-6);
        REQUIRE(std::abs(y.norm() - x.norm()) <= 1e-9 * x.norm());
    }
}

TEST_CASE("property: every op is closed over finite inputs and magnitude 0 is neutral") {
    CounterRng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const Vec x = random_vec(rng, 32, rng.uniform(0.1, 5.0));
        for (auto name : all_ops()) {
            const double lo = is_signed_op(name) ? -1.0 : 0.0;
            const AugmentationOp op{name, rng.uniform(lo, 1.0), rng.next_u64()};
            const Vec y = apply_augmentation(op, x);
            REQUIRE(y.size() == x.size());
            REQUIRE(y.allFinite());
            if (uses_magnitude(name)) {
                REQUIRE((apply_augmentation({name, 0.0, op.layout_seed}, x) - x).cwiseAbs().maxCoeff() <= 1e-12);
            }
        }
    }
}

TEST_CASE("ops reject out-of-range magnitudes") {
    const Vec x = Vec::LinSpaced(8, -1, 1);
    CHECK_THROWS_AS(apply_augmentation({AugmentationName::Brightness, -0.2}, x), InvalidInput);
    CHECK_THROWS_AS(apply_augmentation({AugmentationName::Brightness, 1.5}, x), InvalidInput);
    CHECK_THROWS_AS(apply_augmentation({AugmentationName::Rotate, -1.5}, x), InvalidInput);
    CHECK_NOTHROW(apply_augmentation({AugmentationName::Rotate, -1.0}, x));
}

TEST_CASE("vector-mode op semantics") {
    const Vec x = Vec::LinSpaced(8, -2.0, 5.0);
    SUBCASE("Brightness adds a constant") {
        const Vec y = apply_augmentation({AugmentationName::Brightness, 1.0}, x);
        CHECK(((y - x).array() - (y - x)[0]).abs().maxCoeff() < 1e-12);
        CHECK((y - x)[0] > 0.0);
    }
    SUBCASE("Contrast stretches about the mean") {
        const Vec y = apply_augmentation({AugmentationName::Contrast, 1.0}, x);
        CHECK(std::abs(y.mean() - x.mean()) < 1e-12);
        CHECK((y.array() - y.mean()).abs().sum() > (x.array() - x.mean()).abs().sum());
    }
    SUBCASE("AutoContrast rescales to [-1, 1]") {
        const Vec y = apply_augmentation({AugmentationName::AutoContrast, 0.0}, x);
        CHECK(y.minCoeff() == doctest::Approx(-1.0));
        CHECK(y.maxCoeff() == doctest::Approx(1.0));
    }
    SUBCASE("Equalize keeps the rank order and the range") {
        const Vec shuffled = (Vec(8) << 3.0, -1.0, 0.5, 0.6, 9.0, -4.0, 0.7, 2.0).finished();
        const Vec y = apply_augmentation({AugmentationName::Equalize, 0.0}, shuffled);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                if (shuffled[i] < shuffled[j]) CHECK(y[i] < y[j]);
        CHECK(y.minCoeff() == doctest::Approx(shuffled.minCoeff()));
        CHECK(y.maxCoeff() == doctest::Approx(shuffled.maxCoeff()));
    }
    SUBCASE("Posterize quantizes to at most 2^(8 - floor(4m)) levels") {
        CounterRng rng(4);
        const Vec z = random_vec(rng, 256);
        const Vec y = apply_augmentation({AugmentationName::Posterize, 1.0}, z);
        CHECK(std::set<double>(y.data(), y.data() + y.size()).size() <= 16);
    }
    SUBCASE("Solarize changes only coordinates above the threshold") {
        const Vec y = apply_augmentation({AugmentationName::Solarize, 0.5}, x);
        int changed = 0;
        for (int i = 0; i < 8; ++i) changed += y[i] != x[i];
        CHECK(changed > 0);
        CHECK(changed < 8);
    }
}

TEST_CASE("extended domains: labels preserved, samples displaced, deterministic") {
    const auto a = generate_synthetic_domains(2, 5, 20, 0)[0];
    const auto e = generate_extended(a, 0, 2);
    CHECK(e.domain_id == "domain0-ext");
    CHECK(e.labels == a.labels);
    CHECK(e.size() == a.size());
    CHECK(e.num_classes == a.num_classes);
    const double displacement = (e.samples - a.samples).cwiseAbs().mean();
    MESSAGE("mean per-coordinate displacement " << displacement);
    CHECK(displacement > 0.0);
    CHECK(generate_extended(a, 0, 2).samples == e.samples);
    CHECK(generate_extended(a, 1, 2).samples != e.samples);
}

TEST_CASE("style domains apply one coherent style to every sample") {
    const auto a = generate_synthetic_domains(2, 4, 10, 5)[0];
    CounterRng rng(6);
    const auto style = draw_style(rng, ExtendedDomainConfig{});
    CHECK(style.size() == 2);
    const auto s = apply_style(a, style);
    CHECK(s.domain_id == "domain0-ext");
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        Vec x = a.sample(i);
        for (const auto& op : style) x = apply_augmentation(op, x);
        REQUIRE(s.sample(i) == x);
    }
    CHECK(generate_style_domain(a, 9).samples == generate_style_domain(a, 9).samples);
    CHECK(generate_style_domain(a, 9).samples != generate_style_domain(a, 10).samples);
}

TEST_CASE("draw_augmentation stays within the configured magnitude band") {
    CounterRng rng(7);
    const ExtendedDomainConfig cfg;
    std::set<AugmentationName> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto op = draw_augmentation(rng, cfg);
        seen.insert(op.name);
        REQUIRE(std::abs(op.magnitude) >= cfg.magnitude_lo);
        REQUIRE(std::abs(op.magnitude) <= cfg.magnitude_hi);
        if (!is_signed_op(op.name)) REQUIRE(op.magnitude >= 0.0);
    }
    CHECK(seen.size() == std::size_t(kAugmentationCount));
}

TEST_CASE("watermark: additive unit-norm pattern") {
    const auto ds = generate_synthetic_domains(2, 3, 10, 0)[0];
    const WatermarkKey key{.secret_seed = 1234, .strength = 0.3};
    const Vec w = watermark_pattern(key, int(ds.samples.cols()));
    CHECK(w.norm() == doctest::Approx(1.0).epsilon(1e-12));
    const auto marked = embed_watermark(ds, key);
    CHECK(marked.domain_id == ds.domain_id + "†");
    CHECK(marked.labels == ds.labels);
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        const Vec delta = marked.sample(i) - ds.sample(i);
        REQUIRE(std::abs(delta.dot(w) - key.strength * w.squaredNorm()) <= 1e-9);
    }
    CHECK(embed_watermark(ds, key).samples == marked.samples);
    CHECK(embed_watermark(ds, WatermarkKey{.secret_seed = 1234, .strength = 0.0}).samples == ds.samples);
    CHECK_THROWS_AS(embed_watermark(ds, WatermarkKey{.secret_seed = 1, .strength = 1.5}), InvalidInput);
}

TEST_CASE("holdout split partitions the rows") {
    const auto ds = generate_synthetic_domains(2, 4, 25, 0)[0];
    const auto [train_part, held] = split_holdout(ds, 0.3, 8);
    CHECK(held.size() == 30);
    CHECK(train_part.size() == 70);
    CHECK(train_part.domain_id == ds.domain_id);
    std::multiset<double> all, parts;
    for (Eigen::Index i = 0; i < ds.size(); ++i) all.insert(ds.samples.row(i).sum());
    for (Eigen::Index i = 0; i < train_part.size(); ++i) parts.insert(train_part.samples.row(i).sum());
    for (Eigen::Index i = 0; i < held.size(); ++i) parts.insert(held.samples.row(i).sum());
    CHECK(all == parts);
    CHECK(split_holdout(ds, 0.3, 8).second.samples == held.samples);
}

TEST_CASE("dataset files round trip and report bad lines") {
    TempDir dir;
    const auto ds = generate_synthetic_domains(2, 3, 4, 0)[1];
    write_dataset(dir / "d.jsonl", ds);
    const auto back = read_dataset(dir / "d.jsonl", 3);
    CHECK(back.domain_id == ds.domain_id);
    CHECK(back.labels == ds.labels);
    CHECK(back.samples == ds.samples);
    {
        std::ofstream out(dir / "mixed.jsonl");
        out << R"({"domain":"a","label":0,"x":[1,2]})" << '\n' << R"({"domain":"b","label":0,"x":[1,2]})" << '\n';
    }
    CHECK_THROWS_AS(read_dataset(dir / "mixed.jsonl", 3), ParseError);
}
