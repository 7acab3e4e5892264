#include "aodip/domain_forge.hpp"

#include "aodip/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace aodip {

void DomainDataset::validate() const {
    if (num_classes < 1) {
        throw InvalidInput(domain_id + ": num_classes must be positive");
    }
    if (static_cast<Eigen::Index>(labels.size()) != samples.rows()) {
        throw InvalidInput(domain_id + ": samples and labels differ in length");
    }
    for (int y : labels) {
        if (y < 0 || y >= num_classes) {
            throw InvalidInput(domain_id + ": label " + std::to_string(y) + " outside [0, " +
                               std::to_string(num_classes) + ")");
        }
    }
}

Digest dataset_digest(const DomainDataset& ds) {
    Hasher h;
    h.str("aodip.dataset.v1").i64(ds.num_classes).mat(ds.samples);
    for (int y : ds.labels) {
        h.i64(y);
    }
    return h.finish();
}

std::vector<DomainDataset> generate_synthetic_domains(int n_domains, int num_classes, int per_class,
                                                      std::uint64_t seed, const SyntheticDomainConfig& cfg) {
    if (n_domains < 2 || num_classes < 2 || per_class < 1 || cfg.input_dim < 1) {
        throw InvalidInput("generate_synthetic_domains: need n_domains >= 2, classes >= 2, per_class >= 1");
    }
    const int dim = cfg.input_dim;
    const auto key = CounterRng::derive(seed, "synthetic_domains");

    CounterRng proto_rng(CounterRng::derive(key, "prototypes"));
    Mat prototypes(num_classes, dim);
    for (int k = 0; k < num_classes; ++k) {
        for (int c = 0; c < dim; ++c) {
            prototypes(k, c) = cfg.prototype_stddev * proto_rng.normal();
        }
    }

    std::vector<DomainDataset> domains;
    for (int j = 0; j < n_domains; ++j) {
        const auto dkey = CounterRng::derive(key, std::uint64_t(j));
        CounterRng style_rng(CounterRng::derive(dkey, "style"));
        Vec scale(dim), shift(dim);
        for (int c = 0; c < dim; ++c) {
            scale[c] = style_rng.uniform(cfg.scale_lo, cfg.scale_hi);
        }
        for (int c = 0; c < dim; ++c) {
            shift[c] = style_rng.uniform(cfg.shift_lo, cfg.shift_hi);
        }

        DomainDataset ds;
        ds.domain_id = "domain" + std::to_string(j);
        ds.num_classes = num_classes;
        ds.samples.resize(Eigen::Index(num_classes) * per_class, dim);
        CounterRng noise_rng(CounterRng::derive(dkey, "noise"));
        Eigen::Index row = 0;
        for (int k = 0; k < num_classes; ++k) {
            for (int i = 0; i < per_class; ++i, ++row) {
                for (int c = 0; c < dim; ++c) {
                    ds.samples(row, c) = scale[c] * prototypes(k, c) + shift[c] + cfg.noise_stddev * noise_rng.normal();
                }
                ds.labels.push_back(k);
            }
        }
        domains.push_back(std::move(ds));
    }
    return domains;
}

namespace {

constexpr std::array<std::string_view, kAugmentationCount> kNames = {
    "AutoContrast", "Brightness", "Color",     "Contrast", "Equalize",   "Identity",   "Posterize",
    "Rotate",       "Sharpness",  "ShearX",    "ShearY",   "Solarize",   "TranslateX", "TranslateY",
};

constexpr std::uint64_t kLayoutKey = 0x5eed0a06d1a70001ULL;

// Seeded disjoint coordinate pairs; ops with equal layout seeds act on the same planes.
std::vector<std::pair<int, int>> plane_pairs(int dim, std::uint64_t layout) {
    std::vector<int> perm(static_cast<std::size_t>(dim));
    std::iota(perm.begin(), perm.end(), 0);
    CounterRng rng(CounterRng::derive(kLayoutKey ^ layout, "pairs"));
    for (int i = dim - 1; i > 0; --i) {
        std::swap(perm[i], perm[rng.below(std::uint64_t(i) + 1)]);
    }
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i + 1 < dim; i += 2) {
        pairs.emplace_back(perm[i], perm[i + 1]);
    }
    return pairs;
}

Vec color_pattern(int dim, std::uint64_t layout) {
    CounterRng rng(CounterRng::derive(kLayoutKey ^ layout, "color"));
    Vec c(dim);
    for (int i = 0; i < dim; ++i) {
        c[i] = rng.uniform(-1.0, 1.0);
    }
    return c;
}

// Photometric ops on the sample's own [min, max] range, mirroring 8-bit image semantics.
template <class F>
Vec on_unit_range(const Vec& x, F&& f) {
    const double lo = x.minCoeff();
    const double hi = x.maxCoeff();
    if (!(hi > lo)) {
        return x;
    }
    Vec out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        out[i] = lo + (hi - lo) * f((x[i] - lo) / (hi - lo));
    }
    return out;
}

}  // namespace

std::string_view to_string(AugmentationName name) { return kNames[static_cast<std::size_t>(name)]; }

AugmentationName parse_augmentation_name(std::string_view name) {
    for (std::size_t i = 0; i < kNames.size(); ++i) {
        if (kNames[i] == name) {
            return static_cast<AugmentationName>(i);
        }
    }
    throw InvalidInput("unknown augmentation op '" + std::string(name) + "'");
}

bool is_signed_op(AugmentationName name) {
    switch (name) {
        case AugmentationName::Rotate:
        case AugmentationName::ShearX:
        case AugmentationName::ShearY:
        case AugmentationName::TranslateX:
        case AugmentationName::TranslateY: return true;
        default: return false;
    }
}

bool uses_magnitude(AugmentationName name) {
    return name != AugmentationName::AutoContrast && name != AugmentationName::Equalize &&
           name != AugmentationName::Identity;
}

Vec apply_augmentation(const AugmentationOp& op, const Vec& x) {
    const auto idx = static_cast<int>(op.name);
    if (idx < 0 || idx >= kAugmentationCount) {
        throw InvalidInput("unknown augmentation op id " + std::to_string(idx));
    }
    const double m = op.magnitude;
    const double lo = is_signed_op(op.name) ? -1.0 : 0.0;
    if (!(m >= lo && m <= 1.0)) {
        throw InvalidInput(std::string(to_string(op.name)) + ": magnitude " + std::to_string(m) + " out of range");
    }
    const auto dim = static_cast<int>(x.size());

    switch (op.name) {
        case AugmentationName::Identity: return x;

        case AugmentationName::AutoContrast: {
            const double xmin = x.minCoeff();
            const double xmax = x.maxCoeff();
            if (!(xmax > xmin)) return x;
            return ((x.array() - xmin) * (2.0 / (xmax - xmin)) - 1.0).matrix();
        }

        case AugmentationName::Equalize: {
            if (dim < 2) return x;
            const double xmin = x.minCoeff();
            const double xmax = x.maxCoeff();
            std::vector<int> order(static_cast<std::size_t>(dim));
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return x[a] < x[b]; });
            Vec out(dim);
            for (int r = 0; r < dim; ++r) {
                out[order[r]] = xmin + (xmax - xmin) * double(r) / double(dim - 1);
            }
            return out;
        }

        case AugmentationName::Brightness: return (x.array() + 0.5 * m).matrix();

        case AugmentationName::Color: return x.cwiseProduct((1.0 + m * color_pattern(dim, op.layout_seed).array()).matrix());

        case AugmentationName::Contrast: {
            const double mean = x.mean();
            return ((x.array() - mean) * (1.0 + 0.5 * m) + mean).matrix();
        }

        case AugmentationName::Sharpness: {
            Vec out = x;
            for (int i = 0; i < dim; ++i) {
                const double blur = (x[(i + dim - 1) % dim] + x[i] + x[(i + 1) % dim]) / 3.0;
                out[i] = x[i] + m * (x[i] - blur);
            }
            return out;
        }

        case AugmentationName::Posterize: {
            const int bits = 8 - static_cast<int>(std::floor(4.0 * m));
            if (bits >= 8) return x;
            const double levels = std::ldexp(1.0, bits) - 1.0;
            return on_unit_range(x, [&](double u) { return std::round(u * levels) / levels; });
        }

        case AugmentationName::Solarize: {
            const double threshold = 1.0 - m;
            return on_unit_range(x, [&](double u) { return u > threshold ? 1.0 - u : u; });
        }

        case AugmentationName::Rotate: {
            const double theta = m * std::numbers::pi / 6.0;
            const double c = std::cos(theta), s = std::sin(theta);
            Vec out = x;
            for (auto [a, b] : plane_pairs(dim, op.layout_seed)) {
                out[a] = c * x[a] - s * x[b];
                out[b] = s * x[a] + c * x[b];
            }
            return out;
        }

        case AugmentationName::ShearX:
        case AugmentationName::ShearY: {
            const double k = 0.6 * m;
            Vec out = x;
            for (auto [a, b] : plane_pairs(dim, op.layout_seed)) {
                if (op.name == AugmentationName::ShearX) out[a] += k * x[b];
                else out[b] += k * x[a];
            }
            return out;
        }

        case AugmentationName::TranslateX:
        case AugmentationName::TranslateY: {
            const double t = 0.45 * m;
            Vec out = x;
            for (auto [a, b] : plane_pairs(dim, op.layout_seed)) {
                out[op.name == AugmentationName::TranslateX ? a : b] += t;
            }
            return out;
        }
    }
    return x;
}

AugmentationOp draw_augmentation(CounterRng& rng, const ExtendedDomainConfig& cfg) {
    AugmentationOp op;
    op.name = static_cast<AugmentationName>(rng.below(kAugmentationCount));
    op.magnitude = rng.uniform(cfg.magnitude_lo, cfg.magnitude_hi);
    op.layout_seed = rng.next_u64();
    if (is_signed_op(op.name) && rng.uniform() < 0.5) {
        op.magnitude = -op.magnitude;
    }
    return op;
}

std::vector<AugmentationOp> draw_style(CounterRng& rng, const ExtendedDomainConfig& cfg) {
    if (cfg.ops_per_sample < 1) {
        throw InvalidInput("ops_per_sample must be >= 1");
    }
    std::vector<AugmentationOp> style;
    for (int k = 0; k < cfg.ops_per_sample; ++k) {
        style.push_back(draw_augmentation(rng, cfg));
    }
    return style;
}

DomainDataset apply_style(const DomainDataset& ds, const std::vector<AugmentationOp>& style) {
    DomainDataset out = ds;
    out.domain_id = ds.domain_id + "-ext";
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        Vec x = ds.sample(i);
        for (const auto& op : style) {
            x = apply_augmentation(op, x);
        }
        out.samples.row(i) = x.transpose();
    }
    return out;
}

DomainDataset generate_style_domain(const DomainDataset& authorized, std::uint64_t seed, const ExtendedDomainConfig& cfg) {
    if (authorized.empty()) {
        throw InvalidInput("generate_style_domain: authorized dataset is empty");
    }
    CounterRng rng(CounterRng::derive(seed, "style_domain"));
    return apply_style(authorized, draw_style(rng, cfg));
}

DomainDataset generate_extended(const DomainDataset& authorized, std::uint64_t seed, int ops_per_sample) {
    ExtendedDomainConfig cfg;
    cfg.ops_per_sample = ops_per_sample;
    return generate_extended(authorized, seed, cfg);
}

DomainDataset generate_extended(const DomainDataset& authorized, std::uint64_t seed, const ExtendedDomainConfig& cfg) {
    if (authorized.empty()) {
        throw InvalidInput("generate_extended: authorized dataset is empty");
    }
    if (cfg.ops_per_sample < 1) {
        throw InvalidInput("generate_extended: ops_per_sample must be >= 1");
    }
    DomainDataset out = authorized;
    out.domain_id = authorized.domain_id + "-ext";
    const auto key = CounterRng::derive(seed, "extended");
    for (Eigen::Index i = 0; i < authorized.size(); ++i) {
        CounterRng rng(CounterRng::derive(key, std::uint64_t(i)));
        Vec x = authorized.sample(i);
        for (int k = 0; k < cfg.ops_per_sample; ++k) {
            x = apply_augmentation(draw_augmentation(rng, cfg), x);
        }
        out.samples.row(i) = x.transpose();
    }
    return out;
}

Vec watermark_pattern(const WatermarkKey& key, int dim) {
    CounterRng rng(CounterRng::derive(key.secret_seed, "watermark"));
    Vec w(dim);
    for (int i = 0; i < dim; ++i) {
        w[i] = rng.normal();
    }
    const double n = w.norm();
    return n > 0.0 ? Vec(w / n) : w;
}

DomainDataset embed_watermark(const DomainDataset& ds, const WatermarkKey& key) {
    if (!(key.strength >= 0.0 && key.strength <= 1.0)) {
        throw InvalidInput("watermark strength must lie in [0, 1]");
    }
    DomainDataset out = ds;
    out.domain_id = ds.domain_id + "†";
    if (ds.empty()) {
        return out;
    }
    const Vec w = watermark_pattern(key, static_cast<int>(ds.samples.cols()));
    out.samples.rowwise() += key.strength * w.transpose();
    return out;
}

std::pair<DomainDataset, DomainDataset> split_holdout(const DomainDataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw InvalidInput("split_holdout: fraction must lie in [0, 1]");
    }
    const auto n = ds.size();
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    CounterRng rng(CounterRng::derive(seed, "holdout"));
    for (Eigen::Index i = n - 1; i > 0; --i) {
        std::swap(perm[static_cast<std::size_t>(i)], perm[rng.below(std::uint64_t(i) + 1)]);
    }
    const auto held = static_cast<Eigen::Index>(std::llround(fraction * double(n)));
    std::vector<bool> is_held(static_cast<std::size_t>(n), false);
    for (Eigen::Index i = 0; i < held; ++i) {
        is_held[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = true;
    }
    auto take = [&](bool want) {
        DomainDataset out;
        out.domain_id = ds.domain_id;
        out.num_classes = ds.num_classes;
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (is_held[static_cast<std::size_t>(i)] == want) rows.push_back(i);
        }
        out.samples.resize(static_cast<Eigen::Index>(rows.size()), ds.samples.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            out.samples.row(static_cast<Eigen::Index>(r)) = ds.samples.row(rows[r]);
            out.labels.push_back(ds.labels[static_cast<std::size_t>(rows[r])]);
        }
        return out;
    };
    return {take(false), take(true)};
}

void write_dataset(const std::filesystem::path& path, const DomainDataset& ds) {
    std::ofstream out(path);
    if (!out) {
        throw StorageError("cannot write " + path.string());
    }
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        nlohmann::json j;
        j["domain"] = ds.domain_id;
        j["label"] = ds.labels[static_cast<std::size_t>(i)];
        Vec x = ds.sample(i);
        j["x"] = std::vector<double>(x.data(), x.data() + x.size());
        out << j.dump() << '\n';
    }
    if (!out) {
        throw StorageError("write failed for " + path.string());
    }
}

DomainDataset read_dataset(const std::filesystem::path& path, int num_classes) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot open dataset file " + path.string());
    }
    DomainDataset ds;
    ds.num_classes = num_classes;
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            auto j = nlohmann::json::parse(line);
            auto domain = j.at("domain").get<std::string>();
            if (rows.empty()) {
                ds.domain_id = domain;
            } else if (domain != ds.domain_id) {
                throw ParseError("mixed domains in one dataset file", line_no);
            }
            ds.labels.push_back(j.at("label").get<int>());
            rows.push_back(j.at("x").get<std::vector<double>>());
            if (rows.size() > 1 && rows.back().size() != rows.front().size()) {
                throw ParseError("sample dimension changes mid-file", line_no);
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    const auto dim = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
    ds.samples.resize(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ds.samples.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(rows[i].data(), dim);
    }
    ds.validate();
    return ds;
}

}  // namespace aodip
