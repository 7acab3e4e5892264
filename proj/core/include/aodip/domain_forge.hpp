#pragma once

#include "aodip/digest.hpp"
#include "aodip/rng.hpp"
#include "aodip/tokens.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace aodip {

/// Samples and labels of one domain over a label space shared by the whole experiment.
struct DomainDataset {
    std::string domain_id;
    Mat samples;              // count x input_dim
    std::vector<int> labels;  // each in [0, num_classes)
    int num_classes = 0;

    Eigen::Index size() const { return samples.rows(); }
    bool empty() const { return samples.rows() == 0; }
    Vec sample(Eigen::Index i) const { return samples.row(i).transpose(); }

    /// Throws InvalidInput when the invariants do not hold.
    void validate() const;
};

Digest dataset_digest(const DomainDataset& ds);

struct SyntheticDomainConfig {
    int input_dim = 32;
    double prototype_stddev = 0.2;
    double scale_lo = 0.5, scale_hi = 1.5;
    double shift_lo = -0.5, shift_hi = 0.5;
    double noise_stddev = 0.1;
};

/// Class prototypes pushed through a seeded per-domain affine style plus Gaussian noise.
/// Domain ids are "domain0", "domain1", ...
std::vector<DomainDataset> generate_synthetic_domains(int n_domains, int num_classes, int per_class,
                                                      std::uint64_t seed, const SyntheticDomainConfig& cfg = {});

enum class AugmentationName {
    AutoContrast,
    Brightness,
    Color,
    Contrast,
    Equalize,
    Identity,
    Posterize,
    Rotate,
    Sharpness,
    ShearX,
    ShearY,
    Solarize,
    TranslateX,
    TranslateY,
};

inline constexpr int kAugmentationCount = 14;

std::string_view to_string(AugmentationName name);
/// Throws InvalidInput for names outside the fixed 14-op vocabulary.
AugmentationName parse_augmentation_name(std::string_view name);

/// Geometric ops (Rotate, Shear*, Translate*) accept a signed magnitude in [-1, 1];
/// photometric ops take [0, 1]. AutoContrast, Equalize and Identity ignore magnitude.
bool is_signed_op(AugmentationName name);
bool uses_magnitude(AugmentationName name);

struct AugmentationOp {
    AugmentationName name = AugmentationName::Identity;
    double magnitude = 0.0;
    std::uint64_t layout_seed = 0;  // selects the coordinate pairs and the Color pattern
};

Vec apply_augmentation(const AugmentationOp& op, const Vec& x);

struct ExtendedDomainConfig {
    int ops_per_sample = 2;
    double magnitude_lo = 0.5;
    double magnitude_hi = 1.0;
};

/// Draws one random op with a random magnitude (sign randomized for geometric ops) and layout.
AugmentationOp draw_augmentation(CounterRng& rng, const ExtendedDomainConfig& cfg);

/// ops_per_sample ops drawn once; applying them to every sample of a domain gives one coherent style.
std::vector<AugmentationOp> draw_style(CounterRng& rng, const ExtendedDomainConfig& cfg);
DomainDataset apply_style(const DomainDataset& ds, const std::vector<AugmentationOp>& style);

/// Single-style variant of the authorized domain ("-ext" suffix), the unit that receives a credential.
DomainDataset generate_style_domain(const DomainDataset& authorized, std::uint64_t seed,
                                    const ExtendedDomainConfig& cfg = {});

/// Per-sample random style perturbations of the authorized domain. Labels and count are
/// preserved and the id gains a "-ext" suffix.
DomainDataset generate_extended(const DomainDataset& authorized, std::uint64_t seed, int ops_per_sample);
DomainDataset generate_extended(const DomainDataset& authorized, std::uint64_t seed, const ExtendedDomainConfig& cfg);

struct WatermarkKey {
    std::uint64_t secret_seed = 0;
    double strength = 0.1;  // alpha in [0, 1]
};

/// Unit-norm pattern regenerated from the secret seed.
Vec watermark_pattern(const WatermarkKey& key, int dim);

/// x + alpha * w for every sample; the id gains a "†" suffix.
DomainDataset embed_watermark(const DomainDataset& ds, const WatermarkKey& key);

/// Seeded split into (train, held-out); the held-out part takes round(fraction * size) rows.
/// Both parts keep the domain id and row order.
std::pair<DomainDataset, DomainDataset> split_holdout(const DomainDataset& ds, double fraction, std::uint64_t seed);

/// JSON-lines {"domain", "label", "x"}.
void write_dataset(const std::filesystem::path& path, const DomainDataset& ds);
DomainDataset read_dataset(const std::filesystem::path& path, int num_classes);

}  // namespace aodip
