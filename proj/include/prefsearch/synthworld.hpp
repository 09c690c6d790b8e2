#pragma once

// Parametric stroke-digit world: rendering, morphometric measurement,
// metadata standardization and noise, triplet generation and the
// synthetic query oracle.

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace prefsearch {

using Rng = std::mt19937_64;

inline constexpr int kImageSide = 28;
inline constexpr int kImagePixels = kImageSide * kImageSide;
inline constexpr int kMetaDims = 6;

using MetaVec = Eigen::Matrix<double, kMetaDims, 1>;

/// 28x28 grayscale raster, row-major, every pixel in [0,1].
class Image {
public:
    Image() { pixels_.fill(0.0); }
    explicit Image(std::span<const double> pixels);

    double at(int row, int col) const { return pixels_[row * kImageSide + col]; }
    double& at(int row, int col) { return pixels_[row * kImageSide + col]; }

    std::span<const double, kImagePixels> pixels() const { return pixels_; }
    std::span<double, kImagePixels> pixels() { return pixels_; }

    Eigen::Map<const Eigen::VectorXd> as_vector() const {
        return Eigen::Map<const Eigen::VectorXd>(pixels_.data(), kImagePixels);
    }

    bool operator==(const Image&) const = default;

private:
    std::array<double, kImagePixels> pixels_;
};

struct StrokeParams {
    double slant = 0.0;      // radians from vertical, positive leans the top right
    double thickness = 2.0;  // stroke diameter, px
    double length = 16.0;    // centerline length, px
    double center_dx = 0.0;
    double center_dy = 0.0;
};

/// Morphometrics. Field order matches the CSV column order and to_vector().
struct Metadata {
    double area = 0.0;
    double length = 0.0;
    double thickness = 0.0;
    double slant = 0.0;
    double width = 0.0;
    double height = 0.0;

    MetaVec to_vector() const;
    static Metadata from_vector(const MetaVec& v);
    bool operator==(const Metadata&) const = default;
};

inline constexpr std::array<const char*, kMetaDims> kMetadataColumns = {
    "area", "length", "thickness", "slant", "width", "height"};

class InvalidStroke : public std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

class EmptyInk : public std::runtime_error {
public:
    EmptyInk() : std::runtime_error("measure_metadata: image has no ink after binarization") {}
};

void validate(const StrokeParams& p);

/// Anti-aliased round-capped straight stroke.
Image render_stroke(const StrokeParams& p);

Metadata analytic_metadata(const StrokeParams& p);

/// Measures morphometrics from the binarized ink mask. The stroke is modeled
/// as a capsule: the mask area and principal-axis extent determine its core
/// length and diameter after removing the half-pixel dilation introduced by
/// thresholding the anti-aliased edge at 0.5.
Metadata measure_metadata(const Image& img);

class Standardizer {
public:
    Standardizer() = default;
    Standardizer(const MetaVec& mean, const MetaVec& stddev);

    static Standardizer fit(std::span<const Metadata> dataset);

    MetaVec apply(const Metadata& m) const;
    MetaVec apply(const MetaVec& raw) const;
    Metadata inverse(const MetaVec& standardized) const;

    const MetaVec& mean() const { return mean_; }
    const MetaVec& stddev() const { return stddev_; }

private:
    MetaVec mean_ = MetaVec::Zero();
    MetaVec stddev_ = MetaVec::Ones();
};

MetaVec add_metadata_noise(const MetaVec& m, double sigma, Rng& rng);

enum class Choice { A, B };

/// Synthetic user: prefers the item whose metadata is closest to the target.
/// Exact ties go to A.
Choice oracle_answer(std::span<const double> target, std::span<const double> a,
                     std::span<const double> b);
Choice oracle_answer(const MetaVec& target, const MetaVec& a, const MetaVec& b);

struct Triplet {
    std::size_t anchor = 0;
    std::size_t positive = 0;
    std::size_t negative = 0;
    bool operator==(const Triplet&) const = default;
};

/// Samples anchor plus two distinct candidates uniformly and orders the
/// candidates by distance to the anchor under `labels` (standardized,
/// clean or noisy). Ties are resampled.
std::vector<Triplet> make_triplets(std::span<const MetaVec> labels, std::size_t count, Rng& rng);

bool satisfies(const Triplet& t, std::span<const MetaVec> labels);

struct StrokeRanges {
    double slant_min = -0.4, slant_max = 0.4;
    double thickness_min = 1.5, thickness_max = 5.5;
    double length_min = 12.0, length_max = 24.0;
    double offset_max = 2.0;
};

StrokeParams sample_stroke(Rng& rng, const StrokeRanges& ranges = {});

}  // namespace prefsearch
