#include "prefsearch/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace prefsearch {

Image::Image(std::span<const double> pixels) {
    if (pixels.size() != static_cast<std::size_t>(kImagePixels)) {
        throw std::invalid_argument("Image: expected 784 pixels, got " + std::to_string(pixels.size()));
    }
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const double v = pixels[i];
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument("Image: pixel " + std::to_string(i) + " outside [0,1]");
        }
        pixels_[i] = v;
    }
}

MetaVec Metadata::to_vector() const {
    MetaVec v;
    v << area, length, thickness, slant, width, height;
    return v;
}

Metadata Metadata::from_vector(const MetaVec& v) {
    return Metadata{v[0], v[1], v[2], v[3], v[4], v[5]};
}

namespace {

constexpr double kCenter = kImageSide / 2.0;
// Thresholding the anti-aliased edge at 0.5 dilates the stroke radius by this much.
constexpr double kBinarizeDilation = 0.5;
constexpr double kBinarizeThreshold = 0.5;

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double wx = px - ax, wy = py - ay;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? (wx * vx + wy * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = wx - t * vx, dy = wy - t * vy;
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

void validate(const StrokeParams& p) {
    std::ostringstream err;
    if (!(p.thickness > 0.0) || !std::isfinite(p.thickness)) {
        err << "thickness must be > 0 (got " << p.thickness << ")";
    } else if (!(p.length > 0.0) || !std::isfinite(p.length)) {
        err << "length must be > 0 (got " << p.length << ")";
    } else if (!std::isfinite(p.slant) || !std::isfinite(p.center_dx) || !std::isfinite(p.center_dy)) {
        err << "non-finite stroke parameter";
    } else {
        const double ink_radius = p.thickness / 2.0 + kBinarizeDilation;
        const double half_w = 0.5 * p.length * std::abs(std::sin(p.slant)) + ink_radius;
        const double half_h = 0.5 * p.length * std::abs(std::cos(p.slant)) + ink_radius;
        if (std::abs(p.center_dx) + half_w >= kCenter || std::abs(p.center_dy) + half_h >= kCenter) {
            err << "stroke does not fit inside the frame (half extents " << half_w << ", " << half_h
                << ", offsets " << p.center_dx << ", " << p.center_dy << ")";
        }
    }
    if (const auto msg = err.str(); !msg.empty()) throw InvalidStroke("render_stroke: " + msg);
}

Image render_stroke(const StrokeParams& p) {
    validate(p);
    const double cx = kCenter + p.center_dx;
    const double cy = kCenter + p.center_dy;
    // Unit vector from the bottom endpoint to the top endpoint (y grows downward).
    const double ux = std::sin(p.slant), uy = -std::cos(p.slant);
    const double h = p.length / 2.0;
    const double ax = cx - h * ux, ay = cy - h * uy;
    const double bx = cx + h * ux, by = cy + h * uy;

    Image img;
    for (int r = 0; r < kImageSide; ++r) {
        for (int c = 0; c < kImageSide; ++c) {
            const double d = segment_distance(c + 0.5, r + 0.5, ax, ay, bx, by);
            img.at(r, c) = std::clamp(1.0 - (d - p.thickness / 2.0), 0.0, 1.0);
        }
    }
    return img;
}

Metadata analytic_metadata(const StrokeParams& p) {
    validate(p);
    Metadata m;
    m.length = p.length;
    m.thickness = p.thickness;
    m.slant = p.slant;
    m.width = p.length * std::abs(std::sin(p.slant)) + p.thickness;
    m.height = p.length * std::cos(p.slant) + p.thickness;
    m.area = p.length * p.thickness + std::numbers::pi * (p.thickness / 2.0) * (p.thickness / 2.0);
    return m;
}

Metadata measure_metadata(const Image& img) {
    std::array<bool, kImagePixels> mask{};
    int count = 0;
    for (int i = 0; i < kImagePixels; ++i) {
        mask[i] = img.pixels()[i] >= kBinarizeThreshold;
        count += mask[i] ? 1 : 0;
    }
    if (count == 0) throw EmptyInk();
    if (count == 1) {
        return Metadata{.area = 1.0, .length = 1.0, .thickness = 1.0, .slant = 0.0, .width = 1.0, .height = 1.0};
    }

    // Intensity-weighted moments over the mask grown by one pixel, so the
    // anti-aliased rim contributes its partial coverage.
    double mass = 0.0;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
    for (int r = 0; r < kImageSide; ++r) {
        for (int c = 0; c < kImageSide; ++c) {
            bool near_ink = false;
            for (int dr = -1; dr <= 1 && !near_ink; ++dr) {
                for (int dc = -1; dc <= 1 && !near_ink; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    near_ink = rr >= 0 && rr < kImageSide && cc >= 0 && cc < kImageSide && mask[rr * kImageSide + cc];
                }
            }
            if (!near_ink) continue;
            const double w = img.at(r, c);
            const Eigen::Vector2d q(c + 0.5, r + 0.5);
            mass += w;
            mean += w * q;
            second += w * q * q.transpose();
        }
    }
    mean /= mass;
    const Eigen::Matrix2d cov = second / mass - mean * mean.transpose();

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
    Eigen::Vector2d axis = eig.eigenvectors().col(1);  // largest eigenvalue
    // Orient the axis upward (negative y); horizontal axes point right.
    if (axis.y() > 0.0 || (axis.y() == 0.0 && axis.x() < 0.0)) axis = -axis;
    double slant = std::atan2(axis.x(), -axis.y());
    if (slant <= -std::numbers::pi / 2.0) slant += std::numbers::pi;

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int i = 0; i < kImagePixels; ++i) {
        if (!mask[i]) continue;
        const double s = Eigen::Vector2d(i % kImageSide + 0.5, i / kImageSide + 0.5).dot(axis);
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }
    const double extent = hi - lo + 1.0;

    // Capsule of ink diameter D and core length L: mass = L D + pi D^2 / 4,
    // extent = L + D. Take the smaller root for D.
    constexpr double k = 1.0 - std::numbers::pi / 4.0;
    const double disc = extent * extent - 4.0 * k * mass;
    double ink_diameter = disc >= 0.0 ? (extent - std::sqrt(disc)) / (2.0 * k) : extent;
    ink_diameter = std::min(ink_diameter, extent);

    const double length = std::max(1.0, extent - ink_diameter);
    const double thickness = std::max(1.0, ink_diameter - 2.0 * kBinarizeDilation);

    Metadata m;
    m.length = length;
    m.thickness = thickness;
    m.slant = slant;
    m.width = length * std::abs(std::sin(slant)) + thickness;
    m.height = length * std::abs(std::cos(slant)) + thickness;
    m.area = length * thickness + std::numbers::pi * thickness * thickness / 4.0;
    return m;
}

Standardizer::Standardizer(const MetaVec& mean, const MetaVec& stddev) : mean_(mean), stddev_(stddev) {
    for (int d = 0; d < kMetaDims; ++d) {
        if (!(stddev_[d] > 0.0) || !std::isfinite(stddev_[d])) {
            throw std::invalid_argument(std::string("Standardizer: non-positive stddev for ") + kMetadataColumns[d]);
        }
    }
}

Standardizer Standardizer::fit(std::span<const Metadata> dataset) {
    if (dataset.size() < 2) throw std::invalid_argument("Standardizer::fit: need at least 2 items");
    MetaVec mean = MetaVec::Zero();
    for (const auto& m : dataset) mean += m.to_vector();
    mean /= static_cast<double>(dataset.size());
    MetaVec var = MetaVec::Zero();
    for (const auto& m : dataset) var += (m.to_vector() - mean).cwiseAbs2();
    var /= static_cast<double>(dataset.size());
    for (int d = 0; d < kMetaDims; ++d) {
        if (!(var[d] > 0.0)) {
            throw std::invalid_argument(std::string("Standardizer::fit: zero variance in column ") + kMetadataColumns[d]);
        }
    }
    return Standardizer(mean, var.cwiseSqrt());
}

MetaVec Standardizer::apply(const Metadata& m) const { return apply(m.to_vector()); }

MetaVec Standardizer::apply(const MetaVec& raw) const { return (raw - mean_).cwiseQuotient(stddev_); }

Metadata Standardizer::inverse(const MetaVec& standardized) const {
    return Metadata::from_vector(standardized.cwiseProduct(stddev_) + mean_);
}

MetaVec add_metadata_noise(const MetaVec& m, double sigma, Rng& rng) {
    if (sigma < 0.0) throw std::invalid_argument("add_metadata_noise: sigma must be >= 0");
    if (sigma == 0.0) return m;
    std::normal_distribution<double> noise(0.0, sigma);
    MetaVec out = m;
    for (int d = 0; d < kMetaDims; ++d) out[d] += noise(rng);
    return out;
}

Choice oracle_answer(std::span<const double> target, std::span<const double> a, std::span<const double> b) {
    if (a.size() != target.size() || b.size() != target.size()) {
        throw std::invalid_argument("oracle_answer: dimension mismatch");
    }
    double da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        da += (a[i] - target[i]) * (a[i] - target[i]);
        db += (b[i] - target[i]) * (b[i] - target[i]);
    }
    return db < da ? Choice::B : Choice::A;
}

Choice oracle_answer(const MetaVec& target, const MetaVec& a, const MetaVec& b) {
    return oracle_answer(std::span<const double>(target.data(), kMetaDims), std::span<const double>(a.data(), kMetaDims),
                         std::span<const double>(b.data(), kMetaDims));
}

std::vector<Triplet> make_triplets(std::span<const MetaVec> labels, std::size_t count, Rng& rng) {
    if (labels.size() < 3) throw std::invalid_argument("make_triplets: need at least 3 items");
    std::uniform_int_distribution<std::size_t> pick(0, labels.size() - 1);
    std::vector<Triplet> out;
    out.reserve(count);
    while (out.size() < count) {
        const std::size_t a = pick(rng);
        std::size_t i = pick(rng), j = pick(rng);
        if (i == a || j == a || i == j) continue;
        const double di = (labels[i] - labels[a]).squaredNorm();
        const double dj = (labels[j] - labels[a]).squaredNorm();
        if (di == dj) continue;
        out.push_back(di < dj ? Triplet{a, i, j} : Triplet{a, j, i});
    }
    return out;
}

bool satisfies(const Triplet& t, std::span<const MetaVec> labels) {
    return (labels[t.anchor] - labels[t.positive]).squaredNorm() < (labels[t.anchor] - labels[t.negative]).squaredNorm();
}

StrokeParams sample_stroke(Rng& rng, const StrokeRanges& ranges) {
    std::uniform_real_distribution<double> slant(ranges.slant_min, ranges.slant_max);
    std::uniform_real_distribution<double> thickness(ranges.thickness_min, ranges.thickness_max);
    std::uniform_real_distribution<double> length(ranges.length_min, ranges.length_max);
    std::uniform_real_distribution<double> offset(-ranges.offset_max, ranges.offset_max);
    // Rejection keeps only strokes whose ink stays inside the frame.
    for (;;) {
        StrokeParams p;
        p.slant = slant(rng);
        p.thickness = thickness(rng);
        p.length = length(rng);
        p.center_dx = offset(rng);
        p.center_dy = offset(rng);
        try {
            validate(p);
            return p;
        } catch (const InvalidStroke&) {
        }
    }
}

}  // namespace prefsearch
