#include "prefsearch/response.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace prefsearch {

GaussianEmbedding::GaussianEmbedding(Eigen::VectorXd mean, Eigen::VectorXd stddev)
    : mu(std::move(mean)), sigma(std::move(stddev)) {
    if (mu.size() != sigma.size()) throw std::invalid_argument("GaussianEmbedding: mu and sigma sizes differ");
    if (!mu.allFinite() || !sigma.allFinite() || (sigma.array() < 0.0).any()) {
        throw std::invalid_argument("GaussianEmbedding: parameters must be finite with sigma >= 0");
    }
}

GaussianEmbedding GaussianEmbedding::point(const Eigen::VectorXd& mean, double stddev) {
    return GaussianEmbedding(mean, Eigen::VectorXd::Constant(mean.size(), stddev));
}

std::string to_string(ResponseKind kind) { return kind == ResponseKind::Logistic ? "logistic" : "btrm"; }

ResponseKind response_kind_from_string(const std::string& name) {
    if (name == "logistic" || name == "Logistic") return ResponseKind::Logistic;
    if (name == "btrm" || name == "BTRM") return ResponseKind::Btrm;
    throw std::invalid_argument("unknown response model '" + name + "'");
}

void ResponseConfig::validate() const {
    if (!(k > 0.0)) throw std::invalid_argument("ResponseConfig: k must be > 0");
    if (!(margin >= 0.0)) throw std::invalid_argument("ResponseConfig: margin must be >= 0");
    if (!(star_sigma >= 0.0)) throw std::invalid_argument("ResponseConfig: star_sigma must be >= 0");
}

namespace {

void check_dims(Eigen::Index a, Eigen::Index b, Eigen::Index c) {
    if (a != b || a != c) throw std::invalid_argument("response: embedding dimensions differ");
}

double logistic_margin(const Eigen::VectorXd& r_star, const AnsweredQuery& q, double k) {
    check_dims(r_star.size(), q.preferred.dim(), q.rejected.dim());
    return k * ((r_star - q.rejected.mu).squaredNorm() - (r_star - q.preferred.mu).squaredNorm());
}

}  // namespace

double logistic_likelihood(const Eigen::VectorXd& r_star, const AnsweredQuery& q, double k) {
    const double x = logistic_margin(r_star, q, k);
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double log_logistic_likelihood(const Eigen::VectorXd& r_star, const AnsweredQuery& q, double k) {
    const double x = logistic_margin(r_star, q, k);
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double TauMoments::stddev() const { return std::sqrt(std::max(variance, 0.0)); }

TauMoments tau_moments(const GaussianEmbedding& star, const GaussianEmbedding& p, const GaussianEmbedding& n) {
    return tau_moments(star, p, n, nullptr);
}

TauMoments tau_moments(const GaussianEmbedding& star, const GaussianEmbedding& p, const GaussianEmbedding& n,
                       TauMomentGradient* grad) {
    check_dims(star.dim(), p.dim(), n.dim());
    const Eigen::Index dims = star.dim();
    if (grad) {
        for (auto* v : {&grad->mean_d_star_mu, &grad->mean_d_star_sigma, &grad->mean_d_p_mu, &grad->mean_d_p_sigma,
                        &grad->mean_d_n_mu, &grad->mean_d_n_sigma, &grad->var_d_star_mu, &grad->var_d_star_sigma,
                        &grad->var_d_p_mu, &grad->var_d_p_sigma, &grad->var_d_n_mu, &grad->var_d_n_sigma}) {
            v->resize(dims);
        }
    }
    TauMoments out;
    for (Eigen::Index d = 0; d < dims; ++d) {
        const double ma = star.mu[d] - p.mu[d];
        const double mb = star.mu[d] - n.mu[d];
        const double c = star.sigma[d] * star.sigma[d];
        const double va = c + p.sigma[d] * p.sigma[d];
        const double vb = c + n.sigma[d] * n.sigma[d];

        out.mean += ma * ma + va - mb * mb - vb;
        out.variance += 2.0 * va * va + 4.0 * ma * ma * va + 2.0 * vb * vb + 4.0 * mb * mb * vb - 4.0 * c * c -
                        8.0 * ma * mb * c;

        if (grad) {
            grad->mean_d_star_mu[d] = 2.0 * ma - 2.0 * mb;
            grad->mean_d_p_mu[d] = -2.0 * ma;
            grad->mean_d_n_mu[d] = 2.0 * mb;
            grad->mean_d_star_sigma[d] = 0.0;
            grad->mean_d_p_sigma[d] = 2.0 * p.sigma[d];
            grad->mean_d_n_sigma[d] = -2.0 * n.sigma[d];

            const double dv_dma = 8.0 * ma * va - 8.0 * mb * c;
            const double dv_dmb = 8.0 * mb * vb - 8.0 * ma * c;
            const double dv_dva = 4.0 * va + 4.0 * ma * ma;
            const double dv_dvb = 4.0 * vb + 4.0 * mb * mb;
            const double dv_dc = -8.0 * c - 8.0 * ma * mb;
            grad->var_d_star_mu[d] = dv_dma + dv_dmb;
            grad->var_d_p_mu[d] = -dv_dma;
            grad->var_d_n_mu[d] = -dv_dmb;
            grad->var_d_star_sigma[d] = 2.0 * star.sigma[d] * (dv_dva + dv_dvb + dv_dc);
            grad->var_d_p_sigma[d] = 2.0 * p.sigma[d] * dv_dva;
            grad->var_d_n_sigma[d] = 2.0 * n.sigma[d] * dv_dvb;
        }
    }
    return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double log_normal_cdf(double x) {
    if (x > -30.0) return std::log(normal_cdf(x));
    // Asymptotic tail: Phi(x) ~ phi(x)/|x| * (1 - 1/x^2 + 3/x^4)
    const double x2 = x * x;
    return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

double normal_hazard_ratio(double x) {
    if (x > -30.0) {
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return pdf / normal_cdf(x);
    }
    const double x2 = x * x;
    return -x / (1.0 - 1.0 / x2 + 3.0 / (x2 * x2));
}

double gaussian_tau_probability(const TauMoments& tau, double margin) {
    const double sd = tau.stddev();
    if (sd == 0.0) {
        if (tau.mean < -margin) return 1.0;
        if (tau.mean > -margin) return 0.0;
        return 0.5;
    }
    return normal_cdf((-margin - tau.mean) / sd);
}

double log_gaussian_tau_probability(const TauMoments& tau, double margin) {
    const double sd = tau.stddev();
    if (sd == 0.0) return std::log(gaussian_tau_probability(tau, margin));
    return log_normal_cdf((-margin - tau.mean) / sd);
}

double btrm_likelihood(const Eigen::VectorXd& r_star_mu, const AnsweredQuery& q, const ResponseConfig& cfg) {
    const auto star = GaussianEmbedding::point(r_star_mu, cfg.star_sigma);
    return gaussian_tau_probability(tau_moments(star, q.preferred, q.rejected), cfg.margin);
}

double log_btrm_likelihood(const Eigen::VectorXd& r_star_mu, const AnsweredQuery& q, const ResponseConfig& cfg) {
    const auto star = GaussianEmbedding::point(r_star_mu, cfg.star_sigma);
    return log_gaussian_tau_probability(tau_moments(star, q.preferred, q.rejected), cfg.margin);
}

double log_response_likelihood(const Eigen::VectorXd& r_star, const AnsweredQuery& q, const ResponseConfig& cfg) {
    return cfg.kind == ResponseKind::Logistic ? log_logistic_likelihood(r_star, q, cfg.k)
                                              : log_btrm_likelihood(r_star, q, cfg);
}

namespace {

template <typename Visit>
void draw_tau(const GaussianEmbedding& star, const GaussianEmbedding& p, const GaussianEmbedding& n,
              std::size_t n_samples, std::mt19937_64& rng, Visit&& visit) {
    check_dims(star.dim(), p.dim(), n.dim());
    if (n_samples == 0) throw std::invalid_argument("mc_tau: n_samples must be >= 1");
    std::normal_distribution<double> z(0.0, 1.0);
    const Eigen::Index dims = star.dim();
    for (std::size_t i = 0; i < n_samples; ++i) {
        double tau = 0.0;
        for (Eigen::Index d = 0; d < dims; ++d) {
            const double s = star.mu[d] + star.sigma[d] * z(rng);
            const double pd = p.mu[d] + p.sigma[d] * z(rng);
            const double nd = n.mu[d] + n.sigma[d] * z(rng);
            tau += (s - pd) * (s - pd) - (s - nd) * (s - nd);
        }
        visit(tau);
    }
}

}  // namespace

double mc_tau_probability(const GaussianEmbedding& star, const GaussianEmbedding& p, const GaussianEmbedding& n,
                          double margin, std::size_t n_samples, std::mt19937_64& rng) {
    std::size_t hits = 0;
    draw_tau(star, p, n, n_samples, rng, [&](double tau) { hits += tau < -margin ? 1 : 0; });
    return static_cast<double>(hits) / static_cast<double>(n_samples);
}

McTauSummary mc_tau_summary(const GaussianEmbedding& star, const GaussianEmbedding& p, const GaussianEmbedding& n,
                            double margin, std::size_t n_samples, std::mt19937_64& rng) {
    // Welford plus running central 3rd/4th moments for the std-error of the sample std.
    double mean = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0;
    std::size_t count = 0, hits = 0;
    draw_tau(star, p, n, n_samples, rng, [&](double tau) {
        const double n1 = static_cast<double>(count);
        ++count;
        const double nn = static_cast<double>(count);
        const double delta = tau - mean;
        const double dn = delta / nn;
        const double dn2 = dn * dn;
        const double term1 = delta * dn * n1;
        mean += dn;
        m4 += term1 * dn2 * (nn * nn - 3.0 * nn + 3.0) + 6.0 * dn2 * m2 - 4.0 * dn * m3;
        m3 += term1 * dn * (nn - 2.0) - 3.0 * dn * m2;
        m2 += term1;
        hits += tau < -margin ? 1 : 0;
    });
    McTauSummary s;
    const double nn = static_cast<double>(count);
    s.samples = count;
    s.mean = mean;
    s.variance = m2 / nn;
    s.probability = static_cast<double>(hits) / nn;
    s.mean_stderr = std::sqrt(s.variance / nn);
    // Var(sample variance) ~ (mu4 - sigma^4)/n; delta method for sqrt.
    const double mu4 = m4 / nn;
    const double var_of_var = std::max(mu4 - s.variance * s.variance, 0.0) / nn;
    s.stddev_stderr = s.variance > 0.0 ? std::sqrt(var_of_var) / (2.0 * std::sqrt(s.variance)) : 0.0;
    return s;
}

}  // namespace prefsearch
