#pragma once

// User-response likelihoods for a paired comparison: the logistic model and
// the Bayesian triplet response model (BTRM), which treats the preferred,
// rejected and ideal points as independent Gaussians and approximates
//     tau = |s - p|^2 - |s - n|^2
// by a normal with its exact first two moments.

#include <cstddef>
#include <random>
#include <string>

#include <Eigen/Core>

namespace prefsearch {

struct GaussianEmbedding {
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma;  // per-dimension standard deviation

    GaussianEmbedding() = default;
    GaussianEmbedding(Eigen::VectorXd mean, Eigen::VectorXd stddev);
    static GaussianEmbedding point(const Eigen::VectorXd& mean, double stddev = 0.0);

    Eigen::Index dim() const { return mu.size(); }
    bool operator==(const GaussianEmbedding&) const = default;
};

enum class ResponseKind { Logistic, Btrm };

std::string to_string(ResponseKind kind);
ResponseKind response_kind_from_string(const std::string& name);

struct ResponseConfig {
    ResponseKind kind = ResponseKind::Btrm;
    double k = 10.0;           // logistic confidence
    double margin = 0.0;       // BTRM margin
    double star_sigma = 0.0;   // std assigned to the ideal-point hypothesis

    void validate() const;
};

struct AnsweredQuery {
    GaussianEmbedding preferred;
    GaussianEmbedding rejected;
    std::size_t preferred_id = 0;
    std::size_t rejected_id = 0;

    AnsweredQuery swapped() const { return {rejected, preferred, rejected_id, preferred_id}; }
};

double logistic_likelihood(const Eigen::VectorXd& r_star, const AnsweredQuery& q, double k);
double log_logistic_likelihood(const Eigen::VectorXd& r_star, const AnsweredQuery& q, double k);

struct TauMoments {
    double mean = 0.0;
    double variance = 0.0;
    double stddev() const;
};

/// Gradient of the tau moments with respect to every Gaussian parameter.
struct TauMomentGradient {
    Eigen::VectorXd mean_d_star_mu, mean_d_star_sigma, mean_d_p_mu, mean_d_p_sigma, mean_d_n_mu, mean_d_n_sigma;
    Eigen::VectorXd var_d_star_mu, var_d_star_sigma, var_d_p_mu, var_d_p_sigma, var_d_n_mu, var_d_n_sigma;
};

/// Exact mean and variance of tau, summed over independent dimensions.
/// Per dimension, with A = s - p, B = s - n and c = Cov(A, B) = sigma_s^2:
///   E[tau_d]   = E[A]^2 + Var A - E[B]^2 - Var B
///   Var[tau_d] = 2 VarA^2 + 4 E[A]^2 VarA + 2 VarB^2 + 4 E[B]^2 VarB - 4 c^2 - 8 E[A] E[B] c
/// Note the sigma_n^2 term enters the mean with a negative sign.
TauMoments tau_moments(const GaussianEmbedding& star, const GaussianEmbedding& p, const GaussianEmbedding& n);
TauMoments tau_moments(const GaussianEmbedding& star, const GaussianEmbedding& p, const GaussianEmbedding& n,
                       TauMomentGradient* grad);

/// P(tau < -margin) under N(mean, variance); a step function at zero variance
/// (0.5 exactly at the threshold).
double gaussian_tau_probability(const TauMoments& tau, double margin);
double log_gaussian_tau_probability(const TauMoments& tau, double margin);

double btrm_likelihood(const Eigen::VectorXd& r_star_mu, const AnsweredQuery& q, const ResponseConfig& cfg);
double log_btrm_likelihood(const Eigen::VectorXd& r_star_mu, const AnsweredQuery& q, const ResponseConfig& cfg);

/// Dispatches on cfg.kind.
double log_response_likelihood(const Eigen::VectorXd& r_star, const AnsweredQuery& q, const ResponseConfig& cfg);

/// Empirical frequency of tau < -margin over independent draws of (s, p, n).
double mc_tau_probability(const GaussianEmbedding& star, const GaussianEmbedding& p, const GaussianEmbedding& n,
                          double margin, std::size_t n_samples, std::mt19937_64& rng);

struct McTauSummary {
    double mean = 0.0;
    double variance = 0.0;
    double probability = 0.0;   // of tau < -margin
    double mean_stderr = 0.0;
    double stddev_stderr = 0.0;  // delta-method standard error of the sample std
    std::size_t samples = 0;
};

McTauSummary mc_tau_summary(const GaussianEmbedding& star, const GaussianEmbedding& p, const GaussianEmbedding& n,
                            double margin, std::size_t n_samples, std::mt19937_64& rng);

double normal_cdf(double x);
double log_normal_cdf(double x);
/// phi(x) / Phi(x), stable for very negative x.
double normal_hazard_ratio(double x);

}  // namespace prefsearch
