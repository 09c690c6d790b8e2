#include "prefsearch/inference.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "prefsearch/dataio.hpp"

namespace prefsearch {

void McmcConfig::validate() const {
    if (iterations < 1) throw std::invalid_argument("McmcConfig: iterations must be >= 1");
    if (burn_in < 0 || burn_in >= iterations) throw std::invalid_argument("McmcConfig: need 0 <= burn_in < iterations");
    if (!(initial_proposal_std > 0.0)) throw std::invalid_argument("McmcConfig: proposal std must be > 0");
    if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) {
        throw std::invalid_argument("McmcConfig: target acceptance must be in (0,1)");
    }
}

double log_standard_normal(const Eigen::VectorXd& r) {
    return -0.5 * r.squaredNorm() - 0.5 * static_cast<double>(r.size()) * std::log(2.0 * std::numbers::pi);
}

double log_posterior(const Eigen::VectorXd& r, std::span<const AnsweredQuery> queries, const ResponseConfig& cfg) {
    double lp = log_standard_normal(r);
    for (const auto& q : queries) lp += log_response_likelihood(r, q, cfg);
    return lp;
}

PosteriorSamples run_mcmc(const LogDensity& log_density, Eigen::Index dim, const McmcConfig& cfg) {
    cfg.validate();
    if (dim < 1) throw std::invalid_argument("run_mcmc: dimension must be >= 1");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    Eigen::VectorXd current = Eigen::VectorXd::Zero(dim);
    double current_lp = log_density(current);
    double log_scale = std::log(cfg.initial_proposal_std);

    PosteriorSamples out;
    const int kept = cfg.iterations - cfg.burn_in;
    out.draws.reserve(static_cast<std::size_t>(kept));
    out.accepted.reserve(static_cast<std::size_t>(kept));
    std::size_t kept_accepts = 0;
    Eigen::VectorXd proposal(dim);

    for (int it = 0; it < cfg.iterations; ++it) {
        const double scale = std::exp(log_scale);
        for (Eigen::Index d = 0; d < dim; ++d) proposal[d] = current[d] + scale * normal(rng);
        const double proposal_lp = log_density(proposal);
        const double log_alpha = proposal_lp - current_lp;
        const double u = uniform(rng);
        const bool accept = std::isfinite(proposal_lp) && (log_alpha >= 0.0 || std::log(u) < log_alpha);
        if (accept) {
            current = proposal;
            current_lp = proposal_lp;
        }
        if (it < cfg.burn_in) {
            // Robbins-Monro step on the log scale; frozen afterwards.
            const double alpha = std::isfinite(log_alpha) ? std::min(1.0, std::exp(std::min(log_alpha, 0.0))) : 0.0;
            log_scale += (alpha - cfg.target_acceptance) / std::pow(static_cast<double>(it + 1), 0.6);
        } else {
            out.draws.push_back(current);
            out.accepted.push_back(accept);
            kept_accepts += accept ? 1 : 0;
        }
    }
    out.proposal_std = std::exp(log_scale);
    out.acceptance_rate = static_cast<double>(kept_accepts) / static_cast<double>(kept);
    std::tie(out.mean, out.stddev) = posterior_estimate(out.draws);
    return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> posterior_estimate(std::span<const Eigen::VectorXd> draws) {
    if (draws.empty()) throw std::invalid_argument("posterior_estimate: no draws");
    const Eigen::Index dim = draws.front().size();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (const auto& d : draws) mean += d;
    mean /= static_cast<double>(draws.size());
    Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
    for (const auto& d : draws) var += (d - mean).cwiseAbs2();
    var /= static_cast<double>(draws.size());
    return {mean, var.cwiseSqrt()};
}

void write_draws_csv(const PosteriorSamples& samples, const std::filesystem::path& path) {
    std::ostringstream out;
    out.precision(17);
    out << "iter";
    const Eigen::Index dim = samples.draws.empty() ? 0 : samples.draws.front().size();
    for (Eigen::Index d = 0; d < dim; ++d) out << ",dim" << d;
    out << ",accepted\n";
    for (std::size_t i = 0; i < samples.draws.size(); ++i) {
        out << i;
        for (Eigen::Index d = 0; d < dim; ++d) out << ',' << samples.draws[i][d];
        out << ',' << (samples.accepted[i] ? 1 : 0) << '\n';
    }
    write_text_file(path, out.str());
}

}  // namespace prefsearch
