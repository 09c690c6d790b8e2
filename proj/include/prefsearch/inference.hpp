#pragma once

// Posterior over the ideal point r* given answered queries, under an
// isotropic standard-normal prior, sampled with random-walk Metropolis.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "prefsearch/response.hpp"

namespace prefsearch {

struct McmcConfig {
    int iterations = 5000;
    int burn_in = 1000;
    double initial_proposal_std = 0.5;
    double target_acceptance = 0.234;
    std::uint64_t seed = 0;

    void validate() const;
};

struct PosteriorSamples {
    std::vector<Eigen::VectorXd> draws;  // post burn-in
    std::vector<bool> accepted;          // per kept draw
    double acceptance_rate = 0.0;        // over kept draws
    double proposal_std = 0.0;           // frozen value after burn-in
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;
};

using LogDensity = std::function<double(const Eigen::VectorXd&)>;

double log_standard_normal(const Eigen::VectorXd& r);

double log_posterior(const Eigen::VectorXd& r, std::span<const AnsweredQuery> queries, const ResponseConfig& cfg);

/// Random-walk Metropolis from the origin with isotropic Gaussian proposals.
/// The proposal scale adapts toward the target acceptance during burn-in only.
PosteriorSamples run_mcmc(const LogDensity& log_density, Eigen::Index dim, const McmcConfig& cfg);

/// Arithmetic mean and population std of the draws.
std::pair<Eigen::VectorXd, Eigen::VectorXd> posterior_estimate(std::span<const Eigen::VectorXd> draws);

/// `iter,dim0..dimN,accepted`
void write_draws_csv(const PosteriorSamples& samples, const std::filesystem::path& path);

}  // namespace prefsearch
