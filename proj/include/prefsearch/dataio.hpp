#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefsearch/synthworld.hpp"

namespace prefsearch {

class DataError : public std::runtime_error {
public:
    enum class Kind { Io, WrongMagic, Truncated, BadDimensions, MissingColumn, NonNumeric, BadFormat };

    DataError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct DatasetItem {
    std::int64_t id = 0;
    Image image;
    Metadata metadata;
};

struct Dataset {
    std::vector<DatasetItem> items;
    Standardizer standardizer;
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;

    /// Throws std::invalid_argument on duplicate ids or bad splits.
    void validate() const;

    std::vector<MetaVec> standardized_metadata() const;
    std::vector<Metadata> metadata() const;
};

/// Renders `train_count + test_count` random strokes. Metadata is measured
/// from the rendered images; the standardizer is fit on the train split.
Dataset generate_synthetic_dataset(std::size_t train_count, std::size_t test_count, std::uint64_t seed);

/// Pairs externally loaded images and metadata; the last `test_count` items
/// form the test split.
Dataset assemble_dataset(std::vector<Image> images, std::vector<Metadata> metadata, std::size_t test_count);

std::vector<Image> load_idx_images(const std::filesystem::path& path);
void write_idx_images(const std::vector<Image>& images, const std::filesystem::path& path);

std::vector<Metadata> load_metadata_csv(const std::filesystem::path& path);
void write_metadata_csv(const Dataset& dataset, const std::filesystem::path& path);

void write_pgm(const Image& img, const std::filesystem::path& path);
Image load_pgm(const std::filesystem::path& path);

/// Writes images.idx, metadata.csv, splits.json and one PGM per item under `dir`.
void export_dataset(const Dataset& dataset, const std::filesystem::path& dir, bool write_pgms = true);
/// Reads what export_dataset wrote (the PGMs are not needed).
Dataset import_dataset(const std::filesystem::path& dir);

struct QueryRecord {
    int query_index = 0;  // 1-based
    std::size_t item_a = 0;
    std::size_t item_b = 0;
    Choice choice = Choice::A;
    std::vector<double> posterior_mean;
    std::vector<double> posterior_std;
    std::optional<double> metadata_loss;  // absent without a ground truth
    bool operator==(const QueryRecord&) const = default;
};

struct RunRecord {
    nlohmann::json config;
    std::uint64_t seed = 0;
    int queries_asked = 0;
    std::optional<double> baseline_metadata_loss;  // decode of the prior mean, before any query
    std::vector<QueryRecord> queries;
    std::vector<double> final_estimate;  // 784 pixels
    std::optional<std::size_t> nearest_neighbor;
    std::optional<std::size_t> ground_truth;

    void validate() const;
    bool operator==(const RunRecord&) const = default;
};

void to_json(nlohmann::json& j, const QueryRecord& q);
void from_json(const nlohmann::json& j, QueryRecord& q);
void to_json(nlohmann::json& j, const RunRecord& r);
void from_json(const nlohmann::json& j, RunRecord& r);

void write_run_record(const RunRecord& record, const std::filesystem::path& path);
RunRecord load_run_record(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace prefsearch
