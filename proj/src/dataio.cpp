#include "prefsearch/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace prefsearch {

namespace fs = std::filesystem;
using nlohmann::json;

void Dataset::validate() const {
    std::set<std::int64_t> ids;
    for (const auto& item : items) {
        if (!ids.insert(item.id).second) {
            throw std::invalid_argument("Dataset: duplicate id " + std::to_string(item.id));
        }
    }
    std::set<std::size_t> seen;
    for (const auto* split : {&train, &test}) {
        for (std::size_t i : *split) {
            if (i >= items.size()) throw std::invalid_argument("Dataset: split index out of range");
            if (!seen.insert(i).second) throw std::invalid_argument("Dataset: splits overlap");
        }
    }
}

std::vector<MetaVec> Dataset::standardized_metadata() const {
    std::vector<MetaVec> out;
    out.reserve(items.size());
    for (const auto& item : items) out.push_back(standardizer.apply(item.metadata));
    return out;
}

std::vector<Metadata> Dataset::metadata() const {
    std::vector<Metadata> out;
    out.reserve(items.size());
    for (const auto& item : items) out.push_back(item.metadata);
    return out;
}

namespace {

void fit_on_train(Dataset& ds) {
    std::vector<Metadata> train_meta;
    train_meta.reserve(ds.train.size());
    for (std::size_t i : ds.train) train_meta.push_back(ds.items[i].metadata);
    ds.standardizer = Standardizer::fit(train_meta);
}

}  // namespace

Dataset generate_synthetic_dataset(std::size_t train_count, std::size_t test_count, std::uint64_t seed) {
    Rng rng(seed);
    Dataset ds;
    const std::size_t total = train_count + test_count;
    ds.items.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        DatasetItem item;
        item.id = static_cast<std::int64_t>(i);
        item.image = render_stroke(sample_stroke(rng));
        item.metadata = measure_metadata(item.image);
        ds.items.push_back(std::move(item));
        (i < train_count ? ds.train : ds.test).push_back(i);
    }
    fit_on_train(ds);
    ds.validate();
    return ds;
}

Dataset assemble_dataset(std::vector<Image> images, std::vector<Metadata> metadata, std::size_t test_count) {
    if (images.size() != metadata.size()) {
        throw std::invalid_argument("assemble_dataset: " + std::to_string(images.size()) + " images but " +
                                    std::to_string(metadata.size()) + " metadata rows");
    }
    if (test_count >= images.size()) throw std::invalid_argument("assemble_dataset: test split leaves no training items");
    Dataset ds;
    const std::size_t train_count = images.size() - test_count;
    for (std::size_t i = 0; i < images.size(); ++i) {
        ds.items.push_back(DatasetItem{static_cast<std::int64_t>(i), images[i], metadata[i]});
        (i < train_count ? ds.train : ds.test).push_back(i);
    }
    fit_on_train(ds);
    ds.validate();
    return ds;
}

namespace {

std::vector<unsigned char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataError::Kind::Io, "cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                           static_cast<char>(v)};
    out.write(bytes, 4);
}

unsigned char quantize(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) throw DataError(DataError::Kind::Io, "cannot write " + path.string());
    return out;
}

void check_written(const std::ofstream& out, const fs::path& path) {
    if (!out) throw DataError(DataError::Kind::Io, "write failed for " + path.string());
}

}  // namespace

std::vector<Image> load_idx_images(const fs::path& path) {
    const auto bytes = read_bytes(path);
    if (bytes.size() < 16) {
        throw DataError(DataError::Kind::Truncated, path.string() + ": header shorter than 16 bytes");
    }
    const std::uint32_t magic = read_be32(bytes, 0);
    if (magic != 0x00000803u) {
        std::ostringstream msg;
        msg << path.string() << ": wrong magic 0x" << std::hex << std::setw(8) << std::setfill('0') << magic
            << " (expected 0x00000803)";
        throw DataError(DataError::Kind::WrongMagic, msg.str());
    }
    const std::uint32_t count = read_be32(bytes, 4);
    const std::uint32_t rows = read_be32(bytes, 8);
    const std::uint32_t cols = read_be32(bytes, 12);
    if (rows != kImageSide || cols != kImageSide) {
        throw DataError(DataError::Kind::BadDimensions, path.string() + ": images are " + std::to_string(rows) + "x" +
                                                            std::to_string(cols) + ", expected 28x28");
    }
    const std::size_t need = 16 + std::size_t{count} * kImagePixels;
    if (bytes.size() < need) {
        throw DataError(DataError::Kind::Truncated, path.string() + ": payload has " + std::to_string(bytes.size() - 16) +
                                                        " bytes, expected " + std::to_string(need - 16));
    }
    std::vector<Image> images(count);
    for (std::size_t n = 0; n < count; ++n) {
        auto px = images[n].pixels();
        for (int i = 0; i < kImagePixels; ++i) px[i] = bytes[16 + n * kImagePixels + i] / 255.0;
    }
    return images;
}

void write_idx_images(const std::vector<Image>& images, const fs::path& path) {
    auto out = open_out(path, std::ios::binary);
    put_be32(out, 0x00000803u);
    put_be32(out, static_cast<std::uint32_t>(images.size()));
    put_be32(out, kImageSide);
    put_be32(out, kImageSide);
    for (const auto& img : images) {
        for (double v : img.pixels()) out.put(static_cast<char>(quantize(v)));
    }
    check_written(out, path);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

std::vector<Metadata> load_metadata_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(DataError::Kind::Io, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(DataError::Kind::BadFormat, path.string() + ": missing header row");
    if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    const auto header = split_csv_line(line);

    std::array<std::size_t, kMetaDims> column{};
    for (int d = 0; d < kMetaDims; ++d) {
        const auto it = std::find(header.begin(), header.end(), kMetadataColumns[d]);
        if (it == header.end()) {
            throw DataError(DataError::Kind::MissingColumn,
                            path.string() + ": missing column '" + kMetadataColumns[d] + "'");
        }
        column[d] = static_cast<std::size_t>(it - header.begin());
    }

    std::vector<Metadata> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        MetaVec v;
        for (int d = 0; d < kMetaDims; ++d) {
            const std::string cell = column[d] < cells.size() ? cells[column[d]] : std::string{};
            double value = 0.0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
            if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size()) {
                throw DataError(DataError::Kind::NonNumeric, path.string() + ":" + std::to_string(line_no) +
                                                                 ": non-numeric value '" + cell + "' in column '" +
                                                                 kMetadataColumns[d] + "'");
            }
            v[d] = value;
        }
        rows.push_back(Metadata::from_vector(v));
    }
    return rows;
}

void write_metadata_csv(const Dataset& dataset, const fs::path& path) {
    auto out = open_out(path);
    out << "id";
    for (const char* col : kMetadataColumns) out << ',' << col;
    out << '\n' << std::setprecision(17);
    for (const auto& item : dataset.items) {
        const MetaVec v = item.metadata.to_vector();
        out << item.id;
        for (int d = 0; d < kMetaDims; ++d) out << ',' << v[d];
        out << '\n';
    }
    check_written(out, path);
}

void write_pgm(const Image& img, const fs::path& path) {
    auto out = open_out(path, std::ios::binary);
    out << "P5\n" << kImageSide << ' ' << kImageSide << "\n255\n";
    for (double v : img.pixels()) out.put(static_cast<char>(quantize(v)));
    check_written(out, path);
}

Image load_pgm(const fs::path& path) {
    const auto bytes = read_bytes(path);
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
        return t;
    };
    if (token() != "P5") throw DataError(DataError::Kind::WrongMagic, path.string() + ": not a P5 PGM");
    const std::string w = token(), h = token(), maxval = token();
    if (w != "28" || h != "28") throw DataError(DataError::Kind::BadDimensions, path.string() + ": expected 28x28");
    if (maxval != "255") throw DataError(DataError::Kind::BadFormat, path.string() + ": expected maxval 255");
    ++pos;  // single whitespace before the raster
    if (bytes.size() < pos + kImagePixels) throw DataError(DataError::Kind::Truncated, path.string() + ": short raster");
    Image img;
    for (int i = 0; i < kImagePixels; ++i) img.pixels()[i] = bytes[pos + i] / 255.0;
    return img;
}

void export_dataset(const Dataset& dataset, const fs::path& dir, bool write_pgms) {
    fs::create_directories(dir);
    std::vector<Image> images;
    images.reserve(dataset.items.size());
    for (const auto& item : dataset.items) images.push_back(item.image);
    write_idx_images(images, dir / "images.idx");
    write_metadata_csv(dataset, dir / "metadata.csv");
    json splits = {{"train", dataset.train}, {"test", dataset.test}};
    write_text_file(dir / "splits.json", splits.dump(2) + "\n");
    if (write_pgms) {
        fs::create_directories(dir / "pgm");
        for (const auto& item : dataset.items) {
            std::ostringstream name;
            name << std::setw(6) << std::setfill('0') << item.id << ".pgm";
            write_pgm(item.image, dir / "pgm" / name.str());
        }
    }
}

Dataset import_dataset(const fs::path& dir) {
    auto images = load_idx_images(dir / "images.idx");
    auto metadata = load_metadata_csv(dir / "metadata.csv");
    if (images.size() != metadata.size()) {
        throw DataError(DataError::Kind::BadFormat, dir.string() + ": image and metadata counts differ");
    }
    Dataset ds;
    for (std::size_t i = 0; i < images.size(); ++i) {
        ds.items.push_back(DatasetItem{static_cast<std::int64_t>(i), images[i], metadata[i]});
    }
    const json splits = json::parse(read_text_file(dir / "splits.json"));
    ds.train = splits.at("train").get<std::vector<std::size_t>>();
    ds.test = splits.at("test").get<std::vector<std::size_t>>();
    ds.validate();
    fit_on_train(ds);
    return ds;
}

void RunRecord::validate() const {
    if (static_cast<int>(queries.size()) != queries_asked) {
        throw std::invalid_argument("RunRecord: " + std::to_string(queries.size()) + " query records for " +
                                    std::to_string(queries_asked) + " queries asked");
    }
}

void to_json(json& j, const QueryRecord& q) {
    j = json{{"query_index", q.query_index},
             {"item_a", q.item_a},
             {"item_b", q.item_b},
             {"choice", q.choice == Choice::A ? "a" : "b"},
             {"posterior_mean", q.posterior_mean},
             {"posterior_std", q.posterior_std},
             {"metadata_loss", q.metadata_loss ? json(*q.metadata_loss) : json(nullptr)}};
}

void from_json(const json& j, QueryRecord& q) {
    j.at("query_index").get_to(q.query_index);
    j.at("item_a").get_to(q.item_a);
    j.at("item_b").get_to(q.item_b);
    const auto choice = j.at("choice").get<std::string>();
    if (choice != "a" && choice != "b") throw std::invalid_argument("QueryRecord: choice must be 'a' or 'b'");
    q.choice = choice == "a" ? Choice::A : Choice::B;
    j.at("posterior_mean").get_to(q.posterior_mean);
    j.at("posterior_std").get_to(q.posterior_std);
    const auto& loss = j.at("metadata_loss");
    q.metadata_loss = loss.is_null() ? std::nullopt : std::optional<double>(loss.get<double>());
}

void to_json(json& j, const RunRecord& r) {
    j = json{{"format", "prefsearch.run_record"},
             {"version", 1},
             {"config", r.config},
             {"seed", r.seed},
             {"queries_asked", r.queries_asked},
             {"baseline_metadata_loss", r.baseline_metadata_loss ? json(*r.baseline_metadata_loss) : json(nullptr)},
             {"queries", r.queries},
             {"final_estimate", r.final_estimate},
             {"nearest_neighbor", r.nearest_neighbor ? json(*r.nearest_neighbor) : json(nullptr)},
             {"ground_truth", r.ground_truth ? json(*r.ground_truth) : json(nullptr)}};
}

void from_json(const json& j, RunRecord& r) {
    r.config = j.at("config");
    j.at("seed").get_to(r.seed);
    j.at("queries_asked").get_to(r.queries_asked);
    const auto& baseline = j.at("baseline_metadata_loss");
    r.baseline_metadata_loss = baseline.is_null() ? std::nullopt : std::optional<double>(baseline.get<double>());
    j.at("queries").get_to(r.queries);
    j.at("final_estimate").get_to(r.final_estimate);
    const auto& nn = j.at("nearest_neighbor");
    r.nearest_neighbor = nn.is_null() ? std::nullopt : std::optional<std::size_t>(nn.get<std::size_t>());
    const auto& gt = j.at("ground_truth");
    r.ground_truth = gt.is_null() ? std::nullopt : std::optional<std::size_t>(gt.get<std::size_t>());
}

void write_run_record(const RunRecord& record, const fs::path& path) {
    record.validate();
    write_text_file(path, json(record).dump(2) + "\n");
}

RunRecord load_run_record(const fs::path& path) {
    RunRecord r = json::parse(read_text_file(path)).get<RunRecord>();
    r.validate();
    return r;
}

void write_text_file(const fs::path& path, const std::string& contents) {
    auto out = open_out(path, std::ios::binary);
    out << contents;
    check_written(out, path);
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataError::Kind::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace prefsearch
