#include "fedbench/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace fedbench {
namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarPixels = 3072;

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
    if (offset + 4 > bytes.size()) throw FormatError("truncated header in " + path.string());
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

double parse_number(std::string_view cell, std::size_t line) {
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r'))
        cell.remove_suffix(1);
    double value = 0.0;
    const auto* end = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(cell.data(), end, value);
    if (cell.empty() || ec != std::errc() || ptr != end)
        throw FormatError("non-numeric cell '" + std::string(cell) + "' on line " + std::to_string(line));
    return value;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            cells.push_back(line.substr(start));
            return cells;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

std::string trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '"')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '"' || s.back() == '\r')) s.remove_suffix(1);
    return std::string(s);
}

}  // namespace

void validate_dataset(const Dataset& ds, bool require_all_classes) {
    if (ds.features.rows() != ds.labels.size())
        throw std::invalid_argument("dataset: feature rows and label count differ");
    if (ds.num_classes < 1) throw std::invalid_argument("dataset: num_classes must be >= 1");
    if (!ds.features.allFinite()) throw std::invalid_argument("dataset: non-finite feature");
    std::vector<bool> seen(ds.num_classes, false);
    for (Eigen::Index i = 0; i < ds.labels.size(); ++i) {
        const int y = ds.labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= ds.num_classes)
            throw std::invalid_argument("dataset: label out of range");
        seen[static_cast<std::size_t>(y)] = true;
    }
    if (require_all_classes && std::find(seen.begin(), seen.end(), false) != seen.end())
        throw std::invalid_argument("dataset: a class is missing from the training split");
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.name = ds.name;
    out.features.resize(static_cast<Eigen::Index>(indices.size()), ds.features.cols());
    out.labels.resize(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= ds.size()) throw std::out_of_range("subset: index out of range");
        const auto src = static_cast<Eigen::Index>(indices[r]);
        out.features.row(static_cast<Eigen::Index>(r)) = ds.features.row(src);
        out.labels[static_cast<Eigen::Index>(r)] = ds.labels[src];
    }
    return out;
}

std::vector<std::size_t> label_histogram(const Dataset& ds) {
    std::vector<std::size_t> hist(ds.num_classes, 0);
    for (Eigen::Index i = 0; i < ds.labels.size(); ++i) ++hist[static_cast<std::size_t>(ds.labels[i])];
    return hist;
}

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto img = read_bytes(images);
    const auto lab = read_bytes(labels);

    if (read_be32(img, 0, images) != kIdxImagesMagic)
        throw FormatError("bad IDX images magic in " + images.string());
    if (read_be32(lab, 0, labels) != kIdxLabelsMagic)
        throw FormatError("bad IDX labels magic in " + labels.string());

    const std::size_t n = read_be32(img, 4, images);
    const std::size_t rows = read_be32(img, 8, images);
    const std::size_t cols = read_be32(img, 12, images);
    const std::size_t n_labels = read_be32(lab, 4, labels);
    if (n != n_labels)
        throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                          std::to_string(n_labels) + " labels");
    const std::size_t pixels = rows * cols;
    if (img.size() != 16 + n * pixels) throw FormatError("truncated IDX images file " + images.string());
    if (lab.size() != 8 + n) throw FormatError("truncated IDX labels file " + labels.string());

    Dataset ds;
    ds.name = "mnist";
    ds.num_classes = 10;
    ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pixels));
    ds.labels.resize(static_cast<Eigen::Index>(n));
    for (std::size_t s = 0; s < n; ++s) {
        const unsigned char y = lab[8 + s];
        if (y > 9) throw FormatError("IDX label byte > 9 at record " + std::to_string(s));
        ds.labels[static_cast<Eigen::Index>(s)] = y;
        for (std::size_t p = 0; p < pixels; ++p)
            ds.features(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(p)) =
                img[16 + s * pixels + p] / 255.0;
    }
    return ds;
}

Dataset load_cifar10_binary(std::span<const std::filesystem::path> paths) {
    std::vector<std::vector<unsigned char>> files;
    std::size_t n = 0;
    for (const auto& path : paths) {
        files.push_back(read_bytes(path));
        if (files.back().size() % kCifarRecord != 0)
            throw FormatError("CIFAR-10 file length is not a multiple of 3073: " + path.string());
        n += files.back().size() / kCifarRecord;
    }
    Dataset ds;
    ds.name = "cifar10";
    ds.num_classes = 10;
    ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kCifarPixels));
    ds.labels.resize(static_cast<Eigen::Index>(n));
    Eigen::Index row = 0;
    for (const auto& bytes : files) {
        for (std::size_t off = 0; off < bytes.size(); off += kCifarRecord, ++row) {
            if (bytes[off] > 9) throw FormatError("CIFAR-10 label byte > 9 at record " + std::to_string(row));
            ds.labels[row] = bytes[off];
            for (std::size_t p = 0; p < kCifarPixels; ++p)
                ds.features(row, static_cast<Eigen::Index>(p)) = bytes[off + 1 + p] / 255.0;
        }
    }
    return ds;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty CSV file " + path.string());

    const auto header = split_commas(line);
    std::size_t label_at = header.size();
    for (std::size_t c = 0; c < header.size(); ++c)
        if (trim(header[c]) == label_column) label_at = c;
    if (label_at == header.size())
        throw FormatError("label column '" + label_column + "' not found in " + path.string());

    std::vector<double> values;
    std::vector<double> raw_labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_commas(line);
        if (cells.size() != header.size())
            throw FormatError("ragged row on line " + std::to_string(line_no) + " of " + path.string());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const double v = parse_number(cells[c], line_no);
            if (c == label_at)
                raw_labels.push_back(v);
            else
                values.push_back(v);
        }
    }
    if (raw_labels.empty()) throw FormatError("CSV has no data rows: " + path.string());

    // Dense remap preserving sorted order of the original label values.
    std::map<double, int> remap;
    for (double v : raw_labels) remap.emplace(v, 0);
    int next = 0;
    for (auto& [value, id] : remap) id = next++;

    const auto n = static_cast<Eigen::Index>(raw_labels.size());
    const auto dim = static_cast<Eigen::Index>(header.size() - 1);
    Dataset ds;
    ds.name = path.stem().string();
    ds.num_classes = remap.size();
    ds.features = Eigen::Map<const Matrix<double>>(values.data(), n, dim);
    ds.labels.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) ds.labels[i] = remap.at(raw_labels[static_cast<std::size_t>(i)]);
    return ds;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    for (Eigen::Index c = 0; c < ds.features.cols(); ++c) out << 'f' << c << ',';
    out << "label\n";
    std::array<char, 64> buf{};
    for (Eigen::Index r = 0; r < ds.features.rows(); ++r) {
        for (Eigen::Index c = 0; c < ds.features.cols(); ++c) {
            auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), ds.features(r, c));
            out.write(buf.data(), end - buf.data());
            out << ',';
        }
        out << ds.labels[r] << '\n';
    }
}

Dataset synthetic_blobs(std::size_t num_classes, std::size_t per_class, std::size_t input_dim,
                        double spread, std::uint64_t seed) {
    if (num_classes < 1 || per_class < 1 || input_dim < 1)
        throw std::invalid_argument("blobs: counts must be >= 1");
    if (!(spread >= 0.0)) throw std::invalid_argument("blobs: spread must be >= 0");

    Rng center_rng(mix64(0x626c6f6273ULL ^ (num_classes << 32) ^ input_dim));
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix<double> centers(static_cast<Eigen::Index>(num_classes), static_cast<Eigen::Index>(input_dim));
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
        do {
            for (Eigen::Index j = 0; j < centers.cols(); ++j) centers(c, j) = normal(center_rng);
        } while (centers.row(c).norm() == 0.0);
        centers.row(c).normalize();
    }

    Rng rng(seed);
    Dataset ds;
    ds.name = "blobs";
    ds.num_classes = num_classes;
    const auto n = static_cast<Eigen::Index>(num_classes * per_class);
    ds.features.resize(n, static_cast<Eigen::Index>(input_dim));
    ds.labels.resize(n);
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t k = 0; k < per_class; ++k, ++row) {
            ds.labels[row] = static_cast<int>(c);
            for (Eigen::Index j = 0; j < ds.features.cols(); ++j)
                ds.features(row, j) = centers(static_cast<Eigen::Index>(c), j) + spread * normal(rng);
        }
    }
    return ds;
}

NormalizationStats fit_normalization(const Dataset& train) {
    if (train.size() == 0) throw std::invalid_argument("normalization: empty training set");
    NormalizationStats stats;
    stats.mean = train.features.colwise().mean().transpose();
    const Matrix<double> centered = train.features.rowwise() - stats.mean.transpose();
    stats.std = (centered.array().square().colwise().sum() / static_cast<double>(train.size()))
                    .sqrt()
                    .matrix()
                    .transpose();
    // Zero variance, up to the rounding error of the mean itself.
    for (Eigen::Index j = 0; j < stats.std.size(); ++j)
        if (!(stats.std[j] > 1e-12 * std::max(1.0, std::abs(stats.mean[j])))) stats.std[j] = 1.0;
    return stats;
}

Dataset apply_normalization(const Dataset& ds, const NormalizationStats& stats) {
    if (stats.mean.size() != ds.features.cols() || stats.std.size() != ds.features.cols())
        throw std::invalid_argument("normalization: stats width does not match dataset");
    Dataset out = ds;
    out.features = ((ds.features.rowwise() - stats.mean.transpose()).array().rowwise() /
                    stats.std.transpose().array())
                       .matrix();
    return out;
}

}  // namespace fedbench
