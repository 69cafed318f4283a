#pragma once

#include "fedbench/types.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedbench {

/// Malformed or unreadable dataset file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Dataset {
    Matrix<double> features;  // n x input_dim
    LabelVector labels;       // n
    std::size_t num_classes = 0;
    std::string name;

    std::size_t size() const { return static_cast<std::size_t>(labels.size()); }
    std::size_t input_dim() const { return static_cast<std::size_t>(features.cols()); }
};

struct NormalizationStats {
    Vector<double> mean;
    Vector<double> std;
};

/// Throws std::invalid_argument when a Dataset invariant does not hold.
/// `require_all_classes` additionally demands every class be present.
void validate_dataset(const Dataset& ds, bool require_all_classes = false);

/// Rows `indices` of `ds`, in the given order.
Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

std::vector<std::size_t> label_histogram(const Dataset& ds);

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
Dataset load_cifar10_binary(std::span<const std::filesystem::path> paths);
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column);

/// Writes the dataset with header f0..f{d-1},label. Values use shortest
/// round-trip formatting.
void save_csv(const Dataset& ds, const std::filesystem::path& path);

/// Gaussian blobs around unit-norm class centers. The centers depend only on
/// (num_classes, input_dim), so a train and a test set drawn with different
/// seeds share them.
Dataset synthetic_blobs(std::size_t num_classes, std::size_t per_class, std::size_t input_dim,
                        double spread, std::uint64_t seed);

NormalizationStats fit_normalization(const Dataset& train);
Dataset apply_normalization(const Dataset& ds, const NormalizationStats& stats);

}  // namespace fedbench
