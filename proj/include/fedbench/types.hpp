#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>

namespace fedbench {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Row-major so that one sample is one contiguous row.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using LabelVector = Eigen::VectorXi;
using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of the RNG stream owned by one client in one round.
constexpr std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t client_id,
                                    std::uint64_t round) noexcept {
    return mix64(mix64(mix64(master_seed) ^ client_id) ^ (round * 0xd6e8feb86659fd93ULL));
}

}  // namespace fedbench
