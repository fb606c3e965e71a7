#include "rpgssm/random.hpp"

namespace rpgssm::random {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
    return splitmix64(splitmix64(master) ^ fnv1a(label));
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index) {
    return splitmix64(derive_seed(master, label) + splitmix64(index));
}

Matrix standard_normal(Engine& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    // Row-major draw order.
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
}

}  // namespace rpgssm::random
