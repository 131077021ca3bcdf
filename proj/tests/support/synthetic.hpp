#pragma once

#include "gnnrec/graph_store.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace gnnrec::testing {

struct SyntheticSpec {
    std::size_t users = 60;
    std::size_t items = 80;
    std::size_t clusters = 4;
    std::size_t min_degree = 8;
    std::size_t max_degree = 20;
    /// Chance that an interaction lands in the user's own cluster.
    double affinity = 0.85;
    std::uint64_t seed = 1;
};

/// Clustered ratings in MovieLens `u::i::r::t` form: users mostly rate
/// items of their own cluster, and rate them higher.
std::string synthetic_movielens(const SyntheticSpec& spec);

void write_text(const std::filesystem::path& path, const std::string& text);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

} // namespace gnnrec::testing
