#include "synthetic.hpp"

#include "gnnrec/rng.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace gnnrec::testing {

std::string synthetic_movielens(const SyntheticSpec& spec) {
    Rng rng(spec.seed);
    std::ostringstream out;
    const std::size_t per_cluster = spec.items / spec.clusters;
    for (std::size_t u = 0; u < spec.users; ++u) {
        const std::size_t cluster = u % spec.clusters;
        const std::size_t span = spec.max_degree - spec.min_degree + 1;
        const std::size_t degree = spec.min_degree + uniform_index(rng, span);
        std::set<std::size_t> chosen;
        while (chosen.size() < degree) {
            std::size_t item;
            if (uniform_real(rng) < spec.affinity)
                item = cluster * per_cluster + uniform_index(rng, per_cluster);
            else
                item = uniform_index(rng, spec.items);
            chosen.insert(item);
        }
        std::size_t t = 0;
        for (auto item : chosen) {
            const bool own = item / per_cluster == cluster;
            const int rating = own ? 4 + static_cast<int>(uniform_index(rng, 2)) : 1 + static_cast<int>(uniform_index(rng, 3));
            out << (u + 1) << "::" << (item + 1) << "::" << rating << "::" << (978300000 + t++) << "\n";
        }
    }
    return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("gnnrec-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace gnnrec::testing
