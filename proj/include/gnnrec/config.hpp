#pragma once

#include "gnnrec/eval.hpp"
#include "gnnrec/graph_store.hpp"
#include "gnnrec/model.hpp"
#include "gnnrec/sampler.hpp"
#include "gnnrec/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace gnnrec {

enum class DatasetFormat { MovieLens, Amazon };

struct DatasetConfig {
    DatasetFormat format = DatasetFormat::MovieLens;
    std::filesystem::path path;
    std::string name;                  ///< dataset column in reports
    std::size_t min_interactions = 0;  ///< users with fewer records are dropped
    double user_fraction = 1.0;        ///< seeded user subsample
};

/// Every setting of a run as `section.key = value` pairs. The key set is
/// fixed; each key starts at its default, so the written form always
/// records every default explicitly.
class RunConfig {
public:
    RunConfig();

    /// Throws ConfigError for an unknown key.
    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::map<std::string, std::string>& values() const { return values_; }

    /// `section.key = value` lines; `#` starts a comment, blank lines are
    /// skipped. Errors carry the source name and line number.
    void merge(std::istream& in, const std::string& source);
    void merge_file(const std::filesystem::path& path);
    void write(std::ostream& out) const;

    /// Copy with derived defaults filled in (an empty dataset.name becomes
    /// the format name), as echoed into the output directory.
    RunConfig resolved() const;

    // Typed views. Each throws ConfigError naming the offending key.
    DatasetConfig dataset() const;
    SplitSpec split() const;
    ImportanceConfig sampler() const;
    ModelConfig model() const;
    std::string model_name() const; ///< gnn or bpr
    TrainingConfig training() const;
    EvalProtocol eval() const;
    std::filesystem::path output_dir() const;
    std::uint64_t seed() const;
    int threads() const; ///< 0 keeps the OpenMP default

    /// Parses every typed view once so errors surface before any work.
    void validate() const;

private:
    std::size_t count(const std::string& key) const;
    double real(const std::string& key) const;
    std::map<std::string, std::string> values_;
};

/// Environment variable naming a default config file.
inline constexpr const char* kConfigEnv = "GNNREC_CONFIG";

} // namespace gnnrec
