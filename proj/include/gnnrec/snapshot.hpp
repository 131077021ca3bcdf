#pragma once

#include "gnnrec/bpr.hpp"
#include "gnnrec/graph_store.hpp"
#include "gnnrec/model.hpp"
#include "gnnrec/sampler.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace gnnrec {

/// A trained model on disk: `gnnrec-snapshot v1`, `kind gnn|bpr`, sorted
/// `key = value` settings up to `end-settings`, the user and item id maps,
/// then named tensors in little-endian binary. Byte-identical for equal
/// models.
struct Snapshot {
    std::string kind;
    std::map<std::string, std::string> settings;
    IdMap users;
    IdMap items;
    std::vector<std::pair<std::string, Matrix>> tensors;

    /// Throws SchemaError when the key is absent.
    const std::string& setting(const std::string& key) const;
};

void write_snapshot(const Snapshot& snapshot, std::ostream& out);
Snapshot read_snapshot(std::istream& in);
void save_snapshot(const Snapshot& snapshot, const std::filesystem::path& path);
Snapshot load_snapshot(const std::filesystem::path& path);

Snapshot make_snapshot(const GnnModel& model, const ImportanceConfig& sampler, const IdMap& users, const IdMap& items);
Snapshot make_snapshot(const BprModel& model, const IdMap& users, const IdMap& items);

/// Rebuilds the model; throws SchemaError for a wrong kind, a missing
/// tensor, or a shape that disagrees with the settings.
GnnModel gnn_from_snapshot(const Snapshot& snapshot);
ImportanceConfig sampler_from_snapshot(const Snapshot& snapshot);
BprModel bpr_from_snapshot(const Snapshot& snapshot);

/// Embedding size recorded in the snapshot.
std::size_t snapshot_dim(const Snapshot& snapshot);

} // namespace gnnrec
