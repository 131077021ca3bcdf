#include "gnnrec/snapshot.hpp"

#include "gnnrec/error.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

namespace gnnrec {

namespace {

constexpr const char* kMagic = "gnnrec-snapshot v1";

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
T parse_value(const Snapshot& s, const std::string& key) {
    const auto& text = s.setting(key);
    T value{};
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || end != text.data() + text.size())
        throw SchemaError("snapshot: bad value for " + key + ": '" + text + "'");
    return value;
}

void write_ids(const char* tag, const IdMap& ids, std::ostream& out) {
    out << tag << ' ' << ids.size() << '\n';
    for (const auto& key : ids.keys()) {
        if (key.find('\n') != std::string::npos) throw IoError("id key contains a newline");
        out << key << '\n';
    }
}

IdMap read_ids(const char* tag, std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind(std::string(tag) + ' ', 0) != 0)
        throw SchemaError(std::string("snapshot: expected '") + tag + " <count>'");
    std::size_t count = 0;
    const auto digits = line.substr(std::string(tag).size() + 1);
    const auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), count);
    if (ec != std::errc() || end != digits.data() + digits.size()) throw SchemaError("snapshot: bad count in '" + line + "'");
    IdMap ids;
    for (std::size_t k = 0; k < count; ++k) {
        if (!std::getline(in, line)) throw SchemaError(std::string("snapshot: truncated ") + tag + " list");
        ids.intern(line);
        if (ids.size() != k + 1) throw SchemaError("snapshot: duplicate id '" + line + "'");
    }
    return ids;
}

void copy_tensors(const Snapshot& s, const std::vector<Parameter*>& params) {
    std::map<std::string, const Matrix*> by_name;
    for (const auto& [name, m] : s.tensors) by_name[name] = &m;
    for (auto* p : params) {
        const auto it = by_name.find(p->name);
        if (it == by_name.end()) throw SchemaError("snapshot: missing tensor " + p->name);
        const Matrix& m = *it->second;
        if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
            throw SchemaError("snapshot: tensor " + p->name + " is " + std::to_string(m.rows()) + "x" +
                              std::to_string(m.cols()) + ", expected " + std::to_string(p->value.rows()) + "x" +
                              std::to_string(p->value.cols()));
        p->value = m;
    }
    if (by_name.size() != params.size()) throw SchemaError("snapshot: unexpected extra tensors");
}

} // namespace

const std::string& Snapshot::setting(const std::string& key) const {
    const auto it = settings.find(key);
    if (it == settings.end()) throw SchemaError("snapshot: missing setting " + key);
    return it->second;
}

void write_snapshot(const Snapshot& s, std::ostream& out) {
    out << kMagic << '\n' << "kind " << s.kind << '\n';
    for (const auto& [key, value] : s.settings) out << key << " = " << value << '\n';
    out << "end-settings\n";
    write_ids("users", s.users, out);
    write_ids("items", s.items, out);
    for (const auto& [name, m] : s.tensors) write_tensor(out, name, m);
    if (!out) throw IoError("failed to write snapshot");
}

Snapshot read_snapshot(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kMagic) throw SchemaError("not a gnnrec snapshot");
    Snapshot s;
    if (!std::getline(in, line) || line.rfind("kind ", 0) != 0) throw SchemaError("snapshot: missing kind line");
    s.kind = line.substr(5);
    while (true) {
        if (!std::getline(in, line)) throw SchemaError("snapshot: missing end-settings");
        if (line == "end-settings") break;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw SchemaError("snapshot: bad setting line '" + line + "'");
        s.settings[line.substr(0, eq)] = line.substr(eq + 3);
    }
    s.users = read_ids("users", in);
    s.items = read_ids("items", in);
    std::string name;
    Matrix m;
    while (read_tensor(in, name, m)) s.tensors.emplace_back(name, std::move(m));
    return s;
}

void save_snapshot(const Snapshot& s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    write_snapshot(s, out);
}

Snapshot load_snapshot(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    return read_snapshot(in);
}

Snapshot make_snapshot(const GnnModel& model, const ImportanceConfig& sampler, const IdMap& users,
                       const IdMap& items) {
    Snapshot s;
    s.kind = "gnn";
    const auto& c = model.config();
    s.settings["model.d"] = std::to_string(c.dim);
    s.settings["model.layers"] = std::to_string(c.layers);
    s.settings["model.aggregator"] = to_string(c.aggregator);
    s.settings["model.head"] = to_string(c.head);
    s.settings["model.leaky_slope"] = format_double(c.leaky_slope);
    s.settings["model.rating_levels"] = std::to_string(model.rating_levels());
    s.settings["model.users"] = std::to_string(model.n_users());
    s.settings["model.items"] = std::to_string(model.n_items());
    s.settings["sampler.sample_size"] = std::to_string(sampler.sample_size);
    s.settings["sampler.mode"] = to_string(sampler.mode);
    s.settings["sampler.seed"] = std::to_string(sampler.seed);
    s.users = users;
    s.items = items;
    for (const auto* p : model.all_parameters()) s.tensors.emplace_back(p->name, p->value);
    return s;
}

Snapshot make_snapshot(const BprModel& model, const IdMap& users, const IdMap& items) {
    Snapshot s;
    s.kind = "bpr";
    s.settings["model.d"] = std::to_string(model.dim());
    s.settings["model.users"] = std::to_string(model.n_users());
    s.settings["model.items"] = std::to_string(model.n_items());
    s.users = users;
    s.items = items;
    s.tensors.emplace_back(model.user_factors.name, model.user_factors.value);
    s.tensors.emplace_back(model.item_factors.name, model.item_factors.value);
    return s;
}

GnnModel gnn_from_snapshot(const Snapshot& s) {
    if (s.kind != "gnn") throw SchemaError("snapshot holds a '" + s.kind + "' model, expected gnn");
    ModelConfig c;
    c.dim = parse_value<std::size_t>(s, "model.d");
    c.layers = parse_value<std::size_t>(s, "model.layers");
    c.aggregator = parse_aggregator(s.setting("model.aggregator"));
    c.head = parse_head(s.setting("model.head"));
    c.leaky_slope = parse_value<double>(s, "model.leaky_slope");
    GnnModel model(parse_value<std::size_t>(s, "model.users"), parse_value<std::size_t>(s, "model.items"),
                   parse_value<int>(s, "model.rating_levels"), c, 0);
    copy_tensors(s, model.all_parameters());
    return model;
}

ImportanceConfig sampler_from_snapshot(const Snapshot& s) {
    ImportanceConfig c;
    c.sample_size = parse_value<std::size_t>(s, "sampler.sample_size");
    c.mode = parse_sample_mode(s.setting("sampler.mode"));
    c.seed = parse_value<std::uint64_t>(s, "sampler.seed");
    return c;
}

BprModel bpr_from_snapshot(const Snapshot& s) {
    if (s.kind != "bpr") throw SchemaError("snapshot holds a '" + s.kind + "' model, expected bpr");
    BprModel model(parse_value<std::size_t>(s, "model.users"), parse_value<std::size_t>(s, "model.items"),
                   parse_value<std::size_t>(s, "model.d"), 0);
    copy_tensors(s, {&model.user_factors, &model.item_factors});
    return model;
}

std::size_t snapshot_dim(const Snapshot& s) {
    return parse_value<std::size_t>(s, "model.d");
}

} // namespace gnnrec
