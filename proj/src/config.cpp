#include "gnnrec/config.hpp"

#include "gnnrec/error.hpp"
#include "gnnrec/rng.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

namespace gnnrec {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> table{
        {"dataset.format", "movielens"},
        {"dataset.path", ""},
        {"dataset.name", ""},
        {"dataset.min_interactions", "0"},
        {"dataset.user_fraction", "1"},
        {"split.test_fraction", "0.2"},
        {"sampler.sample_size", "10"},
        {"sampler.mode", "topk"},
        {"model.name", "gnn"},
        {"model.d", "64"},
        {"model.layers", "2"},
        {"model.aggregator", "attention"},
        {"model.head", "dot"},
        {"training.learning_rate", "0.001"},
        {"training.lambda", "0.0001"},
        {"training.epochs", "30"},
        {"training.batch_size", "1024"},
        {"training.negatives", "1"},
        {"training.optimizer", "adam"},
        {"eval.negatives", "99"},
        {"eval.ks", "1,2,10"},
        {"run.seed", "0"},
        {"run.output_dir", "out"},
        {"run.threads", "0"},
    };
    return table;
}

} // namespace

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = trim(value);
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

void RunConfig::merge(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(n) + ": expected 'section.key = value'");
        try {
            set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
        }
    }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    merge(in, path.string());
}

void RunConfig::write(std::ostream& out) const {
    for (const auto& [key, value] : values_) out << key << " = " << value << '\n';
    if (!out) throw IoError("failed to write config");
}

RunConfig RunConfig::resolved() const {
    RunConfig out = *this;
    out.set("dataset.name", dataset().name);
    return out;
}

std::size_t RunConfig::count(const std::string& key) const {
    const auto& text = get(key);
    std::size_t v = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc() || end != text.data() + text.size())
        throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
    return v;
}

double RunConfig::real(const std::string& key) const {
    const auto& text = get(key);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc() || end != text.data() + text.size() || !std::isfinite(v))
        throw ConfigError(key + ": expected a number, got '" + text + "'");
    return v;
}

std::uint64_t RunConfig::seed() const {
    const auto& text = get("run.seed");
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc() || end != text.data() + text.size())
        throw ConfigError("run.seed: expected a 64-bit unsigned integer, got '" + text + "'");
    return v;
}

DatasetConfig RunConfig::dataset() const {
    DatasetConfig d;
    const auto& format = get("dataset.format");
    if (format == "movielens") d.format = DatasetFormat::MovieLens;
    else if (format == "amazon") d.format = DatasetFormat::Amazon;
    else throw ConfigError("dataset.format: expected movielens or amazon, got '" + format + "'");
    d.path = get("dataset.path");
    d.name = get("dataset.name").empty() ? format : get("dataset.name");
    if (d.name.find_first_of(",\n") != std::string::npos) throw ConfigError("dataset.name must not contain commas");
    d.min_interactions = count("dataset.min_interactions");
    d.user_fraction = real("dataset.user_fraction");
    if (!(d.user_fraction > 0.0 && d.user_fraction <= 1.0))
        throw ConfigError("dataset.user_fraction must lie in (0, 1]");
    return d;
}

SplitSpec RunConfig::split() const {
    SplitSpec s;
    s.test_fraction = real("split.test_fraction");
    if (!(s.test_fraction > 0.0 && s.test_fraction < 1.0))
        throw ConfigError("split.test_fraction must lie in (0, 1)");
    s.seed = derive_seed(seed(), "split");
    return s;
}

ImportanceConfig RunConfig::sampler() const {
    ImportanceConfig c;
    c.sample_size = count("sampler.sample_size");
    if (c.sample_size < 1) throw ConfigError("sampler.sample_size must be >= 1");
    try {
        c.mode = parse_sample_mode(get("sampler.mode"));
    } catch (const Error& e) {
        throw ConfigError(std::string("sampler.mode: ") + e.what());
    }
    c.seed = derive_seed(seed(), "sampler");
    return c;
}

std::string RunConfig::model_name() const {
    const auto& name = get("model.name");
    if (name != "gnn" && name != "bpr") throw ConfigError("model.name: expected gnn or bpr, got '" + name + "'");
    return name;
}

ModelConfig RunConfig::model() const {
    ModelConfig c;
    c.dim = count("model.d");
    if (c.dim < 1) throw ConfigError("model.d must be >= 1");
    c.layers = count("model.layers");
    try {
        c.aggregator = parse_aggregator(get("model.aggregator"));
        c.head = parse_head(get("model.head"));
    } catch (const Error& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    return c;
}

TrainingConfig RunConfig::training() const {
    TrainingConfig c;
    c.learning_rate = real("training.learning_rate");
    c.lambda = real("training.lambda");
    c.epochs = count("training.epochs");
    c.batch_size = count("training.batch_size");
    c.negatives = count("training.negatives");
    try {
        c.optimizer = parse_optimizer(get("training.optimizer"));
    } catch (const Error& e) {
        throw ConfigError(std::string("training.optimizer: ") + e.what());
    }
    c.seed = derive_seed(seed(), "negatives");
    c.validate();
    return c;
}

EvalProtocol RunConfig::eval() const {
    EvalProtocol p;
    p.negatives = count("eval.negatives");
    if (p.negatives < 1) throw ConfigError("eval.negatives must be >= 1");
    p.ks.clear();
    const auto& text = get("eval.ks");
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = std::min(text.find(',', start), text.size());
        const auto piece = trim(text.substr(start, comma - start));
        std::size_t k = 0;
        const auto [end, ec] = std::from_chars(piece.data(), piece.data() + piece.size(), k);
        if (piece.empty() || ec != std::errc() || end != piece.data() + piece.size() || k < 1)
            throw ConfigError("eval.ks: expected comma-separated integers >= 1, got '" + text + "'");
        p.ks.push_back(k);
        start = comma + 1;
    }
    for (std::size_t i = 1; i < p.ks.size(); ++i)
        if (p.ks[i] <= p.ks[i - 1]) throw ConfigError("eval.ks must be strictly increasing");
    p.seed = derive_seed(seed(), "eval");
    return p;
}

std::filesystem::path RunConfig::output_dir() const {
    const auto& dir = get("run.output_dir");
    if (dir.empty()) throw ConfigError("run.output_dir must not be empty");
    return dir;
}

int RunConfig::threads() const {
    const auto n = count("run.threads");
    if (n > 4096) throw ConfigError("run.threads is implausibly large");
    return static_cast<int>(n);
}

void RunConfig::validate() const {
    dataset();
    split();
    sampler();
    model();
    model_name();
    training();
    eval();
    output_dir();
    threads();
}

} // namespace gnnrec
