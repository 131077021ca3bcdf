#include "gnnrec/eval.hpp"

#include "gnnrec/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace gnnrec {

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
    std::size_t n_pos = 0;
    for (int l : labels) n_pos += l != 0;
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("auc needs at least one positive and one negative");

    // Mann-Whitney: rank sum of positives with tied groups sharing their
    // average rank. Average ranks are half-integers, so the sum is exact.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::size_t pos_in_group = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            pos_in_group += labels[order[j]] != 0;
            ++j;
        }
        // ranks i+1 .. j, average (i + 1 + j) / 2
        rank_sum += static_cast<double>(pos_in_group) * 0.5 * static_cast<double>(i + 1 + j);
        i = j;
    }
    const double np = static_cast<double>(n_pos);
    const double u = rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * static_cast<double>(n_neg));
}

double dcg_at_k(std::span<const int> ranked_relevance, std::size_t k) {
    double dcg = 0.0;
    const std::size_t n = std::min(k, ranked_relevance.size());
    for (std::size_t p = 0; p < n; ++p)
        if (ranked_relevance[p] != 0) dcg += 1.0 / std::log2(static_cast<double>(p + 2));
    return dcg;
}

double ndcg_at_k(std::span<const int> ranked_relevance, std::size_t k) {
    if (k < 1) throw ConfigError("ndcg: k must be >= 1");
    std::vector<int> ideal(ranked_relevance.begin(), ranked_relevance.end());
    for (auto& r : ideal) r = r != 0;
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    if (ideal.empty() || ideal[0] == 0) throw UndefinedMetricError("ndcg: no relevant items in the list");
    return dcg_at_k(ranked_relevance, k) / dcg_at_k(ideal, k);
}

GnnScorer::GnnScorer(const GnnModel& model, Representations reps) : model_(model), reps_(std::move(reps)) {}

double GnnScorer::score(Index user, Index item) const {
    if (user < 0 || static_cast<std::size_t>(user) >= n_users() || item < 0 ||
        static_cast<std::size_t>(item) >= n_items())
        throw BoundsError("score: index out of range");
    return predict_logit(reps_.users.row(static_cast<std::size_t>(user)), reps_.items.row(static_cast<std::size_t>(item)),
                         model_.config().head, model_.params());
}

std::string EvalProtocol::describe() const {
    std::string ks_text;
    for (std::size_t i = 0; i < ks.size(); ++i) ks_text += (i ? "/" : "") + std::to_string(ks[i]);
    return "sampled-negatives:N=" + std::to_string(negatives) + ";seed=" + std::to_string(seed) + ";ks=" + ks_text;
}

namespace {

struct UserResult {
    bool evaluated = false;
    double auc_sum = 0.0;
    std::size_t lists = 0;
    std::vector<double> ndcg; // per k, mean over this user's lists
};

} // namespace

MetricsReport evaluate(const Scorer& scorer, const InteractionGraph& train, std::span<const Edge> test,
                       const EvalProtocol& protocol, const std::string& dataset) {
    if (test.empty()) throw EmptyInputError("no held-out edges to evaluate");
    if (protocol.negatives < 1) throw ConfigError("eval.negatives must be >= 1");
    if (protocol.ks.empty()) throw ConfigError("eval.ks must not be empty");
    for (auto k : protocol.ks)
        if (k < 1) throw ConfigError("eval.ks entries must be >= 1");
    if (scorer.n_users() != train.n_users() || scorer.n_items() != train.n_items())
        throw CompatibilityError("model and graph node counts differ");

    const std::size_t n_users = train.n_users();
    const std::size_t n_items = train.n_items();
    std::vector<std::vector<Index>> held_out(n_users);
    for (const auto& e : test) {
        if (e.user < 0 || static_cast<std::size_t>(e.user) >= n_users || e.item < 0 ||
            static_cast<std::size_t>(e.item) >= n_items)
            throw BoundsError("test edge out of range");
        held_out[static_cast<std::size_t>(e.user)].push_back(e.item);
    }
    for (auto& items : held_out) std::sort(items.begin(), items.end());

    const auto stream = derive_seed(protocol.seed, "eval");
    const std::size_t n_ks = protocol.ks.size();
    std::vector<UserResult> results(n_users);
    const auto n = static_cast<std::int64_t>(n_users);
    bool short_pool = false;
    Index short_user = -1;

#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t ui = 0; ui < n; ++ui) {
        const auto u = static_cast<std::size_t>(ui);
        const auto& positives = held_out[u];
        if (positives.empty()) continue;
        std::vector<char> excluded(n_items, 0);
        for (const auto& nb : train.neighbors(Side::User, static_cast<Index>(u))) excluded[static_cast<std::size_t>(nb.index)] = 1;
        for (auto i : positives) excluded[static_cast<std::size_t>(i)] = 1;
        std::vector<Index> pool;
        for (std::size_t i = 0; i < n_items; ++i)
            if (!excluded[i]) pool.push_back(static_cast<Index>(i));
        if (pool.size() < protocol.negatives) {
#pragma omp critical
            {
                if (!short_pool || static_cast<Index>(u) < short_user) short_user = static_cast<Index>(u);
                short_pool = true;
            }
            continue;
        }
        Rng rng(derive_seed(stream, u));
        auto& res = results[u];
        res.evaluated = true;
        res.ndcg.assign(n_ks, 0.0);
        std::vector<Index> candidates(protocol.negatives + 1);
        std::vector<double> scores(protocol.negatives + 1);
        std::vector<int> labels(protocol.negatives + 1, 0);
        std::vector<std::size_t> order(protocol.negatives + 1);
        std::vector<int> ranked(protocol.negatives + 1);
        for (auto pos : positives) {
            candidates[0] = pos;
            for (std::size_t k = 0; k < protocol.negatives; ++k) {
                const auto j = k + uniform_index(rng, pool.size() - k);
                std::swap(pool[k], pool[j]);
                candidates[k + 1] = pool[k];
            }
            for (std::size_t c = 0; c < candidates.size(); ++c) {
                scores[c] = scorer.score(static_cast<Index>(u), candidates[c]);
                labels[c] = c == 0;
            }
            res.auc_sum += auc(scores, labels);
            // Rank by score descending, ties by ascending item index.
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                if (scores[a] != scores[b]) return scores[a] > scores[b];
                return candidates[a] < candidates[b];
            });
            for (std::size_t r = 0; r < order.size(); ++r) ranked[r] = labels[order[r]];
            for (std::size_t q = 0; q < n_ks; ++q) res.ndcg[q] += ndcg_at_k(ranked, protocol.ks[q]);
            ++res.lists;
        }
        for (auto& v : res.ndcg) v /= static_cast<double>(res.lists);
    }
    if (short_pool)
        throw EvaluationError("user " + std::to_string(short_user) + " has fewer than " +
                              std::to_string(protocol.negatives) + " unseen items to sample");

    MetricsReport report;
    report.model = scorer.name();
    report.dataset = dataset;
    report.protocol = protocol.describe();
    double auc_sum = 0.0;
    std::size_t lists = 0;
    std::vector<double> ndcg_sum(n_ks, 0.0);
    for (std::size_t u = 0; u < n_users; ++u) {
        const auto& res = results[u];
        if (!res.evaluated) {
            report.n_users_skipped += 1;
            continue;
        }
        ++report.n_users_evaluated;
        auc_sum += res.auc_sum;
        lists += res.lists;
        for (std::size_t q = 0; q < n_ks; ++q) ndcg_sum[q] += res.ndcg[q];
    }
    report.auc = auc_sum / static_cast<double>(lists);
    for (std::size_t q = 0; q < n_ks; ++q)
        report.ndcg[protocol.ks[q]] = ndcg_sum[q] / static_cast<double>(report.n_users_evaluated);
    return report;
}

std::string report_header(const std::vector<std::size_t>& ks) {
    std::string h = "model,dataset,auc";
    for (auto k : ks) h += ",ndcg@" + std::to_string(k);
    return h + ",n_users,protocol";
}

namespace {

std::vector<std::size_t> ks_of(const MetricsReport& r) {
    std::vector<std::size_t> ks;
    for (const auto& [k, v] : r.ndcg) ks.push_back(k);
    return ks;
}

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

} // namespace

void write_report_csv(std::span<const MetricsReport> reports, std::ostream& out) {
    if (reports.empty()) throw EmptyInputError("no reports to write");
    const auto ks = ks_of(reports[0]);
    out << report_header(ks) << '\n';
    for (const auto& r : reports) {
        if (ks_of(r) != ks) throw SchemaError("reports disagree on ndcg columns");
        for (const auto* field : {&r.model, &r.dataset, &r.protocol})
            if (field->find(',') != std::string::npos || field->find('\n') != std::string::npos)
                throw SchemaError("report field contains a comma or newline: " + *field);
        out << r.model << ',' << r.dataset << ',' << fixed(r.auc);
        for (const auto& [k, v] : r.ndcg) out << ',' << fixed(v);
        out << ',' << r.n_users_evaluated << ',' << r.protocol << '\n';
    }
    if (!out) throw IoError("failed to write report");
}

std::vector<MetricsReport> read_report_csv(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) throw SchemaError("report: missing header");
    const auto cols = split_csv(header);
    if (cols.size() < 5 || cols[0] != "model" || cols[1] != "dataset" || cols[2] != "auc" ||
        cols[cols.size() - 2] != "n_users" || cols.back() != "protocol")
        throw SchemaError("report: unexpected header '" + header + "'");
    std::vector<std::size_t> ks;
    for (std::size_t c = 3; c + 2 < cols.size(); ++c) {
        if (cols[c].rfind("ndcg@", 0) != 0) throw SchemaError("report: unexpected column '" + cols[c] + "'");
        try {
            ks.push_back(std::stoul(cols[c].substr(5)));
        } catch (const std::exception&) {
            throw SchemaError("report: bad ndcg column '" + cols[c] + "'");
        }
    }
    if (report_header(ks) != header) throw SchemaError("report: unexpected header '" + header + "'");

    std::vector<MetricsReport> out;
    std::string line;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != cols.size())
            throw SchemaError("report line " + std::to_string(n) + ": expected " + std::to_string(cols.size()) +
                              " columns, found " + std::to_string(cells.size()));
        MetricsReport r;
        r.model = cells[0];
        r.dataset = cells[1];
        try {
            r.auc = std::stod(cells[2]);
            for (std::size_t q = 0; q < ks.size(); ++q) r.ndcg[ks[q]] = std::stod(cells[3 + q]);
            r.n_users_evaluated = std::stoul(cells[cells.size() - 2]);
        } catch (const std::exception&) {
            throw ParseError("report line " + std::to_string(n) + ": bad number");
        }
        r.protocol = cells.back();
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<MetricsReport> merge_reports(std::span<const std::vector<MetricsReport>> reports) {
    std::vector<MetricsReport> out;
    for (const auto& file : reports)
        for (const auto& r : file) {
            if (!out.empty() && ks_of(r) != ks_of(out.front()))
                throw SchemaError("reports have different metric columns: " + report_header(ks_of(out.front())) +
                                  " vs " + report_header(ks_of(r)));
            out.push_back(r);
        }
    if (out.empty()) throw EmptyInputError("no report rows to compare");
    return out;
}

void print_comparison(std::span<const MetricsReport> rows, std::ostream& out) {
    if (rows.empty()) return;
    std::vector<std::string> head{"model", "dataset", "AUC"};
    for (const auto& [k, v] : rows[0].ndcg) head.push_back("NDCG@" + std::to_string(k));
    head.push_back("users");
    std::vector<std::vector<std::string>> table{head};
    for (const auto& r : rows) {
        std::vector<std::string> cells{r.model, r.dataset, fixed(r.auc).substr(0, 6)};
        for (const auto& [k, v] : r.ndcg) cells.push_back(fixed(v).substr(0, 6));
        cells.push_back(std::to_string(r.n_users_evaluated));
        table.push_back(std::move(cells));
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& row : table)
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    for (const auto& row : table) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out << "  ";
            out << std::left << std::setw(static_cast<int>(width[c])) << row[c];
        }
        out << '\n';
    }
}

} // namespace gnnrec
