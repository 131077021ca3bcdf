#pragma once

#include "gnnrec/bpr.hpp"
#include "gnnrec/graph_store.hpp"
#include "gnnrec/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace gnnrec {

/// Fraction of (positive, negative) pairs ordered correctly, ties counting
/// one half. Throws UndefinedMetricError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

/// sum_{p <= k} rel_p / log2(p + 1) over the first k entries.
double dcg_at_k(std::span<const int> ranked_relevance, std::size_t k);

/// DCG@k of the ranking divided by DCG@k of the ideal reordering. Throws
/// UndefinedMetricError when nothing is relevant, ConfigError for k = 0.
double ndcg_at_k(std::span<const int> ranked_relevance, std::size_t k);

/// Single scoring interface shared by every model under evaluation. Scores
/// only need to order items; they need not be probabilities.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual std::string name() const = 0;
    virtual std::size_t n_users() const = 0;
    virtual std::size_t n_items() const = 0;
    virtual double score(Index user, Index item) const = 0;
};

/// Scores with the prediction head's logit over precomputed final
/// representations (same order as the sigmoid probability).
class GnnScorer : public Scorer {
public:
    GnnScorer(const GnnModel& model, Representations reps);
    std::string name() const override { return "gnn"; }
    std::size_t n_users() const override { return reps_.users.rows(); }
    std::size_t n_items() const override { return reps_.items.rows(); }
    double score(Index user, Index item) const override;

private:
    const GnnModel& model_;
    Representations reps_;
};

class BprScorer : public Scorer {
public:
    explicit BprScorer(const BprModel& model) : model_(model) {}
    std::string name() const override { return "bpr"; }
    std::size_t n_users() const override { return model_.n_users(); }
    std::size_t n_items() const override { return model_.n_items(); }
    double score(Index user, Index item) const override { return bpr_score(model_, user, item); }

private:
    const BprModel& model_;
};

struct EvalProtocol {
    std::size_t negatives = 99;
    std::vector<std::size_t> ks{1, 2, 10};
    std::uint64_t seed = 0;

    /// e.g. `sampled-negatives:N=99;seed=7;ks=1/2/10` (comma free).
    std::string describe() const;
};

struct MetricsReport {
    std::string model;
    std::string dataset;
    double auc = 0.0;
    std::map<std::size_t, double> ndcg;
    std::size_t n_users_evaluated = 0;
    std::size_t n_users_skipped = 0; ///< users without held-out positives
    std::string protocol;
};

/// Each held-out positive is ranked against `negatives` items drawn without
/// replacement from the items the user has no train or test interaction
/// with (per-user seeded stream). AUC is averaged over all ranked lists;
/// NDCG@k is averaged per user, then over users.
MetricsReport evaluate(const Scorer& scorer, const InteractionGraph& train, std::span<const Edge> test,
                       const EvalProtocol& protocol, const std::string& dataset);

/// Header `model,dataset,auc,ndcg@k...,n_users,protocol`.
std::string report_header(const std::vector<std::size_t>& ks);
void write_report_csv(std::span<const MetricsReport> reports, std::ostream& out);
std::vector<MetricsReport> read_report_csv(std::istream& in);

/// Concatenates the rows of several report files. All must share one
/// header; otherwise SchemaError.
std::vector<MetricsReport> merge_reports(std::span<const std::vector<MetricsReport>> reports);

/// Fixed-width table with models as rows and metrics as columns.
void print_comparison(std::span<const MetricsReport> rows, std::ostream& out);

} // namespace gnnrec
