#pragma once

#include "apc/catalog.hpp"
#include "apc/classifier.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace apc {

// Counts relative to a declared positive class; tp+fp+fn+tn == scored cases.
struct ConfusionMatrix {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;
    std::int64_t total() const { return tp + fp + fn + tn; }
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool precision_zero_div = false;
    bool recall_zero_div = false;
    bool f1_zero_div = false;
};

struct EvalReport {
    Task task = Task::correctness;
    Mode mode = Mode::baseline;
    std::string model_id;
    std::string negative_class_label;
    std::string positive_class_label;
    ClassMetrics negative_class; // reported first
    ClassMetrics positive_class;
    double accuracy = 0.0;
    std::int64_t cases = 0;
    std::int64_t positive_cases = 0;
    std::int64_t negative_cases = 0;
    std::int64_t defaulted_parses = 0;
    std::optional<double> effort_minutes; // user-supplied ledger annotation
};

struct BootstrapConfig {
    int draws = 5000;      // B
    double fraction = 0.8; // per-class subsample fraction, ceiling rounding
    std::uint64_t seed = 0;
    int workers = 8;
};

struct BootstrapResult {
    double mean_delta_f1 = 0.0;
    double p_value = 1.0; // >= 1/(B+1), plus-one correction
    int draws = 0;
    double fraction = 0.0;
    std::uint64_t seed = 0;
    std::int64_t positive_draw_size = 0;
    std::int64_t negative_draw_size = 0;
};

// Gold labels come from the cases; every prediction must have one.
ConfusionMatrix confusion_matrix(const PredictionSet& predictions,
                                 const std::vector<LabeledCase>& cases, Decision positive);

// P = tp/(tp+fp), R = tp/(tp+fn), F1 = 2PR/(P+R); zero denominators yield 0
// with the matching flag set, so reports are always serializable.
ClassMetrics class_metrics(const ConfusionMatrix& cm);

// Both-class metrics (negative class first) plus accuracy. Predictions must
// be nonempty and all referenced cases must share one task.
EvalReport evaluate(const PredictionSet& predictions, const std::vector<LabeledCase>& cases,
                    std::optional<double> effort_minutes = std::nullopt);

// One class-balanced draw: ceil(fraction*n_c) distinct positions per gold
// class, derived from (seed, draw_index) so draws are independent of thread
// count. Returns positions into the sorted-by-case-key order.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
bootstrap_draw(std::size_t positive_count, std::size_t negative_count, double fraction,
               std::uint64_t seed, int draw_index);

// Paired subsampled bootstrap on negative-class F1: B class-balanced
// fraction-sized draws without replacement over cases sorted by key;
// delta = F1_A - F1_B per draw; p = (#{delta <= 0} + 1) / (B + 1).
BootstrapResult paired_bootstrap(const PredictionSet& predictions_a,
                                 const PredictionSet& predictions_b,
                                 const std::vector<LabeledCase>& cases,
                                 const BootstrapConfig& config = {});

// Aligned plain-text table, negative class first, columns in
// precision / recall / F1 order.
std::string eval_report_table(const EvalReport& report);

std::string eval_report_json(const EvalReport& report);
std::string bootstrap_result_json(const BootstrapResult& result);

} // namespace apc
