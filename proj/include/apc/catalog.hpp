#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace apc {

enum class Task { correctness, applicability };
enum class Decision { positive, negative };
enum class ValueKind { text, numeric };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

// "Correct"/"Incorrect" for correctness, "Applicable"/"Inapplicable" for
// applicability. The positive class is Correct/Applicable.
std::string positive_label(Task t);
std::string negative_label(Task t);
std::string decision_label(Task t, Decision d);

struct ProductCategory {
    std::string id;
    std::string name;
    std::string definition;
};

struct StructuredAttribute {
    std::string id;
    std::string name;
    std::string definition;
    ValueKind value_kind = ValueKind::text;
};

struct Product {
    std::string id;
    std::string pc_id;
    std::string title;
    std::string description;
    std::vector<std::string> bullets;
    std::map<std::string, std::string> sa_values; // sa_id -> value
};

struct LabeledCase {
    std::string product_id;
    std::string sa_id;
    std::string test_value;
    Task task = Task::correctness;
    Decision gold = Decision::positive;
    std::string language = "en";
    // Content-derived at assembly: product|sa|task|value|language, with a
    // "#n" suffix for exact duplicates. Stable under input-record reordering.
    std::string key;
};

struct PcSa {
    std::string pc_id;
    std::string sa_id;
    auto operator<=>(const PcSa&) const = default;
};

struct LoadStats {
    std::size_t pcs = 0;
    std::size_t sas = 0;
    std::size_t products = 0;
    std::size_t cases = 0;
    std::size_t unknown_fields = 0;
};

// Immutable after assembly; safe to share across concurrent readers.
class Catalog {
public:
    Catalog() = default;

    // Assembles indices and case keys. Does not reject bad data; use
    // validate_catalog (or load_catalog, which checks with line numbers).
    static Catalog build(std::vector<ProductCategory> pcs,
                         std::vector<StructuredAttribute> sas,
                         std::vector<Product> products,
                         std::vector<LabeledCase> cases);

    const std::vector<ProductCategory>& pcs() const { return pcs_; }
    const std::vector<StructuredAttribute>& sas() const { return sas_; }
    const std::vector<Product>& products() const { return products_; }
    const std::vector<LabeledCase>& cases() const { return cases_; }

    const ProductCategory* find_pc(const std::string& id) const;
    const StructuredAttribute* find_sa(const std::string& id) const;
    const Product* find_product(const std::string& id) const;
    const LabeledCase* find_case(const std::string& key) const;

    const LoadStats& stats() const { return stats_; }
    void set_stats(LoadStats s) { stats_ = s; }

private:
    std::vector<ProductCategory> pcs_;
    std::vector<StructuredAttribute> sas_;
    std::vector<Product> products_;
    std::vector<LabeledCase> cases_;
    std::unordered_map<std::string, std::size_t> pc_idx_, sa_idx_, product_idx_, case_idx_;
    LoadStats stats_;
};

enum class ViolationKind {
    missing_definition,
    dangling_reference,
    empty_unstructured, // product title is empty
    duplicate_id,
    empty_catalog,
};

std::string violation_kind_name(ViolationKind k);

struct Violation {
    ViolationKind kind;
    std::string subject; // offending id or key
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool empty() const { return violations.empty(); }
    std::size_t count(ViolationKind k) const;
};

// Loads newline-delimited JSON records with a "kind" discriminator
// (pc | sa | product | case) from a file or a directory of *.jsonl files.
// Malformed record -> ParseError with file:line; dangling reference or
// duplicate id -> IntegrityError (duplicates list both lines). Unknown
// fields are ignored and counted in stats().
Catalog load_catalog(const std::filesystem::path& path);

// Canonical JSONL re-serialization; load(save(c)) == c field-for-field.
void save_catalog(const Catalog& catalog, const std::filesystem::path& path);

// Data-quality report: empty definitions, dangling references, empty titles,
// duplicate ids, empty catalog. Violations are data, not errors.
ValidationReport validate_catalog(const Catalog& catalog);

// Unique (pc_id, sa_id) pairs occurring in labeled cases, lexicographically
// ordered by pc_id then sa_id.
std::vector<PcSa> target_pairs(const Catalog& catalog);

} // namespace apc
