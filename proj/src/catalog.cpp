#include "apc/catalog.hpp"

#include "apc/errors.hpp"
#include "apc/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

using json = nlohmann::json;

namespace apc {

std::string task_name(Task t) {
    return t == Task::correctness ? "correctness" : "applicability";
}

Task task_from_name(const std::string& name) {
    if (name == "correctness") return Task::correctness;
    if (name == "applicability") return Task::applicability;
    throw ParseError("unknown task: " + name);
}

std::string positive_label(Task t) {
    return t == Task::correctness ? "Correct" : "Applicable";
}

std::string negative_label(Task t) {
    return t == Task::correctness ? "Incorrect" : "Inapplicable";
}

std::string decision_label(Task t, Decision d) {
    return d == Decision::positive ? positive_label(t) : negative_label(t);
}

std::string violation_kind_name(ViolationKind k) {
    switch (k) {
        case ViolationKind::missing_definition: return "MissingDefinition";
        case ViolationKind::dangling_reference: return "DanglingReference";
        case ViolationKind::empty_unstructured: return "EmptyUnstructured";
        case ViolationKind::duplicate_id: return "DuplicateId";
        case ViolationKind::empty_catalog: return "EmptyCatalog";
    }
    return "Unknown";
}

std::size_t ValidationReport::count(ViolationKind k) const {
    return static_cast<std::size_t>(
        std::count_if(violations.begin(), violations.end(),
                      [k](const Violation& v) { return v.kind == k; }));
}

namespace {

std::string case_content_key(const LabeledCase& c) {
    return c.product_id + "|" + c.sa_id + "|" + task_name(c.task) + "|" + c.test_value + "|" +
           c.language;
}

} // namespace

Catalog Catalog::build(std::vector<ProductCategory> pcs, std::vector<StructuredAttribute> sas,
                       std::vector<Product> products, std::vector<LabeledCase> cases) {
    Catalog c;
    c.pcs_ = std::move(pcs);
    c.sas_ = std::move(sas);
    c.products_ = std::move(products);
    c.cases_ = std::move(cases);

    for (std::size_t i = 0; i < c.pcs_.size(); ++i) c.pc_idx_.emplace(c.pcs_[i].id, i);
    for (std::size_t i = 0; i < c.sas_.size(); ++i) c.sa_idx_.emplace(c.sas_[i].id, i);
    for (std::size_t i = 0; i < c.products_.size(); ++i)
        c.product_idx_.emplace(c.products_[i].id, i);

    std::map<std::string, int> seen;
    for (std::size_t i = 0; i < c.cases_.size(); ++i) {
        LabeledCase& lc = c.cases_[i];
        std::string key = case_content_key(lc);
        const int occurrence = ++seen[key];
        if (occurrence > 1) key += "#" + std::to_string(occurrence);
        lc.key = key;
        c.case_idx_.emplace(lc.key, i);
    }

    c.stats_.pcs = c.pcs_.size();
    c.stats_.sas = c.sas_.size();
    c.stats_.products = c.products_.size();
    c.stats_.cases = c.cases_.size();
    return c;
}

const ProductCategory* Catalog::find_pc(const std::string& id) const {
    auto it = pc_idx_.find(id);
    return it == pc_idx_.end() ? nullptr : &pcs_[it->second];
}

const StructuredAttribute* Catalog::find_sa(const std::string& id) const {
    auto it = sa_idx_.find(id);
    return it == sa_idx_.end() ? nullptr : &sas_[it->second];
}

const Product* Catalog::find_product(const std::string& id) const {
    auto it = product_idx_.find(id);
    return it == product_idx_.end() ? nullptr : &products_[it->second];
}

const LabeledCase* Catalog::find_case(const std::string& key) const {
    auto it = case_idx_.find(key);
    return it == case_idx_.end() ? nullptr : &cases_[it->second];
}

namespace {

struct LineRef {
    std::string file;
    std::size_t line = 0;
    std::string str() const { return file + ":" + std::to_string(line); }
};

ValueKind value_kind_from(const std::string& s, const LineRef& at) {
    if (s == "text") return ValueKind::text;
    if (s == "numeric") return ValueKind::numeric;
    throw ParseError(at.str() + ": unknown value_kind '" + s + "'");
}

Decision gold_from(const std::string& s, const LineRef& at) {
    if (s == "positive") return Decision::positive;
    if (s == "negative") return Decision::negative;
    throw ParseError(at.str() + ": unknown gold label '" + s + "'");
}

std::string require_string(const json& record, const char* field, const LineRef& at) {
    auto it = record.find(field);
    if (it == record.end() || !it->is_string()) {
        throw ParseError(at.str() + ": missing or non-string field '" + field + "'");
    }
    return it->get<std::string>();
}

std::string optional_string(const json& record, const char* field) {
    auto it = record.find(field);
    if (it == record.end() || !it->is_string()) return "";
    return it->get<std::string>();
}

std::size_t count_unknown_fields(const json& record, const std::set<std::string>& known) {
    std::size_t n = 0;
    for (auto it = record.begin(); it != record.end(); ++it) {
        if (!known.count(it.key())) ++n;
    }
    return n;
}

struct RawRecords {
    std::vector<std::pair<ProductCategory, LineRef>> pcs;
    std::vector<std::pair<StructuredAttribute, LineRef>> sas;
    std::vector<std::pair<Product, LineRef>> products;
    std::vector<std::pair<LabeledCase, LineRef>> cases;
    std::size_t unknown_fields = 0;
};

void parse_record(const json& record, const LineRef& at, RawRecords& out) {
    const std::string kind = require_string(record, "kind", at);
    if (kind == "pc") {
        static const std::set<std::string> known{"kind", "id", "name", "definition"};
        out.unknown_fields += count_unknown_fields(record, known);
        ProductCategory pc;
        pc.id = require_string(record, "id", at);
        pc.name = optional_string(record, "name");
        pc.definition = optional_string(record, "definition");
        if (pc.id.empty()) throw ParseError(at.str() + ": pc with empty id");
        out.pcs.emplace_back(std::move(pc), at);
    } else if (kind == "sa") {
        static const std::set<std::string> known{"kind", "id", "name", "definition", "value_kind"};
        out.unknown_fields += count_unknown_fields(record, known);
        StructuredAttribute sa;
        sa.id = require_string(record, "id", at);
        sa.name = optional_string(record, "name");
        sa.definition = optional_string(record, "definition");
        const std::string vk = optional_string(record, "value_kind");
        sa.value_kind = vk.empty() ? ValueKind::text : value_kind_from(vk, at);
        if (sa.id.empty()) throw ParseError(at.str() + ": sa with empty id");
        out.sas.emplace_back(std::move(sa), at);
    } else if (kind == "product") {
        static const std::set<std::string> known{"kind",    "id",      "pc_id",    "title",
                                                 "description", "bullets", "sa_values"};
        out.unknown_fields += count_unknown_fields(record, known);
        Product p;
        p.id = require_string(record, "id", at);
        p.pc_id = require_string(record, "pc_id", at);
        p.title = optional_string(record, "title");
        p.description = optional_string(record, "description");
        if (auto it = record.find("bullets"); it != record.end()) {
            if (!it->is_array()) throw ParseError(at.str() + ": bullets must be an array");
            for (const auto& b : *it) {
                if (!b.is_string()) throw ParseError(at.str() + ": bullets must be strings");
                p.bullets.push_back(b.get<std::string>());
            }
        }
        if (auto it = record.find("sa_values"); it != record.end()) {
            if (!it->is_object()) throw ParseError(at.str() + ": sa_values must be an object");
            for (auto v = it->begin(); v != it->end(); ++v) {
                if (!v.value().is_string())
                    throw ParseError(at.str() + ": sa_values entries must be strings");
                p.sa_values[v.key()] = v.value().get<std::string>();
            }
        }
        if (p.id.empty()) throw ParseError(at.str() + ": product with empty id");
        out.products.emplace_back(std::move(p), at);
    } else if (kind == "case") {
        static const std::set<std::string> known{"kind", "product_id", "sa_id",
                                                 "test_value", "task", "gold", "language"};
        out.unknown_fields += count_unknown_fields(record, known);
        LabeledCase c;
        c.product_id = require_string(record, "product_id", at);
        c.sa_id = require_string(record, "sa_id", at);
        c.test_value = require_string(record, "test_value", at);
        c.task = task_from_name(require_string(record, "task", at));
        c.gold = gold_from(require_string(record, "gold", at), at);
        const std::string lang = optional_string(record, "language");
        c.language = lang.empty() ? "en" : lang;
        out.cases.emplace_back(std::move(c), at);
    } else {
        throw ParseError(at.str() + ": unknown record kind '" + kind + "'");
    }
}

void parse_jsonl_file(const std::filesystem::path& path, RawRecords& out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read catalog file: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const LineRef at{path.filename().string(), line_no};
        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(at.str() + ": malformed JSON record: " + e.what());
        }
        if (!record.is_object()) throw ParseError(at.str() + ": record is not an object");
        parse_record(record, at, out);
    }
}

template <typename T>
void check_duplicates(const std::vector<std::pair<T, LineRef>>& items, const char* what) {
    std::map<std::string, LineRef> seen;
    for (const auto& [item, at] : items) {
        auto [it, inserted] = seen.emplace(item.id, at);
        if (!inserted) {
            throw IntegrityError(std::string("duplicate ") + what + " id '" + item.id +
                                 "' at " + it->second.str() + " and " + at.str());
        }
    }
}

} // namespace

Catalog load_catalog(const std::filesystem::path& path) {
    RawRecords raw;
    if (std::filesystem::is_directory(path)) {
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(path)) {
            if (entry.is_regular_file() && entry.path().extension() == ".jsonl") {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) parse_jsonl_file(f, raw);
    } else if (std::filesystem::exists(path)) {
        parse_jsonl_file(path, raw);
    } else {
        throw ConfigError("catalog path does not exist: " + path.string());
    }

    check_duplicates(raw.pcs, "pc");
    check_duplicates(raw.sas, "sa");
    check_duplicates(raw.products, "product");

    std::set<std::string> pc_ids, sa_ids, product_ids;
    for (const auto& [pc, at] : raw.pcs) pc_ids.insert(pc.id);
    for (const auto& [sa, at] : raw.sas) sa_ids.insert(sa.id);
    for (const auto& [p, at] : raw.products) product_ids.insert(p.id);

    for (const auto& [p, at] : raw.products) {
        if (!pc_ids.count(p.pc_id)) {
            throw IntegrityError(at.str() + ": product '" + p.id +
                                 "' references unknown pc_id '" + p.pc_id + "'");
        }
        for (const auto& [sa_id, value] : p.sa_values) {
            if (!sa_ids.count(sa_id)) {
                throw IntegrityError(at.str() + ": product '" + p.id +
                                     "' has value for unknown sa_id '" + sa_id + "'");
            }
        }
    }
    for (const auto& [c, at] : raw.cases) {
        if (!product_ids.count(c.product_id)) {
            throw IntegrityError(at.str() + ": case references unknown product_id '" +
                                 c.product_id + "'");
        }
        if (!sa_ids.count(c.sa_id)) {
            throw IntegrityError(at.str() + ": case references unknown sa_id '" + c.sa_id + "'");
        }
    }

    std::vector<ProductCategory> pcs;
    std::vector<StructuredAttribute> sas;
    std::vector<Product> products;
    std::vector<LabeledCase> cases;
    pcs.reserve(raw.pcs.size());
    sas.reserve(raw.sas.size());
    products.reserve(raw.products.size());
    cases.reserve(raw.cases.size());
    for (auto& [pc, at] : raw.pcs) pcs.push_back(std::move(pc));
    for (auto& [sa, at] : raw.sas) sas.push_back(std::move(sa));
    for (auto& [p, at] : raw.products) products.push_back(std::move(p));
    for (auto& [c, at] : raw.cases) cases.push_back(std::move(c));

    Catalog catalog = Catalog::build(std::move(pcs), std::move(sas), std::move(products),
                                     std::move(cases));
    LoadStats stats = catalog.stats();
    stats.unknown_fields = raw.unknown_fields;
    catalog.set_stats(stats);
    return catalog;
}

void save_catalog(const Catalog& catalog, const std::filesystem::path& path) {
    std::ostringstream out;
    for (const auto& pc : catalog.pcs()) {
        json j{{"kind", "pc"}, {"id", pc.id}, {"name", pc.name}, {"definition", pc.definition}};
        out << j.dump() << "\n";
    }
    for (const auto& sa : catalog.sas()) {
        json j{{"kind", "sa"},
               {"id", sa.id},
               {"name", sa.name},
               {"definition", sa.definition},
               {"value_kind", sa.value_kind == ValueKind::text ? "text" : "numeric"}};
        out << j.dump() << "\n";
    }
    for (const auto& p : catalog.products()) {
        json j{{"kind", "product"}, {"id", p.id},       {"pc_id", p.pc_id},
               {"title", p.title},  {"description", p.description}};
        j["bullets"] = p.bullets;
        j["sa_values"] = p.sa_values;
        out << j.dump() << "\n";
    }
    for (const auto& c : catalog.cases()) {
        json j{{"kind", "case"},
               {"product_id", c.product_id},
               {"sa_id", c.sa_id},
               {"test_value", c.test_value},
               {"task", task_name(c.task)},
               {"gold", c.gold == Decision::positive ? "positive" : "negative"},
               {"language", c.language}};
        out << j.dump() << "\n";
    }
    atomic_write_file(path, out.str());
}

ValidationReport validate_catalog(const Catalog& catalog) {
    ValidationReport report;
    auto add = [&report](ViolationKind kind, const std::string& subject, const std::string& msg) {
        report.violations.push_back({kind, subject, msg});
    };

    if (catalog.pcs().empty() && catalog.sas().empty() && catalog.products().empty() &&
        catalog.cases().empty()) {
        add(ViolationKind::empty_catalog, "", "catalog has no records");
        return report;
    }

    std::set<std::string> seen;
    for (const auto& pc : catalog.pcs()) {
        if (!seen.insert("pc:" + pc.id).second)
            add(ViolationKind::duplicate_id, pc.id, "duplicate pc id");
        if (trim(pc.definition).empty())
            add(ViolationKind::missing_definition, pc.id, "pc '" + pc.id + "' has no definition");
    }
    for (const auto& sa : catalog.sas()) {
        if (!seen.insert("sa:" + sa.id).second)
            add(ViolationKind::duplicate_id, sa.id, "duplicate sa id");
        if (trim(sa.definition).empty())
            add(ViolationKind::missing_definition, sa.id, "sa '" + sa.id + "' has no definition");
    }
    for (const auto& p : catalog.products()) {
        if (!seen.insert("product:" + p.id).second)
            add(ViolationKind::duplicate_id, p.id, "duplicate product id");
        if (trim(p.title).empty())
            add(ViolationKind::empty_unstructured, p.id, "product '" + p.id + "' has empty title");
        if (!catalog.find_pc(p.pc_id))
            add(ViolationKind::dangling_reference, p.id,
                "product '" + p.id + "' references unknown pc_id '" + p.pc_id + "'");
        for (const auto& [sa_id, value] : p.sa_values) {
            if (!catalog.find_sa(sa_id))
                add(ViolationKind::dangling_reference, p.id,
                    "product '" + p.id + "' has value for unknown sa_id '" + sa_id + "'");
        }
    }
    for (const auto& c : catalog.cases()) {
        if (!catalog.find_product(c.product_id))
            add(ViolationKind::dangling_reference, c.key,
                "case references unknown product_id '" + c.product_id + "'");
        if (!catalog.find_sa(c.sa_id))
            add(ViolationKind::dangling_reference, c.key,
                "case references unknown sa_id '" + c.sa_id + "'");
    }
    return report;
}

std::vector<PcSa> target_pairs(const Catalog& catalog) {
    std::set<PcSa> pairs;
    for (const auto& c : catalog.cases()) {
        const Product* p = catalog.find_product(c.product_id);
        if (!p) throw IntegrityError("case '" + c.key + "' references unknown product");
        pairs.insert(PcSa{p->pc_id, c.sa_id});
    }
    return {pairs.begin(), pairs.end()};
}

} // namespace apc
