#include "apc/classifier.hpp"

#include "apc/errors.hpp"
#include "apc/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

using json = nlohmann::json;

namespace apc {

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::baseline: return "baseline";
        case Mode::cot: return "cot";
        case Mode::apc: return "apc";
    }
    return "unknown";
}

Mode mode_from_name(const std::string& name) {
    if (name == "baseline") return Mode::baseline;
    if (name == "cot") return Mode::cot;
    if (name == "apc") return Mode::apc;
    throw ParseError("unknown mode: " + name);
}

std::size_t PredictionSet::defaulted_count() const {
    return static_cast<std::size_t>(
        std::count_if(results.begin(), results.end(), [](const ClassificationResult& r) {
            return r.parse_status == ParseStatus::defaulted;
        }));
}

std::pair<Decision, std::string> parse_decision(const std::string& raw, Task task) {
    std::istringstream in(raw);
    std::string line;
    std::optional<std::string> prediction;
    std::vector<std::string> rationale_lines;
    bool in_reasoning = false;

    while (std::getline(in, line)) {
        const std::string stripped = trim(line);
        if (starts_with_icase(stripped, "prediction:")) {
            in_reasoning = false;
            const std::string value =
                fold_label(stripped.substr(std::string("prediction:").size()));
            if (prediction && *prediction != value) {
                throw ParseError("ambiguous output: conflicting prediction tags");
            }
            prediction = value;
            continue;
        }
        if (starts_with_icase(stripped, "reasoning:")) {
            in_reasoning = true;
            const std::string first = trim(stripped.substr(std::string("reasoning:").size()));
            if (!first.empty()) rationale_lines.push_back(first);
            continue;
        }
        if (in_reasoning && !stripped.empty()) rationale_lines.push_back(stripped);
    }

    if (!prediction) throw ParseError("output contains no prediction tag");

    Decision decision;
    if (*prediction == fold_label(positive_label(task))) {
        decision = Decision::positive;
    } else if (*prediction == fold_label(negative_label(task))) {
        decision = Decision::negative;
    } else {
        throw ParseError("unrecognized label '" + *prediction + "' for task " + task_name(task));
    }

    std::string rationale;
    for (std::size_t i = 0; i < rationale_lines.size(); ++i) {
        if (i > 0) rationale += "\n";
        rationale += rationale_lines[i];
    }
    return {decision, rationale};
}

ParsedWithPolicy parse_with_default(const std::string& raw, Task task) {
    ParsedWithPolicy out;
    try {
        auto [decision, rationale] = parse_decision(raw, task);
        out.decision = decision;
        out.rationale = std::move(rationale);
        out.status = ParseStatus::ok;
    } catch (const ParseError&) {
        out.decision = Decision::positive;
        out.rationale.clear();
        out.status = ParseStatus::defaulted;
    }
    return out;
}

namespace {

RenderedPrompt render_for_case(const LabeledCase& c, const Catalog& catalog, Mode mode,
                               const Instruction* instruction, const CotRuleBook& rules) {
    const Product* product = catalog.find_product(c.product_id);
    if (!product) throw IntegrityError("case '" + c.key + "' references unknown product");
    const StructuredAttribute* sa = catalog.find_sa(c.sa_id);
    if (!sa) throw IntegrityError("case '" + c.key + "' references unknown sa");

    switch (mode) {
        case Mode::baseline:
            return render_baseline(*product, *sa, c.test_value, c.task);
        case Mode::cot:
            return render_cot(*product, *sa, c.test_value, rules.rules_for(sa->id), c.task);
        case Mode::apc:
            if (!instruction) {
                throw MissingInstructionError("no instruction for pair " + product->pc_id + "/" +
                                              sa->id);
            }
            return render_apc(*product, *sa, c.test_value, rules.rules_for(sa->id), *instruction,
                              c.task);
    }
    throw ArgumentError("unknown mode");
}

} // namespace

ClassificationResult classify_one(const LabeledCase& c, const Catalog& catalog, Mode mode,
                                  const Instruction* instruction, const CotRuleBook& rules,
                                  Gateway& gateway, const ClassifierOptions& options) {
    const RenderedPrompt prompt = render_for_case(c, catalog, mode, instruction, rules);

    LlmRequest request;
    request.prompt = prompt.text;
    request.model_id = options.model_id;
    request.temperature = options.temperature;
    request.max_tokens = options.max_tokens;
    request.purpose = Purpose::classification;

    ClassificationResult result;
    result.case_key = c.key;
    result.mode = mode;

    LlmResponse response = gateway.complete(request);
    result.usage = response.usage;
    try {
        auto [decision, rationale] = parse_decision(response.text, c.task);
        result.decision = decision;
        result.rationale = rationale;
        result.raw = response.text;
        result.parse_status = ParseStatus::ok;
        return result;
    } catch (const ParseError&) {
        LlmRequest retry = request;
        retry.prompt += "\n\nAnswer strictly in the output format requested above.";
        response = gateway.complete(retry);
        result.usage.input_tokens += response.usage.input_tokens;
        result.usage.output_tokens += response.usage.output_tokens;
        result.usage.estimated = result.usage.estimated || response.usage.estimated;
        result.raw = response.text;
    }

    try {
        auto [decision, rationale] = parse_decision(response.text, c.task);
        result.decision = decision;
        result.rationale = rationale;
        result.parse_status = ParseStatus::ok;
    } catch (const ParseError&) {
        if (options.hard_fail_on_parse) throw;
        // Positive-class default, consistent with the baseline rule's
        // no-contradiction stance.
        result.decision = Decision::positive;
        result.rationale.clear();
        result.parse_status = ParseStatus::defaulted;
    }
    return result;
}

PredictionSet run_task(const std::vector<LabeledCase>& cases, const Catalog& catalog, Mode mode,
                       const InstructionSet* instructions, const CotRuleBook& rules,
                       Gateway& gateway, const ClassifierOptions& options) {
    if (mode == Mode::apc) {
        if (!instructions) throw MissingInstructionError("apc mode requires an instruction set");
        std::set<PcSa> missing;
        for (const auto& c : cases) {
            const Product* product = catalog.find_product(c.product_id);
            if (!product) throw IntegrityError("case '" + c.key + "' references unknown product");
            if (!instructions->find(product->pc_id, c.sa_id)) {
                missing.insert(PcSa{product->pc_id, c.sa_id});
            }
        }
        if (!missing.empty()) {
            std::string msg = "instruction set does not cover";
            std::vector<std::pair<std::string, std::string>> pairs;
            for (const auto& pair : missing) {
                msg += " " + pair.pc_id + "/" + pair.sa_id;
                pairs.emplace_back(pair.pc_id, pair.sa_id);
            }
            throw CoverageError(msg, std::move(pairs));
        }
    }

    PredictionSet predictions;
    predictions.meta.mode = mode;
    predictions.meta.model_id = options.model_id;
    if (!cases.empty()) predictions.meta.task = cases.front().task;

    predictions.results.resize(cases.size());
    parallel_for_indexed(cases.size(), options.workers, [&](std::size_t i) {
        const LabeledCase& c = cases[i];
        const Instruction* instruction = nullptr;
        if (mode == Mode::apc) {
            const Product* product = catalog.find_product(c.product_id);
            instruction = instructions->find(product->pc_id, c.sa_id);
        }
        predictions.results[i] = classify_one(c, catalog, mode, instruction, rules, gateway,
                                              options);
    });

    std::sort(predictions.results.begin(), predictions.results.end(),
              [](const ClassificationResult& a, const ClassificationResult& b) {
                  return a.case_key < b.case_key;
              });
    return predictions;
}

namespace {

std::string parse_status_name(ParseStatus s) {
    return s == ParseStatus::ok ? "ok" : "defaulted";
}

ParseStatus parse_status_from(const std::string& s) {
    if (s == "ok") return ParseStatus::ok;
    if (s == "defaulted") return ParseStatus::defaulted;
    throw ParseError("unknown parse status: " + s);
}

} // namespace

void save_predictions(const PredictionSet& predictions, const std::filesystem::path& jsonl_path) {
    std::string out;
    const Task task = predictions.meta.task;
    for (const auto& r : predictions.results) {
        json j{{"case", r.case_key},
               {"decision", decision_label(task, r.decision)},
               {"rationale", r.rationale},
               {"raw", r.raw},
               {"mode", mode_name(r.mode)},
               {"parse_status", parse_status_name(r.parse_status)},
               {"usage",
                {{"input_tokens", r.usage.input_tokens},
                 {"output_tokens", r.usage.output_tokens},
                 {"estimated", r.usage.estimated}}}};
        out += j.dump() + "\n";
    }
    atomic_write_file(jsonl_path, out);

    json meta{{"task", task_name(task)},
              {"mode", mode_name(predictions.meta.mode)},
              {"model_id", predictions.meta.model_id},
              {"instruction_set_digest", predictions.meta.instruction_set_digest},
              {"cases", predictions.results.size()},
              {"defaulted_parses", predictions.defaulted_count()}};
    std::filesystem::path meta_path = jsonl_path;
    meta_path.replace_extension(".meta.json");
    atomic_write_file(meta_path, meta.dump(2) + "\n");
}

PredictionSet load_predictions(const std::filesystem::path& jsonl_path) {
    std::filesystem::path meta_path = jsonl_path;
    meta_path.replace_extension(".meta.json");
    if (!std::filesystem::exists(meta_path)) {
        throw ConfigError("missing prediction metadata: " + meta_path.string());
    }
    PredictionSet predictions;
    json meta;
    try {
        meta = json::parse(read_file(meta_path));
    } catch (const json::exception& e) {
        throw ParseError("prediction metadata: " + std::string(e.what()));
    }
    predictions.meta.task = task_from_name(meta.at("task").get<std::string>());
    predictions.meta.mode = mode_from_name(meta.at("mode").get<std::string>());
    predictions.meta.model_id = meta.value("model_id", "");
    predictions.meta.instruction_set_digest = meta.value("instruction_set_digest", "");

    std::ifstream in(jsonl_path, std::ios::binary);
    if (!in) throw ConfigError("cannot read predictions: " + jsonl_path.string());
    std::string line;
    std::size_t line_no = 0;
    const Task task = predictions.meta.task;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(jsonl_path.filename().string() + ":" + std::to_string(line_no) +
                             ": " + e.what());
        }
        ClassificationResult r;
        r.case_key = j.at("case").get<std::string>();
        const std::string label = j.at("decision").get<std::string>();
        if (label == positive_label(task)) {
            r.decision = Decision::positive;
        } else if (label == negative_label(task)) {
            r.decision = Decision::negative;
        } else {
            throw ParseError(jsonl_path.filename().string() + ":" + std::to_string(line_no) +
                             ": decision '" + label + "' does not belong to task " +
                             task_name(task));
        }
        r.rationale = j.value("rationale", "");
        r.raw = j.value("raw", "");
        r.mode = mode_from_name(j.value("mode", mode_name(predictions.meta.mode)));
        r.parse_status = parse_status_from(j.value("parse_status", "ok"));
        if (j.contains("usage")) {
            r.usage.input_tokens = j["usage"].value("input_tokens", std::int64_t{0});
            r.usage.output_tokens = j["usage"].value("output_tokens", std::int64_t{0});
            r.usage.estimated = j["usage"].value("estimated", false);
        }
        predictions.results.push_back(std::move(r));
    }
    return predictions;
}

} // namespace apc
