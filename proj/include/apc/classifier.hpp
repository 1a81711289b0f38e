#pragma once

#include "apc/cascade.hpp"
#include "apc/catalog.hpp"
#include "apc/gateway.hpp"
#include "apc/prompts.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace apc {

enum class Mode { baseline, cot, apc };
enum class ParseStatus { ok, defaulted };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& name);

struct ClassificationResult {
    std::string case_key;
    Decision decision = Decision::positive;
    std::string rationale;
    std::string raw;
    TokenUsage usage;
    Mode mode = Mode::baseline;
    ParseStatus parse_status = ParseStatus::ok;
};

struct RunMeta {
    Task task = Task::correctness;
    Mode mode = Mode::baseline;
    std::string model_id;
    std::string instruction_set_digest; // empty for baseline/cot
};

struct PredictionSet {
    RunMeta meta;
    std::vector<ClassificationResult> results; // sorted by case_key
    std::size_t defaulted_count() const;
};

// Extracts the `reasoning:`/`prediction:` tagged fields case-insensitively
// and matches the label with case/whitespace folding. Missing or ambiguous
// prediction -> ParseError; the reasoning field may be absent.
std::pair<Decision, std::string> parse_decision(const std::string& raw, Task task);

// parse_decision with the batch default policy applied: on failure the
// positive class with ParseStatus::defaulted, never a throw.
struct ParsedWithPolicy {
    Decision decision = Decision::positive;
    std::string rationale;
    ParseStatus status = ParseStatus::ok;
};
ParsedWithPolicy parse_with_default(const std::string& raw, Task task);

struct ClassifierOptions {
    std::string model_id = "default";
    double temperature = 0.0;
    int max_tokens = 1024;
    // When true, a second parse failure raises ParseError instead of
    // defaulting to the positive class.
    bool hard_fail_on_parse = false;
    int workers = 8;
};

// Renders the prompt for the case's mode, calls the gateway, parses the
// decision; one reminder retry on parse failure, then the positive-class
// default (flagged). APC requires an instruction matching the case's pair.
ClassificationResult classify_one(const LabeledCase& c, const Catalog& catalog, Mode mode,
                                  const Instruction* instruction, const CotRuleBook& rules,
                                  Gateway& gateway, const ClassifierOptions& options = {});

// Batch driver: verifies APC instruction coverage before any call
// (CoverageError lists the missing pairs), runs cases concurrently up to the
// gateway cap, and assembles results sorted by case key.
PredictionSet run_task(const std::vector<LabeledCase>& cases, const Catalog& catalog, Mode mode,
                       const InstructionSet* instructions, const CotRuleBook& rules,
                       Gateway& gateway, const ClassifierOptions& options = {});

// JSONL, one result per line, sorted by case key; run metadata in a sibling
// .meta.json file.
void save_predictions(const PredictionSet& predictions, const std::filesystem::path& jsonl_path);
PredictionSet load_predictions(const std::filesystem::path& jsonl_path);

} // namespace apc
