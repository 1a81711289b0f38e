#pragma once

#include "apc/catalog.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace apc {

enum class TemplateKind { baseline, cot, apc, instruction_gen };

std::string template_kind_name(TemplateKind k);

struct PromptSection {
    std::string header; // "### Name:\n" line, or empty for the baseline shape
    std::string body;   // includes its trailing separator
};

// Rendering is pure: identical inputs produce identical bytes, and the
// concatenation of sections reproduces text exactly.
struct RenderedPrompt {
    TemplateKind kind = TemplateKind::baseline;
    std::string text;
    std::vector<PromptSection> sections;

    const PromptSection* section(const std::string& name) const;
};

// Ordered reasoning rules injected into the CoT/APC Rules section, keyed by
// SA group.
struct CotRuleSet {
    std::string sa_group;
    std::vector<std::string> rules;
};

class CotRuleBook {
public:
    // Generic sequential-verification rules under group "default".
    static CotRuleBook defaults();
    // JSON: {"groups": {group: [rule, ...]}, "sa_groups": {sa_id: group}}.
    static CotRuleBook load(const std::filesystem::path& path);

    const CotRuleSet& rules_for(const std::string& sa_id) const;

private:
    std::map<std::string, CotRuleSet> groups_;
    std::map<std::string, std::string> sa_to_group_;
};

// Labeled plain-text product block in fixed field order
// (Title / Description / Bullets / Structured attributes); empty fields are
// omitted, so the block is a pure function of the product.
std::string serialize_product(const Product& product);

RenderedPrompt render_baseline(const Product& product, const StructuredAttribute& sa,
                               const std::string& test_value, Task task = Task::correctness);

RenderedPrompt render_cot(const Product& product, const StructuredAttribute& sa,
                          const std::string& test_value, const CotRuleSet& rules,
                          Task task = Task::correctness);

struct Instruction; // cascade.hpp

// CoT prompt plus one Instruction section (inserted between Test value and
// Output format); stripping that section yields render_cot byte-for-byte.
RenderedPrompt render_apc(const Product& product, const StructuredAttribute& sa,
                          const std::string& test_value, const CotRuleSet& rules,
                          const Instruction& instruction, Task task = Task::correctness);

struct FewshotExample {
    std::string pc_definition;
    std::string sa_definition;
    std::string instruction_text;
};

// Meta-prompt that asks for a 1-3 sentence instruction for the target pair,
// one example block per few-shot, answered as a single tagged field.
RenderedPrompt render_instruction_prompt(const std::string& pc_definition,
                                         const std::string& sa_definition,
                                         const std::vector<FewshotExample>& fewshots);

} // namespace apc
