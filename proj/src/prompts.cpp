#include "apc/prompts.hpp"

#include "apc/cascade.hpp"
#include "apc/errors.hpp"
#include "apc/util.hpp"

#include <nlohmann/json.hpp>

#include <sstream>

using json = nlohmann::json;

namespace apc {

std::string template_kind_name(TemplateKind k) {
    switch (k) {
        case TemplateKind::baseline: return "baseline";
        case TemplateKind::cot: return "cot";
        case TemplateKind::apc: return "apc";
        case TemplateKind::instruction_gen: return "instruction_gen";
    }
    return "unknown";
}

const PromptSection* RenderedPrompt::section(const std::string& name) const {
    const std::string header = "### " + name + ":\n";
    for (const auto& s : sections) {
        if (s.header == header) return &s;
    }
    return nullptr;
}

namespace {

class PromptBuilder {
public:
    explicit PromptBuilder(TemplateKind kind) { prompt_.kind = kind; }

    // Sectioned shape ("### Name:" headers).
    void add(const std::string& name, const std::string& body) {
        prompt_.sections.push_back({"### " + name + ":\n", body});
        prompt_.text += prompt_.sections.back().header;
        prompt_.text += body;
    }

    // Headerless shape (baseline).
    void add_plain(const std::string& body) {
        prompt_.sections.push_back({"", body});
        prompt_.text += body;
    }

    RenderedPrompt take() { return std::move(prompt_); }

private:
    RenderedPrompt prompt_;
};

std::string output_format_block(Task task) {
    return "Output the results in the following output format.\n"
           "reasoning: <your step-by-step reasoning>\n"
           "prediction: <'" + positive_label(task) + "' or '" + negative_label(task) + "'>\n";
}

std::string numbered(const std::vector<std::string>& rules) {
    std::string out;
    for (std::size_t i = 0; i < rules.size(); ++i) {
        out += std::to_string(i + 1) + ". " + rules[i] + "\n";
    }
    return out;
}

} // namespace

std::string serialize_product(const Product& product) {
    std::string out = "Title: " + product.title + "\n";
    if (!product.description.empty()) {
        out += "Description: " + product.description + "\n";
    }
    if (!product.bullets.empty()) {
        out += "Bullets:\n";
        for (const auto& b : product.bullets) out += "- " + b + "\n";
    }
    if (!product.sa_values.empty()) {
        out += "Structured attributes:\n";
        for (const auto& [sa_id, value] : product.sa_values) {
            out += "- " + sa_id + ": " + value + "\n";
        }
    }
    return out;
}

RenderedPrompt render_baseline(const Product& product, const StructuredAttribute& sa,
                               const std::string& test_value, Task task) {
    if (test_value.empty()) throw ArgumentError("test_value must be non-empty");

    PromptBuilder b(TemplateKind::baseline);
    b.add_plain("You are an auditor for an e-commerce store. You are given a product and its "
                "data below. You will also be given a test value for '" + sa.name + "'.\n\n");
    b.add_plain(serialize_product(product) + "\n");
    b.add_plain("The test value for '" + sa.name + "' is '" + test_value + "'.\n"
                "Based on the given product data, you have to say if the test value is '" +
                positive_label(task) + "' or '" + negative_label(task) +
                "'. If the product data does not contradict the given value, your prediction "
                "should be '" + positive_label(task) + "'.\n\n");
    b.add_plain(output_format_block(task));
    return b.take();
}

RenderedPrompt render_cot(const Product& product, const StructuredAttribute& sa,
                          const std::string& test_value, const CotRuleSet& rules, Task task) {
    if (test_value.empty()) throw ArgumentError("test_value must be non-empty");
    if (rules.rules.empty()) throw ArgumentError("CoT rule set must be non-empty");

    PromptBuilder b(TemplateKind::cot);
    b.add("Introduction",
          "You are an auditor for an e-commerce store. You are given a product and its data "
          "below. You will also be given a test value for '" + sa.name + "'.\n"
          "Please classify the value as '" + positive_label(task) + "' or '" +
          negative_label(task) + "' based on the rules given below.\n\n");
    b.add("Product data", "Given below is the product data.\n" + serialize_product(product) + "\n");
    b.add("Rules",
          "To ensure accurate predictions, adhere to the following rules in sequence and think "
          "systematically before responding:\n" + numbered(rules.rules) + "\n");
    b.add("Test value",
          "Now verify the test value of the attribute '" + sa.name + "': '" + test_value + "'.\n\n");
    b.add("Output format", output_format_block(task));
    return b.take();
}

RenderedPrompt render_apc(const Product& product, const StructuredAttribute& sa,
                          const std::string& test_value, const CotRuleSet& rules,
                          const Instruction& instruction, Task task) {
    if (instruction.pc_id != product.pc_id || instruction.sa_id != sa.id) {
        throw IntegrityError("instruction " + instruction.key() + " does not match pair " +
                             product.pc_id + "/" + sa.id);
    }
    RenderedPrompt cot = render_cot(product, sa, test_value, rules, task);

    RenderedPrompt out;
    out.kind = TemplateKind::apc;
    for (const auto& s : cot.sections) {
        if (s.header == "### Output format:\n") {
            // The instruction slots in right before the output format, so
            // dropping this one section recovers the CoT bytes.
            PromptSection inst;
            inst.header = "### Instruction:\n";
            inst.body = "Here is some additional information about '" + sa.name +
                        "' to help you make highly accurate classifications.\n"
                        "In your reasoning, explain how you applied this information to reach "
                        "your conclusion.\n\n" + instruction.text + "\n\n";
            out.sections.push_back(inst);
            out.text += inst.header + inst.body;
        }
        out.sections.push_back(s);
        out.text += s.header + s.body;
    }
    return out;
}

RenderedPrompt render_instruction_prompt(const std::string& pc_definition,
                                         const std::string& sa_definition,
                                         const std::vector<FewshotExample>& fewshots) {
    if (fewshots.empty()) throw ArgumentError("instruction prompt needs at least one few-shot");

    PromptBuilder b(TemplateKind::instruction_gen);
    b.add("Introduction",
          "You are writing auditor guidance for an e-commerce store. Given a product category "
          "and a structured attribute, write a short instruction that explains what the "
          "attribute means for products in that category and how its values should be "
          "judged.\n\n");
    std::string examples;
    for (std::size_t i = 0; i < fewshots.size(); ++i) {
        examples += "Example " + std::to_string(i + 1) + ":\n"
                    "Product category definition: " + fewshots[i].pc_definition + "\n"
                    "Attribute definition: " + fewshots[i].sa_definition + "\n"
                    "instruction: " + fewshots[i].instruction_text + "\n\n";
    }
    b.add("Examples", examples);
    b.add("Target",
          "Write the instruction for the following product category and attribute.\n"
          "Product category definition: " + pc_definition + "\n"
          "Attribute definition: " + sa_definition + "\n\n");
    b.add("Output format",
          "Write 1-3 sentences covering what the attribute means for this product category, "
          "including any edge cases a careful auditor should consider.\n"
          "Output the result in the following output format.\n"
          "instruction: <your instruction>\n");
    return b.take();
}

CotRuleBook CotRuleBook::defaults() {
    CotRuleBook book;
    CotRuleSet rules;
    rules.sa_group = "default";
    rules.rules = {
        "Identify what kind of product this is from the title, description, and bullet points.",
        "Collect every statement in the product data that mentions or implies the attribute "
        "under test.",
        "Compare the test value against the collected evidence, accounting for synonyms, "
        "abbreviations, and implied meanings.",
        "Base the final decision only on the product data given above, not on outside "
        "assumptions about the product.",
    };
    book.groups_.emplace("default", std::move(rules));
    return book;
}

CotRuleBook CotRuleBook::load(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ParseError("rule book " + path.string() + ": " + e.what());
    }
    CotRuleBook book = defaults();
    if (j.contains("groups")) {
        for (auto it = j["groups"].begin(); it != j["groups"].end(); ++it) {
            CotRuleSet set;
            set.sa_group = it.key();
            for (const auto& rule : it.value()) set.rules.push_back(rule.get<std::string>());
            if (set.rules.empty())
                throw ParseError("rule book group '" + it.key() + "' has no rules");
            book.groups_[it.key()] = std::move(set);
        }
    }
    if (j.contains("sa_groups")) {
        for (auto it = j["sa_groups"].begin(); it != j["sa_groups"].end(); ++it) {
            book.sa_to_group_[it.key()] = it.value().get<std::string>();
        }
    }
    return book;
}

const CotRuleSet& CotRuleBook::rules_for(const std::string& sa_id) const {
    auto group_it = sa_to_group_.find(sa_id);
    const std::string group = group_it == sa_to_group_.end() ? "default" : group_it->second;
    auto it = groups_.find(group);
    if (it == groups_.end()) it = groups_.find("default");
    if (it == groups_.end()) throw ConfigError("rule book has no default group");
    return it->second;
}

} // namespace apc
