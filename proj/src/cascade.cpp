#include "apc/cascade.hpp"

#include "apc/errors.hpp"
#include "apc/prompts.hpp"
#include "apc/rng.hpp"
#include "apc/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

using json = nlohmann::json;

namespace apc {

void check_instruction(const Instruction& instruction) {
    if (instruction.pc_id.empty() || instruction.sa_id.empty())
        throw ArgumentError("instruction must reference a pc and an sa");
    if (trim(instruction.text).empty())
        throw ArgumentError("instruction text must be non-empty (" + instruction.key() + ")");
    if (instruction.iteration < 0)
        throw ArgumentError("instruction iteration must be >= 0");
    const bool is_seed = instruction.iteration == 0;
    if (is_seed != instruction.lineage.empty()) {
        throw ArgumentError("iteration 0 instructions must have empty lineage and vice versa (" +
                            instruction.key() + ")");
    }
}

SeedSet SeedSet::from_instructions(std::vector<Instruction> seeds, int fewshot_count) {
    if (fewshot_count < 1) throw ArgumentError("fewshot count must be >= 1");
    if (static_cast<int>(seeds.size()) != fewshot_count) {
        throw ArgumentError("seed set must contain exactly " + std::to_string(fewshot_count) +
                            " instructions, got " + std::to_string(seeds.size()));
    }
    std::set<std::string> sa_ids;
    for (const auto& seed : seeds) {
        check_instruction(seed);
        if (seed.iteration != 0)
            throw ArgumentError("seed " + seed.key() + " must be at iteration 0");
        if (!sa_ids.insert(seed.sa_id).second)
            throw ArgumentError("seed SAs must be distinct; '" + seed.sa_id + "' repeats");
    }
    SeedSet set;
    set.items_ = std::move(seeds);
    return set;
}

namespace {

json instruction_to_json(const Instruction& i) {
    json j{{"pc_id", i.pc_id},
           {"sa_id", i.sa_id},
           {"text", i.text},
           {"iteration", i.iteration},
           {"created_at", i.created_at}};
    if (!i.lineage.empty()) {
        j["lineage"] = {{"fewshot_keys", i.lineage.fewshot_keys},
                        {"model_id", i.lineage.model_id},
                        {"rng_seed", i.lineage.rng_seed}};
    }
    return j;
}

Instruction instruction_from_json(const json& j, const std::string& where) {
    Instruction i;
    try {
        i.pc_id = j.at("pc_id").get<std::string>();
        i.sa_id = j.at("sa_id").get<std::string>();
        i.text = j.at("text").get<std::string>();
        i.iteration = j.value("iteration", 0);
        i.created_at = j.value("created_at", "");
        if (j.contains("lineage")) {
            const auto& l = j["lineage"];
            i.lineage.fewshot_keys = l.value("fewshot_keys", std::vector<std::string>{});
            i.lineage.model_id = l.value("model_id", "");
            i.lineage.rng_seed = l.value("rng_seed", std::uint64_t{0});
        }
    } catch (const json::exception& e) {
        throw ParseError(where + ": bad instruction record: " + e.what());
    }
    return i;
}

std::string instructions_to_jsonl(const std::vector<Instruction>& instructions) {
    std::string out;
    for (const auto& i : instructions) out += instruction_to_json(i).dump() + "\n";
    return out;
}

} // namespace

std::vector<Instruction> load_instructions_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read instruction file: " + path.string());
    std::vector<Instruction> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = path.filename().string() + ":" + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(where + ": malformed JSON: " + e.what());
        }
        out.push_back(instruction_from_json(j, where));
    }
    return out;
}

void save_instructions_jsonl(const std::filesystem::path& path,
                             const std::vector<Instruction>& instructions) {
    atomic_write_file(path, instructions_to_jsonl(instructions));
}

// InstructionSet

void InstructionSet::set_snapshot(int iteration, std::vector<Instruction> instructions) {
    std::sort(instructions.begin(), instructions.end(),
              [](const Instruction& a, const Instruction& b) {
                  return std::tie(a.pc_id, a.sa_id) < std::tie(b.pc_id, b.sa_id);
              });
    snapshots_[iteration] = std::move(instructions);
    final_.clear();
    if (!snapshots_.empty()) {
        for (const auto& i : snapshots_.rbegin()->second) {
            final_.emplace(PcSa{i.pc_id, i.sa_id}, i);
        }
    }
}

const std::vector<Instruction>* InstructionSet::snapshot(int iteration) const {
    auto it = snapshots_.find(iteration);
    return it == snapshots_.end() ? nullptr : &it->second;
}

int InstructionSet::last_iteration() const {
    return snapshots_.empty() ? -1 : snapshots_.rbegin()->first;
}

const Instruction* InstructionSet::find(const std::string& pc_id, const std::string& sa_id) const {
    auto it = final_.find(PcSa{pc_id, sa_id});
    return it == final_.end() ? nullptr : &it->second;
}

// InstructionStore

namespace {

std::filesystem::path snapshot_path(const std::filesystem::path& dir, int iteration) {
    return dir / ("snapshot_iter_" + std::to_string(iteration) + ".jsonl");
}

} // namespace

InstructionStore::InstructionStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

bool InstructionStore::has_progress() const {
    return std::filesystem::exists(dir_ / "manifest.json");
}

std::optional<CascadeConfig> InstructionStore::load_config() const {
    if (!has_progress()) return std::nullopt;
    json j;
    try {
        j = json::parse(read_file(dir_ / "manifest.json"));
    } catch (const json::exception& e) {
        throw ParseError("corrupt store manifest: " + std::string(e.what()));
    }
    CascadeConfig config;
    const auto& c = j.at("config");
    config.iterations = c.at("iterations").get<int>();
    config.fewshot_count = c.at("fewshot_count").get<int>();
    config.rng_seed = c.at("rng_seed").get<std::uint64_t>();
    config.model_id = c.at("model_id").get<std::string>();
    return config;
}

InstructionSet InstructionStore::load_snapshots() const {
    InstructionSet set;
    if (!has_progress()) return set;
    json j = json::parse(read_file(dir_ / "manifest.json"));
    for (const auto& iteration : j.at("iterations_complete")) {
        const int k = iteration.get<int>();
        set.set_snapshot(k, load_instructions_jsonl(snapshot_path(dir_, k)));
    }
    return set;
}

std::vector<CascadeFailure> InstructionStore::load_failures() const {
    std::vector<CascadeFailure> out;
    if (!has_progress()) return out;
    json j = json::parse(read_file(dir_ / "manifest.json"));
    for (const auto& f : j.value("failures", json::array())) {
        out.push_back({f.at("pc_id").get<std::string>(), f.at("sa_id").get<std::string>(),
                       f.at("iteration").get<int>(), f.at("reason").get<std::string>()});
    }
    return out;
}

void InstructionStore::begin(const CascadeConfig& config, std::size_t targets,
                             std::size_t distinct_sas) {
    config_ = config;
    config_set_ = true;
    targets_ = targets;
    distinct_sas_ = distinct_sas;
    if (has_progress()) {
        json j = json::parse(read_file(dir_ / "manifest.json"));
        for (const auto& it : j.at("iterations_complete")) complete_.push_back(it.get<int>());
        failures_ = load_failures();
        generation_calls_ = j.value("generation_calls", std::size_t{0});
    } else {
        write_manifest();
    }
}

void InstructionStore::commit_iteration(int iteration, const std::vector<Instruction>& instructions,
                                        const std::vector<CascadeFailure>& failures,
                                        std::size_t calls_so_far) {
    save_instructions_jsonl(snapshot_path(dir_, iteration), instructions);

    std::ofstream log(dir_ / "instructions.jsonl", std::ios::binary | std::ios::app);
    if (!log) throw ConfigError("cannot append instruction log in " + dir_.string());
    const std::string chunk = instructions_to_jsonl(instructions);
    log.write(chunk.data(), static_cast<std::streamsize>(chunk.size()));
    log.close();

    if (std::find(complete_.begin(), complete_.end(), iteration) == complete_.end()) {
        complete_.push_back(iteration);
        std::sort(complete_.begin(), complete_.end());
    }
    failures_.insert(failures_.end(), failures.begin(), failures.end());
    generation_calls_ = calls_so_far;
    write_manifest();
}

void InstructionStore::write_manifest() const {
    json failures = json::array();
    auto sorted = failures_;
    std::sort(sorted.begin(), sorted.end(), [](const CascadeFailure& a, const CascadeFailure& b) {
        return std::tie(a.iteration, a.pc_id, a.sa_id) < std::tie(b.iteration, b.pc_id, b.sa_id);
    });
    for (const auto& f : sorted) {
        failures.push_back({{"pc_id", f.pc_id},
                            {"sa_id", f.sa_id},
                            {"iteration", f.iteration},
                            {"reason", f.reason}});
    }
    json j{
        {"config",
         {{"iterations", config_.iterations},
          {"fewshot_count", config_.fewshot_count},
          {"rng_seed", config_.rng_seed},
          {"model_id", config_.model_id}}},
        {"iterations_complete", complete_},
        {"failures", failures},
        {"targets", targets_},
        {"distinct_sas", distinct_sas_},
        {"generation_calls", generation_calls_},
    };
    atomic_write_file(dir_ / "manifest.json", j.dump(2) + "\n");
}

std::string InstructionStore::final_digest() const {
    if (!has_progress()) return "";
    json j = json::parse(read_file(dir_ / "manifest.json"));
    const auto& iterations = j.at("iterations_complete");
    if (iterations.empty()) return "";
    const int last = iterations.back().get<int>();
    return sha256_hex(read_file(snapshot_path(dir_, last))).substr(0, 12);
}

// Sampling

std::vector<std::string> sample_pcs(const Catalog& catalog, int count, std::mt19937_64& rng) {
    if (count < 1) throw ArgumentError("sample count must be >= 1");
    std::vector<std::string> ids;
    for (const auto& pc : catalog.pcs()) {
        if (!trim(pc.definition).empty()) ids.push_back(pc.id);
    }
    std::sort(ids.begin(), ids.end());
    if (static_cast<int>(ids.size()) < count) {
        throw ArgumentError("catalog has " + std::to_string(ids.size()) +
                            " defined product categories, need " + std::to_string(count));
    }
    seeded_shuffle(ids, rng);
    ids.resize(static_cast<std::size_t>(count));
    return ids;
}

std::vector<Instruction> select_fewshot(const std::vector<Instruction>& previous_iteration,
                                        const std::string& sa_id, int fewshot_count,
                                        std::mt19937_64& rng) {
    if (fewshot_count < 1) throw ArgumentError("fewshot count must be >= 1");
    std::vector<Instruction> same_sa;
    for (const auto& i : previous_iteration) {
        if (i.sa_id == sa_id) same_sa.push_back(i);
    }
    std::sort(same_sa.begin(), same_sa.end(),
              [](const Instruction& a, const Instruction& b) { return a.pc_id < b.pc_id; });
    if (same_sa.empty()) {
        throw MissingSaError("no previous-iteration instructions for sa '" + sa_id + "'");
    }
    if (static_cast<int>(same_sa.size()) <= fewshot_count) return same_sa;

    std::vector<std::size_t> chosen =
        sample_indices(same_sa.size(), static_cast<std::size_t>(fewshot_count), rng);
    std::sort(chosen.begin(), chosen.end());
    std::vector<Instruction> out;
    out.reserve(chosen.size());
    for (std::size_t idx : chosen) out.push_back(same_sa[idx]);
    return out;
}

// Generation

namespace {

// Tagged-field extraction for generation output: text after the first
// line-initial "instruction:" tag, to end of output.
std::string parse_instruction_text(const std::string& raw) {
    std::istringstream in(raw);
    std::string line;
    std::string collected;
    bool found = false;
    while (std::getline(in, line)) {
        const std::string stripped = trim(line);
        if (starts_with_icase(stripped, "instruction:")) {
            found = true;
            collected = stripped.substr(std::string("instruction:").size());
            // Remainder of the raw text belongs to the instruction body.
            std::string rest;
            while (std::getline(in, rest)) collected += "\n" + rest;
            break;
        }
    }
    if (!found) return "";
    return trim(collected);
}

struct GenCall {
    PcSa target;
    std::vector<Instruction> fewshots;
};

} // namespace

Instruction generate_instruction(const ProductCategory& pc, const StructuredAttribute& sa,
                                 const std::vector<Instruction>& fewshots, const Catalog& catalog,
                                 Gateway& gateway, const CascadeConfig& config) {
    if (fewshots.empty()) throw ArgumentError("generation requires at least one few-shot");
    int max_iteration = 0;
    std::vector<FewshotExample> examples;
    std::vector<std::string> fewshot_keys;
    examples.reserve(fewshots.size());
    for (const auto& shot : fewshots) {
        check_instruction(shot);
        const ProductCategory* shot_pc = catalog.find_pc(shot.pc_id);
        const StructuredAttribute* shot_sa = catalog.find_sa(shot.sa_id);
        if (!shot_pc || !shot_sa) {
            throw IntegrityError("few-shot " + shot.key() + " references unknown pc or sa");
        }
        examples.push_back({shot_pc->definition, shot_sa->definition, shot.text});
        fewshot_keys.push_back(shot.key() + "@" + std::to_string(shot.iteration));
        max_iteration = std::max(max_iteration, shot.iteration);
    }

    const RenderedPrompt prompt =
        render_instruction_prompt(pc.definition, sa.definition, examples);
    LlmRequest request;
    request.prompt = prompt.text;
    request.model_id = config.model_id;
    request.temperature = config.temperature;
    request.max_tokens = config.max_tokens;
    request.purpose = Purpose::instruction_gen;

    LlmResponse response = gateway.complete(request);
    std::string text = parse_instruction_text(response.text);
    if (text.empty()) {
        LlmRequest retry = request;
        retry.prompt += "\n\nAnswer strictly in the output format requested above.";
        response = gateway.complete(retry);
        text = parse_instruction_text(response.text);
        if (text.empty()) {
            throw GenerationError("unparseable generation output for " + pc.id + "/" + sa.id);
        }
    }

    Instruction out;
    out.pc_id = pc.id;
    out.sa_id = sa.id;
    out.text = text;
    out.iteration = max_iteration + 1;
    out.lineage.fewshot_keys = std::move(fewshot_keys);
    out.lineage.model_id = config.model_id;
    out.lineage.rng_seed = config.rng_seed;
    out.created_at = response.created_at;
    return out;
}

namespace {

struct IterationPlan {
    std::vector<GenCall> calls;
    std::vector<CascadeFailure> planning_failures; // SAs with nothing to select from
};

// Iteration 1 for T >= 2: M sampled PCs per distinct target SA, full seed
// set as few-shots. Consumes one sample draw per SA in sorted-SA order.
IterationPlan plan_first_iteration(const Catalog& catalog, const SeedSet& seeds,
                                   const CascadeConfig& config,
                                   const std::vector<std::string>& sorted_sas,
                                   std::mt19937_64& rng) {
    IterationPlan plan;
    for (const auto& sa_id : sorted_sas) {
        const std::vector<std::string> sampled = sample_pcs(catalog, config.fewshot_count, rng);
        for (const auto& pc_id : sampled) {
            plan.calls.push_back({PcSa{pc_id, sa_id}, seeds.items()});
        }
    }
    return plan;
}

// Iterations 2..T (and iteration 1 when T == 1): one call per target pair,
// few-shots selected once per SA from the previous iteration.
IterationPlan plan_pair_iteration(const std::vector<PcSa>& targets,
                                  const std::vector<Instruction>& previous,
                                  const CascadeConfig& config, int iteration,
                                  const std::vector<std::string>& sorted_sas,
                                  std::mt19937_64& rng) {
    IterationPlan plan;
    std::map<std::string, std::vector<Instruction>> fewshots_by_sa;
    for (const auto& sa_id : sorted_sas) {
        try {
            fewshots_by_sa[sa_id] = select_fewshot(previous, sa_id, config.fewshot_count, rng);
        } catch (const MissingSaError& e) {
            // Every pair of this SA fails; recorded once per pair below.
        }
    }
    for (const auto& pair : targets) {
        auto it = fewshots_by_sa.find(pair.sa_id);
        if (it == fewshots_by_sa.end()) {
            plan.planning_failures.push_back(
                {pair.pc_id, pair.sa_id, iteration,
                 "no previous-iteration instructions for sa '" + pair.sa_id + "'"});
            continue;
        }
        plan.calls.push_back({pair, it->second});
    }
    return plan;
}

struct ExecutionResult {
    std::vector<Instruction> generated;
    std::vector<CascadeFailure> failures;
    std::size_t calls = 0;
};

ExecutionResult execute_plan(const IterationPlan& plan, const Catalog& catalog, Gateway& gateway,
                             const CascadeConfig& config, int iteration) {
    ExecutionResult result;
    result.failures = plan.planning_failures;
    std::vector<std::optional<Instruction>> slots(plan.calls.size());
    std::vector<std::optional<CascadeFailure>> failures(plan.calls.size());

    parallel_for_indexed(plan.calls.size(), config.workers, [&](std::size_t i) {
        const GenCall& call = plan.calls[i];
        const ProductCategory* pc = catalog.find_pc(call.target.pc_id);
        const StructuredAttribute* sa = catalog.find_sa(call.target.sa_id);
        if (!pc || !sa) {
            throw IntegrityError("target pair " + call.target.pc_id + "/" + call.target.sa_id +
                                 " not in catalog");
        }
        try {
            slots[i] = generate_instruction(*pc, *sa, call.fewshots, catalog, gateway, config);
        } catch (const GenerationError& e) {
            failures[i] = CascadeFailure{pc->id, sa->id, iteration, e.what()};
        }
    });

    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i]) {
            result.generated.push_back(std::move(*slots[i]));
        } else if (failures[i]) {
            result.failures.push_back(std::move(*failures[i]));
        }
    }
    result.calls = plan.calls.size();
    return result;
}

} // namespace

CascadeOutcome run_cascade(const Catalog& catalog, const SeedSet& seeds,
                           const CascadeConfig& config, const std::vector<PcSa>& targets,
                           Gateway& gateway, InstructionStore* store) {
    if (config.iterations < 1) throw ArgumentError("cascade needs iterations >= 1");
    if (config.fewshot_count < 1) throw ArgumentError("cascade needs fewshot count >= 1");
    if (targets.empty()) throw ArgumentError("cascade needs at least one target pair");

    // Every target pair must resolve and carry definitions; seeds must too
    // (their definitions feed the meta-prompt).
    for (const auto& pair : targets) {
        const ProductCategory* pc = catalog.find_pc(pair.pc_id);
        const StructuredAttribute* sa = catalog.find_sa(pair.sa_id);
        if (!pc || !sa)
            throw IntegrityError("target pair " + pair.pc_id + "/" + pair.sa_id +
                                 " not in catalog");
        if (trim(pc->definition).empty())
            throw IntegrityError("pc '" + pc->id + "' has no definition");
        if (trim(sa->definition).empty())
            throw IntegrityError("sa '" + sa->id + "' has no definition");
    }
    for (const auto& seed : seeds.items()) {
        if (!catalog.find_pc(seed.pc_id) || !catalog.find_sa(seed.sa_id)) {
            throw IntegrityError("seed " + seed.key() + " references unknown pc or sa");
        }
    }

    std::vector<std::string> sorted_sas;
    {
        std::set<std::string> s;
        for (const auto& pair : targets) s.insert(pair.sa_id);
        sorted_sas.assign(s.begin(), s.end());
    }
    std::vector<PcSa> sorted_targets = targets;
    std::sort(sorted_targets.begin(), sorted_targets.end());
    sorted_targets.erase(std::unique(sorted_targets.begin(), sorted_targets.end()),
                         sorted_targets.end());

    CascadeOutcome outcome;
    outcome.set.set_snapshot(0, seeds.items());

    int resume_from = 0; // iterations <= resume_from are already done
    std::size_t prior_calls = 0;
    if (store) {
        if (store->has_progress()) {
            const auto stored = store->load_config();
            if (stored && (stored->iterations != config.iterations ||
                           stored->fewshot_count != config.fewshot_count ||
                           stored->rng_seed != config.rng_seed ||
                           stored->model_id != config.model_id)) {
                throw ConfigError("instruction store at " + store->dir().string() +
                                  " was produced with a different cascade config");
            }
            InstructionSet prior = store->load_snapshots();
            for (const auto& [iteration, instructions] : prior.snapshots()) {
                outcome.set.set_snapshot(iteration, instructions);
                resume_from = std::max(resume_from, iteration);
            }
            outcome.failures = store->load_failures();
            outcome.resumed_from_iteration = resume_from;
        }
        store->begin(config, sorted_targets.size(), sorted_sas.size());
        prior_calls = store->generation_calls();
        if (resume_from == 0 && !store->load_snapshots().snapshot(0)) {
            store->commit_iteration(0, seeds.items(), {}, prior_calls);
        }
    }

    std::mt19937_64 rng(config.rng_seed);
    std::size_t calls = 0;

    for (int iteration = 1; iteration <= config.iterations; ++iteration) {
        IterationPlan plan;
        if (iteration == 1) {
            if (config.iterations == 1) {
                // Single-iteration runs apply the seed few-shots to every
                // target pair so the classifier gets full coverage.
                for (const auto& pair : sorted_targets) {
                    plan.calls.push_back({pair, seeds.items()});
                }
            } else {
                plan = plan_first_iteration(catalog, seeds, config, sorted_sas, rng);
            }
        } else {
            const std::vector<Instruction>* previous = outcome.set.snapshot(iteration - 1);
            if (!previous)
                throw IntegrityError("missing snapshot for iteration " +
                                     std::to_string(iteration - 1));
            plan = plan_pair_iteration(sorted_targets, *previous, config, iteration, sorted_sas,
                                       rng);
        }

        if (iteration <= resume_from) continue; // rng already advanced by planning

        ExecutionResult result = execute_plan(plan, catalog, gateway, config, iteration);
        calls += result.calls;
        outcome.set.set_snapshot(iteration, result.generated);
        outcome.failures.insert(outcome.failures.end(), result.failures.begin(),
                                result.failures.end());
        if (store) {
            const std::vector<Instruction>* snap = outcome.set.snapshot(iteration);
            store->commit_iteration(iteration, *snap, result.failures, prior_calls + calls);
        }
    }

    outcome.generation_calls = calls;
    return outcome;
}

InstructionSet load_instruction_set(const std::filesystem::path& store_dir) {
    InstructionStore store(store_dir);
    if (!store.has_progress()) {
        throw ConfigError("no instruction store at " + store_dir.string());
    }
    return store.load_snapshots();
}

} // namespace apc
