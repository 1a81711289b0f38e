#pragma once

#include "apc/catalog.hpp"
#include "apc/gateway.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace apc {

struct Lineage {
    std::vector<std::string> fewshot_keys; // "pc/sa@iteration"
    std::string model_id;
    std::uint64_t rng_seed = 0;
    bool empty() const { return fewshot_keys.empty() && model_id.empty(); }
};

// One instruction for one (pc, sa) pair. iteration 0 = human seed, which is
// exactly when lineage is empty.
struct Instruction {
    std::string pc_id;
    std::string sa_id;
    std::string text;
    int iteration = 0;
    Lineage lineage;
    std::string created_at;

    std::string key() const { return pc_id + "/" + sa_id; }
};

// Throws ArgumentError when text is empty or iteration/lineage disagree.
void check_instruction(const Instruction& instruction);

// Exactly M iteration-0 instructions over M distinct SAs; the few-shot list
// for every first-iteration generation call.
class SeedSet {
public:
    static SeedSet from_instructions(std::vector<Instruction> seeds, int fewshot_count);
    const std::vector<Instruction>& items() const { return items_; }
    int size() const { return static_cast<int>(items_.size()); }

private:
    std::vector<Instruction> items_;
};

std::vector<Instruction> load_instructions_jsonl(const std::filesystem::path& path);
void save_instructions_jsonl(const std::filesystem::path& path, const std::vector<Instruction>& instructions);

struct CascadeConfig {
    int iterations = 2;     // T
    int fewshot_count = 6;  // M
    std::uint64_t rng_seed = 0;
    std::string model_id = "default";
    double temperature = 0.3;
    int max_tokens = 1024;
    int workers = 8;
};

// Final (pc, sa) -> Instruction map plus the per-iteration snapshots that
// produced it. Snapshot 0 holds the seeds.
class InstructionSet {
public:
    void set_snapshot(int iteration, std::vector<Instruction> instructions);
    const std::vector<Instruction>* snapshot(int iteration) const;
    int last_iteration() const; // -1 when empty
    const std::map<int, std::vector<Instruction>>& snapshots() const { return snapshots_; }

    // Lookup in the final (highest) iteration.
    const Instruction* find(const std::string& pc_id, const std::string& sa_id) const;
    const std::map<PcSa, Instruction>& final_map() const { return final_; }

private:
    std::map<int, std::vector<Instruction>> snapshots_;
    std::map<PcSa, Instruction> final_;
};

struct CascadeFailure {
    std::string pc_id;
    std::string sa_id;
    int iteration = 0;
    std::string reason;
};

// Append-only JSONL store with one snapshot file per iteration and a
// manifest naming the completed iterations; reruns resume from the last
// complete iteration.
class InstructionStore {
public:
    explicit InstructionStore(std::filesystem::path dir);

    bool has_progress() const;
    InstructionSet load_snapshots() const;
    std::vector<CascadeFailure> load_failures() const;
    std::optional<CascadeConfig> load_config() const;

    void begin(const CascadeConfig& config, std::size_t targets, std::size_t distinct_sas);
    void commit_iteration(int iteration, const std::vector<Instruction>& instructions,
                          const std::vector<CascadeFailure>& failures, std::size_t calls_so_far);

    const std::filesystem::path& dir() const { return dir_; }
    std::size_t generation_calls() const { return generation_calls_; }
    // Digest of the final snapshot file; identifies the instruction set in
    // downstream prediction metadata.
    std::string final_digest() const;

private:
    std::filesystem::path dir_;
    void write_manifest() const;
    CascadeConfig config_;
    bool config_set_ = false;
    std::vector<int> complete_;
    std::vector<CascadeFailure> failures_;
    std::size_t targets_ = 0;
    std::size_t distinct_sas_ = 0;
    std::size_t generation_calls_ = 0;
};

// M distinct pc ids (only PCs with definitions), deterministic under a fixed
// seed: sorted ids, seeded shuffle, first M.
std::vector<std::string> sample_pcs(const Catalog& catalog, int count, std::mt19937_64& rng);

// Same-SA instructions from the previous iteration: all of them when at most
// M exist, otherwise a seeded uniform M-subset (kept in pc order). Zero
// available -> MissingSaError.
std::vector<Instruction> select_fewshot(const std::vector<Instruction>& previous_iteration,
                                        const std::string& sa_id, int fewshot_count,
                                        std::mt19937_64& rng);

// One generation call: renders the meta-prompt from the few-shots' pair
// definitions, parses the tagged instruction field (one reminder retry),
// and stamps iteration = 1 + max(few-shot iterations).
Instruction generate_instruction(const ProductCategory& pc, const StructuredAttribute& sa,
                                 const std::vector<Instruction>& fewshots, const Catalog& catalog,
                                 Gateway& gateway, const CascadeConfig& config);

struct CascadeOutcome {
    InstructionSet set;
    std::vector<CascadeFailure> failures;
    std::size_t generation_calls = 0;
    int resumed_from_iteration = -1; // last iteration loaded from the store
};

// Iteration 1 generates M instructions per distinct target SA over sampled
// PCs with the full seed set as few-shots; iterations 2..T generate one
// instruction per target pair from same-SA few-shots of the previous
// iteration. With T == 1 the first iteration covers every target pair
// directly. Failed pairs are reported and skipped; the run continues.
CascadeOutcome run_cascade(const Catalog& catalog, const SeedSet& seeds, const CascadeConfig& config,
                           const std::vector<PcSa>& targets, Gateway& gateway,
                           InstructionStore* store = nullptr);

// Loads a persisted instruction set (final snapshot + all snapshots).
InstructionSet load_instruction_set(const std::filesystem::path& store_dir);

} // namespace apc
