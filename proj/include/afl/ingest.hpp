#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "afl/domain.hpp"

namespace afl {

struct InteractionLog {
  std::vector<InteractionEvent> events;  // input-file order
  Catalog catalog;
  std::vector<UserId> user_order;        // first-appearance order
};

struct DatasetSplit {
  std::vector<UserSequence> train;
  std::vector<UserSequence> val;
  std::vector<UserSequence> test;
};

// 20-item judgment set with positives:negatives = 1:k.
struct SimPanel {
  UserId user = 0;
  std::vector<std::pair<ItemId, bool>> items;  // (item, is_positive), shuffled
  int k = 1;
};

// Reads `user<TAB>item<TAB>timestamp` rows plus the catalog file
// (`item<TAB>title`). Malformed rows report their line number; events naming
// an item missing from the catalog are reference errors.
InteractionLog load_interactions(const std::string& interactions_path,
                                 const std::string& catalog_path);

// Per-user sequences, events stably sorted by timestamp. Sequence order
// follows first appearance in the input file.
std::vector<UserSequence> to_sequences(const InteractionLog& log);

// Sorts whole sequences by last-event timestamp ascending, then cuts
// train/val/test with floor(ratio) for val and test, remainder to train.
DatasetSplit chronological_split(const InteractionLog& log, const SplitRatios& ratios);

// Target plus (size-1) negatives sampled from the catalog minus the user's
// full history. Deterministic for a fixed (seed, user) pair.
CandidateList sample_candidates(const UserSequence& seq, ItemId target, const Catalog& catalog,
                                std::uint64_t seed, OrderingPolicy policy,
                                int candidate_size = 20);

// Number of leading events used for agent initialization; the rest is the
// held-out segment that sim-panel positives are drawn from.
std::size_t init_boundary(std::size_t length, double init_fraction);

// Positives come from distinct items past the initialization boundary,
// negatives from items the user never interacted with.
SimPanel build_sim_panel(const UserSequence& seq, double init_fraction, int k,
                         const Catalog& catalog, std::uint64_t seed);

// Interaction counts over the training split only. Items seen only in
// val/test are present with count 0.
std::map<ItemId, std::int64_t> popularity_counts(const DatasetSplit& split);

// One `user<TAB>split` line per sequence, train then val then test.
void write_split_manifest(const DatasetSplit& split, const std::string& path);

}  // namespace afl
