#pragma once

#include <cstdint>
#include <string>

#include "afl/ingest.hpp"

namespace afl {

// Synthetic interaction log with planted structure: items fall into ten
// cluster chains, each user walks one cluster with a fixed stride plus a
// slice of globally popular items. Popularity, bigram and embedding scorers
// all pick up real (and different) signal from it.
InteractionLog make_planted_log(int n_users, int n_items, std::uint64_t seed);

// The 200-user / 500-item reference instance used by the bundled checks.
InteractionLog make_reference_log(std::uint64_t seed = 20240101);

void write_log_tsv(const InteractionLog& log, const std::string& interactions_path,
                   const std::string& catalog_path);

}  // namespace afl
