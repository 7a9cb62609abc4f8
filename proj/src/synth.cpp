#include "afl/synth.hpp"

#include <cstdio>
#include <fstream>

#include "afl/error.hpp"
#include "afl/rng.hpp"

namespace afl {

namespace {
constexpr int kClusters = 10;
}

InteractionLog make_planted_log(int n_users, int n_items, std::uint64_t seed) {
  if (n_users < 1 || n_items < kClusters * 2)
    raise(ErrorKind::Precondition, "planted log needs >= 1 user and >= 20 items");

  InteractionLog log;
  for (int i = 1; i <= n_items; ++i) {
    char title[48];
    std::snprintf(title, sizeof(title), "Synth Artist %04d", i);
    log.catalog.add({static_cast<ItemId>(i), title});
  }

  // cluster c holds items c+1, c+1+10, c+1+20, ...
  std::vector<std::vector<ItemId>> clusters(kClusters);
  for (int i = 1; i <= n_items; ++i) clusters[(i - 1) % kClusters].push_back(i);

  // the first two items of every cluster act as globally popular picks
  std::vector<ItemId> popular;
  for (int c = 0; c < kClusters; ++c) {
    popular.push_back(clusters[c][0]);
    if (clusters[c].size() > 1) popular.push_back(clusters[c][1]);
  }

  for (int u = 1; u <= n_users; ++u) {
    const int c = (u - 1) % kClusters;
    const auto& cluster = clusters[c];
    const std::size_t stride = 1 + static_cast<std::size_t>(c % 3);

    auto rng = make_rng(seed, static_cast<std::uint64_t>(u));
    const int length = 15 + static_cast<int>(uniform_below(rng, 16));
    std::size_t pos = static_cast<std::size_t>(uniform_below(rng, cluster.size()));
    const Timestamp t0 =
        1'000'000 + static_cast<Timestamp>(mix_seed(seed, static_cast<std::uint64_t>(u)) % 500'000);

    log.user_order.push_back(u);
    for (int j = 0; j < length; ++j) {
      ItemId item;
      if (uniform_unit(rng) < 0.15) {
        item = popular[uniform_below(rng, popular.size())];
      } else {
        item = cluster[pos];
        pos = (pos + stride) % cluster.size();
      }
      log.events.push_back({static_cast<UserId>(u), item, t0 + j * 10});
    }
  }
  return log;
}

InteractionLog make_reference_log(std::uint64_t seed) { return make_planted_log(200, 500, seed); }

void write_log_tsv(const InteractionLog& log, const std::string& interactions_path,
                   const std::string& catalog_path) {
  std::ofstream catalog_out(catalog_path);
  if (!catalog_out) raise(ErrorKind::Io, "cannot write catalog " + catalog_path);
  for (const auto& [id, item] : log.catalog.items())
    catalog_out << id << '\t' << item.title << '\n';

  std::ofstream events_out(interactions_path);
  if (!events_out) raise(ErrorKind::Io, "cannot write interactions " + interactions_path);
  for (const auto& ev : log.events)
    events_out << ev.user << '\t' << ev.item << '\t' << ev.timestamp << '\n';
}

}  // namespace afl
