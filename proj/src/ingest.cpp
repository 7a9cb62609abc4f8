#include "afl/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "afl/error.hpp"
#include "afl/rng.hpp"

namespace afl {

namespace {

std::vector<std::string> split_tsv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

std::int64_t parse_int(const std::string& field, const std::string& what, int line_no) {
  std::int64_t value = 0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || field.empty())
    raise(ErrorKind::Parse,
          "line " + std::to_string(line_no) + ": non-integer " + what + " '" + field + "'");
  return value;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

InteractionLog load_interactions(const std::string& interactions_path,
                                 const std::string& catalog_path) {
  InteractionLog log;

  std::ifstream catalog_in(catalog_path);
  if (!catalog_in) raise(ErrorKind::Io, "cannot open catalog file " + catalog_path);
  std::string line;
  int line_no = 0;
  while (std::getline(catalog_in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_tsv(line);
    if (fields.size() != 2)
      raise(ErrorKind::Parse, "line " + std::to_string(line_no) + ": catalog row needs 2 fields, got " +
                                  std::to_string(fields.size()));
    Item item;
    item.id = parse_int(fields[0], "item id", line_no);
    item.title = fields[1];
    if (item.title.empty())
      raise(ErrorKind::Parse, "line " + std::to_string(line_no) + ": empty title");
    log.catalog.add(std::move(item));
  }

  std::ifstream events_in(interactions_path);
  if (!events_in) raise(ErrorKind::Io, "cannot open interactions file " + interactions_path);
  std::unordered_set<UserId> seen_users;
  line_no = 0;
  while (std::getline(events_in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_tsv(line);
    if (fields.size() != 3)
      raise(ErrorKind::Parse, "line " + std::to_string(line_no) + ": interaction row needs 3 fields, got " +
                                  std::to_string(fields.size()));
    InteractionEvent ev;
    ev.user = parse_int(fields[0], "user id", line_no);
    ev.item = parse_int(fields[1], "item id", line_no);
    ev.timestamp = parse_int(fields[2], "timestamp", line_no);
    if (ev.timestamp < 0)
      raise(ErrorKind::Parse, "line " + std::to_string(line_no) + ": negative timestamp");
    if (!log.catalog.contains(ev.item))
      raise(ErrorKind::Reference,
            "line " + std::to_string(line_no) + ": item " + std::to_string(ev.item) +
                " missing from catalog");
    if (seen_users.insert(ev.user).second) log.user_order.push_back(ev.user);
    log.events.push_back(ev);
  }
  return log;
}

std::vector<UserSequence> to_sequences(const InteractionLog& log) {
  std::unordered_map<UserId, std::vector<std::pair<Timestamp, ItemId>>> grouped;
  for (const auto& ev : log.events) grouped[ev.user].push_back({ev.timestamp, ev.item});

  std::vector<UserSequence> sequences;
  sequences.reserve(log.user_order.size());
  for (UserId user : log.user_order) {
    auto& rows = grouped[user];
    // stable: ties in timestamp keep input-file order
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    UserSequence seq;
    seq.user = user;
    seq.items.reserve(rows.size());
    seq.timestamps.reserve(rows.size());
    for (const auto& [ts, item] : rows) {
      seq.items.push_back(item);
      seq.timestamps.push_back(ts);
    }
    validate(seq);
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

DatasetSplit chronological_split(const InteractionLog& log, const SplitRatios& ratios) {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0 || std::abs(sum - 1.0) > 1e-9)
    raise(ErrorKind::Precondition, "split ratios must be positive and sum to 1");

  std::vector<UserSequence> sequences = to_sequences(log);
  if (sequences.size() < 3)
    raise(ErrorKind::Split,
          "need at least 3 sequences, got " + std::to_string(sequences.size()));

  std::stable_sort(sequences.begin(), sequences.end(), [](const auto& a, const auto& b) {
    return a.last_timestamp() < b.last_timestamp();
  });

  const std::size_t n = sequences.size();
  const std::size_t n_val = static_cast<std::size_t>(static_cast<double>(n) * ratios.val);
  const std::size_t n_test = static_cast<std::size_t>(static_cast<double>(n) * ratios.test);
  const std::size_t n_train = n - n_val - n_test;

  DatasetSplit split;
  split.train.assign(sequences.begin(), sequences.begin() + n_train);
  split.val.assign(sequences.begin() + n_train, sequences.begin() + n_train + n_val);
  split.test.assign(sequences.begin() + n_train + n_val, sequences.end());
  return split;
}

CandidateList sample_candidates(const UserSequence& seq, ItemId target, const Catalog& catalog,
                                std::uint64_t seed, OrderingPolicy policy, int candidate_size) {
  validate(seq);
  if (candidate_size < 2) raise(ErrorKind::Precondition, "candidate_size must be >= 2");
  if (!catalog.contains(target))
    raise(ErrorKind::Reference, "target item " + std::to_string(target) + " missing from catalog");

  std::unordered_set<ItemId> excluded(seq.items.begin(), seq.items.end());
  excluded.insert(target);

  std::vector<ItemId> eligible;
  eligible.reserve(catalog.size());
  for (ItemId id : catalog.ids())
    if (!excluded.count(id)) eligible.push_back(id);

  const std::size_t need = static_cast<std::size_t>(candidate_size) - 1;
  if (eligible.size() < need)
    raise(ErrorKind::Sampling, "only " + std::to_string(eligible.size()) +
                                   " eligible negatives for user " + std::to_string(seq.user) +
                                   ", need " + std::to_string(need));

  auto rng = make_rng(seed, static_cast<std::uint64_t>(seq.user));
  std::vector<ItemId> negatives = sample_without_replacement(std::move(eligible), need, rng);

  CandidateList list;
  list.policy = policy;
  switch (policy) {
    case OrderingPolicy::First: list.positive_index = 0; break;
    case OrderingPolicy::Last: list.positive_index = candidate_size - 1; break;
    case OrderingPolicy::Random:
      list.positive_index =
          static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(candidate_size)));
      break;
  }
  list.items = std::move(negatives);
  list.items.insert(list.items.begin() + list.positive_index, target);
  validate(list, candidate_size);
  return list;
}

std::size_t init_boundary(std::size_t length, double init_fraction) {
  std::size_t init_len = static_cast<std::size_t>(init_fraction * static_cast<double>(length));
  if (length < 2) return length;
  return std::max<std::size_t>(1, std::min(init_len, length - 1));
}

SimPanel build_sim_panel(const UserSequence& seq, double init_fraction, int k,
                         const Catalog& catalog, std::uint64_t seed) {
  validate(seq);
  if (k != 1 && k != 3 && k != 9) raise(ErrorKind::Precondition, "k must be one of {1,3,9}");
  if (init_fraction <= 0.0 || init_fraction >= 1.0)
    raise(ErrorKind::Precondition, "init_fraction must lie in (0, 1)");

  const int panel_size = 20;
  const int n_pos = panel_size / (1 + k);  // 10, 5 or 2
  const int n_neg = panel_size - n_pos;

  const std::size_t len = seq.items.size();
  if (len < 2)
    raise(ErrorKind::Panel, "user " + std::to_string(seq.user) + ": sequence too short");
  const std::size_t init_len = init_boundary(len, init_fraction);

  std::unordered_set<ItemId> init_items(seq.items.begin(), seq.items.begin() + init_len);
  std::unordered_set<ItemId> all_items(seq.items.begin(), seq.items.end());

  std::unordered_set<ItemId> held_out_set;
  for (std::size_t i = init_len; i < len; ++i)
    if (!init_items.count(seq.items[i])) held_out_set.insert(seq.items[i]);
  std::vector<ItemId> positives_pool(held_out_set.begin(), held_out_set.end());
  std::sort(positives_pool.begin(), positives_pool.end());

  if (positives_pool.size() < static_cast<std::size_t>(n_pos))
    raise(ErrorKind::Panel, "user " + std::to_string(seq.user) + ": only " +
                                std::to_string(positives_pool.size()) +
                                " held-out positives, need " + std::to_string(n_pos));

  std::vector<ItemId> negatives_pool;
  negatives_pool.reserve(catalog.size());
  for (ItemId id : catalog.ids())
    if (!all_items.count(id)) negatives_pool.push_back(id);
  if (negatives_pool.size() < static_cast<std::size_t>(n_neg))
    raise(ErrorKind::Panel, "user " + std::to_string(seq.user) + ": only " +
                                std::to_string(negatives_pool.size()) + " negatives, need " +
                                std::to_string(n_neg));

  auto rng = make_rng(seed, static_cast<std::uint64_t>(seq.user));
  const auto positives = sample_without_replacement(std::move(positives_pool), n_pos, rng);
  const auto negatives = sample_without_replacement(std::move(negatives_pool), n_neg, rng);

  SimPanel panel;
  panel.user = seq.user;
  panel.k = k;
  for (ItemId id : positives) panel.items.push_back({id, true});
  for (ItemId id : negatives) panel.items.push_back({id, false});
  deterministic_shuffle(panel.items, rng);
  return panel;
}

std::map<ItemId, std::int64_t> popularity_counts(const DatasetSplit& split) {
  std::map<ItemId, std::int64_t> counts;
  for (const auto& seq : split.train)
    for (ItemId id : seq.items) counts[id] += 1;
  for (const auto* part : {&split.val, &split.test})
    for (const auto& seq : *part)
      for (ItemId id : seq.items) counts.try_emplace(id, 0);
  return counts;
}

void write_split_manifest(const DatasetSplit& split, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(ErrorKind::Io, "cannot write split manifest " + path);
  const auto emit = [&out](const std::vector<UserSequence>& part, const char* name) {
    for (const auto& seq : part) out << seq.user << '\t' << name << '\n';
  };
  emit(split.train, "train");
  emit(split.val, "val");
  emit(split.test, "test");
}

}  // namespace afl
