#include <algorithm>
#include <random>

#include "doctest.h"

#include "chatassist/vectorcore.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace chatassist;

namespace {

TagEvent tag(std::string category, std::string value, std::size_t index = 0) {
  TagEvent t;
  t.session_id = "s";
  t.category = std::move(category);
  t.value = std::move(value);
  t.message_index = index;
  return t;
}

std::vector<TagEvent> counted(const std::vector<std::pair<std::string, int>>& counts) {
  std::vector<TagEvent> out;
  for (const auto& [c, k] : counts)
    for (int i = 0; i < k; ++i) out.push_back(tag(c, "v"));
  return out;
}

TagSchema uni_schema() {
  std::vector<TagEvent> events{tag("university", "UCLA"), tag("university", "MIT"),
                               tag("savings", "20k"), tag("income", "low")};
  return build_schema(events, 3);
}

}  // namespace

TEST_CASE("label list keeps the n most frequent categories in alphabetical order") {
  auto events = counted({{"university", 5}, {"savings", 3}, {"income", 3}, {"pet", 1}});
  auto labels = build_label_list(events, 3);
  CHECK(labels.labels() == std::vector<std::string>{"income", "savings", "university"});

  // Brute force: every 3-subset, pick the one with the largest count vector
  // under the tie rule, compare after sorting.
  std::map<std::string, int> counts{{"university", 5}, {"savings", 3}, {"income", 3}, {"pet", 1}};
  std::vector<std::string> names;
  for (auto& [k, v] : counts) names.push_back(k);
  std::vector<std::string> best;
  long best_score = -1;
  for (std::size_t a = 0; a < names.size(); ++a)
    for (std::size_t b = a + 1; b < names.size(); ++b)
      for (std::size_t c = b + 1; c < names.size(); ++c) {
        long score = counts[names[a]] + counts[names[b]] + counts[names[c]];
        if (score > best_score) {
          best_score = score;
          best = {names[a], names[b], names[c]};
        }
      }
  CHECK(labels.labels() == best);
}

TEST_CASE("label list with n equal to the distinct count returns every category") {
  auto events = counted({{"zeta", 1}, {"Alpha", 4}, {"beta", 2}});
  CHECK(build_label_list(events, 3).labels() == std::vector<std::string>{"Alpha", "beta", "zeta"});
}

TEST_CASE("label list treats casings as distinct and orders them deterministically") {
  auto events = counted({{"income", 2}, {"Income", 2}, {"age", 1}});
  auto labels = build_label_list(events, 2);
  CHECK(labels.labels() == std::vector<std::string>{"Income", "income"});
  CHECK(collate_less("Income", "income"));
  CHECK_FALSE(collate_less("income", "Income"));
  CHECK(collate_less("apple", "Banana"));
}

TEST_CASE("label list ties on count are broken by collation") {
  auto events = counted({{"b", 2}, {"a", 2}, {"c", 2}});
  CHECK(build_label_list(events, 2).labels() == std::vector<std::string>{"a", "b"});
}

TEST_CASE("label list errors") {
  CHECK_ERROR_CODE(build_label_list(std::vector<TagEvent>{}, 1), ErrorCode::kEmptyCorpus);
  CHECK_ERROR_CODE(build_label_list(counted({{"a", 1}, {"b", 1}}), 3), ErrorCode::kNotEnoughCategories);
  CHECK_ERROR_CODE(LabelList({"b", "a"}), ErrorCode::kBadConfig);
  CHECK_ERROR_CODE(LabelList({"a", "a"}), ErrorCode::kBadConfig);
}

TEST_CASE("categories are trimmed before counting") {
  auto events = counted({{" university ", 2}, {"university", 1}, {"pet", 1}});
  CHECK(build_label_list(events, 1).labels() == std::vector<std::string>{"university"});
}

TEST_CASE("known word table ignores sentinels and keeps first-seen order") {
  KnownWordTable t;
  t.add("u", "MIT");
  t.add("u", "-");
  t.add("u", "unknown");
  t.add("u", "UCLA");
  t.add("u", "MIT");
  CHECK(t.vocabulary("u") == std::vector<std::string>{"MIT", "UCLA"});
  CHECK(t.contains("u", "UCLA"));
  CHECK_FALSE(t.contains("u", "unknown"));
}

TEST_CASE("apply_tag with a known word sets V and W") {
  TagSchema s = uni_schema();
  auto x = InformationVector::empty(s.size());
  auto y = apply_tag(x, tag("university", "UCLA"), s);
  const auto i = *s.labels.index_of("university");
  CHECK(y.values[i] == "UCLA");
  CHECK(y.present[i] == 1);
  CHECK(y.tag_count == 1);
  CHECK(x.values[i] == "-");  // input untouched
  CHECK(y.well_formed(s));
}

TEST_CASE("apply_tag with an unseen word stores unknown") {
  TagSchema s = uni_schema();
  auto y = apply_tag(InformationVector::empty(s.size()), tag("university", "Columbia"), s);
  const auto i = *s.labels.index_of("university");
  CHECK(y.values[i] == "unknown");
  CHECK(y.present[i] == 1);
}

TEST_CASE("apply_tag ignores categories outside the schema, t included") {
  TagSchema s = uni_schema();
  auto x = apply_tag(InformationVector::empty(s.size()), tag("savings", "20k"), s);
  auto y = apply_tag(x, tag("favorite_color", "blue"), s);
  CHECK(y == x);
  CHECK(y.tag_count == 1);
}

TEST_CASE("apply_tag rejects malformed vectors") {
  TagSchema s = uni_schema();
  auto x = InformationVector::empty(s.size());
  x.present[0] = 1;  // W says present, V says "-"
  CHECK_ERROR_CODE(apply_tag(x, tag("savings", "20k"), s), ErrorCode::kMalformedVector);
  CHECK_ERROR_CODE(apply_tag(InformationVector::empty(1), tag("savings", "20k"), s),
                   ErrorCode::kMalformedVector);
}

TEST_CASE("snapshot stream: empty input gives the all-dash vector") {
  TagSchema s = uni_schema();
  auto snaps = snapshot_stream(std::vector<TagEvent>{}, s);
  REQUIRE(snaps.size() == 1);
  CHECK(snaps[0] == InformationVector::empty(s.size()));
}

TEST_CASE("snapshot stream: two tags give three snapshots with monotone W") {
  TagSchema s = uni_schema();
  std::vector<TagEvent> tags{tag("university", "MIT"), tag("pet", "dog"), tag("savings", "20k")};
  auto snaps = snapshot_stream(tags, s);
  REQUIRE(snaps.size() == 3);
  for (std::size_t k = 1; k < snaps.size(); ++k)
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(snaps[k].present[i] >= snaps[k - 1].present[i]);
}

TEST_CASE("snapshot stream: re-tagging a label keeps the last value") {
  TagSchema s = uni_schema();
  std::vector<TagEvent> tags{tag("university", "MIT"), tag("university", "UCLA")};
  auto snaps = snapshot_stream(tags, s);
  CHECK(snaps.back().values[*s.labels.index_of("university")] == "UCLA");
  CHECK(snaps.back().tag_count == 2);
}

TEST_CASE("snapshot stream matches the brute-force fold on random streams") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    auto r = oracle::random_stream(rng);
    auto s = oracle::schema_of(r);
    auto got = snapshot_stream(r.tags, s);
    auto want = oracle::fold(r.tags, r.labels, r.vocab);
    REQUIRE(got.size() == want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      CHECK(oracle::same(got[k], want[k]));
      CHECK(got[k].well_formed(s));
    }
  }
}

TEST_CASE("permuting tags of distinct labels leaves the final vector unchanged") {
  TagSchema s = uni_schema();
  std::vector<TagEvent> tags{tag("university", "MIT"), tag("savings", "20k"), tag("income", "low")};
  auto base = snapshot_stream(tags, s).back();
  std::sort(tags.begin(), tags.end(), [](auto& a, auto& b) { return a.category < b.category; });
  do {
    CHECK(snapshot_stream(tags, s).back() == base);
  } while (std::next_permutation(tags.begin(), tags.end(),
                                 [](auto& a, auto& b) { return a.category < b.category; }));
}

TEST_CASE("encode layout") {
  TagSchema s = uni_schema();  // income{low}, savings{20k}, university{UCLA, MIT}
  CHECK(encoded_dim(s) == 3 + (2 + 1) + (2 + 1) + (2 + 2));
  auto e = encode(InformationVector::empty(s.size()), s);
  REQUIRE(e.size() == encoded_dim(s));
  // Each block hot at "-", W bits zero.
  CHECK(e[0] == 1.0);
  CHECK(e[3] == 1.0);
  CHECK(e[6] == 1.0);
  CHECK(e[10] == 0.0);
  CHECK(e[11] == 0.0);
  CHECK(e[12] == 0.0);

  auto x = apply_tag(InformationVector::empty(s.size()), tag("university", "Harvard"), s);
  auto u = encode(x, s);
  CHECK(u[6] == 0.0);
  CHECK(u[7] == 1.0);  // "unknown" slot of the university block
  CHECK(u[12] == 1.0);
  CHECK(std::count(u.begin(), u.end(), 1.0) == 4);
}

TEST_CASE("encode is injective and decode inverts it over a small vocabulary") {
  TagSchema s;
  s.labels = LabelList({"a", "b"});
  s.vocab.add("a", "x");
  s.vocab.add("a", "y");
  s.vocab.add("b", "z");
  const std::vector<std::vector<std::string>> symbols{{"-", "unknown", "x", "y"}, {"-", "unknown", "z"}};
  std::set<EncodedVector> seen;
  int count = 0;
  for (const auto& va : symbols[0])
    for (const auto& vb : symbols[1]) {
      InformationVector x = InformationVector::empty(2);
      x.values = {va, vb};
      x.present = {static_cast<std::uint8_t>(va != "-"), static_cast<std::uint8_t>(vb != "-")};
      auto e = encode(x, s);
      seen.insert(e);
      ++count;
      auto back = decode(e, s);
      CHECK(back.same_symbols(x));
    }
  CHECK(seen.size() == static_cast<std::size_t>(count));
}

TEST_CASE("encode and decode reject malformed input") {
  TagSchema s = uni_schema();
  InformationVector x = InformationVector::empty(s.size());
  x.values[0] = "not-in-vocab";
  x.present[0] = 1;
  CHECK_ERROR_CODE(encode(x, s), ErrorCode::kMalformedVector);
  std::vector<double> bad(encoded_dim(s), 0.0);
  CHECK_ERROR_CODE(decode(bad, s), ErrorCode::kMalformedVector);
  CHECK_ERROR_CODE(decode(std::vector<double>(3, 0.0), s), ErrorCode::kMalformedVector);
}

TEST_CASE("schema round-trips through JSON and keeps its hash") {
  TagSchema s = uni_schema();
  auto doc = s.to_json();
  CHECK(doc.at("n") == 3);
  CHECK(doc.at("version") == 1);
  auto back = TagSchema::from_json(doc);
  CHECK(back == s);
  CHECK(back.hash() == s.hash());
  doc["vocab"]["savings"].push_back("-");
  CHECK_ERROR_CODE(TagSchema::from_json(doc), ErrorCode::kParseError);
}

TEST_CASE("snapshot record has t, V and W of length n") {
  TagSchema s = uni_schema();
  auto x = apply_tag(InformationVector::empty(s.size()), tag("savings", "20k"), s);
  auto rec = snapshot_record(x);
  CHECK(rec.at("t") == 1);
  CHECK(rec.at("V").size() == 3);
  CHECK(rec.at("W").size() == 3);
  CHECK(x.concat().size() == 6);
}
