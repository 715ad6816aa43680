#include <doctest.h>

#include <set>

#include "qf/decontam.hpp"
#include "qf/error.hpp"
#include "qf/hash.hpp"
#include "qf/rng.hpp"
#include "support.hpp"

using namespace qf;

namespace {

std::string join_space(const std::vector<std::string>& t, std::size_t b, std::size_t n) {
  std::string s;
  for (std::size_t i = b; i < b + n; ++i) s += (i > b ? " " : "") + t[i];
  return s;
}

// Exact string windows, no hashing.
struct NaiveIndex {
  std::size_t n;
  std::set<std::string> grams;
  NaiveIndex(const std::vector<std::string>& texts, std::size_t n) : n(n) {
    for (const auto& t : texts) {
      const auto toks = normalize_for_ngrams(t);
      for (std::size_t i = 0; i + n <= toks.size(); ++i) grams.insert(join_space(toks, i, n));
    }
  }
  bool hit(const std::string& text) const {
    const auto toks = normalize_for_ngrams(text);
    for (std::size_t i = 0; i + n <= toks.size(); ++i)
      if (grams.count(join_space(toks, i, n))) return true;
    return false;
  }
};

}  // namespace

TEST_SUITE("decontam") {
  TEST_CASE("normalisation for n-grams") {
    CHECK(normalize_for_ngrams("Provide for the common Defence, promote!") ==
          std::vector<std::string>{"provide", "for", "the", "common", "defence", "promote"});
    CHECK(normalize_for_ngrams("  ").empty());
  }

  TEST_CASE("window fingerprints equal hashes of explicit joins") {
    const std::vector<std::string> toks{"a", "bb", "c", "dd", "e"};
    const auto fps = window_fingerprints(toks, 3);
    REQUIRE(fps.size() == 3);
    const std::string sep(kGramSeparator);
    CHECK(fps[0] == fnv1a64("a" + sep + "bb" + sep + "c"));
    CHECK(fps[2] == fnv1a64("c" + sep + "dd" + sep + "e"));
    CHECK(fps[1] == gram_fingerprint(std::span(toks).subspan(1, 3)));
    CHECK(window_fingerprints(toks, 6).empty());
  }

  TEST_CASE("preamble benchmark question flags the web document") {
    const auto dir = qft::scratch_dir("decont-preamble");
    IndexBuildReport rep;
    const auto idx =
        build_index({{"mmlu", qft::data_dir() / "mmlu_preamble.jsonl", {"question", "choices"}}}, 13, &rep);
    CHECK(rep.texts.at("mmlu") == 5);  // question plus four choices
    CHECK(rep.short_texts.at("mmlu") == 4);
    CHECK(idx.n() == 13);
    CHECK(idx.sources() == std::vector<std::string>{"mmlu"});

    const auto docs = read_documents(qft::data_dir() / "preamble_docs.jsonl");
    REQUIRE(docs.size() == 2);
    const auto hit = find_contamination(idx, docs[0].text);
    REQUIRE(hit.has_value());
    CHECK(hit->gram == "provide for the common defence promote the general welfare and secure the blessings");
    CHECK(hit->benchmark == "mmlu");
    CHECK_FALSE(find_contamination(idx, docs[1].text).has_value());

    DecontReport dr;
    const auto clean = decontaminate(docs, idx, &dr);
    REQUIRE(clean.size() == 1);
    CHECK(clean[0].id == "web-clean");
    CHECK(dr.removed_docs == 1);
    CHECK(dr.samples.at(0).doc_id == "web-preamble");

    const auto fr = decontaminate_file(qft::data_dir() / "preamble_docs.jsonl", idx, dir / "out.jsonl", 2);
    CHECK(fr.removed_docs == 1);
    CHECK(read_documents(dir / "out.jsonl") == clean);
  }

  TEST_CASE("hashed scan agrees with the naive string oracle") {
    Rng rng(21);
    const std::vector<std::string> vocab{"the", "cat", "sat", "on", "mat", "dog", "ran", "far", "Big", "red,"};
    auto random_text = [&](std::size_t len) {
      std::string s;
      for (std::size_t i = 0; i < len; ++i) s += (i ? " " : "") + vocab[rng.index(vocab.size())];
      return s;
    };
    std::vector<std::pair<std::string, std::string>> bench;
    std::vector<std::string> bench_texts;
    for (int i = 0; i < 30; ++i) {
      bench.emplace_back("b", random_text(8 + rng.index(10)));
      bench_texts.push_back(bench.back().second);
    }
    for (int n : {3, 5}) {
      const auto idx = build_index_from_texts(bench, n);
      const NaiveIndex naive(bench_texts, static_cast<std::size_t>(n));
      std::size_t hits = 0;
      for (int d = 0; d < 500; ++d) {
        const auto text = random_text(rng.index(15));
        const bool expected = naive.hit(text);
        REQUIRE(find_contamination(idx, text).has_value() == expected);
        hits += expected;
      }
      CHECK(hits > 0);
      CHECK(hits < 500);
    }
  }

  TEST_CASE("rate over a seeded corpus") {
    const auto docs = qft::toy_corpus(2000, 5);
    const std::string bench =
        "which of the following enzymes catalyses the first committed step of glycolysis in human liver cells";
    std::vector<Document> mixed = docs;
    for (std::size_t i : {5u, 99u, 1500u}) mixed[i].text += " " + bench + " trailing words";
    const auto idx = build_index_from_texts({{"quiz", bench}}, 13);
    DecontReport rep;
    const auto clean = decontaminate(mixed, idx, &rep);
    CHECK(rep.removed_docs == 3);
    CHECK(rep.contamination_rate() == 3.0 / 2000.0);
    CHECK(clean.size() == 1997);
    CHECK(rep.benchmark_hits.at("quiz") == 3);
  }

  TEST_CASE("index file round trip and validation") {
    const auto dir = qft::scratch_dir("decont-io");
    const auto idx = build_index_from_texts({{"a", "one two three four"}, {"b", "five six seven eight"}}, 2);
    CHECK(idx.size() == 6);
    idx.save(dir / "i.ngix");
    const auto back = NgramIndex::load(dir / "i.ngix");
    CHECK(back.grams() == idx.grams());
    CHECK(back.n() == 2);
    CHECK(back.tag() == std::string(kNormalizationTag));
    const std::vector<std::string> w{"six", "seven"};
    CHECK(back.origin(gram_fingerprint(w)) == "b");

    const auto bytes = qft::read_file(dir / "i.ngix");
    qft::write_file(dir / "cut.ngix", bytes.substr(0, bytes.size() - 2));
    CHECK_THROWS_AS(NgramIndex::load(dir / "cut.ngix"), DataError);

    const NgramIndex other_tag(2, idx.grams(), {"a"}, "other-rules/9");
    CHECK_THROWS_AS(find_contamination(other_tag, "one two"), DataError);
    CHECK_THROWS_AS(decontaminate({}, NgramIndex{}, nullptr), DataError);
  }

  TEST_CASE("build errors") {
    CHECK_THROWS_AS(build_index_from_texts({{"a", "x y z"}}, 1), ConfigError);
    IndexBuildReport rep;
    CHECK_THROWS_AS(build_index_from_texts({{"a", "too short"}}, 13, &rep), DataError);
  }

  TEST_CASE("parallel file scan matches the in-memory scan") {
    const auto dir = qft::scratch_dir("decont-par");
    auto docs = qft::toy_corpus(5000, 8);
    const std::string bench = "the integral of the velocity function over the interval gives the displacement of the particle";
    for (std::size_t i = 0; i < docs.size(); i += 700) docs[i].text = bench;
    write_documents(docs, dir / "c.jsonl");
    const auto idx = build_index_from_texts({{"calc", bench}}, 13);
    DecontReport mem;
    const auto clean = decontaminate(docs, idx, &mem);
    const auto f1 = decontaminate_file(dir / "c.jsonl", idx, dir / "o1.jsonl", 1);
    const auto f4 = decontaminate_file(dir / "c.jsonl", idx, dir / "o4.jsonl", 4);
    CHECK(f1.removed_docs == mem.removed_docs);
    CHECK(f4.to_json() == f1.to_json());
    CHECK(qft::read_file(dir / "o1.jsonl") == qft::read_file(dir / "o4.jsonl"));
    CHECK(read_documents(dir / "o1.jsonl") == clean);
  }
}
