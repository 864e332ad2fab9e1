#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "moicl/partitioning.hpp"
#include "moicl/rng.hpp"

using namespace moicl;

namespace {

std::vector<Demonstration> make_pool(std::size_t n) {
    std::vector<Demonstration> pool;
    for (std::size_t i = 0; i < n; ++i) {
        Demonstration d;
        d.id = "d" + std::to_string(i);
        d.input = "input " + std::to_string(i);
        d.output = "label";
        pool.push_back(std::move(d));
    }
    return pool;
}

void check_disjoint_cover(const Partition& p, const std::vector<Demonstration>& pool) {
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const auto& subset : p.subsets) {
        CHECK(!subset.empty());
        for (const auto& id : subset) {
            CHECK(seen.insert(id).second);
            ++total;
        }
    }
    CHECK(total == pool.size());
}

std::multiset<std::multiset<std::string>> as_set_of_sets(const Partition& p) {
    std::multiset<std::multiset<std::string>> out;
    for (const auto& s : p.subsets) out.insert(std::multiset<std::string>(s.begin(), s.end()));
    return out;
}

}  // namespace

TEST_CASE("partition_static sizes and determinism") {
    SUBCASE("exact division") {
        const auto pool = make_pool(6);
        const auto p = partition_static(pool, 3, 7);
        CHECK(p.k() == 3);
        for (const auto& s : p.subsets) CHECK(s.size() == 2);
        check_disjoint_cover(p, pool);
    }
    SUBCASE("k = n gives singletons") {
        const auto pool = make_pool(30);
        const auto p = partition_static(pool, 30, 11);
        CHECK(p.k() == 30);
        for (const auto& s : p.subsets) CHECK(s.size() == 1);
        check_disjoint_cover(p, pool);
    }
    SUBCASE("n=7, k=3, seed=42 reproduces the documented shuffle") {
        const auto pool = make_pool(7);
        const auto p = partition_static(pool, 3, 42);
        REQUIRE(p.k() == 3);
        CHECK(p.subsets[0].size() == 3);
        CHECK(p.subsets[1].size() == 2);
        CHECK(p.subsets[2].size() == 2);

        // Independent re-run of the documented algorithm: back-to-front
        // Fisher-Yates over pool order driven by splitmix64 bounded draws,
        // then contiguous chunks with the remainder up front.
        std::vector<std::string> ids;
        for (const auto& d : pool) ids.push_back(d.id);
        Rng rng(42);
        for (std::size_t i = ids.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
            std::swap(ids[i], ids[j]);
        }
        const std::vector<std::vector<std::string>> expected = {
            {ids[0], ids[1], ids[2]}, {ids[3], ids[4]}, {ids[5], ids[6]}};
        CHECK(p.subsets == expected);
    }
    SUBCASE("deterministic and balanced across seeds") {
        const auto pool = make_pool(23);
        for (const std::uint64_t seed : {1, 2, 99}) {
            const auto a = partition_static(pool, 5, seed);
            const auto b = partition_static(pool, 5, seed);
            CHECK(a == b);
            std::size_t min_size = pool.size(), max_size = 0;
            for (const auto& s : a.subsets) {
                min_size = std::min(min_size, s.size());
                max_size = std::max(max_size, s.size());
            }
            CHECK(max_size - min_size <= 1);
            check_disjoint_cover(a, pool);
        }
    }
    SUBCASE("invalid k") {
        const auto pool = make_pool(4);
        CHECK_THROWS_AS(partition_static(pool, 0, 1), InvalidK);
        CHECK_THROWS_AS(partition_static(pool, 5, 1), InvalidK);
    }
}

TEST_CASE("partition_random_size") {
    SUBCASE("k=1 is the whole pool") {
        const auto pool = make_pool(9);
        const auto p = partition_random_size(pool, 1, 3);
        REQUIRE(p.k() == 1);
        CHECK(p.subsets[0].size() == 9);
    }
    SUBCASE("n=30, k=5, seed=31 covers the pool with nonempty subsets") {
        const auto pool = make_pool(30);
        const auto p = partition_random_size(pool, 5, 31);
        CHECK(p.k() == 5);
        check_disjoint_cover(p, pool);
        CHECK(p == partition_random_size(pool, 5, 31));
    }
    SUBCASE("n=k forces singletons") {
        const auto pool = make_pool(6);
        const auto p = partition_random_size(pool, 6, 8);
        for (const auto& s : p.subsets) CHECK(s.size() == 1);
    }
    SUBCASE("sizes vary across seeds") {
        const auto pool = make_pool(30);
        bool saw_uneven = false;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto p = partition_random_size(pool, 5, seed);
            check_disjoint_cover(p, pool);
            std::set<std::size_t> sizes;
            for (const auto& s : p.subsets) sizes.insert(s.size());
            if (sizes.size() > 1) saw_uneven = true;
        }
        CHECK(saw_uneven);
    }
}

TEST_CASE("bm25_score") {
    SUBCASE("no shared terms scores zero") {
        const auto stats = build_bm25_stats({{"aa", "bb"}, {"cc"}});
        CHECK(bm25_score({"zz"}, {"aa", "bb"}, stats) == 0.0);
    }
    SUBCASE("single-document corpus hand evaluation") {
        const std::vector<std::vector<std::string>> docs = {{"term"}};
        const auto stats = build_bm25_stats(docs, 1.5, 0.75);
        const double score = bm25_score({"term"}, {"term"}, stats);
        // IDF = ln(1 + 0.5/1.5); tf part = 2.5 / (1 + 1.5) = 1.
        CHECK(score == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));
    }
    SUBCASE("duplicate documents score equally") {
        const std::vector<std::vector<std::string>> docs = {
            {"aa", "bb"}, {"aa", "bb"}, {"cc", "dd"}};
        const auto stats = build_bm25_stats(docs);
        const auto q = std::vector<std::string>{"aa", "cc"};
        CHECK(bm25_score(q, docs[0], stats) == bm25_score(q, docs[1], stats));
    }
    SUBCASE("nonnegative, zero iff no query term matches") {
        Rng rng(5);
        const std::vector<std::string> words = {"aa", "bb", "cc", "dd", "ee", "ff"};
        std::vector<std::vector<std::string>> docs;
        for (int i = 0; i < 8; ++i) {
            std::vector<std::string> doc;
            const std::size_t len = 1 + rng.next_below(4);
            for (std::size_t j = 0; j < len; ++j) {
                doc.push_back(words[rng.next_below(words.size())]);
            }
            docs.push_back(doc);
        }
        const auto stats = build_bm25_stats(docs);
        for (const auto& doc : docs) {
            for (int t = 0; t < 10; ++t) {
                std::vector<std::string> query = {words[rng.next_below(words.size())],
                                                  words[rng.next_below(words.size())]};
                const double s = bm25_score(query, doc, stats);
                CHECK(s >= 0.0);
                const bool overlap =
                    std::any_of(query.begin(), query.end(), [&](const std::string& q) {
                        return std::find(doc.begin(), doc.end(), q) != doc.end();
                    });
                CHECK((s > 0.0) == overlap);
            }
        }
    }
}

TEST_CASE("partition_bm25") {
    SUBCASE("recovers two disjoint-vocabulary topic groups") {
        std::vector<Demonstration> pool = make_pool(6);
        pool[0].input = "red apple fruit";
        pool[1].input = "ripe apple cherry";
        pool[2].input = "cherry fruit basket";
        pool[3].input = "fast car engine";
        pool[4].input = "car engine wheel";
        pool[5].input = "fast wheel road";

        const auto p = partition_bm25(pool, 2, 17);
        check_disjoint_cover(p, pool);

        // Brute-force best balanced 2-clustering by total intra-subset
        // symmetrized BM25 similarity.
        std::vector<std::vector<std::string>> docs;
        for (const auto& d : pool) docs.push_back(tokenize(d.input));
        const auto stats = build_bm25_stats(docs);
        auto sym = [&](std::size_t i, std::size_t j) {
            return 0.5 * (bm25_score(docs[i], docs[j], stats) +
                          bm25_score(docs[j], docs[i], stats));
        };
        double best = -1.0;
        std::vector<std::size_t> best_subset;
        std::vector<bool> pick(6, false);
        std::fill(pick.begin(), pick.begin() + 3, true);
        std::sort(pick.begin(), pick.end());
        do {
            std::vector<std::size_t> a, b;
            for (std::size_t i = 0; i < 6; ++i) (pick[i] ? a : b).push_back(i);
            double total = 0.0;
            for (const auto& group : {a, b}) {
                for (std::size_t x = 0; x < group.size(); ++x) {
                    for (std::size_t y = x + 1; y < group.size(); ++y) {
                        total += sym(group[x], group[y]);
                    }
                }
            }
            if (total > best) {
                best = total;
                best_subset = a;
            }
        } while (std::next_permutation(pick.begin(), pick.end()));

        std::multiset<std::string> oracle_a, oracle_b;
        for (std::size_t i = 0; i < 6; ++i) {
            if (std::find(best_subset.begin(), best_subset.end(), i) != best_subset.end()) {
                oracle_a.insert(pool[i].id);
            } else {
                oracle_b.insert(pool[i].id);
            }
        }
        const auto got = as_set_of_sets(p);
        const std::multiset<std::multiset<std::string>> oracle{oracle_a, oracle_b};
        CHECK(got == oracle);

        // And the oracle's best clustering is the topic split itself.
        const std::multiset<std::multiset<std::string>> topic_split{
            {"d0", "d1", "d2"}, {"d3", "d4", "d5"}};
        CHECK(oracle == topic_split);
    }
    SUBCASE("k = n gives singletons") {
        auto pool = make_pool(5);
        for (std::size_t i = 0; i < pool.size(); ++i) pool[i].input = "token" + std::to_string(i);
        const auto p = partition_bm25(pool, 5, 3);
        for (const auto& s : p.subsets) CHECK(s.size() == 1);
        check_disjoint_cover(p, pool);
    }
    SUBCASE("identical texts still balance via the cap rule") {
        auto pool = make_pool(7);
        for (auto& d : pool) d.input = "same text everywhere";
        const auto p = partition_bm25(pool, 3, 9);
        check_disjoint_cover(p, pool);
        std::multiset<std::size_t> sizes;
        for (const auto& s : p.subsets) sizes.insert(s.size());
        CHECK(sizes == std::multiset<std::size_t>{2, 2, 3});
    }
    SUBCASE("deterministic") {
        auto pool = make_pool(12);
        Rng rng(1);
        const std::vector<std::string> words = {"aa", "bb", "cc", "dd"};
        for (auto& d : pool) {
            d.input = words[rng.next_below(4)] + " " + words[rng.next_below(4)];
        }
        CHECK(partition_bm25(pool, 4, 77) == partition_bm25(pool, 4, 77));
    }
}

TEST_CASE("partition JSON round trip is bit-exact") {
    const auto pool = make_pool(7);
    const auto p = partition_static(pool, 3, 123456789ULL);
    const auto text = partition_to_json(p);
    const auto back = partition_from_json(text);
    CHECK(back == p);
    CHECK(partition_to_json(back) == text);

    const std::string canonical = R"({"k":2,"seed":7,"subsets":[["a","b"],["c"]]})";
    CHECK(partition_to_json(partition_from_json(canonical)) == canonical);
}

TEST_CASE("materialize validates ids") {
    const auto pool = make_pool(4);
    Partition p;
    p.subsets = {{"d0", "d1"}, {"d2", "d3"}};
    const auto subsets = materialize(p, pool);
    CHECK(subsets[1][0].id == "d2");

    Partition unknown;
    unknown.subsets = {{"zz"}};
    CHECK_THROWS_AS(materialize(unknown, pool), Error);

    Partition dupe;
    dupe.subsets = {{"d0"}, {"d0"}};
    CHECK_THROWS_AS(materialize(dupe, pool), Error);
}

TEST_CASE("tokenize lowercases and splits on non-alphanumerics") {
    const auto tokens = tokenize("Hello, World! t0x1w2  d3");
    CHECK(tokens == std::vector<std::string>{"hello", "world", "t0x1w2", "d3"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("...").empty());
}
