#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "moicl/errors.hpp"

namespace moicl {

// Provenance markers attached to demonstrations by the perturbation ops.
enum class Tag { kInDomain, kOod, kNoised, kImbalanceMinority };

std::string tag_to_string(Tag tag);
Tag tag_from_string(const std::string& name);

// One in-context example: an input-output pair plus provenance.
struct Demonstration {
    std::string id;
    std::string input;
    std::string output;  // label string or free-text answer; never empty
    std::set<Tag> tags;

    bool operator==(const Demonstration&) const = default;
};

// Disjoint assignment of a demonstration pool into k nonempty subsets,
// stored by demonstration id.
struct Partition {
    std::uint64_t seed = 0;
    std::vector<std::vector<std::string>> subsets;

    std::size_t k() const { return subsets.size(); }
    bool operator==(const Partition&) const = default;
};

// Resolves subset ids back to demonstrations, preserving subset order.
// Throws Error on unknown or duplicated ids.
std::vector<std::vector<Demonstration>> materialize(
    const Partition& partition, const std::vector<Demonstration>& pool);

// Serialization: {"k":..., "seed":..., "subsets":[[id,...],...]} with that
// exact key order; round trips bit-exactly.
std::string partition_to_json(const Partition& partition);
Partition partition_from_json(const std::string& text);

// Lowercases and splits on non-alphanumeric characters.
std::vector<std::string> tokenize(const std::string& text);

// Okapi BM25 corpus statistics over the demonstration pool's input texts.
struct Bm25CorpusStats {
    std::vector<std::size_t> doc_lengths;
    double avg_doc_length = 0.0;
    double k1 = 1.5;
    double b = 0.75;
    // term -> number of documents containing it
    std::vector<std::pair<std::string, std::size_t>> document_frequencies;

    std::size_t corpus_size() const { return doc_lengths.size(); }
    std::size_t doc_freq(const std::string& term) const;
};

Bm25CorpusStats build_bm25_stats(const std::vector<std::vector<std::string>>& docs,
                                 double k1 = 1.5, double b = 0.75);

// Okapi BM25 with IDF(t) = ln(1 + (N - df + 0.5) / (df + 0.5)). Each distinct
// query term is counted once; empty overlap scores 0.
double bm25_score(const std::vector<std::string>& query_tokens,
                  const std::vector<std::string>& doc_tokens,
                  const Bm25CorpusStats& stats);

// Seeded shuffle, then contiguous chunks; the first n % k subsets take the
// extra element, so sizes differ by at most one.
Partition partition_static(const std::vector<Demonstration>& pool, std::size_t k,
                           std::uint64_t seed);

// Seeded shuffle, then k-1 distinct interior cut points; every subset is
// nonempty by construction.
Partition partition_random_size(const std::vector<Demonstration>& pool, std::size_t k,
                                std::uint64_t seed);

// Farthest-point seeding under symmetrized BM25 similarity (first seed drawn
// at random), then nearest-seed assignment in pool order. Subset sizes are
// held to ceil(n/k) / floor(n/k); a full subset forwards the demonstration to
// its next-most-similar seed with room.
Partition partition_bm25(const std::vector<Demonstration>& pool, std::size_t k,
                         std::uint64_t seed);

}  // namespace moicl
