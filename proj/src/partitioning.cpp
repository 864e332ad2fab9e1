#include "moicl/partitioning.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <unordered_map>

#include <json.hpp>

#include "moicl/rng.hpp"

namespace moicl {

std::string tag_to_string(Tag tag) {
    switch (tag) {
        case Tag::kInDomain: return "in_domain";
        case Tag::kOod: return "ood";
        case Tag::kNoised: return "noised";
        case Tag::kImbalanceMinority: return "imbalance_minority";
    }
    throw Error("tag_to_string: unknown tag");
}

Tag tag_from_string(const std::string& name) {
    if (name == "in_domain") return Tag::kInDomain;
    if (name == "ood") return Tag::kOod;
    if (name == "noised") return Tag::kNoised;
    if (name == "imbalance_minority") return Tag::kImbalanceMinority;
    throw Error("tag_from_string: unknown tag '" + name + "'");
}

std::vector<std::vector<Demonstration>> materialize(
    const Partition& partition, const std::vector<Demonstration>& pool) {
    std::unordered_map<std::string, const Demonstration*> by_id;
    for (const auto& d : pool) {
        if (!by_id.emplace(d.id, &d).second) {
            throw Error("materialize: duplicate demonstration id '" + d.id + "'");
        }
    }
    std::vector<std::vector<Demonstration>> out;
    out.reserve(partition.k());
    std::unordered_map<std::string, bool> used;
    for (const auto& subset : partition.subsets) {
        std::vector<Demonstration> demos;
        demos.reserve(subset.size());
        for (const auto& id : subset) {
            const auto it = by_id.find(id);
            if (it == by_id.end()) {
                throw Error("materialize: id '" + id + "' not in pool");
            }
            if (used[id]) {
                throw Error("materialize: id '" + id + "' appears twice in partition");
            }
            used[id] = true;
            demos.push_back(*it->second);
        }
        out.push_back(std::move(demos));
    }
    return out;
}

std::string partition_to_json(const Partition& partition) {
    nlohmann::ordered_json j;
    j["k"] = partition.k();
    j["seed"] = partition.seed;
    j["subsets"] = partition.subsets;
    return j.dump();
}

Partition partition_from_json(const std::string& text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(1, std::string("partition JSON: ") + e.what());
    }
    Partition p;
    p.seed = j.at("seed").get<std::uint64_t>();
    p.subsets = j.at("subsets").get<std::vector<std::vector<std::string>>>();
    if (j.at("k").get<std::size_t>() != p.subsets.size()) {
        throw ParseError(1, "partition JSON: k does not match subsets");
    }
    return p;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::size_t Bm25CorpusStats::doc_freq(const std::string& term) const {
    const auto it = std::lower_bound(
        document_frequencies.begin(), document_frequencies.end(), term,
        [](const auto& entry, const std::string& t) { return entry.first < t; });
    if (it == document_frequencies.end() || it->first != term) return 0;
    return it->second;
}

Bm25CorpusStats build_bm25_stats(const std::vector<std::vector<std::string>>& docs,
                                 double k1, double b) {
    Bm25CorpusStats stats;
    stats.k1 = k1;
    stats.b = b;
    std::unordered_map<std::string, std::size_t> df;
    std::size_t total_len = 0;
    for (const auto& doc : docs) {
        stats.doc_lengths.push_back(doc.size());
        total_len += doc.size();
        std::unordered_map<std::string, bool> seen;
        for (const auto& term : doc) {
            if (!seen[term]) {
                seen[term] = true;
                ++df[term];
            }
        }
    }
    if (docs.empty() || total_len == 0) {
        throw InvalidSpec("build_bm25_stats: corpus must contain tokens");
    }
    stats.avg_doc_length = static_cast<double>(total_len) / static_cast<double>(docs.size());
    stats.document_frequencies.assign(df.begin(), df.end());
    std::sort(stats.document_frequencies.begin(), stats.document_frequencies.end());
    return stats;
}

double bm25_score(const std::vector<std::string>& query_tokens,
                  const std::vector<std::string>& doc_tokens,
                  const Bm25CorpusStats& stats) {
    std::unordered_map<std::string, std::size_t> term_freq;
    for (const auto& t : doc_tokens) ++term_freq[t];

    const double n_docs = static_cast<double>(stats.corpus_size());
    const double len_ratio =
        static_cast<double>(doc_tokens.size()) / stats.avg_doc_length;

    double score = 0.0;
    std::unordered_map<std::string, bool> counted;
    for (const auto& term : query_tokens) {
        if (counted[term]) continue;
        counted[term] = true;
        const auto it = term_freq.find(term);
        if (it == term_freq.end()) continue;
        const double f = static_cast<double>(it->second);
        const double df = static_cast<double>(stats.doc_freq(term));
        const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
        score += idf * f * (stats.k1 + 1.0) /
                 (f + stats.k1 * (1.0 - stats.b + stats.b * len_ratio));
    }
    return score;
}

namespace {

std::vector<std::string> shuffled_ids(const std::vector<Demonstration>& pool,
                                      std::uint64_t seed) {
    std::vector<std::string> ids;
    ids.reserve(pool.size());
    for (const auto& d : pool) ids.push_back(d.id);
    Rng rng(seed);
    rng.shuffle(ids);
    return ids;
}

void check_k(std::size_t k, std::size_t n) {
    if (k < 1 || k > n) {
        throw InvalidK("partition: need 1 <= k <= n, got k=" + std::to_string(k) +
                       ", n=" + std::to_string(n));
    }
}

}  // namespace

Partition partition_static(const std::vector<Demonstration>& pool, std::size_t k,
                           std::uint64_t seed) {
    check_k(k, pool.size());
    const auto ids = shuffled_ids(pool, seed);
    const std::size_t base = pool.size() / k;
    const std::size_t extra = pool.size() % k;

    Partition p;
    p.seed = seed;
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t size = base + (i < extra ? 1 : 0);
        p.subsets.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(cursor),
                               ids.begin() + static_cast<std::ptrdiff_t>(cursor + size));
        cursor += size;
    }
    return p;
}

Partition partition_random_size(const std::vector<Demonstration>& pool, std::size_t k,
                                std::uint64_t seed) {
    check_k(k, pool.size());
    Rng rng(seed);
    std::vector<std::string> ids;
    ids.reserve(pool.size());
    for (const auto& d : pool) ids.push_back(d.id);
    rng.shuffle(ids);

    // k-1 distinct cut points in [1, n-1] keep every slice nonempty.
    auto cuts = rng.sample_without_replacement(pool.size() - 1, k - 1);
    for (auto& c : cuts) c += 1;
    cuts.push_back(0);
    cuts.push_back(pool.size());
    std::sort(cuts.begin(), cuts.end());

    Partition p;
    p.seed = seed;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        p.subsets.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(cuts[i]),
                               ids.begin() + static_cast<std::ptrdiff_t>(cuts[i + 1]));
    }
    return p;
}

Partition partition_bm25(const std::vector<Demonstration>& pool, std::size_t k,
                         std::uint64_t seed) {
    const std::size_t n = pool.size();
    check_k(k, n);

    std::vector<std::vector<std::string>> docs;
    docs.reserve(n);
    for (const auto& d : pool) docs.push_back(tokenize(d.input));
    const auto stats = build_bm25_stats(docs);

    // Symmetrized pairwise similarity.
    std::vector<std::vector<double>> sim(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s =
                0.5 * (bm25_score(docs[i], docs[j], stats) + bm25_score(docs[j], docs[i], stats));
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }

    // Farthest-point seed selection; ties go to the lowest index.
    Rng rng(seed);
    std::vector<std::size_t> seeds;
    std::vector<bool> is_seed(n, false);
    const std::size_t first = static_cast<std::size_t>(rng.next_below(n));
    seeds.push_back(first);
    is_seed[first] = true;
    while (seeds.size() < k) {
        std::size_t best = n;
        double best_nearest = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (is_seed[i]) continue;
            double nearest = -std::numeric_limits<double>::infinity();
            for (std::size_t s : seeds) nearest = std::max(nearest, sim[i][s]);
            if (nearest < best_nearest) {
                best_nearest = nearest;
                best = i;
            }
        }
        seeds.push_back(best);
        is_seed[best] = true;
    }

    // Capacity plan: every subset may reach floor(n/k); n % k of them may take
    // one more, claimed on demand, so final sizes stay within the static
    // balance bound.
    const std::size_t soft_cap = n / k;
    std::size_t spare_slots = n % k;
    std::vector<std::vector<std::size_t>> members(k);
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t c = 0; c < k; ++c) {
        members[c].push_back(seeds[c]);
        sizes[c] = 1;
    }

    auto has_room = [&](std::size_t c) {
        if (sizes[c] < soft_cap) return true;
        return sizes[c] == soft_cap && spare_slots > 0;
    };
    auto place = [&](std::size_t c, std::size_t demo) {
        if (sizes[c] == soft_cap) --spare_slots;
        members[c].push_back(demo);
        ++sizes[c];
    };

    for (std::size_t i = 0; i < n; ++i) {
        if (is_seed[i]) continue;
        // Seeds ranked by similarity, descending; ties to the lower subset.
        std::vector<std::size_t> order(k);
        for (std::size_t c = 0; c < k; ++c) order[c] = c;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return sim[i][seeds[a]] > sim[i][seeds[b]];
        });
        for (std::size_t c : order) {
            if (has_room(c)) {
                place(c, i);
                break;
            }
        }
    }

    Partition p;
    p.seed = seed;
    for (std::size_t c = 0; c < k; ++c) {
        std::sort(members[c].begin(), members[c].end());
        std::vector<std::string> ids;
        ids.reserve(members[c].size());
        for (std::size_t i : members[c]) ids.push_back(pool[i].id);
        p.subsets.push_back(std::move(ids));
    }
    return p;
}

}  // namespace moicl
