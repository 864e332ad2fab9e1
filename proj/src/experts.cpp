#include "moicl/experts.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace moicl {

double jaccard_similarity(const std::vector<std::string>& a,
                          const std::vector<std::string>& b) {
    const std::set<std::string> sa(a.begin(), a.end());
    const std::set<std::string> sb(b.begin(), b.end());
    if (sa.empty() && sb.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& t : sa) inter += sb.count(t);
    const std::size_t uni = sa.size() + sb.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double tf_cosine_similarity(const std::vector<std::string>& a,
                            const std::vector<std::string>& b) {
    std::unordered_map<std::string, double> fa, fb;
    for (const auto& t : a) fa[t] += 1.0;
    for (const auto& t : b) fb[t] += 1.0;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [t, f] : fa) {
        na += f * f;
        const auto it = fb.find(t);
        if (it != fb.end()) dot += f * it->second;
    }
    for (const auto& [t, f] : fb) nb += f * f;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

TokenDistribution similarity_expert_eval(const SimilarityExpertConfig& cfg,
                                         std::span<const Demonstration> subset,
                                         const std::string& query_text,
                                         const AnswerVocabulary& vocab) {
    if (subset.empty()) throw EmptySubset("similarity expert: subset is empty");
    if (cfg.temperature <= 0.0 || cfg.alpha <= 0.0) {
        throw InvalidConfig("expert: temperature and alpha must be > 0");
    }
    const auto query_tokens = tokenize(query_text);
    std::vector<double> scores(vocab.size(), cfg.alpha);
    for (const auto& demo : subset) {
        if (!vocab.contains(demo.output)) continue;
        const double s = cfg.similarity == Similarity::kJaccard
                             ? jaccard_similarity(query_tokens, tokenize(demo.input))
                             : tf_cosine_similarity(query_tokens, tokenize(demo.input));
        scores[vocab.index_of(demo.output)] += s;
    }
    for (double& s : scores) s /= cfg.temperature;
    return log_normalize(scores);
}

TokenDistribution SimilarityExpert::evaluate(const std::string&,
                                             std::span<const Demonstration> subset,
                                             const std::string&,
                                             const std::string& query_text,
                                             const AnswerVocabulary& vocab) const {
    return similarity_expert_eval(cfg_, subset, query_text, vocab);
}

ExternalLogitsTable parse_external_logits(const std::string& text) {
    ExternalLogitsTable table;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(line_no, e.what());
        }
        std::pair<std::string, std::string> key;
        std::vector<double> scores;
        try {
            key.first = j.at("query_id").get<std::string>();
            key.second = j.at("subset_id").get<std::string>();
            scores = j.at("log_scores").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, e.what());
        }
        if (!table.entries.emplace(key, std::move(scores)).second) {
            throw DuplicateEntry("external logits: duplicate entry (query_id=" + key.first +
                                 ", subset_id=" + key.second + ")");
        }
    }
    return table;
}

ExternalLogitsTable load_external_logits(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_external_logits: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_external_logits(buf.str());
}

TokenDistribution external_expert_eval(const ExternalLogitsTable& table,
                                       const std::string& subset_id,
                                       const std::string& query_id,
                                       const AnswerVocabulary& vocab) {
    const auto it = table.entries.find({query_id, subset_id});
    if (it == table.entries.end()) throw MissingEntry(query_id, subset_id);
    if (it->second.size() != vocab.size()) {
        throw DimensionMismatch("external logits: log_scores length " +
                                std::to_string(it->second.size()) + " != vocabulary size " +
                                std::to_string(vocab.size()));
    }
    return log_normalize(it->second);
}

TokenDistribution ExternalLogitsExpert::evaluate(const std::string& subset_id,
                                                 std::span<const Demonstration>,
                                                 const std::string& query_id,
                                                 const std::string&,
                                                 const AnswerVocabulary& vocab) const {
    return external_expert_eval(table_, subset_id, query_id, vocab);
}

std::string subset_id_for(std::size_t index) {
    return "s" + std::to_string(index);
}

}  // namespace moicl
