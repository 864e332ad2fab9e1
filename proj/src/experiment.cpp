#include "moicl/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "moicl/rng.hpp"

namespace moicl {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Seed-stream labels; every per-cell random decision draws from its own
// derived stream so cells never interact.
enum Stream : std::uint64_t {
    kStreamOod = 2,
    kStreamImbalance = 3,
    kStreamNoise = 4,
    kStreamPartition = 5,
    kStreamRandomSearch = 6,
    kStreamTraining = 7,
};

std::vector<std::string> tags_to_strings(const std::set<Tag>& tags) {
    std::vector<std::string> out;
    out.reserve(tags.size());
    for (const Tag t : tags) out.push_back(tag_to_string(t));
    return out;
}

}  // namespace

std::string demonstrations_to_jsonl(const std::vector<Demonstration>& demos) {
    std::string out;
    for (const auto& d : demos) {
        ordered_json j;
        j["id"] = d.id;
        j["input"] = d.input;
        j["output"] = d.output;
        j["tags"] = tags_to_strings(d.tags);
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<Demonstration> demonstrations_from_jsonl(const std::string& text) {
    std::vector<Demonstration> out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(line_no, e.what());
        }
        try {
            Demonstration d;
            d.id = j.at("id").get<std::string>();
            d.input = j.at("input").get<std::string>();
            d.output = j.at("output").get<std::string>();
            if (j.contains("tags")) {
                for (const auto& t : j.at("tags")) {
                    d.tags.insert(tag_from_string(t.get<std::string>()));
                }
            }
            if (d.output.empty()) throw Error("output must be nonempty");
            out.push_back(std::move(d));
        } catch (const std::exception& e) {
            throw ParseError(line_no, e.what());
        }
    }
    return out;
}

std::string examples_to_jsonl(const std::vector<LabeledExample>& examples,
                              const AnswerVocabulary& vocab) {
    std::string out;
    for (const auto& ex : examples) {
        ordered_json j;
        j["id"] = ex.id;
        j["input"] = ex.input;
        j["output"] = vocab.label(ex.gold);
        j["tags"] = json::array();
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<LabeledExample> examples_from_jsonl(const std::string& text,
                                                const AnswerVocabulary& vocab) {
    const auto demos = demonstrations_from_jsonl(text);
    std::vector<LabeledExample> out;
    out.reserve(demos.size());
    for (const auto& d : demos) {
        out.push_back(LabeledExample{d.id, d.input, vocab.index_of(d.output)});
    }
    return out;
}

// --- Config ------------------------------------------------------------------

namespace {

template <typename T>
T field_or(const json& j, const std::string& path, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InvalidConfig(path + "." + key + ": " + e.what());
    }
}

}  // namespace

void ExperimentConfig::validate() const {
    task.validate();
    if (expert.kind != "similarity" && expert.kind != "external") {
        throw InvalidConfig("expert.kind: expected 'similarity' or 'external'");
    }
    if (expert.kind == "similarity") {
        if (!(expert.similarity.temperature > 0.0)) {
            throw InvalidConfig("expert.temperature: must be > 0");
        }
        if (!(expert.similarity.alpha > 0.0)) throw InvalidConfig("expert.alpha: must be > 0");
    }
    if (expert.kind == "external" && expert.external_path.empty()) {
        throw InvalidConfig("expert.path: required for external experts");
    }
    if (partition.strategy != "static" && partition.strategy != "random_size" &&
        partition.strategy != "bm25") {
        throw InvalidConfig("partition.strategy: expected 'static', 'random_size' or 'bm25'");
    }
    if (partition.k < 1 || partition.k > task.n_demonstrations) {
        throw InvalidConfig("partition.k: need 1 <= k <= task.n_demonstrations");
    }
    training.validate();
    if (methods.empty()) throw InvalidConfig("methods: must list at least one method");
    static const std::vector<std::string> known = {
        "concat",        "ensemble",     "random_search", "moicl_uniform",
        "moicl_scalar",  "moicl_hypernet", "moicl_sparse"};
    for (const auto& m : methods) {
        if (std::find(known.begin(), known.end(), m) == known.end()) {
            throw InvalidConfig("methods: unknown method '" + m + "'");
        }
    }
    if (seeds.empty()) throw InvalidConfig("seeds: must list at least one seed");
    if (!(cost.c_llm > 0.0)) throw InvalidConfig("cost.c_llm: must be > 0");
    if (!(cost.c_hyper > 0.0)) throw InvalidConfig("cost.c_hyper: must be > 0");
    if (metric != "accuracy" && metric != "em") {
        throw InvalidConfig("metric: expected 'accuracy' or 'em'");
    }
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InvalidConfig(std::string("config: not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg;

    const json task = j.value("task", json::object());
    cfg.task.labels = field_or(task, "task", "labels", cfg.task.labels);
    cfg.task.topics_per_label = field_or(task, "task", "topics_per_label", cfg.task.topics_per_label);
    cfg.task.tokens_per_topic = field_or(task, "task", "tokens_per_topic", cfg.task.tokens_per_topic);
    cfg.task.distractor_vocab_size =
        field_or(task, "task", "distractor_vocab_size", cfg.task.distractor_vocab_size);
    cfg.task.topic_tokens_per_input =
        field_or(task, "task", "topic_tokens_per_input", cfg.task.topic_tokens_per_input);
    cfg.task.distractors_per_input =
        field_or(task, "task", "distractors_per_input", cfg.task.distractors_per_input);
    cfg.task.n_demonstrations =
        field_or(task, "task", "n_demonstrations", cfg.task.n_demonstrations);
    cfg.task.train_size = field_or(task, "task", "train_size", cfg.task.train_size);
    cfg.task.dev_size = field_or(task, "task", "dev_size", cfg.task.dev_size);
    cfg.task.test_size = field_or(task, "task", "test_size", cfg.task.test_size);
    cfg.task.ood_fraction = field_or(task, "task", "ood_fraction", cfg.task.ood_fraction);
    cfg.task.imbalance_minority_count =
        field_or(task, "task", "imbalance_minority_count", cfg.task.imbalance_minority_count);
    cfg.task.noised_count = field_or(task, "task", "noised_count", cfg.task.noised_count);
    cfg.task.noise_answers = field_or(task, "task", "noise_answers", cfg.task.noise_answers);
    cfg.task.seed = field_or(task, "task", "seed", cfg.task.seed);
    cfg.task.token_namespace =
        field_or(task, "task", "token_namespace", cfg.task.token_namespace);

    const json expert = j.value("expert", json::object());
    cfg.expert.kind = field_or<std::string>(expert, "expert", "kind", "similarity");
    cfg.expert.similarity.temperature =
        field_or(expert, "expert", "temperature", cfg.expert.similarity.temperature);
    cfg.expert.similarity.alpha = field_or(expert, "expert", "alpha", cfg.expert.similarity.alpha);
    const std::string sim_name = field_or<std::string>(expert, "expert", "similarity", "jaccard");
    if (sim_name == "jaccard") {
        cfg.expert.similarity.similarity = Similarity::kJaccard;
    } else if (sim_name == "tf-cosine") {
        cfg.expert.similarity.similarity = Similarity::kTfCosine;
    } else {
        throw InvalidConfig("expert.similarity: expected 'jaccard' or 'tf-cosine'");
    }
    cfg.expert.external_path = field_or<std::string>(expert, "expert", "path", "");

    const json part = j.value("partition", json::object());
    cfg.partition.strategy = field_or<std::string>(part, "partition", "strategy", "static");
    cfg.partition.k = field_or(part, "partition", "k", cfg.partition.k);

    const json tr = j.value("training", json::object());
    cfg.training.learning_rate = field_or(tr, "training", "learning_rate", cfg.training.learning_rate);
    cfg.training.epochs = field_or(tr, "training", "epochs", cfg.training.epochs);
    cfg.training.batch_size = field_or(tr, "training", "batch_size", cfg.training.batch_size);
    cfg.training.accumulation_steps =
        field_or(tr, "training", "accumulation_steps", cfg.training.accumulation_steps);
    cfg.training.combination = combination_rule_from_name(
        field_or<std::string>(tr, "training", "combination", "poe"));
    const std::string opt = field_or<std::string>(tr, "training", "optimizer", "adam");
    if (opt == "adam") {
        cfg.training.optimizer = OptimizerKind::kAdam;
    } else if (opt == "sgd") {
        cfg.training.optimizer = OptimizerKind::kSgd;
    } else {
        throw InvalidConfig("training.optimizer: expected 'adam' or 'sgd'");
    }
    cfg.training.nonnegative_weights =
        field_or(tr, "training", "nonnegative_weights", cfg.training.nonnegative_weights);
    cfg.training.k_prime = field_or(tr, "training", "k_prime", cfg.training.k_prime);
    cfg.training.imle_lambda = field_or(tr, "training", "imle_lambda", cfg.training.imle_lambda);
    const json hyper = tr.value("hypernet", json::object());
    cfg.training.hypernet.feature_dim =
        field_or(hyper, "training.hypernet", "feature_dim", cfg.training.hypernet.feature_dim);
    cfg.training.hypernet.hidden_dim =
        field_or(hyper, "training.hypernet", "hidden_dim", cfg.training.hypernet.hidden_dim);

    cfg.methods = field_or(j, "config", "methods", cfg.methods);
    cfg.seeds = field_or(j, "config", "seeds", cfg.seeds);
    const json cost = j.value("cost", json::object());
    cfg.cost.c_llm = field_or(cost, "cost", "c_llm", cfg.cost.c_llm);
    cfg.cost.c_hyper = field_or(cost, "cost", "c_hyper", cfg.cost.c_hyper);
    cfg.metric = field_or<std::string>(j, "config", "metric", cfg.metric);

    cfg.validate();
    return cfg;
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["task"] = ordered_json{
        {"labels", cfg.task.labels},
        {"topics_per_label", cfg.task.topics_per_label},
        {"tokens_per_topic", cfg.task.tokens_per_topic},
        {"distractor_vocab_size", cfg.task.distractor_vocab_size},
        {"topic_tokens_per_input", cfg.task.topic_tokens_per_input},
        {"distractors_per_input", cfg.task.distractors_per_input},
        {"n_demonstrations", cfg.task.n_demonstrations},
        {"train_size", cfg.task.train_size},
        {"dev_size", cfg.task.dev_size},
        {"test_size", cfg.task.test_size},
        {"ood_fraction", cfg.task.ood_fraction},
        {"imbalance_minority_count", cfg.task.imbalance_minority_count},
        {"noised_count", cfg.task.noised_count},
        {"noise_answers", cfg.task.noise_answers},
        {"seed", cfg.task.seed},
        {"token_namespace", cfg.task.token_namespace},
    };
    ordered_json expert;
    expert["kind"] = cfg.expert.kind;
    if (cfg.expert.kind == "similarity") {
        expert["temperature"] = cfg.expert.similarity.temperature;
        expert["alpha"] = cfg.expert.similarity.alpha;
        expert["similarity"] =
            cfg.expert.similarity.similarity == Similarity::kJaccard ? "jaccard" : "tf-cosine";
    } else {
        expert["path"] = cfg.expert.external_path;
    }
    j["expert"] = expert;
    j["partition"] = ordered_json{{"strategy", cfg.partition.strategy}, {"k", cfg.partition.k}};
    j["training"] = ordered_json{
        {"learning_rate", cfg.training.learning_rate},
        {"epochs", cfg.training.epochs},
        {"batch_size", cfg.training.batch_size},
        {"accumulation_steps", cfg.training.accumulation_steps},
        {"combination", combination_rule_name(cfg.training.combination)},
        {"optimizer", cfg.training.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
        {"nonnegative_weights", cfg.training.nonnegative_weights},
        {"k_prime", cfg.training.k_prime},
        {"imle_lambda", cfg.training.imle_lambda},
        {"hypernet", ordered_json{{"feature_dim", cfg.training.hypernet.feature_dim},
                                  {"hidden_dim", cfg.training.hypernet.hidden_dim}}},
    };
    j["methods"] = cfg.methods;
    j["seeds"] = cfg.seeds;
    j["cost"] = ordered_json{{"c_llm", cfg.cost.c_llm}, {"c_hyper", cfg.cost.c_hyper}};
    j["metric"] = cfg.metric;
    return j.dump(2);
}

// --- Experiment cells ----------------------------------------------------------

namespace {

std::unique_ptr<ExpertSource> make_expert_source(const ExperimentConfig& cfg) {
    if (cfg.expert.kind == "external") {
        return std::make_unique<ExternalLogitsExpert>(load_external_logits(cfg.expert.external_path));
    }
    return std::make_unique<SimilarityExpert>(cfg.expert.similarity);
}

SyntheticTaskSpec ood_companion(const SyntheticTaskSpec& task) {
    SyntheticTaskSpec ood = task;
    ood.token_namespace = task.token_namespace + "ood";
    ood.ood_fraction = 0.0;
    return ood;
}

Partition make_partition(const ExperimentConfig& cfg, const std::vector<Demonstration>& pool,
                         std::uint64_t seed) {
    const std::uint64_t pseed = Rng::derive(seed, kStreamPartition);
    if (cfg.partition.strategy == "static") return partition_static(pool, cfg.partition.k, pseed);
    if (cfg.partition.strategy == "random_size") {
        return partition_random_size(pool, cfg.partition.k, pseed);
    }
    return partition_bm25(pool, cfg.partition.k, pseed);
}

std::vector<std::vector<std::string>> subset_tag_unions(
    const Partition& partition, const std::vector<Demonstration>& pool) {
    const auto subsets = materialize(partition, pool);
    std::vector<std::vector<std::string>> out;
    out.reserve(subsets.size());
    for (const auto& subset : subsets) {
        std::set<Tag> tags;
        for (const auto& d : subset) tags.insert(d.tags.begin(), d.tags.end());
        out.push_back(tags_to_strings(tags));
    }
    return out;
}

double metric_value(const ExperimentConfig& cfg, const EvalOutcome& outcome,
                    const std::vector<LabeledExample>& split, const AnswerVocabulary& vocab) {
    if (cfg.metric == "accuracy") return outcome.accuracy;
    std::vector<std::string> pred, gold;
    pred.reserve(split.size());
    gold.reserve(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) {
        pred.push_back(vocab.label(outcome.predictions[i]));
        gold.push_back(vocab.label(split[i].gold));
    }
    return evaluate_em(pred, gold);
}

}  // namespace

ExperimentCell build_cell(const ExperimentConfig& cfg, std::uint64_t seed) {
    SyntheticTaskSpec spec = cfg.task;
    spec.seed = seed;
    ExperimentCell cell{gen_synthetic_task(spec), {}, {}, {}};
    cell.pool = cell.task.pool;
    if (spec.ood_fraction > 0.0) {
        cell.pool = inject_ood(cell.pool, spec.ood_fraction, ood_companion(spec),
                               Rng::derive(seed, kStreamOod));
    }
    if (spec.imbalance_minority_count > 0) {
        cell.pool = inject_imbalance(cell.pool, spec.imbalance_minority_count,
                                     spec.labels.size() - 1, spec,
                                     Rng::derive(seed, kStreamImbalance));
    }
    if (spec.noised_count > 0) {
        cell.pool = inject_noise(cell.pool, spec.noised_count, spec.noise_answers,
                                 Rng::derive(seed, kStreamNoise));
    }
    cell.partition = make_partition(cfg, cell.pool, seed);
    cell.subset_tags = subset_tag_unions(cell.partition, cell.pool);
    return cell;
}

MethodSeedResult run_method_cell(const ExperimentConfig& cfg, const ExperimentCell& cell,
                                 const std::string& method, std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    const auto source = make_expert_source(cfg);
    const auto& vocab = cell.task.vocab;
    const std::size_t n = cell.pool.size();
    const std::size_t k = cell.partition.k();

    MethodSeedResult result;
    result.seed = seed;

    CostModelInput cost;
    cost.n = n;
    cost.k = k;
    cost.c_llm = cfg.cost.c_llm;
    cost.c_hyper = cfg.cost.c_hyper;

    auto finish_eval = [&](const EvalOutcome& outcome) {
        result.value = metric_value(cfg, outcome, cell.task.test, vocab);
    };

    if (method == "concat") {
        finish_eval(run_concat_baseline(*source, cell.pool, cell.task.test, vocab));
        cost.method = CostMethod::kConcat;
        cost.k = 1;
        result.cost_units = cost_model(cost);
    } else if (method == "ensemble") {
        finish_eval(run_ensemble_baseline(*source, cell.pool, cell.task.test, vocab));
        cost.method = CostMethod::kEnsemble;
        cost.k = n;
        result.cost_units = cost_model(cost);
    } else if (method == "random_search") {
        const auto outcome =
            run_random_search(*source, cell.pool, cfg.partition.k, cell.task.train,
                              cell.task.test, vocab, Rng::derive(seed, kStreamRandomSearch));
        result.value = outcome.eval_score;
        // Inference after selection is concat over the chosen subset.
        const double chosen = static_cast<double>(outcome.best_subset.size());
        result.cost_units = (chosen + 1.0) * (chosen + 1.0) * cfg.cost.c_llm;
    } else if (method == "moicl_uniform") {
        const auto w = uniform_weights(k);
        finish_eval(evaluate_mixture(*source, cell.pool, cell.partition, w,
                                     cfg.training.combination, cell.task.test, vocab));
        cost.method = CostMethod::kMoiclUniform;
        result.cost_units = cost_model(cost);
        for (std::size_t i = 0; i < k; ++i) {
            result.weights.push_back(ExpertWeightReport{i, cell.subset_tags[i], w[i]});
        }
    } else if (method == "moicl_scalar" || method == "moicl_hypernet" ||
               method == "moicl_sparse") {
        TrainingConfig tcfg = cfg.training;
        tcfg.seed = Rng::derive(seed, kStreamTraining);
        if (method == "moicl_scalar") tcfg.weighting = WeightingKind::kScalar;
        if (method == "moicl_hypernet") tcfg.weighting = WeightingKind::kHypernet;
        if (method == "moicl_sparse") tcfg.weighting = WeightingKind::kSparse;

        const auto trained = train(tcfg, *source, cell.pool, cell.partition, vocab,
                                   cell.task.train, cell.task.dev);
        const auto subsets = materialize(cell.partition, cell.pool);
        std::vector<std::string> texts;
        for (const auto& s : subsets) texts.push_back(subset_text(s));
        const auto w = effective_weights(trained.weighting, texts);
        finish_eval(evaluate_mixture(*source, cell.pool, cell.partition, w,
                                     cfg.training.combination, cell.task.test, vocab));
        if (method == "moicl_hypernet") {
            cost.method = CostMethod::kMoiclHypernet;
            result.cost_units = cost_model(cost);
        } else if (method == "moicl_sparse") {
            // Only k' experts run at inference time.
            const double per_subset = static_cast<double>(n) / static_cast<double>(k) + 1.0;
            result.cost_units =
                static_cast<double>(tcfg.k_prime) * per_subset * per_subset * cfg.cost.c_llm;
        } else {
            cost.method = CostMethod::kMoiclScalar;
            result.cost_units = cost_model(cost);
        }
        for (std::size_t i = 0; i < k; ++i) {
            result.weights.push_back(ExpertWeightReport{i, cell.subset_tags[i], w[i]});
        }
    } else {
        throw InvalidConfig("methods: unknown method '" + method + "'");
    }

    const auto end = std::chrono::steady_clock::now();
    result.seconds = std::chrono::duration<double>(end - start).count();
    return result;
}

RunReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    RunReport report;
    report.config = cfg;

    std::map<std::uint64_t, ExperimentCell> cells;
    for (const std::uint64_t seed : cfg.seeds) {
        cells.emplace(seed, build_cell(cfg, seed));
    }

    for (const auto& method : cfg.methods) {
        MethodReport mr;
        mr.method = method;
        for (const std::uint64_t seed : cfg.seeds) {
            mr.per_seed.push_back(run_method_cell(cfg, cells.at(seed), method, seed));
        }
        double sum = 0.0;
        for (const auto& r : mr.per_seed) sum += r.value;
        mr.mean = sum / static_cast<double>(mr.per_seed.size());
        if (mr.per_seed.size() >= 2) {
            double ss = 0.0;
            for (const auto& r : mr.per_seed) ss += (r.value - mr.mean) * (r.value - mr.mean);
            mr.std_dev = std::sqrt(ss / static_cast<double>(mr.per_seed.size() - 1));
        }
        report.methods.push_back(std::move(mr));
    }
    return report;
}

std::string report_to_json(const RunReport& report) {
    ordered_json j;
    j["config"] = ordered_json::parse(experiment_config_to_json(report.config));
    j["methods"] = ordered_json::array();
    for (const auto& m : report.methods) {
        ordered_json jm;
        jm["method"] = m.method;
        jm["metric"] = report.config.metric;
        jm["mean"] = m.mean;
        if (m.std_dev) jm["std"] = *m.std_dev;
        jm["per_seed"] = ordered_json::array();
        for (const auto& r : m.per_seed) {
            ordered_json jr;
            jr["seed"] = r.seed;
            jr["value"] = r.value;
            jr["cost_units"] = r.cost_units;
            if (!r.weights.empty()) {
                jr["weights"] = ordered_json::array();
                for (const auto& w : r.weights) {
                    jr["weights"].push_back(ordered_json{
                        {"expert", w.expert}, {"tags", w.tags}, {"weight", w.weight}});
                }
            }
            jm["per_seed"].push_back(std::move(jr));
        }
        j["methods"].push_back(std::move(jm));
    }
    return j.dump(2);
}

std::string report_to_csv(const RunReport& report) {
    std::string out = "method,k,seed,metric,value,cost_units,seconds\n";
    char buf[256];
    for (const auto& m : report.methods) {
        std::size_t k = report.config.partition.k;
        if (m.method == "concat") k = 1;
        if (m.method == "ensemble") k = report.config.task.n_demonstrations;
        for (const auto& r : m.per_seed) {
            std::snprintf(buf, sizeof(buf), "%s,%zu,%llu,%s,%.6f,%.6f,%.3f\n", m.method.c_str(),
                          k, static_cast<unsigned long long>(r.seed),
                          report.config.metric.c_str(), r.value, r.cost_units, r.seconds);
            out += buf;
        }
    }
    return out;
}

void write_report(const RunReport& report, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ofstream json_out(out_dir + "/report.json", std::ios::binary);
    json_out << report_to_json(report);
    json_out.close();
    std::ofstream csv_out(out_dir + "/summary.csv", std::ios::binary);
    csv_out << report_to_csv(report);
}

// --- Frozen desk-scale experiments ---------------------------------------------

const std::vector<std::uint64_t> kExperimentSeeds = {31, 42, 65, 438, 991};

SyntheticTaskSpec frozen_default_task() {
    SyntheticTaskSpec spec;
    spec.labels = {"alpha", "beta"};
    spec.topics_per_label = 3;
    spec.tokens_per_topic = 4;
    spec.distractor_vocab_size = 20;
    spec.topic_tokens_per_input = 2;
    spec.distractors_per_input = 6;
    spec.n_demonstrations = 30;
    spec.train_size = 240;
    spec.dev_size = 60;
    spec.test_size = 200;
    return spec;
}

SyntheticTaskSpec frozen_noise_task() {
    SyntheticTaskSpec spec = frozen_default_task();
    spec.labels = {"yes", "no"};
    spec.topics_per_label = 2;
    spec.topic_tokens_per_input = 2;
    spec.distractors_per_input = 4;
    spec.test_size = 300;
    spec.n_demonstrations = 12;
    spec.noised_count = 10;
    spec.noise_answers = {"yes", "no", "foo", "bar"};
    return spec;
}

SyntheticTaskSpec frozen_ood_task(double ood_fraction) {
    SyntheticTaskSpec spec = frozen_default_task();
    spec.ood_fraction = ood_fraction;
    return spec;
}

SyntheticTaskSpec frozen_imbalance_task() {
    SyntheticTaskSpec spec = frozen_default_task();
    spec.topics_per_label = 2;
    spec.topic_tokens_per_input = 2;
    spec.distractors_per_input = 4;
    spec.train_size = 360;
    spec.test_size = 300;
    spec.imbalance_minority_count = 1;
    return spec;
}

TrainingConfig frozen_training(std::uint64_t seed) {
    TrainingConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.epochs = 8;
    cfg.batch_size = 1;
    cfg.accumulation_steps = 12;
    cfg.optimizer = OptimizerKind::kAdam;
    cfg.combination = CombinationRule::kPoe;
    cfg.seed = seed;
    return cfg;
}

namespace {

ExperimentConfig frozen_experiment_base(SyntheticTaskSpec task, std::size_t k) {
    ExperimentConfig cfg;
    cfg.task = std::move(task);
    cfg.partition.strategy = "static";
    cfg.partition.k = k;
    cfg.training = frozen_training(0);
    cfg.seeds = kExperimentSeeds;
    return cfg;
}

}  // namespace

ExperimentConfig frozen_default_experiment() {
    auto cfg = frozen_experiment_base(frozen_default_task(), 5);
    cfg.methods = {"concat", "ensemble", "random_search", "moicl_uniform", "moicl_scalar"};
    return cfg;
}

ExperimentConfig frozen_noise_experiment() {
    auto cfg = frozen_experiment_base(frozen_noise_task(), 12);
    cfg.methods = {"concat", "moicl_uniform", "moicl_scalar"};
    return cfg;
}

ExperimentConfig frozen_ood_experiment(double ood_fraction) {
    auto cfg = frozen_experiment_base(frozen_ood_task(ood_fraction), 30);
    cfg.methods = {"concat", "moicl_uniform", "moicl_scalar"};
    return cfg;
}

ExperimentConfig frozen_imbalance_experiment() {
    auto cfg = frozen_experiment_base(frozen_imbalance_task(), 30);
    cfg.methods = {"concat", "moicl_uniform", "moicl_scalar"};
    return cfg;
}

// --- Robustness cells -----------------------------------------------------------

namespace {

struct TrainedScalarCell {
    std::vector<double> weights;
    double accuracy = 0.0;
};

TrainedScalarCell train_and_eval_scalar(const SimilarityExpert& source,
                                        const std::vector<Demonstration>& pool,
                                        const Partition& partition, const SyntheticTask& task,
                                        std::uint64_t seed, bool nonnegative) {
    TrainingConfig tcfg = frozen_training(Rng::derive(seed, kStreamTraining));
    tcfg.weighting = WeightingKind::kScalar;
    tcfg.nonnegative_weights = nonnegative;
    const auto trained =
        train(tcfg, source, pool, partition, task.vocab, task.train, task.dev);
    TrainedScalarCell out;
    out.weights = std::get<ScalarWeights>(trained.weighting).w;
    out.accuracy = evaluate_mixture(source, pool, partition, out.weights,
                                    CombinationRule::kPoe, task.test, task.vocab)
                       .accuracy;
    return out;
}

double mean_weight_where(const std::vector<double>& weights,
                         const std::vector<std::vector<Demonstration>>& subsets, Tag tag,
                         bool tagged) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < subsets.size(); ++i) {
        bool has = false;
        for (const auto& d : subsets[i]) {
            if (d.tags.count(tag)) has = true;
        }
        if (has == tagged) {
            sum += weights[i];
            ++count;
        }
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace

NoiseCellOutcome run_noise_cell(std::uint64_t seed) {
    SyntheticTaskSpec spec = frozen_noise_task();
    spec.seed = seed;
    const auto task = gen_synthetic_task(spec);
    const auto pool = inject_noise(task.pool, spec.noised_count, spec.noise_answers,
                                   Rng::derive(seed, kStreamNoise));
    const auto partition =
        partition_static(pool, spec.n_demonstrations, Rng::derive(seed, kStreamPartition));
    const SimilarityExpert source;

    NoiseCellOutcome out;
    out.concat_accuracy = run_concat_baseline(source, pool, task.test, task.vocab).accuracy;
    const auto trained = train_and_eval_scalar(source, pool, partition, task, seed, false);
    out.moicl_accuracy = trained.accuracy;
    out.nonnegative_accuracy =
        train_and_eval_scalar(source, pool, partition, task, seed, true).accuracy;

    const auto subsets = materialize(partition, pool);
    out.mean_weight_clean = mean_weight_where(trained.weights, subsets, Tag::kNoised, false);
    out.mean_weight_noised = mean_weight_where(trained.weights, subsets, Tag::kNoised, true);
    return out;
}

OodCellOutcome run_ood_cell(double ood_fraction, std::uint64_t seed) {
    SyntheticTaskSpec spec = frozen_ood_task(ood_fraction);
    spec.seed = seed;
    const auto task = gen_synthetic_task(spec);
    const auto ood_pool = inject_ood(task.pool, ood_fraction, ood_companion(spec),
                                     Rng::derive(seed, kStreamOod));
    const auto partition = partition_static(task.pool, spec.n_demonstrations,
                                            Rng::derive(seed, kStreamPartition));
    const SimilarityExpert source;

    OodCellOutcome out;
    out.concat_clean = run_concat_baseline(source, task.pool, task.test, task.vocab).accuracy;
    out.concat_ood = run_concat_baseline(source, ood_pool, task.test, task.vocab).accuracy;

    const auto clean = train_and_eval_scalar(source, task.pool, partition, task, seed, false);
    out.moicl_clean = clean.accuracy;
    const auto ood = train_and_eval_scalar(source, ood_pool, partition, task, seed, false);
    out.moicl_ood = ood.accuracy;

    const auto subsets = materialize(partition, ood_pool);
    out.mean_weight_in_domain = mean_weight_where(ood.weights, subsets, Tag::kOod, false);
    out.mean_weight_ood = mean_weight_where(ood.weights, subsets, Tag::kOod, true);
    return out;
}

ImbalanceCellOutcome run_imbalance_cell(std::uint64_t seed) {
    SyntheticTaskSpec spec = frozen_imbalance_task();
    spec.seed = seed;
    const auto task = gen_synthetic_task(spec);
    const auto pool =
        inject_imbalance(task.pool, spec.imbalance_minority_count, spec.labels.size() - 1, spec,
                         Rng::derive(seed, kStreamImbalance));
    const auto partition =
        partition_static(pool, spec.n_demonstrations, Rng::derive(seed, kStreamPartition));
    const SimilarityExpert source;

    ImbalanceCellOutcome out;
    out.concat_accuracy = run_concat_baseline(source, pool, task.test, task.vocab).accuracy;
    out.moicl_accuracy = train_and_eval_scalar(source, pool, partition, task, seed, false).accuracy;
    return out;
}

SparseCellOutcome run_sparse_cell(std::uint64_t seed) {
    SyntheticTaskSpec spec = frozen_default_task();
    spec.seed = seed;
    spec.n_demonstrations = 24;
    spec.noised_count = 18;          // vocabulary gains the noise strings
    spec.noise_answers = {"foo", "bar"};
    const auto task = gen_synthetic_task(spec);

    // Demonstrations 0..5 cycle all (label, topic) cells and stay clean; the
    // other 18 are corrupted outright.
    auto pool = task.pool;
    Rng noise_rng(Rng::derive(seed, kStreamNoise));
    for (std::size_t i = 6; i < pool.size(); ++i) {
        pool[i].output = spec.noise_answers[noise_rng.next_below(spec.noise_answers.size())];
        pool[i].tags.insert(Tag::kNoised);
    }

    // Consecutive triples, then a seeded shuffle of subset order so the
    // informative subsets do not sit at the tie-break positions.
    std::vector<std::size_t> slot(8);
    for (std::size_t i = 0; i < 8; ++i) slot[i] = i;
    Rng part_rng(Rng::derive(seed, kStreamPartition));
    part_rng.shuffle(slot);
    Partition partition;
    partition.seed = seed;
    partition.subsets.resize(8);
    SparseCellOutcome out;
    for (std::size_t c = 0; c < 8; ++c) {
        const std::size_t original = slot[c];
        for (std::size_t j = 0; j < 3; ++j) {
            partition.subsets[c].push_back(pool[original * 3 + j].id);
        }
        if (original < 2) out.planted.push_back(c);
    }
    std::sort(out.planted.begin(), out.planted.end());

    const SimilarityExpert source;
    TrainingConfig tcfg = frozen_training(Rng::derive(seed, kStreamTraining));
    tcfg.weighting = WeightingKind::kSparse;
    tcfg.k_prime = 2;
    tcfg.imle_lambda = 1.0;
    const auto trained =
        train(tcfg, source, pool, partition, task.vocab, task.train, task.dev);
    const auto& sparse = std::get<SparseWeighting>(trained.weighting);
    out.imle_mask = topk_mask(sparse.m, 2);

    // Exhaustive C(8,2) masks scored by dev log-likelihood under the trained
    // dense weights.
    const auto subsets = materialize(partition, pool);
    const auto dev_dists = expert_matrix(source, subsets, task.dev, task.vocab);
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> best_mask;
    for (std::size_t a = 0; a < 8; ++a) {
        for (std::size_t b = a + 1; b < 8; ++b) {
            std::vector<double> mask(8, 0.0);
            mask[a] = 1.0;
            mask[b] = 1.0;
            std::vector<double> w(8);
            for (std::size_t i = 0; i < 8; ++i) w[i] = sparse.w_prime[i] * mask[i];
            double ll = 0.0;
            for (std::size_t j = 0; j < dev_dists.size(); ++j) {
                ll -= nll_loss(w, dev_dists[j], task.dev[j].gold, CombinationRule::kPoe);
            }
            if (ll > best) {
                best = ll;
                best_mask = mask;
            }
        }
    }
    out.brute_force_mask = best_mask;
    out.agree = (out.imle_mask == out.brute_force_mask);
    return out;
}

}  // namespace moicl
