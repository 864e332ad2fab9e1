// Command-line front end: synthetic task generation, partitioning, weight
// training, evaluation, experiment sweeps and the analytic cost model. All
// state flows through files and flags; no environment variables.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "moicl/experiment.hpp"
#include "moicl/rng.hpp"

namespace {

using namespace moicl;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << content;
}

struct CommonFlags {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> k;
    std::optional<std::size_t> k_prime;
    std::optional<std::string> combination;
    std::optional<std::string> method;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
    auto* opt = cmd->add_option("--config", flags.config_path, "experiment config JSON");
    if (config_required) opt->required();
    cmd->add_option("--out-dir", flags.out_dir, "output directory");
    cmd->add_option("--seed", flags.seed, "seed override");
    cmd->add_option("--k", flags.k, "partition size override");
    cmd->add_option("--k-prime", flags.k_prime, "retained experts for sparse weighting");
    cmd->add_option("--combination", flags.combination, "combination rule: poe | mixture")
        ->check(CLI::IsMember({"poe", "mixture"}));
    cmd->add_option("--method", flags.method, "method name");
}

ExperimentConfig load_config(const CommonFlags& flags) {
    auto cfg = experiment_config_from_json(read_file(flags.config_path));
    if (flags.k) cfg.partition.k = *flags.k;
    if (flags.k_prime) cfg.training.k_prime = *flags.k_prime;
    if (flags.combination) {
        cfg.training.combination = combination_rule_from_name(*flags.combination);
    }
    cfg.validate();
    return cfg;
}

std::uint64_t cell_seed(const ExperimentConfig& cfg, const CommonFlags& flags) {
    if (flags.seed) return *flags.seed;
    return cfg.seeds.empty() ? cfg.task.seed : cfg.seeds.front();
}

int cmd_gen_task(const CommonFlags& flags) {
    const auto cfg = load_config(flags);
    const std::uint64_t seed = cell_seed(cfg, flags);
    const auto cell = build_cell(cfg, seed);
    write_file(flags.out_dir + "/pool.jsonl", demonstrations_to_jsonl(cell.pool));
    write_file(flags.out_dir + "/train.jsonl",
               examples_to_jsonl(cell.task.train, cell.task.vocab));
    write_file(flags.out_dir + "/dev.jsonl", examples_to_jsonl(cell.task.dev, cell.task.vocab));
    write_file(flags.out_dir + "/test.jsonl", examples_to_jsonl(cell.task.test, cell.task.vocab));
    nlohmann::ordered_json vocab;
    vocab["labels"] = cell.task.vocab.labels();
    write_file(flags.out_dir + "/vocab.json", vocab.dump(2));
    std::cout << "wrote pool of " << cell.pool.size() << " demonstrations and splits to "
              << flags.out_dir << "\n";
    return 0;
}

int cmd_partition(const CommonFlags& flags) {
    const auto cfg = load_config(flags);
    const std::uint64_t seed = cell_seed(cfg, flags);
    auto with_strategy = cfg;
    if (flags.method) with_strategy.partition.strategy = *flags.method;
    with_strategy.validate();
    const auto cell = build_cell(with_strategy, seed);
    write_file(flags.out_dir + "/partition.json", partition_to_json(cell.partition));
    std::cout << "wrote partition with k=" << cell.partition.k() << " to " << flags.out_dir
              << "/partition.json\n";
    return 0;
}

int cmd_train(const CommonFlags& flags) {
    auto cfg = load_config(flags);
    const std::string method = flags.method.value_or("moicl_scalar");
    const std::uint64_t seed = cell_seed(cfg, flags);
    const auto cell = build_cell(cfg, seed);

    TrainingConfig tcfg = cfg.training;
    tcfg.seed = Rng::derive(seed, 7);
    if (method == "moicl_scalar") {
        tcfg.weighting = WeightingKind::kScalar;
    } else if (method == "moicl_hypernet") {
        tcfg.weighting = WeightingKind::kHypernet;
    } else if (method == "moicl_sparse") {
        tcfg.weighting = WeightingKind::kSparse;
    } else {
        throw InvalidConfig("train: method must be moicl_scalar, moicl_hypernet or moicl_sparse");
    }

    const auto source = cfg.expert.kind == "external"
                            ? std::unique_ptr<ExpertSource>(std::make_unique<ExternalLogitsExpert>(
                                  load_external_logits(cfg.expert.external_path)))
                            : std::make_unique<SimilarityExpert>(cfg.expert.similarity);
    const auto result = train(tcfg, *source, cell.pool, cell.partition, cell.task.vocab,
                              cell.task.train, cell.task.dev);

    std::string checkpoint;
    if (const auto* sw = std::get_if<ScalarWeights>(&result.weighting)) {
        checkpoint = scalar_checkpoint_to_json(*sw);
    } else if (const auto* sp = std::get_if<SparseWeighting>(&result.weighting)) {
        checkpoint = sparse_checkpoint_to_json(*sp);
    } else {
        checkpoint =
            hypernet_checkpoint_to_json(std::get<HyperNetwork>(result.weighting),
                                        cell.partition.k());
    }
    write_file(flags.out_dir + "/checkpoint.json", checkpoint);
    write_file(flags.out_dir + "/trace.json", trace_to_json(result.trace));
    const auto& best = result.trace.epochs[result.trace.selected_epoch];
    std::cout << "trained " << method << " for " << result.trace.epochs.size()
              << " epochs; selected epoch " << result.trace.selected_epoch
              << " (dev accuracy " << best.dev_accuracy << ")\n";
    return 0;
}

MixtureWeights weights_from_checkpoint(const Checkpoint& ck, const ExperimentCell& cell,
                                       const std::vector<Demonstration>& pool) {
    if (ck.kind == "scalar") return ck.values;
    if (ck.kind == "sparse") {
        SparseWeighting sw;
        sw.w_prime = ck.values;
        sw.m = ck.m;
        sw.k_prime = ck.k_prime;
        return sparsify(sw);
    }
    HyperNetwork net(ck.hypernet_config, 0);
    net.set_params(ck.hypernet_params);
    const auto subsets = materialize(cell.partition, pool);
    std::vector<std::string> texts;
    texts.reserve(subsets.size());
    for (const auto& s : subsets) texts.push_back(subset_text(s));
    return hypernet_forward(net, texts);
}

int cmd_eval(const CommonFlags& flags, const std::string& weights_path) {
    const auto cfg = load_config(flags);
    const std::string method = flags.method.value_or("concat");
    const std::uint64_t seed = cell_seed(cfg, flags);
    const auto cell = build_cell(cfg, seed);

    MethodSeedResult result;
    if (!weights_path.empty()) {
        const auto ck = checkpoint_from_json(read_file(weights_path));
        const auto weights = weights_from_checkpoint(ck, cell, cell.pool);
        const auto source = cfg.expert.kind == "external"
                                ? std::unique_ptr<ExpertSource>(
                                      std::make_unique<ExternalLogitsExpert>(
                                          load_external_logits(cfg.expert.external_path)))
                                : std::make_unique<SimilarityExpert>(cfg.expert.similarity);
        const auto outcome =
            evaluate_mixture(*source, cell.pool, cell.partition, weights,
                             cfg.training.combination, cell.task.test, cell.task.vocab);
        result.seed = seed;
        if (cfg.metric == "em") {
            std::vector<std::string> pred, gold;
            for (std::size_t i = 0; i < cell.task.test.size(); ++i) {
                pred.push_back(cell.task.vocab.label(outcome.predictions[i]));
                gold.push_back(cell.task.vocab.label(cell.task.test[i].gold));
            }
            result.value = evaluate_em(pred, gold);
        } else {
            result.value = outcome.accuracy;
        }
    } else {
        result = run_method_cell(cfg, cell, method, seed);
    }

    nlohmann::ordered_json j;
    j["method"] = weights_path.empty() ? method : "checkpoint";
    j["seed"] = seed;
    j["metric"] = cfg.metric;
    j["value"] = result.value;
    if (weights_path.empty()) j["cost_units"] = result.cost_units;
    write_file(flags.out_dir + "/eval.json", j.dump(2));
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_sweep(const CommonFlags& flags) {
    auto cfg = load_config(flags);
    if (flags.seed) cfg.seeds = {*flags.seed};
    if (flags.method) cfg.methods = {*flags.method};
    cfg.validate();
    const auto report = run_experiment(cfg);
    write_report(report, flags.out_dir);
    std::cout << "wrote " << flags.out_dir << "/report.json and " << flags.out_dir
              << "/summary.csv\n";
    for (const auto& m : report.methods) {
        std::cout << "  " << m.method << ": mean " << cfg.metric << " = " << m.mean;
        if (m.std_dev) std::cout << " (std " << *m.std_dev << ")";
        std::cout << "\n";
    }
    return 0;
}

int cmd_cost(const std::string& method, std::size_t n, std::size_t k, double c_llm,
             double c_hyper) {
    CostModelInput input;
    input.method = cost_method_from_name(method);
    input.n = n;
    input.k = k;
    input.c_llm = c_llm;
    input.c_hyper = c_hyper;
    std::cout << cost_model(input) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixture-of-in-context-learners engine"};
    app.require_subcommand(1);

    CommonFlags gen_flags, part_flags, train_flags, eval_flags, sweep_flags;
    std::string eval_weights_path;

    auto* gen = app.add_subcommand("gen-task", "generate a synthetic task to JSONL files");
    add_common(gen, gen_flags, true);

    auto* part = app.add_subcommand("partition", "partition the demonstration pool");
    add_common(part, part_flags, true);

    auto* tr = app.add_subcommand("train", "train a weighting function");
    add_common(tr, train_flags, true);

    auto* ev = app.add_subcommand("eval", "evaluate one method on the test split");
    add_common(ev, eval_flags, true);
    ev->add_option("--weights", eval_weights_path, "checkpoint JSON to evaluate");

    auto* sw = app.add_subcommand("sweep", "run the full method grid over all seeds");
    add_common(sw, sweep_flags, true);

    auto* cost = app.add_subcommand("cost", "analytic inference cost in abstract units");
    std::string cost_method = "concat";
    std::size_t cost_n = 30;
    std::size_t cost_k = 1;
    double c_llm = 1.0;
    double c_hyper = 0.01;
    cost->add_option("--method", cost_method,
                     "concat | ensemble | moicl_uniform | moicl_scalar | moicl_hypernet");
    cost->add_option("--n", cost_n, "number of demonstrations");
    cost->add_option("--k", cost_k, "number of subsets");
    cost->add_option("--c-llm", c_llm, "LLM unit cost");
    cost->add_option("--c-hyper", c_hyper, "hyper-network unit cost");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_task(gen_flags);
        if (part->parsed()) return cmd_partition(part_flags);
        if (tr->parsed()) return cmd_train(train_flags);
        if (ev->parsed()) return cmd_eval(eval_flags, eval_weights_path);
        if (sw->parsed()) return cmd_sweep(sweep_flags);
        if (cost->parsed()) return cmd_cost(cost_method, cost_n, cost_k, c_llm, c_hyper);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
