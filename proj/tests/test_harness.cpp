#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "moicl/experiment.hpp"
#include "moicl/harness.hpp"
#include "moicl/rng.hpp"

using namespace moicl;

TEST_CASE("gen_synthetic_task basics") {
    SUBCASE("balanced labels over a small pool") {
        SyntheticTaskSpec spec;
        spec.labels = {"alpha", "beta"};
        spec.n_demonstrations = 6;
        spec.seed = 42;
        const auto task = gen_synthetic_task(spec);
        std::size_t alpha = 0, beta = 0;
        for (const auto& d : task.pool) {
            alpha += d.output == "alpha" ? 1 : 0;
            beta += d.output == "beta" ? 1 : 0;
        }
        CHECK(alpha == 3);
        CHECK(beta == 3);
    }
    SUBCASE("ids are disjoint across pool and splits") {
        SyntheticTaskSpec spec;
        spec.seed = 7;
        const auto task = gen_synthetic_task(spec);
        std::set<std::string> ids;
        for (const auto& d : task.pool) CHECK(ids.insert(d.id).second);
        for (const auto& e : task.train) CHECK(ids.insert(e.id).second);
        for (const auto& e : task.dev) CHECK(ids.insert(e.id).second);
        for (const auto& e : task.test) CHECK(ids.insert(e.id).second);
    }
    SUBCASE("deterministic given the seed") {
        SyntheticTaskSpec spec;
        spec.seed = 1234;
        const auto a = gen_synthetic_task(spec);
        const auto b = gen_synthetic_task(spec);
        CHECK(a.pool == b.pool);
        REQUIRE(a.test.size() == b.test.size());
        for (std::size_t i = 0; i < a.test.size(); ++i) {
            CHECK(a.test[i].input == b.test[i].input);
            CHECK(a.test[i].gold == b.test[i].gold);
        }
    }
    SUBCASE("a clean 20-token-vocabulary task is easy for the reference expert") {
        SyntheticTaskSpec spec;
        spec.labels = {"alpha", "beta"};
        spec.topics_per_label = 2;
        spec.tokens_per_topic = 4;       // 16 topic tokens
        spec.distractor_vocab_size = 4;  // + 4 distractors = 20 total
        spec.topic_tokens_per_input = 3;
        spec.distractors_per_input = 1;
        spec.n_demonstrations = 12;
        spec.test_size = 100;
        spec.seed = 42;
        const auto task = gen_synthetic_task(spec);
        const SimilarityExpert source;
        const auto outcome = run_concat_baseline(source, task.pool, task.test, task.vocab);
        CHECK(outcome.accuracy > 0.9);
    }
    SUBCASE("invalid specs are rejected") {
        SyntheticTaskSpec spec;
        spec.labels = {"only"};
        CHECK_THROWS_AS(gen_synthetic_task(spec), InvalidSpec);
        SyntheticTaskSpec bad_frac;
        bad_frac.ood_fraction = 1.5;
        CHECK_THROWS_AS(gen_synthetic_task(bad_frac), InvalidSpec);
    }
}

TEST_CASE("vocab_for appends noise answers only when noise is active") {
    SyntheticTaskSpec spec;
    spec.labels = {"yes", "no"};
    spec.noise_answers = {"yes", "no", "foo", "bar"};
    CHECK(vocab_for(spec).labels() == std::vector<std::string>{"yes", "no"});
    spec.noised_count = 3;
    CHECK(vocab_for(spec).labels() == std::vector<std::string>{"yes", "no", "foo", "bar"});
}

TEST_CASE("inject_ood") {
    SyntheticTaskSpec spec;
    spec.n_demonstrations = 30;
    spec.seed = 9;
    const auto task = gen_synthetic_task(spec);
    SyntheticTaskSpec ood = spec;
    ood.token_namespace = "ood";

    SUBCASE("p = 0 leaves the pool untouched") {
        CHECK(inject_ood(task.pool, 0.0, ood, 5) == task.pool);
    }
    SUBCASE("p = 0.5 tags exactly 15 of 30") {
        const auto pool = inject_ood(task.pool, 0.5, ood, 5);
        std::size_t tagged = 0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (pool[i].tags.count(Tag::kOod)) {
                ++tagged;
                CHECK(pool[i].id == task.pool[i].id);  // ids survive replacement
                CHECK(pool[i].input.find("oodt") != std::string::npos);
            }
        }
        CHECK(tagged == 15);
    }
    SUBCASE("p = 1 replaces everything") {
        const auto pool = inject_ood(task.pool, 1.0, ood, 5);
        for (const auto& d : pool) CHECK(d.tags.count(Tag::kOod) == 1);
    }
}

TEST_CASE("inject_imbalance") {
    SyntheticTaskSpec spec;
    spec.n_demonstrations = 30;
    spec.seed = 11;
    const auto task = gen_synthetic_task(spec);

    SUBCASE("29:1 split") {
        const auto pool = inject_imbalance(task.pool, 1, 1, spec, 3);
        std::size_t minority = 0;
        for (const auto& d : pool) minority += d.output == "beta" ? 1 : 0;
        CHECK(minority == 1);
        std::size_t tagged = 0;
        for (const auto& d : pool) tagged += d.tags.count(Tag::kImbalanceMinority);
        CHECK(tagged == 1);
    }
    SUBCASE("minority_count = n/2 keeps a balanced pool balanced") {
        const auto pool = inject_imbalance(task.pool, 15, 1, spec, 3);
        std::size_t minority = 0;
        for (const auto& d : pool) minority += d.output == "beta" ? 1 : 0;
        CHECK(minority == 15);
    }
    SUBCASE("minority_count = 0 rejected") {
        CHECK_THROWS_AS(inject_imbalance(task.pool, 0, 1, spec, 3), InvalidSpec);
    }
    SUBCASE("infeasible when the pool lacks minority demonstrations") {
        auto all_alpha = task.pool;
        for (auto& d : all_alpha) d.output = "alpha";
        CHECK_THROWS_AS(inject_imbalance(all_alpha, 2, 1, spec, 3), InfeasibleImbalance);
    }
}

TEST_CASE("inject_noise") {
    SyntheticTaskSpec spec;
    spec.n_demonstrations = 12;
    spec.seed = 13;
    const auto task = gen_synthetic_task(spec);
    const std::vector<std::string> answers = {"yes", "no", "foo", "bar"};

    SUBCASE("zero count is a no-op") {
        CHECK(inject_noise(task.pool, 0, answers, 1) == task.pool);
    }
    SUBCASE("all demonstrations noised") {
        const auto pool = inject_noise(task.pool, 12, answers, 1);
        for (const auto& d : pool) {
            CHECK(d.tags.count(Tag::kNoised) == 1);
            CHECK(std::find(answers.begin(), answers.end(), d.output) != answers.end());
        }
    }
    SUBCASE("10 of 12 tagged") {
        const auto pool = inject_noise(task.pool, 10, answers, 1);
        std::size_t tagged = 0;
        for (const auto& d : pool) tagged += d.tags.count(Tag::kNoised);
        CHECK(tagged == 10);
    }
    SUBCASE("count above n rejected") {
        CHECK_THROWS_AS(inject_noise(task.pool, 13, answers, 1), InvalidSpec);
    }
}

TEST_CASE("evaluate metrics") {
    CHECK(evaluate_accuracy({0, 1, 1}, {0, 1, 1}) == doctest::Approx(1.0));
    CHECK(evaluate_accuracy({0, 0}, {1, 1}) == doctest::Approx(0.0));
    CHECK(evaluate_accuracy({0, 1, 0, 1}, {0, 1, 1, 1}) == doctest::Approx(0.75));
    CHECK_THROWS_AS(evaluate_accuracy({0}, {0, 1}), LengthMismatch);

    CHECK(evaluate_em({" Yes ", "no"}, {"yes", "NO"}) == doctest::Approx(1.0));
    CHECK(evaluate_em({"foo"}, {"bar"}) == doctest::Approx(0.0));
    CHECK(normalize_answer("  MiXeD Case\t") == "mixed case");
}

TEST_CASE("baseline equivalences against independent products") {
    SyntheticTaskSpec spec = frozen_default_task();
    spec.seed = 42;
    spec.test_size = 40;
    const auto task = gen_synthetic_task(spec);
    const SimilarityExpert source;

    // Concat == MoICL(k=1, w=[1]) per query, distribution-level.
    Partition whole;
    whole.subsets.emplace_back();
    for (const auto& d : task.pool) whole.subsets.back().push_back(d.id);
    const auto subsets = materialize(whole, task.pool);
    for (const auto& ex : task.test) {
        const auto direct = source.evaluate("s0", subsets[0], ex.id, ex.input, task.vocab);
        const auto moicl =
            poe_combine(std::vector<double>{1.0}, std::vector<TokenDistribution>{direct});
        for (std::size_t y = 0; y < direct.size(); ++y) {
            CHECK(std::abs(moicl.prob(y) - direct.prob(y)) < 1e-12);
        }
    }

    // Ensemble == MoICL(k=n singletons, w=1): compare the library path with a
    // direct probability product computed independently.
    Partition singles;
    for (const auto& d : task.pool) singles.subsets.push_back({d.id});
    const auto single_subsets = materialize(singles, task.pool);
    const std::vector<double> ones(task.pool.size(), 1.0);
    for (const auto& ex : task.test) {
        std::vector<TokenDistribution> dists;
        for (std::size_t s = 0; s < single_subsets.size(); ++s) {
            dists.push_back(
                source.evaluate(subset_id_for(s), single_subsets[s], ex.id, ex.input, task.vocab));
        }
        const auto combined = poe_combine(ones, dists);
        std::vector<double> log_product(task.vocab.size(), 0.0);
        for (const auto& d : dists) {
            for (std::size_t y = 0; y < log_product.size(); ++y) log_product[y] += d.logp()[y];
        }
        const double lse = log_sum_exp(log_product);
        for (std::size_t y = 0; y < log_product.size(); ++y) {
            CHECK(std::abs(combined.prob(y) - std::exp(log_product[y] - lse)) < 1e-12);
        }
    }

    // Prediction-level agreement of the run_* wrappers.
    const auto concat = run_concat_baseline(source, task.pool, task.test, task.vocab);
    const auto via_moicl = evaluate_mixture(source, task.pool, whole, std::vector<double>{1.0},
                                            CombinationRule::kPoe, task.test, task.vocab);
    CHECK(concat.predictions == via_moicl.predictions);
    const auto ensemble = run_ensemble_baseline(source, task.pool, task.test, task.vocab);
    const auto singles_moicl = evaluate_mixture(source, task.pool, singles, ones,
                                                CombinationRule::kPoe, task.test, task.vocab);
    CHECK(ensemble.predictions == singles_moicl.predictions);
}

TEST_CASE("ensemble over a single demonstration equals concat") {
    SyntheticTaskSpec spec;
    spec.n_demonstrations = 1;
    spec.test_size = 30;
    spec.seed = 8;
    const auto task = gen_synthetic_task(spec);
    const SimilarityExpert source;
    const auto concat = run_concat_baseline(source, task.pool, task.test, task.vocab);
    const auto ensemble = run_ensemble_baseline(source, task.pool, task.test, task.vocab);
    CHECK(concat.predictions == ensemble.predictions);
    CHECK(concat.accuracy == ensemble.accuracy);
}

TEST_CASE("frozen default task golden accuracies") {
    const SimilarityExpert source;
    SUBCASE("seed 31") {
        SyntheticTaskSpec spec = frozen_default_task();
        spec.seed = 31;
        const auto task = gen_synthetic_task(spec);
        CHECK(run_concat_baseline(source, task.pool, task.test, task.vocab).accuracy ==
              157.0 / 200.0);
        CHECK(run_ensemble_baseline(source, task.pool, task.test, task.vocab).accuracy ==
              157.0 / 200.0);
    }
    SUBCASE("seed 42") {
        SyntheticTaskSpec spec = frozen_default_task();
        spec.seed = 42;
        const auto task = gen_synthetic_task(spec);
        CHECK(run_concat_baseline(source, task.pool, task.test, task.vocab).accuracy ==
              160.0 / 200.0);
        CHECK(run_ensemble_baseline(source, task.pool, task.test, task.vocab).accuracy ==
              160.0 / 200.0);
    }
}

TEST_CASE("random search") {
    SyntheticTaskSpec spec = frozen_default_task();
    spec.seed = 65;
    spec.train_size = 60;
    spec.test_size = 60;
    const auto task = gen_synthetic_task(spec);
    const SimilarityExpert source;

    const auto one = run_random_search(source, task.pool, 1, task.train, task.test, task.vocab, 5);
    CHECK(one.best_candidate == 0);
    CHECK(one.eval_score >= 0.0);

    // Candidate streams are nested under a shared seed, so the best-of-5
    // train score dominates the best-of-1.
    const auto five =
        run_random_search(source, task.pool, 5, task.train, task.test, task.vocab, 5);
    CHECK(five.best_train_score >= one.best_train_score);
    CHECK_THROWS_AS(run_random_search(source, task.pool, 0, task.train, task.test, task.vocab, 5),
                    InvalidK);
}

TEST_CASE("cost model") {
    SUBCASE("worked examples from the complexity table") {
        CostModelInput in;
        in.n = 30;
        in.k = 1;
        in.c_llm = 1.0;
        in.c_hyper = 1.0;
        in.method = CostMethod::kConcat;
        CHECK(cost_model(in) == doctest::Approx(961.0));
        in.method = CostMethod::kEnsemble;
        CHECK(cost_model(in) == doctest::Approx(120.0));
        in.method = CostMethod::kMoiclScalar;
        in.k = 5;
        CHECK(cost_model(in) == doctest::Approx(245.0));
        in.method = CostMethod::kMoiclUniform;
        CHECK(cost_model(in) == doctest::Approx(245.0));
        in.method = CostMethod::kMoiclHypernet;
        in.c_hyper = 0.5;
        CHECK(cost_model(in) == doctest::Approx(245.0 + 900.0 * 0.5));
    }
    SUBCASE("ordering: ensemble < moicl < concat for 1 < k < n") {
        for (std::size_t n = 3; n <= 128; ++n) {
            CostModelInput in;
            in.n = n;
            in.c_llm = 1.0;
            in.c_hyper = 1.0;
            in.method = CostMethod::kConcat;
            in.k = 1;
            const double concat = cost_model(in);
            in.method = CostMethod::kEnsemble;
            const double ensemble = cost_model(in);
            for (std::size_t k = 2; k < n; ++k) {
                in.method = CostMethod::kMoiclScalar;
                in.k = k;
                const double moicl = cost_model(in);
                CHECK(ensemble < moicl);
                CHECK(moicl < concat);
            }
        }
    }
    SUBCASE("input validation") {
        CostModelInput in;
        in.n = 0;
        CHECK_THROWS_AS(cost_model(in), InvalidConfig);
        CHECK_THROWS_AS(cost_method_from_name("bogus"), InvalidConfig);
    }
}

TEST_CASE("dataset JSONL round trips") {
    SyntheticTaskSpec spec;
    spec.n_demonstrations = 8;
    spec.noised_count = 2;
    spec.seed = 3;
    const auto task = gen_synthetic_task(spec);
    const auto pool = inject_noise(task.pool, 2, spec.noise_answers, 4);

    const auto text = demonstrations_to_jsonl(pool);
    const auto back = demonstrations_from_jsonl(text);
    CHECK(back == pool);
    CHECK(demonstrations_to_jsonl(back) == text);

    const auto split_text = examples_to_jsonl(task.dev, task.vocab);
    const auto split_back = examples_from_jsonl(split_text, task.vocab);
    REQUIRE(split_back.size() == task.dev.size());
    for (std::size_t i = 0; i < split_back.size(); ++i) {
        CHECK(split_back[i].id == task.dev[i].id);
        CHECK(split_back[i].gold == task.dev[i].gold);
    }

    CHECK_THROWS_AS(demonstrations_from_jsonl("{broken"), ParseError);
}

TEST_CASE("experiment config JSON") {
    SUBCASE("defaults round trip") {
        const ExperimentConfig cfg = frozen_noise_experiment();
        const auto text = experiment_config_to_json(cfg);
        const auto back = experiment_config_from_json(text);
        CHECK(experiment_config_to_json(back) == text);
    }
    SUBCASE("field paths in validation errors") {
        try {
            experiment_config_from_json(R"({"training":{"learning_rate":-1}})");
            FAIL("expected InvalidConfig");
        } catch (const InvalidConfig& e) {
            CHECK(std::string(e.what()).find("training.learning_rate") != std::string::npos);
        }
        try {
            experiment_config_from_json(R"({"task":{"labels":"notalist"}})");
            FAIL("expected InvalidConfig");
        } catch (const InvalidConfig& e) {
            CHECK(std::string(e.what()).find("task.labels") != std::string::npos);
        }
        CHECK_THROWS_AS(experiment_config_from_json(R"({"methods":["nope"]})"), InvalidConfig);
        CHECK_THROWS_AS(experiment_config_from_json("not json"), InvalidConfig);
    }
}

TEST_CASE("run_experiment report shape and determinism") {
    ExperimentConfig cfg = frozen_default_experiment();
    cfg.task.train_size = 40;
    cfg.task.dev_size = 20;
    cfg.task.test_size = 40;
    cfg.training.epochs = 2;
    cfg.methods = {"concat", "moicl_scalar"};

    SUBCASE("single seed omits the std field") {
        cfg.seeds = {42};
        const auto report = run_experiment(cfg);
        REQUIRE(report.methods.size() == 2);
        CHECK(!report.methods[0].std_dev.has_value());
        const auto text = report_to_json(report);
        CHECK(text.find("\"std\"") == std::string::npos);
        CHECK(text.find("\"seconds\"") == std::string::npos);

        // moicl_scalar carries per-expert weights with provenance tags.
        CHECK(report.methods[1].per_seed[0].weights.size() == cfg.partition.k);
    }
    SUBCASE("two seeds populate std and CSV rows") {
        cfg.seeds = {31, 42};
        const auto report = run_experiment(cfg);
        CHECK(report.methods[0].std_dev.has_value());
        const auto csv = report_to_csv(report);
        CHECK(csv.rfind("method,k,seed,metric,value,cost_units,seconds\n", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 2 methods x 2 seeds
    }
    SUBCASE("reports are byte-identical across reruns") {
        cfg.seeds = {42};
        const auto a = report_to_json(run_experiment(cfg));
        const auto b = report_to_json(run_experiment(cfg));
        CHECK(a == b);
    }
}

TEST_CASE("shipped experiment configs match the frozen definitions") {
    const auto check_one = [](const std::string& file, const ExperimentConfig& frozen) {
        std::ifstream in(std::string(MOICL_REPO_DIR) + "/configs/" + file);
        REQUIRE(in.good());
        std::ostringstream buf;
        buf << in.rdbuf();
        const auto parsed = experiment_config_from_json(buf.str());
        CHECK(experiment_config_to_json(parsed) == experiment_config_to_json(frozen));
    };
    check_one("default_experiment.json", frozen_default_experiment());
    check_one("noise_experiment.json", frozen_noise_experiment());
    check_one("ood50_experiment.json", frozen_ood_experiment(0.5));
    check_one("ood70_experiment.json", frozen_ood_experiment(0.7));
    check_one("imbalance_experiment.json", frozen_imbalance_experiment());
}

TEST_CASE("external logits drive the full evaluation path") {
    SyntheticTaskSpec spec;
    spec.labels = {"L1", "L2"};
    spec.n_demonstrations = 4;
    spec.test_size = 2;
    spec.seed = 1;
    const auto task = gen_synthetic_task(spec);
    const auto partition = partition_static(task.pool, 2, 3);

    // One record per (query, subset); subset ids follow partition order.
    ExternalLogitsTable table;
    for (const auto& ex : task.test) {
        table.entries[{ex.id, "s0"}] = {2.0, 0.0};  // votes L1
        table.entries[{ex.id, "s1"}] = {0.0, 1.0};  // votes L2
    }
    const ExternalLogitsExpert source(table);
    const auto outcome =
        evaluate_mixture(source, task.pool, partition, std::vector<double>{1.0, 1.0},
                         CombinationRule::kPoe, task.test, task.vocab);
    // Combined log-odds favor L1: 2.0 vs 1.0.
    for (const std::size_t pred : outcome.predictions) CHECK(pred == 0);

    // A missing (query, subset) pair surfaces as MissingEntry.
    ExternalLogitsTable incomplete;
    incomplete.entries[{task.test[0].id, "s0"}] = {0.0, 0.0};
    const ExternalLogitsExpert bad(incomplete);
    CHECK_THROWS_AS(evaluate_mixture(bad, task.pool, partition, std::vector<double>{1.0, 1.0},
                                     CombinationRule::kPoe, task.test, task.vocab),
                    MissingEntry);
}

TEST_CASE("empty evaluation split is rejected") {
    SyntheticTaskSpec spec;
    spec.n_demonstrations = 4;
    spec.seed = 2;
    const auto task = gen_synthetic_task(spec);
    const SimilarityExpert source;
    CHECK_THROWS_AS(run_concat_baseline(source, task.pool, {}, task.vocab), LengthMismatch);
}

TEST_CASE("random search breaks score ties toward the lowest candidate") {
    // Identical demonstrations make every candidate subset score the same.
    std::vector<Demonstration> pool;
    for (int i = 0; i < 6; ++i) {
        pool.push_back(Demonstration{"d" + std::to_string(i), "same tokens here", "L1", {}});
    }
    std::vector<LabeledExample> split;
    for (int i = 0; i < 4; ++i) {
        split.push_back(LabeledExample{"q" + std::to_string(i), "same tokens here", 0});
    }
    const AnswerVocabulary vocab({"L1", "L2"});
    const SimilarityExpert source;
    const auto outcome = run_random_search(source, pool, 4, split, split, vocab, 99);
    CHECK(outcome.best_candidate == 0);
}

TEST_CASE("trained OOD weights separate in-domain from OOD experts") {
    int ok = 0;
    for (const std::uint64_t seed : kExperimentSeeds) {
        const auto o = run_ood_cell(0.5, seed);
        if (o.mean_weight_in_domain > o.mean_weight_ood) ++ok;
    }
    CHECK(ok >= 4);
}
