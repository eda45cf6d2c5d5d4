#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "tlc/error.hpp"
#include "tlc/evaluation.hpp"

using namespace tlc::evaluation;
using tlc::ontology::LabelDistribution;
using tlc::ontology::Level;

namespace {

LabelSet random_set(std::size_t n, std::mt19937_64& rng) {
    std::bernoulli_distribution b(0.25);
    LabelSet s;
    for (std::size_t i = 0; i < n; ++i)
        if (b(rng)) s.push_back(i);
    return s;
}

// Per (patch, class) pair membership test, no merging tricks.
std::vector<Counts> brute_counts(const std::vector<LabelSet>& pred, const std::vector<LabelSet>& truth,
                                 std::size_t n) {
    std::vector<Counts> c(n);
    for (std::size_t k = 0; k < pred.size(); ++k)
        for (std::size_t cls = 0; cls < n; ++cls) {
            const bool p = std::find(pred[k].begin(), pred[k].end(), cls) != pred[k].end();
            const bool t = std::find(truth[k].begin(), truth[k].end(), cls) != truth[k].end();
            if (p && t) c[cls].tp++;
            if (p && !t) c[cls].fp++;
            if (!p && t) c[cls].fn++;
        }
    return c;
}

LabelDistribution dist(std::vector<double> p) {
    const Level lv = p.size() == 15 ? Level::Level2 : Level::Level1;
    return LabelDistribution::validated(lv, std::move(p));
}

}  // namespace

TEST_SUITE("evaluation") {
    TEST_CASE("label sets from distributions") {
        const ThresholdRule rule{0.1};
        std::vector<double> hot(15, 0.0);
        hot[3] = 1.0;
        CHECK(predicted_labels(dist(hot), rule) == LabelSet{3});
        CHECK(true_labels(dist({0.4, 0.5, 0, 0.1, 0})) == LabelSet{0, 1, 3});
        CHECK(predicted_labels(dist(std::vector<double>(15, 1.0 / 15)), rule).empty());
    }

    TEST_CASE("threshold must lie strictly inside (0, 1)") {
        CHECK_THROWS_AS(ThresholdRule{0.0}.validate(), tlc::ConfigError);
        CHECK_THROWS_AS(ThresholdRule{1.0}.validate(), tlc::ConfigError);
    }

    TEST_CASE("worked micro-F1 examples") {
        CHECK(micro_f1({{0, 1}}, {{0, 1}}) == 1.0);
        // TP=2, FP=1, FN=1
        CHECK(micro_f1({{0, 1, 2}, {}}, {{0, 1}, {3}}) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
        CHECK(micro_f1({{}, {}}, {{}, {}}) == 1.0);
        CHECK_THROWS_AS(micro_f1({{0}}, {{0}, {1}}), tlc::Error);
    }

    TEST_CASE("per-class F1 drops absent classes") {
        const auto& lv = tlc::ontology::Ontology::builtin().level(Level::Level1);
        const auto f = per_class_f1({{0}, {}}, {{0}, {0}}, lv);
        CHECK(f.size() == 1);
        CHECK(f.at(0) == doctest::Approx(2.0 / 3.0));
    }

    TEST_CASE("counts and F1 match a brute-force oracle on random instances") {
        std::mt19937_64 rng(21);
        const auto& lv = tlc::ontology::Ontology::builtin().level(Level::Level2);
        for (int trial = 0; trial < 1000; ++trial) {
            const std::size_t patches = 1 + trial % 17;
            std::vector<LabelSet> pred, truth;
            for (std::size_t k = 0; k < patches; ++k) {
                pred.push_back(random_set(15, rng));
                truth.push_back(random_set(15, rng));
            }
            const auto fast = confusion_counts(pred, truth, 15);
            const auto ref = brute_counts(pred, truth, 15);
            std::uint64_t tp = 0, fp = 0, fn = 0;
            for (std::size_t c = 0; c < 15; ++c) {
                CHECK(fast[c].tp == ref[c].tp);
                CHECK(fast[c].fp == ref[c].fp);
                CHECK(fast[c].fn == ref[c].fn);
                tp += ref[c].tp;
                fp += ref[c].fp;
                fn += ref[c].fn;
            }
            const double expect = (tp + fp + fn) == 0 ? 1.0 : 2.0 * tp / double(2 * tp + fp + fn);
            CHECK(micro_f1(pred, truth) == expect);
            const auto pc = per_class_f1(pred, truth, lv);
            for (std::size_t c = 0; c < 15; ++c) {
                const auto& r = ref[c];
                if (r.tp + r.fp + r.fn == 0) {
                    CHECK(!pc.contains(c));
                } else {
                    CHECK(pc.at(c) == 2.0 * r.tp / double(2 * r.tp + r.fp + r.fn));
                }
            }
            // Permutation invariance.
            std::vector<std::size_t> order(patches);
            for (std::size_t i = 0; i < patches; ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), rng);
            std::vector<LabelSet> p2, t2;
            for (auto i : order) {
                p2.push_back(pred[i]);
                t2.push_back(truth[i]);
            }
            CHECK(micro_f1(p2, t2) == micro_f1(pred, truth));
        }
    }

    TEST_CASE("report counts re-derive the scalar and tau monotonicity holds") {
        std::mt19937_64 rng(22);
        std::vector<LabelDistribution> pred, truth;
        for (int i = 0; i < 300; ++i) {
            pred.push_back(LabelDistribution::validated(Level::Level2, test::random_simplex(15, rng)));
            truth.push_back(LabelDistribution::validated(Level::Level2, test::random_simplex(15, rng, true)));
        }
        double prev_recall = -1.0;
        std::uint64_t prev_predicted = 0;
        for (double tau : {0.5, 0.3, 0.2, 0.1, 0.05, 0.01}) {
            const auto r = evaluate_distributions(pred, truth, Level::Level2, {tau});
            const auto t = r.total();
            CHECK(std::abs(r.micro_f1 - 2.0 * t.tp / double(2 * t.tp + t.fp + t.fn)) < 1e-12);
            const double recall = t.tp / double(t.tp + t.fn);
            // Taus descend: predicted sets only grow, so recall never drops.
            CHECK(recall >= prev_recall);
            CHECK(t.tp + t.fp >= prev_predicted);
            prev_recall = recall;
            prev_predicted = t.tp + t.fp;
            const auto back = EvalReport::from_json(r.to_json());
            CHECK(back.micro_f1 == r.micro_f1);
            CHECK(back.counts.size() == r.counts.size());
        }
    }

    TEST_CASE("oracle predictions score 1.0 at every level") {
        std::mt19937_64 rng(23);
        std::vector<LabelDistribution> truth;
        for (int i = 0; i < 50; ++i) {
            std::vector<double> p(15, 0.0);
            p[rng() % 15] = 1.0;
            truth.push_back(LabelDistribution::validated(Level::Level2, p));
        }
        for (auto lv : {Level::Level1, Level::Level1_5, Level::Level2})
            CHECK(evaluate_distributions(truth, truth, lv, {0.1}).micro_f1 == 1.0);
    }

    TEST_CASE("coarse predictions cannot be scored at a finer level") {
        std::vector<LabelDistribution> pred{dist({1, 0, 0, 0, 0})};
        std::vector<double> hot(15, 0.0);
        hot[0] = 1;
        CHECK_THROWS_AS(evaluate_distributions(pred, {dist(hot)}, Level::Level2, {0.1}), tlc::Error);
    }
}
