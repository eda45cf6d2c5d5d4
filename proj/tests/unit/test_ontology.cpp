#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "tlc/error.hpp"
#include "tlc/ontology.hpp"

using namespace tlc::ontology;

namespace {

// Parent by code convention alone: "3.1" -> "3" at LEVEL1; at LEVEL1_5 only
// group 3 keeps its second digit.
std::string l1_code(const std::string& l2) { return l2.substr(0, l2.find('.')); }
std::string l15_code(const std::string& l2) { return l1_code(l2) == "3" ? l2 : l1_code(l2); }

std::vector<double> oracle_aggregate(const std::vector<double>& p, Level target) {
    const auto& o = Ontology::builtin();
    const auto& src = o.level(Level::Level2);
    const auto& dst = o.level(target);
    std::vector<double> out(dst.cardinality(), 0.0);
    for (std::size_t i = 0; i < src.cardinality(); ++i) {
        const std::string code = target == Level::Level1 ? l1_code(src[i].code) : l15_code(src[i].code);
        out[*dst.index_of(code)] += p[i];
    }
    return out;
}

}  // namespace

TEST_SUITE("ontology") {
    TEST_CASE("levels have the published cardinalities") {
        const auto& o = Ontology::builtin();
        CHECK(o.level(Level::Level1).cardinality() == 5);
        CHECK(o.level(Level::Level1_5).cardinality() == 7);
        CHECK(o.level(Level::Level2).cardinality() == 15);
        CHECK(expected_cardinality(Level::Level1_5) == 7);
    }

    TEST_CASE("builtin copy matches the data file") {
        std::ifstream in(TLC_ONTOLOGY_JSON);
        const auto from_file = Ontology::from_json(nlohmann::json::parse(in));
        CHECK(from_file.to_json() == Ontology::builtin().to_json());
    }

    TEST_CASE("level names parse and round-trip") {
        for (auto lv : {Level::Level1, Level::Level1_5, Level::Level2}) CHECK(parse_level(to_string(lv)) == lv);
        CHECK_THROWS_AS(parse_level("LEVEL3"), tlc::Error);
    }

    TEST_CASE("every aggregation map is a partition") {
        const auto& o = Ontology::builtin();
        const std::pair<Level, Level> pairs[] = {{Level::Level2, Level::Level1_5},
                                                 {Level::Level2, Level::Level1},
                                                 {Level::Level1_5, Level::Level1}};
        for (const auto& [s, t] : pairs) {
            const auto map = o.aggregation(s, t);
            CHECK(map.is_partition());
            const auto m = map.matrix();
            for (std::size_t col = 0; col < m.front().size(); ++col) {
                int ones = 0;
                for (const auto& row : m) ones += row[col];
                CHECK(ones == 1);
            }
        }
    }

    TEST_CASE("aggregation to a level that is not coarser is rejected") {
        CHECK_THROWS_AS(Ontology::builtin().aggregation(Level::Level1, Level::Level2), tlc::Error);
        CHECK_THROWS_AS(Ontology::builtin().aggregation(Level::Level2, Level::Level2), tlc::Error);
    }

    TEST_CASE("aggregation matches the code-prefix oracle, conserves mass and composes") {
        const auto& o = Ontology::builtin();
        const auto to15 = o.aggregation(Level::Level2, Level::Level1_5);
        const auto to1 = o.aggregation(Level::Level2, Level::Level1);
        const auto via = o.aggregation(Level::Level1_5, Level::Level1);
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        for (int trial = 0; trial < 1000; ++trial) {
            const auto p = test::random_simplex(15, rng, trial % 2 == 1);
            const auto d = LabelDistribution::validated(Level::Level2, p);
            const auto a15 = aggregate_distribution(d, to15);
            const auto a1 = aggregate_distribution(d, to1);
            const auto o15 = oracle_aggregate(p, Level::Level1_5);
            const auto o1 = oracle_aggregate(p, Level::Level1);
            double s15 = 0, s1 = 0;
            for (std::size_t i = 0; i < o15.size(); ++i) {
                CHECK(a15[i] == doctest::Approx(o15[i]).epsilon(1e-12));
                s15 += a15[i];
            }
            for (std::size_t i = 0; i < o1.size(); ++i) {
                CHECK(a1[i] == doctest::Approx(o1[i]).epsilon(1e-12));
                s1 += a1[i];
            }
            CHECK(std::abs(s15 - 1.0) < 1e-12);
            CHECK(std::abs(s1 - 1.0) < 1e-12);
            const auto composed = aggregate_distribution(a15, via);
            for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(composed[i] - a1[i]) < 1e-12);

            // Linearity on raw vectors: A(a x + b y) = a A(x) + b A(y).
            const auto q = test::random_simplex(15, rng);
            const double alpha = u(rng), beta = u(rng);
            std::vector<double> mix(15);
            for (std::size_t i = 0; i < 15; ++i) mix[i] = alpha * p[i] + beta * q[i];
            const auto lhs = aggregate_probs(mix, to1);
            const auto ap = aggregate_probs(p, to1);
            const auto aq = aggregate_probs(q, to1);
            for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(lhs[i] - (alpha * ap[i] + beta * aq[i])) < 1e-12);
        }
    }

    TEST_CASE("mixed agricultural cell aggregates to one group") {
        // 40% arable, 50% pastures, 10% forest.
        std::vector<double> p(15, 0.0);
        p[4] = 0.4;
        p[6] = 0.5;
        p[8] = 0.1;
        const auto a = aggregate_distribution(LabelDistribution::validated(Level::Level2, p),
                                              Ontology::builtin().aggregation(Level::Level2, Level::Level1));
        CHECK(a[1] == doctest::Approx(0.9));
        CHECK(a[2] == doctest::Approx(0.1));
    }

    TEST_CASE("label validation") {
        CHECK_THROWS_WITH_AS(LabelDistribution::validated(Level::Level1, {0.5, 0.5, 0.5, 0.0, 0.0}),
                             doctest::Contains("label not a distribution"), tlc::Error);
        CHECK_THROWS_AS(LabelDistribution::validated(Level::Level1, {1.0, 0.0}), tlc::Error);
        CHECK_THROWS_AS(LabelDistribution::validated(Level::Level1, {1.2, -0.2, 0.0, 0.0, 0.0}), tlc::Error);
        // Within tolerance: renormalised.
        const auto d = LabelDistribution::validated(Level::Level1, {0.5, 0.5 + 5e-7, 0.0, 0.0, 0.0});
        double s = 0.0;
        for (double x : d.probs()) s += x;
        CHECK(std::abs(s - 1.0) < 1e-15);
        CHECK(d.argmax() == 1);
    }

    TEST_CASE("aggregating a distribution of the wrong level is rejected") {
        const auto d = LabelDistribution::validated(Level::Level1_5, std::vector<double>{1, 0, 0, 0, 0, 0, 0});
        CHECK_THROWS_AS(aggregate_distribution(d, Ontology::builtin().aggregation(Level::Level2, Level::Level1)),
                        tlc::Error);
    }

    TEST_CASE("malformed ontology documents are rejected") {
        auto doc = Ontology::builtin().to_json();
        auto broken = doc;
        broken["levels"][0]["classes"].erase(0);
        CHECK_THROWS_AS(Ontology::from_json(broken), tlc::Error);
        auto orphan = doc;
        orphan["levels"][2]["classes"][0]["parent_code"] = "9";
        CHECK_THROWS_AS(Ontology::from_json(orphan), tlc::Error);
    }
}
