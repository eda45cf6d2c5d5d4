#include "tlc/ontology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "tlc/error.hpp"

namespace tlc::ontology {

namespace {

#include "tlc_builtin_ontology.inc"

constexpr std::size_t kLevelCount = 3;

std::size_t rank(Level level) { return static_cast<std::size_t>(level); }

}  // namespace

std::string_view to_string(Level level) {
    switch (level) {
        case Level::Level1: return "LEVEL1";
        case Level::Level1_5: return "LEVEL1_5";
        case Level::Level2: return "LEVEL2";
    }
    throw Error("unknown ontology level");
}

Level parse_level(std::string_view name) {
    if (name == "LEVEL1") return Level::Level1;
    if (name == "LEVEL1_5") return Level::Level1_5;
    if (name == "LEVEL2") return Level::Level2;
    throw Error("unknown ontology level: " + std::string(name));
}

std::size_t expected_cardinality(Level level) {
    switch (level) {
        case Level::Level1: return 5;
        case Level::Level1_5: return 7;
        case Level::Level2: return 15;
    }
    throw Error("unknown ontology level");
}

bool strictly_finer(Level fine, Level coarse) { return rank(fine) > rank(coarse); }

OntologyLevel::OntologyLevel(Level level, std::vector<ClassInfo> classes)
    : level_(level), classes_(std::move(classes)) {
    if (classes_.size() != expected_cardinality(level_))
        throw Error(std::string(to_string(level_)) + " must have " +
                    std::to_string(expected_cardinality(level_)) + " classes, got " +
                    std::to_string(classes_.size()));
    std::set<std::string> seen;
    for (const auto& c : classes_)
        if (!seen.insert(c.code).second)
            throw Error("duplicate class code " + c.code + " in " + std::string(to_string(level_)));
}

std::optional<std::size_t> OntologyLevel::index_of(std::string_view code) const {
    for (std::size_t i = 0; i < classes_.size(); ++i)
        if (classes_[i].code == code) return i;
    return std::nullopt;
}

std::vector<std::string> OntologyLevel::names() const {
    std::vector<std::string> out;
    out.reserve(classes_.size());
    for (const auto& c : classes_) out.push_back(c.name);
    return out;
}

std::vector<std::vector<int>> AggregationMap::matrix() const {
    std::vector<std::vector<int>> m(target_cardinality, std::vector<int>(assignment.size(), 0));
    for (std::size_t s = 0; s < assignment.size(); ++s) m[assignment[s]][s] = 1;
    return m;
}

bool AggregationMap::is_partition() const {
    const auto m = matrix();
    for (std::size_t s = 0; s < assignment.size(); ++s) {
        int ones = 0;
        for (const auto& row : m) ones += row[s];
        if (ones != 1) return false;
    }
    for (const auto& row : m)
        if (std::accumulate(row.begin(), row.end(), 0) == 0) return false;
    return true;
}

Ontology Ontology::from_json(const nlohmann::json& doc) {
    Ontology o;
    o.version_ = doc.value("version", std::string("unversioned"));
    std::vector<std::optional<OntologyLevel>> slots(kLevelCount);
    for (const auto& lv : doc.at("levels")) {
        const Level level = parse_level(lv.at("level").get<std::string>());
        std::vector<ClassInfo> classes;
        for (const auto& c : lv.at("classes")) {
            ClassInfo info;
            info.code = c.at("code").get<std::string>();
            info.name = c.at("name").get<std::string>();
            if (c.contains("parent_code") && !c.at("parent_code").is_null())
                info.parent_code = c.at("parent_code").get<std::string>();
            info.color = c.value("color", std::string("#808080"));
            classes.push_back(std::move(info));
        }
        if (slots[rank(level)]) throw Error("level defined twice: " + std::string(to_string(level)));
        slots[rank(level)].emplace(level, std::move(classes));
    }
    for (std::size_t i = 0; i < kLevelCount; ++i) {
        if (!slots[i]) throw Error("ontology file is missing " +
                                   std::string(to_string(static_cast<Level>(i))));
        o.levels_.push_back(std::move(*slots[i]));
    }
    // Every finer class must name a parent one level up.
    for (std::size_t i = 1; i < kLevelCount; ++i)
        for (const auto& c : o.levels_[i].classes())
            if (!c.parent_code || !o.levels_[i - 1].index_of(*c.parent_code))
                throw Error("class " + c.code + " in " +
                            std::string(to_string(o.levels_[i].level())) +
                            " has no valid parent_code");
    for (std::size_t i = 0; i + 1 < kLevelCount; ++i) {
        const auto map = o.aggregation(static_cast<Level>(i + 1), static_cast<Level>(i));
        if (!map.is_partition())
            throw Error("aggregation " + std::string(to_string(map.source)) + " -> " +
                        std::string(to_string(map.target)) + " leaves a target class empty");
    }
    return o;
}

Ontology Ontology::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open ontology file: " + path.string());
    return from_json(nlohmann::json::parse(in));
}

const Ontology& Ontology::builtin() {
    static const Ontology instance = from_json(nlohmann::json::parse(kBuiltinOntologyJson));
    return instance;
}

const OntologyLevel& Ontology::level(Level level) const { return levels_.at(rank(level)); }

AggregationMap Ontology::aggregation(Level source, Level target) const {
    if (!strictly_finer(source, target))
        throw Error("aggregation requires a strictly coarser target: " +
                    std::string(to_string(source)) + " -> " + std::string(to_string(target)));
    const auto& src = level(source);
    AggregationMap map{source, target, {}, level(target).cardinality()};
    map.assignment.reserve(src.cardinality());
    for (std::size_t s = 0; s < src.cardinality(); ++s) {
        std::size_t idx = s;
        for (std::size_t r = rank(source); r > rank(target); --r) {
            const auto& here = levels_[r][idx];
            idx = *levels_[r - 1].index_of(*here.parent_code);
        }
        map.assignment.push_back(idx);
    }
    return map;
}

nlohmann::json Ontology::to_json() const {
    nlohmann::json doc;
    doc["version"] = version_;
    doc["levels"] = nlohmann::json::array();
    for (const auto& lv : levels_) {
        nlohmann::json classes = nlohmann::json::array();
        for (const auto& c : lv.classes()) {
            nlohmann::json jc{{"code", c.code}, {"name", c.name}, {"color", c.color}};
            jc["parent_code"] = c.parent_code ? nlohmann::json(*c.parent_code) : nlohmann::json();
            classes.push_back(std::move(jc));
        }
        doc["levels"].push_back({{"level", to_string(lv.level())}, {"classes", classes}});
    }
    return doc;
}

OntologyLevel build_level(Level name) { return Ontology::builtin().level(name); }

AggregationMap build_aggregation(const OntologyLevel& source, const OntologyLevel& target) {
    return Ontology::builtin().aggregation(source.level(), target.level());
}

LabelDistribution LabelDistribution::validated(Level level, std::vector<double> probs) {
    if (probs.size() != expected_cardinality(level))
        throw Error("label has " + std::to_string(probs.size()) + " entries, " +
                    std::string(to_string(level)) + " needs " +
                    std::to_string(expected_cardinality(level)));
    double sum = 0.0;
    for (double p : probs) {
        if (!std::isfinite(p) || p < 0.0) throw Error("label not a distribution: negative or non-finite entry");
        sum += p;
    }
    if (std::abs(sum - 1.0) > kRenormalizeTolerance)
        throw Error("label not a distribution: entries sum to " + std::to_string(sum));
    if (sum != 1.0)
        for (double& p : probs) p /= sum;
    return LabelDistribution(level, std::move(probs));
}

LabelDistribution LabelDistribution::trusted(Level level, std::vector<double> probs) {
    return LabelDistribution(level, std::move(probs));
}

std::size_t LabelDistribution::argmax() const {
    return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

std::vector<double> aggregate_probs(std::span<const double> probs, const AggregationMap& map) {
    if (probs.size() != map.assignment.size())
        throw Error("distribution length does not match aggregation source");
    std::vector<double> out(map.target_cardinality, 0.0);
    for (std::size_t s = 0; s < probs.size(); ++s) out[map.assignment[s]] += probs[s];
    return out;
}

LabelDistribution aggregate_distribution(const LabelDistribution& d, const AggregationMap& map) {
    if (d.level() != map.source)
        throw Error("distribution level " + std::string(to_string(d.level())) +
                    " does not match aggregation source " + std::string(to_string(map.source)));
    return LabelDistribution::trusted(map.target, aggregate_probs(d.probs(), map));
}

}  // namespace tlc::ontology
