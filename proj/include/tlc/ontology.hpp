#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace tlc::ontology {

// Ordered coarse to fine.
enum class Level { Level1 = 0, Level1_5 = 1, Level2 = 2 };

std::string_view to_string(Level level);
Level parse_level(std::string_view name);
std::size_t expected_cardinality(Level level);

// True when `fine` sits strictly below `coarse` in the hierarchy.
bool strictly_finer(Level fine, Level coarse);

struct ClassInfo {
    std::string code;
    std::string name;
    std::optional<std::string> parent_code;
    std::string color;  // "#RRGGBB"
};

class OntologyLevel {
public:
    OntologyLevel(Level level, std::vector<ClassInfo> classes);

    Level level() const noexcept { return level_; }
    std::size_t cardinality() const noexcept { return classes_.size(); }
    const std::vector<ClassInfo>& classes() const noexcept { return classes_; }
    const ClassInfo& operator[](std::size_t i) const { return classes_.at(i); }

    std::optional<std::size_t> index_of(std::string_view code) const;
    std::vector<std::string> names() const;

private:
    Level level_;
    std::vector<ClassInfo> classes_;
};

// Partition of the source classes onto the target classes.
struct AggregationMap {
    Level source;
    Level target;
    std::vector<std::size_t> assignment;  // source index -> target index
    std::size_t target_cardinality = 0;

    // Dense 0/1 form, rows = target classes, columns = source classes.
    std::vector<std::vector<int>> matrix() const;
    bool is_partition() const;
};

// The three-level class hierarchy. Immutable once constructed.
class Ontology {
public:
    static Ontology from_json(const nlohmann::json& doc);
    static Ontology load(const std::filesystem::path& path);
    // Compiled-in copy of data/ontology/clc_levels.json.
    static const Ontology& builtin();

    const std::string& version() const noexcept { return version_; }
    const OntologyLevel& level(Level level) const;
    AggregationMap aggregation(Level source, Level target) const;

    nlohmann::json to_json() const;

private:
    std::string version_;
    std::vector<OntologyLevel> levels_;  // indexed by Level
};

OntologyLevel build_level(Level name);
AggregationMap build_aggregation(const OntologyLevel& source, const OntologyLevel& target);

// Probability vector over the classes of one level.
class LabelDistribution {
public:
    // Sums within 1e-6 of one are renormalised; anything else is rejected
    // with "label not a distribution".
    static LabelDistribution validated(Level level, std::vector<double> probs);
    // Skips validation. Caller guarantees the simplex invariant.
    static LabelDistribution trusted(Level level, std::vector<double> probs);

    Level level() const noexcept { return level_; }
    const std::vector<double>& probs() const noexcept { return probs_; }
    std::size_t size() const noexcept { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }
    std::size_t argmax() const;

private:
    LabelDistribution(Level level, std::vector<double> probs)
        : level_(level), probs_(std::move(probs)) {}

    Level level_;
    std::vector<double> probs_;
};

inline constexpr double kRenormalizeTolerance = 1e-6;

LabelDistribution aggregate_distribution(const LabelDistribution& d, const AggregationMap& map);

// Same summation on a raw vector, used where intermediate sums need not be
// distributions (e.g. model outputs already in the simplex).
std::vector<double> aggregate_probs(std::span<const double> probs, const AggregationMap& map);

}  // namespace tlc::ontology
