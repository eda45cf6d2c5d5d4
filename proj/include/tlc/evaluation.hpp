#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tlc/data.hpp"
#include "tlc/models.hpp"
#include "tlc/ontology.hpp"

namespace tlc::evaluation {

// Presence rule: a predicted class is present when its probability is at
// least tau; a ground-truth class is present when its share is non-zero.
struct ThresholdRule {
    double tau = 0.1;
    void validate() const;
};

using LabelSet = std::vector<std::size_t>;  // ascending class indices

LabelSet predicted_labels(const ontology::LabelDistribution& d, const ThresholdRule& rule);
LabelSet true_labels(const ontology::LabelDistribution& d);

struct Counts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    double f1() const;  // 2TP / (2TP + FP + FN), 1.0 when all zero
    bool empty() const { return tp + fp + fn == 0; }
    Counts& operator+=(const Counts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

std::vector<Counts> confusion_counts(const std::vector<LabelSet>& predicted,
                                     const std::vector<LabelSet>& truth, std::size_t n_classes);

// Degenerate all-empty input scores 1.0 and emits a warning.
double micro_f1(const std::vector<LabelSet>& predicted, const std::vector<LabelSet>& truth);

// Classes with TP + FP + FN == 0 are absent from the map.
std::map<std::size_t, double> per_class_f1(const std::vector<LabelSet>& predicted,
                                           const std::vector<LabelSet>& truth,
                                           const ontology::OntologyLevel& level);

struct EvalReport {
    ontology::Level level = ontology::Level::Level2;
    double tau = 0.1;
    double micro_f1 = 0.0;
    std::map<std::string, double> per_class_f1;  // class name -> F1
    std::vector<Counts> counts;                  // per class, ontology order
    std::size_t n_patches = 0;

    Counts total() const;
    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& doc);
};

// Scores model-level predictions against LEVEL2 ground truth at `level`,
// aggregating both sides when `level` is coarser than the prediction level.
EvalReport evaluate_distributions(const std::vector<ontology::LabelDistribution>& predicted,
                                  const std::vector<ontology::LabelDistribution>& truth_level2,
                                  ontology::Level level, const ThresholdRule& rule);

std::vector<ontology::LabelDistribution> predict_records(const models::Model& model,
                                                         const std::vector<data::PatchRecord>& records,
                                                         data::PatchReader& reader);

EvalReport evaluate_model(const models::Model& model, const std::vector<data::PatchRecord>& records,
                          ontology::Level level, const ThresholdRule& rule);

// Micro-F1 for each tau.
std::vector<std::pair<double, double>> tau_sweep(
    const std::vector<ontology::LabelDistribution>& predicted,
    const std::vector<ontology::LabelDistribution>& truth_level2, ontology::Level level,
    std::span<const double> taus);

}  // namespace tlc::evaluation
