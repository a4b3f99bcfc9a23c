#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mlsal/data.hpp"
#include "mlsal/metrics.hpp"
#include "mlsal/trainer.hpp"

namespace mlsal {

struct SaliencyEval {
    MetricReport report;
    std::vector<Tensor> predictions;
};

inline SaliencyEval evaluate_saliency(const Model& model, const std::vector<SampleRecord>& records,
                                      int n_thresholds = kDefaultThresholds) {
    SaliencyEval e;
    std::vector<Tensor> gts;
    for (const auto& r : records) {
        e.predictions.push_back(predict(model, r.image).saliency);
        gts.push_back(r.target);
    }
    e.report.mean_f_beta = mean_f_measure(e.predictions, gts);
    e.report.mae = mean_mae(e.predictions, gts);
    e.report.s_measure = mean_s_measure(e.predictions, gts);
    e.report.pr = pr_curve(e.predictions, gts, n_thresholds);
    return e;
}

struct EdgeEval {
    EdgeScores scores;
    PRCurve pr;
    std::vector<Tensor> predictions;
};

inline EdgeEval evaluate_edges(const Model& model, const std::vector<SampleRecord>& records,
                               int n_thresholds = kDefaultThresholds) {
    if (!model.edges_enabled()) throw ConfigError("edge evaluation needs a model with edge modules");
    EdgeEval e;
    std::vector<Tensor> gts;
    for (const auto& r : records) {
        e.predictions.push_back(*predict(model, r.image).edge);
        gts.push_back(r.target);
    }
    e.scores = edge_ods_ois(e.predictions, gts, 1, n_thresholds);
    e.pr = pr_curve(e.predictions, gts, n_thresholds);
    return e;
}

inline std::vector<std::pair<std::string, double>> report_entries(const MetricReport& r) {
    return {{"f_beta", r.mean_f_beta}, {"mae", r.mae}, {"s_measure", r.s_measure}};
}

inline std::vector<std::pair<std::string, double>> report_entries(const EdgeScores& s) {
    return {{"ods", s.ods}, {"ois", s.ois}};
}

}  // namespace mlsal
