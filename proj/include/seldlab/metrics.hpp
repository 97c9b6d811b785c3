#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

namespace seldlab::evalkit {

// One localized event instance inside a 100 ms frame.
struct Event {
    int class_idx = 0;
    std::array<double, 3> doa{1, 0, 0};  // unit vector
};

// frame index (100 ms) -> events
using FrameEvents = std::map<int, std::vector<Event>>;

struct MetricScores {
    double er20 = 0.0;    // location-dependent error rate (segment S/D/I)
    double f20 = 0.0;     // location-dependent F-score, class macro
    double le_cd = 0.0;   // class-dependent localization error, degrees, class macro
    double lr_cd = 0.0;   // class-dependent localization recall, class macro
    double e_seld = 0.0;

    // per-class rows (class, f20, le_cd, lr_cd), only classes that appear
    std::vector<std::array<double, 4>> per_class;
};

// E_SELD = 1/4 [ER + (1-F) + LE/180 + (1-LR)]
double e_seld(double er, double f, double le_deg, double lr);

// Minimum-cost complete assignment (Hungarian); returns column index per row
// or -1 for unassigned rows. cost is row-major n_rows x n_cols.
std::vector<int> hungarian(const std::vector<double>& cost, int n_rows, int n_cols);

// Joint localization/detection scores for one room. Frame-level class-wise
// Hungarian matching on angular distance; 20 deg spatial threshold for the
// location-dependent counts; 1 s segments for the S/D/I error-rate accounting.
MetricScores match_and_score(const FrameEvents& pred, const FrameEvents& ref, int num_classes);

// Same scoring with an exhaustive assignment search instead of the Hungarian
// solver (test oracle; sizes per (frame, class) must stay small).
MetricScores match_and_score_bruteforce(const FrameEvents& pred, const FrameEvents& ref,
                                        int num_classes);

// Macro-average across rooms (e_seld averages linearly, so mean of rooms'
// e_seld equals e_seld of the mean components).
MetricScores macro_average(const std::vector<MetricScores>& rooms);

// rows = query environments, cols = support environments
std::vector<std::vector<double>> similarity_map(const std::vector<std::vector<float>>& support_reps,
                                                const std::vector<std::vector<float>>& query_reps);

struct AttenuationReport {
    std::vector<std::string> env_ids;
    std::vector<std::vector<float>> lambda;   // [env][layer]
    std::vector<double> layer_std;            // across environments
    std::vector<bool> environment_insensitive;  // std < 1e-3
};

AttenuationReport make_attenuation_report(const std::vector<std::string>& env_ids,
                                          const std::vector<std::vector<float>>& lambda_per_env);

}  // namespace seldlab::evalkit
