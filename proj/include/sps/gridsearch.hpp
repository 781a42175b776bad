#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sps/forward_operators.hpp"
#include "sps/model.hpp"
#include "sps/solver.hpp"

namespace sps {

/// Logarithmic axis lo .. hi with `points` samples.
struct GridAxis {
    std::string name;
    double lo = 1.0;
    double hi = 1.0;
    int points = 5;
};

std::vector<double> log_grid(const GridAxis& axis);

struct GridEvaluation {
    double a = 0.0;
    double b = 0.0;
    double score = 0.0;
    int stage = 0;
};

struct GridSearchResult {
    double best_a = 0.0;
    double best_b = 0.0;
    double best_score = 0.0;
    std::vector<GridEvaluation> table; // every distinct evaluation, in order
};

using ScoreFunction = std::function<double(double a, double b)>;

/// Maximizes score over a log grid, then `stages - 1` times over a grid of the
/// same size spanning one previous spacing on each side of the incumbent.
/// Points already evaluated are looked up instead of recomputed.
GridSearchResult coarse_to_fine(const GridAxis& a, const GridAxis& b, const ScoreFunction& score, int stages = 2);

/// One validation item: the clean image and its (fixed) measurement.
struct ValidationItem {
    Image truth;
    Measurement y;
};

/// CPR tunes (beta, lambda); NCPR tunes (beta, tau multiplier). Score is mean PSNR.
double validation_score(const ModelParams& base, double a, double b, const ForwardOperator& h,
                        const std::vector<ValidationItem>& items, const SolverConfig& cfg);

/// Applies a tuned pair to a copy of the model.
ModelParams apply_tuning(const ModelParams& base, double a, double b);

std::string tuning_axis_name(RegularizerKind kind);

} // namespace sps
