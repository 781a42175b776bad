#include "sps/gridsearch.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "sps/metrics.hpp"
#include "sps/parallel.hpp"

namespace sps {

std::vector<double> log_grid(const GridAxis& axis) {
    if (!(axis.lo > 0.0) || !(axis.hi >= axis.lo) || axis.points < 1) {
        throw InputError("grid axis '" + axis.name + "' needs 0 < lo <= hi and points >= 1");
    }
    if (axis.points == 1 || axis.lo == axis.hi) {
        return {axis.lo};
    }
    std::vector<double> v(axis.points);
    const double l0 = std::log(axis.lo);
    const double l1 = std::log(axis.hi);
    for (int i = 0; i < axis.points; ++i) {
        v[i] = std::exp(l0 + (l1 - l0) * i / (axis.points - 1));
    }
    v.front() = axis.lo;
    v.back() = axis.hi;
    return v;
}

namespace {

double log_spacing(const GridAxis& axis) {
    if (axis.points <= 1 || axis.lo == axis.hi) {
        return 0.0;
    }
    return (std::log(axis.hi) - std::log(axis.lo)) / (axis.points - 1);
}

} // namespace

GridSearchResult coarse_to_fine(const GridAxis& a, const GridAxis& b, const ScoreFunction& score, int stages) {
    if (stages < 1) {
        throw InputError("grid search needs at least one stage");
    }
    GridSearchResult out;
    out.best_score = -std::numeric_limits<double>::infinity();
    std::map<std::pair<double, double>, double> cache;
    GridAxis ax = a;
    GridAxis bx = b;
    for (int stage = 0; stage < stages; ++stage) {
        const auto av = log_grid(ax);
        const auto bv = log_grid(bx);
        std::vector<std::pair<double, double>> todo;
        for (const double x : av) {
            for (const double y : bv) {
                if (!cache.count({x, y})) {
                    todo.emplace_back(x, y);
                    cache[{x, y}] = 0.0;
                }
            }
        }
        std::vector<double> scores(todo.size());
        parallel_for(todo.size(), [&](std::size_t i) { scores[i] = score(todo[i].first, todo[i].second); });
        for (std::size_t i = 0; i < todo.size(); ++i) {
            cache[todo[i]] = scores[i];
            out.table.push_back({todo[i].first, todo[i].second, scores[i], stage});
        }
        for (const double x : av) {
            for (const double y : bv) {
                const double s = cache[{x, y}];
                if (s > out.best_score) {
                    out.best_score = s;
                    out.best_a = x;
                    out.best_b = y;
                }
            }
        }
        const double sa = log_spacing(ax);
        const double sb = log_spacing(bx);
        ax.lo = out.best_a * std::exp(-sa);
        ax.hi = out.best_a * std::exp(sa);
        bx.lo = out.best_b * std::exp(-sb);
        bx.hi = out.best_b * std::exp(sb);
    }
    return out;
}

ModelParams apply_tuning(const ModelParams& base, double a, double b) {
    ModelParams p = base;
    p.set_beta(a);
    if (p.kind == RegularizerKind::CPR) {
        p.lambda = b;
    } else {
        p.tau_multiplier = b;
    }
    return p;
}

std::string tuning_axis_name(RegularizerKind kind) { return kind == RegularizerKind::CPR ? "lambda" : "tau_scale"; }

double validation_score(const ModelParams& base, double a, double b, const ForwardOperator& h,
                        const std::vector<ValidationItem>& items, const SolverConfig& cfg) {
    if (items.empty()) {
        throw InputError("validation set is empty");
    }
    const ReconstructionModel model = apply_tuning(base, a, b).model();
    double total = 0.0;
    for (const auto& item : items) {
        double value = -std::numeric_limits<double>::infinity();
        try {
            const InnerProblem problem(model, h, item.y);
            const SolveResult r = solve_inner(problem, cfg);
            value = psnr_for_table(psnr(r.state.x, item.truth));
        } catch (const DivergenceError&) {
            // diverging settings simply lose
        }
        total += value;
    }
    return total / static_cast<double>(items.size());
}

} // namespace sps
