#pragma once

#include "sdpc/isomap.hpp"
#include "sdpc/trajectory_data.hpp"

#include <random>
#include <vector>

namespace sdpc {

enum class SelectionKind { norm, manifold, random, full };

const char* to_string(SelectionKind kind);
SelectionKind selection_kind_from_string(const std::string& name);

struct SelectionMethod {
    SelectionKind kind = SelectionKind::norm;
    /// 1, 2, or 0 for the infinity norm.
    int norm_order = 1;
    /// Per-dimension weights applied before the distance; empty means unweighted.
    Vec feature_weights;
    std::uint64_t seed = 0;
};

struct SelectionResult {
    std::vector<Index> indices;
    std::vector<double> distances;
    /// n_cols exceeded the dataset size and was clamped.
    bool clamped = false;
    /// Manifold selection could not link the query and used norm selection.
    bool fallback = false;
};

/// Per-dimension weights 1/std of each input/output channel, laid out like a
/// flattened trajectory.
Vec standardizing_weights(const Dataset& dataset);

/// The n_cols nearest windows to `query` (a flattened trajectory), ascending
/// distance, ties broken by index.
SelectionResult select_norm(const Dataset& dataset, const Vec& query, Index n_cols, const SelectionMethod& method);

/// Uniform sample without replacement.
SelectionResult select_random(Index n_d, Index n_cols, std::mt19937_64& rng);
SelectionResult select_random(Index n_d, Index n_cols, std::uint64_t seed);

/// Nearest windows to the embedded query in embedding space. Falls back to
/// select_norm with `fallback_method` when the query cannot be linked.
///
/// When `fallback_method` carries feature weights the model is expected to be
/// fitted on the weighted flattenings, and the query is weighted the same way.
SelectionResult select_manifold(const Dataset& dataset, const EmbeddingModel& model, const Vec& query, Index n_cols,
                                const SelectionMethod& fallback_method, double link_tolerance = 2.0);

/// Nearest training points to an already embedded query.
SelectionResult select_embedded(const EmbeddingModel& model, const Vec& query_embedded, Index n_cols);

enum class Metric { l1, l2, linf };

struct Contrast {
    double delta = 0.0;
    bool infinite = false;
};

/// (d_max - d_min) / d_min over the columns of `points`.
Contrast relative_contrast(const Mat& points, const Vec& query, Metric metric);

/// Distances from query to every column of points under the metric.
Vec distances_to(const Mat& points, const Vec& query, Metric metric, const Vec& weights = {});

}  // namespace sdpc
