#include "sdpc/data_selection.hpp"

#include <algorithm>
#include <numeric>

namespace sdpc {

namespace {

SelectionResult nearest(const Vec& dist, Index n_cols)
{
    const Index n = dist.size();
    SelectionResult res;
    if (n_cols < 1)
        throw ConfigError("selection: n_cols must be >= 1");
    if (n_cols > n) {
        res.clamped = true;
        n_cols = n;
    }
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + n_cols, order.end(),
                      [&](Index a, Index b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
    order.resize(static_cast<std::size_t>(n_cols));
    res.distances.reserve(order.size());
    for (Index i : order)
        res.distances.push_back(dist[i]);
    res.indices = std::move(order);
    return res;
}

Metric metric_for(int norm_order)
{
    switch (norm_order) {
    case 1:
        return Metric::l1;
    case 2:
        return Metric::l2;
    case 0:
        return Metric::linf;
    default:
        throw ConfigError("selection: norm_order must be 1, 2 or 0 (infinity)");
    }
}

}  // namespace

const char* to_string(SelectionKind kind)
{
    switch (kind) {
    case SelectionKind::norm:
        return "norm";
    case SelectionKind::manifold:
        return "manifold";
    case SelectionKind::random:
        return "random";
    case SelectionKind::full:
        return "full";
    }
    return "?";
}

SelectionKind selection_kind_from_string(const std::string& name)
{
    for (auto k : {SelectionKind::norm, SelectionKind::manifold, SelectionKind::random, SelectionKind::full})
        if (name == to_string(k))
            return k;
    throw ConfigError("unknown selection method '" + name + "'");
}

Vec standardizing_weights(const Dataset& dataset)
{
    const auto& lay = dataset.layout();
    const Vec scale = dataset.channel_scale();
    Vec w(lay.dim());
    for (int t = 0; t < lay.length(); ++t) {
        for (int c = 0; c < lay.m; ++c)
            w[t * lay.m + c] = 1.0 / scale[c];
        for (int c = 0; c < lay.p; ++c)
            w[lay.y_past_offset() + t * lay.p + c] = 1.0 / scale[lay.m + c];
    }
    return w;
}

Vec distances_to(const Mat& points, const Vec& query, Metric metric, const Vec& weights)
{
    require_dims(query.size() == points.rows(), "selection: query dimension does not match the dataset");
    const bool weighted = weights.size() > 0;
    require_dims(!weighted || weights.size() == points.rows(), "selection: feature weight length mismatch");
    const Index n = points.cols();
    Vec out(n);
    const Vec w = weighted ? weights : Vec::Ones(points.rows());
    const Vec qw = query.cwiseProduct(w);
    for (Index i = 0; i < n; ++i) {
        const auto d = (points.col(i).cwiseProduct(w) - qw).array();
        switch (metric) {
        case Metric::l1:
            out[i] = d.abs().sum();
            break;
        case Metric::l2:
            out[i] = std::sqrt(d.square().sum());
            break;
        case Metric::linf:
            out[i] = d.abs().maxCoeff();
            break;
        }
    }
    return out;
}

SelectionResult select_norm(const Dataset& dataset, const Vec& query, Index n_cols, const SelectionMethod& method)
{
    if (method.feature_weights.size() > 0 && (method.feature_weights.array() <= 0.0).any())
        throw ConfigError("selection: feature weights must be positive");
    return nearest(distances_to(dataset.flat(), query, metric_for(method.norm_order), method.feature_weights), n_cols);
}

SelectionResult select_random(Index n_d, Index n_cols, std::mt19937_64& rng)
{
    if (n_cols < 1)
        throw ConfigError("selection: n_cols must be >= 1");
    SelectionResult res;
    if (n_cols > n_d) {
        res.clamped = true;
        n_cols = n_d;
    }
    std::vector<Index> idx(static_cast<std::size_t>(n_d));
    std::iota(idx.begin(), idx.end(), Index{0});
    // Partial Fisher-Yates.
    for (Index i = 0; i < n_cols; ++i) {
        std::uniform_int_distribution<Index> pick(i, n_d - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    idx.resize(static_cast<std::size_t>(n_cols));
    res.distances.assign(idx.size(), 0.0);
    res.indices = std::move(idx);
    return res;
}

SelectionResult select_random(Index n_d, Index n_cols, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return select_random(n_d, n_cols, rng);
}

SelectionResult select_embedded(const EmbeddingModel& model, const Vec& query_embedded, Index n_cols)
{
    return nearest(distances_to(model.embedding.transpose(), query_embedded, Metric::l2), n_cols);
}

SelectionResult select_manifold(const Dataset& dataset, const EmbeddingModel& model, const Vec& query, Index n_cols,
                                const SelectionMethod& fallback_method, double link_tolerance)
{
    require_dims(model.size() == dataset.size() && model.dim() == dataset.dim(),
                 "select_manifold: embedding model was fitted on different data");
    const bool weighted = fallback_method.feature_weights.size() > 0;
    require_dims(!weighted || fallback_method.feature_weights.size() == query.size(),
                 "select_manifold: feature weight length mismatch");
    const EmbedResult e =
        embed(model, weighted ? Vec(query.cwiseProduct(fallback_method.feature_weights)) : query, link_tolerance);
    if (!e.linked) {
        SelectionResult res = select_norm(dataset, query, n_cols, fallback_method);
        res.fallback = true;
        return res;
    }
    return select_embedded(model, e.coords, n_cols);
}

Contrast relative_contrast(const Mat& points, const Vec& query, Metric metric)
{
    if (points.cols() < 2)
        throw DimensionError("relative_contrast: need at least two points");
    const Vec d = distances_to(points, query, metric);
    const double dmin = d.minCoeff(), dmax = d.maxCoeff();
    Contrast c;
    if (dmin == 0.0) {
        c.infinite = true;
        c.delta = kInf;
        return c;
    }
    c.delta = (dmax - dmin) / dmin;
    return c;
}

}  // namespace sdpc
