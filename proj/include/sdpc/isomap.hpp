#pragma once

#include "sdpc/common.hpp"

#include <cstdint>
#include <string>

namespace sdpc {

/// Fitted Isomap state. Points are stored one per column (D x n_d), the same
/// orientation as Dataset::flat().
struct EmbeddingModel {
    Mat points;
    int k_neighbors = 0;
    int d_embed = 0;
    Mat geodesic;           // n_d x n_d
    Vec eigvals;            // descending, positive only
    Mat eigvecs;            // n_d x d_embed, unit columns
    Mat embedding;          // n_d x d_embed
    Vec mean_sq_geodesic_rows;
    double max_edge = 0.0;  // longest edge of the neighborhood graph
    std::uint64_t data_hash = 0;

    Index size() const { return points.cols(); }
    Index dim() const { return points.rows(); }
};

struct FitOptions {
    /// Use the dense symmetric eigensolver up to this many points, Lanczos above.
    Index dense_eigen_limit = 1500;
};

/// Symmetric kNN graph, all-pairs Dijkstra, classical MDS.
/// Throws NumericalError naming component sizes when the graph is disconnected.
EmbeddingModel fit_isomap(const Mat& points, int k_neighbors, int d_embed, const FitOptions& opts = {});

struct EmbedResult {
    Vec coords;
    /// False when no training point lies within link_tolerance * max_edge;
    /// coords are still computed from the k nearest points.
    bool linked = true;
};

/// Out-of-sample embedding by linking x into the graph through its k nearest
/// training points and applying the Nystrom formula.
EmbedResult embed(const EmbeddingModel& model, const Vec& x, double link_tolerance = 2.0);

/// 1 - R^2 between geodesic and embedded pairwise distances.
double reconstruction_error(const EmbeddingModel& model);

/// Re-runs MDS on a fitted graph with a new embedding dimension.
EmbeddingModel refit_dimension(const EmbeddingModel& model, int d_embed, const FitOptions& opts = {});

/// Top-k eigenpairs (largest algebraic) of a symmetric matrix by Lanczos with
/// full reorthogonalization. Exposed for testing.
void top_eigenpairs(const Mat& sym, int k, Vec& values, Mat& vectors, const FitOptions& opts = {});

/// Versioned binary cache keyed by data hash and (k, d_embed).
void save_embedding(const EmbeddingModel& model, const std::string& path);
EmbeddingModel load_embedding(const std::string& path);
/// Cache file name for a dataset hash and hyperparameters.
std::string embedding_cache_name(std::uint64_t data_hash, int k_neighbors, int d_embed);

std::uint64_t hash_matrix(const Mat& m);

}  // namespace sdpc
