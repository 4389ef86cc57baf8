#include "sdpc/isomap.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <queue>
#include <random>
#include <sstream>

namespace sdpc {

namespace {

constexpr char kMagic[8] = {'S', 'D', 'P', 'C', 'E', 'M', 'B', '\0'};
constexpr std::uint32_t kCacheVersion = 1;

/// Compressed adjacency of the symmetric kNN graph.
struct Graph {
    std::vector<Index> start;  // n + 1
    std::vector<Index> target;
    std::vector<double> weight;
    double max_edge = 0.0;
};

Graph knn_graph(const Mat& pts, int k)
{
    const Index n = pts.cols();
    const Vec sq = pts.colwise().squaredNorm().transpose();
    std::vector<std::vector<std::pair<Index, double>>> adj(static_cast<std::size_t>(n));

    const Index block = 256;
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index b0 = 0; b0 < n; b0 += block) {
        const Index bs = std::min(block, n - b0);
        // Squared distances from the block's points to every point.
        Mat d2 = (-2.0 * pts.transpose() * pts.middleCols(b0, bs)).eval();
        d2.colwise() += sq;
        for (Index c = 0; c < bs; ++c) {
            const Index i = b0 + c;
            d2(i, c) = kInf;
            std::iota(order.begin(), order.end(), Index{0});
            const auto col = d2.col(c);
            std::partial_sort(order.begin(), order.begin() + k, order.end(),
                              [&](Index a, Index b) { return col[a] < col[b] || (col[a] == col[b] && a < b); });
            for (int r = 0; r < k; ++r) {
                const Index j = order[static_cast<std::size_t>(r)];
                const double w = (pts.col(i) - pts.col(j)).norm();
                adj[static_cast<std::size_t>(i)].emplace_back(j, w);
                adj[static_cast<std::size_t>(j)].emplace_back(i, w);
            }
        }
    }

    Graph g;
    g.start.assign(static_cast<std::size_t>(n) + 1, 0);
    for (Index i = 0; i < n; ++i) {
        auto& a = adj[static_cast<std::size_t>(i)];
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end(), [](const auto& x, const auto& y) { return x.first == y.first; }),
                a.end());
        g.start[static_cast<std::size_t>(i) + 1] = g.start[static_cast<std::size_t>(i)] + static_cast<Index>(a.size());
    }
    g.target.reserve(static_cast<std::size_t>(g.start.back()));
    g.weight.reserve(static_cast<std::size_t>(g.start.back()));
    for (const auto& a : adj)
        for (const auto& [j, w] : a) {
            g.target.push_back(j);
            g.weight.push_back(w);
            g.max_edge = std::max(g.max_edge, w);
        }
    return g;
}

void check_connected(const Graph& g, Index n)
{
    std::vector<int> comp(static_cast<std::size_t>(n), -1);
    std::vector<Index> sizes;
    std::vector<Index> stack;
    for (Index s = 0; s < n; ++s) {
        if (comp[static_cast<std::size_t>(s)] >= 0)
            continue;
        const int id = static_cast<int>(sizes.size());
        Index count = 0;
        stack.push_back(s);
        comp[static_cast<std::size_t>(s)] = id;
        while (!stack.empty()) {
            const Index v = stack.back();
            stack.pop_back();
            ++count;
            for (Index e = g.start[static_cast<std::size_t>(v)]; e < g.start[static_cast<std::size_t>(v) + 1]; ++e) {
                const Index w = g.target[static_cast<std::size_t>(e)];
                if (comp[static_cast<std::size_t>(w)] < 0) {
                    comp[static_cast<std::size_t>(w)] = id;
                    stack.push_back(w);
                }
            }
        }
        sizes.push_back(count);
    }
    if (sizes.size() > 1) {
        std::ostringstream os;
        os << "isomap: neighborhood graph is disconnected (" << sizes.size() << " components of sizes";
        for (std::size_t i = 0; i < sizes.size() && i < 10; ++i)
            os << ' ' << sizes[i];
        if (sizes.size() > 10)
            os << " ...";
        os << "); increase k_neighbors";
        throw NumericalError(os.str());
    }
}

Mat all_pairs_geodesic(const Graph& g, Index n)
{
    Mat dist(n, n);
    using Item = std::pair<double, Index>;
    std::vector<double> d(static_cast<std::size_t>(n));
    std::vector<Item> heap_storage;
    for (Index s = 0; s < n; ++s) {
        std::fill(d.begin(), d.end(), kInf);
        d[static_cast<std::size_t>(s)] = 0.0;
        heap_storage.clear();
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq(std::greater<>{}, std::move(heap_storage));
        pq.emplace(0.0, s);
        while (!pq.empty()) {
            const auto [dv, v] = pq.top();
            pq.pop();
            if (dv > d[static_cast<std::size_t>(v)])
                continue;
            for (Index e = g.start[static_cast<std::size_t>(v)]; e < g.start[static_cast<std::size_t>(v) + 1]; ++e) {
                const Index w = g.target[static_cast<std::size_t>(e)];
                const double nd = dv + g.weight[static_cast<std::size_t>(e)];
                if (nd < d[static_cast<std::size_t>(w)]) {
                    d[static_cast<std::size_t>(w)] = nd;
                    pq.emplace(nd, w);
                }
            }
        }
        for (Index j = 0; j < n; ++j)
            dist(j, s) = d[static_cast<std::size_t>(j)];
    }
    // Symmetrize away last-bit differences between the two directions.
    dist = 0.5 * (dist + dist.transpose()).eval();
    return dist;
}

void mds(EmbeddingModel& model, int d_embed, const FitOptions& opts)
{
    const Index n = model.geodesic.rows();
    Mat B = model.geodesic.array().square().matrix();
    model.mean_sq_geodesic_rows = B.rowwise().mean();
    const double grand = model.mean_sq_geodesic_rows.mean();
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i)
            B(i, j) = -0.5 * (B(i, j) - model.mean_sq_geodesic_rows[i] - model.mean_sq_geodesic_rows[j] + grand);

    Vec vals;
    Mat vecs;
    top_eigenpairs(B, d_embed, vals, vecs, opts);
    model.d_embed = d_embed;
    model.eigvals = vals.cwiseMax(0.0);
    model.eigvecs = vecs;
    model.embedding = vecs * model.eigvals.cwiseSqrt().asDiagonal();
}

template <class T>
void write_pod(std::ostream& os, const T& v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& is, T& v)
{
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

void write_mat(std::ostream& os, const Mat& m)
{
    write_pod(os, static_cast<std::int64_t>(m.rows()));
    write_pod(os, static_cast<std::int64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Mat read_mat(std::istream& is)
{
    std::int64_t r = 0, c = 0;
    read_pod(is, r);
    read_pod(is, c);
    if (!is || r < 0 || c < 0 || r * c > (std::int64_t{1} << 34))
        throw IoError("embedding cache: corrupt matrix header");
    Mat m(r, c);
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!is)
        throw IoError("embedding cache: truncated file");
    return m;
}

}  // namespace

std::uint64_t hash_matrix(const Mat& m)
{
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* p, std::size_t bytes) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < bytes; ++i) {
            h ^= c[i];
            h *= 1099511628211ull;
        }
    };
    const std::int64_t dims[2] = {m.rows(), m.cols()};
    mix(dims, sizeof(dims));
    mix(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    return h;
}

void top_eigenpairs(const Mat& sym, int k, Vec& values, Mat& vectors, const FitOptions& opts)
{
    const Index n = sym.rows();
    if (k < 1 || k > n)
        throw DimensionError("top_eigenpairs: k out of range");
    if (n <= opts.dense_eigen_limit || 3 * static_cast<Index>(k) + 30 >= n) {
        Eigen::SelfAdjointEigenSolver<Mat> es(sym);
        if (es.info() != Eigen::Success)
            throw NumericalError("top_eigenpairs: dense eigensolver failed");
        values = es.eigenvalues().reverse().head(k);
        vectors = es.eigenvectors().rowwise().reverse().leftCols(k);
        return;
    }

    // Lanczos with full reorthogonalization, restarted from scratch with a
    // larger basis until the top-k Ritz pairs converge.
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> normal;
    Index m = std::min<Index>(n, 2 * k + 40);
    const double norm_est = sym.cwiseAbs().rowwise().sum().maxCoeff();
    for (;;) {
        Mat V(n, m + 1);
        Vec alpha(m), beta = Vec::Zero(m);
        Vec v(n);
        for (Index i = 0; i < n; ++i)
            v[i] = normal(rng);
        V.col(0) = v.normalized();
        Index steps = m;
        for (Index j = 0; j < m; ++j) {
            Vec w = sym * V.col(j);
            alpha[j] = V.col(j).dot(w);
            for (int pass = 0; pass < 2; ++pass)
                w -= V.leftCols(j + 1) * (V.leftCols(j + 1).transpose() * w);
            double b = w.norm();
            if (b <= 1e-12 * norm_est) {
                // Invariant subspace found; continue from a fresh direction.
                for (Index i = 0; i < n; ++i)
                    w[i] = normal(rng);
                for (int pass = 0; pass < 2; ++pass)
                    w -= V.leftCols(j + 1) * (V.leftCols(j + 1).transpose() * w);
                b = 0.0;
                if (j + 1 == n) {
                    steps = j + 1;
                    break;
                }
                V.col(j + 1) = w.normalized();
            } else {
                V.col(j + 1) = w / b;
            }
            beta[j] = b;
        }
        Mat T = Mat::Zero(steps, steps);
        for (Index j = 0; j < steps; ++j) {
            T(j, j) = alpha[j];
            if (j + 1 < steps)
                T(j, j + 1) = T(j + 1, j) = beta[j];
        }
        Eigen::SelfAdjointEigenSolver<Mat> es(T);
        const Vec theta = es.eigenvalues().reverse();
        const Mat S = es.eigenvectors().rowwise().reverse();
        bool converged = steps == n;
        if (!converged) {
            converged = true;
            const double scale = std::max(std::abs(theta[0]), 1e-300);
            for (int i = 0; i < k; ++i)
                if (std::abs(beta[steps - 1] * S(steps - 1, i)) > 1e-10 * scale) {
                    converged = false;
                    break;
                }
        }
        if (converged || m == n) {
            values = theta.head(k);
            vectors = V.leftCols(steps) * S.leftCols(k);
            for (int i = 0; i < k; ++i)
                vectors.col(i).normalize();
            return;
        }
        m = std::min<Index>(n, 2 * m);
    }
}

EmbeddingModel fit_isomap(const Mat& points, int k_neighbors, int d_embed, const FitOptions& opts)
{
    const Index n = points.cols();
    if (k_neighbors < 1 || k_neighbors >= n)
        throw ConfigError("fit_isomap: need 1 <= k_neighbors < number of points");
    if (d_embed < 1 || d_embed > n - 1)
        throw ConfigError("fit_isomap: need 1 <= d_embed <= number of points - 1");
    EmbeddingModel model;
    model.points = points;
    model.k_neighbors = k_neighbors;
    model.data_hash = hash_matrix(points);
    const Graph g = knn_graph(points, k_neighbors);
    check_connected(g, n);
    model.max_edge = g.max_edge;
    model.geodesic = all_pairs_geodesic(g, n);
    mds(model, d_embed, opts);
    return model;
}

EmbeddingModel refit_dimension(const EmbeddingModel& model, int d_embed, const FitOptions& opts)
{
    if (d_embed < 1 || d_embed > model.size() - 1)
        throw ConfigError("refit_dimension: d_embed out of range");
    EmbeddingModel out;
    out.points = model.points;
    out.k_neighbors = model.k_neighbors;
    out.geodesic = model.geodesic;
    out.max_edge = model.max_edge;
    out.data_hash = model.data_hash;
    mds(out, d_embed, opts);
    return out;
}

EmbedResult embed(const EmbeddingModel& model, const Vec& x, double link_tolerance)
{
    require_dims(x.size() == model.dim(), "embed: query dimension mismatch");
    const Index n = model.size();
    const Vec dx = (model.points.colwise() - x).colwise().norm().transpose();
    const int k = std::min<int>(model.k_neighbors, static_cast<int>(n));
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](Index a, Index b) { return dx[a] < dx[b] || (dx[a] == dx[b] && a < b); });

    EmbedResult res;
    res.linked = dx[order[0]] <= link_tolerance * model.max_edge;

    Vec d = Vec::Constant(n, kInf);
    for (int r = 0; r < k; ++r) {
        const Index j = order[static_cast<std::size_t>(r)];
        d = d.cwiseMin((model.geodesic.col(j).array() + dx[j]).matrix());
    }
    const Vec delta = model.mean_sq_geodesic_rows - d.cwiseAbs2();
    res.coords = Vec::Zero(model.d_embed);
    for (int c = 0; c < model.d_embed; ++c)
        if (model.eigvals[c] > 0.0)
            res.coords[c] = model.eigvecs.col(c).dot(delta) / (2.0 * std::sqrt(model.eigvals[c]));
    return res;
}

double reconstruction_error(const EmbeddingModel& model)
{
    const Index n = model.size();
    const Mat et = model.embedding.transpose();  // d x n, contiguous columns
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    double count = 0;
    for (Index j = 1; j < n; ++j) {
        for (Index i = 0; i < j; ++i) {
            const double a = model.geodesic(i, j);
            const double b = (et.col(i) - et.col(j)).norm();
            sa += a;
            sb += b;
            saa += a * a;
            sbb += b * b;
            sab += a * b;
            count += 1.0;
        }
    }
    if (count == 0)
        return 0.0;
    const double cov = sab - sa * sb / count;
    const double va = saa - sa * sa / count, vb = sbb - sb * sb / count;
    if (va <= 0.0 || vb <= 0.0)
        return va <= 0.0 && vb <= 0.0 ? 0.0 : 1.0;
    const double r = cov / std::sqrt(va * vb);
    return std::clamp(1.0 - r * r, 0.0, 1.0);
}

std::string embedding_cache_name(std::uint64_t data_hash, int k_neighbors, int d_embed)
{
    std::ostringstream os;
    os << "embedding_" << std::hex << data_hash << std::dec << "_k" << k_neighbors << "_d" << d_embed << ".bin";
    return os.str();
}

void save_embedding(const EmbeddingModel& model, const std::string& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw IoError("cannot write embedding cache '" + path + "'");
    os.write(kMagic, sizeof(kMagic));
    write_pod(os, kCacheVersion);
    write_pod(os, model.data_hash);
    write_pod(os, static_cast<std::int32_t>(model.k_neighbors));
    write_pod(os, static_cast<std::int32_t>(model.d_embed));
    write_pod(os, model.max_edge);
    write_mat(os, model.points);
    write_mat(os, model.geodesic);
    write_mat(os, model.eigvals);
    write_mat(os, model.eigvecs);
    write_mat(os, model.embedding);
    write_mat(os, model.mean_sq_geodesic_rows);
    if (!os)
        throw IoError("failed writing embedding cache '" + path + "'");
}

EmbeddingModel load_embedding(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("cannot open embedding cache '" + path + "'");
    char magic[8];
    is.read(magic, sizeof(magic));
    std::uint32_t version = 0;
    read_pod(is, version);
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("'" + path + "' is not an embedding cache");
    if (version != kCacheVersion)
        throw IoError("embedding cache '" + path + "' has unsupported version " + std::to_string(version));
    EmbeddingModel m;
    std::int32_t k = 0, d = 0;
    read_pod(is, m.data_hash);
    read_pod(is, k);
    read_pod(is, d);
    read_pod(is, m.max_edge);
    m.k_neighbors = k;
    m.d_embed = d;
    m.points = read_mat(is);
    m.geodesic = read_mat(is);
    m.eigvals = read_mat(is);
    m.eigvecs = read_mat(is);
    m.embedding = read_mat(is);
    m.mean_sq_geodesic_rows = read_mat(is);
    if (m.eigvals.size() != d || m.embedding.cols() != d || m.geodesic.rows() != m.points.cols())
        throw IoError("embedding cache '" + path + "' is inconsistent");
    if (hash_matrix(m.points) != m.data_hash)
        throw IoError("embedding cache '" + path + "' failed its hash check");
    return m;
}

}  // namespace sdpc
