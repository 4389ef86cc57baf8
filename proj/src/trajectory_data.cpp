#include "sdpc/trajectory_data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

namespace sdpc {

namespace {

// Time-major flattening of rows [first, first+count) of a T x q matrix.
Vec flatten_rows(const Mat& m, Index first, Index count)
{
    Vec out(count * m.cols());
    for (Index t = 0; t < count; ++t)
        out.segment(t * m.cols(), m.cols()) = m.row(first + t).transpose();
    return out;
}

Mat unflatten_rows(const Vec& v, Index rows, Index cols)
{
    Mat out(rows, cols);
    for (Index t = 0; t < rows; ++t)
        out.row(t) = v.segment(t * cols, cols).transpose();
    return out;
}

}  // namespace

Trajectory::Trajectory(Mat u_seq, Mat y_seq, int tp, int tf)
    : u(std::move(u_seq)), y(std::move(y_seq)), t_past(tp), t_future(tf)
{
    require_dims(tp >= 1 && tf >= 1, "Trajectory: t_past and t_future must be >= 1");
    require_dims(u.rows() == tp + tf && y.rows() == tp + tf,
                 "Trajectory: u and y must have t_past + t_future rows");
}

Vec Trajectory::u_past() const { return flatten_rows(u, 0, t_past); }
Vec Trajectory::u_future() const { return flatten_rows(u, t_past, t_future); }
Vec Trajectory::y_past() const { return flatten_rows(y, 0, t_past); }
Vec Trajectory::y_future() const { return flatten_rows(y, t_past, t_future); }

Vec Trajectory::flatten() const
{
    return flatten_parts(u_past(), u_future(), y_past(), y_future());
}

Trajectory Trajectory::unflatten(const Vec& flat, int tp, int tf, int m, int p)
{
    TrajectoryLayout lay{tp, tf, m, p};
    require_dims(flat.size() == lay.dim(), "Trajectory::unflatten: wrong vector length");
    Mat u(tp + tf, m), y(tp + tf, p);
    u.topRows(tp) = unflatten_rows(flat.segment(lay.u_past_offset(), lay.u_past_size()), tp, m);
    u.bottomRows(tf) = unflatten_rows(flat.segment(lay.u_future_offset(), lay.u_future_size()), tf, m);
    y.topRows(tp) = unflatten_rows(flat.segment(lay.y_past_offset(), lay.y_past_size()), tp, p);
    y.bottomRows(tf) = unflatten_rows(flat.segment(lay.y_future_offset(), lay.y_future_size()), tf, p);
    return Trajectory(std::move(u), std::move(y), tp, tf);
}

Vec flatten_parts(const Vec& u_past, const Vec& u_future, const Vec& y_past, const Vec& y_future)
{
    Vec out(u_past.size() + u_future.size() + y_past.size() + y_future.size());
    out << u_past, u_future, y_past, y_future;
    return out;
}

// ---------------------------------------------------------------------------

Dataset::Dataset(TrajectoryLayout layout, std::vector<Episode> episodes, DatasetMeta meta)
    : layout_(layout), episodes_(std::move(episodes)), meta_(std::move(meta))
{
    const int len = layout_.length();
    Index count = 0;
    for (const auto& ep : episodes_) {
        require_dims(ep.u.cols() == layout_.m && ep.y.cols() == layout_.p,
                     "Dataset: episode channel count does not match layout");
        require_dims(ep.u.rows() == ep.y.rows(), "Dataset: episode u/y length mismatch");
        if (ep.steps() >= len)
            count += ep.steps() - len + 1;
    }
    if (count == 0)
        throw DimensionError("Dataset: no episode is long enough for t_past + t_future = " +
                             std::to_string(len));

    flat_.resize(layout_.dim(), count);
    episode_ids_.reserve(static_cast<std::size_t>(count));
    Index col = 0;
    for (const auto& ep : episodes_) {
        for (Index s = 0; s + len <= ep.steps(); ++s, ++col) {
            flat_.col(col) << flatten_rows(ep.u, s, layout_.t_past),
                flatten_rows(ep.u, s + layout_.t_past, layout_.t_future),
                flatten_rows(ep.y, s, layout_.t_past),
                flatten_rows(ep.y, s + layout_.t_past, layout_.t_future);
            episode_ids_.push_back(ep.id);
        }
    }
}

Trajectory Dataset::trajectory(Index i) const
{
    require_dims(i >= 0 && i < size(), "Dataset::trajectory: index out of range");
    return Trajectory::unflatten(flat_.col(i), layout_.t_past, layout_.t_future, layout_.m, layout_.p);
}

Vec Dataset::channel_scale() const
{
    const int m = layout_.m, p = layout_.p;
    Vec sum = Vec::Zero(m + p), sq = Vec::Zero(m + p);
    double n = 0.0;
    for (const auto& ep : episodes_) {
        for (Index t = 0; t < ep.steps(); ++t) {
            Vec s(m + p);
            s << ep.u.row(t).transpose(), ep.y.row(t).transpose();
            sum += s;
            sq += s.cwiseProduct(s);
        }
        n += static_cast<double>(ep.steps());
    }
    Vec scale(m + p);
    for (int c = 0; c < m + p; ++c) {
        const double mean = sum[c] / n;
        const double var = std::max(sq[c] / n - mean * mean, 0.0);
        const double sd = std::sqrt(var);
        scale[c] = sd > 1e-12 ? sd : 1.0;
    }
    return scale;
}

std::uint64_t Dataset::content_hash() const
{
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    const int dims[4] = {layout_.t_past, layout_.t_future, layout_.m, layout_.p};
    mix(dims, sizeof(dims));
    mix(flat_.data(), static_cast<std::size_t>(flat_.size()) * sizeof(double));
    return h;
}

// ---------------------------------------------------------------------------

Mat HankelBlocks::hz() const
{
    const Index rows = u_past.rows() + u_future.rows() + y_past.rows() + (affine ? 1 : 0);
    Mat out(rows, cols());
    if (affine)
        out << u_past, u_future, y_past, ones;
    else
        out << u_past, u_future, y_past;
    return out;
}

Mat HankelBlocks::stacked() const
{
    const Index rows =
        u_past.rows() + u_future.rows() + y_past.rows() + y_future.rows() + (affine ? 1 : 0);
    Mat out(rows, cols());
    if (affine)
        out << u_past, u_future, y_past, y_future, ones;
    else
        out << u_past, u_future, y_past, y_future;
    return out;
}

HankelBlocks HankelBlocks::from_stacked(const Mat& s, const TrajectoryLayout& lay, bool affine)
{
    require_dims(s.rows() == lay.dim() + (affine ? 1 : 0),
                 "HankelBlocks::from_stacked: row count does not match layout");
    HankelBlocks b;
    b.affine = affine;
    b.u_past = s.middleRows(lay.u_past_offset(), lay.u_past_size());
    b.u_future = s.middleRows(lay.u_future_offset(), lay.u_future_size());
    b.y_past = s.middleRows(lay.y_past_offset(), lay.y_past_size());
    b.y_future = s.middleRows(lay.y_future_offset(), lay.y_future_size());
    if (affine)
        b.ones = s.row(lay.dim());
    return b;
}

Mat build_hankel(const Mat& signal, int depth)
{
    const Index T = signal.rows(), q = signal.cols();
    if (depth < 1 || T < depth)
        throw DimensionError("build_hankel: need T >= depth >= 1 (T = " + std::to_string(T) +
                             ", depth = " + std::to_string(depth) + ")");
    const Index cols = T - depth + 1;
    Mat h(depth * q, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < depth; ++i)
            h.block(i * q, j, q, 1) = signal.row(j + i).transpose();
    return h;
}

Dataset extract_trajectories(std::vector<Episode> episodes, int t_past, int t_future, DatasetMeta meta)
{
    require_dims(t_past >= 1 && t_future >= 1, "extract_trajectories: horizons must be >= 1");
    require_dims(!episodes.empty(), "extract_trajectories: no episodes");
    TrajectoryLayout lay{t_past, t_future, static_cast<int>(episodes.front().u.cols()),
                         static_cast<int>(episodes.front().y.cols())};
    return Dataset(lay, std::move(episodes), std::move(meta));
}

Index numeric_rank(const Mat& m)
{
    if (m.size() == 0)
        return 0;
    Eigen::BDCSVD<Mat> svd(m);
    const Vec& s = svd.singularValues();
    if (s.size() == 0 || s[0] <= 0.0)
        return 0;
    const double tol = static_cast<double>(std::max(m.rows(), m.cols())) *
                       std::numeric_limits<double>::epsilon() * s[0];
    return (s.array() > tol).count();
}

PersistencyResult check_persistency(const Mat& u, int order)
{
    PersistencyResult r;
    if (order < 1 || u.rows() < order)
        return r;
    const Mat h = build_hankel(u, order);
    r.rows = h.rows();
    r.rank = numeric_rank(h);
    r.exciting = r.rank == r.rows;
    return r;
}

HankelBlocks blocks_from(const Dataset& dataset, std::span<const Index> indices, bool affine)
{
    if (indices.empty())
        throw DimensionError("blocks_from: empty index set");
    const auto& lay = dataset.layout();
    Mat cols(dataset.dim(), static_cast<Index>(indices.size()));
    for (std::size_t j = 0; j < indices.size(); ++j) {
        const Index i = indices[j];
        require_dims(i >= 0 && i < dataset.size(), "blocks_from: index out of range");
        cols.col(static_cast<Index>(j)) = dataset.flat().col(i);
    }
    HankelBlocks b;
    b.affine = affine;
    b.u_past = cols.middleRows(lay.u_past_offset(), lay.u_past_size());
    b.u_future = cols.middleRows(lay.u_future_offset(), lay.u_future_size());
    b.y_past = cols.middleRows(lay.y_past_offset(), lay.y_past_size());
    b.y_future = cols.middleRows(lay.y_future_offset(), lay.y_future_size());
    if (affine)
        b.ones = Eigen::RowVectorXd::Ones(cols.cols());
    return b;
}

HankelBlocks blocks_from_all(const Dataset& dataset, bool affine)
{
    std::vector<Index> all(static_cast<std::size_t>(dataset.size()));
    for (Index i = 0; i < dataset.size(); ++i)
        all[static_cast<std::size_t>(i)] = i;
    return blocks_from(dataset, all, affine);
}

HankelBlocks lq_compress(const HankelBlocks& blocks)
{
    const Mat h = blocks.stacked();
    // H^T P = Q R  =>  H = P R^T Q^T, so col(H) = col(P R^T).
    Eigen::ColPivHouseholderQR<Mat> qr(h.transpose());
    const Mat& qr_mat = qr.matrixQR();
    const Index diag = std::min(qr_mat.rows(), qr_mat.cols());
    const double top = diag > 0 ? std::abs(qr_mat(0, 0)) : 0.0;
    const double tol = static_cast<double>(std::max(h.rows(), h.cols())) *
                       std::numeric_limits<double>::epsilon() * top;
    Index keep = 0;
    while (keep < diag && std::abs(qr_mat(keep, keep)) > tol)
        ++keep;
    if (keep == 0)
        keep = 1;

    const Mat r = qr_mat.topRows(keep).triangularView<Eigen::Upper>();  // keep x rows(H)
    Mat compressed = qr.colsPermutation() * r.transpose();              // rows(H) x keep

    HankelBlocks out;
    out.affine = blocks.affine;
    Index row = 0;
    auto take = [&](Index n) {
        Mat part = compressed.middleRows(row, n);
        row += n;
        return part;
    };
    out.u_past = take(blocks.u_past.rows());
    out.u_future = take(blocks.u_future.rows());
    out.y_past = take(blocks.y_past.rows());
    out.y_future = take(blocks.y_future.rows());
    if (blocks.affine)
        out.ones = compressed.row(row);
    return out;
}

// ---------------------------------------------------------------------------

void save_dataset(const Dataset& dataset, const std::string& stem)
{
    const auto& lay = dataset.layout();
    std::ofstream csv(stem + ".csv");
    if (!csv)
        throw IoError("save_dataset: cannot open " + stem + ".csv");
    for (int c = 0; c < lay.m; ++c)
        csv << "u_" << c << ',';
    for (int c = 0; c < lay.p; ++c)
        csv << "y_" << c << ',';
    csv << "episode_id,step\n";
    char buf[32];
    for (const auto& ep : dataset.episodes()) {
        for (Index t = 0; t < ep.steps(); ++t) {
            for (int c = 0; c < lay.m; ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g", ep.u(t, c));
                csv << buf << ',';
            }
            for (int c = 0; c < lay.p; ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g", ep.y(t, c));
                csv << buf << ',';
            }
            csv << ep.id << ',' << t << '\n';
        }
    }

    nlohmann::json meta = {{"format_version", 1},
                           {"m", lay.m},
                           {"p", lay.p},
                           {"t_past", lay.t_past},
                           {"t_future", lay.t_future},
                           {"dt", dataset.meta().dt},
                           {"env", dataset.meta().env}};
    std::ofstream js(stem + ".meta.json");
    if (!js)
        throw IoError("save_dataset: cannot open " + stem + ".meta.json");
    js << meta.dump(2) << '\n';
}

Dataset load_dataset(const std::string& stem)
{
    std::ifstream js(stem + ".meta.json");
    if (!js)
        throw IoError("load_dataset: cannot open " + stem + ".meta.json");
    nlohmann::json meta;
    try {
        js >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("load_dataset: bad metadata: ") + e.what());
    }
    const int m = meta.at("m").get<int>();
    const int p = meta.at("p").get<int>();
    const int tp = meta.at("t_past").get<int>();
    const int tf = meta.at("t_future").get<int>();
    DatasetMeta dm{meta.value("env", std::string{}), meta.value("dt", 0.0)};

    std::ifstream csv(stem + ".csv");
    if (!csv)
        throw IoError("load_dataset: cannot open " + stem + ".csv");
    std::string line;
    std::getline(csv, line);  // header

    // Episodes keep file order; rows of one episode are contiguous.
    std::vector<Episode> episodes;
    std::vector<std::vector<double>> rows;
    int current = std::numeric_limits<int>::min();
    auto flush = [&]() {
        if (rows.empty())
            return;
        Episode ep;
        ep.id = current;
        ep.u.resize(static_cast<Index>(rows.size()), m);
        ep.y.resize(static_cast<Index>(rows.size()), p);
        for (std::size_t t = 0; t < rows.size(); ++t) {
            for (int c = 0; c < m; ++c)
                ep.u(static_cast<Index>(t), c) = rows[t][static_cast<std::size_t>(c)];
            for (int c = 0; c < p; ++c)
                ep.y(static_cast<Index>(t), c) = rows[t][static_cast<std::size_t>(m + c)];
        }
        episodes.push_back(std::move(ep));
        rows.clear();
    };
    while (std::getline(csv, line)) {
        if (line.empty())
            continue;
        std::vector<double> vals;
        vals.reserve(static_cast<std::size_t>(m + p + 2));
        const char* s = line.c_str();
        char* end = nullptr;
        while (*s) {
            vals.push_back(std::strtod(s, &end));
            if (end == s)
                throw IoError("load_dataset: malformed row: " + line);
            s = end;
            if (*s == ',')
                ++s;
        }
        if (vals.size() != static_cast<std::size_t>(m + p + 2))
            throw IoError("load_dataset: wrong column count in row: " + line);
        const int id = static_cast<int>(vals[static_cast<std::size_t>(m + p)]);
        if (id != current) {
            flush();
            current = id;
        }
        rows.push_back(std::move(vals));
    }
    flush();
    return extract_trajectories(std::move(episodes), tp, tf, std::move(dm));
}

}  // namespace sdpc
