#pragma once

#include "sdpc/common.hpp"

#include <span>
#include <string>
#include <vector>

namespace sdpc {

/// Input-output segment of length t_past + t_future.
///
/// Rows are time steps (ascending), columns are channels. The flattened
/// layout is [u_p; u_f; y_p; y_f] with each block stored time-major, so the
/// partitions of a flattened trajectory line up with the rows of HankelBlocks.
struct Trajectory {
    Mat u;  // T x m
    Mat y;  // T x p
    int t_past = 0;
    int t_future = 0;

    Trajectory() = default;
    Trajectory(Mat u_seq, Mat y_seq, int t_past, int t_future);

    int length() const { return t_past + t_future; }
    int input_dim() const { return static_cast<int>(u.cols()); }
    int output_dim() const { return static_cast<int>(y.cols()); }

    Vec u_past() const;
    Vec u_future() const;
    Vec y_past() const;
    Vec y_future() const;

    Vec flatten() const;
    static Trajectory unflatten(const Vec& flat, int t_past, int t_future, int m, int p);
};

/// Offsets of the four partitions inside a flattened trajectory.
struct TrajectoryLayout {
    int t_past = 0;
    int t_future = 0;
    int m = 0;
    int p = 0;

    int length() const { return t_past + t_future; }
    Index dim() const { return static_cast<Index>(length()) * (m + p); }
    Index u_past_offset() const { return 0; }
    Index u_future_offset() const { return static_cast<Index>(t_past) * m; }
    Index y_past_offset() const { return static_cast<Index>(length()) * m; }
    Index y_future_offset() const { return y_past_offset() + static_cast<Index>(t_past) * p; }
    Index u_past_size() const { return static_cast<Index>(t_past) * m; }
    Index u_future_size() const { return static_cast<Index>(t_future) * m; }
    Index y_past_size() const { return static_cast<Index>(t_past) * p; }
    Index y_future_size() const { return static_cast<Index>(t_future) * p; }

    bool operator==(const TrajectoryLayout&) const = default;
};

/// Flattens (u_p, u_f, y_p, y_f) stacked vectors into the trajectory layout.
Vec flatten_parts(const Vec& u_past, const Vec& u_future, const Vec& y_past, const Vec& y_future);

/// One recorded plant run, time-ascending rows.
struct Episode {
    Mat u;  // T x m
    Mat y;  // T x p
    int id = 0;

    Index steps() const { return u.rows(); }
};

struct DatasetMeta {
    std::string env;
    double dt = 0.0;
};

/// Sliding-window trajectories drawn from a set of episodes.
///
/// Windows are stored column-wise in a (t_past+t_future)(m+p) x n_d matrix.
/// The source episodes are retained so the dataset can be serialized in its
/// per-timestep columnar form.
class Dataset {
public:
    Dataset() = default;
    Dataset(TrajectoryLayout layout, std::vector<Episode> episodes, DatasetMeta meta = {});

    const TrajectoryLayout& layout() const { return layout_; }
    Index size() const { return flat_.cols(); }
    Index dim() const { return flat_.rows(); }
    const Mat& flat() const { return flat_; }
    Trajectory trajectory(Index i) const;
    int episode_id(Index i) const { return episode_ids_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& episode_ids() const { return episode_ids_; }
    const std::vector<Episode>& episodes() const { return episodes_; }
    const DatasetMeta& meta() const { return meta_; }

    /// Per-channel standard deviation over every sample of every episode,
    /// inputs first then outputs. Zero-variance channels report 1.
    Vec channel_scale() const;

    /// Stable content hash (FNV-1a over the layout and the window values).
    std::uint64_t content_hash() const;

private:
    TrajectoryLayout layout_;
    std::vector<Episode> episodes_;
    std::vector<int> episode_ids_;
    Mat flat_;
    DatasetMeta meta_;
};

/// Partitioned data matrices of the implicit predictor.
///
/// `ones` is the extra row of the stacked matrix used by affine predictors;
/// it is all ones when the blocks come straight from data and an arbitrary row
/// after lq_compress.
struct HankelBlocks {
    Mat u_past;
    Mat u_future;
    Mat y_past;
    Mat y_future;
    bool affine = false;
    Eigen::RowVectorXd ones;

    Index cols() const { return u_past.cols(); }
    /// [U_p; U_f; Y_p; (ones)]
    Mat hz() const;
    /// [U_p; U_f; Y_p; Y_f; (ones)]
    Mat stacked() const;
    /// Inverse of stacked(): splits a matrix with the stacked row layout.
    static HankelBlocks from_stacked(const Mat& stacked, const TrajectoryLayout& layout, bool affine);
};

/// Hankel matrix of depth `depth` of a T x q signal; column j stacks rows j..j+depth-1.
Mat build_hankel(const Mat& signal, int depth);

/// Stride-1 windows inside every episode; windows never span two episodes.
Dataset extract_trajectories(std::vector<Episode> episodes, int t_past, int t_future, DatasetMeta meta = {});

struct PersistencyResult {
    bool exciting = false;
    Index rank = 0;
    Index rows = 0;
};

/// Full-row-rank test of H_order(u) with the relative singular value threshold
/// max(rows, cols) * eps * sigma_max.
PersistencyResult check_persistency(const Mat& u, int order);

/// Numeric rank with the same threshold as check_persistency.
Index numeric_rank(const Mat& m);

HankelBlocks blocks_from(const Dataset& dataset, std::span<const Index> indices, bool affine);
HankelBlocks blocks_from_all(const Dataset& dataset, bool affine);

/// Column compression preserving the column space of the stacked matrix.
HankelBlocks lq_compress(const HankelBlocks& blocks);

/// Writes `<stem>.csv` (one row per time step) and `<stem>.meta.json`.
void save_dataset(const Dataset& dataset, const std::string& stem);
Dataset load_dataset(const std::string& stem);

}  // namespace sdpc
