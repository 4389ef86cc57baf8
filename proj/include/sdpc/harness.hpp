#pragma once

#include "sdpc/predictor.hpp"
#include "sdpc/select_dpc.hpp"

#include <memory>
#include <string>
#include <vector>

namespace sdpc {

enum class DataPolicy { iid, random_walk, demonstrations };

const char* to_string(DataPolicy policy);
DataPolicy data_policy_from_string(const std::string& name);

struct PlantConfig {
    std::string name = "cartpole";
    CartPoleParams cartpole;
    ReacherParams reacher;
    RocketParams rocket;
};

/// Inputs follow u_t = a u_{t-1} + b n with n ~ U(-1, 1) per channel, in
/// units of the plant's input half-range around its center, then saturated.
struct DataConfig {
    DataPolicy policy = DataPolicy::iid;
    double a = 0.0;
    double b = 1.0;
    int episodes = 100;
    int steps = 100;
    std::uint64_t seed = 0;
    /// Episodes stop once |y|_inf exceeds this bound.
    double blowup_bound = 1e3;
};

struct ClosedLoopConfig {
    int steps = 300;
    /// Empty means the plant's default state.
    Vec initial_state;
    double blowup_bound = 1e3;
    double warmup_amplitude = 0.05;
    std::vector<int> snapshot_steps;
};

struct SweepConfig {
    std::vector<Index> n_cols;
    std::vector<int> k_neighbors;
    std::vector<int> d_embed;
    /// Window lengths T_p + T_f for the relative-contrast curve.
    std::vector<int> contrast_lengths;
    int holdout_steps = 200;
    std::uint64_t holdout_seed = 1000003;
};

struct ExperimentConfig {
    std::string name;
    PlantConfig plant;
    DataConfig data;
    DPCConfig dpc;
    OuterLoopSettings outer;
    /// Scale each channel by 1/std before computing selection distances.
    bool standardize = true;
    int k_neighbors = 10;
    int d_embed = 10;
    /// Time-windowed DeePC window; 0 selects 10 (T_p + T_f).
    int time_window = 0;
    std::vector<std::string> baselines;
    SweepConfig sweep;
    std::vector<std::uint64_t> seeds{0};
    std::string output_dir = "out";
    ClosedLoopConfig loop;
    /// FNV-1a hash of the canonical config text.
    std::uint64_t hash = 0;

    /// Throws ConfigError on unknown names, inconsistent dimensions or
    /// unordered values.
    void validate() const;
};

/// Parses the JSON config format documented in the README.
ExperimentConfig parse_config(const std::string& text);
/// Throws ConfigError when the file is missing or malformed.
ExperimentConfig load_config(const std::string& path);

std::unique_ptr<Plant> make_plant(const PlantConfig& cfg);

/// Seeded initial state for data episodes of the named plant.
Vec random_initial_state(const Plant& plant, std::mt19937_64& rng);

/// Episodes under the autoregressive input policy from seeded initial states.
/// An episode that exceeds the blow-up bound is truncated before that step.
std::vector<Episode> generate_episodes(const PlantConfig& plant, const DataConfig& data);

/// Cart-pole swing-ups under the energy policy with per-episode randomized
/// gains, exploration noise and perturbed hanging initial states.
std::vector<Episode> generate_demonstrations(int count, int steps, std::uint64_t seed,
                                             const CartPoleParams& params = {});

/// Episodes for `data.policy`, windowed with the config's horizons.
Dataset generate_data(const ExperimentConfig& cfg);

/// One closed-loop episode under a detuned stabilizing controller of the
/// plant (detuned swing-up for the cart-pole, LQR for the rocket, joint PD for
/// the reacher), with an episode id no dataset episode uses.
Episode make_holdout_episode(const ExperimentConfig& cfg, std::uint64_t seed);
constexpr int kHoldoutEpisodeId = 1 << 30;

struct ResidualRow {
    std::string method;
    Index n_cols = 0;
    double cum_residual = 0.0;
};

/// Sum over holdout windows of |y_f_hat - y_f|_2 where y_f_hat is the
/// least-squares prediction from the windows selected around the holdout
/// window. Methods: norm, manifold (needs `model`), random.
/// Throws ConfigError when holdout and dataset share an episode id.
std::vector<ResidualRow> residual_sweep(const Dataset& dataset, const Dataset& holdout,
                                        const std::vector<Index>& n_cols_list,
                                        const std::vector<std::string>& methods, const SelectionMethod& norm_method,
                                        const EmbeddingModel* model = nullptr, std::uint64_t seed = 0,
                                        bool affine = true);

/// Controller by baseline name: select_norm, select_manifold, select_random,
/// select_full, full_deepc, time_windowed. The dataset and model must outlive it.
std::unique_ptr<Controller> make_controller(const std::string& method, const ExperimentConfig& cfg,
                                            const Dataset& dataset, const EmbeddingModel* model, Index n_cols,
                                            std::uint64_t seed);

/// Selection settings implied by the config (standardizing weights when
/// enabled).
SelectionMethod selection_method(const ExperimentConfig& cfg, const Dataset& dataset);

/// Feature points the manifold model of this config is fitted on.
Mat embedding_points(const ExperimentConfig& cfg, const Dataset& dataset);

struct RunResult {
    ClosedLoopTrace trace;
    std::string method;
    Index n_cols = 0;
    std::uint64_t seed = 0;
};

/// One closed-loop run from the configured initial state.
RunResult run_experiment(const std::string& method, const ExperimentConfig& cfg, const Dataset& dataset,
                         const EmbeddingModel* model, Index n_cols, std::uint64_t seed);

struct CostRow {
    std::string method;
    Index n_cols = 0;
    double cost = 0.0;
    bool diverged = false;
    double sel_ms_total = 0.0;
    double qp_ms_total = 0.0;
};

CostRow cost_row(const RunResult& run);

/// One closed-loop run per (baseline, N_cols); baselines that ignore N_cols
/// run once with n_cols = dataset size.
std::vector<CostRow> cost_sweep(const ExperimentConfig& cfg, const Dataset& dataset, const EmbeddingModel* model,
                                std::uint64_t seed);

struct IsomapRow {
    int k = 0;
    int d_embed = 0;
    double recon_error = 0.0;
};

/// Reconstruction error over the (k, d) grid; one graph per k.
std::vector<IsomapRow> isomap_grid(const Mat& points, const std::vector<int>& ks, const std::vector<int>& ds);

struct ContrastRow {
    int length = 0;
    Index dim = 0;
    double delta_l1 = 0.0;
    double delta_embedded = 0.0;
};

/// Mean relative contrast of held-out query windows against the dataset
/// windows, raw L1 versus in the Isomap embedding, per window length.
std::vector<ContrastRow> contrast_curve(const std::vector<Episode>& episodes, const std::vector<int>& lengths,
                                        int k_neighbors, int d_embed, int queries, std::uint64_t seed);

void write_residual_csv(const std::vector<ResidualRow>& rows, const std::string& path);
void write_cost_csv(const std::vector<CostRow>& rows, const std::string& path);
void write_isomap_csv(const std::vector<IsomapRow>& rows, const std::string& path);
void write_contrast_csv(const std::vector<ContrastRow>& rows, const std::string& path);

struct SummaryCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Summary JSON: config name and hash, seeds, totals, built-in checks.
void write_summary_json(const ExperimentConfig& cfg, const std::vector<RunResult>& runs,
                        const std::vector<SummaryCheck>& checks, const std::string& path);

}  // namespace sdpc
