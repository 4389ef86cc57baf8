#ifndef SDPC_SDPC_H
#define SDPC_SDPC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define SDPC_API __declspec(dllexport)
#else
#define SDPC_API __attribute__((visibility("default")))
#endif

/* Status codes. The config and numerical codes double as CLI exit codes. */
typedef enum sdpc_status {
    SDPC_OK = 0,
    SDPC_ERR_ARGUMENT = 1,
    SDPC_ERR_CONFIG = 2,
    SDPC_ERR_NUMERICAL = 3,
    SDPC_ERR_IO = 4,
    SDPC_ERR_INTERNAL = 5
} sdpc_status;

typedef struct sdpc_config sdpc_config;
typedef struct sdpc_dataset sdpc_dataset;
typedef struct sdpc_embedding sdpc_embedding;

typedef struct sdpc_run_stats {
    double total_cost; /* +inf when diverged */
    int diverged;
    int steps;
    int n_cols;
    double sel_ms_total;
    double qp_ms_total;
    double median_active; /* median per-step count of active g entries */
} sdpc_run_stats;

SDPC_API const char* sdpc_version(void);
/* Message of the last failed call on this thread; empty after success. */
SDPC_API const char* sdpc_last_error(void);

SDPC_API sdpc_status sdpc_config_load(const char* path, sdpc_config** out);
SDPC_API sdpc_status sdpc_config_parse(const char* text, sdpc_config** out);
SDPC_API void sdpc_config_free(sdpc_config* cfg);
SDPC_API const char* sdpc_config_name(const sdpc_config* cfg);
SDPC_API const char* sdpc_config_output_dir(const sdpc_config* cfg);
SDPC_API size_t sdpc_config_seed_count(const sdpc_config* cfg);
SDPC_API uint64_t sdpc_config_seed(const sdpc_config* cfg, size_t i);
SDPC_API int sdpc_config_n_cols(const sdpc_config* cfg);
SDPC_API size_t sdpc_config_baseline_count(const sdpc_config* cfg);
SDPC_API const char* sdpc_config_baseline(const sdpc_config* cfg, size_t i);
SDPC_API int sdpc_config_k_neighbors(const sdpc_config* cfg);
SDPC_API int sdpc_config_d_embed(const sdpc_config* cfg);
/* Hex FNV-1a hash of the canonical config text. */
SDPC_API const char* sdpc_config_hash(const sdpc_config* cfg);

/* Data for `seed`: the generator is seeded with data.seed + seed. */
SDPC_API sdpc_status sdpc_dataset_generate(const sdpc_config* cfg, uint64_t seed, sdpc_dataset** out);
SDPC_API sdpc_status sdpc_dataset_load(const char* stem, sdpc_dataset** out);
SDPC_API sdpc_status sdpc_dataset_save(const sdpc_dataset* ds, const char* stem);
SDPC_API void sdpc_dataset_free(sdpc_dataset* ds);
SDPC_API size_t sdpc_dataset_size(const sdpc_dataset* ds);
SDPC_API size_t sdpc_dataset_episode_count(const sdpc_dataset* ds);

/* Isomap model on the config's selection features of the dataset. */
SDPC_API sdpc_status sdpc_embedding_fit(const sdpc_config* cfg, const sdpc_dataset* ds, int k_neighbors,
                                        int d_embed, sdpc_embedding** out);
SDPC_API sdpc_status sdpc_embedding_load(const char* path, sdpc_embedding** out);
SDPC_API sdpc_status sdpc_embedding_save(const sdpc_embedding* emb, const char* path);
SDPC_API void sdpc_embedding_free(sdpc_embedding* emb);
SDPC_API double sdpc_embedding_recon_error(const sdpc_embedding* emb);

/* One closed-loop run. `emb` may be NULL unless method is select_manifold;
   n_cols <= 0 uses the config value. Writes the trace CSV and the summary
   JSON when the paths are non-NULL; `stats` may be NULL. */
SDPC_API sdpc_status sdpc_run(const sdpc_config* cfg, const sdpc_dataset* ds, const sdpc_embedding* emb,
                              const char* method, int n_cols, uint64_t seed, const char* trace_csv,
                              const char* summary_json, sdpc_run_stats* stats);

/* Residual table (method,n_cols,cum_residual) for norm and random selection,
   plus manifold when `emb` is given. n_cols <= 0 uses the config sweep list. */
SDPC_API sdpc_status sdpc_sweep_residual(const sdpc_config* cfg, const sdpc_dataset* ds,
                                         const sdpc_embedding* emb, int n_cols, uint64_t seed, const char* csv);

/* Cost table over the config baselines and N_cols list. `method` restricts
   the baselines when non-NULL. */
SDPC_API sdpc_status sdpc_sweep_cost(const sdpc_config* cfg, const sdpc_dataset* ds, const sdpc_embedding* emb,
                                     const char* method, int n_cols, uint64_t seed, const char* csv);

SDPC_API sdpc_status sdpc_sweep_isomap(const sdpc_config* cfg, const sdpc_dataset* ds, const char* csv);

SDPC_API sdpc_status sdpc_contrast(const sdpc_config* cfg, uint64_t seed, int queries, const char* csv);

#ifdef __cplusplus
}
#endif

#endif
