#include "sdpc/sdpc.h"

#include "sdpc/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

struct sdpc_config {
    sdpc::ExperimentConfig cfg;
    std::string hash_hex;
};

struct sdpc_dataset {
    sdpc::Dataset data;
};

struct sdpc_embedding {
    sdpc::EmbeddingModel model;
};

namespace {

thread_local std::string g_last_error;

template <class F>
sdpc_status guarded(F&& f)
{
    g_last_error.clear();
    try {
        f();
        return SDPC_OK;
    } catch (const sdpc::ConfigError& e) {
        g_last_error = e.what();
        return SDPC_ERR_CONFIG;
    } catch (const sdpc::NumericalError& e) {
        g_last_error = e.what();
        return SDPC_ERR_NUMERICAL;
    } catch (const sdpc::IoError& e) {
        g_last_error = e.what();
        return SDPC_ERR_IO;
    } catch (const sdpc::DimensionError& e) {
        g_last_error = e.what();
        return SDPC_ERR_ARGUMENT;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return SDPC_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return SDPC_ERR_INTERNAL;
    }
}

void need(const void* p, const char* what)
{
    if (!p)
        throw sdpc::DimensionError(std::string(what) + " is NULL");
}

sdpc_config* wrap(sdpc::ExperimentConfig cfg)
{
    auto out = std::make_unique<sdpc_config>();
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(cfg.hash));
    out->hash_hex = buf;
    out->cfg = std::move(cfg);
    return out.release();
}

const sdpc::EmbeddingModel* model_of(const sdpc_embedding* emb) { return emb ? &emb->model : nullptr; }

sdpc::Index resolve_n_cols(const sdpc::ExperimentConfig& cfg, int n_cols)
{
    return n_cols > 0 ? static_cast<sdpc::Index>(n_cols) : cfg.outer.n_cols;
}

}  // namespace

extern "C" {

const char* sdpc_version(void) { return "0.1.0"; }

const char* sdpc_last_error(void) { return g_last_error.c_str(); }

sdpc_status sdpc_config_load(const char* path, sdpc_config** out)
{
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = wrap(sdpc::load_config(path));
    });
}

sdpc_status sdpc_config_parse(const char* text, sdpc_config** out)
{
    return guarded([&] {
        need(text, "text");
        need(out, "out");
        *out = wrap(sdpc::parse_config(text));
    });
}

void sdpc_config_free(sdpc_config* cfg) { delete cfg; }

const char* sdpc_config_name(const sdpc_config* cfg) { return cfg ? cfg->cfg.name.c_str() : ""; }

const char* sdpc_config_output_dir(const sdpc_config* cfg) { return cfg ? cfg->cfg.output_dir.c_str() : ""; }

size_t sdpc_config_seed_count(const sdpc_config* cfg) { return cfg ? cfg->cfg.seeds.size() : 0; }

uint64_t sdpc_config_seed(const sdpc_config* cfg, size_t i)
{
    return cfg && i < cfg->cfg.seeds.size() ? cfg->cfg.seeds[i] : 0;
}

int sdpc_config_n_cols(const sdpc_config* cfg) { return cfg ? static_cast<int>(cfg->cfg.outer.n_cols) : 0; }

size_t sdpc_config_baseline_count(const sdpc_config* cfg) { return cfg ? cfg->cfg.baselines.size() : 0; }

const char* sdpc_config_baseline(const sdpc_config* cfg, size_t i)
{
    return cfg && i < cfg->cfg.baselines.size() ? cfg->cfg.baselines[i].c_str() : "";
}

int sdpc_config_k_neighbors(const sdpc_config* cfg) { return cfg ? cfg->cfg.k_neighbors : 0; }

int sdpc_config_d_embed(const sdpc_config* cfg) { return cfg ? cfg->cfg.d_embed : 0; }

const char* sdpc_config_hash(const sdpc_config* cfg) { return cfg ? cfg->hash_hex.c_str() : ""; }

sdpc_status sdpc_dataset_generate(const sdpc_config* cfg, uint64_t seed, sdpc_dataset** out)
{
    return guarded([&] {
        need(cfg, "config");
        need(out, "out");
        sdpc::ExperimentConfig c = cfg->cfg;
        c.data.seed += seed;
        *out = new sdpc_dataset{sdpc::generate_data(c)};
    });
}

sdpc_status sdpc_dataset_load(const char* stem, sdpc_dataset** out)
{
    return guarded([&] {
        need(stem, "stem");
        need(out, "out");
        *out = new sdpc_dataset{sdpc::load_dataset(stem)};
    });
}

sdpc_status sdpc_dataset_save(const sdpc_dataset* ds, const char* stem)
{
    return guarded([&] {
        need(ds, "dataset");
        need(stem, "stem");
        const std::filesystem::path p(stem);
        if (p.has_parent_path())
            std::filesystem::create_directories(p.parent_path());
        sdpc::save_dataset(ds->data, stem);
    });
}

void sdpc_dataset_free(sdpc_dataset* ds) { delete ds; }

size_t sdpc_dataset_size(const sdpc_dataset* ds) { return ds ? static_cast<size_t>(ds->data.size()) : 0; }

size_t sdpc_dataset_episode_count(const sdpc_dataset* ds) { return ds ? ds->data.episodes().size() : 0; }

sdpc_status sdpc_embedding_fit(const sdpc_config* cfg, const sdpc_dataset* ds, int k_neighbors, int d_embed,
                               sdpc_embedding** out)
{
    return guarded([&] {
        need(cfg, "config");
        need(ds, "dataset");
        need(out, "out");
        const int k = k_neighbors > 0 ? k_neighbors : cfg->cfg.k_neighbors;
        const int d = d_embed > 0 ? d_embed : cfg->cfg.d_embed;
        *out = new sdpc_embedding{sdpc::fit_isomap(sdpc::embedding_points(cfg->cfg, ds->data), k, d)};
    });
}

sdpc_status sdpc_embedding_load(const char* path, sdpc_embedding** out)
{
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new sdpc_embedding{sdpc::load_embedding(path)};
    });
}

sdpc_status sdpc_embedding_save(const sdpc_embedding* emb, const char* path)
{
    return guarded([&] {
        need(emb, "embedding");
        need(path, "path");
        const std::filesystem::path p(path);
        if (p.has_parent_path())
            std::filesystem::create_directories(p.parent_path());
        sdpc::save_embedding(emb->model, path);
    });
}

void sdpc_embedding_free(sdpc_embedding* emb) { delete emb; }

double sdpc_embedding_recon_error(const sdpc_embedding* emb)
{
    return emb ? sdpc::reconstruction_error(emb->model) : -1.0;
}

sdpc_status sdpc_run(const sdpc_config* cfg, const sdpc_dataset* ds, const sdpc_embedding* emb, const char* method,
                     int n_cols, uint64_t seed, const char* trace_csv, const char* summary_json,
                     sdpc_run_stats* stats)
{
    return guarded([&] {
        need(cfg, "config");
        need(ds, "dataset");
        need(method, "method");
        const sdpc::RunResult r = sdpc::run_experiment(method, cfg->cfg, ds->data, model_of(emb),
                                                       resolve_n_cols(cfg->cfg, n_cols), seed);
        if (trace_csv) {
            const std::filesystem::path p(trace_csv);
            if (p.has_parent_path())
                std::filesystem::create_directories(p.parent_path());
            sdpc::save_trace(r.trace, trace_csv);
        }
        if (summary_json) {
            std::vector<sdpc::SummaryCheck> checks;
            checks.push_back({"finite_cost", !r.trace.diverged, r.trace.diverged ? "diverged" : "completed"});
            sdpc::write_summary_json(cfg->cfg, {r}, checks, summary_json);
        }
        if (stats) {
            std::vector<int> prof = sdpc::combination_profile(r.trace);
            double median = 0.0;
            if (!prof.empty()) {
                std::nth_element(prof.begin(), prof.begin() + static_cast<long>(prof.size() / 2), prof.end());
                median = prof[prof.size() / 2];
            }
            *stats = {r.trace.total_cost,
                      r.trace.diverged ? 1 : 0,
                      static_cast<int>(r.trace.rows.size()),
                      static_cast<int>(r.n_cols),
                      r.trace.selection_ms_total(),
                      r.trace.qp_ms_total(),
                      median};
        }
    });
}

sdpc_status sdpc_sweep_residual(const sdpc_config* cfg, const sdpc_dataset* ds, const sdpc_embedding* emb,
                                int n_cols, uint64_t seed, const char* csv)
{
    return guarded([&] {
        need(cfg, "config");
        need(ds, "dataset");
        need(csv, "csv");
        const sdpc::ExperimentConfig& c = cfg->cfg;
        std::vector<sdpc::Index> list;
        if (n_cols > 0)
            list.push_back(n_cols);
        else
            list = c.sweep.n_cols.empty() ? std::vector<sdpc::Index>{c.outer.n_cols} : c.sweep.n_cols;
        if (std::find(list.begin(), list.end(), ds->data.size()) == list.end())
            list.push_back(ds->data.size());
        std::vector<std::string> methods{"norm", "random"};
        if (emb)
            methods.push_back("manifold");
        const sdpc::Episode ep = sdpc::make_holdout_episode(c, c.sweep.holdout_seed);
        const sdpc::Dataset holdout = sdpc::extract_trajectories({ep}, c.dpc.t_past, c.dpc.t_future);
        const auto rows = sdpc::residual_sweep(ds->data, holdout, list, methods,
                                               sdpc::selection_method(c, ds->data), model_of(emb), seed,
                                               c.dpc.affine);
        sdpc::write_residual_csv(rows, csv);
    });
}

sdpc_status sdpc_sweep_cost(const sdpc_config* cfg, const sdpc_dataset* ds, const sdpc_embedding* emb,
                            const char* method, int n_cols, uint64_t seed, const char* csv)
{
    return guarded([&] {
        need(cfg, "config");
        need(ds, "dataset");
        need(csv, "csv");
        sdpc::ExperimentConfig c = cfg->cfg;
        if (method)
            c.baselines = {method};
        if (n_cols > 0)
            c.sweep.n_cols = {n_cols};
        sdpc::write_cost_csv(sdpc::cost_sweep(c, ds->data, model_of(emb), seed), csv);
    });
}

sdpc_status sdpc_sweep_isomap(const sdpc_config* cfg, const sdpc_dataset* ds, const char* csv)
{
    return guarded([&] {
        need(cfg, "config");
        need(ds, "dataset");
        need(csv, "csv");
        const sdpc::ExperimentConfig& c = cfg->cfg;
        const std::vector<int> ks = c.sweep.k_neighbors.empty() ? std::vector<int>{c.k_neighbors} : c.sweep.k_neighbors;
        const std::vector<int> dims = c.sweep.d_embed.empty() ? std::vector<int>{c.d_embed} : c.sweep.d_embed;
        sdpc::write_isomap_csv(sdpc::isomap_grid(sdpc::embedding_points(c, ds->data), ks, dims), csv);
    });
}

sdpc_status sdpc_contrast(const sdpc_config* cfg, uint64_t seed, int queries, const char* csv)
{
    return guarded([&] {
        need(cfg, "config");
        need(csv, "csv");
        sdpc::ExperimentConfig c = cfg->cfg;
        if (c.sweep.contrast_lengths.empty())
            throw sdpc::ConfigError("contrast: config has no sweep.contrast_lengths");
        c.data.seed += seed;
        const std::vector<sdpc::Episode> eps = c.data.policy == sdpc::DataPolicy::demonstrations
            ? sdpc::generate_demonstrations(c.data.episodes, c.data.steps, c.data.seed, c.plant.cartpole)
            : sdpc::generate_episodes(c.plant, c.data);
        const auto rows = sdpc::contrast_curve(eps, c.sweep.contrast_lengths, c.k_neighbors, c.d_embed,
                                               queries > 0 ? queries : 50, seed);
        sdpc::write_contrast_csv(rows, csv);
    });
}

}  // extern "C"
