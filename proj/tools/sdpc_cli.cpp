// Command-line front end. Talks to the library only through the C API.
#include "sdpc/sdpc.h"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>

namespace {

constexpr int kExitConfig = 2;

struct Options {
    std::string config;
    long long seed = -1;
    std::string out;
    std::string method;
    int n_cols = 0;
    std::string embedding;
};

template <class T, void (*Free)(T*)>
struct Deleter {
    void operator()(T* p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<sdpc_config, Deleter<sdpc_config, sdpc_config_free>>;
using DatasetPtr = std::unique_ptr<sdpc_dataset, Deleter<sdpc_dataset, sdpc_dataset_free>>;
using EmbeddingPtr = std::unique_ptr<sdpc_embedding, Deleter<sdpc_embedding, sdpc_embedding_free>>;

class Failure {
public:
    explicit Failure(sdpc_status s) : status(s) {}
    sdpc_status status;
};

void check(sdpc_status s)
{
    if (s != SDPC_OK) {
        std::fprintf(stderr, "error: %s\n", sdpc_last_error());
        throw Failure(s);
    }
}

int exit_code(sdpc_status s)
{
    switch (s) {
    case SDPC_OK:
        return 0;
    case SDPC_ERR_CONFIG:
    case SDPC_ERR_ARGUMENT:
        return kExitConfig;
    case SDPC_ERR_NUMERICAL:
        return 3;
    default:
        return 1;
    }
}

class Session {
public:
    explicit Session(const Options& o) : opts_(o)
    {
        sdpc_config* c = nullptr;
        check(sdpc_config_load(o.config.c_str(), &c));
        cfg_.reset(c);
        seed_ = o.seed >= 0 ? static_cast<uint64_t>(o.seed)
                            : (sdpc_config_seed_count(c) ? sdpc_config_seed(c, 0) : 0);
        out_ = o.out.empty() ? sdpc_config_output_dir(c) : o.out;
        std::filesystem::create_directories(out_);
    }

    const sdpc_config* cfg() const { return cfg_.get(); }
    uint64_t seed() const { return seed_; }
    std::string path(const std::string& file) const { return (std::filesystem::path(out_) / file).string(); }

    const sdpc_dataset* dataset()
    {
        if (!ds_) {
            sdpc_dataset* d = nullptr;
            check(sdpc_dataset_generate(cfg(), seed_, &d));
            ds_.reset(d);
        }
        return ds_.get();
    }

    const sdpc_embedding* embedding()
    {
        if (!emb_) {
            sdpc_embedding* e = nullptr;
            if (!opts_.embedding.empty())
                check(sdpc_embedding_load(opts_.embedding.c_str(), &e));
            else
                check(sdpc_embedding_fit(cfg(), dataset(), 0, 0, &e));
            emb_.reset(e);
        }
        return emb_.get();
    }

    bool uses_manifold() const
    {
        if (opts_.method == "select_manifold")
            return true;
        if (!opts_.method.empty())
            return false;
        for (size_t i = 0; i < sdpc_config_baseline_count(cfg()); ++i)
            if (std::string(sdpc_config_baseline(cfg(), i)) == "select_manifold")
                return true;
        return false;
    }

private:
    Options opts_;
    ConfigPtr cfg_;
    DatasetPtr ds_;
    EmbeddingPtr emb_;
    uint64_t seed_ = 0;
    std::string out_;
};

void cmd_gen_data(Session& s)
{
    const std::string stem = s.path("data_seed" + std::to_string(s.seed()));
    check(sdpc_dataset_save(s.dataset(), stem.c_str()));
    std::printf("%zu episodes, %zu windows -> %s.csv\n", sdpc_dataset_episode_count(s.dataset()),
                sdpc_dataset_size(s.dataset()), stem.c_str());
}

void cmd_fit_embedding(Session& s)
{
    sdpc_embedding* e = nullptr;
    check(sdpc_embedding_fit(s.cfg(), s.dataset(), 0, 0, &e));
    EmbeddingPtr emb(e);
    const std::string path = s.path("embedding_seed" + std::to_string(s.seed()) + ".bin");
    check(sdpc_embedding_save(emb.get(), path.c_str()));
    std::printf("recon_error %.6g -> %s\n", sdpc_embedding_recon_error(emb.get()), path.c_str());
}

void cmd_run(Session& s, const Options& o)
{
    std::string method = o.method;
    if (method.empty())
        method = sdpc_config_baseline_count(s.cfg()) ? sdpc_config_baseline(s.cfg(), 0) : "select_norm";
    const sdpc_embedding* emb = method == "select_manifold" ? s.embedding() : nullptr;
    const std::string tag = method + "_seed" + std::to_string(s.seed());
    const std::string trace = s.path("trace_" + tag + ".csv");
    const std::string summary = s.path("summary_" + tag + ".json");
    sdpc_run_stats st{};
    check(sdpc_run(s.cfg(), s.dataset(), emb, method.c_str(), o.n_cols, s.seed(), trace.c_str(), summary.c_str(),
                   &st));
    std::printf("%s n_cols %d steps %d cost %.6g%s sel_ms %.1f qp_ms %.1f\n", method.c_str(), st.n_cols, st.steps,
                st.total_cost, st.diverged ? " (diverged)" : "", st.sel_ms_total, st.qp_ms_total);
    std::printf("trace -> %s\nsummary -> %s\n", trace.c_str(), summary.c_str());
}

void cmd_sweep_residual(Session& s, const Options& o)
{
    const sdpc_embedding* emb = s.uses_manifold() ? s.embedding() : nullptr;
    const std::string csv = s.path("residual.csv");
    check(sdpc_sweep_residual(s.cfg(), s.dataset(), emb, o.n_cols, s.seed(), csv.c_str()));
    std::printf("residual table -> %s\n", csv.c_str());
}

void cmd_sweep_cost(Session& s, const Options& o)
{
    const sdpc_embedding* emb = s.uses_manifold() ? s.embedding() : nullptr;
    const std::string csv = s.path("cost.csv");
    check(sdpc_sweep_cost(s.cfg(), s.dataset(), emb, o.method.empty() ? nullptr : o.method.c_str(), o.n_cols,
                          s.seed(), csv.c_str()));
    std::printf("cost table -> %s\n", csv.c_str());
}

void cmd_sweep_isomap(Session& s)
{
    const std::string csv = s.path("isomap.csv");
    check(sdpc_sweep_isomap(s.cfg(), s.dataset(), csv.c_str()));
    std::printf("isomap grid -> %s\n", csv.c_str());
}

void cmd_contrast(Session& s)
{
    const std::string csv = s.path("contrast.csv");
    check(sdpc_contrast(s.cfg(), s.seed(), 0, csv.c_str()));
    std::printf("contrast curve -> %s\n", csv.c_str());
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Select-DPC experiments"};
    app.require_subcommand(1);
    Options o;

    const auto add = [&](const std::string& name, const std::string& help) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", o.config, "experiment config (JSON)")->required();
        sub->add_option("--seed", o.seed, "run seed (default: first seed of the config)");
        sub->add_option("--out", o.out, "output directory (default: config output_dir)");
        sub->add_option("--method", o.method, "controller / baseline name");
        sub->add_option("--n-cols", o.n_cols, "selected columns per solve");
        sub->add_option("--embedding", o.embedding, "saved embedding to use instead of fitting");
        return sub;
    };
    CLI::App* gen = add("gen-data", "generate and save the dataset");
    CLI::App* fit = add("fit-embedding", "fit and save the Isomap embedding");
    CLI::App* run = add("run", "single closed-loop run: trace CSV and summary JSON");
    CLI::App* res = add("sweep-residual", "prediction residual vs N_cols");
    CLI::App* cost = add("sweep-cost", "closed-loop cost vs N_cols per baseline");
    CLI::App* iso = add("sweep-isomap", "reconstruction error over the (k, d_embed) grid");
    CLI::App* con = add("contrast", "relative contrast vs window length");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::fprintf(stderr, "%s", app.help().c_str());
        return kExitConfig;
    }

    try {
        Session s(o);
        if (gen->parsed())
            cmd_gen_data(s);
        else if (fit->parsed())
            cmd_fit_embedding(s);
        else if (run->parsed())
            cmd_run(s, o);
        else if (res->parsed())
            cmd_sweep_residual(s, o);
        else if (cost->parsed())
            cmd_sweep_cost(s, o);
        else if (iso->parsed())
            cmd_sweep_isomap(s);
        else if (con->parsed())
            cmd_contrast(s);
    } catch (const Failure& f) {
        return exit_code(f.status);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
