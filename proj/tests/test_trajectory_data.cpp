#include "oracles.hpp"
#include "sdpc/predictor.hpp"
#include "sdpc/trajectory_data.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <numeric>

using namespace sdpc;

namespace {

Episode make_episode(std::mt19937_64& rng, Index steps, int m, int p, int id)
{
    Episode ep;
    ep.u = oracle::random_matrix(rng, steps, m);
    ep.y = oracle::random_matrix(rng, steps, p);
    ep.id = id;
    return ep;
}

}  // namespace

TEST_CASE("build_hankel follows the sliding-window definition")
{
    Mat s(4, 1);
    s << 1, 2, 3, 4;
    Mat expected(2, 3);
    expected << 1, 2, 3, 2, 3, 4;
    CHECK(build_hankel(s, 2) == expected);

    CHECK(build_hankel(Mat::Zero(5, 2), 3) == Mat::Zero(6, 3));

    // PRBS-like +-1 signal, depth 4: check every entry by index arithmetic.
    std::mt19937_64 rng(3);
    Mat prbs(10, 1);
    for (Index i = 0; i < 10; ++i)
        prbs(i, 0) = oracle::uniform(rng, 0, 1) < 0.5 ? -1.0 : 1.0;
    const Mat h = build_hankel(prbs, 4);
    REQUIRE(h.cols() == 7);
    for (Index j = 0; j < h.cols(); ++j)
        for (Index i = 0; i < 4; ++i)
            CHECK(h(i, j) == prbs(i + j, 0));

    CHECK_THROWS_AS(build_hankel(Mat::Zero(2, 1), 3), DimensionError);
}

TEST_CASE("extract_trajectories takes windows inside episodes only")
{
    std::mt19937_64 rng(1);
    {
        auto ds = extract_trajectories({make_episode(rng, 100, 1, 2, 0)}, 20, 30);
        CHECK(ds.size() == 51);
    }
    {
        std::vector<Episode> eps;
        for (int e = 0; e < 100; ++e)
            eps.push_back(make_episode(rng, 100, 1, 1, e));
        CHECK(extract_trajectories(std::move(eps), 20, 30).size() == 5100);
    }
    {
        auto ds = extract_trajectories({make_episode(rng, 60, 1, 1, 7), make_episode(rng, 40, 1, 1, 8)}, 20, 30);
        CHECK(ds.size() == 11);
        for (Index i = 0; i < ds.size(); ++i)
            CHECK(ds.episode_id(i) == 7);
    }
    CHECK_THROWS_AS(extract_trajectories({make_episode(rng, 10, 1, 1, 0)}, 5, 6), DimensionError);
}

TEST_CASE("windows never span episodes and match the source samples")
{
    std::mt19937_64 rng(11);
    std::vector<Episode> eps;
    for (int e = 0; e < 5; ++e)
        eps.push_back(make_episode(rng, 12 + 3 * e, 2, 3, 100 + e));
    const auto copy = eps;
    auto ds = extract_trajectories(std::move(eps), 3, 4);
    Index col = 0;
    for (const auto& ep : copy) {
        for (Index s = 0; s + 7 <= ep.steps(); ++s, ++col) {
            const Trajectory t = ds.trajectory(col);
            CHECK(ds.episode_id(col) == ep.id);
            CHECK(t.u == ep.u.middleRows(s, 7));
            CHECK(t.y == ep.y.middleRows(s, 7));
        }
    }
    CHECK(col == ds.size());
}

TEST_CASE("trajectory flatten/unflatten round trip (property)")
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int tp = 1 + static_cast<int>(rng() % 6), tf = 1 + static_cast<int>(rng() % 6);
        const int m = 1 + static_cast<int>(rng() % 3), p = 1 + static_cast<int>(rng() % 4);
        Trajectory t(oracle::random_matrix(rng, tp + tf, m), oracle::random_matrix(rng, tp + tf, p), tp, tf);
        const Vec f = t.flatten();
        REQUIRE(f.size() == (tp + tf) * (m + p));
        const Trajectory back = Trajectory::unflatten(f, tp, tf, m, p);
        CHECK(back.u == t.u);
        CHECK(back.y == t.y);
    }
    CHECK_THROWS_AS(Trajectory(Mat::Zero(3, 1), Mat::Zero(4, 1), 1, 2), DimensionError);
}

TEST_CASE("check_persistency")
{
    CHECK_FALSE(check_persistency(Mat::Constant(50, 1, 2.0), 2).exciting);
    CHECK(check_persistency(Mat::Constant(50, 1, 2.0), 2).rank == 1);

    std::mt19937_64 rng(9);
    const auto pe = check_persistency(oracle::random_matrix(rng, 200, 1), 10);
    CHECK(pe.exciting);
    CHECK(pe.rank == 10);

    // length L: single Hankel column cannot have full row rank when L*m > 1
    CHECK_FALSE(check_persistency(oracle::random_matrix(rng, 4, 1), 4).exciting);
    CHECK_FALSE(check_persistency(oracle::random_matrix(rng, 3, 1), 4).exciting);
}

TEST_CASE("blocks_from partitions dataset columns")
{
    std::mt19937_64 rng(2);
    Episode ep = make_episode(rng, 30, 2, 1, 0);
    const Mat hu = build_hankel(ep.u, 7), hy = build_hankel(ep.y, 7);
    auto ds = extract_trajectories({ep}, 3, 4);
    const auto all = blocks_from_all(ds, false);
    CHECK(all.u_past == hu.topRows(6));
    CHECK(all.u_future == hu.bottomRows(8));
    CHECK(all.y_past == hy.topRows(3));
    CHECK(all.y_future == hy.bottomRows(4));

    const std::vector<Index> three{3};
    const auto one = blocks_from(ds, three, true);
    const Trajectory t3 = ds.trajectory(3);
    CHECK(one.cols() == 1);
    CHECK(Vec(one.u_past.col(0)) == t3.u_past());
    CHECK(Vec(one.y_future.col(0)) == t3.y_future());
    CHECK(one.ones.size() == 1);

    const std::vector<Index> perm{5, 1, 9};
    const auto pb = blocks_from(ds, perm, false);
    for (Index j = 0; j < 3; ++j)
        CHECK(pb.stacked().col(j) == all.stacked().col(perm[static_cast<std::size_t>(j)]));

    CHECK_THROWS_AS(blocks_from(ds, std::span<const Index>{}, false), DimensionError);
}

TEST_CASE("lq_compress keeps the column space")
{
    std::mt19937_64 rng(4);
    SUBCASE("duplicated columns")
    {
        Episode ep = make_episode(rng, 12, 1, 1, 0);
        auto ds = extract_trajectories({ep}, 2, 2);
        std::vector<Index> idx{0, 1, 2, 0, 1, 2, 2};
        const auto b = blocks_from(ds, idx, false);
        const auto c = lq_compress(b);
        CHECK(c.cols() == 3);
    }
    SUBCASE("single column is a rescaling")
    {
        Episode ep = make_episode(rng, 12, 1, 1, 0);
        auto ds = extract_trajectories({ep}, 2, 2);
        const std::vector<Index> idx{4};
        const auto b = blocks_from(ds, idx, true);
        const auto c = lq_compress(b);
        REQUIRE(c.cols() == 1);
        const Vec s0 = b.stacked().col(0), s1 = c.stacked().col(0);
        CHECK(std::abs(std::abs(s0.normalized().dot(s1.normalized())) - 1.0) < 1e-12);
    }
    SUBCASE("LTI data: predictor output unchanged")
    {
        const auto sys = oracle::random_lti(rng, 3, 1, 1);
        Episode ep;
        ep.u = oracle::random_matrix(rng, 400, 1);
        ep.y = oracle::simulate_closed_form(sys, Vec::Zero(3), ep.u);
        auto ds = extract_trajectories({ep}, 3, 6);
        const auto b = blocks_from_all(ds, false);
        const auto c = lq_compress(b);
        CHECK(c.cols() <= b.stacked().rows());
        CHECK(c.cols() == numeric_rank(b.stacked()));

        // mutual projection residuals
        const Mat hb = b.stacked(), hc = c.stacked();
        const Mat proj_b = hc * hc.completeOrthogonalDecomposition().solve(hb);
        const Mat proj_c = hb * hb.completeOrthogonalDecomposition().solve(hc);
        CHECK((proj_b - hb).norm() / hb.norm() < 1e-10);
        CHECK((proj_c - hc).norm() / hc.norm() < 1e-10);

        PredictorContext full{b, 0.0}, comp{c, 0.0};
        for (int q = 0; q < 5; ++q) {
            Mat uq = oracle::random_matrix(rng, 10, 1);
            Mat yq = oracle::simulate_closed_form(sys, oracle::random_matrix(rng, 3, 1), uq);
            Trajectory t(uq.topRows(9), yq.topRows(9), 3, 6);
            const Vec a = ls_predict(full, t.u_past(), t.y_past(), t.u_future());
            const Vec bb = ls_predict(comp, t.u_past(), t.y_past(), t.u_future());
            CHECK((a - bb).norm() < 1e-8);
        }
    }
}

TEST_CASE("fundamental lemma: LTI trajectories lie in the Hankel column space")
{
    std::mt19937_64 rng(42);
    const int n = 4, L = 20;
    const auto sys = oracle::random_lti(rng, n, 1, 1);
    const Mat u = oracle::random_matrix(rng, 200, 1);
    const Mat y = oracle::simulate_closed_form(sys, Vec::Zero(n), u);
    REQUIRE(check_persistency(u, L + n).exciting);
    Mat h(2 * L, 200 - L + 1);
    h << build_hankel(u, L), build_hankel(y, L);
    const auto cod = h.completeOrthogonalDecomposition();
    for (int trial = 0; trial < 10; ++trial) {
        const Mat uv = oracle::random_matrix(rng, L, 1);
        const Mat yv = oracle::simulate_closed_form(sys, oracle::random_matrix(rng, n, 1), uv);
        Vec w(2 * L);
        w << uv.col(0), yv.col(0);
        const Vec g = cod.solve(w);
        CHECK((h * g - w).norm() < 1e-6);
    }
}

TEST_CASE("dataset serialization round trip")
{
    std::mt19937_64 rng(8);
    std::vector<Episode> eps;
    for (int e = 0; e < 3; ++e) {
        Episode ep = make_episode(rng, 15, 2, 3, e);
        ep.u *= 1e5;
        ep.y *= 1e-7;
        eps.push_back(ep);
    }
    auto ds = extract_trajectories(std::move(eps), 2, 3, DatasetMeta{"toy", 0.05});
    const auto dir = std::filesystem::temp_directory_path() / "sdpc_ds_test";
    std::filesystem::create_directories(dir);
    const std::string stem = (dir / "toy").string();
    save_dataset(ds, stem);
    const auto back = load_dataset(stem);
    REQUIRE(back.size() == ds.size());
    CHECK(back.meta().env == "toy");
    CHECK(back.meta().dt == doctest::Approx(0.05));
    CHECK(back.layout() == ds.layout());
    const double rel = ((back.flat() - ds.flat()).cwiseAbs().array() /
                        (ds.flat().cwiseAbs().array() + 1e-300))
                           .maxCoeff();
    CHECK(rel < 1e-12);
    CHECK(back.episode_ids() == ds.episode_ids());
    std::filesystem::remove_all(dir);

    CHECK_THROWS_AS(load_dataset((dir / "missing").string()), IoError);
}
