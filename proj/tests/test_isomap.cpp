#include "oracles.hpp"
#include "sdpc/isomap.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace sdpc;

namespace {

Mat pairwise(const Mat& cols)
{
    const Index n = cols.cols();
    Mat d(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            d(i, j) = (cols.col(i) - cols.col(j)).norm();
    return d;
}

double correlation(const Mat& a, const Mat& b)
{
    const Index n = a.rows();
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0, c = 0;
    for (Index j = 1; j < n; ++j)
        for (Index i = 0; i < j; ++i) {
            sa += a(i, j);
            sb += b(i, j);
            saa += a(i, j) * a(i, j);
            sbb += b(i, j) * b(i, j);
            sab += a(i, j) * b(i, j);
            c += 1;
        }
    return (sab - sa * sb / c) / std::sqrt((saa - sa * sa / c) * (sbb - sb * sb / c));
}

/// Swiss roll in R^3 with its intrinsic (unrolled) coordinates.
void swiss_roll(std::mt19937_64& rng, Index n, Mat& pts, Mat& intrinsic)
{
    pts.resize(3, n);
    intrinsic.resize(2, n);
    for (Index i = 0; i < n; ++i) {
        const double t = 1.5 * M_PI * (1.0 + 2.0 * oracle::uniform(rng, 0.0, 1.0));
        const double h = oracle::uniform(rng, 0.0, 10.0);
        pts(0, i) = t * std::cos(t);
        pts(1, i) = h;
        pts(2, i) = t * std::sin(t);
        // Arc length of the spiral r = t from t0.
        auto arc = [](double s) { return 0.5 * (s * std::sqrt(1 + s * s) + std::asinh(s)); };
        intrinsic(0, i) = arc(t) - arc(1.5 * M_PI);
        intrinsic(1, i) = h;
    }
}

}  // namespace

TEST_CASE("collinear points embed isometrically")
{
    Mat pts(2, 4);
    pts << 0, 1, 3, 6, 0, 0, 0, 0;
    const EmbeddingModel m = fit_isomap(pts, 2, 1);
    CHECK(m.geodesic(0, 3) == doctest::Approx(6.0));
    CHECK(m.geodesic(1, 2) == doctest::Approx(2.0));
    const Mat emb = m.embedding.transpose();
    CHECK((pairwise(emb) - pairwise(pts)).norm() < 1e-9);
    CHECK(reconstruction_error(m) < 1e-12);
}

TEST_CASE("a flat patch in R^3 recovers planar distances")
{
    std::mt19937_64 rng(4);
    const Index n = 200;
    Mat plane(2, n);
    for (Index i = 0; i < n; ++i) {
        plane(0, i) = oracle::uniform(rng, 0.0, 4.0);
        plane(1, i) = oracle::uniform(rng, 0.0, 2.0);
    }
    const Mat Q = Eigen::HouseholderQR<Mat>(oracle::random_matrix(rng, 3, 3)).householderQ();
    const Mat pts = Q.leftCols(2) * plane;
    const EmbeddingModel m = fit_isomap(pts, 10, 2);
    const Mat truth = pairwise(plane);
    CHECK(correlation(pairwise(Mat(m.embedding.transpose())), truth) > 0.99);
    CHECK(reconstruction_error(m) < 0.02);
}

TEST_CASE("geodesic matrix properties")
{
    std::mt19937_64 rng(8);
    Mat pts, intrinsic;
    swiss_roll(rng, 150, pts, intrinsic);
    const EmbeddingModel m = fit_isomap(pts, 8, 2);
    const Mat& G = m.geodesic;
    const Mat E = pairwise(pts);
    CHECK((G - G.transpose()).norm() == 0.0);
    CHECK(G.diagonal().norm() == 0.0);
    for (Index i = 0; i < G.rows(); ++i)
        for (Index j = 0; j < G.cols(); ++j) {
            REQUIRE(G(i, j) >= E(i, j) - 1e-12);
            for (Index k = 0; k < G.rows(); k += 17)
                REQUIRE(G(i, j) <= G(i, k) + G(k, j) + 1e-12);
        }
}

TEST_CASE("swiss roll unrolls")
{
    std::mt19937_64 rng(1);
    Mat pts, intrinsic;
    swiss_roll(rng, 600, pts, intrinsic);
    const EmbeddingModel m = fit_isomap(pts, 10, 2);
    const Mat truth = pairwise(intrinsic);
    CHECK(correlation(m.geodesic, truth) > 0.99);
    CHECK(correlation(pairwise(Mat(m.embedding.transpose())), truth) > 0.98);
    // Straight-line distances through the roll are far from the intrinsic ones.
    CHECK(correlation(pairwise(pts), truth) < 0.9);

    SUBCASE("error does not grow with the embedding dimension")
    {
        double prev = 1.0;
        for (int d = 1; d <= 4; ++d) {
            const double e = reconstruction_error(refit_dimension(m, d));
            CHECK(e <= prev + 1e-9);
            prev = e;
        }
    }
}

TEST_CASE("out-of-sample embedding")
{
    std::mt19937_64 rng(2);
    Mat pts, intrinsic;
    swiss_roll(rng, 400, pts, intrinsic);
    const EmbeddingModel m = fit_isomap(pts, 10, 2);

    SUBCASE("training points map to their own coordinates")
    {
        for (Index i = 0; i < m.size(); i += 23) {
            const EmbedResult r = embed(m, pts.col(i));
            CHECK(r.linked);
            CHECK((r.coords - m.embedding.row(i).transpose()).norm() < 1e-8 * (1.0 + r.coords.norm()));
        }
    }
    SUBCASE("a neighbor midpoint lands near the embedded midpoint")
    {
        const Index i = 5;
        Index j = -1;
        double best = kInf;
        for (Index c = 0; c < m.size(); ++c)
            if (c != i && (pts.col(c) - pts.col(i)).norm() < best) {
                best = (pts.col(c) - pts.col(i)).norm();
                j = c;
            }
        const EmbedResult r = embed(m, 0.5 * (pts.col(i) + pts.col(j)));
        const Vec mid = 0.5 * (m.embedding.row(i) + m.embedding.row(j)).transpose();
        const double span = (m.embedding.row(i) - m.embedding.row(j)).norm();
        CHECK((r.coords - mid).norm() <= span + 1e-9);
    }
    SUBCASE("a far query is not linked")
    {
        Vec far = pts.col(0);
        far[1] += 1e3;
        CHECK_FALSE(embed(m, far).linked);
    }
    SUBCASE("dimension mismatch")
    {
        CHECK_THROWS_AS(embed(m, Vec::Zero(2)), DimensionError);
    }
}

TEST_CASE("embedding distances are translation invariant")
{
    std::mt19937_64 rng(6);
    Mat pts, intrinsic;
    swiss_roll(rng, 200, pts, intrinsic);
    const EmbeddingModel a = fit_isomap(pts, 8, 2);
    const EmbeddingModel b = fit_isomap(pts.colwise() + Eigen::Vector3d(5, -2, 7).cast<double>(), 8, 2);
    CHECK((a.geodesic - b.geodesic).norm() < 1e-9 * a.geodesic.norm());
    CHECK((pairwise(Mat(a.embedding.transpose())) - pairwise(Mat(b.embedding.transpose()))).norm() <
          1e-6 * a.geodesic.norm());
}

TEST_CASE("disconnected neighborhood graph is reported")
{
    Mat pts(1, 8);
    pts << 0, 0.1, 0.2, 0.3, 100, 100.1, 100.2, 100.3;
    try {
        fit_isomap(pts, 2, 1);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("4") != std::string::npos);
    }
}

TEST_CASE("bad hyperparameters")
{
    const Mat pts = Mat::Random(2, 5);
    CHECK_THROWS_AS(fit_isomap(pts, 0, 1), ConfigError);
    CHECK_THROWS_AS(fit_isomap(pts, 5, 1), ConfigError);
    CHECK_THROWS_AS(fit_isomap(pts, 2, 5), ConfigError);
}

TEST_CASE("lanczos agrees with the dense eigensolver")
{
    std::mt19937_64 rng(12);
    const Mat X = oracle::random_matrix(rng, 120, 120);
    Mat S = X * X.transpose();
    Vec vd, vl;
    Mat Vd, Vl;
    top_eigenpairs(S, 5, vd, Vd, FitOptions{1000});
    top_eigenpairs(S, 5, vl, Vl, FitOptions{0});
    CHECK((vd - vl).norm() < 1e-8 * vd.norm());
    for (int c = 0; c < 5; ++c)
        CHECK(std::abs(std::abs(Vd.col(c).dot(Vl.col(c))) - 1.0) < 1e-8);
    for (int c = 1; c < 5; ++c)
        CHECK(vd[c] <= vd[c - 1]);

    Mat pts, intrinsic;
    swiss_roll(rng, 300, pts, intrinsic);
    const EmbeddingModel a = fit_isomap(pts, 10, 2, FitOptions{1000});
    const EmbeddingModel b = fit_isomap(pts, 10, 2, FitOptions{0});
    CHECK((a.eigvals - b.eigvals).norm() < 1e-8 * a.eigvals.norm());
    CHECK(reconstruction_error(a) == doctest::Approx(reconstruction_error(b)).epsilon(1e-8));
}

TEST_CASE("embedding cache round trip")
{
    std::mt19937_64 rng(9);
    Mat pts, intrinsic;
    swiss_roll(rng, 120, pts, intrinsic);
    const EmbeddingModel m = fit_isomap(pts, 8, 2);
    const auto dir = std::filesystem::temp_directory_path() / "sdpc_test_isomap";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / embedding_cache_name(m.data_hash, 8, 2)).string();
    save_embedding(m, path);
    const EmbeddingModel r = load_embedding(path);
    CHECK(r.k_neighbors == 8);
    CHECK(r.d_embed == 2);
    CHECK(r.data_hash == m.data_hash);
    CHECK((r.points - m.points).norm() == 0.0);
    CHECK((r.geodesic - m.geodesic).norm() == 0.0);
    CHECK((r.embedding - m.embedding).norm() == 0.0);
    CHECK(r.max_edge == m.max_edge);
    const Vec q = pts.col(3) + Vec::Constant(3, 0.01);
    CHECK((embed(r, q).coords - embed(m, q).coords).norm() == 0.0);

    CHECK(embedding_cache_name(1, 8, 2) != embedding_cache_name(1, 9, 2));
    CHECK(embedding_cache_name(1, 8, 2) != embedding_cache_name(2, 8, 2));
    CHECK_THROWS_AS(load_embedding((dir / "missing.bin").string()), IoError);
    std::filesystem::remove_all(dir);
}
