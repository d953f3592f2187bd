#include <catch2/catch_amalgamated.hpp>

#include "ncil/etf.hpp"

using namespace ncil;

namespace {

// max |M^T M - (K/(K-1)) (I - 11^T/K)| over all entries
double etf_gram_deviation(const Matrix& anchors) {
    const std::size_t k = anchors.cols();
    Matrix gram = matmul(transpose(anchors), anchors);
    const double scale = static_cast<double>(k) / static_cast<double>(k - 1);
    double dev = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double want = scale * ((i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(k));
            dev = std::max(dev, std::abs(gram(i, j) - want));
        }
    return dev;
}

} // namespace

TEST_CASE("build_etf K=2 identity basis", "[etf]") {
    Matrix m = build_etf(Matrix::identity(2));
    const double r = std::sqrt(0.5);
    CHECK(m(0, 0) == Catch::Approx(r));
    CHECK(m(1, 0) == Catch::Approx(-r));
    CHECK(m(0, 1) == Catch::Approx(-r));
    CHECK(m(1, 1) == Catch::Approx(r));
}

TEST_CASE("build_etf column norms and pairwise cosines", "[etf]") {
    Rng rng(7);
    Matrix u = gram_schmidt(rng.gaussian_matrix(8, 4), Matrix(8, 0));
    Matrix m = build_etf(u);
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(norm(m.col(j)) == Catch::Approx(1.0).margin(1e-9));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j)
            CHECK(dot(m.col(i), m.col(j)) == Catch::Approx(-1.0 / 3.0).margin(1e-9));
    CHECK(etf_gram_deviation(m) < 1e-9);
}

TEST_CASE("build_etf rejects bad inputs", "[etf]") {
    CHECK_THROWS_AS(build_etf(Matrix::identity(1)), DimensionError); // K < 2
    Matrix not_orth(3, 2);
    not_orth(0, 0) = 1.0;
    not_orth(0, 1) = 1.0; // dependent columns
    CHECK_THROWS_AS(build_etf(not_orth), NotOrthogonal);
    Matrix wide(3, 4); // d < K fails before the orthogonality check
    CHECK_THROWS_AS(build_etf(wide), DimensionError);
}

TEST_CASE("init_classifier invariants and errors", "[etf]") {
    SECTION("seeded 4-anchor classifier") {
        EtfClassifier c = init_classifier(8, 4, 7);
        CHECK(c.dim == 8);
        CHECK(c.num_classes == 4);
        Matrix bg = matmul(transpose(c.basis), c.basis);
        CHECK(max_abs_diff(bg, Matrix::identity(4)) < 1e-9);
        CHECK(etf_gram_deviation(c.anchors) < 1e-9);
    }

    SECTION("K=2 anchors are antipodal") {
        EtfClassifier c = init_classifier(2, 2, 99);
        Vec sum = add(c.anchors.col(0), c.anchors.col(1));
        CHECK(norm(sum) < 1e-9);
        CHECK(norm(c.anchors.col(0)) == Catch::Approx(1.0).margin(1e-9));
    }

    SECTION("d < K rejected") {
        CHECK_THROWS_AS(init_classifier(3, 4, 0), DimensionError);
        CHECK_THROWS_AS(init_classifier(8, 1, 0), DimensionError);
    }

    SECTION("same seed, same classifier") {
        EtfClassifier a = init_classifier(8, 4, 11), b = init_classifier(8, 4, 11);
        CHECK(a.anchors == b.anchors);
        CHECK(a.basis == b.basis);
    }
}

TEST_CASE("expand keeps old basis columns bit-identical", "[etf]") {
    EtfClassifier c3 = init_classifier(8, 3, 5);
    EtfClassifier c4 = expand(c3, 4);
    REQUIRE(c4.num_classes == 4);
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(c4.basis.col(j) == c3.basis.col(j));
    CHECK(etf_gram_deviation(c4.anchors) < 1e-9);

    SECTION("expansion is deterministic") {
        EtfClassifier again = expand(c3, 4);
        CHECK(again.anchors == c4.anchors);
        CHECK(again.basis == c4.basis);
    }

    SECTION("invalid expansions") {
        CHECK_THROWS_AS(expand(c3, 3), InvalidExpansion);
        CHECK_THROWS_AS(expand(c3, 2), InvalidExpansion);
        EtfClassifier full = init_classifier(4, 4, 5);
        CHECK_THROWS_AS(expand(full, 5), DimensionError);
    }

    SECTION("regenerate_basis draws a fresh basis") {
        EtfClassifier r = expand(c3, 4, /*regenerate_basis=*/true);
        CHECK(etf_gram_deviation(r.anchors) < 1e-9);
        CHECK_FALSE(r.basis.col(0) == c3.basis.col(0));
    }
}

TEST_CASE("basis columns never change along an expansion chain", "[etf]") {
    EtfClassifier c = init_classifier(16, 2, 21);
    std::vector<Matrix> history = {c.basis};
    for (std::size_t k : {4, 7, 11, 16}) {
        c = expand(c, k);
        history.push_back(c.basis);
    }
    const Matrix& last = history.back();
    for (const Matrix& b : history)
        for (std::size_t j = 0; j < b.cols(); ++j)
            REQUIRE(last.col(j) == b.col(j));
}

TEST_CASE("ETF Gram identity across sizes", "[etf]") {
    for (std::size_t k = 2; k <= 32; ++k) {
        for (std::size_t d : {k, std::min<std::size_t>(2 * k, 64), std::size_t{64}}) {
            EtfClassifier c = init_classifier(d, k, 1234 + k + d);
            REQUIRE(etf_gram_deviation(c.anchors) < 1e-9);
        }
    }
}
