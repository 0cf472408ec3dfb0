#include <doctest.h>

#include <cmath>

#include "tabret/eval.hpp"

using namespace tabret;

namespace {

// O(n^2) pair-count oracle with half-credit ties.
double brute_force_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    long pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    return wins / pairs;
}

}  // namespace

TEST_CASE("roc_auc basic cases") {
    CHECK(roc_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
    CHECK(roc_auc({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}) == 0.0);
    CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);
    // 3 of 4 pos/neg pairs correctly ordered
    CHECK(roc_auc({0.8, 0.7, 0.6, 0.5}, {1, 0, 1, 0}) == 0.75);

    CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {1, 1}), DataError);
    CHECK_THROWS_AS(roc_auc({}, {}), ValidationError);
    CHECK_THROWS_AS(roc_auc({0.1}, {1, 0}), ValidationError);
}

TEST_CASE("roc_auc matches the quadratic oracle with ties") {
    RngState rng(31);
    for (int it = 0; it < 300; ++it) {
        int n = 2 + rng.uniform_int(199);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool pos = false, neg = false;
        for (int i = 0; i < n; ++i) {
            // coarse grid forces plenty of ties
            scores[i] = rng.uniform_int(10) / 10.0;
            labels[i] = rng.uniform_int(2);
            (labels[i] ? pos : neg) = true;
        }
        if (!pos || !neg) continue;
        double fast = roc_auc(scores, labels);
        CHECK(std::fabs(fast - brute_force_auc(scores, labels)) < 1e-12);
        // complement identity and monotone-transform invariance
        std::vector<double> exp_scores(n);
        for (int i = 0; i < n; ++i) exp_scores[i] = std::exp(scores[i]);
        CHECK(std::fabs(roc_auc(exp_scores, labels) - fast) < 1e-12);
    }
}

TEST_CASE("roc_auc complement identity on tie-free scores") {
    RngState rng(32);
    std::vector<double> scores(50);
    std::vector<int> labels(50);
    for (int i = 0; i < 50; ++i) {
        scores[i] = rng.normal();
        labels[i] = i % 2;
    }
    std::vector<double> neg(scores);
    for (double& s : neg) s = -s;
    CHECK(roc_auc(scores, labels) + roc_auc(neg, labels) == 1.0);
}

TEST_CASE("welch_t hand case to 1e-9") {
    // a=(1,2,3), b=(2,4,6): t = -2/sqrt(5/3), df = 50/17
    WelchResult r = welch_t({1, 2, 3}, {2, 4, 6});
    CHECK(std::fabs(r.t - (-1.5491933384829668)) < 1e-12);
    CHECK(std::fabs(r.df - 50.0 / 17.0) < 1e-12);
    CHECK(std::fabs(r.p - 0.2208808404940958) < 1e-9);

    WelchResult rev = welch_t({2, 4, 6}, {1, 2, 3});
    CHECK(rev.t == -r.t);
    CHECK(std::fabs(rev.p - r.p) < 1e-15);
}

TEST_CASE("welch_t edge cases") {
    WelchResult same = welch_t({1, 2, 3}, {1, 2, 3});
    CHECK(same.t == 0.0);
    CHECK(same.p == doctest::Approx(1.0).epsilon(1e-12));

    WelchResult sep = welch_t({1, 2, 3}, {11, 12, 13});
    CHECK(sep.t < -10.0);
    CHECK(sep.p < 0.05);

    WelchResult flat_eq = welch_t({5, 5, 5}, {5, 5, 5});
    CHECK(flat_eq.t == 0.0);
    CHECK(flat_eq.p == 1.0);

    WelchResult flat_ne = welch_t({5, 5, 5}, {6, 6, 6});
    CHECK(flat_ne.p == 0.0);
    CHECK(flat_ne.t < 0.0);

    CHECK_THROWS_AS(welch_t({1}, {1, 2}), ValidationError);
}

TEST_CASE("regularized incomplete beta endpoints and symmetry") {
    CHECK(regularized_incomplete_beta(2, 3, 0.0) == 0.0);
    CHECK(regularized_incomplete_beta(2, 3, 1.0) == 1.0);
    // I_x(1,1) = x
    CHECK(regularized_incomplete_beta(1, 1, 0.37) == doctest::Approx(0.37).epsilon(1e-12));
    // symmetry I_x(a,b) = 1 - I_{1-x}(b,a)
    double lhs = regularized_incomplete_beta(2.5, 1.25, 0.4);
    double rhs = 1.0 - regularized_incomplete_beta(1.25, 2.5, 0.6);
    CHECK(std::fabs(lhs - rhs) < 1e-12);
}

TEST_CASE("reconstruction metrics over masked entries") {
    std::vector<ColumnSpec> feats = {{"num", ColumnKind::Numerical, 0},
                                     {"cat", ColumnKind::Categorical, 3}};
    Batch batch;
    batch.row_count = 4;
    batch.numerical["num"] = {1.0, 2.0, 3.0, 4.0};
    batch.categorical["cat"] = {0, 1, 2, 0};

    MaskPlan plan;
    plan.k = 2;
    plan.masked = {{0}, {1}, {0}, {1}};
    plan.kept = {{1}, {0}, {1}, {0}};

    Matrix pnum(4, 1);
    pnum(0, 0) = 1.0;
    pnum(2, 0) = 3.0;  // rows 1 and 3 are unmasked for "num"
    Matrix pcat(4, 3);
    pcat(1, 1) = 5.0;  // correct argmax for row 1
    pcat(3, 2) = 5.0;  // wrong for row 3 (label 0)
    std::map<std::string, Matrix> preds{{"num", pnum}, {"cat", pcat}};

    auto metrics = reconstruction_metrics(batch, preds, plan, feats);
    REQUIRE(metrics.count("num") == 1);
    CHECK(metrics["num"].count == 2);
    CHECK(metrics["num"].rmse == doctest::Approx(0.0));
    CHECK(!metrics["num"].accuracy.has_value());
    REQUIRE(metrics.count("cat") == 1);
    CHECK(metrics["cat"].count == 2);
    CHECK(metrics["cat"].accuracy == doctest::Approx(0.5));

    // shuffled column excluded entirely
    std::vector<int> shuffled{1};
    auto filtered = reconstruction_metrics(batch, preds, plan, feats, &shuffled);
    CHECK(filtered.count("cat") == 0);
    CHECK(filtered.count("num") == 1);

    // no masked entries for a column: metric absent
    MaskPlan none;
    none.k = 2;
    none.masked = {{1}, {1}, {1}, {1}};
    none.kept = {{0}, {0}, {0}, {0}};
    auto absent = reconstruction_metrics(batch, preds, none, feats);
    CHECK(absent["num"].count == 0);
    CHECK(!absent["num"].rmse.has_value());
}
