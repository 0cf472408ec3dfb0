#include "tabret/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tabret {

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw ValidationError("scores and labels must be non-empty and equal length");
    long n_pos = std::count(labels.begin(), labels.end(), 1);
    long n_neg = static_cast<long>(labels.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw DataError("AUC needs both classes present");

    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return scores[a] < scores[b]; });

    // midranks, then the Mann-Whitney rank-sum identity
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t q = i; q <= j; ++q)
            if (labels[order[q]] == 1) rank_sum_pos += midrank;
        i = j + 1;
    }
    double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace {

// Lentz continued fraction for the incomplete beta (Numerical Recipes form).
double betacf(double a, double b, double x) {
    const int max_iter = 500;
    const double eps = 3e-16, fpmin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log1p(-x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

WelchResult welch_t(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw ValidationError("Welch's t-test needs at least 2 values per sample");
    auto moments = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size() - 1);  // unbiased
        return std::pair{mean, var};
    };
    auto [ma, va] = moments(a);
    auto [mb, vb] = moments(b);
    double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    double se2 = va / na + vb / nb;

    WelchResult res;
    if (se2 == 0.0) {
        if (ma == mb) {
            res.t = 0.0;
            res.df = na + nb - 2.0;
            res.p = 1.0;
        } else {
            res.t = ma > mb ? 1e308 : -1e308;
            res.df = na + nb - 2.0;
            res.p = 0.0;
        }
        return res;
    }
    res.t = (ma - mb) / std::sqrt(se2);
    res.df = se2 * se2 /
             (va * va / (na * na * (na - 1.0)) + vb * vb / (nb * nb * (nb - 1.0)));
    double x = res.df / (res.df + res.t * res.t);
    res.p = regularized_incomplete_beta(res.df / 2.0, 0.5, x);
    return res;
}

std::map<std::string, ColumnMetric> reconstruction_metrics(
    const Batch& batch, const std::map<std::string, Matrix>& predictions,
    const MaskPlan& plan, const std::vector<ColumnSpec>& features,
    const std::vector<int>* shuffled_columns) {
    std::map<std::string, ColumnMetric> out;
    for (size_t j = 0; j < features.size(); ++j) {
        const ColumnSpec& c = features[j];
        if (shuffled_columns &&
            std::find(shuffled_columns->begin(), shuffled_columns->end(),
                      static_cast<int>(j)) != shuffled_columns->end())
            continue;
        auto pit = predictions.find(c.name);
        if (pit == predictions.end()) continue;
        const Matrix& pred = pit->second;
        ColumnMetric m;
        double sq = 0.0;
        int correct = 0;
        for (int r = 0; r < batch.row_count; ++r) {
            if (!plan.is_masked(r, static_cast<int>(j))) continue;
            ++m.count;
            if (c.kind == ColumnKind::Numerical) {
                double e = pred(r, 0) - batch.numerical.at(c.name)[r];
                sq += e * e;
            } else {
                int argmax = 0;
                for (int cc = 1; cc < pred.cols; ++cc)
                    if (pred(r, cc) > pred(r, argmax)) argmax = cc;
                if (argmax == batch.categorical.at(c.name)[r]) ++correct;
            }
        }
        if (m.count > 0) {
            if (c.kind == ColumnKind::Numerical)
                m.rmse = std::sqrt(sq / m.count);
            else
                m.accuracy = static_cast<double>(correct) / m.count;
        }
        out[c.name] = m;
    }
    return out;
}

}  // namespace tabret
