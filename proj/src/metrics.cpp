#include "seldlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "seldlab/common.hpp"

namespace seldlab::evalkit {

double e_seld(double er, double f, double le_deg, double lr) {
    if (le_deg < 0.0 || le_deg > 180.0) throw std::domain_error("e_seld: LE outside [0, 180]");
    return 0.25 * (er + (1.0 - f) + le_deg / 180.0 + (1.0 - lr));
}

std::vector<int> hungarian(const std::vector<double>& cost, int n_rows, int n_cols) {
    const int n = std::max(n_rows, n_cols);
    if (n == 0) return {};
    const double kPad = 1e6;
    auto C = [&](int r, int c) -> double {
        return (r < n_rows && c < n_cols) ? cost[size_t(r) * n_cols + c] : kPad;
    };
    // potentials method, 1-indexed (rows assigned one by one)
    std::vector<double> u(size_t(n) + 1, 0.0), v(size_t(n) + 1, 0.0);
    std::vector<int> p(size_t(n) + 1, 0), way(size_t(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(size_t(n) + 1, 1e18);
        std::vector<char> used(size_t(n) + 1, false);
        do {
            used[size_t(j0)] = true;
            const int i0 = p[size_t(j0)];
            double delta = 1e18;
            int j1 = -1;
            for (int j = 1; j <= n; ++j) {
                if (used[size_t(j)]) continue;
                const double cur = C(i0 - 1, j - 1) - u[size_t(i0)] - v[size_t(j)];
                if (cur < minv[size_t(j)]) {
                    minv[size_t(j)] = cur;
                    way[size_t(j)] = j0;
                }
                if (minv[size_t(j)] < delta) {
                    delta = minv[size_t(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[size_t(j)]) {
                    u[size_t(p[size_t(j)])] += delta;
                    v[size_t(j)] -= delta;
                } else {
                    minv[size_t(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[size_t(j0)] != 0);
        do {
            const int j1 = way[size_t(j0)];
            p[size_t(j0)] = p[size_t(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(size_t(n_rows), -1);
    for (int j = 1; j <= n; ++j) {
        const int i = p[size_t(j)];
        if (i >= 1 && i <= n_rows && j <= n_cols) row_to_col[size_t(i) - 1] = j - 1;
    }
    return row_to_col;
}

namespace {

double angle_deg(const Event& a, const Event& b) {
    // chord form: exact for identical vectors and stable for small angles
    const double dx = a.doa[0] - b.doa[0], dy = a.doa[1] - b.doa[1], dz = a.doa[2] - b.doa[2];
    const double chord = 0.5 * std::sqrt(dx * dx + dy * dy + dz * dz);
    return rad2deg(2.0 * std::asin(std::clamp(chord, 0.0, 1.0)));
}

using Matcher = std::function<std::vector<std::pair<int, int>>(const std::vector<Event>&,
                                                               const std::vector<Event>&)>;

std::vector<std::pair<int, int>> match_hungarian(const std::vector<Event>& preds,
                                                 const std::vector<Event>& refs) {
    const int np = int(preds.size()), nr = int(refs.size());
    if (np == 0 || nr == 0) return {};
    std::vector<double> cost(size_t(np) * nr);
    for (int i = 0; i < np; ++i)
        for (int j = 0; j < nr; ++j) cost[size_t(i) * nr + j] = angle_deg(preds[size_t(i)], refs[size_t(j)]);
    const auto asg = hungarian(cost, np, nr);
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < np; ++i)
        if (asg[size_t(i)] >= 0) pairs.push_back({i, asg[size_t(i)]});
    return pairs;
}

std::vector<std::pair<int, int>> match_bruteforce(const std::vector<Event>& preds,
                                                  const std::vector<Event>& refs) {
    const int np = int(preds.size()), nr = int(refs.size());
    if (np == 0 || nr == 0) return {};
    // enumerate all injective assignments of the smaller side into the larger
    const bool pred_small = np <= nr;
    const int ns = pred_small ? np : nr;
    const int nl = pred_small ? nr : np;

    std::vector<int> best(size_t(ns), -1), cur(size_t(ns), -1);
    std::vector<char> used(size_t(nl), false);
    double best_cost = 1e18;
    std::function<void(int, double)> rec = [&](int i, double acc) {
        if (acc >= best_cost) return;
        if (i == ns) {
            best_cost = acc;
            best = cur;
            return;
        }
        for (int j = 0; j < nl; ++j) {
            if (used[size_t(j)]) continue;
            used[size_t(j)] = true;
            cur[size_t(i)] = j;
            const double a = pred_small ? angle_deg(preds[size_t(i)], refs[size_t(j)])
                                        : angle_deg(preds[size_t(j)], refs[size_t(i)]);
            rec(i + 1, acc + a);
            used[size_t(j)] = false;
        }
    };
    rec(0, 0.0);
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < ns; ++i) {
        if (best[size_t(i)] < 0) continue;
        if (pred_small)
            pairs.push_back({i, best[size_t(i)]});
        else
            pairs.push_back({best[size_t(i)], i});
    }
    return pairs;
}

MetricScores score_with(const FrameEvents& pred, const FrameEvents& ref, int M, const Matcher& match) {
    if (M <= 0) throw std::invalid_argument("match_and_score: num_classes must be > 0");
    constexpr double kThreshDeg = 20.0;

    struct ClassAcc {
        long tp = 0, fp = 0, fn = 0;
        long n_ref = 0, n_pred = 0;
        long matches = 0;  // class-correct regardless of threshold
        double angle_sum = 0.0;
    };
    std::vector<ClassAcc> cls(static_cast<size_t>(M));
    struct SegAcc {
        long fp = 0, fn = 0, n_ref = 0;
    };
    std::map<int, SegAcc> segs;

    int max_frame = -1;
    for (const auto& [f, v] : pred) max_frame = std::max(max_frame, f);
    for (const auto& [f, v] : ref) max_frame = std::max(max_frame, f);

    static const std::vector<Event> kEmpty;
    for (int f = 0; f <= max_frame; ++f) {
        auto pit = pred.find(f);
        auto rit = ref.find(f);
        const auto& pv = pit == pred.end() ? kEmpty : pit->second;
        const auto& rv = rit == ref.end() ? kEmpty : rit->second;
        if (pv.empty() && rv.empty()) continue;
        SegAcc& seg = segs[f / 10];
        for (int c = 0; c < M; ++c) {
            std::vector<Event> P, R;
            for (const auto& e : pv)
                if (e.class_idx == c) P.push_back(e);
            for (const auto& e : rv)
                if (e.class_idx == c) R.push_back(e);
            if (P.empty() && R.empty()) continue;
            ClassAcc& a = cls[size_t(c)];
            a.n_ref += long(R.size());
            a.n_pred += long(P.size());
            seg.n_ref += long(R.size());

            const auto pairs = match(P, R);
            for (const auto& [pi, ri] : pairs) {
                const double ang = angle_deg(P[size_t(pi)], R[size_t(ri)]);
                a.matches += 1;
                a.angle_sum += ang;
                if (ang <= kThreshDeg) {
                    a.tp += 1;
                } else {
                    a.fp += 1;
                    a.fn += 1;
                    seg.fp += 1;
                    seg.fn += 1;
                }
            }
            const long unmatched_p = long(P.size()) - long(pairs.size());
            const long unmatched_r = long(R.size()) - long(pairs.size());
            a.fp += unmatched_p;
            a.fn += unmatched_r;
            seg.fp += unmatched_p;
            seg.fn += unmatched_r;
        }
    }

    long S = 0, D = 0, I = 0, n_ref_total = 0;
    for (const auto& [si, sa] : segs) {
        S += std::min(sa.fp, sa.fn);
        D += std::max(0L, sa.fn - sa.fp);
        I += std::max(0L, sa.fp - sa.fn);
        n_ref_total += sa.n_ref;
    }

    MetricScores out;
    out.er20 = double(S + D + I) / double(std::max(1L, n_ref_total));

    double f_sum = 0, le_sum = 0, lr_sum = 0;
    int f_n = 0, le_n = 0, lr_n = 0;
    for (int c = 0; c < M; ++c) {
        const auto& a = cls[size_t(c)];
        if (a.n_ref == 0 && a.n_pred == 0) continue;  // absent from both: excluded
        const double denom = double(2 * a.tp + a.fp + a.fn);
        const double fc = denom > 0 ? 2.0 * double(a.tp) / denom : 1.0;
        const double lec = a.matches > 0 ? a.angle_sum / double(a.matches) : 180.0;
        f_sum += fc;
        ++f_n;
        le_sum += lec;
        ++le_n;
        double lrc = 0.0;
        if (a.n_ref > 0) {
            lrc = double(a.matches) / double(a.n_ref);
            lr_sum += lrc;
            ++lr_n;
        }
        out.per_class.push_back({double(c), fc, lec, lrc});
    }
    out.f20 = f_n > 0 ? f_sum / f_n : 1.0;
    out.le_cd = le_n > 0 ? le_sum / le_n : 0.0;
    out.lr_cd = lr_n > 0 ? lr_sum / lr_n : 1.0;
    out.e_seld = e_seld(out.er20, out.f20, out.le_cd, out.lr_cd);
    return out;
}

}  // namespace

MetricScores match_and_score(const FrameEvents& pred, const FrameEvents& ref, int num_classes) {
    return score_with(pred, ref, num_classes, &match_hungarian);
}

MetricScores match_and_score_bruteforce(const FrameEvents& pred, const FrameEvents& ref,
                                        int num_classes) {
    return score_with(pred, ref, num_classes, &match_bruteforce);
}

MetricScores macro_average(const std::vector<MetricScores>& rooms) {
    if (rooms.empty()) throw std::invalid_argument("macro_average: no rooms");
    MetricScores out;
    for (const auto& r : rooms) {
        out.er20 += r.er20;
        out.f20 += r.f20;
        out.le_cd += r.le_cd;
        out.lr_cd += r.lr_cd;
        out.e_seld += r.e_seld;
    }
    const double n = double(rooms.size());
    out.er20 /= n;
    out.f20 /= n;
    out.le_cd /= n;
    out.lr_cd /= n;
    out.e_seld /= n;
    return out;
}

std::vector<std::vector<double>> similarity_map(const std::vector<std::vector<float>>& support,
                                                const std::vector<std::vector<float>>& query) {
    if (support.empty() || query.empty()) throw std::invalid_argument("similarity_map: empty input");
    const size_t d = support[0].size();
    auto norm = [&](const std::vector<float>& v) {
        if (v.size() != d) throw std::invalid_argument("similarity_map: dimension mismatch");
        double acc = 0;
        for (float x : v) acc += double(x) * x;
        const double n = std::sqrt(acc);
        if (n < 1e-12) throw NumericError("similarity_map: zero-length representation");
        return n;
    };
    std::vector<std::vector<double>> out(query.size(), std::vector<double>(support.size()));
    for (size_t q = 0; q < query.size(); ++q) {
        const double nq = norm(query[q]);
        for (size_t s = 0; s < support.size(); ++s) {
            const double ns = norm(support[s]);
            double dot = 0;
            for (size_t i = 0; i < d; ++i) dot += double(query[q][i]) * support[s][i];
            out[q][s] = dot / (nq * ns);
        }
    }
    return out;
}

AttenuationReport make_attenuation_report(const std::vector<std::string>& env_ids,
                                          const std::vector<std::vector<float>>& lambda_per_env) {
    if (env_ids.size() != lambda_per_env.size() || env_ids.empty())
        throw std::invalid_argument("make_attenuation_report: bad inputs");
    AttenuationReport rep;
    rep.env_ids = env_ids;
    rep.lambda = lambda_per_env;
    const size_t p = lambda_per_env[0].size();
    for (size_t l = 0; l < p; ++l) {
        double mean = 0;
        for (const auto& lam : lambda_per_env) mean += lam[l];
        mean /= double(lambda_per_env.size());
        double var = 0;
        for (const auto& lam : lambda_per_env) var += (lam[l] - mean) * (lam[l] - mean);
        var /= double(lambda_per_env.size());
        const double sd = std::sqrt(var);
        rep.layer_std.push_back(sd);
        rep.environment_insensitive.push_back(sd < 1e-3);
    }
    return rep;
}

}  // namespace seldlab::evalkit
