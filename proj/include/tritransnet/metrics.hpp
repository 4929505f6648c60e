#pragma once

// Saliency evaluation: MAE, adaptive F-measure, adaptive E-measure, S-measure,
// PR curve at 256 thresholds. All computed in double precision on [0,1] maps;
// dataset values are unweighted means over images.

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tritransnet/common.hpp"

namespace ttn::metrics {

struct GrayMap {
    long h = 0, w = 0;
    std::vector<double> v;  // row-major, [0,1]

    double mean() const {
        double s = 0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / (double)v.size();
    }
};

inline void check_match(const GrayMap& s, const GrayMap& g) {
    if (s.h != g.h || s.w != g.w)
        throw ShapeError("metrics: prediction " + std::to_string(s.w) + "x" +
                         std::to_string(s.h) + " vs ground truth " + std::to_string(g.w) + "x" +
                         std::to_string(g.h));
}

inline double mae(const GrayMap& s, const GrayMap& g) {
    check_match(s, g);
    double acc = 0;
    for (size_t i = 0; i < s.v.size(); ++i) acc += std::abs(s.v[i] - g.v[i]);
    return acc / (double)s.v.size();
}

inline double adaptive_threshold(const GrayMap& s) {
    return std::min(2.0 * s.mean(), 1.0 - 1e-12);
}

// Returns NaN when G has no positive pixel; callers exclude such images.
inline double adaptive_fmeasure(const GrayMap& s, const GrayMap& g, double beta2 = 0.3) {
    check_match(s, g);
    double t = adaptive_threshold(s);
    long tp = 0, fp = 0, fn = 0, pos = 0;
    for (size_t i = 0; i < s.v.size(); ++i) {
        bool p = s.v[i] >= t;
        bool gt = g.v[i] > 0.5;
        if (gt) ++pos;
        if (p && gt) ++tp;
        else if (p && !gt) ++fp;
        else if (!p && gt) ++fn;
    }
    if (pos == 0) return std::nan("");
    double prec = tp + fp > 0 ? (double)tp / (double)(tp + fp) : 0.0;
    double rec = (double)tp / (double)(tp + fn);
    if (prec + rec == 0.0) return 0.0;
    return (1.0 + beta2) * prec * rec / (beta2 * prec + rec);
}

namespace detail {

// Dissimilarity-penalized similarity of a region's prediction values.
inline double object_score(const GrayMap& s, const GrayMap& g, bool foreground) {
    double sum = 0, cnt = 0;
    for (size_t i = 0; i < s.v.size(); ++i) {
        bool in = foreground ? g.v[i] > 0.5 : g.v[i] <= 0.5;
        if (!in) continue;
        double x = foreground ? s.v[i] : 1.0 - s.v[i];
        sum += x;
        cnt += 1;
    }
    if (cnt == 0) return 0.0;
    double mean = sum / cnt;
    double var = 0;
    for (size_t i = 0; i < s.v.size(); ++i) {
        bool in = foreground ? g.v[i] > 0.5 : g.v[i] <= 0.5;
        if (!in) continue;
        double x = foreground ? s.v[i] : 1.0 - s.v[i];
        var += (x - mean) * (x - mean);
    }
    double sd = std::sqrt(var / cnt);
    return 2.0 * mean / (mean * mean + 1.0 + 2.0 * sd + 1e-12);
}

// SSIM-style similarity of one block.
inline double region_ssim(const std::vector<double>& x, const std::vector<double>& y) {
    double n = (double)x.size();
    if (n == 0) return 1.0;
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, cxy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
        cxy += (x[i] - mx) * (y[i] - my);
    }
    double d = n > 1 ? n - 1 : 1;
    vx /= d;
    vy /= d;
    cxy /= d;
    double alpha = 4.0 * mx * my * cxy;
    double beta = (mx * mx + my * my) * (vx + vy);
    if (alpha != 0.0) return alpha / (beta + 1e-12);
    return (alpha == 0.0 && beta == 0.0) ? 1.0 : 0.0;
}

inline double region_score(const GrayMap& s, const GrayMap& g) {
    // GT centroid split into four blocks, weighted by block area fraction.
    double cy = 0, cx = 0, cnt = 0;
    for (long y = 0; y < g.h; ++y)
        for (long x = 0; x < g.w; ++x)
            if (g.v[y * g.w + x] > 0.5) {
                cy += y;
                cx += x;
                cnt += 1;
            }
    long Y, X;
    if (cnt == 0) {
        Y = g.h / 2;
        X = g.w / 2;
    } else {
        Y = (long)std::llround(cy / cnt);
        X = (long)std::llround(cx / cnt);
    }
    // ensure non-degenerate split indices
    Y = std::max(1L, std::min(Y + 1, g.h));  // rows [0,Y) and [Y,h)
    X = std::max(1L, std::min(X + 1, g.w));
    double total = (double)(g.h * g.w);
    double score = 0;
    const long ys[3] = {0, Y, g.h};
    const long xs[3] = {0, X, g.w};
    for (int by = 0; by < 2; ++by)
        for (int bx = 0; bx < 2; ++bx) {
            std::vector<double> bs, bg;
            for (long y = ys[by]; y < ys[by + 1]; ++y)
                for (long x = xs[bx]; x < xs[bx + 1]; ++x) {
                    bs.push_back(s.v[y * s.w + x]);
                    bg.push_back(g.v[y * g.w + x]);
                }
            double wgt = (double)bs.size() / total;
            score += wgt * region_ssim(bs, bg);
        }
    return score;
}

}  // namespace detail

inline double s_measure(const GrayMap& s, const GrayMap& g, double alpha = 0.5) {
    check_match(s, g);
    double y = 0;
    for (double v : g.v) y += v > 0.5 ? 1.0 : 0.0;
    y /= (double)g.v.size();
    if (y == 0.0) return 1.0 - s.mean();  // all-background GT
    if (y == 1.0) return s.mean();        // all-foreground GT
    double so = y * detail::object_score(s, g, true) +
                (1.0 - y) * detail::object_score(s, g, false);
    double sr = detail::region_score(s, g);
    return std::max(0.0, alpha * so + (1.0 - alpha) * sr);
}

inline double e_measure(const GrayMap& s, const GrayMap& g) {
    check_match(s, g);
    double t = adaptive_threshold(s);
    long n = (long)s.v.size();
    double gsum = 0;
    for (double v : g.v) gsum += v > 0.5 ? 1.0 : 0.0;
    std::vector<double> b((size_t)n);
    for (long i = 0; i < n; ++i) b[i] = s.v[i] >= t ? 1.0 : 0.0;
    double acc = 0;
    if (gsum == 0.0) {
        for (long i = 0; i < n; ++i) acc += 1.0 - b[i];
    } else if (gsum == (double)n) {
        for (long i = 0; i < n; ++i) acc += b[i];
    } else {
        double mg = gsum / (double)n, mb = 0;
        for (double v : b) mb += v;
        mb /= (double)n;
        for (long i = 0; i < n; ++i) {
            double dg = (g.v[i] > 0.5 ? 1.0 : 0.0) - mg;
            double db = b[i] - mb;
            double align = 2.0 * dg * db / (dg * dg + db * db + 1e-12);
            acc += (align + 1.0) * (align + 1.0) / 4.0;
        }
    }
    return acc / (double)n;
}

struct PrPoint {
    double threshold, precision, recall;
};

// Accumulates per-image precision/recall at 256 evenly spaced thresholds.
struct PrAccumulator {
    static constexpr int kThresholds = 256;
    std::vector<double> psum, rsum;
    long images = 0;

    PrAccumulator() : psum(kThresholds, 0.0), rsum(kThresholds, 0.0) {}

    void add(const GrayMap& s, const GrayMap& g) {
        check_match(s, g);
        long pos = 0;
        for (double v : g.v)
            if (v > 0.5) ++pos;
        if (pos == 0) return;  // recall undefined; image excluded
        for (int j = 0; j < kThresholds; ++j) {
            double t = (double)j / 255.0;
            long tp = 0, pp = 0;
            for (size_t i = 0; i < s.v.size(); ++i)
                if (s.v[i] >= t) {
                    ++pp;
                    if (g.v[i] > 0.5) ++tp;
                }
            psum[j] += pp > 0 ? (double)tp / (double)pp : 1.0;  // no positives predicted
            rsum[j] += (double)tp / (double)pos;
        }
        ++images;
    }

    std::vector<PrPoint> curve() const {
        std::vector<PrPoint> out;
        for (int j = 0; j < kThresholds; ++j) {
            double d = images > 0 ? (double)images : 1.0;
            out.push_back({(double)j / 255.0, psum[j] / d, rsum[j] / d});
        }
        return out;
    }
};

struct Report {
    double s = 0, f = 0, e = 0, mae = 0;
    long images = 0, f_excluded = 0;
    std::vector<PrPoint> pr;
};

// Incremental per-dataset aggregation.
struct Evaluator {
    double s_sum = 0, f_sum = 0, e_sum = 0, mae_sum = 0;
    long n = 0, f_n = 0, f_excluded = 0;
    PrAccumulator pr;

    void add(const GrayMap& pred, const GrayMap& gt) {
        mae_sum += mae(pred, gt);
        s_sum += s_measure(pred, gt);
        e_sum += e_measure(pred, gt);
        double f = adaptive_fmeasure(pred, gt);
        if (std::isnan(f)) ++f_excluded;
        else {
            f_sum += f;
            ++f_n;
        }
        pr.add(pred, gt);
        ++n;
    }

    Report report() const {
        Report r;
        r.images = n;
        r.f_excluded = f_excluded;
        if (n > 0) {
            r.mae = mae_sum / n;
            r.s = s_sum / n;
            r.e = e_sum / n;
        }
        if (f_n > 0) r.f = f_sum / f_n;
        r.pr = pr.curve();
        return r;
    }
};

inline std::string format_table(const Report& r, const std::string& dataset) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "dataset    images  S       F       E       MAE\n";
    os << std::left << std::setw(10) << dataset << " " << std::setw(7) << r.images << " "
       << std::setw(7) << r.s << " " << std::setw(7) << r.f << " " << std::setw(7) << r.e << " "
       << std::setw(7) << r.mae;
    if (r.f_excluded > 0) os << "  (" << r.f_excluded << " empty-GT images excluded from F)";
    os << "\n";
    return os.str();
}

inline void write_machine(std::ostream& os, const Report& r, const std::string& dataset) {
    os << std::setprecision(10);
    os << dataset << " S " << r.s << "\n";
    os << dataset << " F " << r.f << "\n";
    os << dataset << " E " << r.e << "\n";
    os << dataset << " MAE " << r.mae << "\n";
}

inline void write_pr_csv(std::ostream& os, const Report& r) {
    os << "threshold,precision,recall\n" << std::setprecision(10);
    for (const auto& p : r.pr)
        os << p.threshold << "," << p.precision << "," << p.recall << "\n";
}

}  // namespace ttn::metrics
