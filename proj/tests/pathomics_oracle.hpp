#pragma once

// Straight-from-the-definition texture features, written independently of
// src/pathomics.cpp: dense images, brute-force pair scans, line walks and
// flood fills, and a general (non-symmetric) eigen solver for the MCC.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <deque>
#include <random>
#include <vector>

#include "histofuse/pathomics.hpp"

namespace oracle {

using histofuse::pathomics::NucleusRegion;
using histofuse::pathomics::Pixel;

// Region pasted into a zero-padded dense image (0 = background, levels >= 1).
struct Dense {
    int rows = 0, cols = 0, r0 = 0, c0 = 0;
    std::vector<std::vector<int>> level;
    int at(int r, int c) const {
        r -= r0;
        c -= c0;
        if (r < 0 || c < 0 || r >= rows || c >= cols) return 0;
        return level[r][c];
    }
};

inline std::vector<int> levels_of(const NucleusRegion& region, int nb) {
    double lo = region.intensities[0], hi = lo;
    for (double v : region.intensities) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<int> out;
    for (double v : region.intensities) {
        if (hi == lo) {
            out.push_back(1);
        } else {
            int l = static_cast<int>(std::floor((v - lo) * nb / (hi - lo))) + 1;
            out.push_back(l > nb ? nb : l);
        }
    }
    return out;
}

inline Dense densify(const NucleusRegion& region, const std::vector<int>& levels) {
    Dense d;
    int rmin = 1 << 30, rmax = -(1 << 30), cmin = rmin, cmax = rmax;
    for (const Pixel& p : region.pixels) {
        rmin = std::min(rmin, p.row);
        rmax = std::max(rmax, p.row);
        cmin = std::min(cmin, p.col);
        cmax = std::max(cmax, p.col);
    }
    d.r0 = rmin;
    d.c0 = cmin;
    d.rows = rmax - rmin + 1;
    d.cols = cmax - cmin + 1;
    d.level.assign(d.rows, std::vector<int>(d.cols, 0));
    for (std::size_t k = 0; k < region.pixels.size(); ++k)
        d.level[region.pixels[k].row - rmin][region.pixels[k].col - cmin] = levels[k];
    return d;
}

inline double entropy2(const std::vector<double>& p) {
    double h = 0;
    for (double v : p)
        if (v > 0) h += -v * std::log2(v);
    return h;
}

inline double pct(std::vector<double> x, double q) {
    std::sort(x.begin(), x.end());
    double h = (x.size() - 1) * q;
    std::size_t f = static_cast<std::size_t>(h);
    if (f + 1 >= x.size()) return x.back();
    return x[f] + (h - f) * (x[f + 1] - x[f]);
}

inline std::vector<double> first_order(const NucleusRegion& region, const std::vector<int>& levels, int nb) {
    const auto& x = region.intensities;
    double n = x.size();
    double mean = 0;
    for (double v : x) mean += v / n;
    double var = 0, m3 = 0, m4 = 0, mad = 0, en = 0;
    for (double v : x) {
        var += std::pow(v - mean, 2) / n;
        m3 += std::pow(v - mean, 3) / n;
        m4 += std::pow(v - mean, 4) / n;
        mad += std::fabs(v - mean) / n;
        en += v * v;
    }
    double p10 = pct(x, 0.1), p90 = pct(x, 0.9);
    std::vector<double> mid;
    for (double v : x)
        if (p10 <= v && v <= p90) mid.push_back(v);
    double mid_mean = 0, rmad = 0;
    for (double v : mid) mid_mean += v / mid.size();
    for (double v : mid) rmad += std::fabs(v - mid_mean) / mid.size();
    std::vector<double> hist(nb, 0);
    for (int l : levels) hist[l - 1] += 1;
    double unif = 0;
    for (double& h : hist) {
        h /= n;
        unif += h * h;
    }
    double mx = *std::max_element(x.begin(), x.end()), mn = *std::min_element(x.begin(), x.end());
    const bool constant = mx == mn;
    return {p10,
            p90,
            en,
            entropy2(hist),
            pct(x, 0.75) - pct(x, 0.25),
            constant ? 0 : m4 / (var * var),
            mx,
            mad,
            mean,
            pct(x, 0.5),
            mn,
            mx - mn,
            rmad,
            std::sqrt(en / n),
            constant ? 0 : m3 / std::pow(var, 1.5),
            en,
            unif,
            var};
}

inline std::vector<double> glcm(const NucleusRegion& region, const std::vector<int>& levels, int ng) {
    const int offs[4][2] = {{0, 1}, {1, 1}, {1, 0}, {1, -1}};
    std::vector<std::vector<double>> P(ng + 1, std::vector<double>(ng + 1, 0));
    double total = 0;
    // Every ordered pixel pair is inspected; a pair counts when it is one of the offsets.
    for (std::size_t a = 0; a < region.pixels.size(); ++a) {
        for (std::size_t b = 0; b < region.pixels.size(); ++b) {
            for (auto& o : offs) {
                if (region.pixels[b].row - region.pixels[a].row == o[0] &&
                    region.pixels[b].col - region.pixels[a].col == o[1]) {
                    P[levels[a]][levels[b]] += 1;
                    P[levels[b]][levels[a]] += 1;
                    total += 2;
                }
            }
        }
    }
    if (total == 0) {
        P[1][1] = 1;
        total = 1;
    }
    for (auto& row : P)
        for (double& v : row) v /= total;

    std::vector<double> px(ng + 1, 0), py(ng + 1, 0), pxpy(2 * ng + 1, 0), pxmy(ng, 0);
    for (int i = 1; i <= ng; ++i)
        for (int j = 1; j <= ng; ++j) {
            px[i] += P[i][j];
            py[j] += P[i][j];
            pxpy[i + j] += P[i][j];
            pxmy[std::abs(i - j)] += P[i][j];
        }
    double ux = 0, uy = 0;
    for (int i = 1; i <= ng; ++i) {
        ux += i * px[i];
        uy += i * py[i];
    }
    double sx = 0, sy = 0;
    for (int i = 1; i <= ng; ++i) {
        sx += px[i] * (i - ux) * (i - ux);
        sy += py[i] * (i - uy) * (i - uy);
    }
    sx = std::sqrt(sx);
    sy = std::sqrt(sy);

    double autoc = 0, prom = 0, shade = 0, tend = 0, contrast = 0, cov = 0, id = 0, idm = 0, idmn = 0, idn = 0;
    double ivar = 0, energy = 0, hxy = 0, hxy1 = 0, hxy2 = 0, maxp = 0;
    for (int i = 1; i <= ng; ++i)
        for (int j = 1; j <= ng; ++j) {
            double p = P[i][j];
            double k = std::abs(i - j);
            autoc += i * j * p;
            prom += std::pow(i + j - ux - uy, 4) * p;
            shade += std::pow(i + j - ux - uy, 3) * p;
            tend += std::pow(i + j - ux - uy, 2) * p;
            contrast += (i - j) * (i - j) * p;
            cov += (i - ux) * (j - uy) * p;
            id += p / (1 + k);
            idm += p / (1 + k * k);
            idmn += p / (1 + k * k / (ng * ng));
            idn += p / (1 + k / ng);
            if (i != j) ivar += p / (k * k);
            energy += p * p;
            maxp = std::max(maxp, p);
            if (p > 0) hxy -= p * std::log2(p);
            if (px[i] * py[j] > 0) {
                hxy1 -= p * std::log2(px[i] * py[j]);
                hxy2 -= px[i] * py[j] * std::log2(px[i] * py[j]);
            }
        }
    double davg = 0, dvar = 0;
    for (int k = 0; k < ng; ++k) davg += k * pxmy[k];
    for (int k = 0; k < ng; ++k) dvar += (k - davg) * (k - davg) * pxmy[k];
    double hx = entropy2(px), hy = entropy2(py);
    double imc1 = std::max(hx, hy) == 0 ? 0 : (hxy - hxy1) / std::max(hx, hy);
    double imc2 = std::sqrt(1 - std::exp(-2 * std::max(0.0, hxy2 - hxy)));

    // Q(i,j) = sum_k p(i,k) p(j,k) / (px(i) py(k)); MCC is the square root of its second largest eigenvalue.
    std::vector<int> act;
    for (int i = 1; i <= ng; ++i)
        if (px[i] > 0) act.push_back(i);
    double mcc = 0;
    if (act.size() >= 2) {
        Eigen::MatrixXd Q(act.size(), act.size());
        for (std::size_t a = 0; a < act.size(); ++a)
            for (std::size_t b = 0; b < act.size(); ++b) {
                double s = 0;
                for (int k : act) s += P[act[a]][k] * P[act[b]][k] / (px[act[a]] * py[k]);
                Q(a, b) = s;
            }
        Eigen::EigenSolver<Eigen::MatrixXd> es(Q, false);
        std::vector<double> ev;
        for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) ev.push_back(es.eigenvalues()(i).real());
        std::sort(ev.rbegin(), ev.rend());
        mcc = std::sqrt(std::max(0.0, ev[1]));
    }
    double sumsq = 0;
    for (int i = 1; i <= ng; ++i) sumsq += (i - ux) * (i - ux) * px[i];

    return {autoc,
            prom,
            shade,
            tend,
            contrast,
            sx * sy == 0 ? 0 : cov / (sx * sy),
            davg,
            entropy2(pxmy),
            dvar,
            id,
            idm,
            idmn,
            idn,
            imc1,
            imc2,
            ivar,
            ux,
            energy,
            hxy,
            mcc,
            maxp,
            entropy2(pxpy),
            sumsq};
}

// Summary statistics of a (gray level, size) count matrix M[i][j] with sizes j >= 1.
struct SizeStats {
    double gln, glnn, glv, hge, le, lhge, llge, lge, ent, sn, snn, perc, sv, se, shge, slge;
};

inline SizeStats size_stats(const std::vector<std::vector<double>>& M, double npix) {
    double N = 0;
    for (auto& r : M)
        for (double v : r) N += v;
    SizeStats s{};
    double ui = 0, uj = 0;
    for (std::size_t i = 1; i < M.size(); ++i)
        for (std::size_t j = 1; j < M[i].size(); ++j) {
            double p = M[i][j] / N;
            ui += p * i;
            uj += p * j;
        }
    for (std::size_t i = 1; i < M.size(); ++i) {
        double row = 0;
        for (std::size_t j = 1; j < M[i].size(); ++j) {
            double m = M[i][j];
            double I = i, J = j;
            row += m;
            if (m == 0) continue;
            s.hge += m * I * I / N;
            s.lge += m / (I * I) / N;
            s.le += m * J * J / N;
            s.se += m / (J * J) / N;
            s.lhge += m * I * I * J * J / N;
            s.llge += m * J * J / (I * I) / N;
            s.shge += m * I * I / (J * J) / N;
            s.slge += m / (I * I * J * J) / N;
            s.ent -= m / N * std::log2(m / N);
            s.glv += m / N * (I - ui) * (I - ui);
            s.sv += m / N * (J - uj) * (J - uj);
        }
        s.gln += row * row / N;
    }
    std::size_t maxj = 0;
    for (auto& r : M) maxj = std::max(maxj, r.size());
    for (std::size_t j = 1; j < maxj; ++j) {
        double col = 0;
        for (auto& r : M)
            if (j < r.size()) col += r[j];
        s.sn += col * col / N;
    }
    s.glnn = s.gln / N;
    s.snn = s.sn / N;
    s.perc = N / npix;
    return s;
}

inline std::vector<double> gldm(const Dense& d, int ng, double npix) {
    std::vector<std::vector<double>> M(ng + 1, std::vector<double>(10, 0));
    for (int r = 0; r < d.rows; ++r)
        for (int c = 0; c < d.cols; ++c) {
            int l = d.level[r][c];
            if (l == 0) continue;
            int dep = 0;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc)
                    if (d.at(d.r0 + r + dr, d.c0 + c + dc) == l) ++dep;  // includes the centre once
            M[l][dep] += 1;
        }
    SizeStats s = size_stats(M, npix);
    return {s.ent, s.sn, s.snn, s.sv, s.gln, s.glv, s.hge, s.le, s.lhge, s.llge, s.lge, s.se, s.shge, s.slge};
}

inline std::vector<double> glrlm(const Dense& d, int ng, double npix) {
    const int offs[4][2] = {{0, 1}, {1, 1}, {1, 0}, {1, -1}};
    std::vector<double> mean(16, 0);
    const int maxlen = std::max(d.rows, d.cols) + 1;
    for (auto& o : offs) {
        std::vector<std::vector<double>> M(ng + 1, std::vector<double>(maxlen + 1, 0));
        // Walk every line of the bounding box in direction o from each line's first cell.
        for (int r = -1; r <= d.rows; ++r)
            for (int c = -1; c <= d.cols; ++c) {
                int pr = r - o[0], pc = c - o[1];
                bool line_start = pr < 0 || pc < 0 || pr >= d.rows || pc >= d.cols;
                bool inside = r >= 0 && c >= 0 && r < d.rows && c < d.cols;
                if (!line_start || !inside) continue;
                int cur = 0, len = 0;
                for (int rr = r, cc = c; rr >= 0 && cc >= 0 && rr < d.rows && cc < d.cols; rr += o[0], cc += o[1]) {
                    int l = d.level[rr][cc];
                    if (l == cur) {
                        ++len;
                        continue;
                    }
                    if (cur > 0) M[cur][len] += 1;
                    cur = l;
                    len = 1;
                }
                if (cur > 0) M[cur][len] += 1;
            }
        SizeStats s = size_stats(M, npix);
        double v[16] = {s.gln, s.glnn, s.glv, s.hge, s.le, s.lhge, s.llge, s.lge,
                        s.ent, s.sn,   s.snn,  s.perc, s.sv, s.se, s.shge, s.slge};
        for (int k = 0; k < 16; ++k) mean[k] += v[k] / 4;
    }
    return mean;
}

inline std::vector<double> glszm(const Dense& d, int ng, double npix) {
    std::vector<std::vector<double>> M(ng + 1, std::vector<double>(static_cast<std::size_t>(npix) + 1, 0));
    std::vector<std::vector<bool>> seen(d.rows, std::vector<bool>(d.cols, false));
    for (int r = 0; r < d.rows; ++r)
        for (int c = 0; c < d.cols; ++c) {
            int l = d.level[r][c];
            if (l == 0 || seen[r][c]) continue;
            std::deque<std::pair<int, int>> q{{r, c}};
            seen[r][c] = true;
            int size = 0;
            while (!q.empty()) {
                auto [a, b] = q.front();
                q.pop_front();
                ++size;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        int x = a + dr, y = b + dc;
                        if (x < 0 || y < 0 || x >= d.rows || y >= d.cols) continue;
                        if (seen[x][y] || d.level[x][y] != l) continue;
                        seen[x][y] = true;
                        q.push_back({x, y});
                    }
            }
            M[l][size] += 1;
        }
    SizeStats s = size_stats(M, npix);
    return {s.gln, s.glnn, s.glv, s.hge, s.le, s.lhge, s.llge, s.lge,
            s.sn,  s.snn,  s.se,  s.shge, s.slge, s.ent, s.perc, s.sv};
}

inline std::vector<double> ngtdm(const Dense& d, int ng) {
    std::vector<double> s(ng + 1, 0), n(ng + 1, 0);
    for (int r = 0; r < d.rows; ++r)
        for (int c = 0; c < d.cols; ++c) {
            int l = d.level[r][c];
            if (l == 0) continue;
            double sum = 0;
            int cnt = 0;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    if (!dr && !dc) continue;
                    int v = d.at(d.r0 + r + dr, d.c0 + c + dc);
                    if (v) {
                        sum += v;
                        ++cnt;
                    }
                }
            if (!cnt) continue;
            n[l] += 1;
            s[l] += std::fabs(l - sum / cnt);
        }
    double nvp = 0;
    for (double v : n) nvp += v;
    if (nvp == 0) return {0, 1e6, 0, 0, 0};
    std::vector<double> p(ng + 1);
    int ngp = 0;
    double S = 0, ps = 0;
    for (int i = 1; i <= ng; ++i) {
        p[i] = n[i] / nvp;
        ngp += p[i] > 0;
        S += s[i];
        ps += p[i] * s[i];
    }
    double c2 = 0, bden = 0, cx = 0, st = 0;
    for (int i = 1; i <= ng; ++i)
        for (int j = 1; j <= ng; ++j) {
            if (p[i] == 0 || p[j] == 0) continue;
            c2 += p[i] * p[j] * (i - j) * (i - j);
            bden += std::fabs(i * p[i] - j * p[j]);
            cx += std::fabs(i - j) * (p[i] * s[i] + p[j] * s[j]) / (p[i] + p[j]) / nvp;
            st += (p[i] + p[j]) * (i - j) * (i - j);
        }
    return {bden == 0 ? 0 : ps / bden, ps == 0 ? 1e6 : 1 / ps, cx,
            ngp > 1 ? c2 / (ngp * (ngp - 1.0)) * S / nvp : 0, S == 0 ? 0 : st / S};
}

inline std::vector<double> all_features(const NucleusRegion& region, int nb = 32) {
    std::vector<int> levels = levels_of(region, nb);
    Dense d = densify(region, levels);
    double npix = region.pixels.size();
    double mr = 0, mc = 0;
    for (const Pixel& p : region.pixels) {
        mr += p.row / npix;
        mc += p.col / npix;
    }
    std::vector<double> out{mr, mc};
    for (auto part : {first_order(region, levels, nb), glcm(region, levels, nb), gldm(d, nb, npix),
                      glrlm(d, nb, npix), glszm(d, nb, npix), ngtdm(d, nb)})
        out.insert(out.end(), part.begin(), part.end());
    return out;
}

// Random connected blob grown from a seed pixel, with random gray values.
inline NucleusRegion random_region(std::mt19937_64& rng, int max_pixels = 120) {
    std::uniform_int_distribution<int> size_d(1, max_pixels);
    const int target = size_d(rng);
    NucleusRegion region;
    std::vector<std::pair<int, int>> cells{{20, 20}};
    std::vector<std::vector<bool>> used(41, std::vector<bool>(41, false));
    used[20][20] = true;
    std::uniform_int_distribution<int> step(-1, 1);
    while (static_cast<int>(cells.size()) < target) {
        auto [r, c] = cells[std::uniform_int_distribution<std::size_t>(0, cells.size() - 1)(rng)];
        int nr = r + step(rng), nc = c + step(rng);
        if (nr < 0 || nc < 0 || nr > 40 || nc > 40 || used[nr][nc]) continue;
        used[nr][nc] = true;
        cells.push_back({nr, nc});
    }
    // A few gray levels make ties, zones and runs common; some regions use the full range.
    const int palette = std::uniform_int_distribution<int>(1, 6)(rng);
    std::uniform_int_distribution<int> gray(0, 255);
    std::vector<double> colors;
    for (int k = 0; k < palette; ++k) colors.push_back(gray(rng));
    const bool continuous = std::bernoulli_distribution(0.3)(rng);
    for (auto [r, c] : cells) {
        region.pixels.push_back({r, c});
        if (continuous)
            region.intensities.push_back(std::uniform_real_distribution<double>(0, 255)(rng));
        else
            region.intensities.push_back(colors[std::uniform_int_distribution<int>(0, palette - 1)(rng)]);
    }
    return region;
}

}  // namespace oracle
