#include "histofuse/pathomics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "histofuse/errors.hpp"

namespace histofuse::pathomics {

namespace {

// Level lookup over the region's bounding box; 0 marks pixels outside the mask.
class LevelGrid {
public:
    explicit LevelGrid(const QuantizedRegion& q) {
        int rmin = q.pixels[0].row, rmax = rmin, cmin = q.pixels[0].col, cmax = cmin;
        for (const Pixel& p : q.pixels) {
            rmin = std::min(rmin, p.row);
            rmax = std::max(rmax, p.row);
            cmin = std::min(cmin, p.col);
            cmax = std::max(cmax, p.col);
        }
        r0_ = rmin;
        c0_ = cmin;
        h_ = rmax - rmin + 1;
        w_ = cmax - cmin + 1;
        cells_.assign(static_cast<std::size_t>(h_) * w_, 0);
        for (std::size_t k = 0; k < q.pixels.size(); ++k) {
            cells_[index(q.pixels[k].row, q.pixels[k].col)] = q.levels[k];
        }
    }

    int at(int row, int col) const {
        const int r = row - r0_;
        const int c = col - c0_;
        if (r < 0 || c < 0 || r >= h_ || c >= w_) return 0;
        return cells_[static_cast<std::size_t>(r) * w_ + c];
    }

private:
    std::size_t index(int row, int col) const { return static_cast<std::size_t>(row - r0_) * w_ + (col - c0_); }

    int r0_ = 0, c0_ = 0, h_ = 0, w_ = 0;
    std::vector<int> cells_;
};

constexpr int kOffsets[4][2] = {{0, 1}, {1, 1}, {1, 0}, {1, -1}};

double plogp_sum(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log2(v);
    }
    return h;
}

// Linear-interpolated percentile of sorted values (numpy's default rule).
double percentile(const std::vector<double>& sorted, double q) {
    const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Statistics shared by the run-length and size-zone matrices. `counts`
// maps (gray level, run length or zone size) to the number of occurrences.
struct SizeMatrixStats {
    double gln, glnn, glv, hgle, large, large_hgle, large_lgle, lgle;
    double entropy, sn, snn, percentage, size_var, small, small_hgle, small_lgle;
};

SizeMatrixStats size_matrix_stats(const std::map<std::pair<int, int>, double>& counts, double n_pixels) {
    double ns = 0.0;
    std::map<int, double> by_level;
    std::map<int, double> by_size;
    for (const auto& [key, c] : counts) {
        ns += c;
        by_level[key.first] += c;
        by_size[key.second] += c;
    }
    SizeMatrixStats s{};
    double mu_i = 0.0, mu_j = 0.0;
    for (const auto& [key, c] : counts) {
        const double i = key.first;
        const double j = key.second;
        const double p = c / ns;
        mu_i += p * i;
        mu_j += p * j;
        s.entropy -= p * std::log2(p);
        s.small += c / (j * j);
        s.large += c * j * j;
        s.lgle += c / (i * i);
        s.hgle += c * i * i;
        s.small_lgle += c / (i * i * j * j);
        s.small_hgle += c * i * i / (j * j);
        s.large_lgle += c * j * j / (i * i);
        s.large_hgle += c * i * i * j * j;
    }
    for (const auto& [key, c] : counts) {
        const double p = c / ns;
        s.glv += p * (key.first - mu_i) * (key.first - mu_i);
        s.size_var += p * (key.second - mu_j) * (key.second - mu_j);
    }
    for (const auto& [level, c] : by_level) s.gln += c * c;
    for (const auto& [size, c] : by_size) s.sn += c * c;
    s.glnn = s.gln / (ns * ns);
    s.gln /= ns;
    s.snn = s.sn / (ns * ns);
    s.sn /= ns;
    s.percentage = ns / n_pixels;
    s.small /= ns;
    s.large /= ns;
    s.lgle /= ns;
    s.hgle /= ns;
    s.small_lgle /= ns;
    s.small_hgle /= ns;
    s.large_lgle /= ns;
    s.large_hgle /= ns;
    return s;
}

}  // namespace

const std::array<std::string_view, kFeatureCount>& feature_names() {
    static const std::array<std::string_view, kFeatureCount> names = {
        // location
        "location_center_of_mass_x", "location_center_of_mass_y",
        // first order
        "firstorder_10percentile", "firstorder_90percentile", "firstorder_energy", "firstorder_entropy",
        "firstorder_interquartile_range", "firstorder_kurtosis", "firstorder_maximum",
        "firstorder_mean_absolute_deviation", "firstorder_mean", "firstorder_median", "firstorder_minimum",
        "firstorder_range", "firstorder_robust_mean_absolute_deviation", "firstorder_root_mean_squared",
        "firstorder_skewness", "firstorder_total_energy", "firstorder_uniformity", "firstorder_variance",
        // glcm
        "glcm_autocorrelation", "glcm_cluster_prominence", "glcm_cluster_shade", "glcm_cluster_tendency",
        "glcm_contrast", "glcm_correlation", "glcm_difference_average", "glcm_difference_entropy",
        "glcm_difference_variance", "glcm_inverse_difference", "glcm_inverse_difference_moment",
        "glcm_inverse_difference_moment_normalized", "glcm_inverse_difference_normalized",
        "glcm_informational_measure_of_correlation_1", "glcm_informational_measure_of_correlation_2",
        "glcm_inverse_variance", "glcm_joint_average", "glcm_joint_energy", "glcm_joint_entropy",
        "glcm_maximal_correlation_coefficient", "glcm_maximum_probability",
        "glcm_sum_entropy", "glcm_sum_squares",
        // gldm
        "gldm_dependence_entropy", "gldm_dependence_non_uniformity", "gldm_dependence_non_uniformity_normalized",
        "gldm_dependence_variance", "gldm_gray_level_non_uniformity", "gldm_gray_level_variance",
        "gldm_high_gray_level_emphasis", "gldm_large_dependence_emphasis",
        "gldm_large_dependence_high_gray_level_emphasis", "gldm_large_dependence_low_gray_level_emphasis",
        "gldm_low_gray_level_emphasis", "gldm_small_dependence_emphasis",
        "gldm_small_dependence_high_gray_level_emphasis", "gldm_small_dependence_low_gray_level_emphasis",
        // glrlm
        "glrlm_gray_level_non_uniformity", "glrlm_gray_level_non_uniformity_normalized",
        "glrlm_gray_level_variance", "glrlm_high_gray_level_run_emphasis", "glrlm_long_run_emphasis",
        "glrlm_long_run_high_gray_level_emphasis", "glrlm_long_run_low_gray_level_emphasis",
        "glrlm_low_gray_level_run_emphasis", "glrlm_run_entropy", "glrlm_run_length_non_uniformity",
        "glrlm_run_length_non_uniformity_normalized", "glrlm_run_percentage", "glrlm_run_variance",
        "glrlm_short_run_emphasis", "glrlm_short_run_high_gray_level_emphasis",
        "glrlm_short_run_low_gray_level_emphasis",
        // glszm
        "glszm_gray_level_non_uniformity", "glszm_gray_level_non_uniformity_normalized",
        "glszm_gray_level_variance", "glszm_high_gray_level_zone_emphasis", "glszm_large_area_emphasis",
        "glszm_large_area_high_gray_level_emphasis", "glszm_large_area_low_gray_level_emphasis",
        "glszm_low_gray_level_zone_emphasis", "glszm_size_zone_non_uniformity",
        "glszm_size_zone_non_uniformity_normalized", "glszm_small_area_emphasis",
        "glszm_small_area_high_gray_level_emphasis", "glszm_small_area_low_gray_level_emphasis",
        "glszm_zone_entropy", "glszm_zone_percentage", "glszm_zone_variance",
        // ngtdm
        "ngtdm_busyness", "ngtdm_coarseness", "ngtdm_complexity", "ngtdm_contrast", "ngtdm_strength"};
    return names;
}

void validate(const NucleusRegion& region) {
    if (region.pixels.empty()) throw InputError("nucleus region has no pixels");
    if (region.pixels.size() != region.intensities.size()) {
        throw InputError("nucleus region needs one intensity per pixel");
    }
    for (double v : region.intensities) {
        if (!(v >= 0.0 && v <= 255.0)) throw InputError("intensity outside [0, 255]: " + std::to_string(v));
    }
    std::vector<std::pair<int, int>> coords;
    coords.reserve(region.pixels.size());
    for (const Pixel& p : region.pixels) coords.emplace_back(p.row, p.col);
    std::sort(coords.begin(), coords.end());
    if (std::adjacent_find(coords.begin(), coords.end()) != coords.end()) {
        throw InputError("nucleus region lists a pixel twice");
    }
}

QuantizedRegion quantize(const NucleusRegion& region, int n_bins) {
    if (region.pixels.empty()) throw InputError("cannot quantize an empty region");
    if (n_bins < 2) throw ParameterError("quantize: n_bins must be at least 2");
    const auto [lo_it, hi_it] = std::minmax_element(region.intensities.begin(), region.intensities.end());
    const double lo = *lo_it;
    const double span = *hi_it - lo;
    QuantizedRegion q;
    q.pixels = region.pixels;
    q.n_bins = n_bins;
    q.levels.reserve(region.intensities.size());
    for (double v : region.intensities) {
        int level = 1;
        if (span > 0.0) {
            level = static_cast<int>(std::floor((v - lo) * n_bins / span)) + 1;
            level = std::min(level, n_bins);
        }
        q.levels.push_back(level);
    }
    return q;
}

std::array<double, kLocationCount> location_features(const NucleusRegion& region) {
    if (region.pixels.empty()) throw InputError("location of an empty region");
    double r = 0.0, c = 0.0;
    for (const Pixel& p : region.pixels) {
        r += p.row;
        c += p.col;
    }
    const double n = static_cast<double>(region.pixels.size());
    return {r / n, c / n};
}

std::array<double, kFirstOrderCount> first_order_features(const NucleusRegion& region, int n_bins) {
    if (region.pixels.empty()) throw InputError("first-order features of an empty region");
    const std::vector<double>& x = region.intensities;
    const double n = static_cast<double>(x.size());
    std::vector<double> sorted = x;
    std::sort(sorted.begin(), sorted.end());

    double sum = 0.0, energy = 0.0;
    for (double v : x) {
        sum += v;
        energy += v * v;
    }
    const double mu = sum / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0, mad = 0.0;
    for (double v : x) {
        const double d = v - mu;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        mad += std::abs(d);
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    mad /= n;

    const double p10 = percentile(sorted, 10.0);
    const double p90 = percentile(sorted, 90.0);
    double robust_sum = 0.0;
    std::size_t robust_n = 0;
    for (double v : x) {
        if (v >= p10 && v <= p90) {
            robust_sum += v;
            ++robust_n;
        }
    }
    double robust_mad = 0.0;
    if (robust_n > 0) {
        const double robust_mu = robust_sum / static_cast<double>(robust_n);
        for (double v : x) {
            if (v >= p10 && v <= p90) robust_mad += std::abs(v - robust_mu);
        }
        robust_mad /= static_cast<double>(robust_n);
    }

    const QuantizedRegion q = quantize(region, n_bins);
    std::vector<double> hist(static_cast<std::size_t>(n_bins), 0.0);
    for (int level : q.levels) hist[level - 1] += 1.0;
    for (double& p : hist) p /= n;
    double uniformity = 0.0;
    for (double p : hist) uniformity += p * p;

    const bool flat = !(m2 > 0.0);
    return {
        p10,
        p90,
        energy,
        plogp_sum(hist),
        percentile(sorted, 75.0) - percentile(sorted, 25.0),
        flat ? 0.0 : m4 / (m2 * m2),
        sorted.back(),
        mad,
        mu,
        percentile(sorted, 50.0),
        sorted.front(),
        sorted.back() - sorted.front(),
        robust_mad,
        std::sqrt(energy / n),
        flat ? 0.0 : m3 / std::pow(m2, 1.5),
        energy,  // unit pixel area
        uniformity,
        m2,
    };
}

std::vector<double> cooccurrence_counts(const QuantizedRegion& q, int drow, int dcol) {
    const auto ng = static_cast<std::size_t>(q.n_bins);
    std::vector<double> counts(ng * ng, 0.0);
    if (q.pixels.empty()) return counts;
    const LevelGrid grid(q);
    for (std::size_t k = 0; k < q.pixels.size(); ++k) {
        const int j = grid.at(q.pixels[k].row + drow, q.pixels[k].col + dcol);
        if (j == 0) continue;
        const int i = q.levels[k];
        counts[(i - 1) * ng + (j - 1)] += 1.0;
        counts[(j - 1) * ng + (i - 1)] += 1.0;
    }
    return counts;
}

std::array<double, kGlcmCount> glcm_features(const QuantizedRegion& q) {
    const int ng = q.n_bins;
    const auto n = static_cast<std::size_t>(ng);
    std::vector<double> p(n * n, 0.0);
    for (const auto& off : kOffsets) {
        const auto c = cooccurrence_counts(q, off[0], off[1]);
        for (std::size_t k = 0; k < p.size(); ++k) p[k] += c[k];
    }
    double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (total == 0.0) {
        // No neighbouring pairs: evaluate at the constant-region matrix.
        p[0] = 1.0;
        total = 1.0;
    }
    for (double& v : p) v /= total;

    std::vector<double> px(n, 0.0), py(n, 0.0);
    std::vector<double> p_sum(2 * n + 1, 0.0);  // index k = i + j, levels 1-based
    std::vector<double> p_diff(n, 0.0);         // index k = |i - j|
    for (int i = 1; i <= ng; ++i) {
        for (int j = 1; j <= ng; ++j) {
            const double v = p[(i - 1) * n + (j - 1)];
            px[i - 1] += v;
            py[j - 1] += v;
            p_sum[i + j] += v;
            p_diff[std::abs(i - j)] += v;
        }
    }
    double mux = 0.0, muy = 0.0;
    for (int i = 1; i <= ng; ++i) {
        mux += i * px[i - 1];
        muy += i * py[i - 1];
    }
    double varx = 0.0, vary = 0.0;
    for (int i = 1; i <= ng; ++i) {
        varx += (i - mux) * (i - mux) * px[i - 1];
        vary += (i - muy) * (i - muy) * py[i - 1];
    }

    double autocorr = 0.0, prominence = 0.0, shade = 0.0, tendency = 0.0, contrast = 0.0;
    double energy = 0.0, max_prob = 0.0, hxy1 = 0.0, hxy2 = 0.0;
    for (int i = 1; i <= ng; ++i) {
        for (int j = 1; j <= ng; ++j) {
            const double v = p[(i - 1) * n + (j - 1)];
            const double c = i + j - mux - muy;
            autocorr += v * i * j;
            prominence += v * c * c * c * c;
            shade += v * c * c * c;
            tendency += v * c * c;
            contrast += v * (i - j) * (i - j);
            energy += v * v;
            max_prob = std::max(max_prob, v);
            const double pp = px[i - 1] * py[j - 1];
            if (pp > 0.0) {
                hxy1 -= v * std::log2(pp);
                hxy2 -= pp * std::log2(pp);
            }
        }
    }
    const double sigma = std::sqrt(varx) * std::sqrt(vary);
    const double correlation = sigma > 0.0 ? (autocorr - mux * muy) / sigma : 0.0;

    double diff_avg = 0.0, id = 0.0, idm = 0.0, idmn = 0.0, idn = 0.0, inv_var = 0.0;
    for (int k = 0; k < ng; ++k) {
        const double v = p_diff[k];
        diff_avg += k * v;
        id += v / (1.0 + k);
        idm += v / (1.0 + static_cast<double>(k) * k);
        idmn += v / (1.0 + static_cast<double>(k) * k / (static_cast<double>(ng) * ng));
        idn += v / (1.0 + static_cast<double>(k) / ng);
        if (k > 0) inv_var += v / (static_cast<double>(k) * k);
    }
    double diff_var = 0.0;
    for (int k = 0; k < ng; ++k) diff_var += (k - diff_avg) * (k - diff_avg) * p_diff[k];

    const double hx = plogp_sum(px);
    const double hy = plogp_sum(py);
    const double hxy = plogp_sum(p);
    const double hmax = std::max(hx, hy);
    const double imc1 = hmax > 0.0 ? (hxy - hxy1) / hmax : 0.0;
    const double imc2 = std::sqrt(1.0 - std::exp(-2.0 * std::max(0.0, hxy2 - hxy)));

    // Q = D⁻¹PD⁻¹Pᵀ is similar to M² with M = D^{-1/2} P D^{-1/2} symmetric, so the
    // square roots of Q's eigenvalues are |eig(M)|.
    double mcc = 0.0;
    std::vector<int> active;
    for (int i = 0; i < ng; ++i) {
        if (px[i] > 0.0) active.push_back(i);
    }
    if (active.size() >= 2) {
        const auto m = static_cast<Eigen::Index>(active.size());
        Eigen::MatrixXd sym(m, m);
        for (Eigen::Index a = 0; a < m; ++a) {
            for (Eigen::Index b = 0; b < m; ++b) {
                const int i = active[a];
                const int j = active[b];
                sym(a, b) = p[i * n + j] / std::sqrt(px[i] * px[j]);
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym, Eigen::EigenvaluesOnly);
        std::vector<double> mags;
        for (Eigen::Index a = 0; a < m; ++a) mags.push_back(std::abs(solver.eigenvalues()(a)));
        std::sort(mags.begin(), mags.end(), std::greater<>());
        mcc = mags[1];
    }

    double sum_sq = 0.0;
    for (int i = 1; i <= ng; ++i) sum_sq += (i - mux) * (i - mux) * px[i - 1];

    return {autocorr,
            prominence,
            shade,
            tendency,
            contrast,
            correlation,
            diff_avg,
            plogp_sum(p_diff),
            diff_var,
            id,
            idm,
            idmn,
            idn,
            imc1,
            imc2,
            inv_var,
            mux,
            energy,
            hxy,
            mcc,
            max_prob,
            plogp_sum(p_sum),
            sum_sq};
}

std::array<double, kGldmCount> gldm_features(const QuantizedRegion& q) {
    if (q.pixels.empty()) throw InputError("GLDM of an empty region");
    const LevelGrid grid(q);
    std::map<std::pair<int, int>, double> counts;  // (level, dependence) -> pixels
    for (std::size_t k = 0; k < q.pixels.size(); ++k) {
        const int level = q.levels[k];
        int dependence = 1;
        for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
                if ((dr != 0 || dc != 0) && grid.at(q.pixels[k].row + dr, q.pixels[k].col + dc) == level) {
                    ++dependence;
                }
            }
        }
        counts[{level, dependence}] += 1.0;
    }
    const double nz = static_cast<double>(q.pixels.size());
    std::map<int, double> by_level, by_dep;
    double mu_i = 0.0, mu_j = 0.0, entropy = 0.0;
    double sde = 0.0, lde = 0.0, lgle = 0.0, hgle = 0.0, sdlgle = 0.0, sdhgle = 0.0, ldlgle = 0.0, ldhgle = 0.0;
    for (const auto& [key, c] : counts) {
        const double i = key.first;
        const double j = key.second;
        const double p = c / nz;
        by_level[key.first] += c;
        by_dep[key.second] += c;
        mu_i += p * i;
        mu_j += p * j;
        entropy -= p * std::log2(p);
        sde += c / (j * j);
        lde += c * j * j;
        lgle += c / (i * i);
        hgle += c * i * i;
        sdlgle += c / (i * i * j * j);
        sdhgle += c * i * i / (j * j);
        ldlgle += c * j * j / (i * i);
        ldhgle += c * i * i * j * j;
    }
    double glv = 0.0, dv = 0.0;
    for (const auto& [key, c] : counts) {
        glv += c / nz * (key.first - mu_i) * (key.first - mu_i);
        dv += c / nz * (key.second - mu_j) * (key.second - mu_j);
    }
    double gln = 0.0, dn = 0.0;
    for (const auto& [level, c] : by_level) gln += c * c;
    for (const auto& [dep, c] : by_dep) dn += c * c;
    return {entropy, dn / nz,       dn / (nz * nz), dv,          gln / nz,    glv,         hgle / nz,
            lde / nz, ldhgle / nz, ldlgle / nz,    lgle / nz,   sde / nz,    sdhgle / nz, sdlgle / nz};
}

std::array<double, kGlrlmCount> glrlm_features(const QuantizedRegion& q) {
    if (q.pixels.empty()) throw InputError("GLRLM of an empty region");
    const LevelGrid grid(q);
    std::array<double, kGlrlmCount> mean{};
    for (const auto& off : kOffsets) {
        std::map<std::pair<int, int>, double> runs;
        for (std::size_t k = 0; k < q.pixels.size(); ++k) {
            const int level = q.levels[k];
            const Pixel& p = q.pixels[k];
            if (grid.at(p.row - off[0], p.col - off[1]) == level) continue;  // not a run start
            int length = 1;
            while (grid.at(p.row + length * off[0], p.col + length * off[1]) == level) ++length;
            runs[{level, length}] += 1.0;
        }
        const SizeMatrixStats s = size_matrix_stats(runs, static_cast<double>(q.pixels.size()));
        const std::array<double, kGlrlmCount> v = {s.gln,        s.glnn,   s.glv,   s.hgle,       s.large,
                                                   s.large_hgle, s.large_lgle, s.lgle, s.entropy, s.sn,
                                                   s.snn,        s.percentage, s.size_var, s.small,
                                                   s.small_hgle, s.small_lgle};
        for (std::size_t i = 0; i < kGlrlmCount; ++i) mean[i] += v[i] / 4.0;
    }
    return mean;
}

std::array<double, kGlszmCount> glszm_features(const QuantizedRegion& q) {
    if (q.pixels.empty()) throw InputError("GLSZM of an empty region");
    // Union-find over 8-connected equal-level neighbours.
    const std::size_t n = q.pixels.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    };
    std::map<std::pair<int, int>, std::size_t> index;
    for (std::size_t k = 0; k < n; ++k) index[{q.pixels[k].row, q.pixels[k].col}] = k;
    for (std::size_t k = 0; k < n; ++k) {
        for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
                if (dr == 0 && dc == 0) continue;
                auto it = index.find({q.pixels[k].row + dr, q.pixels[k].col + dc});
                if (it == index.end() || q.levels[it->second] != q.levels[k]) continue;
                const std::size_t a = find(k);
                const std::size_t b = find(it->second);
                if (a != b) parent[std::max(a, b)] = std::min(a, b);
            }
        }
    }
    std::map<std::size_t, int> zone_size;
    for (std::size_t k = 0; k < n; ++k) ++zone_size[find(k)];
    std::map<std::pair<int, int>, double> zones;
    for (const auto& [root, size] : zone_size) zones[{q.levels[root], size}] += 1.0;
    const SizeMatrixStats s = size_matrix_stats(zones, static_cast<double>(n));
    return {s.gln,  s.glnn,  s.glv,   s.hgle,       s.large,      s.large_hgle, s.large_lgle, s.lgle,
            s.sn,   s.snn,   s.small, s.small_hgle, s.small_lgle, s.entropy,    s.percentage, s.size_var};
}

std::array<double, kNgtdmCount> ngtdm_features(const QuantizedRegion& q) {
    if (q.pixels.empty()) throw InputError("NGTDM of an empty region");
    const LevelGrid grid(q);
    const auto ng = static_cast<std::size_t>(q.n_bins);
    std::vector<double> s(ng, 0.0), cnt(ng, 0.0);
    for (std::size_t k = 0; k < q.pixels.size(); ++k) {
        double neigh = 0.0;
        int valid = 0;
        for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
                if (dr == 0 && dc == 0) continue;
                const int level = grid.at(q.pixels[k].row + dr, q.pixels[k].col + dc);
                if (level > 0) {
                    neigh += level;
                    ++valid;
                }
            }
        }
        if (valid == 0) continue;
        const int i = q.levels[k];
        s[i - 1] += std::abs(i - neigh / valid);
        cnt[i - 1] += 1.0;
    }
    const double nvp = std::accumulate(cnt.begin(), cnt.end(), 0.0);
    if (nvp == 0.0) return {0.0, kCoarsenessCap, 0.0, 0.0, 0.0};

    std::vector<double> p(ng);
    std::size_t ngp = 0;
    double ps = 0.0, s_total = 0.0;
    for (std::size_t i = 0; i < ng; ++i) {
        p[i] = cnt[i] / nvp;
        if (p[i] > 0.0) ++ngp;
        ps += p[i] * s[i];
        s_total += s[i];
    }
    double contrast_sum = 0.0, busy_den = 0.0, complexity = 0.0, strength_num = 0.0;
    for (std::size_t a = 0; a < ng; ++a) {
        if (p[a] == 0.0) continue;
        for (std::size_t b = 0; b < ng; ++b) {
            if (p[b] == 0.0) continue;
            const double i = static_cast<double>(a + 1);
            const double j = static_cast<double>(b + 1);
            contrast_sum += p[a] * p[b] * (i - j) * (i - j);
            busy_den += std::abs(i * p[a] - j * p[b]);
            complexity += std::abs(i - j) * (p[a] * s[a] + p[b] * s[b]) / (p[a] + p[b]);
            strength_num += (p[a] + p[b]) * (i - j) * (i - j);
        }
    }
    const double coarseness = ps > 0.0 ? 1.0 / ps : kCoarsenessCap;
    const double contrast =
        ngp > 1 ? contrast_sum / (static_cast<double>(ngp) * static_cast<double>(ngp - 1)) * s_total / nvp : 0.0;
    const double busyness = busy_den > 0.0 ? ps / busy_den : 0.0;
    const double strength = s_total > 0.0 ? strength_num / s_total : 0.0;
    return {busyness, coarseness, complexity / nvp, contrast, strength};
}

FeatureVector extract_node_features(const NucleusRegion& region, int n_bins) {
    validate(region);
    const QuantizedRegion q = quantize(region, n_bins);
    FeatureVector out{};
    std::size_t at = 0;
    auto append = [&](const auto& part) {
        for (double v : part) out[at++] = v;
    };
    append(location_features(region));
    append(first_order_features(region, n_bins));
    append(glcm_features(q));
    append(gldm_features(q));
    append(glrlm_features(q));
    append(glszm_features(q));
    append(ngtdm_features(q));
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!std::isfinite(out[i])) {
            throw NumericError("feature " + std::string(feature_names()[i]) + " is not finite");
        }
    }
    return out;
}

}  // namespace histofuse::pathomics
