#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcmlab {

enum class Metric { euclidean, graph };
enum class Boundary { absorbing_box, torus };

/// Geometry of a finite lattice box: d1 half-space factors with coordinates in
/// [0, L] and d2 full factors with coordinates in [-L, L].
struct LatticeSpec {
    int d1 = 0;
    int d2 = 1;
    int L = 1;
    Metric metric = Metric::euclidean;
    Boundary boundary = Boundary::absorbing_box;

    int dim() const { return d1 + d2; }

    std::int64_t site_count() const {
        std::int64_t n = 1;
        for (int k = 0; k < d1; ++k) n *= (L + 1);
        for (int k = 0; k < d2; ++k) n *= (2LL * L + 1);
        return n;
    }
};

inline const char* to_string(Metric m) {
    return m == Metric::euclidean ? "euclidean" : "graph";
}
inline const char* to_string(Boundary b) {
    return b == Boundary::absorbing_box ? "absorbing_box" : "torus";
}

/// Site enumeration with a distance oracle. Sites are indexed row-major over
/// the coordinate ranges; the origin (all coordinates 0) is always a valid site.
class SiteIndex {
public:
    static constexpr std::int64_t kDefaultSiteCap = 16384;

    explicit SiteIndex(const LatticeSpec& spec,
                       std::int64_t site_cap = kDefaultSiteCap)
        : spec_(spec) {
        if (spec.L < 1) throw std::invalid_argument("SiteIndex: L must be >= 1");
        if (spec.dim() < 1)
            throw std::invalid_argument("SiteIndex: d1 + d2 must be >= 1");
        if (spec.boundary == Boundary::torus && spec.d1 > 0)
            throw std::invalid_argument(
                "SiteIndex: torus wrap is undefined for half-space factors");
        std::int64_t n = spec.site_count();
        if (n > site_cap)
            throw std::invalid_argument(
                "SiteIndex: site count " + std::to_string(n) +
                " exceeds cap " + std::to_string(site_cap));
        count_ = static_cast<int>(n);

        const int d = spec.dim();
        lo_.resize(d);
        size_.resize(d);
        for (int k = 0; k < d; ++k) {
            bool half = k < spec.d1;
            lo_[k] = half ? 0 : -spec.L;
            size_[k] = half ? spec.L + 1 : 2 * spec.L + 1;
        }
        coords_.resize(static_cast<std::size_t>(count_) * d);
        std::vector<int> c(d, 0);
        for (int i = 0; i < count_; ++i) {
            int rem = i;
            for (int k = d - 1; k >= 0; --k) {
                c[k] = lo_[k] + rem % size_[k];
                rem /= size_[k];
            }
            for (int k = 0; k < d; ++k) coords_[static_cast<std::size_t>(i) * d + k] = c[k];
        }
    }

    const LatticeSpec& spec() const { return spec_; }
    int size() const { return count_; }
    int dim() const { return spec_.dim(); }

    const int* coords(int site) const {
        return coords_.data() + static_cast<std::size_t>(site) * dim();
    }

    /// Index of the site with the given coordinates; -1 if outside the box.
    int index_of(const std::vector<int>& c) const {
        if (static_cast<int>(c.size()) != dim()) return -1;
        int idx = 0;
        for (int k = 0; k < dim(); ++k) {
            int off = c[k] - lo_[k];
            if (off < 0 || off >= size_[k]) return -1;
            idx = idx * size_[k] + off;
        }
        return idx;
    }

    int origin() const {
        std::vector<int> c(dim(), 0);
        int idx = index_of(c);
        return idx; // all-zero coordinates always lie in the box
    }

    /// Distance per the configured metric; torus boundaries wrap full factors.
    double distance(int a, int b) const {
        if (a == b) return 0.0;
        const int* ca = coords(a);
        const int* cb = coords(b);
        double acc = 0.0;
        for (int k = 0; k < dim(); ++k) {
            int diff = std::abs(ca[k] - cb[k]);
            if (spec_.boundary == Boundary::torus)
                diff = std::min(diff, size_[k] - diff);
            if (spec_.metric == Metric::euclidean)
                acc += static_cast<double>(diff) * diff;
            else
                acc += diff;
        }
        return spec_.metric == Metric::euclidean ? std::sqrt(acc) : acc;
    }

    /// B(center, r) = { y : distance(center, y) <= r }.
    std::vector<int> ball(int center, double r) const {
        std::vector<int> out;
        for (int i = 0; i < count_; ++i)
            if (distance(center, i) <= r) out.push_back(i);
        return out;
    }

    /// Distance of a site from the origin.
    double radius(int site) const { return distance(origin(), site); }

private:
    LatticeSpec spec_;
    int count_ = 0;
    std::vector<int> lo_, size_;
    std::vector<int> coords_;
};

} // namespace rcmlab
