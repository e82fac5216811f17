#include "ergodic_limits/map_families.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "ergodic_limits/errors.hpp"

namespace ergodic_limits {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string fmt_param(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double lsv_left(double gamma, double x) noexcept {
    return x * (1.0 + std::pow(2.0 * x, gamma));
}

inline double lsv_left_derivative(double gamma, double x) noexcept {
    return 1.0 + (1.0 + gamma) * std::pow(2.0 * x, gamma);
}

void check_domain(const MapDescriptor& map, double x) {
    const Interval d = map.domain();
    if (!(x >= d.lo && x <= d.hi)) {
        throw DomainError(map.name() + ": x = " + fmt_param(x) + " outside [" + fmt_param(d.lo) + ", " +
                          fmt_param(d.hi) + "]");
    }
}

}  // namespace

MapDescriptor MapDescriptor::doubling(int lambda) {
    if (lambda < 2) throw InvalidArgument("Doubling requires integer lambda >= 2");
    MapDescriptor m;
    m.kind_ = MapKind::Doubling;
    m.lambda_ = lambda;
    return m;
}

MapDescriptor MapDescriptor::lsv(double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("LSV requires gamma in (0,1)");
    MapDescriptor m;
    m.kind_ = MapKind::LSV;
    m.gamma_ = gamma;
    return m;
}

MapDescriptor MapDescriptor::quadratic(double a) {
    if (!(a >= 0.0 && a <= 2.0)) throw InvalidArgument("Quadratic requires a in [0,2]");
    MapDescriptor m;
    m.kind_ = MapKind::Quadratic;
    m.a_ = a;
    return m;
}

double MapDescriptor::parameter() const noexcept {
    switch (kind_) {
        case MapKind::Doubling: return lambda_;
        case MapKind::LSV: return gamma_;
        case MapKind::Quadratic: return a_;
    }
    return 0.0;
}

MapDescriptor MapDescriptor::with_parameter(double value) const {
    switch (kind_) {
        case MapKind::Doubling: {
            const double r = std::round(value);
            if (std::abs(r - value) > 1e-12) throw InvalidArgument("Doubling lambda must be an integer");
            return doubling(static_cast<int>(r));
        }
        case MapKind::LSV: return lsv(value);
        case MapKind::Quadratic: return quadratic(value);
    }
    return *this;
}

Interval MapDescriptor::domain() const noexcept {
    if (kind_ == MapKind::Quadratic) return {-1.0, 1.0};
    return {0.0, 1.0};
}

std::string MapDescriptor::name() const {
    switch (kind_) {
        case MapKind::Doubling: return "Doubling(" + std::to_string(lambda_) + ")";
        case MapKind::LSV: return "LSV(" + fmt_param(gamma_) + ")";
        case MapKind::Quadratic: return "Quadratic(" + fmt_param(a_) + ")";
    }
    return "?";
}

double evaluate(const MapDescriptor& map, double x) {
    check_domain(map, x);
    switch (map.kind()) {
        case MapKind::Doubling: {
            const double y = map.lambda() * x;
            return y - std::floor(y);
        }
        case MapKind::LSV:
            return x < 0.5 ? lsv_left(map.gamma(), x) : 2.0 * x - 1.0;
        case MapKind::Quadratic:
            return 1.0 - map.a() * x * x;
    }
    return x;
}

std::vector<double> orbit(const MapDescriptor& map, double x0, std::int64_t n) {
    if (n < 0) throw InvalidArgument("orbit length must be >= 0");
    check_domain(map, x0);
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n) + 1);
    out.push_back(x0);
    for (std::int64_t k = 0; k < n; ++k) out.push_back(evaluate(map, out.back()));
    return out;
}

double derivative(const MapDescriptor& map, double x) {
    check_domain(map, x);
    switch (map.kind()) {
        case MapKind::Doubling: return map.lambda();
        case MapKind::LSV: return x < 0.5 ? lsv_left_derivative(map.gamma(), x) : 2.0;
        case MapKind::Quadratic: return -2.0 * map.a() * x;
    }
    return 0.0;
}

double lsv_left_inverse(double gamma, double w) {
    if (!(w >= 0.0 && w <= 1.0)) throw DomainError("lsv_left_inverse: w outside [0,1]");
    if (w == 0.0) return 0.0;
    if (w == 1.0) return 0.5;
    // Newton from x = w, which lies above the root since T_L(x) >= x; the
    // iteration stays bracketed in [lo, hi].
    double lo = 0.0;
    double hi = std::min(0.5, w);
    double x = hi;
    for (int it = 0; it < 100; ++it) {
        const double f = lsv_left(gamma, x) - w;
        if (f > 0.0) hi = x; else lo = x;
        double next = x - f / lsv_left_derivative(gamma, x);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 4.0 * std::numeric_limits<double>::epsilon() * x) return next;
        x = next;
    }
    return x;
}

// ---------------------------------------------------------------------------

Observable Observable::closed_form(std::vector<std::vector<Term>> components, std::vector<double> centering_offset) {
    if (components.empty()) throw InvalidArgument("observable needs at least one component");
    if (centering_offset.empty()) centering_offset.assign(components.size(), 0.0);
    if (centering_offset.size() != components.size()) {
        throw InvalidArgument("centering_offset length must equal the observable dimension");
    }
    Observable o;
    o.form_ = ObservableForm::ClosedForm;
    o.components_ = std::move(components);
    o.offset_ = std::move(centering_offset);
    return o;
}

Observable Observable::cos2pi(double k) {
    return closed_form({{Term{BasisFunction::Cos, k, 1.0}}});
}

Observable Observable::bump_on_y(double center, double width, double eta, double offset) {
    if (!(width > 0.0)) throw InvalidArgument("bump width must be positive");
    if (!(eta > 0.0 && eta <= 1.0)) throw InvalidArgument("bump Hölder exponent must lie in (0,1]");
    Observable o;
    o.form_ = ObservableForm::BumpOnY;
    o.center_ = center;
    o.width_ = width;
    o.eta_ = eta;
    o.offset_ = {offset};
    return o;
}

Interval Observable::support() const noexcept {
    if (form_ == ObservableForm::BumpOnY) return {center_ - width_, center_ + width_};
    return {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
}

Observable Observable::with_offset(std::vector<double> offset) const {
    if (offset.size() != offset_.size()) throw InvalidArgument("offset dimension mismatch");
    Observable o = *this;
    o.offset_ = std::move(offset);
    return o;
}

Observable Observable::scaled(double c) const {
    Observable o = *this;
    if (form_ == ObservableForm::ClosedForm) {
        for (auto& comp : o.components_)
            for (auto& t : comp) t.coef *= c;
        for (auto& off : o.offset_) off *= c;
    } else {
        throw InvalidArgument("BumpOnY observables cannot be rescaled");
    }
    return o;
}

namespace {

inline double eval_terms(const std::vector<Term>& terms, double x) noexcept {
    double s = 0.0;
    for (const Term& t : terms) {
        switch (t.fn) {
            case BasisFunction::Cos: s += t.coef * std::cos(kTwoPi * t.k * x); break;
            case BasisFunction::Sin: s += t.coef * std::sin(kTwoPi * t.k * x); break;
            case BasisFunction::Power: s += t.coef * std::pow(x, t.k); break;
        }
    }
    return s;
}

inline double tent(double x, double center, double width, double eta) noexcept {
    const double r = 1.0 - std::abs(x - center) / width;
    if (r <= 0.0) return 0.0;
    return eta == 1.0 ? r : std::pow(r, eta);
}

}  // namespace

void Observable::evaluate(double x, double* out) const noexcept {
    if (form_ == ObservableForm::BumpOnY) {
        const double g = tent(x, center_, width_, eta_);
        out[0] = g == 0.0 ? 0.0 : g * ((x - center_) / width_ - offset_[0]);
        return;
    }
    for (std::size_t i = 0; i < components_.size(); ++i) out[i] = eval_terms(components_[i], x) - offset_[i];
}

double Observable::evaluate_scalar(double x) const noexcept {
    if (form_ == ObservableForm::BumpOnY) {
        const double g = tent(x, center_, width_, eta_);
        return g == 0.0 ? 0.0 : g * ((x - center_) / width_ - offset_[0]);
    }
    return eval_terms(components_[0], x) - offset_[0];
}

void Observable::raw(double x, double* value, double* envelope) const noexcept {
    if (form_ == ObservableForm::BumpOnY) {
        const double g = tent(x, center_, width_, eta_);
        value[0] = g * (x - center_) / width_;
        envelope[0] = g;
        return;
    }
    for (std::size_t i = 0; i < components_.size(); ++i) {
        value[i] = eval_terms(components_[i], x);
        envelope[i] = 1.0;
    }
}

std::vector<double> sample_observable(const Observable& obs, const MapDescriptor& map, double x) {
    check_domain(map, x);
    std::vector<double> out(static_cast<std::size_t>(obs.dimension()));
    obs.evaluate(x, out.data());
    return out;
}

// ---------------------------------------------------------------------------

FastOrbit::FastOrbit(const MapDescriptor& map, CounterStream stream)
    : kind_(map.kind()), param_(map.parameter()), stream_(stream) {
    const Interval dom = map.domain();
    if (kind_ == MapKind::Doubling) {
        base_ = static_cast<std::uint32_t>(map.lambda());
        // Largest window with base^W <= 2^63.
        modulus_ = 1;
        while (modulus_ <= (std::uint64_t{1} << 63) / base_) modulus_ *= base_;
        high_ = modulus_ / base_;
        inv_modulus_ = 1.0 / static_cast<double>(modulus_);
        if (base_ == 2) {
            digits_ = stream_.next_u64() >> 1;
        } else {
            digits_ = 0;
            for (std::uint64_t m = 1; m < modulus_; m *= base_) digits_ = digits_ * base_ + stream_.digit(base_);
        }
        x_ = static_cast<double>(digits_) * inv_modulus_;
    } else {
        x_ = dom.lo + dom.width() * stream_.uniform();
    }
}

void FastOrbit::step() noexcept {
    switch (kind_) {
        case MapKind::Doubling: {
            std::uint32_t d;
            if (base_ == 2) {
                if (bits_left_ == 0) {
                    bitbuf_ = stream_.next_u64();
                    bits_left_ = 64;
                }
                d = static_cast<std::uint32_t>(bitbuf_ & 1u);
                bitbuf_ >>= 1;
                --bits_left_;
            } else {
                d = stream_.digit(base_);
            }
            digits_ = (digits_ % high_) * base_ + d;
            x_ = static_cast<double>(digits_) * inv_modulus_;
            break;
        }
        case MapKind::LSV:
            x_ = x_ < 0.5 ? lsv_left(param_, x_) : 2.0 * x_ - 1.0;
            break;
        case MapKind::Quadratic:
            x_ = 1.0 - param_ * x_ * x_;
            break;
    }
}

Observable center_observable(const Observable& obs, const MapDescriptor& map, const CenteringOptions& opts) {
    if (opts.n_center < 1) throw InvalidArgument("n_center must be positive");
    const int d = obs.dimension();
    FastOrbit orb(map, CounterStream(opts.seed, 0, StreamDomain::LongOrbit));
    orb.advance(opts.burn_in);
    std::vector<double> value(d), env(d), sum_v(d, 0.0), sum_e(d, 0.0);
    // Block partial sums keep the long sum accurate.
    std::vector<double> blk_v(d, 0.0), blk_e(d, 0.0);
    constexpr std::int64_t kBlock = 4096;
    for (std::int64_t n = 0; n < opts.n_center; ++n) {
        obs.raw(orb.x(), value.data(), env.data());
        for (int i = 0; i < d; ++i) {
            blk_v[i] += value[i];
            blk_e[i] += env[i];
        }
        if ((n + 1) % kBlock == 0 || n + 1 == opts.n_center) {
            for (int i = 0; i < d; ++i) {
                sum_v[i] += blk_v[i];
                sum_e[i] += blk_e[i];
                blk_v[i] = blk_e[i] = 0.0;
            }
        }
        orb.step();
    }
    std::vector<double> offset(d);
    for (int i = 0; i < d; ++i) {
        if (sum_e[i] == 0.0) throw InsufficientData("observable envelope never visited by the centering orbit");
        offset[i] = sum_v[i] / sum_e[i];
    }
    return obs.with_offset(std::move(offset));
}

// ---------------------------------------------------------------------------

InducedSystem::InducedSystem(MapDescriptor map, Interval y, std::vector<Branch> branches, int tau_max,
                             double tail_mass_bound, std::vector<double> left_preimages)
    : map_(map),
      y_(y),
      branches_(std::move(branches)),
      tau_max_(tau_max),
      tail_mass_bound_(tail_mass_bound),
      left_preimages_(std::move(left_preimages)) {}

std::optional<std::size_t> InducedSystem::branch_of(double y) const noexcept {
    if (!(y >= y_.lo && y <= y_.hi) || branches_.empty()) return std::nullopt;
    auto it = std::upper_bound(branches_.begin(), branches_.end(), y,
                               [](double v, const Branch& b) { return v < b.interval.lo; });
    if (it == branches_.begin()) return std::nullopt;
    const std::size_t idx = static_cast<std::size_t>(std::distance(branches_.begin(), it)) - 1;
    const Interval& iv = branches_[idx].interval;
    const bool last = idx + 1 == branches_.size();
    if (y < iv.hi || (last && y <= iv.hi)) return idx;
    return std::nullopt;
}

double InducedSystem::forward(std::size_t b, double y) const {
    const Branch& br = branches_.at(b);
    if (map_.kind() == MapKind::Doubling) {
        // Closed branch [k/lambda, (k+1)/lambda] onto [0,1].
        return map_.lambda() * y - static_cast<double>(b);
    }
    double x = y;
    for (int k = 0; k < br.return_time; ++k) x = evaluate(map_, x);
    return x;
}

double InducedSystem::inverse(std::size_t b, double y) const {
    const Branch& br = branches_.at(b);
    if (!y_.contains(y)) throw DomainError("InducedSystem::inverse: y outside Y");
    if (map_.kind() == MapKind::Doubling) return (y + static_cast<double>(b)) / map_.lambda();
    double z = y;
    for (int k = 1; k < br.return_time; ++k) z = lsv_left_inverse(map_.gamma(), z);
    return 0.5 * (1.0 + z);
}

double InducedSystem::forward_derivative(std::size_t b, double x) const {
    const Branch& br = branches_.at(b);
    if (map_.kind() == MapKind::Doubling) return map_.lambda();
    double deriv = 1.0;
    double z = x;
    for (int k = 0; k < br.return_time; ++k) {
        deriv *= derivative(map_, z);
        z = evaluate(map_, z);
    }
    return deriv;
}

std::vector<std::vector<double>> InducedSystem::inverse_images(std::span<const double> ys) const {
    std::vector<std::vector<double>> out(branches_.size());
    if (map_.kind() == MapKind::Doubling) {
        for (std::size_t b = 0; b < branches_.size(); ++b) {
            out[b].resize(ys.size());
            for (std::size_t k = 0; k < ys.size(); ++k) out[b][k] = (ys[k] + static_cast<double>(b)) / map_.lambda();
        }
        return out;
    }
    // LSV: branches sorted by left endpoint have return times tau_max, ..., 1.
    std::vector<std::size_t> by_tau(static_cast<std::size_t>(tau_max_) + 1, branches_.size());
    for (std::size_t b = 0; b < branches_.size(); ++b) by_tau[static_cast<std::size_t>(branches_[b].return_time)] = b;
    std::vector<double> z(ys.begin(), ys.end());
    for (int n = 1; n <= tau_max_; ++n) {
        if (n > 1)
            for (double& v : z) v = lsv_left_inverse(map_.gamma(), v);
        const std::size_t b = by_tau[static_cast<std::size_t>(n)];
        if (b == branches_.size()) continue;
        out[b].resize(ys.size());
        for (std::size_t k = 0; k < ys.size(); ++k) out[b][k] = 0.5 * (1.0 + z[k]);
    }
    return out;
}

PreimageTable InducedSystem::preimage_table(std::span<const double> ys) const {
    PreimageTable t;
    t.kind_ = map_.kind();
    t.m_ = ys.size();
    const std::size_t nb = branches_.size();
    t.tau_.resize(nb);
    for (std::size_t b = 0; b < nb; ++b) t.tau_[b] = branches_[b].return_time;
    const auto inv = inverse_images(ys);
    t.nodes_.resize(nb * t.m_);
    t.deriv_.resize(nb * t.m_);
    for (std::size_t b = 0; b < nb; ++b)
        std::copy(inv[b].begin(), inv[b].end(), t.nodes_.begin() + static_cast<std::ptrdiff_t>(b * t.m_));
    if (map_.kind() == MapKind::Doubling) {
        std::fill(t.deriv_.begin(), t.deriv_.end(), static_cast<double>(map_.lambda()));
        return t;
    }
    t.by_tau_.assign(static_cast<std::size_t>(tau_max_) + 1, nb);
    for (std::size_t b = 0; b < nb; ++b) t.by_tau_[static_cast<std::size_t>(t.tau_[b])] = b;
    // F'(y_n) = 2 prod_{j=2..n} T_L'(2 y_j - 1), accumulated level by level.
    std::vector<double> prod(t.m_, 2.0);
    for (int n = 1; n <= tau_max_; ++n) {
        const std::size_t b = t.by_tau_[static_cast<std::size_t>(n)];
        if (b == nb) break;
        for (std::size_t k = 0; k < t.m_; ++k) {
            const double y = t.nodes_[b * t.m_ + k];
            if (n > 1) prod[k] *= lsv_left_derivative(map_.gamma(), 2.0 * y - 1.0);
            t.deriv_[b * t.m_ + k] = prod[k];
        }
    }
    return t;
}

void PreimageTable::orbit_sums(const std::function<void(double, double*)>& f, int d, double* out) const {
    const std::size_t ud = static_cast<std::size_t>(d);
    std::vector<double> buf(ud);
    if (kind_ == MapKind::Doubling) {
        for (std::size_t i = 0; i < nodes_.size(); ++i) f(nodes_[i], out + i * ud);
        return;
    }
    // The orbit of y_n passes through 2 y_j - 1 for j = n, ..., 2 before
    // landing on u, so the sums share a cumulative tail over levels.
    std::vector<double> chain(m_ * ud, 0.0);
    for (std::size_t n = 1; n < by_tau_.size(); ++n) {
        const std::size_t b = by_tau_[n];
        if (b == tau_.size()) break;
        for (std::size_t k = 0; k < m_; ++k) {
            const double y = nodes_[b * m_ + k];
            double* c = chain.data() + k * ud;
            if (n > 1) {
                f(2.0 * y - 1.0, buf.data());
                for (std::size_t j = 0; j < ud; ++j) c[j] += buf[j];
            }
            double* o = out + (b * m_ + k) * ud;
            f(y, o);
            for (std::size_t j = 0; j < ud; ++j) o[j] += c[j];
        }
    }
}

namespace {

// x with T_L(x) = w by bisection down to adjacent doubles.
double bisect_left_preimage(double gamma, double w) {
    double lo = 0.0;
    double hi = 0.5;
    for (int it = 0; it < 2000; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (lsv_left(gamma, mid) < w) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

InducedSystem build_induced(const MapDescriptor& map, int tau_max, double max_tail_mass) {
    if (tau_max < 1) throw InvalidArgument("tau_max must be >= 1");
    switch (map.kind()) {
        case MapKind::Quadratic:
            throw UnsupportedMap("no inducing scheme is built for the quadratic family");
        case MapKind::Doubling: {
            std::vector<Branch> branches;
            const int lam = map.lambda();
            for (int k = 0; k < lam; ++k)
                branches.push_back({Interval{static_cast<double>(k) / lam, static_cast<double>(k + 1) / lam}, 1});
            return InducedSystem(map, Interval{0.0, 1.0}, std::move(branches), tau_max, 0.0, {});
        }
        case MapKind::LSV: break;
    }

    const double gamma = map.gamma();
    // x_0 = 1/2 and T_L(x_{n+1}) = x_n.
    std::vector<double> xs(static_cast<std::size_t>(tau_max));
    xs[0] = 0.5;
    for (int n = 1; n < tau_max; ++n) xs[static_cast<std::size_t>(n)] = bisect_left_preimage(gamma, xs[static_cast<std::size_t>(n - 1)]);

    // Branch with return time n is [(1 + x_{n-1})/2, (1 + x_{n-2})/2), x_{-1} = 1.
    std::vector<Branch> branches;
    branches.reserve(static_cast<std::size_t>(tau_max));
    for (int n = tau_max; n >= 1; --n) {
        const double lo = 0.5 * (1.0 + xs[static_cast<std::size_t>(n - 1)]);
        const double hi = n == 1 ? 1.0 : 0.5 * (1.0 + xs[static_cast<std::size_t>(n - 2)]);
        branches.push_back({Interval{lo, hi}, n});
    }

    // Normalized branch lengths q_n ~ c n^{-1/gamma - 1}; fit c on the upper
    // half of the retained range and bound the tail by c * tau_max^{1 - 1/gamma}.
    const double y_width = 0.5;
    double c = 0.0;
    for (const Branch& b : branches) {
        const int n = b.return_time;
        if (n * 2 < tau_max && tau_max > 1) continue;
        const double q = b.interval.width() / y_width;
        c = std::max(c, q * std::pow(static_cast<double>(n), 1.0 / gamma + 1.0));
    }
    const double tail = c * std::pow(static_cast<double>(tau_max), 1.0 - 1.0 / gamma);
    if (tail > max_tail_mass) {
        throw TruncationError("LSV(" + std::to_string(gamma) + ") with tau_max = " + std::to_string(tau_max) +
                              ": tail mass bound " + std::to_string(tail) + " exceeds " +
                              std::to_string(max_tail_mass));
    }
    return InducedSystem(map, Interval{0.5, 1.0}, std::move(branches), tau_max, tail, std::move(xs));
}

int first_return_time(const MapDescriptor& map, Interval y_set, double y, int cap) {
    double x = y;
    for (int k = 1; k <= cap; ++k) {
        x = evaluate(map, x);
        if (y_set.contains(x)) return k;
    }
    return cap + 1;
}

double empirical_expansion(const InducedSystem& sys, int pairs_per_branch, std::uint64_t seed) {
    CounterStream rng(seed, 0, StreamDomain::Probe);
    double lam = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < sys.branches().size(); ++b) {
        const Interval iv = sys.branches()[b].interval;
        for (int p = 0; p < pairs_per_branch; ++p) {
            // Sample in image coordinates.
            const double u = sys.Y().lo + sys.Y().width() * rng.uniform();
            const double w = sys.Y().lo + sys.Y().width() * rng.uniform();
            const double x1 = sys.inverse(b, u);
            const double x2 = sys.inverse(b, w);
            if (x1 == x2 || !iv.contains(x1) || !iv.contains(x2)) continue;
            lam = std::min(lam, std::abs(u - w) / std::abs(x1 - x2));
        }
    }
    return lam;
}

}  // namespace ergodic_limits
