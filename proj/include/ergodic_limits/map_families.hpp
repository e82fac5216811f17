#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ergodic_limits/rng.hpp"

namespace ergodic_limits {

struct Interval {
    double lo = 0.0;
    double hi = 1.0;

    double width() const noexcept { return hi - lo; }
    bool contains(double x) const noexcept { return x >= lo && x <= hi; }
    friend bool operator==(const Interval&, const Interval&) = default;
};

enum class MapKind { Doubling, LSV, Quadratic };

/// One member of a parameterized interval-map family.
///   Doubling(lambda): x -> lambda x mod 1 on [0,1]
///   LSV(gamma):       x(1 + 2^gamma x^gamma) on [0,1/2), 2x - 1 on [1/2,1]
///   Quadratic(a):     1 - a x^2 on [-1,1]
class MapDescriptor {
public:
    static MapDescriptor doubling(int lambda);
    static MapDescriptor lsv(double gamma);
    static MapDescriptor quadratic(double a);

    MapKind kind() const noexcept { return kind_; }
    int lambda() const noexcept { return lambda_; }
    double gamma() const noexcept { return gamma_; }
    double a() const noexcept { return a_; }

    /// The family parameter as a real number (lambda, gamma or a).
    double parameter() const noexcept;
    /// Same kind with a different parameter value; validates the new value.
    MapDescriptor with_parameter(double value) const;

    Interval domain() const noexcept;
    std::string name() const;

    friend bool operator==(const MapDescriptor&, const MapDescriptor&) = default;

private:
    MapDescriptor() = default;

    MapKind kind_ = MapKind::Doubling;
    int lambda_ = 2;
    double gamma_ = 0.0;
    double a_ = 0.0;
};

double evaluate(const MapDescriptor& map, double x);
std::vector<double> orbit(const MapDescriptor& map, double x0, std::int64_t n);

/// T'(x). For the doubling family the derivative is the constant lambda.
double derivative(const MapDescriptor& map, double x);

/// Inverse of the LSV left branch x -> x(1 + (2x)^gamma) from [0,1/2) onto [0,1).
double lsv_left_inverse(double gamma, double w);

// ---------------------------------------------------------------------------
// Observables

enum class BasisFunction { Cos, Sin, Power };

/// coef * cos(2 pi k x), coef * sin(2 pi k x) or coef * x^k.
struct Term {
    BasisFunction fn = BasisFunction::Cos;
    double k = 1.0;
    double coef = 1.0;
    friend bool operator==(const Term&, const Term&) = default;
};

enum class ObservableForm { ClosedForm, BumpOnY };

/// A d-dimensional observable v minus its centering offset.
///
/// BumpOnY is the scalar observable g(x) * ((x - center)/width - offset) with
/// the Hölder tent g(x) = (1 - |x - center|/width)^eta, supported in
/// [center - width, center + width] for every offset.
class Observable {
public:
    static Observable closed_form(std::vector<std::vector<Term>> components,
                                  std::vector<double> centering_offset = {});
    static Observable cos2pi(double k = 1.0);
    static Observable bump_on_y(double center, double width, double eta, double offset = 0.0);

    ObservableForm form() const noexcept { return form_; }
    int dimension() const noexcept { return static_cast<int>(offset_.size()); }
    const std::vector<std::vector<Term>>& components() const noexcept { return components_; }
    const std::vector<double>& centering_offset() const noexcept { return offset_; }
    double bump_center() const noexcept { return center_; }
    double bump_width() const noexcept { return width_; }
    double bump_eta() const noexcept { return eta_; }
    Interval support() const noexcept;

    Observable with_offset(std::vector<double> offset) const;
    Observable scaled(double c) const;

    /// Centered value written to out[0..d). No domain check.
    void evaluate(double x, double* out) const noexcept;
    double evaluate_scalar(double x) const noexcept;

    /// The two raw quantities whose ratio (BumpOnY) or first (ClosedForm)
    /// average gives the centering offset.
    void raw(double x, double* value, double* envelope) const noexcept;

    friend bool operator==(const Observable&, const Observable&) = default;

private:
    Observable() = default;

    ObservableForm form_ = ObservableForm::ClosedForm;
    std::vector<std::vector<Term>> components_;
    std::vector<double> offset_;
    double center_ = 0.0;
    double width_ = 0.0;
    double eta_ = 1.0;
};

std::vector<double> sample_observable(const Observable& obs, const MapDescriptor& map, double x);

// ---------------------------------------------------------------------------
// Monte Carlo orbits

/// Orbit whose law is that of T^n x0 with x0 ~ Lebesgue on the domain.
///
/// The doubling family keeps a window of base-lambda digits in an integer and
/// shifts in a fresh random digit each step. The other families iterate
/// evaluate() in double precision.
class FastOrbit {
public:
    FastOrbit(const MapDescriptor& map, CounterStream stream);

    double x() const noexcept { return x_; }
    void step() noexcept;
    void advance(std::int64_t n) noexcept {
        for (std::int64_t i = 0; i < n; ++i) step();
    }
    CounterStream& stream() noexcept { return stream_; }

private:
    MapKind kind_;
    double param_;
    CounterStream stream_;
    double x_ = 0.0;
    // doubling digit window
    std::uint64_t digits_ = 0;
    std::uint64_t modulus_ = 1;
    std::uint64_t high_ = 1;
    double inv_modulus_ = 1.0;
    std::uint32_t base_ = 2;
    std::uint64_t bitbuf_ = 0;
    int bits_left_ = 0;
};

struct CenteringOptions {
    std::int64_t n_center = 10'000'000;
    std::int64_t burn_in = 1'000;
    std::uint64_t seed = 0x5eed;
};

/// Observable with offsets from a long Birkhoff average, so that its
/// invariant-measure mean vanishes up to Monte Carlo error.
Observable center_observable(const Observable& obs, const MapDescriptor& map,
                             const CenteringOptions& opts = {});

// ---------------------------------------------------------------------------
// Induced first-return structure

struct Branch {
    Interval interval;
    int return_time = 1;
};

class InducedSystem;

/// Preimages F_b^{-1}(u_k) of a point set under every retained branch, with
/// F' at each preimage. Node (b, k) is stored at index b * points() + k.
class PreimageTable {
public:
    std::size_t branches() const noexcept { return tau_.size(); }
    std::size_t points() const noexcept { return m_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    double node(std::size_t b, std::size_t k) const noexcept { return nodes_[b * m_ + k]; }
    double derivative(std::size_t b, std::size_t k) const noexcept { return deriv_[b * m_ + k]; }
    int return_time(std::size_t b) const noexcept { return tau_[b]; }

    /// out[(b * points() + k) * d + c] = sum_{j < tau_b} f(T^j node(b, k))[c].
    void orbit_sums(const std::function<void(double, double*)>& f, int d, double* out) const;

private:
    friend class InducedSystem;

    MapKind kind_ = MapKind::Doubling;
    std::size_t m_ = 0;
    std::vector<double> nodes_;
    std::vector<double> deriv_;
    std::vector<int> tau_;
    // LSV: branch index holding return time n (index n), so that
    // T^j node(b, k) = 2 node(by_tau_[tau_b - j + 1], k) - 1 for j >= 1.
    std::vector<std::size_t> by_tau_;
};

class InducedSystem {
public:
    InducedSystem(MapDescriptor map, Interval y, std::vector<Branch> branches, int tau_max,
                  double tail_mass_bound, std::vector<double> left_preimages);

    const MapDescriptor& map() const noexcept { return map_; }
    Interval Y() const noexcept { return y_; }
    /// Branches sorted by left endpoint.
    const std::vector<Branch>& branches() const noexcept { return branches_; }
    int tau_max() const noexcept { return tau_max_; }
    double tail_mass_bound() const noexcept { return tail_mass_bound_; }

    /// Index of the branch containing y, or nullopt for the truncated tail.
    std::optional<std::size_t> branch_of(double y) const noexcept;

    /// F = T^tau on branch b.
    double forward(std::size_t b, double y) const;
    /// F|_b^{-1}: Y -> branch b.
    double inverse(std::size_t b, double y) const;
    /// F'(x) on branch b by the chain rule along the orbit.
    double forward_derivative(std::size_t b, double x) const;

    /// inverse(b, ys[k]) for every branch at once: result[b][k].
    std::vector<std::vector<double>> inverse_images(std::span<const double> ys) const;
    PreimageTable preimage_table(std::span<const double> ys) const;

private:
    MapDescriptor map_;
    Interval y_;
    std::vector<Branch> branches_;
    int tau_max_;
    double tail_mass_bound_;
    std::vector<double> left_preimages_;
};

/// Throws TruncationError when the tail mass bound exceeds max_tail_mass.
InducedSystem build_induced(const MapDescriptor& map, int tau_max = 500, double max_tail_mass = 0.05);

/// Smallest k >= 1 with T^k y in Y, capped at cap (returns cap + 1 past it).
int first_return_time(const MapDescriptor& map, Interval y_set, double y, int cap = 1'000'000'000);

/// Minimum two-point expansion |F x - F x'| / |x - x'| over sampled pairs.
double empirical_expansion(const InducedSystem& sys, int pairs_per_branch, std::uint64_t seed = 1);

}  // namespace ergodic_limits
