#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ergodic_limits/limit_law_harness.hpp"
#include "ergodic_limits/map_families.hpp"

namespace ergodic_limits {

enum class DiffeoKind { Identity, Cubic, Linear };

/// Closed-form diffeomorphism h of R^d with first and second derivatives.
///   Identity: h(x) = x
///   Cubic:    h(x)_i = x_i + x_i^3 / 3
///   Linear:   h(x) = M x
class Diffeo {
public:
    static Diffeo identity(int d);
    static Diffeo cubic(int d);
    static Diffeo linear(Eigen::MatrixXd m);

    DiffeoKind kind() const noexcept { return kind_; }
    int dimension() const noexcept { return d_; }
    const Eigen::MatrixXd& matrix() const noexcept { return m_; }

    void apply(const double* x, double* out) const;
    void inverse(const double* z, double* out) const;
    /// dh(x), column-major d x d.
    void jacobian(const double* x, double* out) const;
    /// d_alpha of dh(x), column-major d x d.
    void jacobian_derivative(const double* x, int alpha, double* out) const;
    /// b(x) = dh(x)^{-1} by solving dh(x) b = I, column-major d x d.
    void b(const double* x, double* out) const;

private:
    DiffeoKind kind_ = DiffeoKind::Identity;
    int d_ = 1;
    Eigen::MatrixXd m_;
};

/// a(x, y) = A x + c + w(y), with w an optional fast observable.
struct SlowDrift {
    Eigen::MatrixXd A;
    Eigen::VectorXd c;
    std::optional<Observable> w;
    /// Declared Lipschitz constant in x.
    double lipschitz = 0.0;

    static SlowDrift zero(int d);
    static SlowDrift linear(Eigen::MatrixXd A, Eigen::VectorXd c = {});

    void evaluate(const double* x, double y, double* out) const;
};

struct FastSlowSpec {
    int d = 1;
    SlowDrift a = SlowDrift::zero(1);
    Diffeo h = Diffeo::identity(1);
    Observable v = Observable::cos2pi();
    Eigen::VectorXd xi = Eigen::VectorXd::Zero(1);
    MapDescriptor fast_map = MapDescriptor::doubling(2);
    /// Fast map as a function of eps; fast_map is used when empty.
    std::function<MapDescriptor(double)> fast_family;
    bool eps_independent = true;

    MapDescriptor fast_map_at(double eps) const { return fast_family ? fast_family(eps) : fast_map; }
    /// Dimensions, dh conditioning at 10^3 probes and the declared Lipschitz
    /// constant on random pairs, all inside [-probe_radius, probe_radius]^d.
    void validate(std::uint64_t seed = 1, double probe_radius = 4.0) const;
};

/// Sample paths recorded on a time grid; paths(s, k * d + c) is component c
/// at times[k] of sample s.
struct PathEnsemble {
    std::vector<double> times;
    int d = 1;
    Eigen::MatrixXd paths;
    std::uint64_t seed = 0;
    std::string scheme;
    double dt = 0.0;

    Eigen::Index samples() const noexcept { return paths.rows(); }
    double at(Eigen::Index s, std::size_t k, int c) const { return paths(s, static_cast<Eigen::Index>(k) * d + c); }
    Eigen::VectorXd marginal(std::size_t k, int c) const {
        return paths.col(static_cast<Eigen::Index>(k) * d + c);
    }
};

/// Evenly spaced grid 0, T/m, ..., T.
std::vector<double> uniform_times(double T, int m = 10);

/// x(n+1) = x(n) + eps^2 a(x(n), y(n)) + eps b(x(n)) v(y(n)), recorded at
/// x_hat(t) = x(floor(t eps^-2)).
PathEnsemble simulate_fast_slow(const FastSlowSpec& spec, double eps, double T, const McConfig& cfg,
                                std::vector<double> record_times = {});

/// The same fast orbits pushed through z(n) = h(x(n)):
///   z(n+1) = z(n) + eps v(y) + eps^2 (dh a + 1/2 d^2h[b v, b v])(x(n), y(n)),
/// reported as h^{-1}(z).
PathEnsemble simulate_z_recursion(const FastSlowSpec& spec, double eps, double T, const McConfig& cfg,
                                  std::vector<double> record_times = {});

/// Long-orbit proxy for the invariant measure of the eps -> 0 fast map.
struct Mu0Proxy {
    std::int64_t burn_in = 1'000;
    std::uint64_t seed = 0x6d75;
};

/// P(x) = int a(x, .) d mu0 - 1/2 sum b^{alpha gamma} (d_alpha b^beta) M^{beta gamma},
/// M = int v v^T d mu0, d_alpha b = -b (d_alpha dh) b.
class CorrectedDrift {
public:
    CorrectedDrift(const FastSlowSpec& spec, Eigen::VectorXd mean_w, Eigen::MatrixXd M, bool correction = true);

    const Eigen::MatrixXd& M() const noexcept { return M_; }
    const Eigen::VectorXd& mean_w() const noexcept { return mean_w_; }
    bool correction() const noexcept { return correction_; }
    CorrectedDrift without_correction() const;

    void operator()(const double* x, double* out) const;
    Eigen::VectorXd operator()(const Eigen::VectorXd& x) const;
    /// The correction term alone.
    void correction_term(const double* x, double* out) const;

private:
    SlowDrift a_;
    Diffeo h_;
    int d_;
    Eigen::VectorXd mean_w_;
    Eigen::MatrixXd M_;
    bool correction_;
};

/// Estimates int w d mu0 and M from one orbit of quad_samples points of the
/// fast map (the eps -> 0 member for families); throws InsufficientData when
/// the two halves disagree by more than 1%.
CorrectedDrift drift_P(const FastSlowSpec& spec, const Mu0Proxy& mu0 = {}, std::int64_t quad_samples = 10'000'000);

struct SdeSpec {
    int d = 1;
    std::function<void(const double*, double*)> drift;
    /// b0(x), column-major d x d.
    std::function<void(const double*, double*)> diffusion;
    Eigen::MatrixXd Sigma = Eigen::MatrixXd::Identity(1, 1);
    Eigen::VectorXd xi = Eigen::VectorXd::Zero(1);
};

/// Limit SDE dX = P(X) dt + b(X) o dW, cov(W(1)) = Sigma.
SdeSpec limit_sde(const FastSlowSpec& spec, const CorrectedDrift& P, const Eigen::MatrixXd& Sigma);

enum class SdeScheme { StratonovichHeun, EulerMaruyama };

PathEnsemble solve_sde(const SdeSpec& sde, double T, const McConfig& cfg, double dt = 1e-3,
                       SdeScheme scheme = SdeScheme::StratonovichHeun, std::vector<double> record_times = {});

struct StudyOptions {
    CovarianceMethod sigma_method = CovarianceMethod::Martingale;
    CovarianceOptions covariance;
    Mu0Proxy mu0;
    std::int64_t quad_samples = 10'000'000;
    bool drift_correction = true;
    SdeScheme scheme = SdeScheme::StratonovichHeun;
};

struct StudyRow {
    double eps = 0.0;
    double t = 0.0;
    /// Component index, or d for the random linear functional.
    int component = 0;
    double ks_stat = 0.0;
    double pvalue = 1.0;
    double mean_fastslow = 0.0;
    double var_fastslow = 0.0;
    double mean_sde = 0.0;
    double var_sde = 0.0;
};

struct StudyReport {
    std::vector<StudyRow> rows;
    std::vector<double> eps;
    /// Largest KS distance over compare times and components, per eps.
    std::vector<double> ks_by_eps;
    bool ks_decreasing = false;
    Eigen::MatrixXd sigma;
    Eigen::MatrixXd M;
};

/// For an eps-independent spec the limit SDE is solved once with
/// dt = min(1e-3, min eps^2) and shared across the ladder.
StudyReport homogenization_study(const FastSlowSpec& spec, const std::vector<double>& eps_ladder, double T,
                                 const McConfig& cfg, const std::vector<double>& compare_times,
                                 const StudyOptions& opts = {});

void write_homog_report_csv(const std::filesystem::path& path, const StudyReport& rep);

/// Mean |block average - P(x)| over samples, for blocks of ceil(eps^{-1/2})
/// consecutive values of alpha_x(y) = a(x, y) - 1/2 sum b^{ag} d_a b^b v^b v^g (y).
double ume_block_deviation(const FastSlowSpec& spec, const CorrectedDrift& P, const Eigen::VectorXd& x, double eps,
                           int samples, std::uint64_t seed = 1);

}  // namespace ergodic_limits
