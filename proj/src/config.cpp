#include "ergodic_limits/config.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>
#include <rapidjson/error/en.h>
#include <rapidjson/reader.h>

#include "ergodic_limits/decomposition.hpp"
#include "ergodic_limits/errors.hpp"
#include "ergodic_limits/homogenization.hpp"
#include "ergodic_limits/limit_law_harness.hpp"
#include "ergodic_limits/transfer_operator.hpp"

namespace ergodic_limits {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Source positions of every key and array element, by JSON pointer.

class LineIndex {
public:
    void add(const std::string& ptr, int line) { lines_.emplace(ptr, line); }
    int line_of(std::string ptr) const {
        while (true) {
            if (auto it = lines_.find(ptr); it != lines_.end()) return it->second;
            const auto cut = ptr.rfind('/');
            if (cut == std::string::npos || ptr.empty()) return 1;
            ptr.resize(cut);
        }
    }

private:
    std::map<std::string, int> lines_;
};

class Locator : public rapidjson::BaseReaderHandler<rapidjson::UTF8<>, Locator> {
public:
    Locator(const std::string& text, const rapidjson::StringStream& in, LineIndex& index)
        : text_(text), in_(in), index_(index) {}

    bool Default() {
        child();
        return true;
    }
    bool StartObject() {
        frames_.push_back({child(), false, 0, {}});
        return true;
    }
    bool Key(const char* s, rapidjson::SizeType len, bool) {
        frames_.back().key.assign(s, len);
        index_.add(frames_.back().path + "/" + frames_.back().key, line());
        return true;
    }
    bool EndObject(rapidjson::SizeType) {
        frames_.pop_back();
        return true;
    }
    bool StartArray() {
        frames_.push_back({child(), true, 0, {}});
        return true;
    }
    bool EndArray(rapidjson::SizeType) {
        frames_.pop_back();
        return true;
    }

private:
    struct Frame {
        std::string path;
        bool array;
        int next;
        std::string key;
    };

    std::string child() {
        if (frames_.empty()) return "";
        Frame& f = frames_.back();
        if (!f.array) return f.path + "/" + f.key;
        std::string p = f.path + "/" + std::to_string(f.next++);
        index_.add(p, line());
        return p;
    }
    int line() {
        const std::size_t pos = std::min(in_.Tell(), text_.size());
        for (; scanned_ < pos; ++scanned_)
            if (text_[scanned_] == '\n') ++line_;
        return line_;
    }

    const std::string& text_;
    const rapidjson::StringStream& in_;
    LineIndex& index_;
    std::vector<Frame> frames_;
    std::size_t scanned_ = 0;
    int line_ = 1;
};

int line_at(const std::string& text, std::size_t offset) {
    int line = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

[[noreturn]] void fail(int line, const std::string& msg) {
    throw ConfigError("line " + std::to_string(line) + ": " + msg);
}

// ---------------------------------------------------------------------------
// Strict object reader

class Node {
public:
    Node(const json& j, std::string path, const LineIndex& index) : j_(j), path_(std::move(path)), index_(index) {}

    const json& value() const { return j_; }
    const std::string& path() const { return path_; }
    int line() const { return index_.line_of(path_); }
    [[noreturn]] void error(const std::string& msg) const { fail(line(), (path_.empty() ? "/" : path_) + ": " + msg); }

    void require_object() const {
        if (!j_.is_object()) error("expected an object");
    }
    void allow(std::initializer_list<const char*> keys) const {
        require_object();
        const std::set<std::string> ok(keys.begin(), keys.end());
        for (const auto& [k, v] : j_.items())
            if (!ok.count(k)) fail(index_.line_of(path_ + "/" + k), "unknown key '" + k + "' in " + (path_.empty() ? "/" : path_));
    }
    bool has(const char* key) const { return j_.contains(key); }
    Node at(const char* key) const {
        if (!j_.contains(key)) error(std::string("missing required key '") + key + "'");
        return Node(j_.at(key), path_ + "/" + key, index_);
    }
    Node item(std::size_t i) const { return Node(j_.at(i), path_ + "/" + std::to_string(i), index_); }
    std::size_t size() const {
        if (!j_.is_array()) error("expected an array");
        return j_.size();
    }

    double as_double() const {
        if (!j_.is_number()) error("expected a number");
        return j_.get<double>();
    }
    std::int64_t as_int() const {
        if (!j_.is_number_integer()) error("expected an integer");
        return j_.get<std::int64_t>();
    }
    std::uint64_t as_uint() const {
        if (!j_.is_number_unsigned() && !(j_.is_number_integer() && j_.get<std::int64_t>() >= 0))
            error("expected a non-negative integer");
        return j_.get<std::uint64_t>();
    }
    bool as_bool() const {
        if (!j_.is_boolean()) error("expected true or false");
        return j_.get<bool>();
    }
    std::string as_string() const {
        if (!j_.is_string()) error("expected a string");
        return j_.get<std::string>();
    }
    template <class F>
    auto as_list(F f) const {
        std::vector<decltype(f(std::declval<Node>()))> out;
        for (std::size_t i = 0; i < size(); ++i) out.push_back(f(item(i)));
        return out;
    }
    std::vector<double> as_doubles() const {
        return as_list([](const Node& n) { return n.as_double(); });
    }
    std::vector<std::vector<double>> as_matrix() const {
        return as_list([](const Node& n) { return n.as_doubles(); });
    }

    template <class T, class F>
    void optional(const char* key, T& out, F f) const {
        if (has(key)) out = f(at(key));
    }

private:
    const json& j_;
    std::string path_;
    const LineIndex& index_;
};

void check_choice(const Node& n, const std::string& v, std::initializer_list<const char*> choices) {
    for (const char* c : choices)
        if (v == c) return;
    std::string all;
    for (const char* c : choices) all += std::string(all.empty() ? "" : ", ") + c;
    n.error("'" + v + "' is not one of: " + all);
}

Command parse_command(const Node& n) {
    const std::string s = n.as_string();
    static const std::map<std::string, Command> names{
        {"decompose", Command::Decompose}, {"covariance", Command::Covariance}, {"moments", Command::Moments},
        {"wip", Command::Wip},             {"family-sweep", Command::FamilySweep}, {"b1b2", Command::B1B2},
        {"homogenize", Command::Homogenize}};
    const auto it = names.find(s);
    if (it == names.end())
        n.error("unknown command '" + s + "' (decompose, covariance, moments, wip, family-sweep, b1b2, homogenize)");
    return it->second;
}

MapConfig parse_map(const Node& n) {
    n.allow({"family", "parameter"});
    MapConfig m;
    m.family = n.at("family").as_string();
    check_choice(n.at("family"), m.family, {"doubling", "lsv", "quadratic"});
    m.parameter = n.at("parameter").as_double();
    try {
        make_map(m);
    } catch (const InvalidArgument& e) {
        n.error(e.what());
    }
    return m;
}

Term parse_term(const Node& n) {
    n.allow({"fn", "k", "coef"});
    Term t;
    const std::string fn = n.at("fn").as_string();
    check_choice(n.at("fn"), fn, {"cos", "sin", "power"});
    t.fn = fn == "cos" ? BasisFunction::Cos : fn == "sin" ? BasisFunction::Sin : BasisFunction::Power;
    n.optional("k", t.k, [](const Node& x) { return x.as_double(); });
    n.optional("coef", t.coef, [](const Node& x) { return x.as_double(); });
    return t;
}

ObservableConfig parse_observable(const Node& n) {
    n.allow({"kind", "terms", "bump_center", "bump_width", "bump_eta", "center"});
    ObservableConfig o;
    n.optional("kind", o.kind, [](const Node& x) { return x.as_string(); });
    if (n.has("kind")) check_choice(n.at("kind"), o.kind, {"terms", "bump"});
    n.optional("terms", o.terms, [](const Node& x) {
        return x.as_list([](const Node& comp) { return comp.as_list(parse_term); });
    });
    n.optional("bump_center", o.bump_center, [](const Node& x) { return x.as_double(); });
    n.optional("bump_width", o.bump_width, [](const Node& x) { return x.as_double(); });
    n.optional("bump_eta", o.bump_eta, [](const Node& x) { return x.as_double(); });
    n.optional("center", o.center, [](const Node& x) { return x.as_bool(); });
    if (o.kind == "terms") {
        if (o.terms.empty()) n.error("observable needs at least one component");
        for (const auto& comp : o.terms)
            if (comp.empty()) n.error("every observable component needs at least one term");
    } else {
        if (!(o.bump_width > 0.0)) n.error("bump_width must be positive");
        if (!(o.bump_eta > 0.0 && o.bump_eta <= 1.0)) n.error("bump_eta must lie in (0, 1]");
    }
    return o;
}

McSection parse_mc(const Node& n) {
    n.allow({"n_orbit", "n_samples", "burn_in", "seed", "initial_law"});
    McSection m;
    n.optional("n_orbit", m.n_orbit, [](const Node& x) { return x.as_int(); });
    n.optional("n_samples", m.n_samples, [](const Node& x) { return x.as_int(); });
    n.optional("burn_in", m.burn_in, [](const Node& x) { return x.as_int(); });
    n.optional("seed", m.seed, [](const Node& x) { return x.as_uint(); });
    n.optional("initial_law", m.initial_law, [](const Node& x) { return x.as_string(); });
    if (n.has("initial_law")) check_choice(n.at("initial_law"), m.initial_law, {"invariant", "lebesgue"});
    if (m.n_orbit < 1) n.error("n_orbit must be positive");
    if (m.n_samples < 100) n.error("n_samples must be at least 100");
    if (m.burn_in < 0) n.error("burn_in must be non-negative");
    return m;
}

NumericsSection parse_numerics(const Node& n) {
    n.allow({"N", "tau_max", "tol", "gk_lags", "gk_length", "center_samples"});
    NumericsSection s;
    n.optional("N", s.N, [](const Node& x) { return static_cast<int>(x.as_int()); });
    n.optional("tau_max", s.tau_max, [](const Node& x) { return static_cast<int>(x.as_int()); });
    n.optional("tol", s.tol, [](const Node& x) { return x.as_double(); });
    if (n.has("gk_lags") && !n.at("gk_lags").value().is_null()) s.gk_lags = static_cast<int>(n.at("gk_lags").as_int());
    n.optional("gk_length", s.gk_length, [](const Node& x) { return x.as_int(); });
    n.optional("center_samples", s.center_samples, [](const Node& x) { return x.as_int(); });
    if (s.N < 8) n.error("N must be at least 8");
    if (s.tau_max < 1) n.error("tau_max must be positive");
    if (!(s.tol > 0.0)) n.error("tol must be positive");
    if (s.gk_lags && *s.gk_lags < 0) n.error("gk_lags must be non-negative");
    if (s.gk_length < 1000) n.error("gk_length must be at least 1000");
    if (s.center_samples < 1) n.error("center_samples must be positive");
    return s;
}

HomogenizeSection parse_homogenize(const Node& n) {
    n.allow({"A", "c", "h", "h_matrix", "xi", "eps_ladder", "T", "compare_times", "drift_correction", "quad_samples"});
    HomogenizeSection h;
    n.optional("A", h.A, [](const Node& x) { return x.as_matrix(); });
    n.optional("c", h.c, [](const Node& x) { return x.as_doubles(); });
    n.optional("h", h.h, [](const Node& x) { return x.as_string(); });
    if (n.has("h")) check_choice(n.at("h"), h.h, {"identity", "cubic", "linear"});
    n.optional("h_matrix", h.h_matrix, [](const Node& x) { return x.as_matrix(); });
    n.optional("xi", h.xi, [](const Node& x) { return x.as_doubles(); });
    n.optional("eps_ladder", h.eps_ladder, [](const Node& x) { return x.as_doubles(); });
    n.optional("T", h.T, [](const Node& x) { return x.as_double(); });
    n.optional("compare_times", h.compare_times, [](const Node& x) { return x.as_doubles(); });
    n.optional("drift_correction", h.drift_correction, [](const Node& x) { return x.as_bool(); });
    n.optional("quad_samples", h.quad_samples, [](const Node& x) { return x.as_int(); });

    const std::size_t d = h.xi.size();
    if (d == 0) n.error("xi must be non-empty");
    if (h.A.size() != d || h.c.size() != d) n.error("A and c must match the dimension of xi");
    for (const auto& row : h.A)
        if (row.size() != d) n.error("A must be square");
    if (h.h == "linear") {
        if (h.h_matrix.size() != d) n.error("h_matrix must be d x d");
        for (const auto& row : h.h_matrix)
            if (row.size() != d) n.error("h_matrix must be d x d");
    } else if (!h.h_matrix.empty()) {
        n.error("h_matrix is only used with h = linear");
    }
    if (h.eps_ladder.size() < 3) n.error("eps_ladder needs at least 3 values");
    for (std::size_t i = 0; i < h.eps_ladder.size(); ++i) {
        if (!(h.eps_ladder[i] > 0.0 && h.eps_ladder[i] <= 0.5)) n.error("eps values must lie in (0, 0.5]");
        if (i > 0 && !(h.eps_ladder[i] < h.eps_ladder[i - 1])) n.error("eps_ladder must be decreasing");
    }
    if (!(h.T > 0.0)) n.error("T must be positive");
    if (h.compare_times.empty()) n.error("compare_times must be non-empty");
    for (double t : h.compare_times)
        if (!(t >= 0.0 && t <= h.T)) n.error("compare_times must lie in [0, T]");
    if (h.quad_samples < 100'000) n.error("quad_samples must be at least 1e5");
    return h;
}

// ---------------------------------------------------------------------------
// Serialization

json term_json(const Term& t) {
    const char* fn = t.fn == BasisFunction::Cos ? "cos" : t.fn == BasisFunction::Sin ? "sin" : "power";
    return json{{"fn", fn}, {"k", t.k}, {"coef", t.coef}};
}

json observable_json(const ObservableConfig& o) {
    json terms = json::array();
    for (const auto& comp : o.terms) {
        json c = json::array();
        for (const auto& t : comp) c.push_back(term_json(t));
        terms.push_back(c);
    }
    return json{{"kind", o.kind},          {"terms", terms},         {"bump_center", o.bump_center},
                {"bump_width", o.bump_width}, {"bump_eta", o.bump_eta}, {"center", o.center}};
}

json map_json(const MapConfig& m) { return json{{"family", m.family}, {"parameter", m.parameter}}; }

json config_json(const ExperimentConfig& c) {
    json j;
    j["command"] = to_string(c.command);
    j["map"] = map_json(c.map);
    j["observable"] = observable_json(c.observable);
    j["mc"] = json{{"n_orbit", c.mc.n_orbit},
                   {"n_samples", c.mc.n_samples},
                   {"burn_in", c.mc.burn_in},
                   {"seed", c.mc.seed},
                   {"initial_law", c.mc.initial_law}};
    j["numerics"] = json{{"N", c.numerics.N},
                         {"tau_max", c.numerics.tau_max},
                         {"tol", c.numerics.tol},
                         {"gk_lags", c.numerics.gk_lags ? json(*c.numerics.gk_lags) : json(nullptr)},
                         {"gk_length", c.numerics.gk_length},
                         {"center_samples", c.numerics.center_samples}};
    j["methods"] = c.methods;
    j["p"] = c.p;
    j["n_ladder"] = c.n_ladder;
    j["times"] = c.times;
    j["eps_prime"] = c.eps_prime;
    json fam = json::array();
    for (const auto& m : c.family) fam.push_back(json{{"map", map_json(m.map)}, {"observable", observable_json(m.observable)}});
    j["family"] = fam;
    const auto& h = c.homogenize;
    j["homogenize"] = json{{"A", h.A},
                           {"c", h.c},
                           {"h", h.h},
                           {"h_matrix", h.h_matrix},
                           {"xi", h.xi},
                           {"eps_ladder", h.eps_ladder},
                           {"T", h.T},
                           {"compare_times", h.compare_times},
                           {"drift_correction", h.drift_correction},
                           {"quad_samples", h.quad_samples}};
    j["output_dir"] = c.output_dir;
    return j;
}

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) r.push_back(m(i, k));
        rows.push_back(r);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Running

CovarianceMethod parse_method(const std::string& s) {
    if (s == "direct") return CovarianceMethod::Direct;
    if (s == "green-kubo") return CovarianceMethod::GreenKubo;
    return CovarianceMethod::Martingale;
}

struct Report {
    json results = json::object();
    json invariants = json::array();
    bool hard_ok = true;

    void check(const std::string& name, bool passed, double value, double threshold, bool hard = true) {
        invariants.push_back(
            json{{"name", name}, {"passed", passed}, {"value", value}, {"threshold", threshold}, {"hard", hard}});
        if (hard && !passed) hard_ok = false;
    }
};

McConfig mc_config(const ExperimentConfig& c, const RunOptions& o) {
    McConfig m;
    m.n_orbit = c.mc.n_orbit;
    m.n_samples = c.mc.n_samples;
    m.burn_in = c.mc.burn_in;
    m.seed = o.seed.value_or(c.mc.seed);
    m.initial_law = c.mc.initial_law == "lebesgue" ? InitialLaw::LebesgueOnDomain : InitialLaw::InvariantApprox;
    m.threads = o.threads;
    return m;
}

CovarianceOptions cov_options(const ExperimentConfig& c) {
    CovarianceOptions o;
    o.gk_length = c.numerics.gk_length;
    o.gk_lags = c.numerics.gk_lags;
    o.grid_cells = c.numerics.N;
    o.tau_max = c.numerics.tau_max;
    o.series_tol = c.numerics.tol;
    return o;
}

json estimate_json(const CovarianceEstimate& e) {
    return json{{"method", to_string(e.method)},
                {"sigma", matrix_json(e.sigma)},
                {"std_err", matrix_json(e.std_err)},
                {"n_used", e.n_used},
                {"gk_lags", e.gk_lags}};
}

bool symmetric(const Eigen::MatrixXd& m) { return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + m.cwiseAbs().maxCoeff()); }

double min_eigen(const Eigen::MatrixXd& m) {
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (m + m.transpose())).eigenvalues().minCoeff();
}

void dump_operator(const std::filesystem::path& dir, const TransferApproximation& op) {
    std::ofstream out(dir / "operator.csv");
    out.precision(17);
    out << "row,col,value\n";
    const auto& M = op.matrix;
    for (int i = 0; i < M.outerSize(); ++i)
        for (SparseRowMatrix::InnerIterator it(M, i); it; ++it) out << it.row() << ',' << it.col() << ',' << it.value() << '\n';
    std::ofstream dens(dir / "density.csv");
    dens.precision(17);
    dens << "cell,midpoint,mass\n";
    for (int i = 0; i < op.grid.size(); ++i)
        dens << i << ',' << op.grid.midpoint(i) << ',' << op.invariant_density(i) << '\n';
}

void dump_decomposition(const std::filesystem::path& dir, const Decomposition& dec) {
    std::ofstream out(dir / "decomposition.csv");
    out.precision(17);
    const auto d = dec.phi_prime.cols();
    out << "cell,y";
    for (const char* name : {"phi", "chi", "m"})
        for (Eigen::Index c = 0; c < d; ++c) out << ',' << name << c;
    out << '\n';
    for (int i = 0; i < dec.grid.size(); ++i) {
        out << i << ',' << dec.grid.midpoint(i);
        for (const Eigen::MatrixXd* m : {&dec.phi_prime, &dec.chi_prime, &dec.m_prime})
            for (Eigen::Index c = 0; c < d; ++c) out << ',' << (*m)(i, c);
        out << '\n';
    }
}

struct Pipeline {
    InducedSystem sys;
    TransferApproximation op;
    Decomposition dec;
};

Pipeline build_pipeline(const ExperimentConfig& c, const MapDescriptor& map, const Observable& obs) {
    InducedSystem sys = build_induced(map, c.numerics.tau_max);
    TransferApproximation op = build_ulam(sys, c.numerics.N);
    Decomposition dec = primary_decomposition(op, induced_field(sys, map, obs, op), c.numerics.tol);
    return {std::move(sys), std::move(op), std::move(dec)};
}

void run_command(const ExperimentConfig& c, const RunOptions& o, const std::filesystem::path& dir, Report& rep,
                 std::ostream& log) {
    const McConfig mc = mc_config(c, o);
    const CovarianceOptions copts = cov_options(c);
    auto say = [&](const std::string& s) {
        if (!o.quiet) log << s << '\n';
    };

    if (c.command == Command::FamilySweep) {
        std::vector<FamilyMember> members;
        for (const auto& m : c.family) {
            const MapDescriptor map = make_map(m.map);
            members.push_back({map, make_observable(m.observable, map, c.numerics.center_samples)});
        }
        say("family sweep over " + std::to_string(members.size()) + " members");
        const SweepReport sw = family_sweep(members, mc, parse_method(c.methods.front()), copts);
        json est = json::array();
        for (const auto& e : sw.estimates) est.push_back(estimate_json(e));
        json pts = json::array();
        for (const auto& p : sw.accumulation_points) pts.push_back(matrix_json(p));
        rep.results = json{{"estimates", est},
                           {"max_consecutive_diff", sw.max_consecutive_diff},
                           {"last_consecutive_diff", sw.last_consecutive_diff},
                           {"last_joint_std_err", sw.last_joint_std_err},
                           {"accumulation_points", pts},
                           {"cluster_of", sw.cluster_of}};
        write_covariance_csv(dir / "covariance.csv", sw.estimates);
        bool sym = true;
        for (const auto& e : sw.estimates) sym = sym && symmetric(e.sigma);
        rep.check("sigma_symmetric", sym, sym ? 0.0 : 1.0, 0.0);
        rep.check("last_difference_within_2_std_err", sw.last_consecutive_diff <= 2.0 * sw.last_joint_std_err,
                  sw.last_consecutive_diff, 2.0 * sw.last_joint_std_err, false);
        return;
    }

    const MapDescriptor map = make_map(c.map);
    const Observable obs = make_observable(c.observable, map, c.numerics.center_samples);
    rep.results["centering_offset"] = obs.centering_offset();

    switch (c.command) {
        case Command::Decompose: {
            say("building induced system and transfer operator for " + map.name());
            Pipeline p = build_pipeline(c, map, obs);
            const SecondaryDecomposition sec = secondary_decomposition(p.op, p.dec, c.numerics.tol * 10.0);
            const TowerFunction tf = lift_to_tower(p.dec, p.sys, map, obs);
            const double ident = tower_identity_error(tf, 10'000, mc.seed);
            const Eigen::MatrixXd sigma = martingale_covariance(p.op, p.dec);
            rep.results["K"] = p.dec.K;
            rep.results["tail_bound"] = p.dec.tail_bound;
            rep.results["kernel_residual"] = p.dec.kernel_residual;
            rep.results["decay_ratio"] = p.dec.decay_ratio;
            rep.results["tau_mean"] = p.dec.tau_mean;
            rep.results["centering_correction"] =
                std::vector<double>(p.dec.centering_correction.data(),
                                    p.dec.centering_correction.data() + p.dec.centering_correction.size());
            rep.results["sigma_mart"] = matrix_json(sigma);
            rep.results["tower_identity_error"] = ident;
            rep.results["offgrid_kernel_residual"] = offgrid_kernel_residual(p.op, p.sys, tf, 50, mc.seed);
            rep.results["tail_mass_bound"] = p.sys.tail_mass_bound();
            rep.results["fixed_point_residual"] = p.op.fixed_point_residual;
            rep.results["secondary"] = json{{"K", sec.K},
                                            {"kernel_residual", sec.kernel_residual},
                                            {"tail_bound", sec.tail_bound},
                                            {"sigma_mart", matrix_json(sec.sigma_mart)}};
            rep.check("kernel_residual_below_1e-2", p.dec.kernel_residual < 1e-2, p.dec.kernel_residual, 1e-2);
            rep.check("tower_identity_below_1e-6", ident < 1e-6, ident, 1e-6);
            rep.check("sigma_symmetric", symmetric(sigma), (sigma - sigma.transpose()).cwiseAbs().maxCoeff(), 0.0);
            rep.check("sigma_psd", min_eigen(sigma) >= -1e-10, min_eigen(sigma), -1e-10);
            if (o.dump_operator) dump_operator(dir, p.op);
            if (o.dump_decomposition) dump_decomposition(dir, p.dec);
            break;
        }
        case Command::Covariance: {
            std::vector<CovarianceEstimate> est;
            json arr = json::array();
            for (const auto& m : c.methods) {
                say("covariance (" + m + ") for " + map.name());
                est.push_back(covariance(map, obs, mc, parse_method(m), copts));
                arr.push_back(estimate_json(est.back()));
            }
            rep.results["estimates"] = arr;
            write_covariance_csv(dir / "covariance.csv", est);
            for (const auto& e : est) rep.check("sigma_symmetric_" + to_string(e.method), symmetric(e.sigma), 0.0, 0.0);
            for (std::size_t i = 0; i < est.size(); ++i)
                for (std::size_t k = i + 1; k < est.size(); ++k) {
                    const Eigen::MatrixXd joint = (est[i].std_err.cwiseAbs2() + est[k].std_err.cwiseAbs2()).cwiseSqrt();
                    const double gap = ((est[i].sigma - est[k].sigma).cwiseAbs() - 2.0 * joint).maxCoeff();
                    rep.check("agree_" + to_string(est[i].method) + "_" + to_string(est[k].method), gap <= 0.0, gap,
                              0.0, false);
                }
            break;
        }
        case Command::Moments: {
            say("moment scaling for " + map.name());
            const MomentReport m = moment_scaling(map, obs, mc, c.p, c.n_ladder);
            rep.results["slope"] = std::isnan(m.slope) ? json(nullptr) : json(m.slope);
            rep.results["n"] = m.n;
            rep.results["value"] = m.value;
            write_moments_csv(dir / "moments.csv", {m});
            const double bound = std::max(1.0 / c.p, 0.5) + 0.07;
            rep.check("slope_below_moment_bound", std::isnan(m.slope) || m.slope <= bound,
                      std::isnan(m.slope) ? 0.0 : m.slope, bound, false);
            break;
        }
        case Command::Wip: {
            say("covariance for the WIP normalization");
            const CovarianceEstimate sig = covariance(map, obs, mc, parse_method(c.methods.front()), copts);
            say("WIP test for " + map.name());
            const WipReport w = wip_test(map, obs, mc, sig, c.times);
            json per = json::array();
            for (const auto& r : w.per_time)
                per.push_back(json{{"t", r.time}, {"functional", r.functional}, {"ks_stat", r.ks_statistic},
                                   {"pvalue", r.pvalue}, {"variance", r.variance}});
            rep.results = json{{"sigma", estimate_json(sig)},
                               {"ks_statistic", w.ks_statistic},
                               {"ks_pvalue", w.ks_pvalue},
                               {"per_time", per},
                               {"increments_independent_pvalue", w.increments_independent_pvalue},
                               {"variance_slope", w.variance_slope},
                               {"sigma2", w.sigma2},
                               {"kurtosis", w.kurtosis},
                               {"centering_offset", obs.centering_offset()}};
            write_wip_csv(dir / "wip.csv", w);
            bool in_range = true;
            for (const auto& r : w.per_time) in_range = in_range && r.pvalue >= 0.0 && r.pvalue <= 1.0;
            rep.check("pvalues_in_unit_interval", in_range, 0.0, 0.0);
            rep.check("ks_pvalue_above_0.01", w.ks_pvalue > 0.01, w.ks_pvalue, 0.01, false);
            const double rel = std::abs(w.variance_slope / w.sigma2 - 1.0);
            rep.check("variance_slope_within_5pct", rel <= 0.05, rel, 0.05, false);
            break;
        }
        case Command::B1B2: {
            say("decomposition and secondary decomposition for " + map.name());
            Pipeline p = build_pipeline(c, map, obs);
            const SecondaryDecomposition sec = secondary_decomposition(p.op, p.dec, c.numerics.tol * 10.0);
            const TowerFunction tf = lift_to_tower(p.dec, p.sys, map, obs);
            say("martingale array sums");
            const B1B2Report b = martingale_array_check(tf, sec, mc, c.n_ladder, c.times, c.eps_prime);
            rep.results = json{{"n", b.n},
                               {"times", b.times},
                               {"b1_iqr", matrix_json(b.b1_iqr)},
                               {"b1_median", matrix_json(b.b1_median)},
                               {"b2_sum", b.b2_sum},
                               {"sigma_trace", b.sigma_trace},
                               {"eps_prime", b.eps_prime}};
            write_b1b2_csv(dir / "b1b2.csv", b);
            bool nonneg = true;
            for (double v : b.b2_sum) nonneg = nonneg && v >= 0.0;
            rep.check("b2_nonnegative", nonneg, 0.0, 0.0);
            const Eigen::Index last_t = b.b1_iqr.cols() - 1;
            const double shrink = b.b1_iqr(0, last_t) / b.b1_iqr(b.b1_iqr.rows() - 1, last_t);
            rep.check("b1_iqr_shrinks", shrink >= 2.0, shrink, 2.0, false);
            rep.check("b2_below_0.01", b.b2_sum.back() < 0.01, b.b2_sum.back(), 0.01, false);
            break;
        }
        case Command::Homogenize: {
            const auto& h = c.homogenize;
            const int d = static_cast<int>(h.xi.size());
            FastSlowSpec spec;
            spec.d = d;
            Eigen::MatrixXd A(d, d), H(d, d);
            for (int i = 0; i < d; ++i)
                for (int k = 0; k < d; ++k) A(i, k) = h.A[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
            spec.a = SlowDrift::linear(A, Eigen::Map<const Eigen::VectorXd>(h.c.data(), d));
            if (h.h == "identity") spec.h = Diffeo::identity(d);
            else if (h.h == "cubic") spec.h = Diffeo::cubic(d);
            else {
                for (int i = 0; i < d; ++i)
                    for (int k = 0; k < d; ++k)
                        H(i, k) = h.h_matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
                spec.h = Diffeo::linear(H);
            }
            if (obs.dimension() != d) throw InvalidArgument("observable dimension must equal the dimension of xi");
            spec.v = obs;
            spec.xi = Eigen::Map<const Eigen::VectorXd>(h.xi.data(), d);
            spec.fast_map = map;
            StudyOptions so;
            so.sigma_method = parse_method(c.methods.front());
            so.covariance = copts;
            so.quad_samples = h.quad_samples;
            so.drift_correction = h.drift_correction;
            so.mu0.seed = mc.seed;
            say("homogenization study for " + map.name());
            const StudyReport s = homogenization_study(spec, h.eps_ladder, h.T, mc, h.compare_times, so);
            json rows = json::array();
            for (const auto& r : s.rows)
                rows.push_back(json{{"eps", r.eps},
                                    {"t", r.t},
                                    {"component", r.component},
                                    {"ks_stat", r.ks_stat},
                                    {"pvalue", r.pvalue},
                                    {"mean_fastslow", r.mean_fastslow},
                                    {"var_fastslow", r.var_fastslow},
                                    {"mean_sde", r.mean_sde},
                                    {"var_sde", r.var_sde}});
            rep.results = json{{"rows", rows},
                               {"ks_by_eps", s.ks_by_eps},
                               {"ks_decreasing", s.ks_decreasing},
                               {"sigma", matrix_json(s.sigma)},
                               {"M", matrix_json(s.M)}};
            write_homog_report_csv(dir / "homog_report.csv", s);
            rep.check("sigma_symmetric", symmetric(s.sigma), 0.0, 0.0);
            rep.check("ks_decreasing", s.ks_decreasing, s.ks_by_eps.back(), s.ks_by_eps.front(), false);
            break;
        }
        case Command::FamilySweep: break;
    }
}

std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(Command c) {
    switch (c) {
        case Command::Decompose: return "decompose";
        case Command::Covariance: return "covariance";
        case Command::Moments: return "moments";
        case Command::Wip: return "wip";
        case Command::FamilySweep: return "family-sweep";
        case Command::B1B2: return "b1b2";
        case Command::Homogenize: return "homogenize";
    }
    return "?";
}

MapDescriptor make_map(const MapConfig& m) {
    if (m.family == "doubling") {
        const double r = std::round(m.parameter);
        if (std::abs(r - m.parameter) > 1e-12) throw InvalidArgument("doubling parameter must be an integer");
        return MapDescriptor::doubling(static_cast<int>(r));
    }
    if (m.family == "lsv") return MapDescriptor::lsv(m.parameter);
    if (m.family == "quadratic") return MapDescriptor::quadratic(m.parameter);
    throw InvalidArgument("unknown map family '" + m.family + "'");
}

Observable make_observable(const ObservableConfig& o, const MapDescriptor& map, std::int64_t center_samples) {
    if (o.kind == "bump") {
        const Observable b = Observable::bump_on_y(o.bump_center, o.bump_width, o.bump_eta);
        if (!o.center) return b;
        CenteringOptions co;
        co.n_center = center_samples;
        return center_observable(b, map, co);
    }
    const Observable raw = Observable::closed_form(o.terms);
    if (!o.center) return raw;
    if (map.kind() == MapKind::Doubling) {
        // Lebesgue measure is invariant: integrate the terms exactly.
        std::vector<double> offset;
        for (const auto& comp : o.terms) {
            double s = 0.0;
            for (const auto& t : comp) {
                if (t.fn == BasisFunction::Power) s += t.coef / (t.k + 1.0);
                else if (t.fn == BasisFunction::Cos && t.k == 0.0) s += t.coef;
                else if (t.k != std::round(t.k)) throw InvalidArgument("exact centering needs integer frequencies");
            }
            offset.push_back(s);
        }
        return raw.with_offset(offset);
    }
    CenteringOptions co;
    co.n_center = center_samples;
    return center_observable(raw, map, co);
}

ExperimentConfig parse_config(const std::string& text) {
    LineIndex index;
    {
        rapidjson::Reader reader;
        rapidjson::StringStream in(text.c_str());
        Locator loc(text, in, index);
        const rapidjson::ParseResult ok = reader.Parse<rapidjson::kParseFullPrecisionFlag>(in, loc);
        if (!ok) fail(line_at(text, ok.Offset()), std::string("invalid JSON: ") + rapidjson::GetParseError_En(ok.Code()));
    }
    const json doc = json::parse(text);
    const Node root(doc, "", index);
    if (!doc.is_object()) fail(1, "config must be a JSON object");
    root.allow({"command", "map", "observable", "mc", "numerics", "methods", "p", "n_ladder", "times", "eps_prime",
                "family", "homogenize", "output_dir"});

    ExperimentConfig c;
    c.command = parse_command(root.at("command"));
    if (c.command == Command::FamilySweep) {
        if (root.has("map")) c.map = parse_map(root.at("map"));
        c.family = root.at("family").as_list([](const Node& n) {
            n.allow({"map", "observable"});
            MemberConfig m;
            m.map = parse_map(n.at("map"));
            if (n.has("observable")) m.observable = parse_observable(n.at("observable"));
            return m;
        });
        if (c.family.empty()) root.at("family").error("family must be non-empty");
    } else {
        c.map = parse_map(root.at("map"));
        if (root.has("family")) c.family = root.at("family").as_list([](const Node& n) {
            n.allow({"map", "observable"});
            MemberConfig m;
            m.map = parse_map(n.at("map"));
            if (n.has("observable")) m.observable = parse_observable(n.at("observable"));
            return m;
        });
    }
    if (root.has("observable")) c.observable = parse_observable(root.at("observable"));
    if (root.has("mc")) c.mc = parse_mc(root.at("mc"));
    if (root.has("numerics")) c.numerics = parse_numerics(root.at("numerics"));
    if (root.has("methods")) {
        const Node m = root.at("methods");
        c.methods = m.as_list([](const Node& n) {
            const std::string s = n.as_string();
            check_choice(n, s, {"direct", "green-kubo", "martingale"});
            return s;
        });
        if (c.methods.empty()) m.error("methods must be non-empty");
    } else if (c.command != Command::Covariance) {
        c.methods = {c.command == Command::FamilySweep ? "direct" : "martingale"};
    }
    root.optional("p", c.p, [](const Node& n) { return n.as_double(); });
    if (!(c.p > 0.0)) root.at("p").error("p must be positive");
    if (root.has("n_ladder")) {
        const Node n = root.at("n_ladder");
        c.n_ladder = n.as_list([](const Node& x) { return x.as_int(); });
        for (std::size_t i = 0; i < c.n_ladder.size(); ++i)
            if (c.n_ladder[i] < 1 || (i > 0 && c.n_ladder[i] <= c.n_ladder[i - 1]))
                n.error("n_ladder must be strictly increasing and positive");
    } else if (c.command == Command::B1B2) {
        c.n_ladder = {1000, 10000, 100000};
    }
    if (c.command == Command::Moments && c.n_ladder.size() < 5) root.at("n_ladder").error("moments need at least 5 ladder points");
    if (c.command == Command::B1B2 && c.n_ladder.empty()) root.at("n_ladder").error("n_ladder must be non-empty");
    if (root.has("times")) {
        const Node n = root.at("times");
        c.times = n.as_doubles();
        if (c.times.empty()) n.error("times must be non-empty");
        for (double t : c.times)
            if (!(t > 0.0 && t <= 1.0)) n.error("times must lie in (0, 1]");
    }
    root.optional("eps_prime", c.eps_prime, [](const Node& n) { return n.as_double(); });
    if (!(c.eps_prime > 0.0)) root.at("eps_prime").error("eps_prime must be positive");
    if (root.has("homogenize")) c.homogenize = parse_homogenize(root.at("homogenize"));
    root.optional("output_dir", c.output_dir, [](const Node& n) { return n.as_string(); });
    if (c.output_dir.empty()) root.at("output_dir").error("output_dir must be non-empty");
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) { return config_json(cfg).dump(2); }

int run_experiment(const ExperimentConfig& cfg, const RunOptions& opts, std::ostream& log) {
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    json report;
    report["command"] = to_string(cfg.command);
    report["version"] = "0.1.0";
    report["seed"] = opts.seed.value_or(cfg.mc.seed);
    report["timestamp"] = opts.timestamp.value_or(utc_timestamp());
    json echo = config_json(cfg);
    if (!opts.source_text.empty()) {
        try {
            echo = json::parse(opts.source_text);
        } catch (const json::exception&) {
        }
    }
    report["config"] = echo;

    Report rep;
    int code = 0;
    auto record_error = [&](const char* type, const std::string& what, int exit_code) {
        report["error"] = json{{"type", type}, {"message", what}};
        log << "error (" << type << "): " << what << '\n';
        code = exit_code;
    };
    try {
        run_command(cfg, opts, dir, rep, log);
        code = rep.hard_ok ? 0 : 1;
    } catch (const BlowupError& e) {
        record_error("BlowupError", e.what(), 4);
        report["error"]["step"] = e.step();
    } catch (const ConvergenceError& e) {
        record_error("ConvergenceError", e.what(), 3);
    } catch (const TruncationError& e) {
        record_error("TruncationError", e.what(), 3);
    } catch (const DegenerateVariance& e) {
        record_error("DegenerateVariance", e.what(), 3);
    } catch (const InsufficientData& e) {
        record_error("InsufficientData", e.what(), 3);
    } catch (const InvalidArgument& e) {
        record_error("InvalidArgument", e.what(), 2);
    } catch (const ConfigError& e) {
        record_error("ConfigError", e.what(), 2);
    } catch (const std::exception& e) {
        record_error("Error", e.what(), 1);
    }
    report["results"] = rep.results;
    report["invariants"] = rep.invariants;
    report["status"] = code == 0 ? "ok" : "failed";
    report["exit_code"] = code;
    std::ofstream out(dir / "report.json");
    out << report.dump(2) << '\n';
    if (!opts.quiet) log << "wrote " << (dir / "report.json").string() << " (exit " << code << ")\n";
    return code;
}

}  // namespace ergodic_limits
