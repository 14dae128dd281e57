// steinpp experiment runner.
//
// Subcommands
//   knn-poisson      bound terms for the k-NN exceedance process, Poisson input
//   knn-binomial     same with a fixed-size (binomial) input sample
//   critical-points  mean/variance study of the critical-point count
//   glauber-check    birth-death stationarity and coupling-contraction checks
//   mecke-check      two-sided Monte Carlo test of the Mecke identity
//   bounds           generic bound runner (model and functional from config)
//   selftest         fast built-in verification suite (< 60 s)
//
// Flags: --config PATH  --out DIR  --seed U64  --threads N  --format csv|json
// The thread count falls back to the STEINPP_THREADS environment variable and
// then to 1; replicate RNG streams are pre-assigned, so results never depend
// on the thread count.
//
// Config files are line-oriented `key = value` text; `#` starts a comment.
// Unknown keys are rejected with field-level messages.  Command-line flags
// override config values.
//
// With --out DIR the runner writes results.csv or results.json plus
// manifest.json (config echo, library version, seed, per-check pass/fail).
// Outputs carry no timestamps, so identical config and seed reproduce
// byte-identical files.  Exit status: 0 all checks passed, 1 a check failed,
// 2 usage/config error, 130 interrupted (partial results are flushed).

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "steinpp/discrepancy.hpp"
#include "steinpp/dynamics.hpp"
#include "steinpp/errors.hpp"
#include "steinpp/functionals.hpp"
#include "steinpp/geometry.hpp"
#include "steinpp/intensity.hpp"
#include "steinpp/parallel.hpp"
#include "steinpp/pointproc.hpp"
#include "steinpp/rng.hpp"
#include "steinpp/stats.hpp"
#include "steinpp/stein.hpp"
#include "steinpp/tolerances.hpp"
#include "steinpp/version.hpp"

namespace {

using namespace steinpp;

volatile std::sig_atomic_t g_interrupted = 0;

void handle_sigint(int) { g_interrupted = 1; }

/// Command-line or config mistake; reported to stderr, exit status 2.
struct UsageError {
    std::string msg;
};

std::string num(double v) {
    std::string s;
    detail::append_num(s, v);
    return s;
}

constexpr std::uint64_t kStreamBlock = std::uint64_t{1} << 32;

// ---------------------------------------------------------------------------
// config file
// ---------------------------------------------------------------------------

std::string trim(std::string s) {
    const auto notspace = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
    s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
    return s;
}

/// `key = value` config with `#` comments.  Typed getters record every
/// consumed key with its resolved (canonical) value, so the manifest echoes
/// the full effective configuration and leftover keys can be rejected.
class Config {
public:
    Config() = default;

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw UsageError{"cannot open config file: " + path};
        Config cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw UsageError{"config " + path + ":" + std::to_string(lineno) +
                                 ": expected `key = value`, got '" + line + "'"};
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw UsageError{"config " + path + ":" + std::to_string(lineno) +
                                 ": empty key"};
            if (!cfg.kv_.emplace(key, value).second)
                throw UsageError{"config " + path + ":" + std::to_string(lineno) +
                                 ": duplicate key '" + key + "'"};
        }
        return cfg;
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    /// Force a value (used for flag overrides); echoed like any other key.
    void override_value(const std::string& key, const std::string& value) { kv_[key] = value; }

    double get_double(const std::string& key, double def) {
        const auto it = kv_.find(key);
        const double v = it == kv_.end() ? def : parse_double(key, it->second);
        consume(key, num(v));
        return v;
    }

    double require_double(const std::string& key) {
        const auto it = kv_.find(key);
        if (it == kv_.end()) throw UsageError{"config: missing required key '" + key + "'"};
        const double v = parse_double(key, it->second);
        consume(key, num(v));
        return v;
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t def) {
        const auto it = kv_.find(key);
        std::uint64_t v = def;
        if (it != kv_.end()) {
            const std::string& s = it->second;
            char* end = nullptr;
            errno = 0;
            const unsigned long long parsed = std::strtoull(s.c_str(), &end, 10);
            if (s.empty() || *end != '\0' || errno != 0 || s[0] == '-')
                throw UsageError{"config: key '" + key +
                                 "' must be an unsigned integer (got '" + s + "')"};
            v = parsed;
        }
        consume(key, std::to_string(v));
        return v;
    }

    std::size_t get_size(const std::string& key, std::size_t def) {
        return static_cast<std::size_t>(get_u64(key, def));
    }

    std::string get_string(const std::string& key, const std::string& def) {
        const auto it = kv_.find(key);
        const std::string v = it == kv_.end() ? def : it->second;
        consume(key, v);
        return v;
    }

    /// Consume without echoing into the manifest (for keys, like the output
    /// directory, that must not affect result bytes).
    std::string take_string(const std::string& key, const std::string& def) {
        const auto it = kv_.find(key);
        const std::string v = it == kv_.end() ? def : it->second;
        consumed_.insert(key);
        return v;
    }

    /// `n` (single value) or `n-list` (comma-separated); exactly one of them.
    std::vector<double> get_n_values(double def) {
        const bool has_n = has("n"), has_list = has("n-list");
        if (has_n && has_list)
            throw UsageError{"config: give either 'n' or 'n-list', not both"};
        std::vector<double> out;
        if (has_list) {
            const std::string raw = kv_.at("n-list");
            std::string canon;
            std::size_t start = 0;
            while (start <= raw.size()) {
                const auto comma = raw.find(',', start);
                const std::string item =
                    trim(raw.substr(start, comma == std::string::npos ? std::string::npos
                                                                      : comma - start));
                if (item.empty()) throw UsageError{"config: empty entry in 'n-list'"};
                out.push_back(parse_double("n-list", item));
                if (!canon.empty()) canon += ',';
                canon += num(out.back());
                if (comma == std::string::npos) break;
                start = comma + 1;
            }
            consume("n-list", canon);
        } else {
            out.push_back(get_double("n", def));
        }
        for (const double n : out) {
            if (!(n >= 3.0) || n != std::floor(n))
                throw UsageError{"config: n must be an integer >= 3 (got " + num(n) + ")"};
        }
        return out;
    }

    /// Reject any key never consumed by the experiment.
    void finish(const std::string& experiment) const {
        for (const auto& [key, value] : kv_)
            if (!consumed_.count(key))
                throw UsageError{"config: unknown key '" + key + "' for experiment " +
                                 experiment};
    }

    /// Resolved configuration (defaults included), canonical values, sorted.
    const std::map<std::string, std::string>& echo() const { return echo_; }

private:
    static double parse_double(const std::string& key, const std::string& s) {
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || *end != '\0' || !std::isfinite(v))
            throw UsageError{"config: key '" + key + "' must be a finite number (got '" + s +
                             "')"};
        return v;
    }

    void consume(const std::string& key, const std::string& canonical) {
        consumed_.insert(key);
        echo_[key] = canonical;
    }

    std::map<std::string, std::string> kv_;
    std::set<std::string> consumed_;
    std::map<std::string, std::string> echo_;
};

// ---------------------------------------------------------------------------
// output shaping
// ---------------------------------------------------------------------------

struct CheckResult {
    std::string name;
    bool pass = true;
};

/// One statistic of a long-format results table.  Cells without a defined
/// value (e.g. the SE of an exact statistic) stay empty in CSV, null in JSON.
struct LongRow {
    std::string check;
    double value = 0.0;
    std::optional<double> se, target, z, threshold;
    bool pass = true;
};

std::string long_rows_csv(std::span<const LongRow> rows) {
    std::string out = "check,value,se,target,z,threshold,pass\n";
    const auto cell = [](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
    for (const auto& r : rows) {
        out += r.check;
        out += ',';
        out += num(r.value);
        out += ',';
        out += cell(r.se);
        out += ',';
        out += cell(r.target);
        out += ',';
        out += cell(r.z);
        out += ',';
        out += cell(r.threshold);
        out += ',';
        out += r.pass ? "true" : "false";
        out += '\n';
    }
    return out;
}

void append_long_rows_json(std::string& out, std::span<const LongRow> rows) {
    const auto field = [&](const char* name, const std::optional<double>& v) {
        out += ",\"";
        out += name;
        out += "\":";
        if (v)
            detail::append_json_num(out, *v);
        else
            out += "null";
    };
    out += '[';
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (i) out += ',';
        out += "{\"check\":";
        detail::append_json_string(out, r.check);
        out += ",\"value\":";
        detail::append_json_num(out, r.value);
        field("se", r.se);
        field("target", r.target);
        field("z", r.z);
        field("threshold", r.threshold);
        out += ",\"pass\":";
        out += r.pass ? "true" : "false";
        out += '}';
    }
    out += ']';
}

/// Everything an experiment hands back for writing and exit-status logic.
struct ExperimentOutput {
    std::string csv;
    std::string json;
    std::vector<CheckResult> checks;
    bool pass = true;
    bool interrupted = false;

    void add_check(const std::string& name, bool ok) {
        checks.push_back({name, ok});
        pass = pass && ok;
    }
};

std::string manifest_json(const std::string& experiment, std::uint64_t seed,
                          const std::string& format,
                          const std::map<std::string, std::string>& echo,
                          const ExperimentOutput& result) {
    std::string out = "{\"experiment\":";
    detail::append_json_string(out, experiment);
    out += ",\"version\":";
    detail::append_json_string(out, kVersion);
    out += ",\"seed\":" + std::to_string(seed);
    out += ",\"format\":";
    detail::append_json_string(out, format);
    out += ",\"interrupted\":";
    out += result.interrupted ? "true" : "false";
    out += ",\"config\":{";
    bool first = true;
    for (const auto& [key, value] : echo) {
        if (!first) out += ',';
        first = false;
        detail::append_json_string(out, key);
        out += ':';
        detail::append_json_string(out, value);
    }
    out += "},\"checks\":[";
    for (std::size_t i = 0; i < result.checks.size(); ++i) {
        if (i) out += ',';
        out += "{\"name\":";
        detail::append_json_string(out, result.checks[i].name);
        out += ",\"pass\":";
        out += result.checks[i].pass ? "true" : "false";
        out += '}';
    }
    out += "],\"pass\":";
    out += result.pass ? "true" : "false";
    out += '}';
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError{"cannot write output file: " + path.string()};
    out << content;
    if (!out) throw UsageError{"failed while writing: " + path.string()};
}

/// Flush results + manifest; called after every completed row so an
/// interrupted run leaves the last consistent partial table behind.
void flush_outputs(const std::optional<std::filesystem::path>& outdir,
                   const std::string& experiment, std::uint64_t seed, const std::string& format,
                   const std::map<std::string, std::string>& echo,
                   const ExperimentOutput& result) {
    if (!outdir) return;
    std::filesystem::create_directories(*outdir);
    write_file(*outdir / (format == "json" ? "results.json" : "results.csv"),
               format == "json" ? result.json : result.csv);
    write_file(*outdir / "manifest.json", manifest_json(experiment, seed, format, echo, result));
}

// ---------------------------------------------------------------------------
// shared numeric helpers
// ---------------------------------------------------------------------------

struct Moments {
    double mean = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0; // central sample moments
};

Moments central_moments(std::span<const double> x) {
    Moments m;
    const auto n = static_cast<double>(x.size());
    for (const double v : x) m.mean += v;
    m.mean /= n;
    for (const double v : x) {
        const double d = v - m.mean;
        m.m2 += d * d;
        m.m3 += d * d * d;
        m.m4 += d * d * d * d;
    }
    m.m2 /= n;
    m.m3 /= n;
    m.m4 /= n;
    return m;
}

/// Exceedance-mark density of the k-NN functional under Poisson input:
/// the expected number of points whose mark exceeds u is
/// n P(Poisson(a_n + u) <= k - 1), and differentiating in u gives the
/// density below.
double knn_mark_density_poisson(double n, std::size_t k, double a_n, double u) {
    return n * poisson_pmf(static_cast<unsigned>(k - 1), a_n + u);
}

/// Same density under a fixed sample of n points: the mark-u neighborhood
/// ball has probability mass q = (a_n + u)/n and the other n-1 points are
/// i.i.d., so the exceedance mean is n P(Binomial(n-1, q) <= k-1).
double knn_mark_density_binomial(double n, std::size_t k, double a_n, double u) {
    const double q = (a_n + u) / n;
    if (!(q < 1.0) || q < 0.0) return 0.0;
    return (n - 1.0) * binomial_pmf(static_cast<unsigned>(k - 1),
                                    static_cast<unsigned>(n) - 2, q);
}

// ---------------------------------------------------------------------------
// bound experiments (knn-poisson, knn-binomial, bounds)
// ---------------------------------------------------------------------------

enum class Model { poisson, binomial };
enum class FunctionalKind { knn, critical };

std::string bound_csv_header() {
    return "n,k,d,b,b0,replicates,dtv_lm,e1,se_e1,e2,se_e2,e3,se_e3,e4,se_e4,e5,se_e5,e6,se_e6,"
           "total,seed\n";
}

void append_bound_csv_row(std::string& out, double n, std::size_t k, int d,
                          const BoundReport& r) {
    out += num(n);
    out += ',' + std::to_string(k);
    out += ',' + std::to_string(d);
    out += ',' + num(r.b);
    out += ',' + num(r.b0);
    out += ',' + std::to_string(r.replicates);
    const double vals[] = {r.dtv_lm, r.e1, r.se_e1, r.e2, r.se_e2, r.e3, r.se_e3, r.e4,
                           r.se_e4,  r.e5, r.se_e5, r.e6, r.se_e6, r.total()};
    for (const double v : vals) out += ',' + num(v);
    out += ',' + std::to_string(r.seed);
    out += '\n';
}

bool report_terms_finite(const BoundReport& r) {
    const double vals[] = {r.dtv_lm, r.e1, r.e2, r.e3, r.e4, r.e5, r.e6,
                           r.se_e1,  r.se_e2, r.se_e3, r.se_e4, r.se_e5, r.se_e6};
    for (const double v : vals)
        if (!std::isfinite(v) || v < 0.0) return false;
    return true;
}

ExperimentOutput run_bound_experiment(const std::string& experiment, Model model,
                                      FunctionalKind fkind, Config& cfg, std::uint64_t seed,
                                      int threads) {
    const int d = static_cast<int>(cfg.get_size("d", 2));
    const std::size_t k = cfg.get_size("k", 1);
    const std::size_t replicates = cfg.get_size("replicates", 1000);
    const std::vector<double> ns = cfg.get_n_values(1000.0);

    if (d < 2) throw UsageError{experiment + ": d must be at least 2 (got " +
                                std::to_string(d) + ")"};
    if (k < 1) throw UsageError{experiment + ": k must be at least 1"};
    if (replicates < 2)
        throw UsageError{experiment + ": replicates must be at least 2 (got " +
                         std::to_string(replicates) + ")"};

    // knn-only keys
    double b0 = 0.0, b_explicit = 0.0;
    std::string b_policy;
    if (fkind == FunctionalKind::knn) {
        b0 = cfg.get_double("b0", 0.0);
        b_policy = cfg.get_string("b-policy", model == Model::binomial ? "a-n" : "log-n");
        if (b_policy != "log-n" && b_policy != "a-n" && b_policy != "explicit")
            throw UsageError{experiment + ": b-policy must be log-n, a-n or explicit (got '" +
                             b_policy + "')"};
        if (b_policy == "explicit")
            b_explicit = cfg.require_double("b");
        else if (cfg.has("b"))
            throw UsageError{experiment + ": key 'b' requires b-policy = explicit"};
        const std::string density = cfg.get_string("density", "constant");
        if (density != "constant")
            throw UsageError{experiment + ": only 'constant' densities are supported (got '" +
                             density + "')"};
    }
    // critical-only keys
    double alpha0 = 0.0, Rn_explicit = 0.0;
    if (fkind == FunctionalKind::critical) {
        alpha0 = cfg.get_double("alpha0", 0.0);
        Rn_explicit = cfg.get_double("R-n", 0.0);
        if (model == Model::binomial)
            throw UsageError{experiment +
                             ": the binomial estimator supports only single-point "
                             "functionals; use functional = knn"};
    }
    cfg.finish(experiment);

    // resolve b per n and validate before any Monte Carlo work
    std::vector<double> bs(ns.size(), 0.0);
    if (fkind == FunctionalKind::knn) {
        for (std::size_t i = 0; i < ns.size(); ++i) {
            bs[i] = b_policy == "log-n" ? std::log(ns[i])
                    : b_policy == "a-n" ? KnnParams{k, ns[i], 0.0, 1.0}.a_n()
                                        : b_explicit;
            if (!(bs[i] > b0))
                throw UsageError{experiment + ": b must exceed b0 at n=" + num(ns[i]) +
                                 " (got b=" + num(bs[i]) + ", b0=" + num(b0) + ")"};
        }
    }

    ExperimentOutput result;
    result.csv = bound_csv_header();
    result.json = "{\"rows\":[";
    std::vector<double> totals;

    for (std::size_t row = 0; row < ns.size(); ++row) {
        if (g_interrupted) {
            result.interrupted = true;
            break;
        }
        const double n = ns[row];
        McConfig mc;
        mc.replicates = replicates;
        mc.rng = {seed, static_cast<std::uint64_t>(row) * kStreamBlock};
        mc.threads = threads;

        BoundReport rep;
        if (fkind == FunctionalKind::knn) {
            KnnParams params;
            params.k = k;
            params.n = n;
            params.b0 = b0;
            params.b = bs[row];
            const auto law = IntensityMeasure::constant(d, 1.0);
            const auto F = make_knn_functional(params, law);
            if (model == Model::poisson)
                rep = estimate_bounds_poisson(*F, IntensityMeasure::constant(d, n), mc);
            else
                rep = estimate_bounds_binomial(*F, law, static_cast<std::size_t>(n), mc);
            rep.b = params.b;
            rep.b0 = params.b0;
            const double a_n = params.a_n();
            if (model == Model::poisson)
                rep.dtv_lm = dtv_intensities(
                    [&](double u) { return knn_mark_density_poisson(n, k, a_n, u); },
                    [](double u) { return std::exp(-u); }, params.b0, params.b, 0.0,
                    std::exp(-params.b));
            else
                rep.dtv_lm = dtv_intensities(
                    [&](double u) { return knn_mark_density_binomial(n, k, a_n, u); },
                    [](double u) { return std::exp(-u); }, params.b0, params.b, 0.0,
                    std::exp(-params.b));
        } else {
            const CritParams params = make_crit_params(k, d, n, alpha0, Rn_explicit);
            const auto F = make_critical_functional(params);
            rep = estimate_bounds_poisson(*F, IntensityMeasure::constant(d, n), mc);
            const double center = std::log(n) + (static_cast<double>(k) - 1.0) *
                                                    std::log(std::log(n));
            rep.b = n * unit_ball_volume(d) * std::pow(params.R_n, d) - center;
            rep.b0 = alpha0;
            rep.notes.push_back(
                "dtv_lm: not computed (the limit intensity constant for critical points "
                "has no closed form)");
        }

        totals.push_back(rep.total());
        if (row) result.json += ',';
        result.json += rep.to_json();
        append_bound_csv_row(result.csv, n, k, d, rep);
        result.add_check("terms_finite_n" + num(n), report_terms_finite(rep));
        std::cout << "n=" << num(n) << " total=" << num(rep.total())
                  << " dtv_lm=" << num(rep.dtv_lm) << " e1=" << num(rep.e1)
                  << " e2=" << num(rep.e2) << std::endl;
    }

    if (result.interrupted) result.pass = false;
    if (!result.interrupted && ns.size() >= 2) {
        bool decreasing = totals.size() == ns.size();
        for (std::size_t i = 1; i < totals.size(); ++i)
            decreasing = decreasing && totals[i] < totals[i - 1];
        result.add_check("totals_decreasing", decreasing);
    }
    result.json += "],\"pass\":";
    result.json += result.pass ? "true" : "false";
    result.json += '}';
    return result;
}

// ---------------------------------------------------------------------------
// critical-points count experiment
// ---------------------------------------------------------------------------

ExperimentOutput run_critical_points(Config& cfg, std::uint64_t seed, int threads) {
    const int d = static_cast<int>(cfg.get_size("d", 2));
    const std::size_t k = cfg.get_size("k", 1);
    const std::size_t replicates = cfg.get_size("replicates", 400);
    const double alpha0 = cfg.get_double("alpha0", 0.0);
    const double Rn_explicit = cfg.get_double("R-n", 0.0);
    const double ratio_tol = cfg.get_double("ratio-tol", 0.1);
    const std::vector<double> ns = cfg.get_n_values(1000.0);
    if (replicates < 2)
        throw UsageError{"critical-points: replicates must be at least 2 (got " +
                         std::to_string(replicates) + ")"};
    if (!(ratio_tol > 0.0)) throw UsageError{"critical-points: ratio-tol must be positive"};
    cfg.finish("critical-points");

    ExperimentOutput result;
    result.csv =
        "n,k,d,alpha0,r_n,R_n,replicates,mean,se_mean,var,se_var,diff,se_diff,z,pass,seed\n";
    result.json = "{\"rows\":[";

    for (std::size_t row = 0; row < ns.size(); ++row) {
        if (g_interrupted) {
            result.interrupted = true;
            break;
        }
        const double n = ns[row];
        const CritParams params = make_crit_params(k, d, n, alpha0, Rn_explicit);
        const auto F = make_critical_functional(params);
        const auto K = IntensityMeasure::constant(d, n);

        std::vector<double> counts(replicates);
        const std::uint64_t base = static_cast<std::uint64_t>(row) * kStreamBlock;
        run_replicates(replicates, threads, [&](std::size_t r) {
            Rng eng = make_engine({seed, base + r});
            const PointConfiguration w = detail::sample_poisson_eng(K, eng, default_tolerances());
            counts[r] = static_cast<double>(eval_xi(*F, w).size());
        });

        const Moments m = central_moments(counts);
        const auto R = static_cast<double>(replicates);
        const double var = m.m2 * R / (R - 1.0);
        const double se_mean = std::sqrt(m.m2 / R);
        const double se_var = std::sqrt(std::max(0.0, m.m4 - m.m2 * m.m2) / R);
        const double diff = m.mean - var;
        // delta method for mean-minus-variance; the cross term is the third
        // central moment
        const double se_diff =
            std::sqrt(std::max(0.0, m.m2 + (m.m4 - m.m2 * m.m2) - 2.0 * m.m3) / R);
        const double z = detail::safe_z(diff, se_diff);
        const bool row_pass = std::abs(diff) <= ratio_tol * std::max(m.mean, var) ||
                              std::abs(z) <= 4.0;

        result.csv += num(n);
        result.csv += ',' + std::to_string(k) + ',' + std::to_string(d);
        for (const double v : {alpha0, params.r_n, params.R_n}) result.csv += ',' + num(v);
        result.csv += ',' + std::to_string(replicates);
        for (const double v : {m.mean, se_mean, var, se_var, diff, se_diff, z})
            result.csv += ',' + num(v);
        result.csv += row_pass ? ",true," : ",false,";
        result.csv += std::to_string(seed);
        result.csv += '\n';

        if (row) result.json += ',';
        std::string& j = result.json;
        j += "{\"n\":" + num(n) + ",\"k\":" + std::to_string(k) +
             ",\"d\":" + std::to_string(d);
        j += ",\"alpha0\":" + num(alpha0) + ",\"r_n\":" + num(params.r_n) +
             ",\"R_n\":" + num(params.R_n);
        j += ",\"replicates\":" + std::to_string(replicates);
        j += ",\"mean\":" + num(m.mean) + ",\"se_mean\":" + num(se_mean);
        j += ",\"var\":" + num(var) + ",\"se_var\":" + num(se_var);
        j += ",\"diff\":" + num(diff) + ",\"se_diff\":" + num(se_diff) + ",\"z\":" + num(z);
        j += ",\"pass\":";
        j += row_pass ? "true" : "false";
        j += ",\"seed\":" + std::to_string(seed) + '}';

        result.add_check("mean_matches_variance_n" + num(n), row_pass);
        std::cout << "n=" << num(n) << " mean=" << num(m.mean) << " var=" << num(var)
                  << " z=" << num(z) << std::endl;
    }

    if (result.interrupted) result.pass = false;
    result.json += "],\"pass\":";
    result.json += result.pass ? "true" : "false";
    result.json += '}';
    return result;
}

// ---------------------------------------------------------------------------
// glauber-check
// ---------------------------------------------------------------------------

ExperimentOutput run_glauber_check(Config& cfg, std::uint64_t seed, int threads) {
    const int d = static_cast<int>(cfg.get_size("d", 2));
    const double mass = cfg.get_double("mass", 5.0);
    const double horizon = cfg.get_double("horizon", 10.0);
    const std::size_t replicates = cfg.get_size("replicates", 100000);
    const std::size_t contraction_reps = cfg.get_size("contraction-replicates", 30000);
    const std::size_t disc = cfg.get_size("initial-discrepancy", 1);
    if (d < 1) throw UsageError{"glauber-check: d must be at least 1"};
    if (!(mass >= 0.0)) throw UsageError{"glauber-check: mass must be nonnegative"};
    if (!(horizon >= 0.0)) throw UsageError{"glauber-check: horizon must be nonnegative"};
    if (mass > 0.0 && replicates < 1000)
        throw UsageError{"glauber-check: replicates must be at least 1000 (got " +
                         std::to_string(replicates) + ")"};
    if (contraction_reps < 2)
        throw UsageError{"glauber-check: contraction-replicates must be at least 2"};
    cfg.finish("glauber-check");

    const auto M = IntensityMeasure::constant(d, mass);
    ExperimentOutput result;
    std::vector<LongRow> rows;

    const StationarityReport rep = stationarity_report(M, horizon, replicates, {seed, 0},
                                                       threads);
    rows.push_back({"stationarity_count_tv", rep.count_tv, std::nullopt, std::nullopt,
                    std::nullopt, rep.tv_threshold, rep.count_tv < rep.tv_threshold});
    rows.push_back({"stationarity_max_cell_z", rep.max_abs_z, std::nullopt, std::nullopt,
                    std::nullopt, rep.z_threshold, rep.max_abs_z < rep.z_threshold});
    const double decay = 1.0 - std::exp(-horizon);
    for (std::size_t c = 0; c < rep.cells.size(); ++c) {
        const auto& cell = rep.cells[c];
        const double lambda = cell.mass * decay;
        rows.push_back({"stationarity_cell_" + std::to_string(c), cell.mean,
                        std::sqrt(lambda / static_cast<double>(replicates)), lambda, cell.z, 4.0,
                        std::abs(cell.z) <= 4.0});
    }
    result.add_check("stationarity", rep.pass);
    std::cout << "stationarity: tv=" << num(rep.count_tv) << " max|z|=" << num(rep.max_abs_z)
              << (rep.pass ? " pass" : " FAIL") << std::endl;

    // coupling contraction: one chain from empty, the other from `disc`
    // deterministic extra points; the expected surviving discrepancy after
    // time s is disc * exp(-s)
    const PointConfiguration w1(d);
    PointConfiguration w2(d);
    std::vector<double> pt(static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < disc; ++i) {
        std::fill(pt.begin(), pt.end(),
                  (static_cast<double>(i) + 0.5) / static_cast<double>(disc));
        w2.push_back(pt);
    }

    const double horizons[] = {0.5, 1.0, 2.0};
    for (std::size_t j = 0; j < std::size(horizons); ++j) {
        if (g_interrupted) {
            result.interrupted = true;
            break;
        }
        const double s = horizons[j];
        std::vector<double> delta(contraction_reps);
        const std::uint64_t base = (j + 1) * kStreamBlock;
        run_replicates(contraction_reps, threads, [&](std::size_t r) {
            Rng eng = make_engine({seed, base + r});
            const auto [x1, x2] = simulate_coupled(w1, w2, M, s, eng);
            delta[r] = static_cast<double>(multiset_diff(x1, x2).symmetric());
        });
        const Summary sm = summarize(delta);
        const double target = static_cast<double>(disc) * std::exp(-s);
        const double z = detail::safe_z(sm.mean - target, sm.se);
        const bool ok = std::abs(z) <= 4.0;
        rows.push_back({"contraction_s_" + num(s), sm.mean, sm.se, target, z, 4.0, ok});
        result.add_check("contraction_s_" + num(s), ok);
        std::cout << "contraction s=" << num(s) << ": mean=" << num(sm.mean)
                  << " target=" << num(target) << " z=" << num(z) << std::endl;
    }
    if (result.interrupted) result.pass = false;

    result.csv = long_rows_csv(rows);
    result.json = "{\"stationarity\":" + rep.to_json() + ",\"checks\":";
    append_long_rows_json(result.json, rows);
    result.json += ",\"pass\":";
    result.json += result.pass ? "true" : "false";
    result.json += '}';
    return result;
}

// ---------------------------------------------------------------------------
// mecke-check
// ---------------------------------------------------------------------------

ExperimentOutput run_mecke_check(Config& cfg, std::uint64_t seed, int threads) {
    const int d = static_cast<int>(cfg.get_size("d", 2));
    const double mass = cfg.get_double("mass", 50.0);
    const double radius = cfg.get_double("radius", 0.1);
    const std::size_t replicates = cfg.get_size("replicates", 10000);
    if (d < 1) throw UsageError{"mecke-check: d must be at least 1"};
    if (!(mass > 0.0)) throw UsageError{"mecke-check: mass must be positive"};
    if (!(radius > 0.0) || !(radius < 0.5))
        throw UsageError{"mecke-check: radius must lie in (0, 0.5)"};
    if (replicates < 2) throw UsageError{"mecke-check: replicates must be at least 2"};
    cfg.finish("mecke-check");

    const auto K = IntensityMeasure::constant(d, mass);
    const double r2 = radius * radius;

    // Left side of the identity: sum over process points x of the number of
    // OTHER process points within `radius` of x.
    std::vector<double> lhs(replicates);
    run_replicates(replicates, threads, [&](std::size_t r) {
        Rng eng = make_engine({seed, r});
        const PointConfiguration w = detail::sample_poisson_eng(K, eng, default_tolerances());
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < w.size(); ++i)
            for (std::size_t j = i + 1; j < w.size(); ++j)
                if (torus_dist2(w.point(i), w.point(j)) <= r2) ++pairs;
        lhs[r] = 2.0 * static_cast<double>(pairs); // ordered pairs
    });

    // Right side: mass * E[count of an independent process in a ball around
    // an independent uniform location].
    std::vector<double> rhs(replicates);
    run_replicates(replicates, threads, [&](std::size_t r) {
        Rng eng = make_engine({seed, kStreamBlock + r});
        std::vector<double> x(static_cast<std::size_t>(d));
        for (auto& c : x) c = runif(eng);
        const PointConfiguration w = detail::sample_poisson_eng(K, eng, default_tolerances());
        std::size_t inside = 0;
        for (std::size_t i = 0; i < w.size(); ++i)
            if (torus_dist2(x, w.point(i)) <= r2) ++inside;
        rhs[r] = mass * static_cast<double>(inside);
    });

    const Summary sl = summarize(lhs);
    const Summary sr = summarize(rhs);
    const double analytic = mass * mass * unit_ball_volume(d) * std::pow(radius, d);
    const double diff = sl.mean - sr.mean;
    const double se_diff = std::hypot(sl.se, sr.se);

    std::vector<LongRow> rows;
    const double zl = detail::safe_z(sl.mean - analytic, sl.se);
    const double zr = detail::safe_z(sr.mean - analytic, sr.se);
    const double zd = detail::safe_z(diff, se_diff);
    rows.push_back({"lhs_mean", sl.mean, sl.se, analytic, zl, 4.0, std::abs(zl) <= 4.0});
    rows.push_back({"rhs_mean", sr.mean, sr.se, analytic, zr, 4.0, std::abs(zr) <= 4.0});
    rows.push_back({"lhs_minus_rhs", diff, se_diff, 0.0, zd, 4.0, std::abs(zd) <= 4.0});

    ExperimentOutput result;
    for (const auto& row : rows) result.add_check(row.check, row.pass);
    result.csv = long_rows_csv(rows);
    result.json = "{\"checks\":";
    append_long_rows_json(result.json, rows);
    result.json += ",\"pass\":";
    result.json += result.pass ? "true" : "false";
    result.json += '}';
    std::cout << "lhs=" << num(sl.mean) << " rhs=" << num(sr.mean)
              << " analytic=" << num(analytic) << " z(diff)=" << num(zd) << std::endl;
    return result;
}

// ---------------------------------------------------------------------------
// selftest
// ---------------------------------------------------------------------------

bool mutate_circumsphere_sign() {
    const char* m = std::getenv("STEINPP_MUTATE");
    return m != nullptr && std::strcmp(m, "circumsphere-sign") == 0;
}

/// A selftest check returns std::nullopt on success or a failure detail.
using SelfCheck = std::optional<std::string> (*)(int threads);

std::optional<std::string> check_torus_distance_metric(int) {
    Rng eng = make_engine({11, 0});
    for (const int d : {2, 3}) {
        const auto dim = static_cast<std::size_t>(d);
        std::vector<double> x(dim), y(dim), z(dim), xs(dim), ys(dim);
        for (int t = 0; t < 1000; ++t) {
            for (auto& c : x) c = runif(eng);
            for (auto& c : y) c = runif(eng);
            const double dxy = torus_distance(x, y);
            if (dxy != torus_distance(y, x)) return "asymmetric distance";
            if (dxy > 0.5 * std::sqrt(static_cast<double>(d)) + 1e-12)
                return "distance above the torus diameter";
            const double shift = runif(eng);
            for (std::size_t a = 0; a < dim; ++a) {
                xs[a] = wrap_unit(x[a] + shift);
                ys[a] = wrap_unit(y[a] + shift);
            }
            if (std::abs(torus_distance(xs, ys) - dxy) > 1e-12)
                return "distance not shift invariant";
            if (t < 300) {
                for (auto& c : z) c = runif(eng);
                if (dxy > torus_distance(x, z) + torus_distance(z, y) + 1e-12)
                    return "triangle inequality violated";
            }
        }
    }
    return std::nullopt;
}

std::optional<std::string> check_torus_lift_isometry(int) {
    Rng eng = make_engine({12, 0});
    const Tolerances tol = default_tolerances();
    for (int t = 0; t < 400; ++t) {
        std::vector<TorusPoint> tup(3, TorusPoint(2));
        TorusPoint anchor{runif(eng), runif(eng)};
        for (auto& p : tup)
            for (std::size_t a = 0; a < 2; ++a)
                p[a] = wrap_unit(anchor[a] + 0.2 * (runif(eng) - 0.5));
        const auto lifted = torus_lift(tup, anchor, tol);
        for (std::size_t i = 0; i < tup.size(); ++i)
            for (std::size_t j = i + 1; j < tup.size(); ++j) {
                const double de = std::hypot(lifted[i][0] - lifted[j][0],
                                             lifted[i][1] - lifted[j][1]);
                if (std::abs(de - torus_distance(tup[i], tup[j])) > 1e-12)
                    return "lift does not preserve pairwise distances";
            }
    }
    return std::nullopt;
}

std::optional<std::string> check_circumsphere_vs_brute(int) {
    Rng eng = make_engine({13, 0});
    const Tolerances tol = default_tolerances();
    const bool mutate = mutate_circumsphere_sign();
    int done = 0;
    while (done < 1000) {
        TorusPoint anchor{runif(eng), runif(eng)};
        std::vector<TorusPoint> tri(3, TorusPoint(2));
        // local planar coordinates of the same tuple, for the reference
        // solve; points 1 and 2 stay within the lifting window of point 0
        double p[3][2] = {{0.0, 0.0}, {}, {}};
        for (int i = 0; i < 3; ++i)
            for (int a = 0; a < 2; ++a) {
                if (i > 0) p[i][a] = 0.22 * (runif(eng) - 0.5);
                tri[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] =
                    wrap_unit(anchor[static_cast<std::size_t>(a)] + p[i][a]);
            }
        const double ax = p[1][0] - p[0][0], ay = p[1][1] - p[0][1];
        const double bx = p[2][0] - p[0][0], by = p[2][1] - p[0][1];
        const double det = 2.0 * (ax * by - ay * bx);
        if (std::abs(det) < 1e-4) continue; // nearly collinear: resample
        const double a2 = ax * ax + ay * ay, b2 = bx * bx + by * by;
        const double cx = (by * a2 - ay * b2) / det;
        const double cy = (ax * b2 - bx * a2) / det;
        const double ref_radius = std::hypot(cx, cy);
        if (ref_radius >= 0.245) continue; // too large to embed: resample
        TorusPoint ref_center{wrap_unit(anchor[0] + p[0][0] + cx),
                              wrap_unit(anchor[1] + p[0][1] + cy)};

        const auto cs = circumsphere(tri, tol);
        if (!cs) return "degenerate result on a regular triangle";
        double radius = cs->radius;
        if (mutate) radius = -radius; // harness corruption: must be caught
        if (std::abs(radius - ref_radius) > 1e-10)
            return "circumradius differs from the reference solve by " +
                   num(std::abs(radius - ref_radius));
        if (torus_distance(cs->center, ref_center) > 1e-10)
            return "circumcenter differs from the reference solve";
        ++done;
    }
    // two-point case: midpoint and half distance
    for (int t = 0; t < 200; ++t) {
        TorusPoint a{runif(eng), runif(eng)};
        TorusPoint b{wrap_unit(a[0] + 0.3 * (runif(eng) - 0.5)),
                     wrap_unit(a[1] + 0.3 * (runif(eng) - 0.5))};
        const auto cs = circumsphere({a, b}, default_tolerances());
        if (!cs) {
            if (torus_distance(a, b) == 0.0) continue;
            return "degenerate result on a distinct pair";
        }
        if (std::abs(cs->radius - 0.5 * torus_distance(a, b)) > 1e-12)
            return "pair circumradius is not half the distance";
    }
    return std::nullopt;
}

std::optional<std::string> check_knn_distance_vs_brute(int) {
    Rng eng = make_engine({14, 0});
    for (int t = 0; t < 500; ++t) {
        PointConfiguration w(2);
        for (int i = 0; i < 30; ++i) w.push_back({runif(eng), runif(eng)});
        const GridIndex grid(w);
        const std::size_t i = static_cast<std::size_t>(30.0 * runif(eng)) % 30;
        std::vector<double> dists;
        for (std::size_t j = 0; j < w.size(); ++j)
            if (j != i) dists.push_back(torus_distance(w.point(i), w.point(j)));
        std::sort(dists.begin(), dists.end());
        for (const std::size_t k : {std::size_t{1}, std::size_t{2}, std::size_t{3}}) {
            const double got = grid.knn_distance(w.point(i), k, true);
            if (std::abs(got - dists[k - 1]) > 1e-12)
                return "k-NN distance differs from the brute-force sort";
        }
    }
    return std::nullopt;
}

std::optional<std::string> check_count_tv_point_mass(int) {
    const std::vector<long long> zeros(1500, 0);
    const double tv = count_tv(zeros, 5.0);
    if (std::abs(tv - (1.0 - std::exp(-5.0))) > 1e-12)
        return "all-zero samples against mean 5 should give 1 - e^-5, got " + num(tv);
    return std::nullopt;
}

std::optional<std::string> check_config_dtv_multisets(int) {
    PointConfiguration w1(2), w2(2);
    const double a[] = {0.1, 0.1}, b[] = {0.2, 0.2}, c[] = {0.3, 0.3};
    w1.push_back(std::span<const double>(a, 2));
    w1.push_back(std::span<const double>(a, 2));
    w1.push_back(std::span<const double>(b, 2));
    w2.push_back(std::span<const double>(a, 2));
    w2.push_back(std::span<const double>(b, 2));
    w2.push_back(std::span<const double>(c, 2));
    if (config_dtv(w1, w2) != 1.0) return "{a,a,b} vs {a,b,c} must have distance 1";
    if (config_dtv(w1, w1) != 0.0) return "identical multisets must have distance 0";
    PointConfiguration sub(2);
    sub.push_back(std::span<const double>(a, 2));
    if (config_dtv(sub, w1) != 2.0) return "subset distance must be the count difference";
    Rng eng = make_engine({15, 0});
    for (int t = 0; t < 150; ++t) {
        PointConfiguration x(2), y(2), z(2);
        for (int i = 0; i < 4; ++i) {
            x.push_back({runif(eng), runif(eng)});
            y.push_back({runif(eng), runif(eng)});
            z.push_back({runif(eng), runif(eng)});
        }
        if (config_dtv(x, y) > config_dtv(x, z) + config_dtv(z, y))
            return "triangle inequality violated on random triples";
    }
    return std::nullopt;
}

std::optional<std::string> check_gumbel_plugin_targets(int) {
    const std::vector<double> marks(64, 0.0);
    const std::vector<double> grid{0.0, 1.0, 50.0};
    const auto rows = gumbel_check(marks, grid, [](double b) { return std::exp(-b); });
    if (std::abs(rows[0].target - std::exp(-1.0)) > 1e-12)
        return "target at level 0 must be e^-1";
    if (std::abs(rows[1].target - std::exp(-std::exp(-1.0))) > 1e-12)
        return "target at level 1 must be exp(-e^-1)";
    if (rows[2].target < 1.0 - 1e-12) return "target must approach 1 at high levels";
    return std::nullopt;
}

std::optional<std::string> check_poisson_sampler_count_law(int threads) {
    const std::size_t R = 20000;
    const double mass = 4.0;
    const auto K = IntensityMeasure::constant(2, mass);
    std::vector<double> counts(R);
    run_replicates(R, threads, [&](std::size_t r) {
        Rng eng = make_engine({17, r});
        counts[r] = static_cast<double>(detail::sample_poisson_eng(K, eng, default_tolerances()).size());
    });
    const Moments m = central_moments(counts);
    const auto n = static_cast<double>(R);
    const double z_mean = (m.mean - mass) / std::sqrt(mass / n);
    const double z_var = (m.m2 * n / (n - 1.0) - mass) /
                         std::sqrt((mass + 2.0 * mass * mass) / n);
    if (std::abs(z_mean) > 4.0) return "count mean off the Poisson law, z=" + num(z_mean);
    if (std::abs(z_var) > 4.0) return "count variance off the Poisson law, z=" + num(z_var);
    return std::nullopt;
}

std::optional<std::string> check_mecke_identity_small(int threads) {
    const std::size_t R = 8000;
    const double mass = 10.0, radius = 0.1, r2 = radius * radius;
    const auto K = IntensityMeasure::constant(2, mass);
    std::vector<double> lhs(R), rhs(R);
    run_replicates(R, threads, [&](std::size_t r) {
        Rng eng = make_engine({19, r});
        const PointConfiguration w = detail::sample_poisson_eng(K, eng, default_tolerances());
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < w.size(); ++i)
            for (std::size_t j = i + 1; j < w.size(); ++j)
                if (torus_dist2(w.point(i), w.point(j)) <= r2) ++pairs;
        lhs[r] = 2.0 * static_cast<double>(pairs);
    });
    run_replicates(R, threads, [&](std::size_t r) {
        Rng eng = make_engine({19, kStreamBlock + r});
        const double x[2] = {runif(eng), runif(eng)};
        const PointConfiguration w = detail::sample_poisson_eng(K, eng, default_tolerances());
        std::size_t inside = 0;
        for (std::size_t i = 0; i < w.size(); ++i)
            if (torus_dist2(std::span<const double>(x, 2), w.point(i)) <= r2) ++inside;
        rhs[r] = mass * static_cast<double>(inside);
    });
    const Summary sl = summarize(lhs), sr = summarize(rhs);
    const double z = detail::safe_z(sl.mean - sr.mean, std::hypot(sl.se, sr.se));
    if (std::abs(z) > 4.0) return "sides of the identity disagree, z=" + num(z);
    return std::nullopt;
}

std::optional<std::string> check_knn_exceedance_exact_mean(int threads) {
    const double n = 100.0, b = 8.0;
    KnnParams params;
    params.k = 1;
    params.n = n;
    params.b0 = -1.0;
    params.b = b;
    const auto F = make_knn_functional(params, IntensityMeasure::constant(2, 1.0));
    const auto K = IntensityMeasure::constant(2, n);
    const std::size_t R = 20000;
    std::vector<double> over0(R), over1(R);
    run_replicates(R, threads, [&](std::size_t r) {
        Rng eng = make_engine({21, r});
        const PointConfiguration w = detail::sample_poisson_eng(K, eng, default_tolerances());
        const MarkedConfiguration m = eval_xi(*F, w);
        double c0 = 0.0, c1 = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (m.mark(i) > 0.0) c0 += 1.0;
            if (m.mark(i) > 1.0) c1 += 1.0;
        }
        over0[r] = c0;
        over1[r] = c1;
    });
    // exact truncated exceedance mean: e^-u - e^-b for the 1-NN mark law
    const Summary s0 = summarize(over0), s1 = summarize(over1);
    const double t0 = 1.0 - std::exp(-b), t1 = std::exp(-1.0) - std::exp(-b);
    if (std::abs(s0.mean - t0) > 4.0 * s0.se)
        return "exceedance mean at level 0 is off: " + num(s0.mean) + " vs " + num(t0);
    if (std::abs(s1.mean - t1) > 4.0 * s1.se)
        return "exceedance mean at level 1 is off: " + num(s1.mean) + " vs " + num(t1);
    return std::nullopt;
}

std::optional<std::string> check_dtv_intensities_closed_form(int) {
    const auto exp_density = [](double u) { return std::exp(-u); };
    const double tail = std::exp(-3.0);
    const double same = dtv_intensities(exp_density, exp_density, 0.0, 3.0, tail, tail);
    if (std::abs(same - tail) > 1e-9)
        return "equal densities must leave only the tail mass, got " + num(same);
    const double tails_only = dtv_intensities(exp_density, exp_density, 0.0, 0.0, 0.3, 0.5);
    if (std::abs(tails_only - 0.4) > 1e-12)
        return "zero-width bulk must give half the tail sum, got " + num(tails_only);
    return std::nullopt;
}

std::optional<std::string> check_dynamics_pure_death(int) {
    const auto M0 = IntensityMeasure::constant(2, 0.0);
    PointConfiguration w0(2);
    for (int i = 0; i < 5; ++i)
        w0.push_back({0.1 + 0.17 * i, 0.8 - 0.13 * i});
    Rng eng = make_engine({23, 0});
    const PointConfiguration same = simulate(w0, M0, 0.0, eng);
    if (multiset_diff(same, w0).symmetric() != 0) return "zero horizon changed the state";
    const double s = 0.7;
    const std::size_t R = 15000;
    std::vector<double> counts(R);
    for (std::size_t r = 0; r < R; ++r) {
        const PointConfiguration w = simulate(w0, M0, s, eng);
        if (w.size() > w0.size()) return "a pure-death run gained points";
        counts[r] = static_cast<double>(w.size());
    }
    const Summary sm = summarize(counts);
    const double target = 5.0 * std::exp(-s);
    if (std::abs(sm.mean - target) > 4.0 * sm.se)
        return "survivor mean off the thinning law: " + num(sm.mean) + " vs " + num(target);
    const auto M = IntensityMeasure::constant(2, 3.0);
    for (int t = 0; t < 300; ++t) {
        const auto [x1, x2] = simulate_coupled(w0, w0, M, 1.0, eng);
        if (multiset_diff(x1, x2).symmetric() != 0)
            return "coupled chains with equal starts diverged";
    }
    return std::nullopt;
}

std::optional<std::string> check_coupling_contraction(int threads) {
    const auto M = IntensityMeasure::constant(2, 3.0);
    const PointConfiguration w1(2);
    PointConfiguration w2(2);
    w2.push_back({0.4, 0.6});
    const std::size_t R = 15000;
    std::vector<double> delta(R);
    run_replicates(R, threads, [&](std::size_t r) {
        Rng eng = make_engine({29, r});
        const auto [x1, x2] = simulate_coupled(w1, w2, M, 1.0, eng);
        delta[r] = static_cast<double>(multiset_diff(x1, x2).symmetric());
    });
    const Summary sm = summarize(delta);
    if (std::abs(sm.mean - std::exp(-1.0)) > 4.0 * sm.se)
        return "discrepancy survival off e^-1: " + num(sm.mean);
    return std::nullopt;
}

std::optional<std::string> check_bound_e1_closed_form(int threads) {
    KnnParams params;
    params.k = 1;
    params.n = 100.0;
    params.b0 = 0.0;
    params.b = std::log(100.0);
    const auto F = make_knn_functional(params, IntensityMeasure::constant(2, 1.0));
    McConfig mc;
    mc.replicates = 4000;
    mc.rng = {31, 0};
    mc.threads = threads;
    const BoundReport rep = estimate_bounds_poisson(*F, IntensityMeasure::constant(2, 100.0),
                                                    mc);
    if (!std::isfinite(rep.total())) return "bound total is not finite";
    if (std::abs(rep.e1 - 0.02) > 4.0 * rep.se_e1)
        return "escape term off its 2/n closed form: " + num(rep.e1);
    return std::nullopt;
}

std::optional<std::string> check_determinism_across_threads(int) {
    KnnParams params;
    params.k = 1;
    params.n = 50.0;
    params.b0 = 0.0;
    params.b = std::log(50.0);
    const auto F = make_knn_functional(params, IntensityMeasure::constant(2, 1.0));
    const auto K = IntensityMeasure::constant(2, 50.0);
    McConfig mc;
    mc.replicates = 300;
    mc.rng = {37, 0};
    mc.threads = 1;
    const std::string a = estimate_bounds_poisson(*F, K, mc).to_json();
    mc.threads = 2;
    const std::string b = estimate_bounds_poisson(*F, K, mc).to_json();
    mc.threads = 1;
    const std::string c = estimate_bounds_poisson(*F, K, mc).to_json();
    if (a != b) return "bound report depends on the thread count";
    if (a != c) return "bound report is not reproducible under the same seed";
    const auto M = IntensityMeasure::constant(2, 3.0);
    const std::string s1 = stationarity_report(M, 2.0, 1500, {41, 0}, 1).to_json();
    const std::string s2 = stationarity_report(M, 2.0, 1500, {41, 0}, 2).to_json();
    if (s1 != s2) return "stationarity report depends on the thread count";
    return std::nullopt;
}

ExperimentOutput run_selftest(Config& cfg, int threads) {
    cfg.finish("selftest");
    const std::pair<const char*, SelfCheck> checks[] = {
        {"torus-distance-metric", check_torus_distance_metric},
        {"torus-lift-isometry", check_torus_lift_isometry},
        {"circumsphere-vs-brute", check_circumsphere_vs_brute},
        {"knn-distance-vs-brute", check_knn_distance_vs_brute},
        {"count-tv-point-mass", check_count_tv_point_mass},
        {"config-dtv-multisets", check_config_dtv_multisets},
        {"gumbel-plugin-targets", check_gumbel_plugin_targets},
        {"poisson-sampler-count-law", check_poisson_sampler_count_law},
        {"mecke-identity-small", check_mecke_identity_small},
        {"knn-exceedance-exact-mean", check_knn_exceedance_exact_mean},
        {"dtv-intensities-closed-form", check_dtv_intensities_closed_form},
        {"dynamics-pure-death", check_dynamics_pure_death},
        {"coupling-contraction", check_coupling_contraction},
        {"bound-e1-closed-form", check_bound_e1_closed_form},
        {"determinism-across-threads", check_determinism_across_threads},
    };

    ExperimentOutput result;
    result.csv = "check,pass,detail\n";
    result.json = "{\"checks\":[";
    std::size_t idx = 0, failures = 0;
    for (const auto& [name, fn] : checks) {
        if (g_interrupted) {
            result.interrupted = true;
            break;
        }
        std::optional<std::string> detail;
        try {
            detail = fn(threads);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const bool ok = !detail.has_value();
        if (!ok) ++failures;
        result.add_check(name, ok);
        result.csv += name;
        result.csv += ok ? ",true," : ",false,";
        result.csv += detail.value_or("");
        result.csv += '\n';
        if (idx++) result.json += ',';
        result.json += "{\"check\":";
        detail::append_json_string(result.json, name);
        result.json += ",\"pass\":";
        result.json += ok ? "true" : "false";
        result.json += ",\"detail\":";
        detail::append_json_string(result.json, detail.value_or(""));
        result.json += '}';
        std::cout << (ok ? "[ok]   " : "[FAIL] ") << name;
        if (!ok) std::cout << ": " << *detail;
        std::cout << std::endl;
    }
    if (result.interrupted) result.pass = false;
    result.json += "],\"pass\":";
    result.json += result.pass ? "true" : "false";
    result.json += '}';
    std::cout << "selftest: " << (std::size(checks) - failures) << " of " << std::size(checks)
              << " checks passed" << std::endl;
    return result;
}

// ---------------------------------------------------------------------------
// argument handling
// ---------------------------------------------------------------------------

struct Options {
    std::string subcommand;
    std::optional<std::string> config_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> format;
};

const char* kUsage =
    "usage: steinpp <subcommand> [--config PATH] [--out DIR] [--seed U64]\n"
    "               [--threads N] [--format csv|json]\n"
    "       steinpp --version | --help\n"
    "\n"
    "subcommands:\n"
    "  knn-poisson      bound terms for the k-NN exceedance process, Poisson input\n"
    "  knn-binomial     same with a fixed-size input sample\n"
    "  critical-points  mean/variance study of the critical-point count\n"
    "  glauber-check    birth-death stationarity and contraction checks\n"
    "  mecke-check      two-sided Monte Carlo test of the Mecke identity\n"
    "  bounds           generic bound runner (model/functional from config)\n"
    "  selftest         fast built-in verification suite\n"
    "\n"
    "config file: line-oriented `key = value`, `#` comments. Common keys:\n"
    "  d, k, n, n-list, b0, b, b-policy (log-n|a-n|explicit), alpha0, R-n,\n"
    "  density, mass, horizon, radius, replicates, seed, format, out,\n"
    "  contraction-replicates, initial-discrepancy, ratio-tol\n"
    "Flags override config values; STEINPP_THREADS is the --threads fallback.\n";

std::uint64_t parse_u64_arg(const std::string& flag, const std::string& s) {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0' || errno != 0 || s[0] == '-')
        throw UsageError{flag + " expects an unsigned integer (got '" + s + "')"};
    return v;
}

Options parse_args(int argc, char** argv) {
    Options opts;
    std::vector<std::string> args(argv + 1, argv + argc);
    std::size_t i = 0;
    const auto next_value = [&](const std::string& flag) {
        if (i + 1 >= args.size()) throw UsageError{flag + " expects a value"};
        return args[++i];
    };
    for (; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a == "--help" || a == "--version") {
            opts.subcommand = a;
            return opts;
        }
        if (a == "--config")
            opts.config_path = next_value(a);
        else if (a == "--out")
            opts.out_dir = next_value(a);
        else if (a == "--seed")
            opts.seed = parse_u64_arg(a, next_value(a));
        else if (a == "--threads") {
            const auto v = parse_u64_arg(a, next_value(a));
            if (v < 1 || v > 4096) throw UsageError{"--threads must lie in [1, 4096]"};
            opts.threads = static_cast<int>(v);
        } else if (a == "--format") {
            opts.format = next_value(a);
        } else if (!a.empty() && a[0] == '-') {
            throw UsageError{"unknown flag: " + a};
        } else if (opts.subcommand.empty()) {
            opts.subcommand = a;
        } else {
            throw UsageError{"unexpected argument: " + a};
        }
    }
    if (opts.subcommand.empty()) throw UsageError{"missing subcommand"};
    return opts;
}

int resolve_threads(const Options& opts) {
    if (opts.threads) return *opts.threads;
    if (const char* env = std::getenv("STEINPP_THREADS")) {
        const std::uint64_t v = parse_u64_arg("STEINPP_THREADS", env);
        if (v < 1 || v > 4096) throw UsageError{"STEINPP_THREADS must lie in [1, 4096]"};
        return static_cast<int>(v);
    }
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    try {
        const Options opts = parse_args(argc, argv);
        if (opts.subcommand == "--help") {
            std::cout << kUsage;
            return 0;
        }
        if (opts.subcommand == "--version") {
            std::cout << "steinpp " << kVersion << std::endl;
            return 0;
        }

        Config cfg = opts.config_path ? Config::load(*opts.config_path) : Config{};
        const std::string cfg_experiment = cfg.get_string("experiment", opts.subcommand);
        if (cfg_experiment != opts.subcommand)
            throw UsageError{"config experiment '" + cfg_experiment +
                             "' does not match subcommand '" + opts.subcommand + "'"};
        if (opts.seed) cfg.override_value("seed", std::to_string(*opts.seed));
        if (opts.format) cfg.override_value("format", *opts.format);
        if (opts.out_dir) cfg.override_value("out", *opts.out_dir);

        const std::uint64_t seed = cfg.get_u64("seed", 1);
        const std::string format = cfg.get_string("format", "csv");
        if (format != "csv" && format != "json")
            throw UsageError{"format must be csv or json (got '" + format + "')"};
        const std::string out_raw = cfg.take_string("out", "");
        const std::optional<std::filesystem::path> outdir =
            out_raw.empty() ? std::nullopt
                            : std::optional<std::filesystem::path>(out_raw);
        const int threads = resolve_threads(opts);

        std::signal(SIGINT, handle_sigint);

        ExperimentOutput result;
        const std::string& sub = opts.subcommand;
        if (sub == "knn-poisson") {
            result = run_bound_experiment(sub, Model::poisson, FunctionalKind::knn, cfg, seed,
                                          threads);
        } else if (sub == "knn-binomial") {
            result = run_bound_experiment(sub, Model::binomial, FunctionalKind::knn, cfg, seed,
                                          threads);
        } else if (sub == "bounds") {
            const std::string model = cfg.get_string("model", "poisson");
            if (model != "poisson" && model != "binomial")
                throw UsageError{"bounds: model must be poisson or binomial (got '" + model +
                                 "')"};
            const std::string functional = cfg.get_string("functional", "knn");
            if (functional != "knn" && functional != "critical")
                throw UsageError{"bounds: functional must be knn or critical (got '" +
                                 functional + "')"};
            result = run_bound_experiment(
                sub, model == "poisson" ? Model::poisson : Model::binomial,
                functional == "knn" ? FunctionalKind::knn : FunctionalKind::critical, cfg, seed,
                threads);
        } else if (sub == "critical-points") {
            result = run_critical_points(cfg, seed, threads);
        } else if (sub == "glauber-check") {
            result = run_glauber_check(cfg, seed, threads);
        } else if (sub == "mecke-check") {
            result = run_mecke_check(cfg, seed, threads);
        } else if (sub == "selftest") {
            result = run_selftest(cfg, threads);
        } else {
            throw UsageError{"unknown subcommand: " + sub + "\n\n" + kUsage};
        }

        flush_outputs(outdir, sub, seed, format, cfg.echo(), result);
        if (!outdir) {
            std::cout << '\n' << (format == "json" ? result.json + "\n" : result.csv);
            std::cout << "manifest: " << manifest_json(sub, seed, format, cfg.echo(), result)
                      << '\n';
        }
        std::cout << (result.pass ? "PASS" : "FAIL") << std::endl;
        if (result.interrupted) return 130;
        return result.pass ? 0 : 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.msg << std::endl;
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << std::endl;
        return 2;
    }
}
