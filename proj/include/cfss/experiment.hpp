#pragma once

#include "cfss/montecarlo.hpp"
#include "cfss/power_control.hpp"

#include "json.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace cfss {

enum class CsiMode { statistical, dlpilot };
enum class AllocationMode { uniform, maxmin };
enum class SweepVar { none, P_P_dbw, I_T_db, users, aps };

/// Declarative description of one experiment. Powers are in dBW, I_T in
/// dB relative to the noise power. Negative tau_p / tau_pd / Q mean
/// "derive from the user counts".
struct ExperimentSpec {
    MultipleAccess mode = MultipleAccess::oma;
    CsiMode csi = CsiMode::statistical;
    AllocationMode allocation = AllocationMode::uniform;
    SweepVar sweep_var = SweepVar::none;
    std::vector<double> sweep_values;
    long trials = 100000;
    std::uint64_t seed = 1;
    std::string out;

    int M = 32, N = 32, K = 10, L = 10, A = 1, B = 1;
    int Q = -1;
    int M_P = 0, N_S = 0; ///< 0 keeps every AP serving every user
    double area_side = 800.0, d0 = 1.0, nu = 2.4, shadow_std_db = 8.0;
    double noise_dbw = 0.0;
    int tau_c = 196, tau_p = -1, tau_pd = -1;
    double P_ul_pilot_dbw = -10.0;
    double P_P_dbw = 0.0;
    double P_S_ratio = 0.5;
    double P_d_dbw = -10.0;
    double I_T_db = 0.0;
    double sic_theta = 1.0;
    bool colocated = false;
    FormulaVariant formula = FormulaVariant::exact;
    bool noma_lambda_contamination = false;
    double epsilon = 1e-3;
    double rel_tol = 0.02;
    double stderr_band = 4.0;
    int batches = 50;

    bool operator==(const ExperimentSpec&) const = default;

    bool is_noma() const { return mode == MultipleAccess::noma; }
    int pilot_groups_P() const { return is_noma() ? A : K; }
    int pilot_groups_S() const { return is_noma() ? B : L; }
    int shared_pilots() const { return Q >= 0 ? Q : std::min(pilot_groups_P(), pilot_groups_S()); }
    int uplink_pilots() const { return tau_p >= 0 ? tau_p : std::max(pilot_groups_P(), pilot_groups_S()); }
    int downlink_pilots() const { return tau_pd >= 0 ? tau_pd : std::max(pilot_groups_P(), pilot_groups_S()); }
    /// Symbols spent on pilots in the chosen CSI regime.
    int overhead() const { return uplink_pilots() + (csi == CsiMode::dlpilot ? downlink_pilots() : 0); }

    void validate() const;
    static void check_point(const ExperimentSpec& point);
    /// Copy with one sweep value applied.
    ExperimentSpec at(double sweep_value) const;
    SystemConfig system() const;
};

// ---------------------------------------------------------------- names

namespace detail {

template <class E>
struct EnumName {
    E value;
    const char* name;
};

inline constexpr EnumName<MultipleAccess> kModes[] = {{MultipleAccess::oma, "oma"}, {MultipleAccess::noma, "noma"}};
inline constexpr EnumName<CsiMode> kCsi[] = {{CsiMode::statistical, "statistical"}, {CsiMode::dlpilot, "dlpilot"}};
inline constexpr EnumName<AllocationMode> kAlloc[] = {{AllocationMode::uniform, "uniform"},
                                                      {AllocationMode::maxmin, "maxmin"}};
inline constexpr EnumName<SweepVar> kSweep[] = {{SweepVar::none, "none"},
                                                {SweepVar::P_P_dbw, "P_P_dbw"},
                                                {SweepVar::I_T_db, "I_T_db"},
                                                {SweepVar::users, "users"},
                                                {SweepVar::aps, "aps"}};
inline constexpr EnumName<FormulaVariant> kFormula[] = {{FormulaVariant::exact, "exact"},
                                                        {FormulaVariant::as_printed, "as_printed"}};

template <class E, std::size_t n>
const char* name_of(const EnumName<E> (&table)[n], E v)
{
    for (const auto& e : table)
        if (e.value == v) return e.name;
    return "?";
}

template <class E, std::size_t n>
E parse_enum(const EnumName<E> (&table)[n], const std::string& s, const char* key)
{
    for (const auto& e : table)
        if (s == e.name) return e.value;
    std::string allowed;
    for (const auto& e : table) allowed += std::string(allowed.empty() ? "" : ", ") + e.name;
    throw InvalidArgument(std::string("invalid value '") + s + "' for " + key + " (expected " + allowed + ")");
}

} // namespace detail

inline const char* to_string(MultipleAccess v) { return detail::name_of(detail::kModes, v); }
inline const char* to_string(CsiMode v) { return detail::name_of(detail::kCsi, v); }
inline const char* to_string(AllocationMode v) { return detail::name_of(detail::kAlloc, v); }
inline const char* to_string(SweepVar v) { return detail::name_of(detail::kSweep, v); }

// ---------------------------------------------------------------- config I/O

using Json = nlohmann::ordered_json;

inline Json to_json(const ExperimentSpec& s)
{
    Json j;
    j["mode"] = to_string(s.mode);
    j["csi"] = to_string(s.csi);
    j["allocation"] = to_string(s.allocation);
    j["sweep_var"] = to_string(s.sweep_var);
    j["sweep_values"] = s.sweep_values;
    j["trials"] = s.trials;
    j["seed"] = s.seed;
    j["out"] = s.out;
    j["M"] = s.M;
    j["N"] = s.N;
    j["K"] = s.K;
    j["L"] = s.L;
    j["A"] = s.A;
    j["B"] = s.B;
    j["Q"] = s.Q;
    j["M_P"] = s.M_P;
    j["N_S"] = s.N_S;
    j["area_side"] = s.area_side;
    j["d0"] = s.d0;
    j["nu"] = s.nu;
    j["shadow_std_db"] = s.shadow_std_db;
    j["noise_dbw"] = s.noise_dbw;
    j["tau_c"] = s.tau_c;
    j["tau_p"] = s.tau_p;
    j["tau_pd"] = s.tau_pd;
    j["P_ul_pilot_dbw"] = s.P_ul_pilot_dbw;
    j["P_P_dbw"] = s.P_P_dbw;
    j["P_S_ratio"] = s.P_S_ratio;
    j["P_d_dbw"] = s.P_d_dbw;
    j["I_T_db"] = s.I_T_db;
    j["sic_theta"] = s.sic_theta;
    j["colocated"] = s.colocated;
    j["formula"] = to_string(s.formula);
    j["noma_lambda_contamination"] = s.noma_lambda_contamination;
    j["epsilon"] = s.epsilon;
    j["rel_tol"] = s.rel_tol;
    j["stderr_band"] = s.stderr_band;
    j["batches"] = s.batches;
    return j;
}

/// Reads a flat JSON object. Missing keys keep their defaults; unknown keys
/// and ill-typed values are errors.
inline ExperimentSpec spec_from_json(const Json& j)
{
    require(j.is_object(), "config must be a JSON object");
    ExperimentSpec s;
    const Json known = to_json(s);
    for (auto it = j.begin(); it != j.end(); ++it)
        require(known.contains(it.key()), "unknown config key '" + it.key() + "'");

    auto get = [&j](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception&) {
            throw InvalidArgument(std::string("config key '") + key + "' has the wrong type");
        }
    };
    auto get_enum = [&j](const char* key, auto& field, const auto& table) {
        if (!j.contains(key)) return;
        require(j.at(key).is_string(), std::string("config key '") + key + "' must be a string");
        field = detail::parse_enum(table, j.at(key).template get<std::string>(), key);
    };
    auto get_int = [&j](const char* key, auto& field) {
        if (!j.contains(key)) return;
        require(j.at(key).is_number_integer(), std::string("config key '") + key + "' must be an integer");
        j.at(key).get_to(field);
    };

    get_enum("mode", s.mode, detail::kModes);
    get_enum("csi", s.csi, detail::kCsi);
    get_enum("allocation", s.allocation, detail::kAlloc);
    get_enum("sweep_var", s.sweep_var, detail::kSweep);
    get("sweep_values", s.sweep_values);
    get_int("trials", s.trials);
    if (j.contains("seed")) {
        require(j.at("seed").is_number_unsigned() || (j.at("seed").is_number_integer() && j.at("seed").get<long long>() >= 0),
                "config key 'seed' must be a nonnegative integer");
        s.seed = j.at("seed").get<std::uint64_t>();
    }
    get("out", s.out);
    get_int("M", s.M);
    get_int("N", s.N);
    get_int("K", s.K);
    get_int("L", s.L);
    get_int("A", s.A);
    get_int("B", s.B);
    get_int("Q", s.Q);
    get_int("M_P", s.M_P);
    get_int("N_S", s.N_S);
    get("area_side", s.area_side);
    get("d0", s.d0);
    get("nu", s.nu);
    get("shadow_std_db", s.shadow_std_db);
    get("noise_dbw", s.noise_dbw);
    get_int("tau_c", s.tau_c);
    get_int("tau_p", s.tau_p);
    get_int("tau_pd", s.tau_pd);
    get("P_ul_pilot_dbw", s.P_ul_pilot_dbw);
    get("P_P_dbw", s.P_P_dbw);
    get("P_S_ratio", s.P_S_ratio);
    get("P_d_dbw", s.P_d_dbw);
    get("I_T_db", s.I_T_db);
    get("sic_theta", s.sic_theta);
    get("colocated", s.colocated);
    get_enum("formula", s.formula, detail::kFormula);
    get("noma_lambda_contamination", s.noma_lambda_contamination);
    get("epsilon", s.epsilon);
    get("rel_tol", s.rel_tol);
    get("stderr_band", s.stderr_band);
    get_int("batches", s.batches);
    return s;
}

inline ExperimentSpec parse_spec(const std::string& text)
{
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument(std::string("config is not valid JSON: ") + e.what());
    }
    return spec_from_json(j);
}

inline std::string serialize_spec(const ExperimentSpec& s) { return to_json(s).dump(2) + "\n"; }

inline ExperimentSpec load_spec(const std::string& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_spec(ss.str());
}

inline SystemConfig ExperimentSpec::system() const
{
    SystemConfig c;
    c.M = M;
    c.N = N;
    c.K = K;
    c.L = L;
    c.A = A;
    c.B = B;
    c.access = mode;
    c.area_side = area_side;
    c.d0 = d0;
    c.nu = nu;
    c.shadow_std_db = shadow_std_db;
    c.noise_power = db_to_linear(noise_dbw);
    c.tau_c = tau_c;
    c.tau_p = uplink_pilots();
    c.tau_pd = downlink_pilots();
    c.P_ul_pilot = db_to_linear(P_ul_pilot_dbw);
    c.P_P = db_to_linear(P_P_dbw);
    c.P_S = P_S_ratio * c.P_P;
    c.P_d = db_to_linear(P_d_dbw);
    c.seed = seed;
    return c;
}

inline ExperimentSpec ExperimentSpec::at(double v) const
{
    ExperimentSpec s = *this;
    s.sweep_var = SweepVar::none;
    s.sweep_values.clear();
    auto as_count = [v](const char* what) {
        require(v >= 1.0 && v == std::floor(v), std::string(what) + " sweep values must be positive integers");
        return static_cast<int>(v);
    };
    switch (sweep_var) {
    case SweepVar::none: break;
    case SweepVar::P_P_dbw: s.P_P_dbw = v; break;
    case SweepVar::I_T_db: s.I_T_db = v; break;
    case SweepVar::users: s.K = s.L = as_count("users"); break;
    case SweepVar::aps: s.M = s.N = as_count("aps"); break;
    }
    return s;
}

inline void ExperimentSpec::validate() const
{
    require(trials >= 1, "trials must be at least 1");
    require(batches >= 2, "batches must be at least 2");
    require(sweep_var == SweepVar::none || !sweep_values.empty(), "sweep grid is empty");
    require(sweep_var != SweepVar::none || sweep_values.empty(), "sweep_values given without sweep_var");
    require(!(is_noma() && allocation == AllocationMode::maxmin), "max-min allocation is defined for OMA only");
    require(!is_noma() || (M_P == 0 && N_S == 0), "AP clustering (M_P, N_S) applies to OMA only");
    require(M_P >= 0 && N_S >= 0, "M_P and N_S must be nonnegative");
    require(sic_theta > 0.0 && sic_theta <= 1.0, "sic_theta must lie in (0, 1]");
    require(P_S_ratio >= 0.0, "P_S_ratio must be nonnegative");
    require(epsilon > 0.0, "epsilon must be positive");
    require(rel_tol >= 0.0 && stderr_band >= 0.0, "tolerances must be nonnegative");
    require(std::isfinite(noise_dbw) && std::isfinite(P_P_dbw) && std::isfinite(I_T_db), "dB values must be finite");
    const auto points = sweep_var == SweepVar::none ? std::vector<double>{0.0} : sweep_values;
    for (double v : points) {
        try {
            check_point(at(v));
        } catch (const InvalidArgument& e) {
            if (sweep_var == SweepVar::none) throw;
            char buf[32];
            std::snprintf(buf, sizeof buf, "%g", v);
            throw InvalidArgument(std::string(to_string(sweep_var)) + " = " + buf + ": " + e.what());
        }
    }
}

inline void ExperimentSpec::check_point(const ExperimentSpec& p)
{
    p.system().validate();
    require(p.shared_pilots() <= std::min(p.pilot_groups_P(), p.pilot_groups_S()),
            "Q cannot exceed the number of pilot groups");
    require(p.M_P <= p.M && p.N_S <= p.N, "M_P / N_S cannot exceed the AP counts");
    require(p.uplink_pilots() >= p.pilot_groups_P() + p.pilot_groups_S() - p.shared_pilots(),
            "tau_p is too short for orthogonal pilots outside the shared set");
    require(p.overhead() < p.tau_c, "pilot overhead must be below tau_c");
}

// ---------------------------------------------------------------- deployment

/// Everything derived from one spec point before any SINR is evaluated.
struct Deployment {
    SystemConfig cfg;
    LinkGains gains;
    double P_P = 0.0, P_S = 0.0; ///< noise-normalised
    double Ppd = 0.0;
    Vector I_T;

    // OMA
    UlEstimateStats oma;
    ClusterAssignment clusters;
    // NOMA
    NomaUlStats noma;
    NomaOrdering order;
    SicModel sic;

    PowerAllocation alloc;
    std::optional<MaxMinResult> maxmin;
};

inline Deployment build_deployment(const ExperimentSpec& s)
{
    Deployment d;
    d.cfg = s.system();
    NetworkGeometry geo = generate_topology(d.cfg);
    if (s.colocated) geo = colocate(geo, s.area_side);
    d.gains = compute_large_scale(geo, d.cfg);
    d.P_P = d.cfg.snr(d.cfg.P_P);
    d.P_S = d.cfg.snr(d.cfg.P_S);
    d.Ppd = d.cfg.tau_pd * d.cfg.snr(d.cfg.P_d);
    d.I_T = Vector::Constant(d.cfg.num_pu(), db_to_linear(s.I_T_db));
    const double Pp = d.cfg.snr(d.cfg.P_ul_pilot);
    const PilotPlan plan = assign_pilots(s.pilot_groups_P(), s.pilot_groups_S(), s.shared_pilots(), s.uplink_pilots());
    if (s.is_noma()) {
        const NomaShape shape{s.A, s.K, s.B, s.L};
        d.noma = ul_stats_noma(d.gains, shape, plan, Pp);
        d.order = order_noma_users(d.noma);
        d.sic = SicModel::uniform(s.A * s.K, s.B * s.L, s.sic_theta);
        d.alloc = capped_noma_allocation(d.noma, d.gains, d.order, d.P_P, d.P_S, d.I_T, s.formula);
        return d;
    }
    d.oma = ul_stats_oma(d.gains, plan, Pp);
    d.clusters = (s.M_P > 0 || s.N_S > 0) ? cluster_aps(d.gains, s.M_P > 0 ? s.M_P : s.M, s.N_S > 0 ? s.N_S : s.N)
                                          : full_assignment(d.gains);
    if (s.allocation == AllocationMode::maxmin) {
        MaxMinProblem pr;
        pr.stats = d.oma;
        pr.gains = d.gains;
        pr.clusters = d.clusters;
        pr.P_P = d.P_P;
        pr.P_S = d.P_S;
        pr.I_T = d.I_T;
        pr.epsilon = s.epsilon;
        d.maxmin = maxmin_bisection(pr);
        d.alloc = d.maxmin->alloc;
    } else {
        d.alloc = capped_uniform_allocation(d.oma, d.gains, d.clusters, d.P_P, d.P_S, d.I_T, s.formula);
    }
    return d;
}

/// Per-user SINRs and rates of a deployment in the spec's CSI regime.
inline RateReport evaluate(const ExperimentSpec& s, const Deployment& d)
{
    const std::string regime = std::string(to_string(s.mode)) + "/" + to_string(s.csi);
    Vector gP, gS;
    if (s.is_noma()) {
        if (s.csi == CsiMode::dlpilot) {
            const auto dl = dl_stats_noma(d.noma, d.gains, d.alloc, d.Ppd, s.formula, s.noma_lambda_contamination);
            std::tie(gP, gS) = sinr_noma_dlpilot(dl, d.noma.shape, d.alloc, d.order, s.formula);
        } else {
            gP = sinr_primary_noma(d.noma, d.gains, d.alloc, d.order, d.sic, s.formula);
            gS = sinr_secondary_noma(d.noma, d.gains, d.alloc, d.order, d.sic, s.formula);
        }
    } else if (s.csi == CsiMode::dlpilot) {
        const auto dl = dl_stats_oma(d.oma, d.gains, d.clusters, d.alloc, d.Ppd);
        gP = sinr_primary_oma_dlpilot(dl, d.oma, d.gains, d.clusters, d.alloc, s.formula);
        gS = sinr_secondary_oma_dlpilot(dl, d.oma, d.gains, d.clusters, d.alloc, s.formula);
    } else {
        gP = sinr_primary_oma(d.oma, d.gains, d.clusters, d.alloc, s.formula);
        gS = sinr_secondary_oma(d.oma, d.gains, d.clusters, d.alloc, s.formula);
    }
    return make_report(regime, std::move(gP), std::move(gS), s.tau_c, s.overhead());
}

// ---------------------------------------------------------------- tables

/// A cell is a number, a string, or empty (CSV "", JSON null).
struct Cell {
    enum class Kind { number, text, empty } kind = Kind::empty;
    double number = 0.0;
    std::string text;

    static Cell num(double v) { return {Kind::number, v, {}}; }
    static Cell str(std::string v) { return {Kind::text, 0.0, std::move(v)}; }
    static Cell none() { return {}; }
    bool operator==(const Cell&) const = default;
};

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<Cell>> rows;
    bool operator==(const Table&) const = default;
};

enum class OutputFormat { csv, json };

inline OutputFormat parse_format(const std::string& s)
{
    if (s == "csv") return OutputFormat::csv;
    if (s == "json") return OutputFormat::json;
    throw InvalidArgument("format must be csv or json");
}

/// Nine significant digits, locale independent.
inline std::string format_number(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

namespace detail {

inline std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace detail

inline std::string to_csv(const Table& t)
{
    std::string out;
    for (std::size_t i = 0; i < t.header.size(); ++i) out += (i ? "," : "") + detail::csv_escape(t.header[i]);
    out += "\n";
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ",";
            const Cell& c = row[i];
            if (c.kind == Cell::Kind::number) out += format_number(c.number);
            else if (c.kind == Cell::Kind::text) out += detail::csv_escape(c.text);
        }
        out += "\n";
    }
    return out;
}

/// Array of records keyed by the header. Numbers are rounded to nine
/// significant digits first; non-finite values become strings.
inline std::string to_json_text(const Table& t)
{
    Json arr = Json::array();
    for (const auto& row : t.rows) {
        Json rec = Json::object();
        for (std::size_t i = 0; i < row.size(); ++i) {
            const Cell& c = row[i];
            Json& v = rec[t.header[i]];
            if (c.kind == Cell::Kind::number) {
                if (std::isfinite(c.number)) v = std::stod(format_number(c.number));
                else v = format_number(c.number);
            } else if (c.kind == Cell::Kind::text) {
                v = c.text;
            } else {
                v = nullptr;
            }
        }
        arr.push_back(std::move(rec));
    }
    return arr.dump(2) + "\n";
}

inline std::string render(const Table& t, OutputFormat f) { return f == OutputFormat::csv ? to_csv(t) : to_json_text(t); }

/// Parses text written by to_csv. Unquoted cells that read fully as a
/// number become numbers; empty cells become empty.
inline Table parse_csv(const std::string& text)
{
    Table t;
    std::vector<std::vector<std::pair<std::string, bool>>> lines(1);
    std::string cur;
    bool quoted = false, in_quotes = false;
    auto end_cell = [&] {
        lines.back().emplace_back(cur, quoted);
        cur.clear();
        quoted = false;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                in_quotes = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            in_quotes = quoted = true;
        } else if (c == ',') {
            end_cell();
        } else if (c == '\n') {
            end_cell();
            lines.emplace_back();
        } else {
            cur += c;
        }
    }
    if (!cur.empty() || !lines.back().empty()) end_cell();
    if (lines.back().empty()) lines.pop_back();
    require(!lines.empty(), "CSV has no header");
    for (const auto& [s, q] : lines.front()) t.header.push_back(s);
    for (std::size_t r = 1; r < lines.size(); ++r) {
        require(lines[r].size() == t.header.size(), "CSV row width differs from header");
        std::vector<Cell> row;
        for (const auto& [s, q] : lines[r]) {
            if (s.empty() && !q) {
                row.push_back(Cell::none());
                continue;
            }
            if (!q) {
                std::size_t used = 0;
                try {
                    const double v = std::stod(s, &used);
                    if (used == s.size()) {
                        row.push_back(Cell::num(v));
                        continue;
                    }
                } catch (const std::exception&) {
                }
            }
            row.push_back(Cell::str(s));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

/// Writes to `path`, or to stdout when `path` is empty or "-".
inline void emit(const Table& t, OutputFormat f, const std::string& path)
{
    const std::string text = render(t, f);
    if (path.empty() || path == "-") {
        std::fwrite(text.data(), 1, text.size(), stdout);
        std::fflush(stdout);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot write output '" + path + "'");
    out << text;
    out.flush();
    require(static_cast<bool>(out), "failed writing output '" + path + "'");
}

// ---------------------------------------------------------------- run / sweep

/// Outcome of one sweep point.
struct PointResult {
    double sweep_value = 0.0;
    RateReport report;
    double P_S_cap_w = 0.0;
    std::optional<double> lambda_star;
};

inline PointResult evaluate_point(const ExperimentSpec& point, double sweep_value)
{
    PointResult r;
    r.sweep_value = sweep_value;
    const Deployment d = build_deployment(point);
    r.report = evaluate(point, d);
    r.P_S_cap_w = d.alloc.P_S * d.cfg.noise_power;
    if (d.maxmin) r.lambda_star = d.maxmin->lambda_star;
    return r;
}

/// Evaluates every sweep point on a worker pool; results come back in
/// grid order. The first failing point (by index) is rethrown with context.
inline std::vector<PointResult> evaluate_grid(const ExperimentSpec& s, unsigned threads = 0)
{
    s.validate();
    const std::vector<double> grid = s.sweep_var == SweepVar::none ? std::vector<double>{0.0} : s.sweep_values;
    std::vector<PointResult> out(grid.size());
    std::vector<std::exception_ptr> errors(grid.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < grid.size(); i = next++) {
            try {
                out[i] = evaluate_point(s.at(grid[i]), grid[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    unsigned T = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
    T = static_cast<unsigned>(std::min<std::size_t>(T, grid.size()));
    std::vector<std::thread> pool;
    for (unsigned i = 1; i < T; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!errors[i]) continue;
        try {
            std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
            const std::string where = s.sweep_var == SweepVar::none
                                          ? std::string("base point")
                                          : std::string(to_string(s.sweep_var)) + " = " + format_number(grid[i]);
            throw std::runtime_error("evaluation failed at " + where + ": " + e.what());
        }
    }
    return out;
}

/// One row per (sweep point, user).
inline Table run(const ExperimentSpec& s, unsigned threads = 0)
{
    const auto points = evaluate_grid(s, threads);
    Table t;
    t.header = {"sweep_var", "sweep_value", "mode", "csi", "allocation", "system", "user", "sinr", "rate",
                "sum_rate_primary", "sum_rate_secondary", "P_S_cap_w", "lambda_star"};
    const bool swept = s.sweep_var != SweepVar::none;
    for (const auto& p : points) {
        auto add = [&](const char* sys, const Vector& g, const Vector& r) {
            for (Eigen::Index u = 0; u < g.size(); ++u) {
                t.rows.push_back({Cell::str(to_string(s.sweep_var)), swept ? Cell::num(p.sweep_value) : Cell::none(),
                                  Cell::str(to_string(s.mode)), Cell::str(to_string(s.csi)),
                                  Cell::str(to_string(s.allocation)), Cell::str(sys), Cell::num(static_cast<double>(u)),
                                  Cell::num(g(u)), Cell::num(r(u)), Cell::num(p.report.sum_primary),
                                  Cell::num(p.report.sum_secondary), Cell::num(p.P_S_cap_w),
                                  p.lambda_star ? Cell::num(*p.lambda_star) : Cell::none()});
            }
        };
        add("primary", p.report.gamma_P, p.report.rate_P);
        add("secondary", p.report.gamma_S, p.report.rate_S);
    }
    return t;
}

/// One summary row per sweep point. Needs a sweep variable.
inline Table sweep(const ExperimentSpec& s, unsigned threads = 0)
{
    require(s.sweep_var != SweepVar::none, "sweep needs a sweep_var");
    const auto points = evaluate_grid(s, threads);
    Table t;
    t.header = {"sweep_var", "sweep_value", "mode", "csi", "allocation", "sum_rate_primary", "sum_rate_secondary",
                "min_rate_primary", "min_rate_secondary", "mean_rate_secondary", "P_S_cap_w", "lambda_star"};
    for (const auto& p : points) {
        const auto& r = p.report;
        t.rows.push_back({Cell::str(to_string(s.sweep_var)), Cell::num(p.sweep_value), Cell::str(to_string(s.mode)),
                          Cell::str(to_string(s.csi)), Cell::str(to_string(s.allocation)), Cell::num(r.sum_primary),
                          Cell::num(r.sum_secondary), Cell::num(r.rate_P.minCoeff()), Cell::num(r.rate_S.minCoeff()),
                          Cell::num(r.rate_S.mean()), Cell::num(p.P_S_cap_w),
                          p.lambda_star ? Cell::num(*p.lambda_star) : Cell::none()});
    }
    return t;
}

// ---------------------------------------------------------------- validate

struct ValidationResult {
    MomentReport report;
    std::vector<std::string> suite; ///< suite name per row
    bool passed() const { return report.all_pass(); }
};

inline McOptions mc_options(const ExperimentSpec& s, unsigned threads = 0)
{
    McOptions o;
    o.seed = s.seed;
    o.trials = s.trials;
    o.batches = s.batches;
    o.rel_tol = s.rel_tol;
    o.stderr_band = s.stderr_band;
    o.threads = threads;
    return o;
}

inline OmaScenario oma_scenario(const ExperimentSpec& s, const Deployment& d)
{
    OmaScenario sc;
    sc.gains = d.gains;
    sc.stats = d.oma;
    sc.clusters = d.clusters;
    sc.alloc = d.alloc;
    sc.Ppd = d.Ppd;
    sc.tau_c = s.tau_c;
    sc.tau_p = s.uplink_pilots();
    sc.tau_pd = s.downlink_pilots();
    return sc;
}

inline NomaScenario noma_scenario(const ExperimentSpec& s, const Deployment& d)
{
    NomaScenario sc;
    sc.gains = d.gains;
    sc.stats = d.noma;
    sc.order = d.order;
    sc.alloc = d.alloc;
    sc.sic = d.sic;
    sc.Ppd = d.Ppd;
    sc.tau_c = s.tau_c;
    sc.tau_p = s.uplink_pilots();
    sc.tau_pd = s.downlink_pilots();
    return sc;
}

/// Runs every Monte-Carlo suite of the spec's mode at its base point.
inline ValidationResult validate(const ExperimentSpec& s, unsigned threads = 0)
{
    s.validate();
    require(s.sweep_var == SweepVar::none, "validate runs at a single point; remove the sweep");
    const Deployment d = build_deployment(s);
    const McOptions o = mc_options(s, threads);
    ValidationResult v;
    auto add = [&v](const char* suite, const MomentReport& r) {
        v.report.append(r);
        v.suite.insert(v.suite.end(), r.rows.size(), suite);
    };
    if (s.is_noma()) {
        const NomaScenario sc = noma_scenario(s, d);
        add("noma", empirical_noma(sc, o));
        add("noma_dl_pilot", empirical_noma_dl_pilot(sc, o));
    } else {
        const OmaScenario sc = oma_scenario(s, d);
        add("ul_estimation", empirical_ul_oma(sc, o));
        add("sinr", empirical_sinr_oma(sc, o));
        add("dl_pilot", empirical_dl_pilot(sc, o));
    }
    return v;
}

inline Table validation_table(const ValidationResult& v)
{
    Table t;
    t.header = {"suite", "name", "kind", "gating", "closed_form", "empirical", "std_error", "rel_dev", "tolerance",
                "pass"};
    for (std::size_t i = 0; i < v.report.rows.size(); ++i) {
        const MomentRow& r = v.report.rows[i];
        t.rows.push_back({Cell::str(v.suite[i]), Cell::str(r.name),
                          Cell::str(r.kind == CheckKind::two_sided ? "two_sided" : "upper_bound"),
                          Cell::str(r.gating ? "yes" : "no"), Cell::num(r.closed_form), Cell::num(r.empirical),
                          Cell::num(r.std_error), Cell::num(r.rel_dev), Cell::num(r.tolerance),
                          Cell::str(r.pass ? "yes" : "no")});
    }
    return t;
}

} // namespace cfss
