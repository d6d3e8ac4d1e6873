#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cfss;
namespace fs = std::filesystem;

namespace {

ExperimentSpec small_spec()
{
    ExperimentSpec s;
    s.M = s.N = 8;
    s.K = s.L = 2;
    s.noise_dbw = -40.0;
    s.trials = 20000;
    return s;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / "cfss_test_experiment";
    fs::create_directories(dir);
    return dir / name;
}

int cli(const std::string& args)
{
    const std::string cmd = std::string(CFSS_CLI_PATH) + " " + args + " 2>/dev/null";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

} // namespace

TEST(Config, RoundTripsThroughJson)
{
    ExperimentSpec s = small_spec();
    s.mode = MultipleAccess::noma;
    s.A = s.B = 2;
    s.sweep_var = SweepVar::I_T_db;
    s.sweep_values = {-10.0, 0.5, 30.0};
    s.sic_theta = 0.3;
    s.formula = FormulaVariant::as_printed;
    s.seed = 0xffffffffffULL;
    const std::string text = serialize_spec(s);
    EXPECT_EQ(parse_spec(text), s);
    EXPECT_EQ(serialize_spec(parse_spec(text)), text);
}

TEST(Config, MissingKeysKeepDefaults) { EXPECT_EQ(parse_spec("{}"), ExperimentSpec{}); }

TEST(Config, RejectsUnknownKeysAndBadTypes)
{
    EXPECT_THROW(parse_spec(R"({"bogus": 1})"), InvalidArgument);
    EXPECT_THROW(parse_spec(R"({"M": "eight"})"), InvalidArgument);
    EXPECT_THROW(parse_spec(R"({"mode": "fdma"})"), InvalidArgument);
    EXPECT_THROW(parse_spec("[1, 2]"), InvalidArgument);
    EXPECT_THROW(parse_spec("{"), InvalidArgument);
}

TEST(Config, ValidationCatchesBadCombinations)
{
    auto s = small_spec();
    s.sweep_var = SweepVar::I_T_db;
    EXPECT_THROW(s.validate(), InvalidArgument); // empty grid
    s.sweep_var = SweepVar::none;
    s.sweep_values = {1.0};
    EXPECT_THROW(s.validate(), InvalidArgument);
    s = small_spec();
    s.mode = MultipleAccess::noma;
    s.allocation = AllocationMode::maxmin;
    EXPECT_THROW(s.validate(), InvalidArgument);
    s = small_spec();
    s.sic_theta = 0.0;
    EXPECT_THROW(s.validate(), InvalidArgument);
    s = small_spec();
    s.tau_p = 3; // K + L - Q = 2 fits, but Q = 0 would need 4
    s.Q = 0;
    EXPECT_THROW(s.validate(), InvalidArgument);
    s = small_spec();
    s.trials = 0;
    EXPECT_THROW(s.validate(), InvalidArgument);
    EXPECT_NO_THROW(small_spec().validate());
}

TEST(Config, DerivedPilotCounts)
{
    auto s = small_spec();
    EXPECT_EQ(s.shared_pilots(), 2);
    EXPECT_EQ(s.uplink_pilots(), 2);
    EXPECT_EQ(s.overhead(), 2);
    s.csi = CsiMode::dlpilot;
    EXPECT_EQ(s.overhead(), 4);
    const auto c = s.system();
    EXPECT_DOUBLE_EQ(c.noise_power, 1e-4);
    EXPECT_DOUBLE_EQ(c.P_S, 0.5 * c.P_P);
}

TEST(Tables, CsvRoundTripAndHeaderFirst)
{
    Table t;
    t.header = {"name", "value", "note"};
    t.rows.push_back({Cell::str("a,b"), Cell::num(1.0 / 3.0), Cell::none()});
    t.rows.push_back({Cell::str("say \"hi\""), Cell::num(-2.5e-300), Cell::str("x")});
    const std::string csv = to_csv(t);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "name,value,note");
    const Table back = parse_csv(csv);
    EXPECT_EQ(back.header, t.header);
    ASSERT_EQ(back.rows.size(), 2u);
    EXPECT_EQ(back.rows[0][0].text, "a,b");
    EXPECT_EQ(back.rows[1][0].text, "say \"hi\"");
    EXPECT_EQ(back.rows[0][2].kind, Cell::Kind::empty);
    EXPECT_EQ(format_number(back.rows[0][1].number), format_number(1.0 / 3.0));
    EXPECT_EQ(to_csv(back), csv);
}

TEST(Tables, JsonRecordsMatchCsv)
{
    const Table t = run(small_spec());
    const auto j = Json::parse(to_json_text(t));
    const Table c = parse_csv(to_csv(t));
    ASSERT_TRUE(j.is_array());
    ASSERT_EQ(j.size(), c.rows.size());
    for (std::size_t r = 0; r < c.rows.size(); ++r)
        for (std::size_t i = 0; i < c.header.size(); ++i) {
            const auto& v = j[r][c.header[i]];
            const Cell& cell = c.rows[r][i];
            if (cell.kind == Cell::Kind::number)
                EXPECT_EQ(v.get<double>(), cell.number) << c.header[i];
            else if (cell.kind == Cell::Kind::text)
                EXPECT_EQ(v.get<std::string>(), cell.text) << c.header[i];
            else
                EXPECT_TRUE(v.is_null());
        }
}

TEST(Tables, UnwritablePathIsAnError)
{
    Table t;
    t.header = {"x"};
    EXPECT_ANY_THROW(emit(t, OutputFormat::csv, "/nonexistent-dir/out.csv"));
}

TEST(Run, OneRowPerUserAndDeterministic)
{
    const auto s = small_spec();
    const Table a = run(s, 1), b = run(s, 3);
    EXPECT_EQ(a.rows.size(), 4u);
    EXPECT_EQ(to_csv(a), to_csv(b));
    auto s2 = s;
    s2.seed = 2;
    EXPECT_NE(to_csv(run(s2)), to_csv(a));
}

TEST(Sweep, SecondaryRateGrowsWithThreshold)
{
    auto s = small_spec();
    s.sweep_var = SweepVar::I_T_db;
    s.sweep_values = {-20.0, 0.0, 20.0, 40.0};
    const Table t = sweep(s);
    ASSERT_EQ(t.rows.size(), 4u);
    std::size_t col = 0;
    while (t.header[col] != "sum_rate_secondary") ++col;
    for (std::size_t i = 1; i < t.rows.size(); ++i) EXPECT_GE(t.rows[i][col].number, t.rows[i - 1][col].number);
    EXPECT_THROW(sweep(small_spec()), InvalidArgument);
}

TEST(Sweep, GridErrorsNameThePoint)
{
    auto s = small_spec();
    s.sweep_var = SweepVar::aps;
    s.sweep_values = {8.0, 0.5};
    try {
        sweep(s);
        FAIL() << "expected an error";
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("aps = 0.5"), std::string::npos) << e.what();
    }
}

TEST(Validate, DeskPointPassesAndZeroToleranceFails)
{
    auto s = small_spec();
    s.trials = 100000;
    const auto v = validate(s);
    EXPECT_TRUE(v.report.all_pass());
    s.rel_tol = 0.0;
    s.stderr_band = 0.0;
    s.trials = 2000;
    EXPECT_FALSE(validate(s).report.all_pass());
}

TEST(Cli, ByteIdenticalOutputs)
{
    const auto cfg = scratch("cli.json");
    write(cfg, serialize_spec(small_spec()));
    for (const std::string cmd : {"run", "validate"}) {
        const auto a = scratch(cmd + "_a.csv"), b = scratch(cmd + "_b.csv");
        // Exit status 1 only flags a failed row; the bytes are what matter here.
        ASSERT_LE(cli(cmd + " --config " + cfg.string() + " --trials 5000 --out " + a.string()), 1);
        ASSERT_LE(cli(cmd + " --config " + cfg.string() + " --trials 5000 --out " + b.string()), 1);
        EXPECT_FALSE(slurp(a).empty());
        EXPECT_EQ(slurp(a), slurp(b)) << cmd;
    }
}

TEST(Cli, ExitCodes)
{
    const auto good = scratch("good.json"), bad = scratch("bad.json"), strict = scratch("strict.json");
    auto s = small_spec();
    s.P_S_ratio = 0.0;
    write(good, serialize_spec(s));
    write(bad, R"({"M": 8, "colour": "blue"})");
    auto z = small_spec();
    z.rel_tol = 0.0;
    z.stderr_band = 0.0;
    write(strict, serialize_spec(z));
    const auto out = scratch("codes.csv").string();
    EXPECT_EQ(cli("validate --config " + good.string() + " --trials 100000 --out " + out), 0);
    EXPECT_EQ(cli("validate --config " + strict.string() + " --trials 2000 --out " + out), 1);
    EXPECT_EQ(cli("run --config " + bad.string() + " --out " + out), 2);
    EXPECT_EQ(cli("run --config " + good.string() + " --format json --out " + out), 0);
    EXPECT_TRUE(Json::parse(slurp(out)).is_array());
}
