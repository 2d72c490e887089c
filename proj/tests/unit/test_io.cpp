#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "pvga/commands.hpp"
#include "pvga/config.hpp"
#include "pvga/io.hpp"
#include "test_util.hpp"

namespace pvga {
namespace {

using testing::expect_error;
using testing::random_matrix;

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "pvga_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// ------------------------------------------------------------------ numbers

TEST(FormatDouble, SeventeenDigitsRoundTripExactly) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int k = 0; k < 1000; ++k) {
    const double v = u(rng) * std::pow(10.0, static_cast<double>(k % 40) - 20.0);
    EXPECT_EQ(io::parse_double(io::format_double(v)), v);
  }
  EXPECT_EQ(io::format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(io::parse_double(io::format_double(std::numeric_limits<double>::denorm_min())),
            std::numeric_limits<double>::denorm_min());
}

TEST(ParseDouble, RejectsGarbage) {
  expect_error(ErrorKind::InvalidData, [] { io::parse_double("abc"); });
  expect_error(ErrorKind::InvalidData, [] { io::parse_double("1.5x"); });
  expect_error(ErrorKind::InvalidData, [] { io::parse_double(""); });
}

// ------------------------------------------------------------------ CSV

TEST(Csv, HeaderCommentNamesColumnsAndVersion) {
  const io::CsvTable t = io::vector_table("mean", "mean", Vector::Constant(2, 0.5));
  EXPECT_EQ(t.str(), "# pvga mean v1: index,mean\nindex,mean\n0,0.5\n1,0.5\n");
}

TEST(Csv, RoundTripIsBitExact) {
  std::mt19937_64 rng(9);
  const Vector v = testing::random_vector(50, rng, 3.0);
  const io::CsvTable parsed = io::parse_csv(io::vector_table("x", "value", v).str());
  EXPECT_EQ(parsed.name, "x");
  ASSERT_EQ(parsed.rows.size(), 50u);
  const Vector back = io::column(parsed, "value");
  for (Index i = 0; i < 50; ++i) EXPECT_EQ(back(i), v(i));
}

TEST(Csv, MaskedTableListsOnlyPatternEntries) {
  const SparsityMask mask = SparsityMask::banded(5, 3);
  Matrix c = Matrix::Constant(5, 5, 2.0);
  const io::CsvTable t = io::masked_table("cov_masked", c, mask);
  EXPECT_EQ(t.rows.size(), 13u);
  for (const auto& r : t.rows) EXPECT_LE(std::abs(std::stoi(r[0]) - std::stoi(r[1])), 1);
}

TEST(Csv, RejectsRaggedRowsAndMissingColumns) {
  expect_error(ErrorKind::InvalidData, [] { io::parse_csv("a,b\n1,2\n3\n"); });
  expect_error(ErrorKind::InvalidData, [] { io::parse_csv("# only a comment\n"); });
  expect_error(ErrorKind::InvalidData, [] { io::column(io::parse_csv("a,b\n1,2\n"), "c"); });
  io::CsvTable t{"t", {"a", "b"}, {}};
  expect_error(ErrorKind::DimensionMismatch, [&] { t.add_row({"1"}); });
}

// ------------------------------------------------------------------ VGAM

TEST(Vgam, RoundTripIsBitExact) {
  std::mt19937_64 rng(2);
  Matrix a = random_matrix(7, 3, rng);
  a(0, 0) = -0.0;
  a(1, 1) = std::numeric_limits<double>::infinity();
  const Matrix b = io::decode_vgam(io::encode_vgam(a));
  ASSERT_EQ(b.rows(), 7);
  ASSERT_EQ(b.cols(), 3);
  for (Index i = 0; i < 7; ++i)
    for (Index j = 0; j < 3; ++j) EXPECT_EQ(std::bit_cast<std::uint64_t>(b(i, j)), std::bit_cast<std::uint64_t>(a(i, j)));
  const auto path = scratch("m.vgam");
  io::write_vgam(path, a);
  EXPECT_EQ(io::read_vgam(path), b);
}

TEST(Vgam, LayoutIsMagicVersionSizesThenRowMajorLittleEndian) {
  Matrix a(1, 2);
  a << 1.0, -2.0;
  const std::string s = io::encode_vgam(a);
  ASSERT_EQ(s.size(), 4u + 1u + 16u + 16u);
  EXPECT_EQ(s.substr(0, 4), "VGAM");
  EXPECT_EQ(s[4], 1);
  EXPECT_EQ(s[5], 1);   // rows, low byte first
  EXPECT_EQ(s[13], 2);  // cols
  // 1.0 = 0x3FF0000000000000, -2.0 = 0xC000000000000000
  EXPECT_EQ(static_cast<unsigned char>(s[21 + 7]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(s[21 + 6]), 0xF0);
  EXPECT_EQ(static_cast<unsigned char>(s[29 + 7]), 0xC0);
}

TEST(Vgam, RejectsCorruptInput) {
  std::string s = io::encode_vgam(Matrix::Identity(2, 2));
  expect_error(ErrorKind::InvalidData, [&] { io::decode_vgam("VGA"); });
  expect_error(ErrorKind::InvalidData, [&] { io::decode_vgam("XGAM" + s.substr(4)); });
  std::string wrong_version = s;
  wrong_version[4] = 9;
  expect_error(ErrorKind::InvalidData, [&] { io::decode_vgam(wrong_version); });
  expect_error(ErrorKind::InvalidData, [&] { io::decode_vgam(s.substr(0, s.size() - 1)); });
  std::string huge = s;
  huge[12] = 0x7F;  // absurd row count must not allocate
  expect_error(ErrorKind::InvalidData, [&] { io::decode_vgam(huge); });
}

TEST(Files, MissingFileIsIoError) {
  expect_error(ErrorKind::Io, [] { io::read_text("/nonexistent/dir/file"); });
  EXPECT_TRUE(Error(ErrorKind::Io, "x").is_usage_error());
}

// ------------------------------------------------------------------ config

RunConfig nondefault_config() {
  RunConfig c;
  c.seed = 18446744073709551615ull;
  c.problem.name = "blur2d";
  c.problem.size = 32;
  c.problem.rate_scale = 0.1;
  c.prior.kind = "H1_2D";
  c.prior.alpha = 1.0 / 3.0;
  c.prior.hierarchical = true;
  c.solver.mode = "lowrank_sparse";
  c.solver.rank = 123;
  c.solver.mask = "grid";
  c.solver.pcg_tol = 1e-300;
  c.mcmc.save_chain = true;
  c.bench.ranks = {3, 1, 4};
  c.bench.sparsities = {};
  c.output.dir = "some dir/with space";
  c.output.binary = false;
  return c;
}

TEST(Config, SerializeThenParseIsIdentity) {
  for (const RunConfig& c : {RunConfig{}, nondefault_config()}) {
    const std::string text = serialize(c);
    const RunConfig back = parse_config(text);
    EXPECT_EQ(back, c);
    EXPECT_EQ(serialize(back), text);
  }
}

TEST(Config, SerializedFormIsVersionedKeyValue) {
  const std::string text = serialize(RunConfig{});
  EXPECT_EQ(text.rfind("# pvga run config v1\n", 0), 0u);
  EXPECT_NE(text.find("\nprior.alpha = 10\n"), std::string::npos);
  EXPECT_NE(text.find("\nsolver.rank = none\n"), std::string::npos);
  EXPECT_NE(text.find("\nbench.ranks = 2,4,6,8,10,20\n"), std::string::npos);
}

TEST(Config, SectionsCommentsAndDottedKeysMix) {
  const RunConfig c = parse_config(
      "seed = 5  # trailing comment\n"
      "[problem]\nname = heat\nsize = 64\n"
      "[solver]\nrank = 7\n\n"
      "[]\nprior.kind = H1\n");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.problem.name, "heat");
  EXPECT_EQ(c.problem.size, 64);
  EXPECT_EQ(c.solver.rank, Index{7});
  EXPECT_EQ(c.prior.kind, "H1");
}

TEST(Config, JsonInputMatchesFlatText) {
  const RunConfig a = parse_config(
      R"({"seed": 9, "problem": {"name": "foxgood", "rate_scale": 2.5},
          "solver": {"rank": null, "line_search": false}, "bench": {"ranks": [1, 2]}})");
  const RunConfig b = parse_config(
      "seed = 9\nproblem.name = foxgood\nproblem.rate_scale = 2.5\nsolver.line_search = false\nbench.ranks = 1,2\n");
  EXPECT_EQ(a, b);
}

TEST(Config, BadInputIsInvalidConfig) {
  expect_error(ErrorKind::InvalidConfig, [] { parse_config("nosuch = 1\n"); });
  expect_error(ErrorKind::InvalidConfig, [] { parse_config("problem.size = ten\n"); });
  expect_error(ErrorKind::InvalidConfig, [] { parse_config("problem.size = 10.5\n"); });
  expect_error(ErrorKind::InvalidConfig, [] { parse_config("seed = -1\n"); });
  expect_error(ErrorKind::InvalidConfig, [] { parse_config("solver.line_search = maybe\n"); });
  expect_error(ErrorKind::InvalidConfig, [] { parse_config("just words\n"); });
  expect_error(ErrorKind::InvalidConfig, [] { parse_config("[solver\n"); });
  expect_error(ErrorKind::InvalidConfig, [] { parse_config("{\"seed\": }"); });
  expect_error(ErrorKind::InvalidConfig, [] { parse_config("{\"bench\": {\"ranks\": [\"a\"]}}"); });
}

TEST(Config, GetAndSetByKey) {
  RunConfig c;
  set_config_value(c, "prior.alpha", "2.5");
  EXPECT_EQ(get_config_value(c, "prior.alpha"), "2.5");
  expect_error(ErrorKind::InvalidConfig, [&] { get_config_value(c, "prior.beta"); });
  expect_error(ErrorKind::InvalidConfig, [&] { set_config_value(c, "output.dir", "a#b"); });
}

// ------------------------------------------------------------------ assembly

TEST(Assemble, SeedsAreIndependentSubstreams) {
  RunConfig c;
  c.problem.size = 40;
  const Assembled a = assemble(c);
  c.seed = 2;
  const Assembled b = assemble(c);
  EXPECT_NE(a.data.counts(), b.data.counts());
  EXPECT_EQ(a.problem.x_true, b.problem.x_true);
  EXPECT_NE(a.vga.rsvd.seed, b.vga.rsvd.seed);
  EXPECT_NE(substream_seed(1, "data"), substream_seed(1, "rsvd"));
}

TEST(Assemble, ModesAndMasks) {
  RunConfig c;
  c.problem.size = 40;
  c.solver.mode = "lowrank_sparse";
  c.solver.rank = 5;
  const Assembled a = assemble(c);
  EXPECT_EQ(a.vga.mode, VgaMode::LowRankSparse);
  ASSERT_TRUE(a.vga.mask.has_value());
  EXPECT_TRUE(a.vga.mask->contains(0, 0));
  EXPECT_FALSE(a.vga.mask->contains(0, 2));

  c.solver.mode = "auto";
  c.solver.rank.reset();
  EXPECT_EQ(assemble(c).vga.mode, VgaMode::Dense);

  c.solver.mode = "lowrank";
  expect_error(ErrorKind::InvalidConfig, [&] { assemble(c); });
  c.solver.mode = "dense";
  c.solver.mask = "grid";
  expect_error(ErrorKind::InvalidConfig, [&] { assemble(c); });
  c.solver.mask = "none";
  c.prior.kind = "H2";
  expect_error(ErrorKind::InvalidConfig, [&] { assemble(c); });
  c.prior.kind = "L2";
  c.problem.name = "nosuch";
  expect_error(ErrorKind::UnknownProblem, [&] { assemble(c); });
}

TEST(Commands, SolveWritesArtifactsAndReportsNonConvergence) {
  RunConfig c;
  c.problem.size = 40;
  c.output.dir = scratch("solve").string();
  std::filesystem::remove_all(c.output.dir);
  EXPECT_EQ(cmd_solve(c), ExitCode::Success);
  const auto dir = std::filesystem::path(c.output.dir);
  EXPECT_EQ(parse_config(io::read_text(dir / "config.txt")), c);
  const Vector mean = io::column(io::parse_csv(io::read_text(dir / "mean.csv")), "mean");
  const Matrix cov = io::read_vgam(dir / "cov.vgam");
  const Assembled as = assemble(c);
  const VgaResult r = run_vga(as.problem.a, as.data, as.prior, as.vga);
  EXPECT_EQ(mean, r.state.mean);
  EXPECT_EQ(cov, r.state.cov);
  const auto report = io::Json::parse(io::read_text(dir / "report.json"));
  EXPECT_TRUE(report["solver"]["converged"].get<bool>());

  c.solver.max_outer = 1;
  EXPECT_EQ(cmd_solve(c), ExitCode::SolverFailure);
}

TEST(Commands, BenchRowsMatchSweepPoints) {
  RunConfig c;
  c.problem.size = 32;
  c.bench.sparsities = {1, 2, 3, 4};
  c.output.dir = scratch("bench").string();
  EXPECT_EQ(cmd_bench(c, Study::Sparsity), ExitCode::Success);
  const io::CsvTable t = io::parse_csv(io::read_text(std::filesystem::path(c.output.dir) / "sparsity.csv"));
  EXPECT_EQ(t.rows.size(), 4u);
  const Vector e = io::column(t, "e_mean");
  EXPECT_GT(e(0), e(3));
  expect_error(ErrorKind::InvalidConfig, [] { parse_study("svd"); });
}

}  // namespace
}  // namespace pvga
