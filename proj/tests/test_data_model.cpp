#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "wsselect/data_model.hpp"

using namespace wss;

namespace {

template <typename E, typename F>
void expect_error(F&& f, const std::string& fragment) {
    try {
        f();
        FAIL() << "expected an error containing '" << fragment << "'";
    } catch (const E& e) {
        EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
}

std::string binary_header(std::uint32_t n, std::uint32_t d) {
    std::string s("WSEMB1\0\0", 8);
    for (std::uint32_t v : {n, d})
        for (int b = 0; b < 4; ++b) s.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
    return s;
}

void append_float(std::string& s, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int b = 0; b < 4; ++b) s.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

}  // namespace

TEST(LabelMatrixParse, KeepsAbstainSentinel) {
    const auto lm = parse_label_matrix("1,-1\n0,0\n", 2);
    ASSERT_EQ(lm.n(), 2u);
    ASSERT_EQ(lm.m(), 2u);
    EXPECT_EQ(lm(0, 0), 1);
    EXPECT_EQ(lm(0, 1), kAbstain);
    EXPECT_EQ(lm(1, 0), 0);
    EXPECT_EQ(lm(1, 1), 0);
}

TEST(LabelMatrixParse, OutOfRangeLabel) {
    expect_error<FormatError>([] { parse_label_matrix("2,0\n", 2); }, "label 2 out of range [0,1]");
}

TEST(LabelMatrixParse, RaggedRow) {
    expect_error<FormatError>([] { parse_label_matrix("1\n0,1\n", 2); }, "ragged row 2");
}

TEST(LabelMatrixParse, GarbageNamesRowAndColumn) {
    expect_error<FormatError>([] { parse_label_matrix("0,1\n1,x\n", 2); }, "row 2, column 2");
    expect_error<FormatError>([] { parse_label_matrix("0,1.5\n", 2); }, "cannot parse");
}

TEST(LabelMatrixParse, NegativeOtherThanAbstainRejected) {
    expect_error<FormatError>([] { parse_label_matrix("-2\n", 2); }, "out of range");
}

TEST(LabelMatrixParse, ToleratesCrlfAndMissingTrailingNewline) {
    const auto lm = parse_label_matrix("1,0\r\n0,-1", 2);
    EXPECT_EQ(lm.n(), 2u);
    EXPECT_EQ(lm(1, 1), kAbstain);
}

TEST(LabelMatrixParse, EmptyInput) { EXPECT_THROW(parse_label_matrix("", 2), FormatError); }

TEST(EmbeddingParse, Binary) {
    std::string bytes = binary_header(2, 3);
    for (float f : {1.f, 2.f, 3.f, 4.f, 5.f, 6.5f}) append_float(bytes, f);
    const auto e = parse_embeddings(bytes);
    ASSERT_EQ(e.n(), 2u);
    ASSERT_EQ(e.dim(), 3u);
    EXPECT_EQ(e.values(1, 2), 6.5f);
    EXPECT_EQ(e.values(0, 1), 2.f);
}

TEST(EmbeddingParse, Csv) {
    const auto e = parse_embeddings("1.0,2.0\n3.0,4.0\n");
    ASSERT_EQ(e.n(), 2u);
    EXPECT_EQ(e.values(1, 0), 3.0f);
}

TEST(EmbeddingParse, NaNInBinaryPayload) {
    std::string bytes = binary_header(1, 2);
    append_float(bytes, 1.f);
    append_float(bytes, std::numeric_limits<float>::quiet_NaN());
    expect_error<FormatError>([&] { parse_embeddings(bytes); }, "non-finite value at (1,2)");
}

TEST(EmbeddingParse, NaNInCsv) {
    expect_error<FormatError>([] { parse_embeddings("1,nan\n"); }, "non-finite value at (1,2)");
    expect_error<FormatError>([] { parse_embeddings("inf,1\n"); }, "non-finite value at (1,1)");
}

TEST(EmbeddingParse, TruncatedPayload) {
    std::string bytes = binary_header(2, 2);
    append_float(bytes, 1.f);
    expect_error<FormatError>([&] { parse_embeddings(bytes); }, "truncated");
    expect_error<FormatError>([] { parse_embeddings(std::string("WSEMB1\0\0\1", 9)); }, "truncated");
}

TEST(EmbeddingParse, BadMagicAndTrailingBytes) {
    std::string bad = binary_header(1, 1);
    bad[5] = '2';
    append_float(bad, 1.f);
    expect_error<FormatError>([&] { parse_embeddings(bad); }, "bad magic");
    std::string extra = binary_header(1, 1);
    append_float(extra, 1.f);
    extra.push_back('x');
    expect_error<FormatError>([&] { parse_embeddings(extra); }, "trailing bytes");
}

TEST(EmbeddingParse, ZeroDimensionRejected) { EXPECT_THROW(parse_embeddings(binary_header(0, 0)), FormatError); }

TEST(EmbeddingRoundTrip, BinaryIsBitExact) {
    std::mt19937_64 rng(3);
    auto e = oracle::random_embeddings(17, 5, rng);
    e.values(3, 2) = -0.0f;
    e.values(4, 4) = std::numeric_limits<float>::denorm_min();
    e.values(5, 0) = std::numeric_limits<float>::max();
    const auto dir = oracle::temp_dir("roundtrip");
    const auto path = (dir / "e.bin").string();
    write_embeddings(path, e);
    const auto back = load_embeddings(path);
    ASSERT_EQ(back.n(), e.n());
    ASSERT_EQ(back.dim(), e.dim());
    EXPECT_EQ(std::memcmp(back.values.flat().data(), e.values.flat().data(), e.values.flat().size() * 4), 0);
    EXPECT_EQ(serialize_embeddings(back), serialize_embeddings(e));
    std::filesystem::remove_all(dir);
}

TEST(LabelFiles, RoundTrip) {
    const auto dir = oracle::temp_dir("labels");
    const auto lm = parse_label_matrix("1,-1,0\n0,0,1\n-1,-1,-1\n", 2);
    write_label_matrix((dir / "l.csv").string(), lm);
    EXPECT_EQ(load_label_matrix((dir / "l.csv").string(), 2).values, lm.values);
    const std::vector<int> gold{0, 1, 1, 0};
    write_gold((dir / "g.csv").string(), gold);
    EXPECT_EQ(load_gold((dir / "g.csv").string(), 2), gold);
    std::filesystem::remove_all(dir);
}

TEST(LabelFiles, MissingFile) { EXPECT_THROW(load_label_matrix("/nonexistent/labels.csv", 2), FormatError); }

TEST(GoldParse, Errors) {
    expect_error<FormatError>([] { parse_gold("0\n2\n", 2); }, "gold label 2 out of range [0,1] at row 2");
    expect_error<FormatError>([] { parse_gold("0,1\n", 2); }, "one integer per line");
    expect_error<FormatError>([] { parse_gold("-1\n", 2); }, "out of range");
}

TEST(ValidateDataset, MatchingSizesPass) {
    Dataset d;
    d.labels.values = Matrix<int>(10, 2, 0);
    d.embeddings.values = Matrix<float>(10, 3, 0.f);
    EXPECT_NO_THROW(validate_dataset(d));
    d.gold = std::vector<int>(10, 1);
    EXPECT_NO_THROW(validate_dataset(d));
}

TEST(ValidateDataset, DimensionMismatchNamesPair) {
    Dataset d;
    d.labels.values = Matrix<int>(10, 2, 0);
    d.embeddings.values = Matrix<float>(9, 3, 0.f);
    expect_error<DimensionError>([&] { validate_dataset(d); }, "labels have 10 rows but embeddings have 9");
    d.embeddings.values = Matrix<float>(10, 3, 0.f);
    d.gold = std::vector<int>(8, 0);
    expect_error<DimensionError>([&] { validate_dataset(d); }, "gold has 8");
}

TEST(ValidateDataset, SoftRowNotNormalized) {
    Dataset d;
    d.labels.values = Matrix<int>(2, 1, 0);
    d.embeddings.values = Matrix<float>(2, 1, 0.f);
    PseudoLabeling p;
    p.hard = {0, 1};
    p.soft = Matrix<double>(2, 2, std::vector<double>{0.6, 0.4, 0.3, 0.5});
    expect_error<FormatError>([&] { validate_dataset(d, p); }, "not normalized");
    (*p.soft)(1, 1) = 0.7;
    EXPECT_NO_THROW(validate_dataset(d, p));
}

TEST(ValidatePseudo, HardMustBeArgmaxWithLowestTieBreak) {
    PseudoLabeling p;
    p.hard = {1};
    p.soft = Matrix<double>(1, 2, std::vector<double>{0.5, 0.5});
    EXPECT_THROW(validate(p), FormatError);
    p.hard = {0};
    EXPECT_NO_THROW(validate(p));
    p.hard = {kAbstain};
    EXPECT_NO_THROW(validate(p));
}

TEST(ValidatePseudo, NegativeSoftEntry) {
    PseudoLabeling p;
    p.hard = {0};
    p.soft = Matrix<double>(1, 2, std::vector<double>{1.1, -0.1});
    EXPECT_THROW(validate(p), FormatError);
}

TEST(CoveredIndices, SkipsAbstains) {
    PseudoLabeling p;
    p.hard = {1, kAbstain, 0, kAbstain};
    EXPECT_EQ(covered_indices(p), (std::vector<std::size_t>{0, 2}));
}
