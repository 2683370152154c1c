#pragma once

// Dataset containers and the on-disk formats they are read from.
//
//   label matrix   CSV of integers, one example per line, -1 = abstain
//   embeddings     binary "WSEMB1\0\0" | u32le n | u32le d | n*d f32le (row-major),
//                  or CSV with one example per line
//   gold labels    one integer per line
//
// None of the formats has a header row.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "wsselect/error.hpp"
#include "wsselect/matrix.hpp"

namespace wss {

inline constexpr int kAbstain = -1;

struct LabelMatrix {
    Matrix<int> values;  // n x m, entries in {-1} U [0, C)
    int num_classes = 2;

    std::size_t n() const noexcept { return values.rows(); }
    std::size_t m() const noexcept { return values.cols(); }
    int operator()(std::size_t i, std::size_t k) const { return values(i, k); }
};

struct EmbeddingMatrix {
    Matrix<float> values;  // n x d, row i is the representation of example i

    std::size_t n() const noexcept { return values.rows(); }
    std::size_t dim() const noexcept { return values.cols(); }
    std::span<const float> row(std::size_t i) const { return values.row(i); }
};

// Hard pseudolabels (kAbstain where the label model abstains) and, for label
// models that produce them, the soft distribution P(Y | labeling functions).
struct PseudoLabeling {
    std::vector<int> hard;
    std::optional<Matrix<double>> soft;  // n x C
    int num_classes = 2;

    std::size_t n() const noexcept { return hard.size(); }
    bool covered(std::size_t i) const { return hard[i] != kAbstain; }
};

struct Dataset {
    LabelMatrix labels;
    EmbeddingMatrix embeddings;
    std::optional<std::vector<int>> gold;
};

inline std::vector<std::size_t> covered_indices(const PseudoLabeling& p) {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < p.n(); ++i)
        if (p.covered(i)) ids.push_back(i);
    return ids;
}

// ---------------------------------------------------------------------------
// Validation

inline void validate(const LabelMatrix& lm) {
    if (lm.num_classes < 2) throw ParameterError("num_classes must be >= 2, got " + std::to_string(lm.num_classes));
    if (lm.n() < 1 || lm.m() < 1) throw FormatError("label matrix must have at least one row and one column");
    for (std::size_t i = 0; i < lm.n(); ++i)
        for (std::size_t k = 0; k < lm.m(); ++k) {
            const int v = lm(i, k);
            if (v != kAbstain && (v < 0 || v >= lm.num_classes))
                throw FormatError("label " + std::to_string(v) + " out of range [0," +
                                  std::to_string(lm.num_classes - 1) + "] at row " + std::to_string(i + 1) +
                                  ", column " + std::to_string(k + 1));
        }
}

inline void validate(const EmbeddingMatrix& e) {
    if (e.dim() < 1) throw FormatError("embedding dimension must be >= 1");
    if (e.n() < 1) throw FormatError("embedding matrix has no rows");
    for (std::size_t i = 0; i < e.n(); ++i)
        for (std::size_t j = 0; j < e.dim(); ++j)
            if (!std::isfinite(e.values(i, j)))
                throw FormatError("non-finite value at (" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")");
}

inline void validate(const PseudoLabeling& p, double tol = 1e-6) {
    for (std::size_t i = 0; i < p.n(); ++i) {
        const int h = p.hard[i];
        if (h != kAbstain && (h < 0 || h >= p.num_classes))
            throw FormatError("pseudolabel " + std::to_string(h) + " out of range at example " + std::to_string(i));
    }
    if (!p.soft) return;
    const auto& s = *p.soft;
    if (s.rows() != p.n() || s.cols() != static_cast<std::size_t>(p.num_classes))
        throw DimensionError("soft labels are " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()) +
                             ", expected " + std::to_string(p.n()) + "x" + std::to_string(p.num_classes));
    for (std::size_t i = 0; i < p.n(); ++i) {
        double sum = 0.0;
        std::size_t best = 0;
        for (std::size_t y = 0; y < s.cols(); ++y) {
            if (!(s(i, y) >= 0.0)) throw FormatError("negative soft label at example " + std::to_string(i));
            sum += s(i, y);
            if (s(i, y) > s(i, best)) best = y;
        }
        if (std::abs(sum - 1.0) > tol)
            throw FormatError("soft label row " + std::to_string(i) + " sums to " + std::to_string(sum) +
                              ", not normalized");
        if (p.hard[i] != kAbstain && static_cast<std::size_t>(p.hard[i]) != best)
            throw FormatError("hard label at example " + std::to_string(i) + " is not the argmax of its soft label");
    }
}

inline void validate_dataset(const Dataset& d) {
    validate(d.labels);
    validate(d.embeddings);
    if (d.labels.n() != d.embeddings.n())
        throw DimensionError("labels have " + std::to_string(d.labels.n()) + " rows but embeddings have " +
                             std::to_string(d.embeddings.n()));
    if (d.gold) {
        if (d.gold->size() != d.labels.n())
            throw DimensionError("labels have " + std::to_string(d.labels.n()) + " rows but gold has " +
                                 std::to_string(d.gold->size()));
        for (std::size_t i = 0; i < d.gold->size(); ++i) {
            const int g = (*d.gold)[i];
            if (g < 0 || g >= d.labels.num_classes)
                throw FormatError("gold label " + std::to_string(g) + " out of range at row " + std::to_string(i + 1));
        }
    }
}

inline void validate_dataset(const Dataset& d, const PseudoLabeling& p) {
    validate_dataset(d);
    if (p.n() != d.labels.n())
        throw DimensionError("labels have " + std::to_string(d.labels.n()) + " rows but pseudolabels have " +
                             std::to_string(p.n()));
    if (p.num_classes != d.labels.num_classes) throw DimensionError("pseudolabels and labels disagree on num_classes");
    validate(p);
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

// Splits text into non-empty lines; a trailing newline does not produce a row.
inline std::vector<std::string_view> lines(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        out.push_back(trim(text.substr(pos, end - pos)));
        pos = end + 1;
    }
    while (!out.empty() && out.back().empty()) out.pop_back();
    return out;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t end = line.find(',', pos);
        out.push_back(trim(line.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos)));
        if (end == std::string_view::npos) break;
        pos = end + 1;
    }
    return out;
}

template <typename T>
T parse_number(std::string_view field, std::size_t row, std::size_t col) {
    T value{};
    if (!field.empty() && field.front() == '+') field.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty())
        throw FormatError("cannot parse '" + std::string(field) + "' at row " + std::to_string(row) + ", column " +
                          std::to_string(col));
    return value;
}

// Parses comma-separated numbers into a rectangular matrix.
template <typename T>
Matrix<T> parse_csv_matrix(std::string_view text) {
    const auto rows = lines(text);
    if (rows.empty()) throw FormatError("empty CSV input");
    std::size_t width = 0;
    std::vector<T> data;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].empty()) throw FormatError("empty row " + std::to_string(r + 1));
        const auto fields = split_commas(rows[r]);
        if (r == 0) width = fields.size();
        if (fields.size() != width) throw FormatError("ragged row " + std::to_string(r + 1));
        for (std::size_t c = 0; c < fields.size(); ++c) data.push_back(parse_number<T>(fields[c], r + 1, c + 1));
    }
    return Matrix<T>(rows.size(), width, std::move(data));
}

inline constexpr std::array<char, 8> kEmbeddingMagic = {'W', 'S', 'E', 'M', 'B', '1', '\0', '\0'};

template <typename U>
U from_little_endian(const char* p) {
    std::array<unsigned char, sizeof(U)> bytes;
    std::memcpy(bytes.data(), p, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
}

template <typename U>
void to_little_endian(U value, std::string& out) {
    auto bytes = std::bit_cast<std::array<char, sizeof(U)>>(value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.append(bytes.data(), bytes.size());
}

inline void write_file(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to '" + path + "'");
}

}  // namespace detail

inline LabelMatrix parse_label_matrix(std::string_view text, int num_classes) {
    LabelMatrix lm{detail::parse_csv_matrix<int>(text), num_classes};
    validate(lm);
    return lm;
}

inline LabelMatrix load_label_matrix(const std::string& path, int num_classes) {
    return parse_label_matrix(detail::read_file(path), num_classes);
}

inline EmbeddingMatrix parse_embeddings(std::string_view bytes) {
    using detail::kEmbeddingMagic;
    EmbeddingMatrix e;
    if (bytes.size() >= kEmbeddingMagic.size() &&
        std::memcmp(bytes.data(), kEmbeddingMagic.data(), kEmbeddingMagic.size()) == 0) {
        if (bytes.size() < 16) throw FormatError("truncated embedding header");
        const auto n = detail::from_little_endian<std::uint32_t>(bytes.data() + 8);
        const auto d = detail::from_little_endian<std::uint32_t>(bytes.data() + 12);
        const std::uint64_t expected = 16 + std::uint64_t{n} * d * 4;
        if (bytes.size() < expected)
            throw FormatError("truncated embedding payload: expected " + std::to_string(expected) + " bytes, got " +
                              std::to_string(bytes.size()));
        if (bytes.size() > expected) throw FormatError("trailing bytes after embedding payload");
        std::vector<float> data(std::size_t{n} * d);
        for (std::size_t i = 0; i < data.size(); ++i)
            data[i] = detail::from_little_endian<float>(bytes.data() + 16 + 4 * i);
        e.values = Matrix<float>(n, d, std::move(data));
    } else {
        if (!bytes.empty() && bytes.front() == 'W' && bytes.substr(0, 5) == "WSEMB")
            throw FormatError("bad magic in embedding file");
        e.values = detail::parse_csv_matrix<float>(bytes);
    }
    validate(e);
    return e;
}

inline EmbeddingMatrix load_embeddings(const std::string& path) { return parse_embeddings(detail::read_file(path)); }

inline std::string serialize_embeddings(const EmbeddingMatrix& e) {
    std::string out(detail::kEmbeddingMagic.begin(), detail::kEmbeddingMagic.end());
    detail::to_little_endian(static_cast<std::uint32_t>(e.n()), out);
    detail::to_little_endian(static_cast<std::uint32_t>(e.dim()), out);
    out.reserve(out.size() + e.values.flat().size() * 4);
    for (float v : e.values.flat()) detail::to_little_endian(v, out);
    return out;
}

inline void write_embeddings(const std::string& path, const EmbeddingMatrix& e) {
    detail::write_file(path, serialize_embeddings(e));
}

inline std::vector<int> parse_gold(std::string_view text, int num_classes) {
    const auto m = detail::parse_csv_matrix<int>(text);
    if (m.cols() != 1) throw FormatError("gold file must hold one integer per line");
    std::vector<int> gold(m.storage());
    for (std::size_t i = 0; i < gold.size(); ++i)
        if (gold[i] < 0 || gold[i] >= num_classes)
            throw FormatError("gold label " + std::to_string(gold[i]) + " out of range [0," +
                              std::to_string(num_classes - 1) + "] at row " + std::to_string(i + 1));
    return gold;
}

inline std::vector<int> load_gold(const std::string& path, int num_classes) {
    return parse_gold(detail::read_file(path), num_classes);
}

inline void write_label_matrix(const std::string& path, const LabelMatrix& lm) {
    std::string out;
    for (std::size_t i = 0; i < lm.n(); ++i) {
        for (std::size_t k = 0; k < lm.m(); ++k) {
            if (k) out += ',';
            out += std::to_string(lm(i, k));
        }
        out += '\n';
    }
    detail::write_file(path, out);
}

inline void write_gold(const std::string& path, std::span<const int> gold) {
    std::string out;
    for (int g : gold) out += std::to_string(g) + '\n';
    detail::write_file(path, out);
}

}  // namespace wss
