#include "rpgssm/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

namespace rpgssm::tensor_file {

namespace {

constexpr char kMagic[4] = {'R', 'P', 'G', 'T'};
constexpr std::uint16_t kVersion = 1;

template <typename U>
void put_le(std::ostream& out, U v) {
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const char* what) {
    unsigned char buf[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) {
        throw IoError(std::string("RPGT: truncated stream while reading ") + what);
    }
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

std::size_t dtype_size(DType d) { return d == DType::f64 ? 8 : 4; }

}  // namespace

std::uint64_t Tensor::element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) {
        if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
            throw IoError("RPGT: dimension product overflows");
        }
        n *= d;
    }
    return n;
}

void write(std::ostream& out, const Tensor& t) {
    if (t.element_count() != t.values.size()) {
        throw std::invalid_argument("RPGT: value count does not match the dimensions");
    }
    if (t.dims.size() > std::numeric_limits<std::uint32_t>::max()) throw std::invalid_argument("RPGT: too many dims");
    out.write(kMagic, 4);
    put_le<std::uint16_t>(out, kVersion);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put_le<std::uint8_t>(out, 0);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
    for (std::uint64_t d : t.dims) put_le<std::uint64_t>(out, d);
    for (double v : t.values) {
        if (t.dtype == DType::f64) {
            put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        } else {
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        }
    }
    if (!out) throw IoError("RPGT: write failed");
}

Tensor read(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4)) throw IoError("RPGT: truncated stream while reading magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw IoError("RPGT: bad magic, not an RPGT file");
    const auto version = get_le<std::uint16_t>(in, "version");
    if (version != kVersion) throw IoError("RPGT: unsupported version " + std::to_string(version));
    const auto dtype = get_le<std::uint8_t>(in, "dtype");
    if (dtype > 1) throw IoError("RPGT: unknown dtype " + std::to_string(dtype));
    get_le<std::uint8_t>(in, "reserved");
    const auto ndim = get_le<std::uint32_t>(in, "ndim");
    if (ndim > 64) throw IoError("RPGT: implausible ndim " + std::to_string(ndim));

    Tensor t;
    t.dtype = static_cast<DType>(dtype);
    for (std::uint32_t i = 0; i < ndim; ++i) t.dims.push_back(get_le<std::uint64_t>(in, "dims"));
    const std::uint64_t count = t.element_count();

    // Refuse to allocate more than the stream can hold.
    const auto here = in.tellg();
    if (here != std::streampos(-1)) {
        in.seekg(0, std::ios::end);
        const auto end = in.tellg();
        in.seekg(here);
        const auto remaining = static_cast<std::uint64_t>(end - here);
        if (count > remaining / dtype_size(t.dtype)) {
            throw IoError("RPGT: payload shorter than the " + std::to_string(count) + " elements the dims require");
        }
    }
    t.values.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        if (t.dtype == DType::f64) {
            t.values[i] = std::bit_cast<double>(get_le<std::uint64_t>(in, "payload"));
        } else {
            t.values[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in, "payload")));
        }
    }
    return t;
}

void write_file(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write(out, t);
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
}

Tensor read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    Tensor t = read(in);
    if (in.peek() != std::char_traits<char>::eof()) {
        throw IoError(path.string() + ": payload longer than the dims require");
    }
    return t;
}

Tensor from_matrix(const Matrix& m, DType dtype) {
    Tensor t;
    t.dtype = dtype;
    t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    t.values.resize(static_cast<std::size_t>(m.size()));
    Eigen::Map<RowMatrix>(t.values.data(), m.rows(), m.cols()) = m;
    return t;
}

Tensor from_sequences(const SequenceArray& s, DType dtype) {
    Tensor t = from_matrix(s.rows, dtype);
    t.dims = {static_cast<std::uint64_t>(s.sequences), static_cast<std::uint64_t>(s.steps),
              static_cast<std::uint64_t>(s.width())};
    return t;
}

Matrix to_matrix(const Tensor& t) {
    if (t.dims.size() != 2) throw ShapeMismatch("expected a 2-d tensor, got " + std::to_string(t.dims.size()) + "-d");
    const auto r = static_cast<Eigen::Index>(t.dims[0]);
    const auto c = static_cast<Eigen::Index>(t.dims[1]);
    return Eigen::Map<const RowMatrix>(t.values.data(), r, c);
}

SequenceArray to_sequences(const Tensor& t) {
    if (t.dims.size() != 3) throw ShapeMismatch("expected a 3-d tensor, got " + std::to_string(t.dims.size()) + "-d");
    const auto n = static_cast<Eigen::Index>(t.dims[0]);
    const auto steps = static_cast<Eigen::Index>(t.dims[1]);
    const auto w = static_cast<Eigen::Index>(t.dims[2]);
    return SequenceArray(n, steps, Matrix(Eigen::Map<const RowMatrix>(t.values.data(), n * steps, w)));
}

}  // namespace rpgssm::tensor_file
