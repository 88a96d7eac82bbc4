#include "ssnet/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "ssnet/error.hpp"

namespace ssnet {

namespace {

constexpr std::array<char, 4> magic{'S', 'S', 'N', 'T'};
constexpr std::uint8_t version = 0x01;

[[noreturn]] void io_error(const std::string& what) { throw Error(ErrorCode::io_failure, what); }

void put_u32(std::ostream& os, std::uint32_t v)
{
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is)
{
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) io_error("truncated container header");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void write_header(std::ostream& os, DType dtype, const Shape& shape)
{
    if (shape.size() > 255) io_error("rank exceeds 255");
    os.write(magic.data(), magic.size());
    const char head[3] = {static_cast<char>(version), static_cast<char>(dtype), static_cast<char>(shape.size())};
    os.write(head, 3);
    for (auto d : shape) {
        if (d > 0xffffffffu) io_error("dimension exceeds u32");
        put_u32(os, static_cast<std::uint32_t>(d));
    }
}

Shape read_header(std::istream& is, DType expected)
{
    std::array<char, 4> m{};
    if (!is.read(m.data(), 4) || m != magic) io_error("missing SSNT magic");
    unsigned char head[3];
    if (!is.read(reinterpret_cast<char*>(head), 3)) io_error("truncated container header");
    if (head[0] != version) io_error("unsupported container version " + std::to_string(head[0]));
    if (head[1] != static_cast<unsigned char>(expected))
        io_error("container dtype " + std::to_string(head[1]) + " does not match requested " +
                 std::to_string(static_cast<int>(expected)));
    Shape shape(head[2]);
    for (auto& d : shape) d = get_u32(is);
    return shape;
}

std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) io_error("cannot open " + path.string() + " for writing");
    return os;
}

std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) io_error("cannot open " + path.string());
    return is;
}

// A file holds exactly one container.
template <class T>
T whole_file(const std::filesystem::path& path, T (*read)(std::istream&))
{
    auto is = open_in(path);
    T out = read(is);
    if (is.peek() != std::char_traits<char>::eof()) io_error("trailing bytes in " + path.string());
    return out;
}

} // namespace

void write_container(std::ostream& os, const Tensor& t)
{
    write_header(os, DType::float32, t.shape());
    for (float v : t.data()) put_u32(os, std::bit_cast<std::uint32_t>(v));
    if (!os) io_error("write failed");
}

void write_container(std::ostream& os, const ByteTensor& t)
{
    if (shape_numel(t.shape) != t.data.size()) throw Error(ErrorCode::shape_mismatch, "byte tensor payload size");
    write_header(os, DType::uint8, t.shape);
    os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size()));
    if (!os) io_error("write failed");
}

void write_container(const std::filesystem::path& path, const Tensor& t)
{
    auto os = open_out(path);
    write_container(os, t);
}

void write_container(const std::filesystem::path& path, const ByteTensor& t)
{
    auto os = open_out(path);
    write_container(os, t);
}

DType container_dtype(const std::filesystem::path& path)
{
    auto is = open_in(path);
    char head[7];
    if (!is.read(head, 7) || std::memcmp(head, magic.data(), 4) != 0) io_error("missing SSNT magic in " + path.string());
    return static_cast<DType>(head[5]);
}

Tensor read_float_container(std::istream& is)
{
    Shape shape = read_header(is, DType::float32);
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<float>(get_u32(is));
    return Tensor(std::move(shape), std::move(data));
}

ByteTensor read_byte_container(std::istream& is)
{
    ByteTensor t;
    t.shape = read_header(is, DType::uint8);
    t.data.resize(shape_numel(t.shape));
    if (!is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size())))
        io_error("truncated container payload");
    return t;
}

Tensor read_float_container(const std::filesystem::path& path)
{
    return whole_file<Tensor>(path, read_float_container);
}

ByteTensor read_byte_container(const std::filesystem::path& path)
{
    return whole_file<ByteTensor>(path, read_byte_container);
}

} // namespace ssnet
