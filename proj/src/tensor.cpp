#include "resmatch/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "resmatch/errors.hpp"
#include "resmatch/half.hpp"

namespace resmatch {

const char* precision_name(Precision p) {
    return p == Precision::full32 ? "full32" : "half16";
}

int64_t numel_of(const std::vector<int>& dims) {
    int64_t n = 1;
    for (int d : dims) n *= d;
    return n;
}

Tensor::Tensor() : st_(std::make_shared<Storage>()) {
    st_->dims = {};
    st_->f32 = {0.0f};
}

Tensor Tensor::zeros(std::vector<int> dims, Precision prec) {
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (dims[i] < 0)
            throw ShapeError("negative extent on axis " + std::to_string(i));
    }
    auto st = std::make_shared<Storage>();
    const int64_t n = numel_of(dims);
    st->dims = std::move(dims);
    st->prec = prec;
    if (prec == Precision::full32)
        st->f32.assign(static_cast<std::size_t>(n), 0.0f);
    else
        st->f16.assign(static_cast<std::size_t>(n), 0);
    return Tensor(std::move(st));
}

Tensor Tensor::full(std::vector<int> dims, float value, Precision prec) {
    Tensor t = zeros(std::move(dims), prec);
    for (int64_t i = 0; i < t.numel(); ++i) t.set(i, value);
    return t;
}

Tensor Tensor::scalar(float value) { return from({}, {value}); }

Tensor Tensor::from(std::vector<int> dims, std::vector<float> values) {
    if (numel_of(dims) != static_cast<int64_t>(values.size()))
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match dims product " + std::to_string(numel_of(dims)));
    auto st = std::make_shared<Storage>();
    st->dims = std::move(dims);
    st->prec = Precision::full32;
    st->f32 = std::move(values);
    return Tensor(std::move(st));
}

Tensor Tensor::from_half_bits(std::vector<int> dims, std::vector<uint16_t> bits) {
    if (numel_of(dims) != static_cast<int64_t>(bits.size()))
        throw ShapeError("value count " + std::to_string(bits.size()) +
                         " does not match dims product " + std::to_string(numel_of(dims)));
    auto st = std::make_shared<Storage>();
    st->dims = std::move(dims);
    st->prec = Precision::half16;
    st->f16 = std::move(bits);
    return Tensor(std::move(st));
}

int Tensor::dim(int i) const {
    if (i < 0 || i >= ndim())
        throw ShapeError("axis " + std::to_string(i) + " out of range for " + shape_string());
    return st_->dims[static_cast<std::size_t>(i)];
}

int64_t Tensor::numel() const { return numel_of(st_->dims); }

std::size_t Tensor::byte_size() const {
    return static_cast<std::size_t>(numel()) * (st_->prec == Precision::full32 ? 4u : 2u);
}

float Tensor::at(int64_t i) const {
    if (st_->prec == Precision::full32) return st_->f32[static_cast<std::size_t>(i)];
    return half_bits_to_float(st_->f16[static_cast<std::size_t>(i)]);
}

void Tensor::set(int64_t i, float v) {
    if (st_->prec == Precision::full32)
        st_->f32[static_cast<std::size_t>(i)] = v;
    else
        st_->f16[static_cast<std::size_t>(i)] = float_to_half_bits(v);
}

int64_t Tensor::index4(int n, int c, int h, int w) const {
    const auto& d = st_->dims;
    if (d.size() != 4) throw ShapeError("index4 on non-4d tensor " + shape_string());
    return ((static_cast<int64_t>(n) * d[1] + c) * d[2] + h) * d[3] + w;
}

float Tensor::at4(int n, int c, int h, int w) const { return at(index4(n, c, h, w)); }

std::span<float> Tensor::f32() {
    if (st_->prec != Precision::full32)
        throw ShapeError("raw float access to a half16 tensor");
    return {st_->f32.data(), st_->f32.size()};
}

std::span<const float> Tensor::f32() const {
    if (st_->prec != Precision::full32)
        throw ShapeError("raw float access to a half16 tensor");
    return {st_->f32.data(), st_->f32.size()};
}

std::span<const uint16_t> Tensor::f16() const {
    if (st_->prec != Precision::half16)
        throw ShapeError("raw half access to a full32 tensor");
    return {st_->f16.data(), st_->f16.size()};
}

std::vector<float> Tensor::to_vector() const {
    std::vector<float> out(static_cast<std::size_t>(numel()));
    for (int64_t i = 0; i < numel(); ++i) out[static_cast<std::size_t>(i)] = at(i);
    return out;
}

Tensor Tensor::clone() const {
    auto st = std::make_shared<Storage>();
    st->dims = st_->dims;
    st->prec = st_->prec;
    st->f32 = st_->f32;
    st->f16 = st_->f16;
    return Tensor(std::move(st));
}

Tensor Tensor::cast(Precision target) const {
    Tensor out = zeros(st_->dims, target);
    if (target == st_->prec) {
        out.st_->f32 = st_->f32;
        out.st_->f16 = st_->f16;
        return out;
    }
    for (int64_t i = 0; i < numel(); ++i) out.set(i, at(i));
    return out;
}

Tensor Tensor::reshaped(std::vector<int> dims) const {
    if (numel_of(dims) != numel())
        throw ShapeError("reshape from " + shape_string() + " changes element count");
    Tensor out = clone();
    out.st_->dims = std::move(dims);
    return out;
}

std::vector<float>& Tensor::grad() {
    if (!st_->grad)
        st_->grad = std::make_unique<std::vector<float>>(static_cast<std::size_t>(numel()), 0.0f);
    return *st_->grad;
}

const std::vector<float>& Tensor::grad_const() const {
    if (!st_->grad) throw ContractError("tensor has no gradient");
    return *st_->grad;
}

void Tensor::zero_grad() {
    if (st_->grad) std::fill(st_->grad->begin(), st_->grad->end(), 0.0f);
}

void Tensor::drop_grad() { st_->grad.reset(); }

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < st_->dims.size(); ++i) {
        if (i) os << ",";
        os << st_->dims[i];
    }
    os << "]";
    return os.str();
}

bool all_finite(const Tensor& t) {
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(t.at(i))) return false;
    return true;
}

// ---------------------------------------------------------------------------
// FDRT file format

namespace {

void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

constexpr uint32_t kFdrtVersion = 1;

}  // namespace

void save_fdrt(const Tensor& t, const std::filesystem::path& path) {
    std::string header = "FDRT";
    put_u32(header, kFdrtVersion);
    header.push_back(static_cast<char>(t.precision()));
    header.push_back(static_cast<char>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) put_u32(header, static_cast<uint32_t>(t.dim(i)));

    std::string payload;
    if (t.precision() == Precision::full32) {
        payload.reserve(static_cast<std::size_t>(t.numel()) * 4);
        for (float v : t.f32()) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(payload, bits);
        }
    } else {
        payload.reserve(static_cast<std::size_t>(t.numel()) * 2);
        for (uint16_t v : t.f16()) {
            payload.push_back(static_cast<char>(v & 0xff));
            payload.push_back(static_cast<char>((v >> 8) & 0xff));
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write tensor file: " + path.string());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("short write to tensor file: " + path.string());
}

Tensor load_fdrt(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tensor file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());

    std::size_t off = 0;
    auto need = [&](std::size_t n, const char* what) {
        if (bytes.size() - off < n)
            throw FormatError(std::string("truncated tensor file (") + what + "): " + path.string(),
                              off);
    };
    need(4, "magic");
    if (std::memcmp(bytes.data(), "FDRT", 4) != 0)
        throw FormatError("bad magic in tensor file: " + path.string(), 0);
    off = 4;
    need(4, "version");
    uint32_t version = get_u32(bytes.data() + off);
    off += 4;
    if (version != kFdrtVersion)
        throw FormatError("unsupported tensor file version " + std::to_string(version), 4);
    need(2, "dtype/ndim");
    uint8_t dtype = bytes[off++];
    uint8_t ndim = bytes[off++];
    if (dtype > 1) throw FormatError("unknown dtype tag " + std::to_string(dtype), off - 2);
    std::vector<int> dims(ndim);
    for (int i = 0; i < ndim; ++i) {
        need(4, "dims");
        dims[static_cast<std::size_t>(i)] = static_cast<int>(get_u32(bytes.data() + off));
        off += 4;
    }
    const Precision prec = static_cast<Precision>(dtype);
    const int64_t n = numel_of(dims);
    const std::size_t elem = prec == Precision::full32 ? 4 : 2;
    const std::size_t want = static_cast<std::size_t>(n) * elem;
    if (bytes.size() - off != want)
        throw FormatError("payload size mismatch in tensor file: " + path.string(), off);
    if (prec == Precision::full32) {
        std::vector<float> values(static_cast<std::size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            uint32_t bits = get_u32(bytes.data() + off + static_cast<std::size_t>(i) * 4);
            std::memcpy(&values[static_cast<std::size_t>(i)], &bits, 4);
        }
        return Tensor::from(dims, std::move(values));
    }
    std::vector<uint16_t> halves(static_cast<std::size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const unsigned char* p = bytes.data() + off + static_cast<std::size_t>(i) * 2;
        halves[static_cast<std::size_t>(i)] = static_cast<uint16_t>(p[0] | (p[1] << 8));
    }
    return Tensor::from_half_bits(dims, std::move(halves));
}

}  // namespace resmatch
