#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace resmatch {

enum class Precision : uint8_t { full32 = 0, half16 = 1 };

const char* precision_name(Precision p);

// Dense N-dimensional array with a precision tag and an optional gradient
// slot. Images use (N, C, H, W) order.
//
// A Tensor is a handle: copies share storage (and the grad slot), clone()
// deep-copies. half16 tensors store raw binary16 bits, so every held value
// is exactly representable in binary16 and byte_size() reflects the real
// footprint. Gradients are always full32 and are never narrowed.
class Tensor {
public:
    Tensor();  // empty 0-d placeholder

    static Tensor zeros(std::vector<int> dims, Precision prec = Precision::full32);
    static Tensor full(std::vector<int> dims, float value, Precision prec = Precision::full32);
    static Tensor scalar(float value);
    static Tensor from(std::vector<int> dims, std::vector<float> values);
    static Tensor from_half_bits(std::vector<int> dims, std::vector<uint16_t> bits);

    const std::vector<int>& dims() const { return st_->dims; }
    int dim(int i) const;
    int ndim() const { return static_cast<int>(st_->dims.size()); }
    int64_t numel() const;
    Precision precision() const { return st_->prec; }
    std::size_t byte_size() const;  // payload bytes, excluding grad

    bool defined() const { return static_cast<bool>(st_); }
    bool same_storage(const Tensor& other) const { return st_ == other.st_; }

    // Element access. Reads widen half16 exactly; writes narrow with
    // round-to-nearest-even when the tensor is half16.
    float at(int64_t i) const;
    void set(int64_t i, float v);
    float at4(int n, int c, int h, int w) const;
    int64_t index4(int n, int c, int h, int w) const;

    // Raw full32 buffer; throws ShapeError on a half16 tensor.
    std::span<float> f32();
    std::span<const float> f32() const;
    std::span<const uint16_t> f16() const;

    std::vector<float> to_vector() const;  // widened copy

    Tensor clone() const;                // deep copy of values (grad not copied)
    Tensor cast(Precision target) const; // RNE narrowing / exact widening
    Tensor reshaped(std::vector<int> dims) const;  // deep copy with new dims

    // Gradient slot (full32, same shape). grad() allocates zeros on first
    // use; accumulation semantics are up to the caller.
    bool has_grad() const { return static_cast<bool>(st_->grad); }
    std::vector<float>& grad();
    const std::vector<float>& grad_const() const;
    void zero_grad();
    void drop_grad();

    std::string shape_string() const;

private:
    struct Storage {
        std::vector<int> dims;
        Precision prec = Precision::full32;
        std::vector<float> f32;
        std::vector<uint16_t> f16;
        std::unique_ptr<std::vector<float>> grad;
    };
    explicit Tensor(std::shared_ptr<Storage> st) : st_(std::move(st)) {}
    std::shared_ptr<Storage> st_;
};

int64_t numel_of(const std::vector<int>& dims);
bool all_finite(const Tensor& t);

// Portable tensor file ("FDRT"): magic, version u32, dtype u8, ndim u8,
// dims u32 little-endian, then the raw little-endian payload.
void save_fdrt(const Tensor& t, const std::filesystem::path& path);
Tensor load_fdrt(const std::filesystem::path& path);

}  // namespace resmatch
