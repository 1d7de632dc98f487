#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "resmatch/errors.hpp"
#include "resmatch/half.hpp"
#include "resmatch/tensor.hpp"
#include "support.hpp"

using namespace resmatch;

TEST_CASE("shape bookkeeping") {
    Tensor t = Tensor::zeros({2, 3, 4, 5});
    CHECK(t.numel() == 120);
    CHECK(t.dim(2) == 4);
    CHECK(t.byte_size() == 480);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0f, 2.0f}), ShapeError);
    CHECK_THROWS_AS(t.dim(4), ShapeError);
}

TEST_CASE("handles share storage, clone does not") {
    Tensor a = Tensor::zeros({4});
    Tensor b = a;
    b.set(0, 5.0f);
    CHECK(a.at(0) == 5.0f);
    Tensor c = a.clone();
    c.set(0, 9.0f);
    CHECK(a.at(0) == 5.0f);
    CHECK(a.same_storage(b));
    CHECK(!a.same_storage(c));
}

TEST_CASE("half16 storage quantizes on write and halves the footprint") {
    Tensor t = Tensor::zeros({8}, Precision::half16);
    t.set(0, 0.1f);
    CHECK(t.at(0) == half_round_trip(0.1f));
    CHECK(t.at(0) != 0.1f);  // 0.1 is not representable in binary16
    CHECK(t.byte_size() == 16);
    CHECK(Tensor::zeros({8}).byte_size() == 32);
}

TEST_CASE("cast narrows with RNE and widens exactly") {
    Tensor t = Tensor::from({3}, {1.0f, 2049.0f, 70000.0f});
    Tensor h = t.cast(Precision::half16);
    CHECK(h.precision() == Precision::half16);
    CHECK(h.at(0) == 1.0f);
    CHECK(h.at(1) == 2048.0f);
    CHECK(std::isinf(h.at(2)));
    Tensor back = h.cast(Precision::full32);
    CHECK(back.precision() == Precision::full32);
    CHECK(back.at(0) == 1.0f);
    CHECK(back.at(1) == 2048.0f);
}

TEST_CASE("grad slots are full32 and shared across handles") {
    Tensor t = Tensor::zeros({2, 2}, Precision::half16);
    CHECK(!t.has_grad());
    t.grad()[0] = 3.0f;
    Tensor alias = t;
    CHECK(alias.has_grad());
    CHECK(alias.grad_const()[0] == 3.0f);
    t.zero_grad();
    CHECK(alias.grad_const()[0] == 0.0f);
}

TEST_CASE("fdrt round-trips bit-exactly for both precisions") {
    namespace fs = std::filesystem;
    const auto dir = testsupport::fixture_cache() / "fdrt_roundtrip";
    fs::create_directories(dir);

    Tensor a = testsupport::random_tensor({2, 3, 5, 7}, 11);
    save_fdrt(a, dir / "a.fdrt");
    Tensor a2 = load_fdrt(dir / "a.fdrt");
    CHECK(a2.dims() == a.dims());
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == a2.at(i));

    Tensor h = a.cast(Precision::half16);
    save_fdrt(h, dir / "h.fdrt");
    Tensor h2 = load_fdrt(dir / "h.fdrt");
    CHECK(h2.precision() == Precision::half16);
    auto lhs = h.f16();
    auto rhs = h2.f16();
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == rhs[i]);

    // Re-saving produces identical bytes.
    save_fdrt(a2, dir / "a_resave.fdrt");
    std::ifstream f1(dir / "a.fdrt", std::ios::binary), f2(dir / "a_resave.fdrt", std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
}

TEST_CASE("fdrt rejects corrupt files") {
    namespace fs = std::filesystem;
    const auto dir = testsupport::fixture_cache() / "fdrt_corrupt";
    fs::create_directories(dir);
    Tensor a = Tensor::from({4}, {1, 2, 3, 4});
    save_fdrt(a, dir / "ok.fdrt");

    // Truncate one byte off the payload.
    std::ifstream in(dir / "ok.fdrt", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(dir / "short.fdrt", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 1));
    out.close();
    CHECK_THROWS_AS(load_fdrt(dir / "short.fdrt"), FormatError);

    std::ofstream bad(dir / "bad.fdrt", std::ios::binary);
    bad << "NOPE" << bytes.substr(4);
    bad.close();
    CHECK_THROWS_AS(load_fdrt(dir / "bad.fdrt"), FormatError);
}
