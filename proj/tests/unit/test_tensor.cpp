#include <doctest.h>

#include <filesystem>

#include "twostream/rng.hpp"
#include "twostream/tensor.hpp"

using namespace twostream;

TEST_CASE("tensor construction and access") {
    Tensor3 t(2, 3, 4);
    CHECK(t.size() == 24);
    CHECK(t.shape() == Shape3{2, 3, 4});
    t.at(1, 2, 3) = 0.5f;
    CHECK(t.at(1, 2, 3) == 0.5f);
    CHECK(t.all_finite());

    CHECK_THROWS_AS(Tensor3(0, 1, 1), InvalidInputError);
    CHECK_THROWS_AS(Tensor3(1, -1, 1), InvalidInputError);
}

TEST_CASE("downscale_box averages blocks") {
    SUBCASE("constant image stays constant") {
        const Tensor3 img = Tensor3::filled(8, 8, 3, 0.37f);
        const Tensor3 out = downscale_box(img, 4);
        CHECK(out.shape() == Shape3{2, 2, 3});
        for (const float v : out.data()) CHECK(v == doctest::Approx(0.37f));
    }
    SUBCASE("2x2 checkerboard, factor 2") {
        Tensor3 img(2, 2, 1);
        img.at(0, 0, 0) = 0.0f;
        img.at(0, 1, 0) = 1.0f;
        img.at(1, 0, 0) = 1.0f;
        img.at(1, 1, 0) = 0.0f;
        const Tensor3 out = downscale_box(img, 2);
        CHECK(out.shape() == Shape3{1, 1, 1});
        CHECK(out.at(0, 0, 0) == doctest::Approx(0.5));
    }
    SUBCASE("factor 1 is the identity") {
        Rng rng(7);
        Tensor3 img(5, 4, 2);
        for (float& v : img.data()) v = static_cast<float>(rng.uniform());
        CHECK(downscale_box(img, 1) == img);
    }
    SUBCASE("non-divisible dimensions are rejected") {
        const Tensor3 img(6, 6, 1);
        CHECK_THROWS_AS(downscale_box(img, 4), InvalidInputError);
    }
}

TEST_CASE("upscale_replicate") {
    SUBCASE("factor 1 is the identity") {
        Rng rng(9);
        Tensor3 img(3, 3, 2);
        for (float& v : img.data()) v = static_cast<float>(rng.uniform());
        CHECK(upscale_replicate(img, 1) == img);
    }
    SUBCASE("1x1 replicates to a constant block") {
        Tensor3 img(1, 1, 1);
        img.at(0, 0, 0) = 0.25f;
        const Tensor3 out = upscale_replicate(img, 3);
        CHECK(out.shape() == Shape3{3, 3, 1});
        for (const float v : out.data()) CHECK(v == 0.25f);
    }
}

TEST_CASE("downscale/upscale adjoint identity") {
    // downscale_box(x + upscale_replicate(d, f), f) == downscale_box(x, f) + d
    Rng rng(123);
    for (const int factor : {2, 4}) {
        for (int trial = 0; trial < 25; ++trial) {
            const int small = 2 + rng.uniform_int(3);
            const int big = small * factor;
            Tensor3 x(big, big, 3);
            for (float& v : x.data()) v = static_cast<float>(rng.uniform());
            Tensor3 d(small, small, 3);
            for (float& v : d.data()) v = static_cast<float>(rng.uniform(-0.5, 0.5));

            const Tensor3 up = upscale_replicate(d, factor);
            Tensor3 sum(big, big, 3);
            for (int i = 0; i < sum.size(); ++i)
                sum.data()[i] = x.data()[i] + up.data()[i];

            const Tensor3 lhs = downscale_box(sum, factor);
            const Tensor3 base = downscale_box(x, factor);
            for (int i = 0; i < lhs.size(); ++i) {
                const double expect = static_cast<double>(base.data()[i]) + d.data()[i];
                CHECK(std::abs(lhs.data()[i] - expect) <= 1e-5);
            }
        }
    }
}

TEST_CASE("tensor binary round trip") {
    Rng rng(42);
    Tensor3 t(3, 5, 2);
    for (float& v : t.data()) v = static_cast<float>(rng.uniform(-2.0, 2.0));

    const auto bytes = encode_tensor(t);
    CHECK(bytes.size() == 8 + 3 * 5 * 2 * 4);
    CHECK(bytes[0] == 'T');
    CHECK(bytes[1] == '3');

    std::size_t consumed = 0;
    const Tensor3 back = decode_tensor(bytes, consumed);
    CHECK(consumed == bytes.size());
    CHECK(back == t);
}

TEST_CASE("tensor decode faults") {
    const Tensor3 t = Tensor3::filled(2, 2, 1, 1.0f);
    auto bytes = encode_tensor(t);
    std::size_t consumed = 0;

    SUBCASE("bad magic") {
        bytes[0] = 'X';
        CHECK_THROWS_AS(decode_tensor(bytes, consumed), IngestError);
    }
    SUBCASE("truncated header") {
        bytes.resize(5);
        CHECK_THROWS_AS(decode_tensor(bytes, consumed), IngestError);
    }
    SUBCASE("truncated payload") {
        bytes.resize(bytes.size() - 3);
        CHECK_THROWS_AS(decode_tensor(bytes, consumed), IngestError);
    }
}

TEST_CASE("tensor stream files") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "twostream_tensor_test";
    fs::create_directories(dir);

    Rng rng(5);
    std::vector<Tensor3> tensors;
    for (int i = 0; i < 4; ++i) {
        Tensor3 t(2 + i, 3, 2);
        for (float& v : t.data()) v = static_cast<float>(rng.uniform());
        tensors.push_back(std::move(t));
    }
    write_tensor_stream(dir / "stream.t3", tensors);
    const auto back = read_tensor_stream(dir / "stream.t3");
    REQUIRE(back.size() == tensors.size());
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i] == tensors[i]);

    write_tensor_file(dir / "one.t3", tensors[0]);
    CHECK(read_tensor_file(dir / "one.t3") == tensors[0]);
    fs::remove_all(dir);
}
