#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "twostream/errors.hpp"

namespace twostream {

struct Shape3 {
    int height = 0;
    int width = 0;
    int channels = 0;

    bool operator==(const Shape3&) const = default;
    int count() const { return height * width * channels; }
};

// Rank-3 pixel/array tensor, row-major (h, w, c), float32 storage.
// All arithmetic on tensors accumulates in double.
class Tensor3 {
public:
    Tensor3() = default;

    Tensor3(int height, int width, int channels)
        : h_(height), w_(width), c_(channels),
          data_(static_cast<std::size_t>(check_dims(height, width, channels)), 0.0f) {}

    static Tensor3 filled(int height, int width, int channels, float value) {
        Tensor3 t(height, width, channels);
        for (float& v : t.data_) v = value;
        return t;
    }

    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return c_; }
    Shape3 shape() const { return {h_, w_, c_}; }
    int size() const { return h_ * w_ * c_; }
    bool empty() const { return data_.empty(); }

    float at(int y, int x, int c) const { return data_[index(y, x, c)]; }
    float& at(int y, int x, int c) { return data_[index(y, x, c)]; }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    bool same_shape(const Tensor3& other) const { return shape() == other.shape(); }

    bool all_finite() const;

    // Clamps every entry into [lo, hi].
    void clamp(float lo, float hi);

    bool operator==(const Tensor3& other) const {
        return shape() == other.shape() && data_ == other.data_;
    }

private:
    static int check_dims(int h, int w, int c) {
        if (h <= 0 || w <= 0 || c <= 0)
            throw InvalidInputError("tensor dimensions must be positive");
        if (h > 0xFFFF || w > 0xFFFF || c > 0xFFFF)
            throw InvalidInputError("tensor dimension exceeds 65535");
        return h * w * c;
    }

    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * w_ + x) * c_ + c;
    }

    int h_ = 0, w_ = 0, c_ = 0;
    std::vector<float> data_;
};

// --- resize pair -----------------------------------------------------------
// The two operators form an exact adjoint pair:
//   downscale_box(x + upscale_replicate(d, f), f) == downscale_box(x, f) + d
// which is what makes the low-resolution attack lifting verifiable.

// Each output pixel is the mean of the corresponding f x f block.
Tensor3 downscale_box(const Tensor3& image, int factor);

// Each source pixel is replicated into an f x f block.
Tensor3 upscale_replicate(const Tensor3& image, int factor);

// --- binary serialization ---------------------------------------------------
// Little-endian: magic "T3", u16 h, u16 w, u16 c, then h*w*c float32 values.
// Records are self-delimiting, so streams may simply concatenate them.

std::vector<std::uint8_t> encode_tensor(const Tensor3& t);
void append_tensor(std::vector<std::uint8_t>& out, const Tensor3& t);

// Decodes one record from the front of `bytes`; `consumed` reports its length.
// Throws IngestError on bad magic or truncation.
Tensor3 decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& consumed);

void write_tensor_file(const std::filesystem::path& path, const Tensor3& t);
Tensor3 read_tensor_file(const std::filesystem::path& path);

// Concatenated records.
void write_tensor_stream(const std::filesystem::path& path, std::span<const Tensor3> tensors);
std::vector<Tensor3> read_tensor_stream(const std::filesystem::path& path);

} // namespace twostream
