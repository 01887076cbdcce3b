#include "twostream/tensor.hpp"

#include <cmath>
#include <cstring>

#include "twostream/ioutil.hpp"

namespace twostream {

bool Tensor3::all_finite() const {
    for (const float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor3::clamp(float lo, float hi) {
    for (float& v : data_) {
        if (v < lo) v = lo;
        if (v > hi) v = hi;
    }
}

Tensor3 downscale_box(const Tensor3& image, int factor) {
    if (factor <= 0) throw InvalidInputError("downscale_box: factor must be positive");
    if (image.height() % factor != 0 || image.width() % factor != 0)
        throw InvalidInputError("downscale_box: dimensions not divisible by factor");
    const int oh = image.height() / factor;
    const int ow = image.width() / factor;
    const int ch = image.channels();
    Tensor3 out(oh, ow, ch);
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            for (int c = 0; c < ch; ++c) {
                double sum = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        sum += image.at(y * factor + dy, x * factor + dx, c);
                out.at(y, x, c) = static_cast<float>(sum * inv);
            }
        }
    }
    return out;
}

Tensor3 upscale_replicate(const Tensor3& image, int factor) {
    if (factor <= 0) throw InvalidInputError("upscale_replicate: factor must be positive");
    const int oh = image.height() * factor;
    const int ow = image.width() * factor;
    const int ch = image.channels();
    Tensor3 out(oh, ow, ch);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            for (int c = 0; c < ch; ++c) {
                out.at(y, x, c) = image.at(y / factor, x / factor, c);
            }
        }
    }
    return out;
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t off) {
    return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

} // namespace

void append_tensor(std::vector<std::uint8_t>& out, const Tensor3& t) {
    if (t.empty()) throw InvalidInputError("cannot serialize empty tensor");
    out.push_back('T');
    out.push_back('3');
    put_u16(out, static_cast<std::uint16_t>(t.height()));
    put_u16(out, static_cast<std::uint16_t>(t.width()));
    put_u16(out, static_cast<std::uint16_t>(t.channels()));
    for (const float v : t.data()) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        out.push_back(static_cast<std::uint8_t>(bits & 0xFF));
        out.push_back(static_cast<std::uint8_t>((bits >> 8) & 0xFF));
        out.push_back(static_cast<std::uint8_t>((bits >> 16) & 0xFF));
        out.push_back(static_cast<std::uint8_t>((bits >> 24) & 0xFF));
    }
}

std::vector<std::uint8_t> encode_tensor(const Tensor3& t) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + static_cast<std::size_t>(t.size()) * 4);
    append_tensor(out, t);
    return out;
}

Tensor3 decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& consumed) {
    if (bytes.size() < 8) throw IngestError("tensor header truncated");
    if (bytes[0] != 'T' || bytes[1] != '3') throw IngestError("tensor magic mismatch");
    const int h = get_u16(bytes, 2);
    const int w = get_u16(bytes, 4);
    const int c = get_u16(bytes, 6);
    if (h == 0 || w == 0 || c == 0) throw IngestError("tensor dimension is zero");
    const std::size_t count = static_cast<std::size_t>(h) * w * c;
    const std::size_t need = 8 + count * 4;
    if (bytes.size() < need) throw IngestError("tensor payload truncated");
    Tensor3 t(h, w, c);
    auto data = t.data();
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t off = 8 + i * 4;
        const std::uint32_t bits = static_cast<std::uint32_t>(bytes[off]) |
                                   (static_cast<std::uint32_t>(bytes[off + 1]) << 8) |
                                   (static_cast<std::uint32_t>(bytes[off + 2]) << 16) |
                                   (static_cast<std::uint32_t>(bytes[off + 3]) << 24);
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        data[i] = v;
    }
    consumed = need;
    return t;
}

void write_tensor_file(const std::filesystem::path& path, const Tensor3& t) {
    write_file_atomic(path, encode_tensor(t));
}

Tensor3 read_tensor_file(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t consumed = 0;
    Tensor3 t = decode_tensor(bytes, consumed);
    if (consumed != bytes.size())
        throw IngestError("trailing bytes after tensor record in " + path.string());
    return t;
}

void write_tensor_stream(const std::filesystem::path& path, std::span<const Tensor3> tensors) {
    std::vector<std::uint8_t> out;
    for (const Tensor3& t : tensors) append_tensor(out, t);
    write_file_atomic(path, out);
}

std::vector<Tensor3> read_tensor_stream(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    std::vector<Tensor3> tensors;
    std::size_t off = 0;
    while (off < bytes.size()) {
        std::size_t consumed = 0;
        tensors.push_back(decode_tensor(std::span(bytes).subspan(off), consumed));
        off += consumed;
    }
    return tensors;
}

} // namespace twostream
