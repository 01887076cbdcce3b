#include "twostream/ioutil.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "twostream/errors.hpp"

namespace twostream {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open file: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

std::string read_file_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open file: " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IngestError("cannot open file for writing: " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IngestError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_file_atomic(const fs::path& path, const std::string& text) {
    write_file_atomic(path, std::span<const std::uint8_t>(
                                reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (const std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001B3ull;
    }
    return h;
}

std::uint64_t hash_file(const fs::path& path) {
    return fnv1a64(read_file_bytes(path));
}

std::uint64_t hash_directory(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::vector<std::string> rel;
    rel.reserve(files.size());
    for (const auto& p : files) rel.push_back(fs::relative(p, dir).generic_string());
    std::sort(rel.begin(), rel.end());

    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const auto& r : rel) {
        h = fnv1a64(std::span<const std::uint8_t>(
                        reinterpret_cast<const std::uint8_t*>(r.data()), r.size()),
                    h);
        h = fnv1a64(read_file_bytes(dir / r), h);
    }
    return h;
}

std::string to_hex(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return std::string(buf);
}

} // namespace twostream
