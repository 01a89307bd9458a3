#include "stockformer/tensor_file.h"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "stockformer/errors.h"

namespace stockformer::tensor_file {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'K', 'T', 'E', 'N', 'S', '1'};

void put_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t get_u64(std::ifstream& in, const std::string& path) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw ParseError(path + ": truncated tensor file");
    return v;
}

}  // namespace

void write(const std::string& path, const std::string& meta_json,
           const std::vector<Entry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArtifactError("cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    put_u64(out, meta_json.size());
    out.write(meta_json.data(), static_cast<std::streamsize>(meta_json.size()));
    put_u64(out, entries.size());
    for (const auto& e : entries) {
        put_u64(out, e.name.size());
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put_u64(out, e.shape.size());
        std::size_t expect = 1;
        for (std::size_t d : e.shape) {
            put_u64(out, d);
            expect *= d;
        }
        if (expect != e.data.size()) {
            throw ShapeError("tensor_file: entry " + e.name + " shape does not match data size");
        }
        out.write(reinterpret_cast<const char*>(e.data.data()),
                  static_cast<std::streamsize>(e.data.size() * sizeof(double)));
    }
    if (!out) throw ArtifactError("short write to " + path);
}

File read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ParseError(path + ": not a tensor file (bad magic)");
    }
    File f;
    const auto meta_len = get_u64(in, path);
    f.meta.resize(meta_len);
    in.read(f.meta.data(), static_cast<std::streamsize>(meta_len));
    const auto count = get_u64(in, path);
    f.entries.resize(count);
    for (auto& e : f.entries) {
        const auto name_len = get_u64(in, path);
        e.name.resize(name_len);
        in.read(e.name.data(), static_cast<std::streamsize>(name_len));
        const auto ndim = get_u64(in, path);
        e.shape.resize(ndim);
        std::size_t total = 1;
        for (auto& d : e.shape) {
            d = get_u64(in, path);
            total *= d;
        }
        e.data.resize(total);
        in.read(reinterpret_cast<char*>(e.data.data()),
                static_cast<std::streamsize>(total * sizeof(double)));
        if (!in) throw ParseError(path + ": truncated tensor data for " + e.name);
    }
    return f;
}

}  // namespace stockformer::tensor_file
