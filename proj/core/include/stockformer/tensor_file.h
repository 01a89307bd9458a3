#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace stockformer::tensor_file {

// Versioned little-endian container for named double tensors plus one JSON
// meta string. Layout: magic "STKTENS1" | u64 meta_len | meta bytes |
// u64 entry_count | entries, each u64 name_len | name | u64 ndim |
// u64 dims[ndim] | f64 data[prod(dims)].
struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;
};

struct File {
    std::string meta;
    std::vector<Entry> entries;
};

void write(const std::string& path, const std::string& meta_json,
           const std::vector<Entry>& entries);
File read(const std::string& path);

}  // namespace stockformer::tensor_file
