#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "owdet/tensor.hpp"

namespace owdet {

// Shared binary container: 4-byte magic, version byte, u64-LE length-prefixed
// UTF-8 JSON header, raw little-endian float64 payloads in manifest order,
// trailing CRC32 over everything before it. Used by the memory pool and the
// detector checkpoint with different magics.

struct TensorRecord {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

// header_extra is merged into the header object; a "manifest" array with
// name/shape/offset per tensor is added automatically. The write is atomic
// (temp file + rename).
void write_container(const std::string& path, const char magic[4], std::uint8_t version,
                     const nlohmann::json& header_extra, const std::vector<TensorRecord>& tensors);

struct Container {
    nlohmann::json header;
    std::vector<TensorRecord> tensors;

    const TensorRecord& tensor(const std::string& name) const;
};

Container read_container(const std::string& path, const char magic[4],
                         std::uint8_t expected_version);

}  // namespace owdet
