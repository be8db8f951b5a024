#include "owdet/container.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "owdet/errors.hpp"

namespace owdet {

namespace {

std::uint32_t crc_table_entry(std::uint32_t i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
    return c;
}

const std::uint32_t* crc_table() {
    static const auto table = []() {
        static std::uint32_t t[256];
        for (std::uint32_t i = 0; i < 256; ++i) t[i] = crc_table_entry(i);
        return t;
    }();
    return table;
}

void append_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void append_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void append_f64_le(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    append_u64_le(out, bits);
}

std::uint64_t read_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

std::uint32_t read_u32_le(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

double read_f64_le(const std::uint8_t* p) {
    const std::uint64_t bits = read_u64_le(p);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

[[noreturn]] void format_error(const std::string& what, std::size_t offset) {
    throw DataError("container format error at byte " + std::to_string(offset) + ": " + what);
}

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t size) {
    const std::uint32_t* table = crc_table();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < size; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void write_container(const std::string& path, const char magic[4], std::uint8_t version,
                     const nlohmann::json& header_extra, const std::vector<TensorRecord>& tensors) {
    nlohmann::json header = header_extra;
    nlohmann::json manifest = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.values.size()) * 8;
    }
    header["manifest"] = std::move(manifest);
    const std::string header_str = header.dump();

    std::vector<std::uint8_t> bytes;
    bytes.reserve(13 + header_str.size() + offset + 4);
    bytes.insert(bytes.end(), magic, magic + 4);
    bytes.push_back(version);
    append_u64_le(bytes, header_str.size());
    bytes.insert(bytes.end(), header_str.begin(), header_str.end());
    for (const auto& t : tensors)
        for (const double v : t.values) append_f64_le(bytes, v);
    append_u32_le(bytes, crc32(bytes.data(), bytes.size()));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open for writing: " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("short write: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("cannot rename " + tmp + " to " + path);
}

const TensorRecord& Container::tensor(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw DataError("container missing tensor: " + name);
}

Container read_container(const std::string& path, const char magic[4],
                         std::uint8_t expected_version) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());

    if (bytes.size() < 17) format_error("file too short", bytes.size());
    if (std::memcmp(bytes.data(), magic, 4) != 0) format_error("bad magic", 0);
    if (bytes[4] != expected_version)
        format_error("unsupported version " + std::to_string(bytes[4]), 4);

    const std::uint32_t stored_crc = read_u32_le(bytes.data() + bytes.size() - 4);
    const std::uint32_t actual_crc = crc32(bytes.data(), bytes.size() - 4);
    if (stored_crc != actual_crc) format_error("checksum mismatch", bytes.size() - 4);

    const std::uint64_t header_len = read_u64_le(bytes.data() + 5);
    const std::size_t header_start = 13;
    if (header_start + header_len + 4 > bytes.size()) format_error("header overruns file", 5);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + header_start,
                                       bytes.begin() + header_start + header_len);
    } catch (const nlohmann::json::parse_error& e) {
        format_error(std::string("header is not valid JSON: ") + e.what(), header_start);
    }
    if (!header.contains("manifest") || !header["manifest"].is_array())
        format_error("header missing manifest", header_start);

    const std::size_t payload_start = header_start + header_len;
    const std::size_t payload_size = bytes.size() - 4 - payload_start;

    Container container;
    container.header = header;
    for (const auto& entry : header["manifest"]) {
        TensorRecord rec;
        if (!entry.contains("name") || !entry.contains("shape") || !entry.contains("offset"))
            format_error("manifest entry missing fields", payload_start);
        rec.name = entry["name"].get<std::string>();
        rec.shape = entry["shape"].get<Shape>();
        const std::uint64_t offset = entry["offset"].get<std::uint64_t>();
        const std::uint64_t count = static_cast<std::uint64_t>(shape_numel(rec.shape));
        if (offset + count * 8 > payload_size)
            format_error("tensor '" + rec.name + "' overruns payload", payload_start + offset);
        rec.values.resize(count);
        const std::uint8_t* p = bytes.data() + payload_start + offset;
        for (std::uint64_t i = 0; i < count; ++i) rec.values[i] = read_f64_le(p + i * 8);
        container.tensors.push_back(std::move(rec));
    }
    return container;
}

}  // namespace owdet
