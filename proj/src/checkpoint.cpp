#include "tinydetr/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "tinydetr/errors.hpp"

namespace tinydetr {

namespace {

constexpr char kMagic[4] = {'T', 'D', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw DataError("checkpoint " + path + ": truncated file");
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    }
    return v;
}

std::uint64_t read_u64(std::istream& is, const std::string& path) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) {
        throw DataError("checkpoint " + path + ": truncated file");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    return v;
}

double read_f64(std::istream& is, const std::string& path) {
    const std::uint64_t bits = read_u64(is, path);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw DataError("checkpoint " + path + ": cannot open for writing");
    }
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(checkpoint.size()));
    for (const auto& [name, entry] : checkpoint) {
        if (shape_size(entry.shape) != entry.values.size()) {
            throw DataError("checkpoint entry '" + name + "': shape " +
                            shape_to_string(entry.shape) + " does not match " +
                            std::to_string(entry.values.size()) + " values");
        }
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<std::uint32_t>(entry.shape.size()));
        for (std::size_t d : entry.shape) {
            write_u64(os, d);
        }
        for (double v : entry.values) {
            write_f64(os, v);
        }
    }
    if (!os) {
        throw DataError("checkpoint " + path + ": write failed");
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("checkpoint " + path + ": cannot open");
    }
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw DataError("checkpoint " + path + ": bad magic (not a checkpoint file)");
    }
    const std::uint32_t version = read_u32(is, path);
    if (version != kVersion) {
        throw DataError("checkpoint " + path + ": unsupported version " +
                        std::to_string(version));
    }
    const std::uint32_t count = read_u32(is, path);
    Checkpoint out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(is, path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) {
            throw DataError("checkpoint " + path + ": truncated file");
        }
        const std::uint32_t rank = read_u32(is, path);
        CheckpointEntry entry;
        entry.shape.resize(rank);
        for (std::uint32_t d = 0; d < rank; ++d) {
            entry.shape[d] = static_cast<std::size_t>(read_u64(is, path));
        }
        const std::size_t n = shape_size(entry.shape);
        entry.values.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            entry.values[j] = read_f64(is, path);
        }
        if (!out.emplace(std::move(name), std::move(entry)).second) {
            throw DataError("checkpoint " + path + ": duplicate entry name");
        }
    }
    return out;
}

void put_scalar(Checkpoint& checkpoint, const std::string& name, double value) {
    checkpoint[name] = CheckpointEntry{Shape{}, {value}};
}

double get_scalar(const Checkpoint& checkpoint, const std::string& name) {
    const auto it = checkpoint.find(name);
    if (it == checkpoint.end()) {
        throw DataError("checkpoint: missing entry '" + name + "'");
    }
    if (it->second.values.size() != 1) {
        throw DataError("checkpoint: entry '" + name + "' is not a scalar");
    }
    return it->second.values[0];
}

bool has_entry(const Checkpoint& checkpoint, const std::string& name) {
    return checkpoint.find(name) != checkpoint.end();
}

}  // namespace tinydetr
