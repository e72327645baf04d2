#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "mcnet/core/tensor.hpp"

namespace mcnet {

// Versioned binary container of named float tensors plus string metadata.
// Used for model checkpoints, optimizer state and imported backbone weights.
class BlobFile {
public:
    static constexpr uint32_t kMagic = 0x4d434b50;  // "MCKP"
    static constexpr uint32_t kVersion = 1;

    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> strings;

    // Write-temp-then-rename so readers never observe a partial file.
    void save(const std::string& path) const {
        const std::string tmp = path + ".tmp";
        {
            std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
            if (!os) throw std::runtime_error("cannot open for write: " + tmp);
            write_u32(os, kMagic);
            write_u32(os, kVersion);
            write_u64(os, tensors.size() + strings.size());
            for (const auto& [name, t] : tensors) {
                os.put(0);
                write_str(os, name);
                os.put(static_cast<char>(t.rank()));
                for (int64_t d : t.shape) write_i64(os, d);
                os.write(reinterpret_cast<const char*>(t.data.data()),
                         static_cast<std::streamsize>(t.data.size() * sizeof(float)));
            }
            for (const auto& [name, s] : strings) {
                os.put(1);
                write_str(os, name);
                write_u64(os, s.size());
                os.write(s.data(), static_cast<std::streamsize>(s.size()));
            }
            if (!os) throw std::runtime_error("write failed: " + tmp);
        }
        std::filesystem::rename(tmp, path);
    }

    static BlobFile load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
        if (read_u32(is) != kMagic) throw std::runtime_error("bad checkpoint magic: " + path);
        const uint32_t version = read_u32(is);
        if (version != kVersion)
            throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
        BlobFile f;
        const uint64_t n = read_u64(is);
        for (uint64_t i = 0; i < n; ++i) {
            const int kind = is.get();
            const std::string name = read_str(is);
            if (kind == 0) {
                const int rank = is.get();
                std::vector<int64_t> shape(static_cast<size_t>(rank));
                for (auto& d : shape) d = read_i64(is);
                Tensor t(shape);
                is.read(reinterpret_cast<char*>(t.data.data()),
                        static_cast<std::streamsize>(t.data.size() * sizeof(float)));
                f.tensors.emplace(name, std::move(t));
            } else if (kind == 1) {
                const uint64_t len = read_u64(is);
                std::string s(len, '\0');
                is.read(s.data(), static_cast<std::streamsize>(len));
                f.strings.emplace(name, std::move(s));
            } else {
                throw std::runtime_error("corrupt checkpoint entry in " + path);
            }
            if (!is) throw std::runtime_error("truncated checkpoint: " + path);
        }
        return f;
    }

private:
    static void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }
    static void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }
    static void write_i64(std::ostream& os, int64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }
    static void write_str(std::ostream& os, const std::string& s) {
        write_u32(os, static_cast<uint32_t>(s.size()));
        os.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    static uint32_t read_u32(std::istream& is) {
        uint32_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 4);
        return v;
    }
    static uint64_t read_u64(std::istream& is) {
        uint64_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 8);
        return v;
    }
    static int64_t read_i64(std::istream& is) {
        int64_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 8);
        return v;
    }
    static std::string read_str(std::istream& is) {
        const uint32_t len = read_u32(is);
        std::string s(len, '\0');
        is.read(s.data(), len);
        return s;
    }
};

}  // namespace mcnet
