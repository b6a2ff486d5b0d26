#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "hash.hpp"

namespace spanret {

/// Provenance carried by every artifact: the hash of the configuration that
/// produced it, the hashes of the artifacts it consumed, and a snapshot of
/// the configuration itself.
struct ArtifactHeader {
    std::string config_hash;
    std::vector<std::string> upstream;
    nlohmann::json config = nlohmann::json::object();

    /// Hash identifying this artifact's lineage; feeds `upstream` downstream.
    [[nodiscard]] std::string lineage_hash() const
    {
        Fnv1a64 h;
        h.update(config_hash);
        for (auto const& u : upstream) {
            h.update("|");
            h.update(u);
        }
        return h.hex();
    }
};

inline nlohmann::json header_to_json(std::string_view magic, std::uint32_t version,
                                     const ArtifactHeader& header)
{
    nlohmann::json j;
    j["magic"] = magic;
    j["version"] = version;
    j["config_hash"] = header.config_hash;
    j["upstream"] = header.upstream;
    j["config"] = header.config;
    return j;
}

/// Parses and validates the first line of a JSON-lines artifact.
inline ArtifactHeader read_jsonl_header(std::istream& in, std::string_view magic,
                                        std::uint32_t version)
{
    std::string line;
    if (!std::getline(in, line)) {
        throw Error(ErrorKind::malformed_input, std::string("missing ") + std::string(magic) + " header");
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (nlohmann::json::exception const& e) {
        throw Error(ErrorKind::malformed_input, "line 1: unparsable header: " + std::string(e.what()));
    }
    if (!j.is_object() || j.value("magic", std::string()) != magic) {
        throw Error(ErrorKind::version_mismatch, "line 1: expected a " + std::string(magic) + " file");
    }
    if (j.value("version", 0U) != version) {
        throw Error(ErrorKind::version_mismatch,
                    std::string(magic) + ": unsupported version " + j["version"].dump());
    }
    ArtifactHeader h;
    h.config_hash = j.value("config_hash", std::string());
    h.upstream = j.value("upstream", std::vector<std::string>{});
    h.config = j.value("config", nlohmann::json::object());
    return h;
}

inline std::ifstream open_input(const std::string& path, bool binary = false)
{
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) {
        throw Error(ErrorKind::io, "cannot open for reading: " + path);
    }
    return in;
}

inline std::ofstream open_output(const std::string& path, bool binary = false)
{
    std::ofstream out(path, binary ? (std::ios::binary | std::ios::trunc) : std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::io, "cannot open for writing: " + path);
    }
    return out;
}

// Little-endian host assumed; the files are not meant to travel across
// architectures.
class BinaryWriter {
   public:
    explicit BinaryWriter(std::ostream& out) : out_(out) {}

    template <typename T>
        requires std::is_trivially_copyable_v<T>
    void put(const T& value)
    {
        out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
    }

    void put_string(std::string_view s)
    {
        put<std::uint64_t>(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    template <typename T>
    void put_array(const T* data, std::size_t count)
    {
        put<std::uint64_t>(count);
        out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
    }

    void put_magic(std::string_view magic, std::uint32_t version)
    {
        out_.write(magic.data(), static_cast<std::streamsize>(magic.size()));
        put(version);
    }

    void put_header(const ArtifactHeader& h)
    {
        nlohmann::json j;
        j["config_hash"] = h.config_hash;
        j["upstream"] = h.upstream;
        j["config"] = h.config;
        put_string(j.dump());
    }

    void check()
    {
        if (!out_) {
            throw Error(ErrorKind::io, "write failed");
        }
    }

   private:
    std::ostream& out_;
};

class BinaryReader {
   public:
    explicit BinaryReader(std::istream& in) : in_(in) {}

    template <typename T>
        requires std::is_trivially_copyable_v<T>
    T get()
    {
        T value{};
        in_.read(reinterpret_cast<char*>(&value), sizeof(T));
        if (!in_) {
            throw Error(ErrorKind::malformed_input, "unexpected end of binary file");
        }
        return value;
    }

    std::string get_string()
    {
        auto n = get<std::uint64_t>();
        if (n > (1ULL << 32U)) {
            throw Error(ErrorKind::malformed_input, "corrupt string length");
        }
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        if (!in_) {
            throw Error(ErrorKind::malformed_input, "unexpected end of binary file");
        }
        return s;
    }

    template <typename T>
    std::vector<T> get_array()
    {
        auto n = get<std::uint64_t>();
        if (n > (1ULL << 34U) / sizeof(T)) {
            throw Error(ErrorKind::malformed_input, "corrupt array length");
        }
        std::vector<T> v(n);
        in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
        if (!in_) {
            throw Error(ErrorKind::malformed_input, "unexpected end of binary file");
        }
        return v;
    }

    void expect_magic(std::string_view magic, std::uint32_t version)
    {
        std::string got(magic.size(), '\0');
        in_.read(got.data(), static_cast<std::streamsize>(got.size()));
        if (!in_ || got != magic) {
            throw Error(ErrorKind::version_mismatch, "expected a " + std::string(magic) + " file");
        }
        auto v = get<std::uint32_t>();
        if (v != version) {
            throw Error(ErrorKind::version_mismatch,
                        std::string(magic) + ": unsupported version " + std::to_string(v));
        }
    }

    ArtifactHeader get_header()
    {
        auto j = nlohmann::json::parse(get_string());
        ArtifactHeader h;
        h.config_hash = j.value("config_hash", std::string());
        h.upstream = j.value("upstream", std::vector<std::string>{});
        h.config = j.value("config", nlohmann::json::object());
        return h;
    }

   private:
    std::istream& in_;
};

} // namespace spanret
