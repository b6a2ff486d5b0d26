#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace spanret {

class Fnv1a64 {
   public:
    void update(const void* data, std::size_t size)
    {
        auto const* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i) {
            state_ ^= bytes[i];
            state_ *= 0x100000001b3ULL;
        }
    }

    void update(std::string_view text) { update(text.data(), text.size()); }

    template <typename T>
    void update_value(const T& value)
    {
        update(&value, sizeof(T));
    }

    [[nodiscard]] std::uint64_t digest() const noexcept { return state_; }

    [[nodiscard]] std::string hex() const { return to_hex(state_); }

    static std::string to_hex(std::uint64_t value)
    {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
        return buf;
    }

   private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

[[nodiscard]] inline std::string fnv1a_hex(std::string_view text)
{
    Fnv1a64 h;
    h.update(text);
    return h.hex();
}

} // namespace spanret
