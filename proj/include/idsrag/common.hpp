#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace idsrag {

// Fixed ordering Benign < DoS < DDoS is used for vector indexing and tie-breaks.
enum class ClassLabel : std::uint8_t { Benign = 0, DoS = 1, DDoS = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::Benign, ClassLabel::DoS, ClassLabel::DDoS};

std::string_view to_string(ClassLabel label);

// Accepts "benign", "dos", "ddos" in any case.
ClassLabel parse_class_label(std::string_view text);

inline std::size_t index_of(ClassLabel label) { return static_cast<std::size_t>(label); }

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Stable 64-bit FNV-1a; used for prompt hashes and feature hashing.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string to_hex(std::uint64_t value);

std::string lowercase(std::string_view text);

std::string_view trim(std::string_view text);

}  // namespace idsrag
