#include "idsrag/common.hpp"

#include <cctype>

namespace idsrag {

std::string_view to_string(ClassLabel label) {
    switch (label) {
    case ClassLabel::Benign: return "Benign";
    case ClassLabel::DoS: return "DoS";
    case ClassLabel::DDoS: return "DDoS";
    }
    return "?";
}

ClassLabel parse_class_label(std::string_view text) {
    const std::string key = lowercase(trim(text));
    if (key == "benign") return ClassLabel::Benign;
    if (key == "dos") return ClassLabel::DoS;
    if (key == "ddos") return ClassLabel::DDoS;
    throw Error("unknown class label: '" + std::string(text) + "'");
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string to_hex(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xF];
        value >>= 4;
    }
    return out;
}

std::string lowercase(std::string_view text) {
    std::string out(text);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string_view trim(std::string_view text) {
    const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!text.empty() && is_space(text.front())) text.remove_prefix(1);
    while (!text.empty() && is_space(text.back())) text.remove_suffix(1);
    return text;
}

}  // namespace idsrag
