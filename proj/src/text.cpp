#include "idsrag/text.hpp"

#include <cctype>

#include "idsrag/common.hpp"

namespace idsrag::text {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }
bool is_digit(unsigned char c) { return std::isdigit(c) != 0; }

}  // namespace

std::vector<Token> tokenize_with_spans(std::string_view text) {
    std::vector<Token> tokens;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        while (i < n && !is_word_char(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= n) break;
        const std::size_t begin = i;
        while (i < n) {
            const auto c = static_cast<unsigned char>(text[i]);
            if (is_word_char(c)) {
                ++i;
                continue;
            }
            if ((c == '-' || c == '.') && i > begin && i + 1 < n &&
                is_digit(static_cast<unsigned char>(text[i - 1])) &&
                is_digit(static_cast<unsigned char>(text[i + 1]))) {
                ++i;
                continue;
            }
            break;
        }
        Token tok;
        tok.surface = std::string(text.substr(begin, i - begin));
        tok.begin = begin;
        tok.end = i;
        tokens.push_back(std::move(tok));
    }

    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const std::size_t gap_end = t + 1 < tokens.size() ? tokens[t + 1].begin : n;
        int newlines = 0;
        for (std::size_t p = tokens[t].end; p < gap_end; ++p) {
            const char c = text[p];
            if (c == '.' || c == '!' || c == '?') tokens[t].ends_sentence = true;
            if (c == '\n' && ++newlines >= 2) tokens[t].ends_sentence = true;
        }
    }
    return tokens;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    for (auto& tok : tokenize_with_spans(text)) out.push_back(lowercase(tok.surface));
    return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::size_t word_count(std::string_view text) {
    std::size_t count = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!space && !in_word) ++count;
        in_word = !space;
    }
    return count;
}

}  // namespace idsrag::text
