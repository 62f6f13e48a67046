#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace idsrag::text {

// One word token with its byte span in the source text. `ends_sentence` is set
// when the gap to the next token holds sentence punctuation or a blank line.
struct Token {
    std::string surface;
    std::size_t begin = 0;
    std::size_t end = 0;
    bool ends_sentence = false;
};

// Splits on non-alphanumerics. A '-' or '.' flanked by digits stays inside the
// token so identifiers like "800-61" and "T1498.001" survive intact. Bytes
// >= 0x80 count as word characters.
std::vector<Token> tokenize_with_spans(std::string_view text);

// Lowercased token strings; the shared tokenizer for chunking, BM25 and metrics.
std::vector<std::string> tokenize(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::size_t word_count(std::string_view text);

}  // namespace idsrag::text
