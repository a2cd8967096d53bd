#include <algorithm>
#include <array>
#include <cctype>
#include <stdexcept>

#include "tracefind/java_syntax.hpp"

namespace tracefind::java {

namespace {

const std::vector<std::string> kKeywords = {
    "abstract", "assert",     "boolean",  "break",     "byte",      "case",         "catch",   "char",
    "class",    "const",      "continue", "default",   "do",        "double",       "else",    "enum",
    "extends",  "final",      "finally",  "float",     "for",       "goto",         "if",      "implements",
    "import",   "instanceof", "int",      "interface", "long",      "native",       "new",     "package",
    "private",  "protected",  "public",   "return",    "short",     "static",       "strictfp", "super",
    "switch",   "synchronized", "this",   "throw",     "throws",    "transient",    "try",     "void",
    "volatile", "while",      "true",     "false",     "null",
};

// Longest first so the scan below is maximal munch.
constexpr std::array<std::string_view, 37> kOperators = {
    ">>>=", "<<=", ">>=", ">>>", "...", "->", "::", "++", "--", "&&", "||", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=",
    "&=",   "|=",  "^=",  "%=",  "<<",  ">>", "=",  ">",  "<",  "!",  "~",  "?",  ":",  "+",  "-",  "*",  "/",  "&",
};
constexpr std::string_view kSingleOperators = "|^%@";
constexpr std::string_view kSeparators = "(){}[];,.";

bool ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$' || static_cast<unsigned char>(c) >= 0x80;
}

bool ident_part(char c) {
    return ident_start(c) || std::isdigit(static_cast<unsigned char>(c));
}

}  // namespace

std::string_view to_string(TokenKind kind) noexcept {
    switch (kind) {
        case TokenKind::Identifier: return "identifier";
        case TokenKind::Keyword: return "keyword";
        case TokenKind::IntegerLiteral: return "integer";
        case TokenKind::FloatLiteral: return "float";
        case TokenKind::StringLiteral: return "string";
        case TokenKind::CharLiteral: return "char";
        case TokenKind::Operator: return "operator";
        case TokenKind::Separator: return "separator";
    }
    return "?";
}

bool is_keyword(std::string_view word) noexcept {
    return std::find(kKeywords.begin(), kKeywords.end(), word) != kKeywords.end();
}

const std::vector<std::string>& keywords() {
    return kKeywords;
}

std::vector<Token> lex(std::string_view src, LexOptions options) {
    std::vector<Token> out;
    std::size_t i = 0;
    const std::size_t n = src.size();
    auto at = [&](std::size_t k) { return k < n ? src[k] : '\0'; };

    while (i < n) {
        const char c = src[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (c == '/' && at(i + 1) == '/') {
            while (i < n && src[i] != '\n') ++i;
            continue;
        }
        if (c == '/' && at(i + 1) == '*') {
            const auto end = src.find("*/", i + 2);
            if (end == std::string_view::npos) throw LexError{i, "unterminated block comment"};
            i = end + 2;
            continue;
        }
        const std::size_t start = i;
        if (ident_start(c)) {
            while (i < n && ident_part(src[i])) ++i;
            std::string word(src.substr(start, i - start));
            const auto kind = is_keyword(word) ? TokenKind::Keyword : TokenKind::Identifier;
            out.push_back({kind, std::move(word), start});
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && std::isdigit(static_cast<unsigned char>(at(i + 1))))) {
            bool is_float = false;
            if (c == '0' && (at(i + 1) == 'x' || at(i + 1) == 'X' || at(i + 1) == 'b' || at(i + 1) == 'B')) {
                i += 2;
                while (i < n && (std::isxdigit(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
            } else {
                while (i < n && (std::isdigit(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
                if (at(i) == '.' && std::isdigit(static_cast<unsigned char>(at(i + 1)))) {
                    is_float = true;
                    ++i;
                    while (i < n && (std::isdigit(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
                } else if (at(i) == '.' && !ident_start(at(i + 1))) {
                    is_float = true;  // "1." form
                    ++i;
                }
                if (at(i) == 'e' || at(i) == 'E') {
                    is_float = true;
                    ++i;
                    if (at(i) == '+' || at(i) == '-') ++i;
                    while (i < n && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
                }
            }
            const char suffix = at(i);
            if (suffix == 'f' || suffix == 'F' || suffix == 'd' || suffix == 'D') {
                is_float = true;
                ++i;
            } else if (suffix == 'l' || suffix == 'L') {
                ++i;
            }
            out.push_back({is_float ? TokenKind::FloatLiteral : TokenKind::IntegerLiteral, std::string(src.substr(start, i - start)), start});
            continue;
        }
        if (c == '"') {
            if (src.substr(i, 3) == "\"\"\"") {
                const auto end = src.find("\"\"\"", i + 3);
                if (end == std::string_view::npos) throw LexError{i, "unterminated text block"};
                i = end + 3;
            } else {
                ++i;
                while (i < n && src[i] != '"' && src[i] != '\n') i += src[i] == '\\' ? 2 : 1;
                if (i >= n || src[i] != '"') throw LexError{start, "unterminated string literal"};
                ++i;
            }
            out.push_back({TokenKind::StringLiteral, std::string(src.substr(start, i - start)), start});
            continue;
        }
        if (c == '\'') {
            ++i;
            while (i < n && src[i] != '\'' && src[i] != '\n') i += src[i] == '\\' ? 2 : 1;
            if (i >= n || src[i] != '\'') throw LexError{start, "unterminated char literal"};
            ++i;
            out.push_back({TokenKind::CharLiteral, std::string(src.substr(start, i - start)), start});
            continue;
        }
        if (c == '.' && src.substr(i, 3) == "...") {
            out.push_back({TokenKind::Operator, "...", start});
            i += 3;
            continue;
        }
        if (kSeparators.find(c) != std::string_view::npos) {
            out.push_back({TokenKind::Separator, std::string(1, c), start});
            ++i;
            continue;
        }
        if (c == '>' && options.split_angle_brackets) {
            out.push_back({TokenKind::Operator, ">", start});
            ++i;
            continue;
        }
        bool matched = false;
        for (auto op : kOperators) {
            if (src.substr(i, op.size()) == op) {
                out.push_back({TokenKind::Operator, std::string(op), start});
                i += op.size();
                matched = true;
                break;
            }
        }
        if (matched) continue;
        if (kSingleOperators.find(c) != std::string_view::npos) {
            out.push_back({TokenKind::Operator, std::string(1, c), start});
            ++i;
            continue;
        }
        throw LexError{i, std::string("unexpected character '") + c + "'"};
    }
    return out;
}

std::vector<std::string> code_tokens(std::string_view source) {
    std::vector<Token> tokens;
    try {
        tokens = lex(source);
    } catch (const LexError&) {
        // Fall back to whitespace splitting for unlexable text.
        std::vector<std::string> words;
        std::string current;
        for (char c : source) {
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!current.empty()) words.push_back(std::move(current));
                current.clear();
            } else {
                current.push_back(c);
            }
        }
        if (!current.empty()) words.push_back(std::move(current));
        return words;
    }
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (auto& t : tokens) out.push_back(std::move(t.text));
    return out;
}

}  // namespace tracefind::java
