#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tracefind::java {

enum class TokenKind { Identifier, Keyword, IntegerLiteral, FloatLiteral, StringLiteral, CharLiteral, Operator, Separator };

std::string_view to_string(TokenKind kind) noexcept;

struct Token {
    TokenKind kind;
    std::string text;
    std::size_t offset = 0;  // byte offset into the source
};

/// Java reserved words plus the literal keywords true/false/null.
bool is_keyword(std::string_view word) noexcept;
const std::vector<std::string>& keywords();

struct LexOptions {
    /// Emit every '>' on its own so nested generics close correctly; the
    /// parser reassembles shift and comparison operators from adjacency.
    bool split_angle_brackets = false;
};

struct LexError {
    std::size_t offset;
    std::string message;
};

/// Comments and whitespace are dropped. Throws LexError on an unterminated
/// string/char literal or block comment, or a stray character.
std::vector<Token> lex(std::string_view source, LexOptions options = {});

/// Token texts with maximal-munch operators; the BLEU token stream.
std::vector<std::string> code_tokens(std::string_view source);

struct SyntaxNode {
    std::string kind;
    std::vector<std::size_t> children;
    std::size_t token_begin = 0;  // [begin, end) into the parser's token stream
    std::size_t token_end = 0;
    std::string text;  // identifiers and literals only
};

struct SyntaxTree {
    std::vector<SyntaxNode> nodes;  // nodes[0] is the root
    std::vector<Token> tokens;      // stream the spans refer to

    const SyntaxNode& root() const { return nodes.front(); }
    std::size_t size() const noexcept { return nodes.size(); }
};

struct ParseFailure {
    std::size_t offset = 0;       // byte offset of the offending token (source size at EOF)
    std::size_t token_index = 0;
    std::string expected;
    std::string found;

    std::string message() const;
};

using ParseOutcome = std::variant<SyntaxTree, ParseFailure>;

/// Parses a compilation-unit-like snippet: any mix of class/interface/enum
/// declarations, method and constructor declarations, and field
/// declarations. The accepted subset is listed in docs/java_subset.md.
ParseOutcome parse_java_subset(std::string_view source);

}  // namespace tracefind::java
