#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tracefind/trace_corpus.hpp"

namespace tracefind {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kCall = 5;
inline constexpr TokenId kExit = 6;
inline constexpr TokenId kCount = 7;
}  // namespace special

enum class Variant { Plain, Boundaries };
enum class Truncation { Head, Tail };

std::string_view to_string(Variant v) noexcept;
Variant variant_from_string(std::string_view name);

/// Bijection between call-signature lines and token ids. Ids 0-6 are fixed
/// specials; signatures follow contiguously from 7 in first-occurrence order.
class Vocabulary {
public:
    Vocabulary();

    static std::string_view special_name(TokenId id);

    /// Returns the existing id when the token is already present.
    TokenId add(const std::string& token);

    std::optional<TokenId> find(std::string_view token) const;
    TokenId id_or_unk(std::string_view token) const;
    const std::string& token(TokenId id) const;

    std::size_t size() const noexcept { return id_to_token_.size(); }
    std::size_t signature_count() const noexcept { return size() - special::kCount; }

    /// Signature tokens in id order (excludes specials).
    std::vector<std::string> signatures() const;

    /// FNV-1a over the ordered token list; recorded in checkpoints/indexes.
    std::uint64_t hash() const;

    std::string to_json() const;
    static Vocabulary from_json(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.id_to_token_ == b.id_to_token_; }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, TokenId> token_to_id_;
};

/// Throws EmptyCorpusError for an empty corpus.
Vocabulary build_vocab(const Corpus& corpus, Variant variant);

struct EncodedTrace {
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> attention_mask;
    std::string record_id;

    /// Number of non-PAD positions (the mask is a prefix of ones).
    std::size_t length() const noexcept;
};

struct EncodeOptions {
    std::size_t max_len = 768;
    Truncation truncation = Truncation::Head;
};

const std::vector<CallEvent>& events_for(const TraceRecord& record, Variant variant);

/// [CLS] events [SEP] PAD..., exactly max_len long. max_len must be >= 2.
EncodedTrace encode(const TraceRecord& record, const Vocabulary& vocab, Variant variant, const EncodeOptions& options);

/// Token strings for the non-special positions of an encoding; boundary
/// positions decode to `[CALL]` / `[EXIT]`, unknowns to `[UNK]`.
std::vector<std::string> decode_tokens(const EncodedTrace& encoded, const Vocabulary& vocab);

/// Event sequence for an encoding. Throws std::invalid_argument when it
/// contains UNK (the original signature is unrecoverable).
std::vector<CallEvent> decode(const EncodedTrace& encoded, const Vocabulary& vocab);

/// Call-line token strings of a record, the document representation BM25 uses.
std::vector<std::string> token_strings(const TraceRecord& record, Variant variant);

struct UnkStats {
    std::size_t tokens = 0;
    std::size_t unknown = 0;
    double rate() const noexcept { return tokens == 0 ? 0.0 : static_cast<double>(unknown) / static_cast<double>(tokens); }
};

/// Counts UNK among the event positions of the given encodings.
UnkStats unk_stats(const std::vector<EncodedTrace>& encoded);

}  // namespace tracefind
