#include "tracefind/tokenizer.hpp"

#include <array>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tracefind/error.hpp"
#include "tracefind/hash.hpp"

namespace tracefind {

namespace {

constexpr std::array<std::string_view, special::kCount> kSpecialNames = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[CALL]", "[EXIT]",
};

}  // namespace

std::string_view to_string(Variant v) noexcept {
    return v == Variant::Plain ? "plain" : "boundaries";
}

Variant variant_from_string(std::string_view name) {
    if (name == "plain") return Variant::Plain;
    if (name == "boundaries") return Variant::Boundaries;
    throw ValidationError("unknown variant '" + std::string(name) + "' (expected plain|boundaries)");
}

Vocabulary::Vocabulary() {
    for (TokenId id = 0; id < special::kCount; ++id) {
        id_to_token_.emplace_back(kSpecialNames[id]);
        token_to_id_.emplace(id_to_token_.back(), id);
    }
}

std::string_view Vocabulary::special_name(TokenId id) {
    return kSpecialNames.at(static_cast<std::size_t>(id));
}

TokenId Vocabulary::add(const std::string& token) {
    auto [it, inserted] = token_to_id_.try_emplace(token, static_cast<TokenId>(id_to_token_.size()));
    if (inserted) id_to_token_.push_back(token);
    return it->second;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
}

TokenId Vocabulary::id_or_unk(std::string_view token) const {
    return find(token).value_or(special::kUnk);
}

const std::string& Vocabulary::token(TokenId id) const {
    return id_to_token_.at(static_cast<std::size_t>(id));
}

std::vector<std::string> Vocabulary::signatures() const {
    return {id_to_token_.begin() + special::kCount, id_to_token_.end()};
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& t : id_to_token_) {
        h = fnv1a64(t, h);
        h = fnv1a64("\n", h);
    }
    return h;
}

std::string Vocabulary::to_json() const {
    nlohmann::ordered_json doc;
    nlohmann::ordered_json specials;
    for (TokenId id = 0; id < special::kCount; ++id) specials[std::string(kSpecialNames[id])] = id;
    doc["specials"] = specials;
    doc["tokens"] = signatures();
    return doc.dump(1) + "\n";
}

Vocabulary Vocabulary::from_json(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("vocabulary: invalid JSON: ") + e.what());
    }
    if (!doc.contains("specials") || !doc.contains("tokens") || !doc["tokens"].is_array()) {
        throw ValidationError("vocabulary: expected {\"specials\": {...}, \"tokens\": [...]}");
    }
    for (TokenId id = 0; id < special::kCount; ++id) {
        const std::string name(kSpecialNames[id]);
        if (!doc["specials"].contains(name) || doc["specials"][name] != id) {
            throw ValidationError("vocabulary: special " + name + " must have id " + std::to_string(id));
        }
    }
    Vocabulary vocab;
    for (const auto& t : doc["tokens"]) {
        if (!t.is_string()) throw ValidationError("vocabulary: tokens must be strings");
        const auto before = vocab.size();
        vocab.add(t.get<std::string>());
        if (vocab.size() == before) throw ValidationError("vocabulary: duplicate token " + t.get<std::string>());
    }
    return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write vocabulary " + path.string());
    out << to_json();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open vocabulary " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

const std::vector<CallEvent>& events_for(const TraceRecord& record, Variant variant) {
    return variant == Variant::Plain ? record.calls : record.calls_with_boundaries;
}

Vocabulary build_vocab(const Corpus& corpus, Variant variant) {
    if (corpus.empty()) throw EmptyCorpusError("build_vocab: corpus is empty");
    Vocabulary vocab;
    for (const auto& r : corpus.records) {
        for (const auto& e : events_for(r, variant)) {
            if (!e.is_boundary) vocab.add(e.to_line());
        }
    }
    return vocab;
}

std::size_t EncodedTrace::length() const noexcept {
    std::size_t n = 0;
    while (n < attention_mask.size() && attention_mask[n]) ++n;
    return n;
}

EncodedTrace encode(const TraceRecord& record, const Vocabulary& vocab, Variant variant, const EncodeOptions& options) {
    if (options.max_len < 2) throw std::invalid_argument("encode: max_len must be at least 2");
    const auto& events = events_for(record, variant);
    const std::size_t keep = std::min(events.size(), options.max_len - 2);
    const std::size_t first = options.truncation == Truncation::Head ? 0 : events.size() - keep;

    EncodedTrace out;
    out.record_id = record.record_id;
    out.ids.assign(options.max_len, special::kPad);
    out.attention_mask.assign(options.max_len, 0);
    out.ids[0] = special::kCls;
    for (std::size_t i = 0; i < keep; ++i) {
        const auto& e = events[first + i];
        TokenId id;
        if (e.is_boundary) {
            id = e.direction == Direction::Enter ? special::kCall : special::kExit;
        } else {
            id = vocab.id_or_unk(e.to_line());
        }
        out.ids[i + 1] = id;
    }
    out.ids[keep + 1] = special::kSep;
    std::fill_n(out.attention_mask.begin(), keep + 2, std::uint8_t{1});
    return out;
}

std::vector<std::string> decode_tokens(const EncodedTrace& encoded, const Vocabulary& vocab) {
    std::vector<std::string> tokens;
    for (TokenId id : encoded.ids) {
        if (id == special::kCls || id == special::kSep || id == special::kPad) continue;
        tokens.push_back(vocab.token(id));
    }
    return tokens;
}

std::vector<CallEvent> decode(const EncodedTrace& encoded, const Vocabulary& vocab) {
    std::vector<CallEvent> events;
    for (TokenId id : encoded.ids) {
        switch (id) {
            case special::kCls:
            case special::kSep:
            case special::kPad:
                break;
            case special::kCall:
                events.push_back(CallEvent::boundary_enter());
                break;
            case special::kExit:
                events.push_back(CallEvent::boundary_exit());
                break;
            case special::kUnk:
            case special::kMask:
                throw std::invalid_argument("decode: encoding contains " + std::string(Vocabulary::special_name(id)));
            default:
                events.push_back(CallEvent::from_line(vocab.token(id)));
        }
    }
    return events;
}

std::vector<std::string> token_strings(const TraceRecord& record, Variant variant) {
    std::vector<std::string> out;
    const auto& events = events_for(record, variant);
    out.reserve(events.size());
    for (const auto& e : events) out.push_back(e.to_line());
    return out;
}

UnkStats unk_stats(const std::vector<EncodedTrace>& encoded) {
    UnkStats stats;
    for (const auto& e : encoded) {
        const auto n = e.length();
        for (std::size_t i = 1; i + 1 < n; ++i) {
            ++stats.tokens;
            if (e.ids[i] == special::kUnk) ++stats.unknown;
        }
    }
    return stats;
}

}  // namespace tracefind
