#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "error.hpp"

namespace spanret {

struct Token {
    std::string surface;
    bool is_stopword = false;

    friend bool operator==(const Token& a, const Token& b) { return a.surface == b.surface; }
};

using TokenSeq = std::vector<Token>;
using TokenId = std::int32_t;

/// English stop words (179 entries, the common NLTK list). Contractions are
/// kept whole because the tokenizer preserves internal apostrophes.
inline constexpr std::array<std::string_view, 179> kEnglishStopWords = {
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've",
    "you'll", "you'd", "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself",
    "she", "she's", "her", "hers", "herself", "it", "it's", "its", "itself", "they", "them",
    "their", "theirs", "themselves", "what", "which", "who", "whom", "this", "that", "that'll",
    "these", "those", "am", "is", "are", "was", "were", "be", "been", "being", "have", "has",
    "had", "having", "do", "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or",
    "because", "as", "until", "while", "of", "at", "by", "for", "with", "about", "against",
    "between", "into", "through", "during", "before", "after", "above", "below", "to", "from",
    "up", "down", "in", "out", "on", "off", "over", "under", "again", "further", "then", "once",
    "here", "there", "when", "where", "why", "how", "all", "any", "both", "each", "few", "more",
    "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so", "than",
    "too", "very", "s", "t", "can", "will", "just", "don", "don't", "should", "should've", "now",
    "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren", "aren't", "couldn", "couldn't", "didn",
    "didn't", "doesn", "doesn't", "hadn", "hadn't", "hasn", "hasn't", "haven", "haven't", "isn",
    "isn't", "ma", "mightn", "mightn't", "mustn", "mustn't", "needn", "needn't", "shan", "shan't",
    "shouldn", "shouldn't", "wasn", "wasn't", "weren", "weren't", "won", "won't", "wouldn",
    "wouldn't",
};

class StopWords {
   public:
    StopWords() = default;

    template <typename Range>
    explicit StopWords(const Range& words)
    {
        for (auto const& w : words) {
            words_.emplace(w);
        }
    }

    static std::shared_ptr<const StopWords> english()
    {
        static auto const list = std::make_shared<const StopWords>(kEnglishStopWords);
        return list;
    }

    /// One word per line; blank lines and lines starting with '#' are ignored.
    /// Entries are stored verbatim and are expected to be lowercase.
    static std::shared_ptr<const StopWords> read(std::istream& in)
    {
        std::vector<std::string> words;
        std::string line;
        while (std::getline(in, line)) {
            auto b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos || line[b] == '#') {
                continue;
            }
            auto e = line.find_last_not_of(" \t\r");
            words.push_back(line.substr(b, e - b + 1));
        }
        return std::make_shared<const StopWords>(words);
    }

    [[nodiscard]] bool contains(const std::string& surface) const { return words_.count(surface) > 0; }
    [[nodiscard]] std::size_t size() const { return words_.size(); }

   private:
    std::unordered_set<std::string> words_;
};

struct TokenizeStats {
    std::size_t invalid_bytes = 0;
};

/// Word-level tokenizer: NFC normalization, split on white space, strip
/// punctuation at token edges, lowercase.
class Tokenizer {
   public:
    Tokenizer() : stopwords_(StopWords::english()) {}
    explicit Tokenizer(std::shared_ptr<const StopWords> stopwords) : stopwords_(std::move(stopwords)) {}

    [[nodiscard]] TokenSeq tokenize(std::string_view text, TokenizeStats* stats = nullptr) const
    {
        UErrorCode status = U_ZERO_ERROR;
        const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
        if (U_FAILURE(status)) {
            throw Error(ErrorKind::io, "ICU NFC normalizer unavailable");
        }
        icu::UnicodeString const normalized = nfc->normalize(decode(text, stats), status);

        TokenSeq tokens;
        int32_t const len = normalized.length();
        int32_t i = 0;
        while (i < len) {
            if (is_separator(normalized.char32At(i))) {
                i = normalized.moveIndex32(i, 1);
                continue;
            }
            int32_t const start = i;
            while (i < len && !is_separator(normalized.char32At(i))) {
                i = normalized.moveIndex32(i, 1);
            }
            int32_t b = start;
            int32_t e = i;
            while (b < e && u_ispunct(normalized.char32At(b))) {
                b = normalized.moveIndex32(b, 1);
            }
            while (e > b) {
                int32_t const prev = normalized.moveIndex32(e, -1);
                if (!u_ispunct(normalized.char32At(prev))) {
                    break;
                }
                e = prev;
            }
            if (b == e) {
                continue;
            }
            icu::UnicodeString word(normalized, b, e - b);
            word.toLower(icu::Locale::getRoot());
            word = nfc->normalize(word, status);
            std::string surface;
            word.toUTF8String(surface);
            tokens.push_back(make_token(std::move(surface)));
        }
        return tokens;
    }

    /// Token for an already-normalized surface (e.g. read back from disk).
    [[nodiscard]] Token make_token(std::string surface) const
    {
        bool const stop = stopwords_->contains(surface);
        return Token{std::move(surface), stop};
    }

    [[nodiscard]] TokenSeq make_tokens(const std::vector<std::string>& surfaces) const
    {
        TokenSeq out;
        out.reserve(surfaces.size());
        for (auto const& s : surfaces) {
            out.push_back(make_token(s));
        }
        return out;
    }

    [[nodiscard]] const StopWords& stopwords() const { return *stopwords_; }

   private:
    static bool is_separator(UChar32 c) { return u_isUWhiteSpace(c) || u_iscntrl(c); }

    static icu::UnicodeString decode(std::string_view text, TokenizeStats* stats)
    {
        icu::UnicodeString out;
        auto const* s = reinterpret_cast<const uint8_t*>(text.data());
        auto const len = static_cast<int32_t>(text.size());
        int32_t i = 0;
        while (i < len) {
            UChar32 c = 0;
            U8_NEXT(s, i, len, c);
            if (c < 0) {
                c = 0xFFFD;
                if (stats != nullptr) {
                    ++stats->invalid_bytes;
                }
            }
            out.append(c);
        }
        return out;
    }

    std::shared_ptr<const StopWords> stopwords_;
};

/// Surfaces joined by single spaces.
[[nodiscard]] inline std::string join(const TokenSeq& tokens)
{
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) {
            out += ' ';
        }
        out += tokens[i].surface;
    }
    return out;
}

[[nodiscard]] inline std::vector<std::string> surfaces(const TokenSeq& tokens)
{
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (auto const& t : tokens) {
        out.push_back(t.surface);
    }
    return out;
}

class Vocabulary {
   public:
    static constexpr TokenId pad = 0;
    static constexpr TokenId cls = 1;
    static constexpr TokenId sep = 2;
    static constexpr TokenId unk = 3;
    static constexpr TokenId mask = 4;
    static constexpr std::size_t reserved_count = 5;

    // Brackets are punctuation, so the tokenizer can never emit these.
    static constexpr std::array<std::string_view, reserved_count> reserved_surfaces = {
        "[PAD]", "[CLS]", "[SEP]", "[UNK]", "[MASK]"};

    static bool is_reserved(std::string_view surface)
    {
        return std::find(reserved_surfaces.begin(), reserved_surfaces.end(), surface) != reserved_surfaces.end();
    }

    static Token special(TokenId id) { return Token{std::string(reserved_surfaces.at(id)), false}; }

    Vocabulary()
    {
        for (auto s : reserved_surfaces) {
            add(std::string(s));
        }
    }

    TokenId add(std::string surface)
    {
        auto [it, inserted] = ids_.emplace(surface, static_cast<TokenId>(surfaces_.size()));
        if (inserted) {
            surfaces_.push_back(std::move(surface));
        }
        return it->second;
    }

    [[nodiscard]] TokenId id(const std::string& surface) const
    {
        auto it = ids_.find(surface);
        return it == ids_.end() ? unk : it->second;
    }

    [[nodiscard]] bool contains(const std::string& surface) const { return ids_.count(surface) > 0; }

    [[nodiscard]] const std::string& surface(TokenId id) const { return surfaces_.at(static_cast<std::size_t>(id)); }

    [[nodiscard]] std::size_t size() const { return surfaces_.size(); }

    /// Maps tokens to ids; tokens outside the vocabulary become [UNK].
    [[nodiscard]] std::vector<TokenId> encode(const TokenSeq& tokens, std::size_t* unknown = nullptr) const
    {
        std::vector<TokenId> out;
        out.reserve(tokens.size());
        for (auto const& t : tokens) {
            auto const v = id(t.surface);
            if (v == unk && t.surface != reserved_surfaces[unk] && unknown != nullptr) {
                ++*unknown;
            }
            out.push_back(v);
        }
        return out;
    }

    /// Text format: a header row naming the reserved ids, then one
    /// `token<TAB>id` line per learned entry in id order.
    void write(std::ostream& out) const
    {
        out << "#spanret-vocab\tv1";
        for (std::size_t i = 0; i < reserved_count; ++i) {
            out << '\t' << reserved_surfaces[i] << '=' << i;
        }
        out << '\n';
        for (std::size_t i = reserved_count; i < surfaces_.size(); ++i) {
            out << surfaces_[i] << '\t' << i << '\n';
        }
    }

    static Vocabulary read(std::istream& in)
    {
        std::string line;
        if (!std::getline(in, line) || line.rfind("#spanret-vocab\tv1", 0) != 0) {
            throw Error(ErrorKind::version_mismatch, "vocabulary: missing or unsupported header");
        }
        Vocabulary v;
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            auto tab = line.rfind('\t');
            if (tab == std::string::npos) {
                throw Error(ErrorKind::malformed_input, "vocabulary line " + std::to_string(lineno) + ": missing tab");
            }
            auto expected = std::to_string(v.size());
            if (line.substr(tab + 1) != expected) {
                throw Error(ErrorKind::malformed_input,
                            "vocabulary line " + std::to_string(lineno) + ": ids must be dense and ordered");
            }
            v.add(line.substr(0, tab));
        }
        return v;
    }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.surfaces_ == b.surfaces_; }

   private:
    std::unordered_map<std::string, TokenId> ids_;
    std::vector<std::string> surfaces_;
};

/// Builds a vocabulary from token sequences: every surface seen at least
/// `min_count` times gets an id. Ids are assigned by descending frequency,
/// ties by surface, so the result is a pure function of the counts.
template <typename SeqRange>
Vocabulary build_vocab_from(const SeqRange& sequences, std::size_t min_count)
{
    std::map<std::string, std::size_t> counts;
    for (auto const& seq : sequences) {
        for (auto const& t : seq) {
            ++counts[t.surface];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [surface, n] : counts) {
        if (n >= min_count && !Vocabulary::is_reserved(surface)) {
            kept.emplace_back(surface, n);
        }
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](auto const& a, auto const& b) { return a.second > b.second; });
    Vocabulary v;
    for (auto& [surface, n] : kept) {
        v.add(surface);
    }
    return v;
}

} // namespace spanret
