#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "artifact.hpp"
#include "error.hpp"
#include "tokenizer.hpp"

namespace spanret {

struct Document {
    std::string doc_id;
    std::string title;
    std::string body;
};

struct Passage {
    std::string passage_id;
    std::string doc_id;
    std::string title;
    TokenSeq title_tokens;
    TokenSeq tokens;
    std::size_t position = 0;
};

/// Contiguous range [begin, end) of a document's passages in the corpus.
struct DocRange {
    std::string doc_id;
    std::size_t begin = 0;
    std::size_t end = 0;

    [[nodiscard]] std::size_t size() const { return end - begin; }
};

[[nodiscard]] inline std::string make_passage_id(const std::string& doc_id, std::size_t position)
{
    return doc_id + "#" + std::to_string(position);
}

/// Immutable once built; passages of a document are contiguous and in
/// position order.
class Corpus {
   public:
    /// Appends a document's passages. Throws on a duplicate doc id.
    void add_document(const std::string& doc_id, std::vector<Passage> passages)
    {
        if (doc_lookup_.count(doc_id) > 0) {
            throw Error(ErrorKind::duplicate_id, "duplicate doc_id: " + doc_id);
        }
        DocRange range{doc_id, passages_.size(), passages_.size() + passages.size()};
        for (auto& p : passages) {
            if (!passage_lookup_.emplace(p.passage_id, passages_.size()).second) {
                throw Error(ErrorKind::duplicate_id, "duplicate passage_id: " + p.passage_id);
            }
            passages_.push_back(std::move(p));
        }
        doc_lookup_.emplace(doc_id, docs_.size());
        docs_.push_back(std::move(range));
    }

    [[nodiscard]] std::size_t size() const { return passages_.size(); }
    [[nodiscard]] bool empty() const { return passages_.empty(); }
    [[nodiscard]] std::span<const Passage> passages() const { return passages_; }
    [[nodiscard]] const Passage& passage(std::size_t ordinal) const { return passages_.at(ordinal); }
    [[nodiscard]] std::span<const DocRange> documents() const { return docs_; }

    [[nodiscard]] std::optional<std::size_t> find_passage(const std::string& passage_id) const
    {
        auto it = passage_lookup_.find(passage_id);
        if (it == passage_lookup_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    [[nodiscard]] const DocRange* find_document(const std::string& doc_id) const
    {
        auto it = doc_lookup_.find(doc_id);
        return it == doc_lookup_.end() ? nullptr : &docs_[it->second];
    }

    [[nodiscard]] std::span<const Passage> document_passages(const DocRange& range) const
    {
        return std::span<const Passage>(passages_).subspan(range.begin, range.size());
    }

   private:
    std::vector<Passage> passages_;
    std::vector<DocRange> docs_;
    std::unordered_map<std::string, std::size_t> passage_lookup_;
    std::unordered_map<std::string, std::size_t> doc_lookup_;
};

struct IngestStats {
    std::size_t documents = 0;
    std::size_t passages = 0;
    std::size_t skipped_empty = 0;
    std::size_t invalid_bytes = 0;
};

/// Splits token sequence into consecutive blocks of `passage_size`; the last
/// block may be shorter.
[[nodiscard]] inline std::vector<Passage> chunk_document(const std::string& doc_id, const std::string& title,
                                                         const TokenSeq& title_tokens, const TokenSeq& body,
                                                         std::size_t passage_size)
{
    std::vector<Passage> out;
    for (std::size_t begin = 0, pos = 0; begin < body.size(); begin += passage_size, ++pos) {
        std::size_t const end = std::min(body.size(), begin + passage_size);
        Passage p;
        p.passage_id = make_passage_id(doc_id, pos);
        p.doc_id = doc_id;
        p.title = title;
        p.title_tokens = title_tokens;
        p.tokens.assign(body.begin() + static_cast<std::ptrdiff_t>(begin),
                        body.begin() + static_cast<std::ptrdiff_t>(end));
        p.position = pos;
        out.push_back(std::move(p));
    }
    return out;
}

/// Tokenizes and chunks documents. Documents whose body has no tokens are
/// skipped and counted.
[[nodiscard]] inline Corpus ingest(std::span<const Document> documents, const Tokenizer& tokenizer,
                                   std::size_t passage_size, IngestStats* stats = nullptr)
{
    if (passage_size == 0) {
        throw Error(ErrorKind::invalid_argument, "passage_size must be positive");
    }
    IngestStats local;
    Corpus corpus;
    for (auto const& doc : documents) {
        TokenizeStats ts;
        TokenSeq body = tokenizer.tokenize(doc.body, &ts);
        TokenSeq title = tokenizer.tokenize(doc.title, &ts);
        local.invalid_bytes += ts.invalid_bytes;
        if (corpus.find_document(doc.doc_id) != nullptr) {
            throw Error(ErrorKind::duplicate_id, "duplicate doc_id: " + doc.doc_id);
        }
        if (body.empty()) {
            ++local.skipped_empty;
            continue;
        }
        auto passages = chunk_document(doc.doc_id, doc.title, title, body, passage_size);
        local.passages += passages.size();
        ++local.documents;
        corpus.add_document(doc.doc_id, std::move(passages));
    }
    if (stats != nullptr) {
        *stats = local;
    }
    return corpus;
}

/// Reads documents from JSON lines with fields `id`, `title`, `text`.
/// Blank lines are ignored.
[[nodiscard]] inline std::vector<Document> read_documents_jsonl(std::istream& in)
{
    std::vector<Document> docs;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        auto where = [&] { return "line " + std::to_string(lineno) + ": "; };
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (nlohmann::json::exception const&) {
            throw Error(ErrorKind::malformed_input, where() + "not valid JSON");
        }
        if (!j.is_object()) {
            throw Error(ErrorKind::malformed_input, where() + "expected a JSON object");
        }
        for (auto const* key : {"id", "title", "text"}) {
            if (!j.contains(key) || !j[key].is_string()) {
                throw Error(ErrorKind::malformed_input, where() + "missing string field '" + key + "'");
            }
        }
        Document d{j["id"].get<std::string>(), j["title"].get<std::string>(), j["text"].get<std::string>()};
        if (!seen.insert(d.doc_id).second) {
            throw Error(ErrorKind::duplicate_id, where() + "duplicate doc_id: " + d.doc_id);
        }
        docs.push_back(std::move(d));
    }
    return docs;
}

inline void write_documents_jsonl(std::ostream& out, std::span<const Document> docs)
{
    for (auto const& d : docs) {
        nlohmann::json j;
        j["id"] = d.doc_id;
        j["title"] = d.title;
        j["text"] = d.body;
        out << j.dump() << '\n';
    }
}

/// Title tokens, [SEP], then the passage tokens. This is the text that gets
/// encoded and indexed for a passage.
[[nodiscard]] inline TokenSeq passage_text_with_title(const Passage& p)
{
    TokenSeq out;
    out.reserve(p.title_tokens.size() + 1 + p.tokens.size());
    out.insert(out.end(), p.title_tokens.begin(), p.title_tokens.end());
    out.push_back(Vocabulary::special(Vocabulary::sep));
    out.insert(out.end(), p.tokens.begin(), p.tokens.end());
    return out;
}

/// Every passage rendered with its title; the training and indexing input.
[[nodiscard]] inline std::vector<TokenSeq> titled_passages(const Corpus& corpus)
{
    std::vector<TokenSeq> out;
    out.reserve(corpus.size());
    for (auto const& p : corpus.passages()) {
        out.push_back(passage_text_with_title(p));
    }
    return out;
}

[[nodiscard]] inline Vocabulary build_vocab(const Corpus& corpus, std::size_t min_count)
{
    if (corpus.empty()) {
        throw Error(ErrorKind::invalid_argument, "cannot build a vocabulary from an empty corpus");
    }
    return build_vocab_from(titled_passages(corpus), min_count);
}

inline constexpr std::string_view kPassageMagic = "spanret-passages";
inline constexpr std::uint32_t kPassageVersion = 1;

inline void write_passages(std::ostream& out, const Corpus& corpus, const ArtifactHeader& header)
{
    out << header_to_json(kPassageMagic, kPassageVersion, header).dump() << '\n';
    for (auto const& p : corpus.passages()) {
        nlohmann::json j;
        j["passage_id"] = p.passage_id;
        j["doc_id"] = p.doc_id;
        j["position"] = p.position;
        j["title"] = p.title;
        j["title_tokens"] = surfaces(p.title_tokens);
        j["tokens"] = surfaces(p.tokens);
        out << j.dump() << '\n';
    }
}

struct PassageFile {
    ArtifactHeader header;
    Corpus corpus;
};

[[nodiscard]] inline PassageFile read_passages(std::istream& in, const Tokenizer& tokenizer)
{
    PassageFile file;
    file.header = read_jsonl_header(in, kPassageMagic, kPassageVersion);
    std::string line;
    std::size_t lineno = 1;
    std::string current_doc;
    std::vector<Passage> pending;
    auto flush = [&] {
        if (!pending.empty()) {
            file.corpus.add_document(current_doc, std::move(pending));
            pending.clear();
        }
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            auto j = nlohmann::json::parse(line);
            Passage p;
            p.passage_id = j.at("passage_id").get<std::string>();
            p.doc_id = j.at("doc_id").get<std::string>();
            p.position = j.at("position").get<std::size_t>();
            p.title = j.at("title").get<std::string>();
            p.title_tokens = tokenizer.make_tokens(j.at("title_tokens").get<std::vector<std::string>>());
            p.tokens = tokenizer.make_tokens(j.at("tokens").get<std::vector<std::string>>());
            if (p.doc_id != current_doc) {
                flush();
                current_doc = p.doc_id;
            }
            pending.push_back(std::move(p));
        } catch (nlohmann::json::exception const& e) {
            throw Error(ErrorKind::malformed_input, "passages line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    flush();
    return file;
}

} // namespace spanret
