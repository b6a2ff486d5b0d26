#include <gtest/gtest.h>

#include <sstream>

#include <spanret/corpus.hpp>

using namespace spanret;

namespace {

std::string n_words(std::size_t n, const std::string& stem = "w")
{
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
        s += (i ? " " : "") + stem + std::to_string(i);
    }
    return s;
}

} // namespace

TEST(Chunk, GreedyBlocksWithShortTail)
{
    Tokenizer tok;
    std::vector<Document> docs{{"a", "A", n_words(250)}, {"b", "B", n_words(100)}};
    auto c = ingest(docs, tok, 100);
    ASSERT_EQ(c.size(), 4u);
    EXPECT_EQ(c.passage(0).tokens.size(), 100u);
    EXPECT_EQ(c.passage(1).tokens.size(), 100u);
    EXPECT_EQ(c.passage(2).tokens.size(), 50u);
    EXPECT_EQ(c.passage(3).tokens.size(), 100u);
    EXPECT_EQ(c.passage(3).position, 0u);
    EXPECT_EQ(c.passage(2).passage_id, make_passage_id("a", 2));
}

TEST(Chunk, MatchesIndependentChunkingOracle)
{
    Tokenizer tok;
    std::vector<Document> docs{{"x", "First", "One two, three. Four five six seven eight nine ten eleven"},
                               {"y", "Second", "alpha beta"},
                               {"z", "Third", "a b c d e f g h i j k l m n o p q"}};
    for (std::size_t size : {1, 3, 4, 7, 50}) {
        auto c = ingest(docs, tok, size);
        std::size_t expected = 0;
        for (auto const& d : docs) {
            // Count whitespace-separated words that keep a non-punctuation
            // character; every sample word does.
            std::istringstream in(d.body);
            std::size_t words = 0;
            for (std::string w; in >> w;) {
                ++words;
            }
            expected += (words + size - 1) / size;
        }
        EXPECT_EQ(c.size(), expected) << "passage_size=" << size;
    }
}

TEST(Chunk, PassagesPartitionTheBody)
{
    Tokenizer tok;
    std::vector<Document> docs{{"d", "T", n_words(37)}};
    auto c = ingest(docs, tok, 8);
    TokenSeq joined;
    for (auto const& p : c.passages()) {
        joined.insert(joined.end(), p.tokens.begin(), p.tokens.end());
    }
    EXPECT_EQ(surfaces(joined), surfaces(tok.tokenize(docs[0].body)));
    auto const& range = c.documents()[0];
    EXPECT_EQ(range.begin, 0u);
    EXPECT_EQ(range.end, c.size());
}

TEST(Ingest, ErrorsAndSkips)
{
    Tokenizer tok;
    std::vector<Document> dup{{"a", "", "x"}, {"a", "", "y"}};
    try {
        (void)ingest(dup, tok, 5);
        FAIL();
    } catch (Error const& e) {
        EXPECT_EQ(e.kind(), ErrorKind::duplicate_id);
        EXPECT_NE(std::string(e.what()).find("a"), std::string::npos);
    }
    std::vector<Document> docs{{"a", "", "   "}, {"b", "", "!!"}, {"c", "", "real text"}};
    IngestStats stats;
    auto c = ingest(docs, tok, 5, &stats);
    EXPECT_EQ(c.size(), 1u);
    EXPECT_EQ(stats.skipped_empty, 2u);
    EXPECT_THROW((void)ingest(docs, tok, 0), Error);
}

TEST(Ingest, ReadJsonlReportsLineNumbers)
{
    std::istringstream ok(R"({"id":"1","title":"T","text":"hello world"}
{"id":"2","title":"U","text":"more"}
)");
    auto docs = read_documents_jsonl(ok);
    ASSERT_EQ(docs.size(), 2u);
    EXPECT_EQ(docs[1].doc_id, "2");

    std::istringstream bad(R"({"id":"1","title":"T","text":"x"}
{"id":"2","text":"missing title"}
)");
    try {
        (void)read_documents_jsonl(bad);
        FAIL();
    } catch (Error const& e) {
        EXPECT_EQ(e.kind(), ErrorKind::malformed_input);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}

TEST(Ingest, DeterministicPassageFile)
{
    Tokenizer tok;
    std::vector<Document> docs{{"d1", "Title One", n_words(23)}, {"d2", "", n_words(5)}};
    std::string first;
    for (int run = 0; run < 2; ++run) {
        auto c = ingest(docs, tok, 10);
        std::ostringstream out;
        write_passages(out, c, ArtifactHeader{"h", {}, {}});
        if (run == 0) {
            first = out.str();
        } else {
            EXPECT_EQ(out.str(), first);
        }
    }
    std::istringstream in(first);
    auto file = read_passages(in, tok);
    EXPECT_EQ(file.corpus.size(), 4u);
    EXPECT_EQ(file.header.config_hash, "h");
    EXPECT_EQ(surfaces(file.corpus.passage(0).title_tokens), (std::vector<std::string>{"title", "one"}));
}

TEST(Ingest, PassageFileVersionIsChecked)
{
    Tokenizer tok;
    std::istringstream wrong(R"({"magic":"spanret-passages","version":99})" "\n");
    try {
        (void)read_passages(wrong, tok);
        FAIL();
    } catch (Error const& e) {
        EXPECT_EQ(e.kind(), ErrorKind::version_mismatch);
    }
}

TEST(PassageText, TitleSeparatorBody)
{
    Tokenizer tok;
    Passage p{"d#0", "d", "Aaron", tok.tokenize("Aaron"), tok.tokenize("a b"), 0};
    EXPECT_EQ(surfaces(passage_text_with_title(p)), (std::vector<std::string>{"aaron", "[SEP]", "a", "b"}));
    p.title_tokens.clear();
    EXPECT_EQ(surfaces(passage_text_with_title(p)), (std::vector<std::string>{"[SEP]", "a", "b"}));
    EXPECT_EQ(passage_text_with_title(p).size(), 0 + 1 + p.tokens.size());
}
