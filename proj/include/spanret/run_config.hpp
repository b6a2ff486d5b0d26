#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "hash.hpp"

namespace spanret {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds and counts share one parser");

/// Every knob of the pipeline in one record. Stored as flat `key = value`
/// text; `#` starts a comment line. Unknown keys are rejected.
struct RunConfig {
    // files
    std::string documents = "documents.jsonl";
    std::string passages = "passages.jsonl";
    std::string spans = "spans.jsonl";
    std::string examples = "examples.jsonl";
    std::string vocab = "vocab.tsv";
    std::string checkpoint = "model.ckpt";
    std::string metrics = "metrics.csv";
    std::string sparse_index = "bm25.idx";
    std::string dense_index = "dense.idx";
    std::string qa = "qa.jsonl";
    std::string report = "report.json";
    std::string ranks = "ranks.csv";
    std::string stopwords;

    // corpus / tokenizer
    std::size_t passage_size = 100;
    std::size_t min_count = 2;

    // mining
    std::size_t min_span = 2;
    std::size_t max_span = 10;

    // example generation
    std::string transform = "window_alternate";
    bool negatives = true;
    std::size_t per_doc_cap = 1;
    std::size_t epochs = 1;
    std::uint64_t generate_seed = 0;
    std::size_t window_min = 5;
    std::size_t window_max = 30;
    double keep_probability = 0.5;

    // encoder
    std::size_t dim = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_dim = 256;
    std::size_t max_seq_len = 128;
    double dropout = 0.1;
    double init_std = 0.02;
    std::uint64_t init_seed = 0;

    // training
    std::size_t batch_size = 32;
    std::size_t steps = 1000;
    double peak_lr = 1e-3;
    double warmup_fraction = 0.01;
    std::uint64_t train_seed = 0;
    std::size_t log_interval = 10;
    std::size_t checkpoint_interval = 0;

    // retrieval
    double bm25_k1 = 0.9;
    double bm25_b = 0.4;
    std::size_t k = 20;
    std::size_t k_prime = 1000;
    double alpha = 1.0;
    std::vector<std::size_t> eval_ks{1, 5, 20, 100};

    // synthetic corpus
    std::size_t synth_docs = 200;
    std::size_t synth_entities = 40;
    std::uint64_t synth_seed = 7;

    template <typename Self, typename F>
    static void visit(Self& c, F&& f)
    {
        f("documents", c.documents);
        f("passages", c.passages);
        f("spans", c.spans);
        f("examples", c.examples);
        f("vocab", c.vocab);
        f("checkpoint", c.checkpoint);
        f("metrics", c.metrics);
        f("sparse_index", c.sparse_index);
        f("dense_index", c.dense_index);
        f("qa", c.qa);
        f("report", c.report);
        f("ranks", c.ranks);
        f("stopwords", c.stopwords);
        f("passage_size", c.passage_size);
        f("min_count", c.min_count);
        f("min_span", c.min_span);
        f("max_span", c.max_span);
        f("transform", c.transform);
        f("negatives", c.negatives);
        f("per_doc_cap", c.per_doc_cap);
        f("epochs", c.epochs);
        f("generate_seed", c.generate_seed);
        f("window_min", c.window_min);
        f("window_max", c.window_max);
        f("keep_probability", c.keep_probability);
        f("dim", c.dim);
        f("layers", c.layers);
        f("heads", c.heads);
        f("ffn_dim", c.ffn_dim);
        f("max_seq_len", c.max_seq_len);
        f("dropout", c.dropout);
        f("init_std", c.init_std);
        f("init_seed", c.init_seed);
        f("batch_size", c.batch_size);
        f("steps", c.steps);
        f("peak_lr", c.peak_lr);
        f("warmup_fraction", c.warmup_fraction);
        f("train_seed", c.train_seed);
        f("log_interval", c.log_interval);
        f("checkpoint_interval", c.checkpoint_interval);
        f("bm25_k1", c.bm25_k1);
        f("bm25_b", c.bm25_b);
        f("k", c.k);
        f("k_prime", c.k_prime);
        f("alpha", c.alpha);
        f("eval_ks", c.eval_ks);
        f("synth_docs", c.synth_docs);
        f("synth_entities", c.synth_entities);
        f("synth_seed", c.synth_seed);
    }

    /// Sets one key from its text form.
    void set(const std::string& key, const std::string& value)
    {
        bool found = false;
        visit(*this, [&](std::string_view name, auto& field) {
            if (name == key) {
                found = true;
                parse_value(key, value, field);
            }
        });
        if (!found) {
            throw Error(ErrorKind::invalid_argument, "unknown config key: " + key);
        }
    }

    [[nodiscard]] std::map<std::string, std::string> to_map() const
    {
        std::map<std::string, std::string> out;
        visit(*this, [&](std::string_view name, auto const& field) { out[std::string(name)] = format_value(field); });
        return out;
    }

    /// Canonical text, one key per line in declaration order.
    void write(std::ostream& out) const
    {
        visit(*this, [&](std::string_view name, auto const& field) {
            out << name << " = " << format_value(field) << '\n';
        });
    }

    [[nodiscard]] std::string text() const
    {
        std::ostringstream out;
        write(out);
        return out.str();
    }

    [[nodiscard]] std::string hash() const { return fnv1a_hex(text()); }

    static RunConfig read(std::istream& in)
    {
        RunConfig c;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            auto const b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos || line[b] == '#') {
                continue;
            }
            auto const eq = line.find('=');
            if (eq == std::string::npos) {
                throw Error(ErrorKind::malformed_input, "config line " + std::to_string(line_no) + ": expected key = value");
            }
            try {
                c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
            } catch (Error const& e) {
                throw Error(e.kind(), "config line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        return c;
    }

    bool operator==(const RunConfig& other) const { return text() == other.text(); }

    static std::string format_value(const std::string& v) { return v; }
    static std::string format_value(bool v) { return v ? "true" : "false"; }
    static std::string format_value(std::size_t v) { return std::to_string(v); }
    static std::string format_value(double v)
    {
        // Shortest text that reads back to the same double.
        char buf[64];
        auto r = std::to_chars(buf, buf + sizeof(buf), v);
        return std::string(buf, r.ptr);
    }
    static std::string format_value(const std::vector<std::size_t>& v)
    {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            s += (i == 0 ? "" : ",") + std::to_string(v[i]);
        }
        return s;
    }

   private:
    static std::string trim(const std::string& s)
    {
        auto const b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) {
            return {};
        }
        auto const e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    [[noreturn]] static void bad(const std::string& key, const std::string& value)
    {
        throw Error(ErrorKind::invalid_argument, "bad value for " + key + ": '" + value + "'");
    }

    template <typename U>
    static U parse_number(const std::string& key, const std::string& value)
    {
        U out{};
        auto const* end = value.data() + value.size();
        auto r = std::from_chars(value.data(), end, out);
        if (r.ec != std::errc() || r.ptr != end) {
            bad(key, value);
        }
        return out;
    }

    static void parse_value(const std::string&, const std::string& value, std::string& field) { field = value; }

    static void parse_value(const std::string& key, const std::string& value, bool& field)
    {
        if (value == "true" || value == "1") {
            field = true;
        } else if (value == "false" || value == "0") {
            field = false;
        } else {
            bad(key, value);
        }
    }

    static void parse_value(const std::string& key, const std::string& value, std::size_t& field)
    {
        field = parse_number<std::size_t>(key, value);
    }

    static void parse_value(const std::string& key, const std::string& value, double& field)
    {
        field = parse_number<double>(key, value);
    }

    static void parse_value(const std::string& key, const std::string& value, std::vector<std::size_t>& field)
    {
        field.clear();
        std::size_t pos = 0;
        while (pos <= value.size()) {
            auto comma = value.find(',', pos);
            if (comma == std::string::npos) {
                comma = value.size();
            }
            field.push_back(parse_number<std::size_t>(key, trim(value.substr(pos, comma - pos))));
            pos = comma + 1;
        }
    }
};

} // namespace spanret
