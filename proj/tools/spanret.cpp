// spanret: command-line front end for the retrieval pipeline.
//
// Every configuration key is also a flag (`--peak-lr 3e-4`); precedence is
// built-in defaults, then `--config FILE`, then flags.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include <spanret/dense_index.hpp>
#include <spanret/evalkit.hpp>
#include <spanret/hybrid.hpp>
#include <spanret/run_config.hpp>
#include <spanret/sparse_index.hpp>
#include <spanret/span_miner.hpp>
#include <spanret/synth.hpp>
#include <spanret/threads.hpp>
#include <spanret/trainer.hpp>

using namespace spanret;
using Scalar = float;

namespace {

void log(const char* fmt, auto... args)
{
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
}

std::string dashed(std::string_view key)
{
    std::string s(key);
    std::replace(s.begin(), s.end(), '_', '-');
    return s;
}

/// Snapshot of the keys a stage depends on; its hash identifies the stage
/// configuration.
ArtifactHeader stage_header(const RunConfig& cfg, std::initializer_list<std::string_view> keys,
                            std::vector<std::string> upstream)
{
    auto const all = cfg.to_map();
    nlohmann::json snapshot = nlohmann::json::object();
    for (auto k : keys) {
        snapshot[std::string(k)] = all.at(std::string(k));
    }
    return ArtifactHeader{fnv1a_hex(snapshot.dump()), std::move(upstream), snapshot};
}

Tokenizer make_tokenizer(const RunConfig& cfg)
{
    if (cfg.stopwords.empty()) {
        return Tokenizer{};
    }
    auto in = open_input(cfg.stopwords);
    return Tokenizer(StopWords::read(in));
}

PassageFile load_passages(const RunConfig& cfg, const Tokenizer& tok)
{
    auto in = open_input(cfg.passages);
    return read_passages(in, tok);
}

/// Downstream artifacts name the passages file they were built from; mixing
/// files from different runs is refused.
void require_upstream(const ArtifactHeader& artifact, const ArtifactHeader& source, const std::string& what)
{
    auto const want = source.lineage_hash();
    if (std::find(artifact.upstream.begin(), artifact.upstream.end(), want) == artifact.upstream.end()) {
        throw Error(ErrorKind::version_mismatch, what + " was not built from the current passages file");
    }
}

Checkpoint<Scalar> load_checkpoint(const RunConfig& cfg)
{
    auto in = open_input(cfg.checkpoint, true);
    return read_checkpoint<Scalar>(in);
}

EncoderConfig encoder_config(const RunConfig& cfg, std::size_t vocab_size)
{
    EncoderConfig e;
    e.vocab_size = vocab_size;
    e.dim = cfg.dim;
    e.layers = cfg.layers;
    e.heads = cfg.heads;
    e.ffn_dim = cfg.ffn_dim;
    e.max_seq_len = cfg.max_seq_len;
    e.dropout = cfg.dropout;
    e.init_std = cfg.init_std;
    return e;
}

void cmd_synth(const RunConfig& cfg)
{
    SynthConfig sc;
    sc.docs = cfg.synth_docs;
    sc.entities = cfg.synth_entities;
    sc.seed = cfg.synth_seed;
    auto corpus = synth(sc);
    auto docs = open_output(cfg.documents);
    write_documents_jsonl(docs, corpus.documents);
    auto qa = open_output(cfg.qa);
    write_qa_jsonl(qa, corpus.qa);
    log("synth: %zu documents, %zu questions -> %s, %s", corpus.documents.size(), corpus.qa.size(),
        cfg.documents.c_str(), cfg.qa.c_str());
}

void cmd_ingest(const RunConfig& cfg)
{
    auto tok = make_tokenizer(cfg);
    auto in = open_input(cfg.documents);
    auto docs = read_documents_jsonl(in);
    IngestStats stats;
    auto corpus = ingest(docs, tok, cfg.passage_size, &stats);
    auto out = open_output(cfg.passages);
    write_passages(out, corpus, stage_header(cfg, {"passage_size", "stopwords"}, {}));
    log("ingest: %zu documents, %zu passages, %zu empty skipped, %zu invalid bytes replaced", stats.documents,
        stats.passages, stats.skipped_empty, stats.invalid_bytes);
}

void cmd_mine(const RunConfig& cfg)
{
    auto tok = make_tokenizer(cfg);
    auto pf = load_passages(cfg, tok);
    auto result = mine_corpus(pf.corpus, MinerConfig{cfg.min_span, cfg.max_span}, worker_count());
    auto out = open_output(cfg.spans);
    write_span_store(out, result.store, stage_header(cfg, {"min_span", "max_span"}, {pf.header.lineage_hash()}));
    auto const& s = result.stats;
    log("mine: %zu spans in %zu documents (candidates %zu, stop-word only %zu, non-maximal %zu)",
        result.store.span_count(), result.store.documents().size(), s.cross_passage, s.rejected_stopwords,
        s.rejected_non_maximal);
}

void cmd_generate(const RunConfig& cfg)
{
    auto tok = make_tokenizer(cfg);
    auto pf = load_passages(cfg, tok);
    auto in = open_input(cfg.spans);
    auto sf = read_span_store(in, tok);
    require_upstream(sf.header, pf.header, cfg.spans);
    GenerateConfig g;
    g.mode = parse_transform_mode(cfg.transform);
    g.negatives = cfg.negatives;
    g.per_doc_cap = cfg.per_doc_cap;
    g.seed = cfg.generate_seed;
    g.epochs = cfg.epochs;
    g.window = WindowBounds{cfg.window_min, cfg.window_max};
    g.keep_probability = cfg.keep_probability;
    GenerateStats stats;
    auto examples = generate(pf.corpus, sf.store, g, &stats);
    auto out = open_output(cfg.examples);
    write_examples(out, examples,
                   stage_header(cfg,
                                {"transform", "negatives", "per_doc_cap", "epochs", "generate_seed", "window_min",
                                 "window_max", "keep_probability"},
                                {pf.header.lineage_hash(), sf.header.lineage_hash()}));
    log("generate: %zu examples (no negative %zu, no query %zu)", stats.emitted, stats.skipped_no_negative,
        stats.skipped_no_query);
}

void cmd_train(const RunConfig& cfg, bool resume)
{
    auto tok = make_tokenizer(cfg);
    auto pf = load_passages(cfg, tok);
    auto in = open_input(cfg.examples);
    auto ef = read_examples(in, tok);
    require_upstream(ef.header, pf.header, cfg.examples);

    auto header = stage_header(cfg,
                               {"min_count", "dim", "layers", "heads", "ffn_dim", "max_seq_len", "dropout",
                                "init_std", "init_seed", "batch_size", "steps", "peak_lr", "warmup_fraction",
                                "train_seed", "negatives"},
                               {pf.header.lineage_hash(), ef.header.lineage_hash()});

    std::optional<Checkpoint<Scalar>> ckpt;
    if (resume) {
        ckpt = load_checkpoint(cfg);
        if (ckpt->header.config_hash != header.config_hash || ckpt->header.upstream != header.upstream) {
            throw Error(ErrorKind::version_mismatch, "resume: checkpoint was written by a different configuration");
        }
        log("train: resuming from step %zu", ckpt->optimizer.step);
    }
    Vocabulary vocab = ckpt ? ckpt->vocab : build_vocab(pf.corpus, cfg.min_count);
    EncoderModel<Scalar> model =
        ckpt ? ckpt->model : EncoderModel<Scalar>(encoder_config(cfg, vocab.size()), cfg.init_seed);
    OptimizerState<Scalar> optimizer = ckpt ? ckpt->optimizer : OptimizerState<Scalar>{};
    {
        auto vout = open_output(cfg.vocab);
        vocab.write(vout);
    }

    auto data = make_training_data(pf.corpus, vocab, ef.examples);
    TrainConfig tc;
    tc.batch_size = cfg.batch_size;
    tc.total_steps = cfg.steps;
    tc.peak_lr = cfg.peak_lr;
    tc.warmup_fraction = cfg.warmup_fraction;
    tc.negatives = cfg.negatives;
    tc.seed = cfg.train_seed;
    tc.log_interval = cfg.log_interval;
    tc.checkpoint_interval = cfg.checkpoint_interval;
    tc.threads = worker_count();
    log("train: %zu examples, %zu passages, vocab %zu, %zu parameters, %zu steps", data.items.size(),
        data.passages.size(), vocab.size(), model.layout().total(), cfg.steps);

    auto save = [&](const EncoderModel<Scalar>& m, const OptimizerState<Scalar>& o) {
        // Write then rename so an interrupted save never clobbers the last good checkpoint.
        auto const tmp = cfg.checkpoint + ".tmp";
        {
            auto out = open_output(tmp, true);
            write_checkpoint(out, m, vocab, o, header);
        }
        std::filesystem::rename(tmp, cfg.checkpoint);
    };
    TrainResult result;
    try {
        result = train(model, optimizer, data, tc, save);
    } catch (Error const& e) {
        if (e.kind() == ErrorKind::numeric) {
            log("train: %s; last good state restored", e.what());
        }
        throw;
    }
    auto mout = open_output(cfg.metrics);
    write_metrics_csv(mout, result.metrics);
    if (!result.metrics.empty()) {
        auto const& last = result.metrics.back();
        log("train: step %zu loss %.4f in-batch top1 %.3f -> %s", last.step, last.loss, last.top1,
            cfg.checkpoint.c_str());
    }
}

void cmd_index_sparse(const RunConfig& cfg)
{
    auto tok = make_tokenizer(cfg);
    auto pf = load_passages(cfg, tok);
    auto idx = SparseIndex::build(pf.corpus, Bm25Params{cfg.bm25_k1, cfg.bm25_b});
    auto out = open_output(cfg.sparse_index, true);
    idx.write(out, stage_header(cfg, {"bm25_k1", "bm25_b"}, {pf.header.lineage_hash()}));
    log("index-sparse: %zu passages, %zu terms, avg length %.1f", idx.size(), idx.term_count(), idx.avg_length());
}

void cmd_index_dense(const RunConfig& cfg)
{
    auto tok = make_tokenizer(cfg);
    auto pf = load_passages(cfg, tok);
    auto ck = load_checkpoint(cfg);
    DenseBuildStats stats;
    auto idx = DenseIndex<Scalar>::build(ck.model, pf.corpus, ck.vocab, worker_count(), &stats);
    auto out = open_output(cfg.dense_index, true);
    idx.write(out, stage_header(cfg, {}, {pf.header.lineage_hash(), ck.header.lineage_hash()}));
    log("index-dense: %zu passages, dim %zu, %zu truncated, %zu unknown tokens", idx.size(), idx.dim(),
        stats.truncated, stats.unknown_tokens);
}

/// The loaded retrieval stack for search and eval.
struct Stack {
    Tokenizer tok;
    std::optional<PassageFile> passages;
    std::optional<SparseIndex> sparse;
    std::optional<Checkpoint<Scalar>> ckpt;
    std::optional<DenseIndex<Scalar>> dense;
    HybridConfig hybrid;
    std::string mode;

    Stack(const RunConfig& cfg, std::string mode_, bool need_passages)
        : tok(make_tokenizer(cfg)), hybrid{cfg.k, cfg.k_prime, cfg.alpha}, mode(std::move(mode_))
    {
        if (mode != "dense" && mode != "sparse" && mode != "hybrid") {
            throw Error(ErrorKind::invalid_argument, "--mode must be dense, sparse or hybrid");
        }
        if (mode == "hybrid") {
            hybrid.validate();
        }
        if (need_passages) {
            passages = load_passages(cfg, tok);
        }
        ArtifactHeader sparse_header;
        ArtifactHeader dense_header;
        if (mode != "dense") {
            auto in = open_input(cfg.sparse_index, true);
            sparse = SparseIndex::read(in, &sparse_header);
        }
        if (mode != "sparse") {
            ckpt = load_checkpoint(cfg);
            auto in = open_input(cfg.dense_index, true);
            dense = DenseIndex<Scalar>::read(in, &dense_header);
            if (dense->fingerprint() != ckpt->model.fingerprint()) {
                throw Error(ErrorKind::version_mismatch, "dense index was built with a different checkpoint");
            }
        }
        if (passages) {
            if (sparse) {
                require_upstream(sparse_header, passages->header, cfg.sparse_index);
            }
            if (dense) {
                require_upstream(dense_header, passages->header, cfg.dense_index);
            }
        } else if (sparse && dense && sparse_header.upstream.at(0) != dense_header.upstream.at(0)) {
            throw Error(ErrorKind::version_mismatch, "sparse and dense indexes cover different passages files");
        }
    }

    [[nodiscard]] std::vector<ScoredHit> search(const std::string& query, std::size_t k) const
    {
        auto const tokens = tok.tokenize(query);
        if (mode == "sparse") {
            return sparse->search(tokens, k);
        }
        if (mode == "dense") {
            return dense->search(ckpt->model, ckpt->vocab.encode(tokens), k);
        }
        HybridConfig h = hybrid;
        h.k = k;
        h.k_prime = std::max(hybrid.k_prime, k);
        return fuse(dense->search(ckpt->model, ckpt->vocab.encode(tokens), h.k_prime),
                    sparse->search(tokens, h.k_prime), h);
    }
};

void cmd_search(const RunConfig& cfg, const std::string& mode, const std::vector<std::string>& queries)
{
    Stack stack(cfg, mode, false);
    for (auto const& q : queries) {
        auto hits = stack.search(q, cfg.k);
        for (std::size_t i = 0; i < hits.size(); ++i) {
            std::cout << nlohmann::json{{"query", q}, {"rank", i + 1}, {"passage_id", hits[i].passage_id},
                                        {"score", hits[i].score}}
                             .dump()
                      << '\n';
        }
    }
}

void write_report(const RunConfig& cfg, const EvalReport& report)
{
    auto out = open_output(cfg.report);
    out << report.to_json().dump(2) << '\n';
    auto ranks = open_output(cfg.ranks);
    report.write_ranks_csv(ranks);
    std::cout << report.to_json().dump() << '\n';
}

void cmd_eval(const RunConfig& cfg, const std::string& mode)
{
    Stack stack(cfg, mode, true);
    auto in = open_input(cfg.qa);
    auto qa = read_qa_jsonl(in, stack.tok);
    nlohmann::json snapshot{{"mode", mode}, {"k_prime", cfg.k_prime}, {"alpha", cfg.alpha},
                            {"bm25_k1", cfg.bm25_k1}, {"bm25_b", cfg.bm25_b}};
    Retriever r = [&](const std::string& q, std::size_t k) { return stack.search(q, k); };
    auto report = evaluate(r, stack.passages->corpus, stack.tok, qa, cfg.eval_ks, mode, snapshot, worker_count());
    if (report.failed_count > 0) {
        log("eval: %zu of %zu questions failed and are excluded from accuracy", report.failed_count, qa.size());
    }
    write_report(cfg, report);
}

void cmd_pseudo_eval(const RunConfig& cfg)
{
    auto tok = make_tokenizer(cfg);
    auto pf = load_passages(cfg, tok);
    auto in = open_input(cfg.examples);
    auto ef = read_examples(in, tok);
    auto ck = load_checkpoint(cfg);
    auto din = open_input(cfg.dense_index, true);
    auto dense = DenseIndex<Scalar>::read(din);
    auto report = pseudo_eval(ck.model, dense, pf.corpus, ck.vocab, ef.examples, cfg.eval_ks, worker_count());
    report.config = nlohmann::json{{"examples", cfg.examples}};
    write_report(cfg, report);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"spanret: self-supervised passage retrieval from recurring spans"};
    app.require_subcommand(1);
    app.fallthrough();

    RunConfig defaults;
    std::string config_path;
    std::map<std::string, std::string> overrides;
    app.add_option("--config", config_path, "key = value file; flags override it");
    RunConfig::visit(defaults, [&](std::string_view key, auto const&) {
        std::string const k(key);
        app.add_option_function<std::string>(
               "--" + dashed(key), [&overrides, k](const std::string& v) { overrides[k] = v; },
               "default: " + defaults.to_map().at(k))
            ->group("Configuration");
    });

    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic corpus and QA set");
    for (auto [flag, key] : {std::pair{"--docs", "synth_docs"}, {"--entities", "synth_entities"}, {"--seed", "synth_seed"}}) {
        synth_cmd->add_option_function<std::string>(
            flag, [&overrides, k = std::string(key)](const std::string& v) { overrides[k] = v; },
            std::string("same as --") + dashed(key));
    }
    auto* ingest_cmd =app.add_subcommand("ingest", "tokenize and chunk documents into passages");
    auto* mine_cmd = app.add_subcommand("mine", "find recurring spans within each document");
    auto* generate_cmd = app.add_subcommand("generate", "sample pseudo (query, positive, negative) examples");
    auto* train_cmd = app.add_subcommand("train", "train the dual encoder");
    bool resume = false;
    train_cmd->add_flag("--resume", resume, "continue from the checkpoint file");
    auto* sparse_cmd = app.add_subcommand("index-sparse", "build the BM25 index");
    auto* dense_cmd = app.add_subcommand("index-dense", "encode all passages with the checkpoint");
    auto* search_cmd = app.add_subcommand("search", "retrieve passages for queries (JSON lines on stdout)");
    std::string mode = "dense";
    std::vector<std::string> queries;
    search_cmd->add_option("--mode", mode, "dense, sparse or hybrid")->check(CLI::IsMember({"dense", "sparse", "hybrid"}));
    search_cmd->add_option("query", queries, "query text")->required();
    auto* eval_cmd = app.add_subcommand("eval", "top-k answer accuracy on a QA set");
    eval_cmd->add_option("--mode", mode, "dense, sparse or hybrid")->check(CLI::IsMember({"dense", "sparse", "hybrid"}));
    bool pseudo = false;
    eval_cmd->add_flag("--pseudo", pseudo, "rank the positive passage of each pseudo example instead (dense)");

    try {
        app.parse(argc, argv);
    } catch (CLI::ParseError const& e) {
        int const code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) {
            auto in = open_input(config_path);
            cfg = RunConfig::read(in);
        }
        for (auto const& [k, v] : overrides) {
            cfg.set(k, v);
        }

        if (synth_cmd->parsed()) {
            cmd_synth(cfg);
        } else if (ingest_cmd->parsed()) {
            cmd_ingest(cfg);
        } else if (mine_cmd->parsed()) {
            cmd_mine(cfg);
        } else if (generate_cmd->parsed()) {
            cmd_generate(cfg);
        } else if (train_cmd->parsed()) {
            cmd_train(cfg, resume);
        } else if (sparse_cmd->parsed()) {
            cmd_index_sparse(cfg);
        } else if (dense_cmd->parsed()) {
            cmd_index_dense(cfg);
        } else if (search_cmd->parsed()) {
            cmd_search(cfg, mode, queries);
        } else if (eval_cmd->parsed()) {
            pseudo ? cmd_pseudo_eval(cfg) : cmd_eval(cfg, mode);
        }
    } catch (Error const& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code(e.kind());
    } catch (std::filesystem::filesystem_error const& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code(ErrorKind::io);
    } catch (std::exception const& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
