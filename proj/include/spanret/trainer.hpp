#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <type_traits>
#include <string>
#include <vector>

#include "artifact.hpp"
#include "contrastive.hpp"
#include "corpus.hpp"
#include "encoder.hpp"
#include "error.hpp"
#include "example_gen.hpp"
#include "rng.hpp"
#include "tokenizer.hpp"

namespace spanret {

/// Linear warmup to the peak over the first warmup_fraction of steps, then
/// linear decay to zero at total_steps. Steps are numbered from 1.
struct LrSchedule {
    double peak_lr = 2e-5;
    double warmup_fraction = 0.01;
    std::size_t total_steps = 1;

    [[nodiscard]] std::size_t warmup_steps() const
    {
        return static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
    }

    [[nodiscard]] double at(std::size_t step) const
    {
        std::size_t const warmup = warmup_steps();
        if (step == 0) {
            return 0.0;
        }
        if (step <= warmup) {
            return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
        }
        if (step >= total_steps) {
            return 0.0;
        }
        return peak_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
    }
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
struct OptimizerState {
    std::size_t step = 0;
    std::vector<T> first_moment;
    std::vector<T> second_moment;
    LrSchedule schedule;
    AdamConfig adam;

    OptimizerState() = default;
    OptimizerState(std::size_t parameter_count, LrSchedule s, AdamConfig a = {})
        : first_moment(parameter_count, T(0)), second_moment(parameter_count, T(0)), schedule(s), adam(a)
    {
    }
};

/// One bias-corrected Adam update at the scheduled learning rate; returns
/// the rate used.
template <typename T>
double adam_step(std::span<T> params, std::span<const T> grad, OptimizerState<T>& state)
{
    if (params.size() != grad.size() || state.first_moment.size() != params.size()) {
        throw Error(ErrorKind::invalid_argument, "adam: parameter, gradient and moment sizes differ");
    }
    ++state.step;
    double const lr = state.schedule.at(state.step);
    auto const& a = state.adam;
    double const correction1 = 1.0 - std::pow(a.beta1, static_cast<double>(state.step));
    double const correction2 = 1.0 - std::pow(a.beta2, static_cast<double>(state.step));
    auto const b1 = static_cast<T>(a.beta1);
    auto const b2 = static_cast<T>(a.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        T const g = grad[i];
        T& m = state.first_moment[i];
        T& v = state.second_moment[i];
        m = b1 * m + (T(1) - b1) * g;
        v = b2 * v + (T(1) - b2) * g * g;
        double const m_hat = static_cast<double>(m) / correction1;
        double const v_hat = static_cast<double>(v) / correction2;
        params[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + a.epsilon));
    }
    return lr;
}

/// Examples resolved to token ids against a corpus and vocabulary.
struct TrainingData {
    struct Item {
        std::vector<TokenId> query;
        std::size_t positive = 0;
        std::optional<std::size_t> negative;
    };

    std::vector<std::vector<TokenId>> passages;
    std::vector<Item> items;

    [[nodiscard]] bool all_have_negatives() const
    {
        for (auto const& it : items) {
            if (!it.negative) {
                return false;
            }
        }
        return !items.empty();
    }
};

[[nodiscard]] inline TrainingData make_training_data(const Corpus& corpus, const Vocabulary& vocab,
                                                     std::span<const PseudoExample> examples)
{
    TrainingData data;
    data.passages.reserve(corpus.size());
    for (auto const& p : corpus.passages()) {
        data.passages.push_back(vocab.encode(passage_text_with_title(p)));
    }
    for (auto const& ex : examples) {
        auto pos = corpus.find_passage(ex.positive_id);
        if (!pos) {
            throw Error(ErrorKind::not_found, "positive passage not in corpus: " + ex.positive_id);
        }
        TrainingData::Item item{vocab.encode(ex.query), *pos, std::nullopt};
        if (ex.negative_id) {
            auto neg = corpus.find_passage(*ex.negative_id);
            if (!neg) {
                throw Error(ErrorKind::not_found, "negative passage not in corpus: " + *ex.negative_id);
            }
            item.negative = *neg;
        }
        data.items.push_back(std::move(item));
    }
    return data;
}

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t total_steps = 1000;
    double peak_lr = 1e-3;
    double warmup_fraction = 0.01;
    bool negatives = true;
    std::uint64_t seed = 0;
    std::size_t log_interval = 10;
    std::size_t checkpoint_interval = 0;
    std::size_t threads = 1;
};

struct MetricRow {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double top1 = 0.0;
};

inline void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows)
{
    out << "step,lr,loss,top1\n";
    char buf[128];
    for (auto const& r : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.6f\n", r.step, r.lr, r.loss, r.top1);
        out << buf;
    }
}

/// Draws batches by cycling through the items, reshuffled every epoch with a
/// stream derived from (seed, epoch).
class BatchSampler {
   public:
    BatchSampler(const TrainingData& data, std::uint64_t seed) : data_(data), seed_(seed) { reshuffle(); }

    TrainBatch next(std::size_t m, bool negatives)
    {
        TrainBatch batch;
        for (std::size_t i = 0; i < m; ++i) {
            if (cursor_ == order_.size()) {
                ++epoch_;
                reshuffle();
            }
            auto const& item = data_.items[order_[cursor_++]];
            batch.queries.push_back(item.query);
            batch.positives.push_back(data_.passages[item.positive]);
            if (negatives) {
                batch.negatives.push_back(data_.passages[*item.negative]);
            }
        }
        return batch;
    }

    [[nodiscard]] std::uint64_t epoch() const { return epoch_; }

   private:
    void reshuffle()
    {
        order_.resize(data_.items.size());
        for (std::size_t i = 0; i < order_.size(); ++i) {
            order_[i] = i;
        }
        Rng rng(derive_seed(seed_, {epoch_}));
        rng.shuffle(order_.begin(), order_.end());
        cursor_ = 0;
    }

    const TrainingData& data_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

template <typename T>
using CheckpointCallback = std::function<void(const EncoderModel<T>&, const OptimizerState<T>&)>;

struct TrainResult {
    std::vector<MetricRow> metrics;
};

/// Trains in place. The optimizer state carries the schedule and step count,
/// so a run resumed from a checkpoint continues the same trajectory.
///
/// On a non-finite loss the model and optimizer are restored to the last
/// checkpointed state and a numeric error is thrown.
template <typename T>
TrainResult train(EncoderModel<T>& model, OptimizerState<T>& optimizer, const TrainingData& data,
                  const TrainConfig& config,
                  const std::type_identity_t<CheckpointCallback<T>>& on_checkpoint = {})
{
    if (config.batch_size == 0 || data.items.size() < config.batch_size) {
        throw Error(ErrorKind::invalid_argument, "train: need at least batch_size examples ("
                                                     + std::to_string(data.items.size()) + " < "
                                                     + std::to_string(config.batch_size) + ")");
    }
    if (config.negatives && !data.all_have_negatives()) {
        throw Error(ErrorKind::invalid_argument, "train: negatives requested but some examples have none");
    }
    if (optimizer.step == 0) {
        optimizer = OptimizerState<T>(model.layout().total(),
                                      LrSchedule{config.peak_lr, config.warmup_fraction, config.total_steps},
                                      optimizer.adam);
    } else if (optimizer.first_moment.size() != model.layout().total()) {
        throw Error(ErrorKind::invalid_argument, "train: optimizer state does not match the model");
    }

    TrainResult result;
    BatchSampler sampler(data, config.seed);
    // Skip the batches already consumed when resuming.
    for (std::size_t s = 0; s < optimizer.step; ++s) {
        (void)sampler.next(config.batch_size, config.negatives);
    }

    std::vector<T> last_good_params(model.parameters().begin(), model.parameters().end());
    OptimizerState<T> last_good_optimizer = optimizer;
    std::vector<T> grad;

    while (optimizer.step < config.total_steps) {
        std::size_t const step = optimizer.step + 1;
        auto batch = sampler.next(config.batch_size, config.negatives);
        LossOptions opts{true, derive_seed(config.seed, {0x64726f70ULL, step}), config.threads};
        BatchResult br;
        try {
            br = loss_and_gradient(model, batch, grad, opts);
        } catch (Error const& e) {
            if (e.kind() != ErrorKind::numeric) {
                throw;
            }
            br.loss = std::nan("");
        }
        bool finite = std::isfinite(br.loss);
        for (std::size_t k = 0; finite && k < grad.size(); ++k) {
            finite = std::isfinite(grad[k]);
        }
        if (!finite) {
            std::copy(last_good_params.begin(), last_good_params.end(), model.parameters().begin());
            optimizer = last_good_optimizer;
            throw Error(ErrorKind::numeric, "non-finite loss at step " + std::to_string(step)
                                                + "; restored checkpoint from step "
                                                + std::to_string(optimizer.step));
        }
        double const lr = adam_step<T>(model.parameters(), grad, optimizer);
        if (!model.all_finite()) {
            std::copy(last_good_params.begin(), last_good_params.end(), model.parameters().begin());
            optimizer = last_good_optimizer;
            throw Error(ErrorKind::numeric, "non-finite parameters after step " + std::to_string(step));
        }
        if (config.log_interval > 0 && (step % config.log_interval == 0 || step == 1 || step == config.total_steps)) {
            result.metrics.push_back({step, lr, br.loss, br.top1()});
        }
        bool const checkpoint_now = (config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0)
                                    || step == config.total_steps;
        if (checkpoint_now) {
            last_good_params.assign(model.parameters().begin(), model.parameters().end());
            last_good_optimizer = optimizer;
            if (on_checkpoint) {
                on_checkpoint(model, optimizer);
            }
        }
    }
    return result;
}

inline constexpr std::string_view kCheckpointMagic = "SPANRET-CKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
    ArtifactHeader header;
    Vocabulary vocab;
    EncoderModel<T> model;
    OptimizerState<T> optimizer;
};

/// Layout: magic, version, provenance header, scalar width, encoder config,
/// vocabulary, then every parameter tensor in declared order (name, shape,
/// data), then the optimizer state.
template <typename T>
void write_checkpoint(std::ostream& out, const EncoderModel<T>& model, const Vocabulary& vocab,
                      const OptimizerState<T>& optimizer, const ArtifactHeader& header)
{
    BinaryWriter w(out);
    w.put_magic(kCheckpointMagic, kCheckpointVersion);
    w.put_header(header);
    w.put<std::uint32_t>(sizeof(T));
    auto const& c = model.config();
    for (auto v : {c.vocab_size, c.dim, c.layers, c.heads, c.ffn_dim, c.max_seq_len}) {
        w.put<std::uint64_t>(v);
    }
    w.put<double>(c.dropout);
    w.put<double>(c.init_std);
    w.put<std::uint64_t>(vocab.size());
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        w.put_string(vocab.surface(static_cast<TokenId>(i)));
    }
    auto params = model.parameters();
    w.put<std::uint64_t>(model.layout().tensors().size());
    for (auto const& t : model.layout().tensors()) {
        w.put_string(t.name);
        w.put<std::uint64_t>(t.rows);
        w.put<std::uint64_t>(t.cols);
        w.put_array(params.data() + t.offset, t.size());
    }
    w.put<std::uint64_t>(optimizer.step);
    w.put<double>(optimizer.schedule.peak_lr);
    w.put<double>(optimizer.schedule.warmup_fraction);
    w.put<std::uint64_t>(optimizer.schedule.total_steps);
    w.put<double>(optimizer.adam.beta1);
    w.put<double>(optimizer.adam.beta2);
    w.put<double>(optimizer.adam.epsilon);
    w.put_array(optimizer.first_moment.data(), optimizer.first_moment.size());
    w.put_array(optimizer.second_moment.data(), optimizer.second_moment.size());
    w.check();
}

template <typename T>
Checkpoint<T> read_checkpoint(std::istream& in)
{
    BinaryReader r(in);
    r.expect_magic(kCheckpointMagic, kCheckpointVersion);
    auto header = r.get_header();
    if (r.get<std::uint32_t>() != sizeof(T)) {
        throw Error(ErrorKind::version_mismatch, "checkpoint scalar width differs from the requested type");
    }
    EncoderConfig c;
    c.vocab_size = r.get<std::uint64_t>();
    c.dim = r.get<std::uint64_t>();
    c.layers = r.get<std::uint64_t>();
    c.heads = r.get<std::uint64_t>();
    c.ffn_dim = r.get<std::uint64_t>();
    c.max_seq_len = r.get<std::uint64_t>();
    c.dropout = r.get<double>();
    c.init_std = r.get<double>();
    Vocabulary vocab;
    auto const vocab_size = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < vocab_size; ++i) {
        auto s = r.get_string();
        if (i >= Vocabulary::reserved_count) {
            vocab.add(std::move(s));
        } else if (s != Vocabulary::reserved_surfaces[i]) {
            throw Error(ErrorKind::malformed_input, "checkpoint: reserved vocabulary entries out of order");
        }
    }
    ParamLayout layout(c);
    auto const count = r.get<std::uint64_t>();
    if (count != layout.tensors().size()) {
        throw Error(ErrorKind::malformed_input, "checkpoint: tensor count does not match the configuration");
    }
    std::vector<T> params(layout.total());
    for (auto const& t : layout.tensors()) {
        auto name = r.get_string();
        auto rows = r.get<std::uint64_t>();
        auto cols = r.get<std::uint64_t>();
        if (name != t.name || rows != t.rows || cols != t.cols) {
            throw Error(ErrorKind::malformed_input, "checkpoint: unexpected tensor " + name);
        }
        auto data = r.get_array<T>();
        if (data.size() != t.size()) {
            throw Error(ErrorKind::malformed_input, "checkpoint: tensor " + name + " has the wrong size");
        }
        std::copy(data.begin(), data.end(), params.begin() + static_cast<std::ptrdiff_t>(t.offset));
    }
    OptimizerState<T> opt;
    opt.step = r.get<std::uint64_t>();
    opt.schedule.peak_lr = r.get<double>();
    opt.schedule.warmup_fraction = r.get<double>();
    opt.schedule.total_steps = r.get<std::uint64_t>();
    opt.adam.beta1 = r.get<double>();
    opt.adam.beta2 = r.get<double>();
    opt.adam.epsilon = r.get<double>();
    opt.first_moment = r.get_array<T>();
    opt.second_moment = r.get_array<T>();
    if (c.vocab_size != vocab.size()) {
        throw Error(ErrorKind::malformed_input, "checkpoint: vocabulary size does not match the encoder");
    }
    return Checkpoint<T>{std::move(header), std::move(vocab), EncoderModel<T>(c, std::move(params)), std::move(opt)};
}

} // namespace spanret
