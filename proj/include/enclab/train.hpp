#pragma once

// The two training loops.
//
// Pretraining runs masked-language modeling over a mixture stream with
// the warmup/decay schedule; per-step loss and masked-token accuracy go
// to a TSV metrics log (step, lr, loss, mlm_accuracy).
//
// Fine-tuning runs one of {mnrl, opl, pl} over (query, positive) text
// pairs.  "True batch size" is realized by gradient accumulation over
// single-pair micro-steps for opl/pl; mnrl embeds its whole batch
// jointly because in-batch negatives couple the gradients.

#include <fstream>
#include <string>
#include <vector>

#include "enclab/encoder.hpp"
#include "enclab/errors.hpp"
#include "enclab/losses.hpp"
#include "enclab/mixture.hpp"
#include "enclab/optimizer.hpp"

namespace enclab {

struct StepMetrics {
    long step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double mlm_accuracy = 0.0;
};

inline void write_metrics_tsv(const std::vector<StepMetrics>& curve, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("metrics: cannot open " + path);
    out << "step\tlr\tloss\tmlm_accuracy\n";
    char line[128];
    for (const auto& m : curve) {
        std::snprintf(line, sizeof(line), "%ld\t%.10g\t%.10g\t%.10g\n", m.step, m.lr, m.loss,
                      m.mlm_accuracy);
        out << line;
    }
}

struct PretrainConfig {
    long steps = 100;
    int batch_size = 4;
    double peak_lr = 5e-4;
    double warmup_fraction = 0.06;
    AdamWConfig adamw;
    double mlm_prob = 0.3;
    std::uint64_t seed = 0;
};

struct PretrainResult {
    std::vector<StepMetrics> curve;
};

inline PretrainResult pretrain(EncoderModel& model, MixtureStream& stream,
                               const PretrainConfig& cfg) {
    if (cfg.steps <= 0) throw ConfigError("pretrain: steps must be positive");
    if (cfg.batch_size <= 0) throw ConfigError("pretrain: batch_size must be positive");

    Graph& g = model.graph();
    auto params = model.params();
    AdamW opt(params, cfg.adamw);
    LinearWarmupDecay schedule{cfg.steps, cfg.warmup_fraction, cfg.peak_lr};
    Rng mask_rng(Rng::derive_seed(cfg.seed, 0x6d61736bULL));

    PretrainResult result;
    result.curve.reserve(cfg.steps);
    for (long step = 1; step <= cfg.steps; ++step) {
        opt.zero_grad();
        double loss_sum = 0.0;
        long correct = 0, masked_total = 0;
        for (int bi = 0; bi < cfg.batch_size; ++bi) {
            MixtureExample example = stream.next();
            MaskedExample masked = mask_tokens(example.ids, cfg.mlm_prob, mask_rng);
            // a draw can select nothing on very short sequences; re-mask
            bool any = false;
            for (int lab : masked.labels) any = any || (lab != kIgnoreLabel);
            while (!any) {
                masked = mask_tokens(example.ids, cfg.mlm_prob, mask_rng);
                for (int lab : masked.labels) any = any || (lab != kIgnoreLabel);
            }

            auto [padded, mask] = model.pad_to_s(masked.ids);
            std::vector<int> labels(padded.size(), kIgnoreLabel);
            std::copy(masked.labels.begin(), masked.labels.end(), labels.begin());

            DiffArray logits = model.mlm_logits(model.encode(padded, mask));
            DiffArray loss = scale(cross_entropy_rows(logits, labels, kIgnoreLabel),
                                   1.0 / cfg.batch_size);
            loss_sum += loss.value() * cfg.batch_size;
            g.backward(loss);

            const int V = model.config().vocab_size;
            const auto& lv = logits.values();
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (labels[i] == kIgnoreLabel) continue;
                const double* row = lv.data() + i * V;
                int best = 0;
                for (int c = 1; c < V; ++c)
                    if (row[c] > row[best]) best = c;
                correct += (best == labels[i]) ? 1 : 0;
                ++masked_total;
            }
            g.reset();
        }
        const double mean_loss = loss_sum / cfg.batch_size;
        if (!std::isfinite(mean_loss))
            throw TrainingError("pretrain: non-finite loss at step " + std::to_string(step),
                                step);
        const double lr = schedule.lr_at(step);
        opt.step(lr);
        result.curve.push_back({step, lr, mean_loss,
                                masked_total ? static_cast<double>(correct) / masked_total : 0.0});
    }
    return result;
}

// Masked-token top-1 accuracy of the current model over a fixed batch of
// examples; used for warm/cold comparisons on equal footing.
inline double mlm_eval_accuracy(EncoderModel& model, const std::vector<MaskedExample>& batch) {
    Graph& g = model.graph();
    const bool was = g.recording();
    g.set_recording(false);
    long correct = 0, total = 0;
    for (const auto& masked : batch) {
        auto [padded, mask] = model.pad_to_s(masked.ids);
        std::vector<int> labels(padded.size(), kIgnoreLabel);
        std::copy(masked.labels.begin(), masked.labels.end(), labels.begin());
        DiffArray logits = model.mlm_logits(model.encode(padded, mask));
        const int V = model.config().vocab_size;
        const auto& lv = logits.values();
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == kIgnoreLabel) continue;
            const double* row = lv.data() + i * V;
            int best = 0;
            for (int c = 1; c < V; ++c)
                if (row[c] > row[best]) best = c;
            correct += (best == labels[i]) ? 1 : 0;
            ++total;
        }
        g.reset();
    }
    g.set_recording(was);
    return total ? static_cast<double>(correct) / total : 0.0;
}

// ---------------------------------------------------------------------------
// fine-tuning
// ---------------------------------------------------------------------------

struct TextPair {
    std::string query;
    std::string positive;
};

enum class LossKind { mnrl, opl, pl };

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "mnrl") return LossKind::mnrl;
    if (s == "opl") return LossKind::opl;
    if (s == "pl") return LossKind::pl;
    throw ConfigError("unknown loss kind '" + s + "' (expected mnrl|opl|pl)");
}

// Uniform sample of k other pair indices, never the query's own.
inline std::vector<int> sample_negatives(std::size_t n_pairs, int query_index, int k, Rng& rng) {
    if (k < 0) throw ConfigError("sample_negatives: k must be nonnegative");
    if (static_cast<std::size_t>(k) >= n_pairs)
        throw ConfigError("sample_negatives: k of " + std::to_string(k) +
                          " needs more than " + std::to_string(n_pairs) + " pairs");
    std::vector<int> candidates;
    candidates.reserve(n_pairs - 1);
    for (std::size_t i = 0; i < n_pairs; ++i)
        if (static_cast<int>(i) != query_index) candidates.push_back(static_cast<int>(i));
    // partial Fisher-Yates: the first k entries become the sample
    for (int i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(candidates.size() - i));
        std::swap(candidates[i], candidates[j]);
    }
    candidates.resize(k);
    return candidates;
}

struct FinetuneConfig {
    LossKind loss = LossKind::opl;
    int negatives_per_pair = 32;
    int batch_size = 32;  // accumulation window for opl/pl, joint batch for mnrl
    double lr = 5e-6;
    double max_grad_norm = 1.0;
    int epochs = 1;
    double mnrl_scale = 20.0;
    long max_micro_steps = -1;  // stop early when positive (pair steps for opl/pl)
    std::uint64_t seed = 0;
};

struct FinetuneResult {
    long micro_steps = 0;
    long optimizer_steps = 0;
    double last_loss = 0.0;
};

inline FinetuneResult finetune(EncoderModel& model, const std::vector<TextPair>& pairs,
                               const FinetuneConfig& cfg, EncoderModel* teacher = nullptr) {
    if (pairs.empty()) throw DataError("finetune: no training pairs");
    if (cfg.loss == LossKind::mnrl && cfg.batch_size < 2)
        throw ConfigError("finetune: mnrl needs batch_size >= 2 (batch contract)");
    if (cfg.batch_size < 1) throw ConfigError("finetune: batch_size must be positive");
    if (cfg.loss == LossKind::pl && teacher == nullptr)
        throw ConfigError("finetune: pl needs a teacher checkpoint");
    if (cfg.loss == LossKind::mnrl && pairs.size() < 2)
        throw ConfigError("finetune: mnrl needs at least two pairs");

    Graph& g = model.graph();
    auto params = model.params();
    AdamW opt(params, AdamWConfig{});
    Rng rng(Rng::derive_seed(cfg.seed, 0x66696e65ULL));
    const int S = model.config().max_seq_len;

    FinetuneResult result;
    auto embed = [&](const std::string& text) {
        return model.embed_tokens(tok::encode(text, S));
    };
    auto check_finite = [&](double v, long at) {
        if (!std::isfinite(v))
            throw TrainingError("finetune: non-finite loss at micro-step " + std::to_string(at),
                                at);
    };

    opt.zero_grad();
    int window = 0;
    auto flush = [&] {
        if (window == 0) return;
        clip_grad_norm(params, cfg.max_grad_norm);
        opt.step(cfg.lr);
        opt.zero_grad();
        ++result.optimizer_steps;
        window = 0;
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(pairs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        rng.shuffle(order);

        if (cfg.loss == LossKind::mnrl) {
            for (std::size_t start = 0; start + 1 < order.size();
                 start += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t stop =
                    std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                const int B = static_cast<int>(stop - start);
                if (B < 2) break;
                std::vector<DiffArray> queries(B), docs(B);
                for (int i = 0; i < B; ++i) {
                    queries[i] = embed(pairs[order[start + i]].query);
                    docs[i] = embed(pairs[order[start + i]].positive);
                }
                DiffArray total;
                for (int i = 0; i < B; ++i) {
                    std::vector<DiffArray> negs;
                    negs.reserve(B - 1);
                    for (int j = 0; j < B; ++j)
                        if (j != i) negs.push_back(docs[j]);
                    DiffArray term = scale(mnrl({queries[i], docs[i], negs}, cfg.mnrl_scale),
                                           1.0 / B);
                    total = total.valid() ? add(total, term) : term;
                }
                result.last_loss = total.value();
                check_finite(result.last_loss, result.micro_steps);
                g.backward(total);
                g.reset();
                result.micro_steps += B;
                window = cfg.batch_size;
                flush();
                if (cfg.max_micro_steps > 0 && result.micro_steps >= cfg.max_micro_steps) {
                    return result;
                }
            }
            continue;
        }

        // opl / pl: single-pair micro-steps, accumulation window = batch_size
        for (int ix : order) {
            const TextPair& pair = pairs[ix];
            std::vector<std::pair<std::string, double>> micro;  // (doc text, label)
            micro.emplace_back(pair.positive, 1.0);
            if (cfg.loss == LossKind::opl && cfg.negatives_per_pair > 0) {
                auto negs = sample_negatives(pairs.size(), ix,
                                             std::min<int>(cfg.negatives_per_pair,
                                                           static_cast<int>(pairs.size()) - 1),
                                             rng);
                for (int n : negs) micro.emplace_back(pairs[n].positive, 0.0);
            }
            for (const auto& [doc_text, label] : micro) {
                DiffArray loss;
                if (cfg.loss == LossKind::opl) {
                    loss = opl(embed(pair.query), embed(doc_text), label);
                } else {
                    auto tq_vals = teacher->embed_text(pair.query);
                    auto tp_vals = teacher->embed_text(doc_text);
                    DiffArray tq = g.constant({static_cast<int>(tq_vals.size())}, tq_vals);
                    DiffArray tp = g.constant({static_cast<int>(tp_vals.size())}, tp_vals);
                    loss = prototype_loss(tq, embed(pair.query), tp, embed(doc_text));
                }
                DiffArray scaled = scale(loss, 1.0 / cfg.batch_size);
                result.last_loss = loss.value();
                check_finite(result.last_loss, result.micro_steps);
                g.backward(scaled);
                g.reset();
                ++result.micro_steps;
                if (++window >= cfg.batch_size) flush();
                if (cfg.max_micro_steps > 0 && result.micro_steps >= cfg.max_micro_steps) {
                    flush();
                    return result;
                }
                if (cfg.loss == LossKind::pl) break;  // pl consumes the positive only
            }
        }
    }
    flush();
    return result;
}

}  // namespace enclab
