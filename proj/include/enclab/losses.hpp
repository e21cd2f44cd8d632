#pragma once

// The three fine-tuning objectives and their batch contracts.
//
//   mnrl  — cross entropy over scaled cosine scores of the query against
//           [positive, negatives...]; needs at least one negative.
//   opl   — (cos(q, doc) − label)² with label 1.0 for positives and 0.0
//           for negatives; defined for a single pair, so batch size 1.
//   prototype_loss — (1 − cos) alignment of student embeddings to a
//           frozen teacher, per query and per passage.

#include <vector>

#include "enclab/autodiff.hpp"
#include "enclab/errors.hpp"

namespace enclab {

struct PairBatch {
    DiffArray query;
    DiffArray positive;
    std::vector<DiffArray> negatives;
};

namespace detail {

inline void require_unit(const DiffArray& v, const char* who) {
    double norm_sq = 0.0;
    for (double x : v.values()) norm_sq += x * x;
    if (std::abs(norm_sq - 1.0) > 2e-6)
        throw ValueError(std::string(who) + ": expected a unit vector, |v|^2 = " +
                         std::to_string(norm_sq));
}

}  // namespace detail

// Cross entropy over a similarity score vector whose first entry is the
// positive.  Exposed separately so its softmax shift invariance can be
// exercised directly.
inline DiffArray mnrl_from_scores(DiffArray scores) {
    return softmax_cross_entropy(scores, 0);
}

inline DiffArray mnrl(const PairBatch& batch, double sim_scale = 20.0) {
    if (batch.negatives.empty())
        throw ConfigError("mnrl: needs at least one negative (batch contract)");
    if (sim_scale <= 0.0) throw ConfigError("mnrl: scale must be positive");
    detail::require_unit(batch.query, "mnrl query");
    detail::require_unit(batch.positive, "mnrl positive");
    std::vector<DiffArray> sims;
    sims.reserve(batch.negatives.size() + 1);
    sims.push_back(cosine_sim(batch.query, batch.positive));
    for (const auto& neg : batch.negatives) {
        detail::require_unit(neg, "mnrl negative");
        sims.push_back(cosine_sim(batch.query, neg));
    }
    return mnrl_from_scores(scale(stack_scalars(sims), sim_scale));
}

inline DiffArray opl(DiffArray query, DiffArray doc, double label) {
    if (label != 0.0 && label != 1.0)
        throw ValueError("opl: label must be exactly 0.0 or 1.0");
    detail::require_unit(query, "opl query");
    detail::require_unit(doc, "opl doc");
    DiffArray residual = add_const(cosine_sim(query, doc), -label);
    return mul(residual, residual);
}

// Teacher embeddings must be constants (no gradient path); only the
// student side is trained.
inline DiffArray prototype_loss(DiffArray teacher_q, DiffArray student_q, DiffArray teacher_p,
                                DiffArray student_p) {
    detail::require_unit(teacher_q, "pl teacher query");
    detail::require_unit(student_q, "pl student query");
    detail::require_unit(teacher_p, "pl teacher passage");
    detail::require_unit(student_p, "pl student passage");
    DiffArray q_term = add_const(scale(cosine_sim(teacher_q, student_q), -1.0), 1.0);
    DiffArray p_term = add_const(scale(cosine_sim(teacher_p, student_p), -1.0), 1.0);
    return add(q_term, p_term);
}

}  // namespace enclab
