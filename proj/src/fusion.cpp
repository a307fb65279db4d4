#include "kgdg/fusion.hpp"

namespace kgdg::fusion {

std::string_view source_name(Source s) {
    switch (s) {
        case Source::Deep: return "deep";
        case Source::Symbolic: return "symbolic";
        case Source::Blended: return "blended";
    }
    return "unknown";
}

FusedPrediction fuse_selective(const ProbabilityVector& p_dl, const ProbabilityVector& p_kd) {
    if (p_dl.max() >= p_kd.max()) return {p_dl.argmax(), Source::Deep, p_dl.max()};
    return {p_kd.argmax(), Source::Symbolic, p_kd.max()};
}

FusedPrediction fuse_max_confidence(const ProbabilityVector& p_dl, const ProbabilityVector& p_kd) {
    // scan deep cells first so equal values stay with deep
    FusedPrediction best{Grade(0), Source::Deep, -1.0};
    for (const auto* p : {&p_dl, &p_kd}) {
        const Source src = p == &p_dl ? Source::Deep : Source::Symbolic;
        for (int c = 0; c < kNumGrades; ++c)
            if ((*p)[c] > best.winning_score) best = {Grade(c), src, (*p)[c]};
    }
    return best;
}

FusedPrediction fuse_classwise_max(const ProbabilityVector& p_dl, const ProbabilityVector& p_kd) {
    FusedPrediction best{Grade(0), Source::Deep, -1.0};
    for (int c = 0; c < kNumGrades; ++c) {
        const bool deep = p_dl[c] >= p_kd[c];
        const double m = deep ? p_dl[c] : p_kd[c];
        if (m > best.winning_score) best = {Grade(c), deep ? Source::Deep : Source::Symbolic, m};
    }
    return best;
}

FusedPrediction fuse_weighted(const ProbabilityVector& p_dl, const ProbabilityVector& p_kd,
                              const FusionWeights& w) {
    w.validate();
    FusedPrediction best{Grade(0), Source::Blended, -1.0};
    for (int c = 0; c < kNumGrades; ++c) {
        const double v = w.alpha_dl * p_dl[c] + w.alpha_kl * p_kd[c];
        if (v > best.winning_score) best = {Grade(c), Source::Blended, v};
    }
    return best;
}

std::string_view strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Selective: return "selective";
        case Strategy::MaxConfidence: return "max";
        case Strategy::ClasswiseMax: return "classwise";
        case Strategy::Weighted: return "weighted";
    }
    return "unknown";
}

Strategy parse_strategy(std::string_view name) {
    for (Strategy s : {Strategy::Selective, Strategy::MaxConfidence, Strategy::ClasswiseMax, Strategy::Weighted})
        if (strategy_name(s) == name) return s;
    throw Error(ErrorCode::InvalidArgument,
                "unknown fusion strategy '" + std::string(name) + "' (selective|max|classwise|weighted)");
}

FusedPrediction fuse(Strategy s, const ProbabilityVector& p_dl, const ProbabilityVector& p_kd,
                     const FusionWeights& w) {
    switch (s) {
        case Strategy::Selective: return fuse_selective(p_dl, p_kd);
        case Strategy::MaxConfidence: return fuse_max_confidence(p_dl, p_kd);
        case Strategy::ClasswiseMax: return fuse_classwise_max(p_dl, p_kd);
        case Strategy::Weighted: return fuse_weighted(p_dl, p_kd, w);
    }
    throw Error(ErrorCode::InternalInvariant, "unhandled fusion strategy");
}

std::map<std::string, FusedPrediction> batch_fuse(Strategy s, const io::ProbabilityTable& dl,
                                                  const io::ProbabilityTable& kd, const FusionWeights& w) {
    for (const auto& [id, p] : kd)
        if (!dl.contains(id)) throw Error(ErrorCode::UnknownImageId, "'" + id + "' has no deep probabilities");
    std::map<std::string, FusedPrediction> out;
    for (const auto& [id, p] : dl) {
        const auto it = kd.find(id);
        if (it == kd.end()) throw Error(ErrorCode::UnknownImageId, "'" + id + "' has no symbolic probabilities");
        out.emplace(id, fuse(s, p, it->second, w));
    }
    return out;
}

}  // namespace kgdg::fusion
