#pragma once

#include <map>
#include <string>
#include <string_view>

#include "kgdg/core.hpp"
#include "kgdg/data_io.hpp"

namespace kgdg::fusion {

enum class Source { Deep, Symbolic, Blended };

std::string_view source_name(Source s);

struct FusedPrediction {
    Grade grade;
    Source source = Source::Deep;
    double winning_score = 0.0;

    bool operator==(const FusedPrediction&) const = default;
};

/// Deep argmax when max(p_dl) >= max(p_kd), otherwise symbolic argmax.
FusedPrediction fuse_selective(const ProbabilityVector& p_dl, const ProbabilityVector& p_kd);

/// Grade of the single largest entry across both vectors; ties go to deep.
FusedPrediction fuse_max_confidence(const ProbabilityVector& p_dl, const ProbabilityVector& p_kd);

/// argmax over c of max(p_dl(c), p_kd(c)); the owner of the winning cell is
/// the source, ties to deep.
FusedPrediction fuse_classwise_max(const ProbabilityVector& p_dl, const ProbabilityVector& p_kd);

/// argmax of alpha_dl * p_dl + alpha_kl * p_kd, lowest grade on ties.
FusedPrediction fuse_weighted(const ProbabilityVector& p_dl, const ProbabilityVector& p_kd,
                              const FusionWeights& w);

enum class Strategy { Selective, MaxConfidence, ClasswiseMax, Weighted };

/// "selective", "max", "classwise", "weighted".
std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

FusedPrediction fuse(Strategy s, const ProbabilityVector& p_dl, const ProbabilityVector& p_kd,
                     const FusionWeights& w = {});

/// Both tables must hold the same image ids (UnknownImageId otherwise).
std::map<std::string, FusedPrediction> batch_fuse(Strategy s, const io::ProbabilityTable& dl,
                                                  const io::ProbabilityTable& kd, const FusionWeights& w = {});

}  // namespace kgdg::fusion
