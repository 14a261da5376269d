#pragma once

#include <span>

namespace star {

// Area under the ROC curve in its Mann-Whitney form: the probability that a
// random positive outscores a random negative, ties counting 1/2.
// Throws std::invalid_argument("AUROC undefined") without both classes.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Step-wise average precision: items ranked by descending score, ties kept in
// input order (stable); the mean over positives of precision at their rank.
// Throws std::invalid_argument("AP undefined") without positives.
double average_precision(std::span<const double> scores, std::span<const int> labels);

}  // namespace star
