#pragma once

#include <array>
#include <string>
#include <vector>

#include "bcq/tensor.hpp"

namespace bcq {

// mean cosine similarity of matched pairs (diagonal), of all mismatched
// pairs, and their difference
struct CosineStats {
    double pos_mean = 0, neg_mean = 0, gap = 0;
};

CosineStats cosine_metrics(const Tensor<float>& img, const Tensor<float>& txt);

struct EpochRecord {
    int stage = 0;
    int epoch = 0;
    double loss = 0, pos_mean = 0, neg_mean = 0, gap = 0, lr = 0;
};

// {"records": [...]} with fixed key order; byte-stable for identical inputs
void save_metrics(const std::vector<EpochRecord>& records, const std::string& path);
std::string metrics_json(const std::vector<EpochRecord>& records);

// lowercase, strip punctuation, collapse whitespace, drop articles (a/an/the)
std::string vqa_normalize(const std::string& s);

// fraction of predictions whose normalised form equals the reference's
double vqa_accuracy(const std::vector<std::string>& predictions,
                    const std::vector<std::string>& references);

// top-3 principal components of the rows of X
struct Pca3 {
    Tensor<double> coords;              // [M, 3]
    Tensor<double> basis;               // [d, 3], unit columns
    std::vector<double> mean;           // [d]
    std::array<double, 3> eigenvalues;  // descending
    std::array<double, 3> explained;    // eigenvalue / total variance
};

// Covariance uses the 1/(M-1) convention. Requires M >= 4 rows and nonzero
// total variance (DegenerateDataError otherwise). Eigenvector signs are fixed
// so each column's first nonzero component is positive.
Pca3 pca3(const Tensor<double>& x);

// project new rows into an existing fit
Tensor<double> pca3_project(const Pca3& fit, const Tensor<double>& x);

struct PcaRow {
    int64_t id;
    std::string modality; // "image" or "text"
    double x, y, z;
    int is_positive_pair;
};

// CSV with header id,modality,x,y,z,is_positive_pair
void save_pca_csv(const std::vector<PcaRow>& rows, const std::string& path);

} // namespace bcq
