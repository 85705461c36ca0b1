#include "bcq/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bcq/errors.hpp"

namespace bcq {

using nlohmann::ordered_json;

namespace {

double cosine(const float* a, const float* b, int64_t d) {
    double num = 0, na = 0, nb = 0;
    for (int64_t i = 0; i < d; ++i) {
        num += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    double den = std::sqrt(na) * std::sqrt(nb);
    return den > 1e-30 ? num / den : 0.0;
}

} // namespace

CosineStats cosine_metrics(const Tensor<float>& img, const Tensor<float>& txt) {
    check(img.ndim() == 2 && img.same_shape(txt), "cosine_metrics: [M,d] pair required");
    int64_t M = img.dim(0), d = img.dim(1);
    check(M >= 2, "cosine_metrics: need at least two pairs");
    CosineStats s;
    double pos = 0, neg = 0;
    for (int64_t i = 0; i < M; ++i) {
        for (int64_t j = 0; j < M; ++j) {
            double c = cosine(img.data() + i * d, txt.data() + j * d, d);
            if (i == j)
                pos += c;
            else
                neg += c;
        }
    }
    s.pos_mean = pos / static_cast<double>(M);
    s.neg_mean = neg / static_cast<double>(M * (M - 1));
    s.gap = s.pos_mean - s.neg_mean;
    return s;
}

std::string metrics_json(const std::vector<EpochRecord>& records) {
    ordered_json j;
    j["records"] = ordered_json::array();
    for (const auto& r : records) {
        ordered_json e;
        e["stage"] = r.stage;
        e["epoch"] = r.epoch;
        e["loss"] = r.loss;
        e["pos_mean"] = r.pos_mean;
        e["neg_mean"] = r.neg_mean;
        e["gap"] = r.gap;
        e["lr"] = r.lr;
        j["records"].push_back(std::move(e));
    }
    return j.dump(2) + "\n";
}

void save_metrics(const std::vector<EpochRecord>& records, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot write " + path);
    f << metrics_json(records);
}

std::string vqa_normalize(const std::string& s) {
    std::string spaced;
    for (char ch : s) {
        unsigned char u = static_cast<unsigned char>(ch);
        spaced += std::isalnum(u) ? static_cast<char>(std::tolower(u)) : ' ';
    }
    std::istringstream is(spaced);
    std::string w, out;
    while (is >> w) {
        if (w == "a" || w == "an" || w == "the") continue;
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

double vqa_accuracy(const std::vector<std::string>& predictions,
                    const std::vector<std::string>& references) {
    check(predictions.size() == references.size() && !predictions.empty(),
          "vqa_accuracy: size mismatch or empty");
    int64_t hits = 0;
    for (size_t i = 0; i < predictions.size(); ++i)
        if (vqa_normalize(predictions[i]) == vqa_normalize(references[i])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

namespace {

// cyclic Jacobi eigensolver for a symmetric matrix, in place
void jacobi_eigen(std::vector<double>& a, int64_t n, std::vector<double>& eigvals,
                  std::vector<double>& eigvecs) {
    eigvecs.assign(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) eigvecs[static_cast<size_t>(i * n + i)] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int64_t p = 0; p < n; ++p)
            for (int64_t q = p + 1; q < n; ++q) off += std::abs(a[static_cast<size_t>(p * n + q)]);
        if (off < 1e-13) break;
        for (int64_t p = 0; p < n; ++p) {
            for (int64_t q = p + 1; q < n; ++q) {
                double apq = a[static_cast<size_t>(p * n + q)];
                if (std::abs(apq) < 1e-300) continue;
                double app = a[static_cast<size_t>(p * n + p)];
                double aqq = a[static_cast<size_t>(q * n + q)];
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int64_t k = 0; k < n; ++k) {
                    double akp = a[static_cast<size_t>(k * n + p)];
                    double akq = a[static_cast<size_t>(k * n + q)];
                    a[static_cast<size_t>(k * n + p)] = c * akp - s * akq;
                    a[static_cast<size_t>(k * n + q)] = s * akp + c * akq;
                }
                for (int64_t k = 0; k < n; ++k) {
                    double apk = a[static_cast<size_t>(p * n + k)];
                    double aqk = a[static_cast<size_t>(q * n + k)];
                    a[static_cast<size_t>(p * n + k)] = c * apk - s * aqk;
                    a[static_cast<size_t>(q * n + k)] = s * apk + c * aqk;
                }
                for (int64_t k = 0; k < n; ++k) {
                    double vkp = eigvecs[static_cast<size_t>(k * n + p)];
                    double vkq = eigvecs[static_cast<size_t>(k * n + q)];
                    eigvecs[static_cast<size_t>(k * n + p)] = c * vkp - s * vkq;
                    eigvecs[static_cast<size_t>(k * n + q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    eigvals.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) eigvals[static_cast<size_t>(i)] = a[static_cast<size_t>(i * n + i)];
}

} // namespace

Pca3 pca3(const Tensor<double>& x) {
    check(x.ndim() == 2, "pca3: [M,d] input required");
    int64_t M = x.dim(0), d = x.dim(1);
    if (M < 4) throw DegenerateDataError("pca3 needs at least 4 rows, got " + std::to_string(M));
    Pca3 fit;
    fit.mean.assign(static_cast<size_t>(d), 0.0);
    for (int64_t i = 0; i < M; ++i)
        for (int64_t j = 0; j < d; ++j) fit.mean[static_cast<size_t>(j)] += x[i * d + j];
    for (auto& m : fit.mean) m /= static_cast<double>(M);

    std::vector<double> cov(static_cast<size_t>(d * d), 0.0);
    for (int64_t i = 0; i < M; ++i) {
        for (int64_t j = 0; j < d; ++j) {
            double cj = x[i * d + j] - fit.mean[static_cast<size_t>(j)];
            for (int64_t k = j; k < d; ++k) {
                double ck = x[i * d + k] - fit.mean[static_cast<size_t>(k)];
                cov[static_cast<size_t>(j * d + k)] += cj * ck;
            }
        }
    }
    double total = 0.0;
    for (int64_t j = 0; j < d; ++j) {
        for (int64_t k = j; k < d; ++k) {
            double v = cov[static_cast<size_t>(j * d + k)] / static_cast<double>(M - 1);
            cov[static_cast<size_t>(j * d + k)] = v;
            cov[static_cast<size_t>(k * d + j)] = v;
        }
        total += cov[static_cast<size_t>(j * d + j)];
    }
    if (total <= 1e-12)
        throw DegenerateDataError("pca3: zero total variance (all rows identical)");

    std::vector<double> eigvals, eigvecs;
    jacobi_eigen(cov, d, eigvals, eigvecs);

    std::vector<int64_t> order(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (eigvals[static_cast<size_t>(a)] != eigvals[static_cast<size_t>(b)])
            return eigvals[static_cast<size_t>(a)] > eigvals[static_cast<size_t>(b)];
        return a < b;
    });

    int64_t k = std::min<int64_t>(3, d);
    fit.basis = Tensor<double>({d, 3});
    fit.eigenvalues = {0, 0, 0};
    fit.explained = {0, 0, 0};
    for (int64_t c = 0; c < k; ++c) {
        int64_t src = order[static_cast<size_t>(c)];
        double lead = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            double v = eigvecs[static_cast<size_t>(j * d + src)];
            if (std::abs(v) > 1e-9) {
                lead = v;
                break;
            }
        }
        double sign = lead < 0 ? -1.0 : 1.0;
        for (int64_t j = 0; j < d; ++j)
            fit.basis[j * 3 + c] = sign * eigvecs[static_cast<size_t>(j * d + src)];
        double lam = std::max(0.0, eigvals[static_cast<size_t>(src)]);
        fit.eigenvalues[static_cast<size_t>(c)] = lam;
        fit.explained[static_cast<size_t>(c)] = lam / total;
    }
    fit.coords = pca3_project(fit, x);
    return fit;
}

Tensor<double> pca3_project(const Pca3& fit, const Tensor<double>& x) {
    check(x.ndim() == 2 && x.dim(1) == static_cast<int64_t>(fit.mean.size()),
          "pca3_project: width mismatch");
    int64_t M = x.dim(0), d = x.dim(1);
    Tensor<double> out({M, 3});
    for (int64_t i = 0; i < M; ++i)
        for (int64_t c = 0; c < 3; ++c) {
            double s = 0.0;
            for (int64_t j = 0; j < d; ++j)
                s += (x[i * d + j] - fit.mean[static_cast<size_t>(j)]) * fit.basis[j * 3 + c];
            out[i * 3 + c] = s;
        }
    return out;
}

void save_pca_csv(const std::vector<PcaRow>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot write " + path);
    f << "id,modality,x,y,z,is_positive_pair\n";
    f.precision(9);
    for (const auto& r : rows) {
        std::ostringstream line;
        line.precision(9);
        line << r.id << ',' << r.modality << ',' << r.x << ',' << r.y << ',' << r.z << ','
             << r.is_positive_pair;
        f << line.str() << "\n";
    }
}

} // namespace bcq
