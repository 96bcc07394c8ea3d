#include "xmodal/tsne.hpp"

#include <cmath>
#include <numeric>

#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

void TsneConfig::validate(std::size_t n) const {
    if (n < 4) throw ArgumentError("t-SNE needs at least 4 points, got " + std::to_string(n));
    if (!(perplexity > 0.0) || !(perplexity < (static_cast<double>(n) - 1.0) / 3.0)) {
        throw ArgumentError("perplexity " + std::to_string(perplexity) + " must lie in (0, " +
                            std::to_string((static_cast<double>(n) - 1.0) / 3.0) + ") for " +
                            std::to_string(n) + " points");
    }
    if (!(learning_rate > 0.0)) throw ArgumentError("t-SNE learning rate must be positive");
    if (!(early_exaggeration >= 1.0)) throw ArgumentError("early exaggeration must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0 || final_momentum < 0.0 || final_momentum >= 1.0) {
        throw ArgumentError("momentum must lie in [0, 1)");
    }
}

std::vector<double> squared_distances(const Tensor<double>& x) {
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<double> out(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = x(i, k) - x(j, k);
                s += diff * diff;
            }
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    return out;
}

namespace {

constexpr double kEntropyTolerance = 1e-4;
constexpr int kMaxBisection = 64;

// Fills row i of the conditional distribution; returns its entropy in bits.
double fit_row(const std::vector<double>& dist, std::size_t n, std::size_t i, double target_bits,
               std::vector<double>& row) {
    double min_d = INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
        if (j != i) min_d = std::min(min_d, dist[i * n + j]);
    }
    auto evaluate = [&](double beta) {
        double sum = 0.0, weighted = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) {
                row[j] = 0.0;
                continue;
            }
            const double shifted = dist[i * n + j] - min_d;
            row[j] = std::exp(-beta * shifted);
            sum += row[j];
            weighted += shifted * row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
        return (std::log(sum) + beta * weighted / sum) / std::log(2.0);
    };

    double beta = 1.0, lo = 0.0, hi = INFINITY;
    double entropy = evaluate(beta);
    for (int it = 0; it < kMaxBisection && std::abs(entropy - target_bits) > kEntropyTolerance; ++it) {
        if (entropy > target_bits) {
            lo = beta;
            beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
        entropy = evaluate(beta);
    }
    return entropy;
}

void check_input(const Tensor<double>& x, double perplexity) {
    if (x.rank() != 2) throw DimensionError("t-SNE input must be N x d");
    TsneConfig probe;
    probe.perplexity = perplexity;
    probe.validate(x.rows());
    x.require_finite("t-SNE input");
}

}  // namespace

Tensor<double> conditional_affinities(const Tensor<double>& x, double perplexity) {
    check_input(x, perplexity);
    const std::size_t n = x.rows();
    const auto dist = squared_distances(x);
    const double target = std::log2(perplexity);
    std::vector<double> cond(n * n), row(n);
    for (std::size_t i = 0; i < n; ++i) {
        fit_row(dist, n, i, target, row);
        std::copy(row.begin(), row.end(), cond.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    Tensor<double> p({n, n}, 0.0);
    const double denom = 2.0 * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j) p(i, j) = (cond[i * n + j] + cond[j * n + i]) / denom;
        }
    }
    return p;
}

std::vector<double> row_perplexities(const Tensor<double>& x, double perplexity) {
    check_input(x, perplexity);
    const std::size_t n = x.rows();
    const auto dist = squared_distances(x);
    std::vector<double> out(n), row(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::exp2(fit_row(dist, n, i, std::log2(perplexity), row));
    return out;
}

namespace {

// Pair sums of the Student-t kernel w_ij = 1 / (1 + d_ij^2): Z = sum w,
// the deficit S = sum d^2 w = M - Z with M = N(N - 1), and the cross term
// sum p log(1 + d^2). log Z is taken as log(M) + log1p(-S / M), which stays
// accurate when the layout is tiny.
struct KernelSums {
    double z = 0.0;
    double deficit = 0.0;
    double cross = 0.0;
};

KernelSums kernel_sums(const Tensor<double>& p, const Tensor<double>& y) {
    const std::size_t n = y.rows();
    const double* yv = y.values().data();
    const double* pv = p.values().data();
    KernelSums k;
    for (std::size_t i = 0; i < n; ++i) {
        const double xi = yv[2 * i], yi = yv[2 * i + 1];
        double z = 0.0, deficit = 0.0, cross = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = xi - yv[2 * j], dy = yi - yv[2 * j + 1];
            const double d2 = dx * dx + dy * dy;
            const double w = 1.0 / (1.0 + d2);
            z += w;
            deficit += d2 * w;
            cross += (pv[i * n + j] + pv[j * n + i]) * std::log1p(d2);
        }
        k.z += 2.0 * z;
        k.deficit += 2.0 * deficit;
        k.cross += cross;
    }
    return k;
}

double log_partition(const KernelSums& k, std::size_t n) {
    const double m = static_cast<double>(n) * static_cast<double>(n - 1);
    const double frac = k.deficit / m;
    return frac < 0.5 ? std::log(m) + std::log1p(-frac) : std::log(k.z);
}

// sum p log p and sum p over the off-diagonal support of P.
std::pair<double, double> affinity_entropy(const Tensor<double>& p) {
    const std::size_t n = p.rows();
    double entropy = 0.0, mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double pij = p(i, j);
            if (i == j || pij <= 0.0) continue;
            entropy += pij * std::log(pij);
            mass += pij;
        }
    }
    return {entropy, mass};
}

double kl_divergence(const Tensor<double>& p, const Tensor<double>& y, std::pair<double, double> entropy_mass) {
    const auto k = kernel_sums(p, y);
    return entropy_mass.first + (k.cross + entropy_mass.second * log_partition(k, y.rows()));
}

// One pass over pairs i < j accumulating the attractive sum p w (y_i - y_j) and
// the repulsive sum w^2 (y_i - y_j); the latter is scaled by 1 / Z at the end.
void fused_gradient(const Tensor<double>& p, const Tensor<double>& y, double exaggeration,
                    std::vector<double>& attract, std::vector<double>& repel, Tensor<double>& grad) {
    const std::size_t n = y.rows();
    const double* yv = y.values().data();
    const double* pv = p.values().data();
    attract.assign(2 * n, 0.0);
    repel.assign(2 * n, 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double xi = yv[2 * i], yi = yv[2 * i + 1];
        const double* prow = pv + i * n;
        double ax = 0.0, ay = 0.0, rx = 0.0, ry = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = xi - yv[2 * j], dy = yi - yv[2 * j + 1];
            const double w = 1.0 / (1.0 + dx * dx + dy * dy);
            z += w;
            const double a = prow[j] * w, r = w * w;
            ax += a * dx;
            ay += a * dy;
            rx += r * dx;
            ry += r * dy;
            attract[2 * j] -= a * dx;
            attract[2 * j + 1] -= a * dy;
            repel[2 * j] -= r * dx;
            repel[2 * j + 1] -= r * dy;
        }
        attract[2 * i] += ax;
        attract[2 * i + 1] += ay;
        repel[2 * i] += rx;
        repel[2 * i + 1] += ry;
    }
    z *= 2.0;
    for (std::size_t k = 0; k < 2 * n; ++k) grad[k] = 4.0 * (exaggeration * attract[k] - repel[k] / z);
}

void check_layout(const Tensor<double>& p, const Tensor<double>& y) {
    if (y.rank() != 2 || y.cols() != 2) throw DimensionError("t-SNE layout must be N x 2");
    if (p.rank() != 2 || p.rows() != y.rows() || p.cols() != y.rows()) {
        throw DimensionError("affinity matrix does not match the layout");
    }
}

}  // namespace

double tsne_kl(const Tensor<double>& p, const Tensor<double>& y) {
    check_layout(p, y);
    return kl_divergence(p, y, affinity_entropy(p));
}

Tensor<double> tsne_gradient(const Tensor<double>& p, const Tensor<double>& y, double exaggeration) {
    check_layout(p, y);
    Tensor<double> grad(y.shape(), 0.0);
    std::vector<double> attract, repel;
    fused_gradient(p, y, exaggeration, attract, repel, grad);
    return grad;
}

Tensor<double> tsne_initial_layout(std::size_t n, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x75E1));
    Tensor<double> y({n, 2});
    for (auto& v : y.values()) v = 1e-4 * rng.normal();
    return y;
}

Embedding2D tsne_fit(const Tensor<double>& x, const TsneConfig& config) {
    config.validate(x.rows());
    const std::size_t n = x.rows();
    const auto p = conditional_affinities(x, config.perplexity);

    Embedding2D out;
    out.config = config;
    out.points = tsne_initial_layout(n, config.seed);
    auto& y = out.points;
    Tensor<double> step(y.shape(), 0.0), gains(y.shape(), 1.0), grad(y.shape(), 0.0);
    const auto entropy_mass = affinity_entropy(p);
    std::vector<double> attract, repel;

    auto record_kl = [&](std::size_t iteration) {
        const double kl = kl_divergence(p, y, entropy_mass);
        if (!std::isfinite(kl)) {
            throw NumericError("t-SNE KL became non-finite at iteration " + std::to_string(iteration));
        }
        out.kl_trace.emplace_back(iteration, kl);
        return kl;
    };

    for (std::size_t it = 1; it <= config.iterations; ++it) {
        const double exaggeration = it <= config.exaggeration_iterations ? config.early_exaggeration : 1.0;
        const double momentum = it <= config.momentum_switch ? config.momentum : config.final_momentum;
        fused_gradient(p, y, exaggeration, attract, repel, grad);
        for (std::size_t i = 0; i < y.size(); ++i) {
            const bool same_sign = (grad[i] > 0.0) == (step[i] > 0.0);
            gains[i] = std::max(same_sign ? gains[i] * 0.8 : gains[i] + 0.2, 0.01);
            step[i] = momentum * step[i] - config.learning_rate * gains[i] * grad[i];
            y[i] += step[i];
        }
        double cx = 0.0, cy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            cx += y(i, 0);
            cy += y(i, 1);
        }
        cx /= static_cast<double>(n);
        cy /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            y(i, 0) -= cx;
            y(i, 1) -= cy;
        }
        if (!y.all_finite()) {
            throw NumericError("t-SNE layout became non-finite at iteration " + std::to_string(it));
        }
        const bool boundary = it == config.exaggeration_iterations || it == config.iterations;
        if (boundary || (config.kl_every > 0 && it % config.kl_every == 0)) record_kl(it);
    }
    if (out.kl_trace.empty() || out.kl_trace.back().first != config.iterations) record_kl(config.iterations);
    out.kl_final = out.kl_trace.back().second;
    return out;
}

}  // namespace xmodal
