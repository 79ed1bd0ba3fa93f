#include "maialab/audit.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "maialab/io.hpp"

namespace maialab::audit {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

FeatureMatrix Standardizer::apply(const FeatureMatrix& X) const {
    if (X.cols != mean.size()) fail("SchemaError", "standardizer/matrix column mismatch");
    FeatureMatrix out = X;
    for (size_t r = 0; r < X.rows; ++r)
        for (size_t c = 0; c < X.cols; ++c)
            out.at(r, c) = constant_column[c] ? 0.0 : (X.at(r, c) - mean[c]) / scale[c];
    out.standardized = true;
    return out;
}

std::pair<FeatureMatrix, Standardizer> standardize(const FeatureMatrix& X) {
    if (X.rows < 2) fail("InsufficientData", "standardization needs at least 2 rows");
    Standardizer stats;
    stats.mean.assign(X.cols, 0.0);
    stats.scale.assign(X.cols, 1.0);
    stats.constant_column.assign(X.cols, false);
    for (size_t c = 0; c < X.cols; ++c) {
        double sum = 0.0;
        for (size_t r = 0; r < X.rows; ++r) sum += X.at(r, c);
        const double mean = sum / static_cast<double>(X.rows);
        double sq = 0.0;
        for (size_t r = 0; r < X.rows; ++r) {
            const double d = X.at(r, c) - mean;
            sq += d * d;
        }
        const double variance = sq / static_cast<double>(X.rows);
        stats.mean[c] = mean;
        if (variance < 1e-24) {
            stats.constant_column[c] = true;  // mapped to zeros
            stats.scale[c] = 1.0;
        } else {
            stats.scale[c] = std::sqrt(variance);
        }
    }
    return {stats.apply(X), stats};
}

FeatureMatrix select_columns(const FeatureMatrix& X, const std::vector<size_t>& column_indices) {
    FeatureMatrix out;
    out.rows = X.rows;
    out.cols = column_indices.size();
    out.standardized = X.standardized;
    out.values.resize(out.rows * out.cols);
    for (size_t c = 0; c < column_indices.size(); ++c) {
        if (column_indices[c] >= X.cols) fail("SchemaError", "column index out of range");
        if (!X.columns.empty()) out.columns.push_back(X.columns[column_indices[c]]);
    }
    for (size_t r = 0; r < X.rows; ++r)
        for (size_t c = 0; c < column_indices.size(); ++c)
            out.at(r, c) = X.at(r, column_indices[c]);
    return out;
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

namespace {

size_t infer_classes(const std::vector<int>& y) {
    int max_label = 0;
    for (int label : y) {
        if (label < 0) fail("SchemaError", "labels must be nonnegative");
        max_label = std::max(max_label, label);
    }
    return static_cast<size_t>(max_label) + 1;
}

/// Mean cross-entropy; fills per-class probabilities into `probs` (n x K).
double cross_entropy(const FeatureMatrix& X, const std::vector<int>& y,
                     const std::vector<double>& W, const std::vector<double>& b, size_t K,
                     std::vector<double>& probs) {
    const size_t n = X.rows, d = X.cols;
    probs.resize(n * K);
    double loss = 0.0;
    std::vector<double> z(K);
    for (size_t i = 0; i < n; ++i) {
        const double* xi = X.values.data() + i * d;
        for (size_t c = 0; c < K; ++c) {
            const double* wc = W.data() + c * d;
            double acc = b[c];
            for (size_t j = 0; j < d; ++j) acc += wc[j] * xi[j];
            z[c] = acc;
        }
        double m = z[0];
        for (size_t c = 1; c < K; ++c) m = std::max(m, z[c]);
        double denom = 0.0;
        for (size_t c = 0; c < K; ++c) denom += std::exp(z[c] - m);
        const double log_denom = std::log(denom) + m;
        loss += log_denom - z[static_cast<size_t>(y[i])];
        for (size_t c = 0; c < K; ++c) probs[i * K + c] = std::exp(z[c] - log_denom);
    }
    return loss / static_cast<double>(n);
}

/// Gradient of the mean cross-entropy in (W, b) given probabilities.
void smooth_grad(const FeatureMatrix& X, const std::vector<int>& y,
                 const std::vector<double>& probs, size_t K, std::vector<double>& gW,
                 std::vector<double>& gb) {
    const size_t n = X.rows, d = X.cols;
    gW.assign(K * d, 0.0);
    gb.assign(K, 0.0);
    for (size_t i = 0; i < n; ++i) {
        const double* xi = X.values.data() + i * d;
        for (size_t c = 0; c < K; ++c) {
            const double delta =
                probs[i * K + c] - (static_cast<size_t>(y[i]) == c ? 1.0 : 0.0);
            gb[c] += delta;
            double* gwc = gW.data() + c * d;
            for (size_t j = 0; j < d; ++j) gwc[j] += delta * xi[j];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& g : gW) g *= inv_n;
    for (auto& g : gb) g *= inv_n;
}

double l1_norm(const std::vector<double>& W) {
    double s = 0.0;
    for (double w : W) s += std::abs(w);
    return s;
}

double soft_threshold(double w, double t) {
    if (w > t) return w - t;
    if (w < -t) return w + t;
    return 0.0;
}

/// Max stationarity violation of CE + lambda*|W| at (W, gW).
double kkt_residual(const std::vector<double>& W, const std::vector<double>& gW, double lambda) {
    double worst = 0.0;
    for (size_t i = 0; i < W.size(); ++i) {
        double r;
        if (std::abs(W[i]) <= 1e-12)
            r = std::max(0.0, std::abs(gW[i]) - lambda);
        else
            r = std::abs(gW[i] + lambda * (W[i] > 0 ? 1.0 : -1.0));
        worst = std::max(worst, r);
    }
    return worst;
}

std::vector<size_t> nonzero_columns(const std::vector<double>& W, size_t K, size_t d) {
    std::vector<size_t> cols;
    for (size_t j = 0; j < d; ++j) {
        double biggest = 0.0;
        for (size_t c = 0; c < K; ++c) biggest = std::max(biggest, std::abs(W[c * d + j]));
        if (biggest > 1e-8) cols.push_back(j);
    }
    return cols;
}

}  // namespace

L1Path l1_multinomial_fit(const FeatureMatrix& X, const std::vector<int>& y, double lambda,
                          const FitOptions& options) {
    if (X.rows == 0 || X.rows != y.size())
        fail("SchemaError", "feature matrix and labels disagree");
    for (double v : X.values)
        if (!std::isfinite(v)) fail("NumericalError", "non-finite feature value");
    if (!std::isfinite(lambda) || lambda < 0.0)
        fail("NumericalError", "lambda must be finite and nonnegative");

    const size_t K = infer_classes(y);
    const size_t d = X.cols;

    L1Path path;
    path.lambda = lambda;
    path.n_classes = K;
    path.n_features = d;

    // accelerated proximal gradient with backtracking; a monotone restart
    // keeps the objective trace nonincreasing
    std::vector<double> W(K * d, 0.0), b(K, 0.0);
    if (options.warm_start && options.warm_start->weights.size() == K * d) {
        W = options.warm_start->weights;
        b = options.warm_start->bias;
    }
    std::vector<double> Wv = W, bv = b;       // extrapolation point
    std::vector<double> W_prev = W, b_prev = b;
    double momentum = 1.0;

    std::vector<double> probs, gW, gb, probs_next;
    std::vector<double> W_next(K * d), b_next(K);
    double objective = cross_entropy(X, y, W, b, K, probs) + lambda * l1_norm(W);
    path.objective_trace.push_back(objective);

    double step = 1.0;
    size_t iter = 0;

    auto prox_step_from = [&](const std::vector<double>& Wp, const std::vector<double>& bp)
        -> double {
        // fills W_next/b_next with the backtracked prox step taken at (Wp, bp)
        const double smooth_here = cross_entropy(X, y, Wp, bp, K, probs);
        smooth_grad(X, y, probs, K, gW, gb);
        while (true) {
            for (size_t i = 0; i < Wp.size(); ++i)
                W_next[i] = soft_threshold(Wp[i] - step * gW[i], step * lambda);
            for (size_t c = 0; c < K; ++c) b_next[c] = bp[c] - step * gb[c];
            const double smooth_next = cross_entropy(X, y, W_next, b_next, K, probs_next);
            double dot = 0.0, sq = 0.0;
            for (size_t i = 0; i < Wp.size(); ++i) {
                const double diff = W_next[i] - Wp[i];
                dot += gW[i] * diff;
                sq += diff * diff;
            }
            for (size_t c = 0; c < K; ++c) {
                const double diff = b_next[c] - bp[c];
                dot += gb[c] * diff;
                sq += diff * diff;
            }
            if (smooth_next <= smooth_here + dot + sq / (2.0 * step) + 1e-12)
                return smooth_next + lambda * l1_norm(W_next);
            step *= 0.5;
            if (step < 1e-14) return smooth_next + lambda * l1_norm(W_next);
        }
    };

    for (; iter < options.max_iterations; ++iter) {
        double objective_next = prox_step_from(Wv, bv);
        if (objective_next > objective + 1e-15) {
            // acceleration overshot: restart from the last accepted point
            momentum = 1.0;
            objective_next = prox_step_from(W, b);
            if (objective_next > objective) {
                // no descent possible at numerical precision: converged
                path.objective_trace.push_back(objective);
                ++iter;
                break;
            }
        }
        W_prev.swap(W);
        b_prev.swap(b);
        W = W_next;
        b = b_next;

        const double momentum_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
        const double blend = (momentum - 1.0) / momentum_next;
        for (size_t i = 0; i < W.size(); ++i) Wv[i] = W[i] + blend * (W[i] - W_prev[i]);
        for (size_t c = 0; c < K; ++c) bv[c] = b[c] + blend * (b[c] - b_prev[c]);
        momentum = momentum_next;

        path.objective_trace.push_back(objective_next);
        const double change = objective - objective_next;
        const bool settled =
            std::abs(change) <= options.tolerance * std::max(1.0, std::abs(objective));
        objective = objective_next;

        if (settled) {
            // for regularized fits, insist on stationarity before stopping
            if (lambda == 0.0) {
                ++iter;
                break;
            }
            cross_entropy(X, y, W, b, K, probs);
            smooth_grad(X, y, probs, K, gW, gb);
            if (kkt_residual(W, gW, lambda) <= options.kkt_tolerance) {
                ++iter;
                break;
            }
            momentum = 1.0;  // polish without acceleration
        }
        step = std::min(step * 1.2, 1e6);
    }

    path.weights = std::move(W);
    path.bias = std::move(b);
    path.objective_value = objective;
    path.iterations = iter;
    path.nonzero_neurons = nonzero_columns(path.weights, K, d);
    return path;
}

std::vector<double> smooth_gradient(const FeatureMatrix& X, const std::vector<int>& y,
                                    const L1Path& path) {
    std::vector<double> probs, gW, gb;
    cross_entropy(X, y, path.weights, path.bias, path.n_classes, probs);
    smooth_grad(X, y, probs, path.n_classes, gW, gb);
    return gW;
}

SparsityResult lambda_for_sparsity(const FeatureMatrix& X, const std::vector<int>& y,
                                   size_t target, size_t max_steps) {
    if (target == 0 || target > X.cols)
        fail("SparsityUnreachable", "target must lie in [1, n_features]");

    // lambda_max: with W = 0 and bias at the class priors, the largest
    // gradient magnitude bounds the smallest all-zero lambda
    const size_t K = infer_classes(y);
    L1Path zero;
    zero.n_classes = K;
    zero.n_features = X.cols;
    zero.weights.assign(K * X.cols, 0.0);
    zero.bias.assign(K, 0.0);
    std::vector<double> counts(K, 0.0);
    for (int label : y) counts[static_cast<size_t>(label)] += 1.0;
    for (size_t c = 0; c < K; ++c)
        zero.bias[c] = std::log(std::max(counts[c], 1.0) / static_cast<double>(y.size()));
    const std::vector<double> g0 = smooth_gradient(X, y, zero);
    double lambda_hi = 1e-12;
    for (double g : g0) lambda_hi = std::max(lambda_hi, std::abs(g));
    lambda_hi *= 1.01;

    FitOptions options;
    SparsityResult result;

    L1Path hi_path = l1_multinomial_fit(X, y, lambda_hi, options);
    size_t hi_count = hi_path.nonzero_neurons.size();
    if (hi_count == target) {
        result.lambda = lambda_hi;
        result.path = std::move(hi_path);
        result.exact = true;
        result.bracket_low_count = result.bracket_high_count = target;
        return result;
    }

    double lambda_lo = lambda_hi;
    L1Path lo_path = hi_path;
    size_t lo_count = hi_count;
    size_t probes = 0;
    while (lo_count < target) {
        lambda_lo /= 10.0;
        if (++probes > 12)
            fail("SparsityUnreachable",
                 "could not bracket " + std::to_string(target) + " nonzero columns (best " +
                     std::to_string(lo_count) + ")");
        FitOptions warm = options;
        warm.warm_start = &lo_path;
        lo_path = l1_multinomial_fit(X, y, lambda_lo, warm);
        lo_count = lo_path.nonzero_neurons.size();
        if (lo_count == target) {
            result.lambda = lambda_lo;
            result.path = std::move(lo_path);
            result.exact = true;
            result.bracket_low_count = result.bracket_high_count = target;
            result.steps = probes;
            return result;
        }
    }

    // bisection on log-lambda: lo gives >= target nonzeros, hi gives < target
    for (size_t step = 0; step < max_steps; ++step) {
        ++result.steps;
        const double lambda_mid = std::exp(0.5 * (std::log(lambda_lo) + std::log(lambda_hi)));
        FitOptions warm = options;
        warm.warm_start = &lo_path;
        L1Path mid_path = l1_multinomial_fit(X, y, lambda_mid, warm);
        const size_t mid_count = mid_path.nonzero_neurons.size();
        if (mid_count == target) {
            result.lambda = lambda_mid;
            result.path = std::move(mid_path);
            result.exact = true;
            result.bracket_low_count = result.bracket_high_count = target;
            return result;
        }
        if (mid_count > target) {
            lambda_lo = lambda_mid;
            lo_path = std::move(mid_path);
            lo_count = mid_count;
        } else {
            lambda_hi = lambda_mid;
            hi_path = std::move(mid_path);
            hi_count = mid_count;
        }
    }

    // the path jumped over the target: report the nearest achievable count
    result.bracket_low_count = lo_count;
    result.bracket_high_count = hi_count;
    const bool lo_closer = lo_count - target <= target - hi_count;
    result.lambda = lo_closer ? lambda_lo : lambda_hi;
    result.path = lo_closer ? std::move(lo_path) : std::move(hi_path);
    result.exact = false;
    return result;
}

std::vector<int> predict(const L1Path& path, const FeatureMatrix& X) {
    if (X.cols != path.n_features) fail("SchemaError", "feature count mismatch");
    std::vector<int> labels(X.rows, 0);
    for (size_t i = 0; i < X.rows; ++i) {
        const double* xi = X.values.data() + i * X.cols;
        double best = -1e300;
        int best_class = 0;
        for (size_t c = 0; c < path.n_classes; ++c) {
            const double* wc = path.weights.data() + c * path.n_features;
            double acc = path.bias[c];
            for (size_t j = 0; j < path.n_features; ++j) acc += wc[j] * xi[j];
            if (acc > best) {
                best = acc;
                best_class = static_cast<int>(c);
            }
        }
        labels[i] = best_class;
    }
    return labels;
}

double accuracy(const L1Path& path, const FeatureMatrix& X, const std::vector<int>& y) {
    const std::vector<int> predicted = predict(path, X);
    size_t hits = 0;
    for (size_t i = 0; i < y.size(); ++i) hits += predicted[i] == y[i];
    return y.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(y.size());
}

double retrain_and_evaluate(const FeatureMatrix& X_val, const std::vector<int>& y_val,
                            const std::vector<size_t>& subset, const FeatureMatrix& X_test,
                            const std::vector<int>& y_test) {
    if (subset.empty()) fail("EmptySubset", "cannot retrain on an empty neuron subset");
    const FeatureMatrix val = select_columns(X_val, subset);
    const FeatureMatrix test = select_columns(X_test, subset);
    const L1Path fit = l1_multinomial_fit(val, y_val, 0.0);
    return accuracy(fit, test, y_test);
}

// ---------------------------------------------------------------------------
// Planted dataset
// ---------------------------------------------------------------------------

namespace {

struct Rng {
    std::uint64_t state;
    explicit Rng(std::uint64_t seed) : state(splitmix64(seed ^ 0xA5A5A5A5A5A5A5A5ULL)) {}
    std::uint64_t next() {
        state = splitmix64(state + 0x9E3779B97F4A7C15ULL);
        return state;
    }
    double uniform() { return unit_real(next()); }
    double normal() {
        // Box-Muller; u clamped away from zero
        const double u = std::max(uniform(), 1e-12);
        const double v = uniform();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * 3.14159265358979323846 * v);
    }
    size_t below(size_t n) { return static_cast<size_t>(next() % n); }
};

const std::vector<std::string>& default_class_names() {
    static const std::vector<std::string> names = {"labrador", "corgi", "bulldog", "dachshund"};
    return names;
}

const std::vector<std::string>& default_env_names() {
    static const std::vector<std::string> names = {"beach", "desert", "jungle", "snow"};
    return names;
}

}  // namespace

void PlantedDatasetSpec::validate() const {
    if (n_classes < 2 || n_envs < 2) fail("SpecError", "need at least 2 classes and 2 environments");
    if (selective_per_class * n_classes + spurious_per_env * n_envs > n_features)
        fail("SpecError", "feature budget too small for the planted roles");
    const PlantedDatasetSpec r = resolved();
    if (r.train_pairing.size() != n_classes || r.test_pairing.size() != n_classes)
        fail("SpecError", "pairings must map every class to an environment");
    for (size_t c = 0; c < n_classes; ++c) {
        if (r.train_pairing[c] >= n_envs || r.test_pairing[c] >= n_envs)
            fail("SpecError", "pairing points at a missing environment");
        if (r.train_pairing[c] == r.test_pairing[c])
            fail("SpecError", "test pairing must differ from the train pairing for every class");
    }
    if (r.class_names.size() != n_classes || r.env_names.size() != n_envs)
        fail("SpecError", "class/env name lists must match the counts");
}

PlantedDatasetSpec PlantedDatasetSpec::resolved() const {
    PlantedDatasetSpec r = *this;
    if (r.train_pairing.empty())
        for (size_t c = 0; c < n_classes; ++c) r.train_pairing.push_back(c % n_envs);
    if (r.test_pairing.empty())
        for (size_t c = 0; c < n_classes; ++c)
            r.test_pairing.push_back(r.train_pairing[c] + 1 < n_envs ? r.train_pairing[c] + 1 : 0);
    if (r.class_names.empty())
        for (size_t c = 0; c < n_classes; ++c)
            r.class_names.push_back(c < default_class_names().size()
                                        ? default_class_names()[c]
                                        : "class" + std::to_string(c));
    if (r.env_names.empty())
        for (size_t e = 0; e < n_envs; ++e)
            r.env_names.push_back(e < default_env_names().size() ? default_env_names()[e]
                                                                 : "env" + std::to_string(e));
    return r;
}

PlantedDataset generate_planted_dataset(const PlantedDatasetSpec& raw_spec, std::uint64_t seed) {
    raw_spec.validate();
    const PlantedDatasetSpec spec = raw_spec.resolved();

    PlantedDataset data;
    data.spec = spec;
    for (size_t j = 0; j < spec.n_features; ++j) {
        FeatureTag tag;
        if (j < spec.selective_per_class * spec.n_classes) {
            tag.role = FeatureRole::selective;
            tag.target = j / spec.selective_per_class;
        } else if (j < spec.selective_per_class * spec.n_classes +
                           spec.spurious_per_env * spec.n_envs) {
            tag.role = FeatureRole::spurious;
            tag.target = (j - spec.selective_per_class * spec.n_classes) / spec.spurious_per_env;
        } else {
            tag.role = FeatureRole::noise;
        }
        data.tags.push_back(tag);
    }

    Rng rng(seed);
    auto fill_split = [&](size_t rows, bool shifted, FeatureMatrix& X, std::vector<int>& y,
                          std::vector<size_t>& env_of) {
        X.rows = rows;
        X.cols = spec.n_features;
        X.values.resize(rows * spec.n_features);
        for (size_t j = 0; j < spec.n_features; ++j)
            X.columns.push_back({"planted", "readout", j});
        for (size_t i = 0; i < rows; ++i) {
            const size_t cls = i % spec.n_classes;  // balanced classes
            size_t env;
            if (shifted) {
                env = spec.test_pairing[cls];
            } else if (rng.uniform() < spec.train_env_consistency) {
                env = spec.train_pairing[cls];
            } else {
                // uniform over the other environments
                env = rng.below(spec.n_envs - 1);
                if (env >= spec.train_pairing[cls]) ++env;
            }
            y.push_back(static_cast<int>(cls));
            env_of.push_back(env);
            for (size_t j = 0; j < spec.n_features; ++j) {
                const FeatureTag& tag = data.tags[j];
                double value = 0.0;
                switch (tag.role) {
                    case FeatureRole::selective:
                        value = (tag.target == cls ? spec.selective_amplitude : 0.0) +
                                spec.noise_level * rng.normal();
                        break;
                    case FeatureRole::spurious:
                        value = (tag.target == env ? 1.0 : 0.0) + spec.noise_level * rng.normal();
                        break;
                    case FeatureRole::noise:
                        value = rng.normal();
                        break;
                }
                X.at(i, j) = value;
            }
        }
    };
    fill_split(spec.train_rows, false, data.train_x, data.train_y, data.train_env);
    fill_split(spec.val_rows, false, data.val_x, data.val_y, data.val_env);
    fill_split(spec.test_rows, true, data.test_x, data.test_y, data.test_env);
    return data;
}

scene::ConceptVocabulary planted_vocabulary(const PlantedDatasetSpec& raw_spec) {
    const PlantedDatasetSpec spec = raw_spec.resolved();
    std::vector<std::string> tokens = spec.class_names;
    tokens.insert(tokens.end(), spec.env_names.begin(), spec.env_names.end());
    for (const char* distractor : {"ball", "tree", "rock", "cloud"}) tokens.push_back(distractor);
    return scene::ConceptVocabulary(tokens, {});
}

namespace {

/// Final-layer planted unit over scenes. Selective and spurious units detect
/// their concept like a monosemantic synthetic neuron; noise units stay dark.
class PlantedUnit final : public neurons::System {
public:
    PlantedUnit(neurons::NeuronAddress address, std::string token,
                std::shared_ptr<const scene::ConceptVocabulary> vocab)
        : address_(std::move(address)), vocab_(std::move(vocab)) {
        if (!token.empty()) {
            spec_.kind = neurons::NeuronKind::monosemantic;
            spec_.concept_a = std::move(token);
        }
    }

    neurons::NeuronAddress address() const override { return address_; }

    neurons::ActivationResult activate(const neurons::ImageHandle& image) const override {
        if (spec_.concept_a.empty()) {
            neurons::ActivationResult zero;
            zero.masked_image = image;
            zero.masked_image.evidence_mask = std::make_shared<scene::Mask>(
                image.has_scene() ? image.scene_data->width : 1,
                image.has_scene() ? image.scene_data->height : 1, 0);
            return zero;
        }
        if (!image.has_scene())
            fail("BackendError", "planted units probe scene-backed images");
        return neurons::synthetic_activation(spec_, *image.scene_data, *vocab_);
    }

    double activation_only(const neurons::ImageHandle& image) const override {
        if (spec_.concept_a.empty()) return 0.0;
        return neurons::System::activation_only(image);
    }

private:
    neurons::NeuronAddress address_;
    neurons::SyntheticNeuronSpec spec_;  // concept_a empty for noise units
    std::shared_ptr<const scene::ConceptVocabulary> vocab_;
};

}  // namespace

neurons::SystemHandle planted_neuron_system(const PlantedDataset& dataset, size_t feature_index) {
    if (feature_index >= dataset.tags.size()) fail("AddressError", "feature index out of range");
    const FeatureTag& tag = dataset.tags[feature_index];
    auto vocab = std::make_shared<const scene::ConceptVocabulary>(
        planted_vocabulary(dataset.spec));
    std::string token;
    if (tag.role == FeatureRole::selective) token = dataset.spec.class_names[tag.target];
    if (tag.role == FeatureRole::spurious) token = dataset.spec.env_names[tag.target];
    return std::make_shared<PlantedUnit>(
        neurons::NeuronAddress{"planted", "readout", feature_index}, token, std::move(vocab));
}

void save_dataset_bundle(const PlantedDataset& dataset, const std::filesystem::path& dir) {
    io::ensure_dirs(dir);
    const auto& spec = dataset.spec;

    auto write_features = [&](std::ostream& out) {
        out << "split,row";
        for (size_t j = 0; j < spec.n_features; ++j) out << ",f" << j;
        out << "\n";
        auto dump = [&](const char* split, const FeatureMatrix& X) {
            out.precision(10);
            for (size_t i = 0; i < X.rows; ++i) {
                out << split << "," << i;
                for (size_t j = 0; j < X.cols; ++j) out << "," << X.at(i, j);
                out << "\n";
            }
        };
        dump("train", dataset.train_x);
        dump("val", dataset.val_x);
        dump("test", dataset.test_x);
    };
    std::ostringstream features;
    write_features(features);
    io::atomic_write_file(dir / "features.csv", features.str());

    std::ostringstream labels;
    labels << "split,row,class,env\n";
    auto dump_labels = [&](const char* split, const std::vector<int>& y,
                           const std::vector<size_t>& env) {
        for (size_t i = 0; i < y.size(); ++i)
            labels << split << "," << i << "," << y[i] << "," << env[i] << "\n";
    };
    dump_labels("train", dataset.train_y, dataset.train_env);
    dump_labels("val", dataset.val_y, dataset.val_env);
    dump_labels("test", dataset.test_y, dataset.test_env);
    io::atomic_write_file(dir / "labels.csv", labels.str());

    json tags = json::array();
    for (size_t j = 0; j < dataset.tags.size(); ++j) {
        const FeatureTag& tag = dataset.tags[j];
        json t;
        t["feature"] = j;
        t["role"] = tag.role == FeatureRole::selective ? "selective"
                    : tag.role == FeatureRole::spurious ? "spurious"
                                                        : "noise";
        if (tag.role == FeatureRole::selective) t["class"] = spec.class_names[tag.target];
        if (tag.role == FeatureRole::spurious) t["environment"] = spec.env_names[tag.target];
        tags.push_back(std::move(t));
    }
    io::atomic_write_file(dir / "tags.json", tags.dump(2));

    json pairings;
    pairings["classes"] = spec.class_names;
    pairings["environments"] = spec.env_names;
    pairings["train"] = spec.train_pairing;
    pairings["test"] = spec.test_pairing;
    io::atomic_write_file(dir / "pairings.json", pairings.dump(2));
}

PlantedDataset load_dataset_bundle(const std::filesystem::path& dir) {
    const auto features_text = io::read_file(dir / "features.csv");
    const auto labels_text = io::read_file(dir / "labels.csv");
    const auto tags_text = io::read_file(dir / "tags.json");
    const auto pairings_text = io::read_file(dir / "pairings.json");
    if (!features_text || !labels_text || !tags_text || !pairings_text)
        fail("ConfigError", "dataset bundle at " + dir.string() +
                                " must hold features.csv, labels.csv, tags.json, pairings.json");

    PlantedDataset data;
    const json pairings = json::parse(*pairings_text);
    data.spec.class_names = pairings.at("classes").get<std::vector<std::string>>();
    data.spec.env_names = pairings.at("environments").get<std::vector<std::string>>();
    data.spec.train_pairing = pairings.at("train").get<std::vector<size_t>>();
    data.spec.test_pairing = pairings.at("test").get<std::vector<size_t>>();
    data.spec.n_classes = data.spec.class_names.size();
    data.spec.n_envs = data.spec.env_names.size();

    const json tags = json::parse(*tags_text);
    for (const auto& t : tags) {
        FeatureTag tag;
        const std::string role = t.at("role").get<std::string>();
        if (role == "selective") {
            tag.role = FeatureRole::selective;
            const std::string name = t.at("class").get<std::string>();
            tag.target = static_cast<size_t>(
                std::find(data.spec.class_names.begin(), data.spec.class_names.end(), name) -
                data.spec.class_names.begin());
        } else if (role == "spurious") {
            tag.role = FeatureRole::spurious;
            const std::string name = t.at("environment").get<std::string>();
            tag.target = static_cast<size_t>(
                std::find(data.spec.env_names.begin(), data.spec.env_names.end(), name) -
                data.spec.env_names.begin());
        } else {
            tag.role = FeatureRole::noise;
        }
        data.tags.push_back(tag);
    }
    data.spec.n_features = data.tags.size();

    auto split_of = [&](const std::string& name) -> std::tuple<FeatureMatrix*, std::vector<int>*,
                                                               std::vector<size_t>*> {
        if (name == "train") return {&data.train_x, &data.train_y, &data.train_env};
        if (name == "val") return {&data.val_x, &data.val_y, &data.val_env};
        if (name == "test") return {&data.test_x, &data.test_y, &data.test_env};
        fail("ConfigError", "unknown split '" + name + "' in dataset bundle");
    };

    {
        std::istringstream in(*features_text);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            std::istringstream row(line);
            std::string split, cell;
            std::getline(row, split, ',');
            std::getline(row, cell, ',');  // row index
            auto [X, y, env] = split_of(split);
            while (std::getline(row, cell, ',')) X->values.push_back(std::stod(cell));
            X->cols = data.spec.n_features;
            ++X->rows;
        }
    }
    for (FeatureMatrix* X : {&data.train_x, &data.val_x, &data.test_x}) {
        X->cols = data.spec.n_features;
        for (size_t j = 0; j < X->cols; ++j) X->columns.push_back({"planted", "readout", j});
        if (X->rows * X->cols != X->values.size())
            fail("ConfigError", "features.csv rows are ragged");
    }
    {
        std::istringstream in(*labels_text);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            std::istringstream row(line);
            std::string split, idx, cls, env;
            std::getline(row, split, ',');
            std::getline(row, idx, ',');
            std::getline(row, cls, ',');
            std::getline(row, env, ',');
            auto [X, y, envs] = split_of(split);
            y->push_back(std::stoi(cls));
            envs->push_back(std::stoull(env));
        }
    }
    if (data.val_x.rows != data.val_y.size() || data.test_x.rows != data.test_y.size())
        fail("ConfigError", "features.csv and labels.csv disagree on split sizes");
    return data;
}

// ---------------------------------------------------------------------------
// Agent filtering & the pipeline
// ---------------------------------------------------------------------------

FilterOutcome filter_neurons_with_agent(const PlantedDataset& dataset,
                                        const std::vector<size_t>& candidates,
                                        const FilterOptions& options) {
    const scene::ConceptVocabulary vocab = planted_vocabulary(dataset.spec);
    const tools::ClientRegistry registry = tools::ClientRegistry::with_defaults(&vocab);
    auto corpus = std::make_shared<std::vector<neurons::ImageHandle>>(
        tools::make_synthetic_corpus(vocab, options.corpus_size, 17));

    std::string classes, envs;
    for (const auto& name : dataset.spec.class_names) {
        if (!classes.empty()) classes += ", ";
        classes += name;
    }
    for (const auto& name : dataset.spec.env_names) {
        if (!envs.empty()) envs += ", ";
        envs += name;
    }

    FilterOutcome outcome;
    for (size_t feature : candidates) {
        tools::ToolContext ctx;
        ctx.clients = registry.make_clients("scene", "scene", "scene", "scene");
        ctx.seed = 101;
        ctx.dataset = corpus;

        agent::TaskPrompt task;
        task.kind = agent::TaskKind::spurious_classification;
        task.slots["classes"] = classes;
        task.slots["environments"] = envs;

        agent::SessionOptions session_options;
        session_options.round_budget = options.round_budget;
        if (!options.run_dir.empty()) {
            session_options.run_dir = options.run_dir;
            session_options.artifact_stem = "unit_" + std::to_string(feature);
        }

        auto backbone = agent::scripted_backbone(agent::Playbook::spurious_default, &vocab);
        const agent::SessionResult result =
            agent::run_session(*backbone, planted_neuron_system(dataset, feature), ctx, task, {},
                               session_options);
        if (result.report.aborted) {
            outcome.exclusions[feature] = "session aborted: " + result.report.diagnostics;
        } else if (!result.report.parse_ok) {
            outcome.exclusions[feature] = "unparsed report (treated as SPURIOUS)";
        } else if (result.report.selective == true) {
            outcome.selective_subset.push_back(feature);
        } else {
            outcome.exclusions[feature] = "verdict SPURIOUS";
        }
    }
    std::sort(outcome.selective_subset.begin(), outcome.selective_subset.end());
    return outcome;
}

SpuriousPipelineResult run_spurious_pipeline(const PlantedDatasetSpec& spec, std::uint64_t seed,
                                             const FilterOptions& filter_options) {
    return run_spurious_pipeline(generate_planted_dataset(spec, seed), seed, filter_options);
}

SpuriousPipelineResult run_spurious_pipeline(const PlantedDataset& data, std::uint64_t seed,
                                             const FilterOptions& filter_options) {
    // standardize on the fitting split; reuse those statistics everywhere
    auto [val_std, stats] = standardize(data.val_x);
    const FeatureMatrix test_std = stats.apply(data.test_x);
    const FeatureMatrix train_std = stats.apply(data.train_x);

    SpuriousPipelineResult result;

    // original readout: unregularized fit on the training split, all features
    {
        const L1Path original = l1_multinomial_fit(train_std, data.train_y, 0.0);
        result.rows.push_back({"all", "original", data.spec.resolved().n_features, false,
                               accuracy(original, test_std, data.test_y)});
    }

    // l1 top-50 (or nearest target scaled to the feature budget)
    const size_t top_target = std::min<size_t>(50, val_std.cols);
    result.sparsity50 = lambda_for_sparsity(val_std, data.val_y, top_target);
    result.l1_top50 = result.sparsity50.path.nonzero_neurons;
    result.rows.push_back({"l1-top50", "l1", result.l1_top50.size(), false,
                           accuracy(result.sparsity50.path, test_std, data.test_y)});

    // random 22-subsets of the top 50, mean over draws
    {
        Rng rng(seed ^ 0x5EEDULL);
        const size_t draws = 20;
        const size_t pick = std::min<size_t>(22, result.l1_top50.size());
        double sum = 0.0;
        for (size_t r = 0; r < draws; ++r) {
            std::vector<size_t> pool = result.l1_top50;
            for (size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.below(i)]);
            pool.resize(pick);
            sum += retrain_and_evaluate(val_std, data.val_y, pool, test_std, data.test_y);
        }
        result.rows.push_back({"l1-top50", "random", pick, false, sum / draws});
    }

    // l1 top-22 nested inside the top-50 restriction
    {
        const FeatureMatrix val50 = select_columns(val_std, result.l1_top50);
        const FeatureMatrix test50 = select_columns(test_std, result.l1_top50);
        const SparsityResult nested =
            lambda_for_sparsity(val50, data.val_y, std::min<size_t>(22, val50.cols));
        result.rows.push_back({"l1-top50", "l1-top22", nested.path.nonzero_neurons.size(), false,
                               accuracy(nested.path, test50, data.test_y)});
    }

    // agent-filtered subset
    {
        const FilterOutcome filtered =
            filter_neurons_with_agent(data, result.l1_top50, filter_options);
        result.agent_subset = filtered.selective_subset;
        const double agent_accuracy =
            filtered.selective_subset.empty()
                ? 0.0
                : retrain_and_evaluate(val_std, data.val_y, filtered.selective_subset, test_std,
                                       data.test_y);
        result.rows.push_back(
            {"l1-top50", "agent", filtered.selective_subset.size(), false, agent_accuracy});
    }
    return result;
}

std::string spurious_rows_csv(const std::vector<SpuriousRow>& rows) {
    std::ostringstream out;
    out << "subset,method,units,balanced,accuracy\n";
    out.precision(6);
    for (const auto& row : rows)
        out << row.subset << "," << row.method << "," << row.units << ","
            << (row.balanced ? "yes" : "no") << "," << row.accuracy << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Bias identification
// ---------------------------------------------------------------------------

namespace {

class BiasedLogit final : public neurons::System {
public:
    BiasedLogit(BiasSetup setup, std::shared_ptr<const scene::ConceptVocabulary> vocab)
        : setup_(std::move(setup)), vocab_(std::move(vocab)) {
        class_spec_.kind = neurons::NeuronKind::monosemantic;
        class_spec_.concept_a = setup_.class_label;
        if (!setup_.context.empty()) {
            context_spec_.kind = neurons::NeuronKind::monosemantic;
            context_spec_.concept_a = setup_.context;
        }
    }

    neurons::NeuronAddress address() const override { return {"classifier", "logit", 0}; }

    neurons::ActivationResult activate(const neurons::ImageHandle& image) const override {
        if (!image.has_scene()) fail("BackendError", "the logit probes scene-backed images");
        const auto& scene_data = *image.scene_data;
        const auto class_hit =
            neurons::detect_concept(scene_data, setup_.class_label, class_spec_, *vocab_);

        neurons::ActivationResult result;
        double probability = setup_.absent_probability;
        if (class_hit) {
            probability = setup_.base_probability;
            if (setup_.context.empty()) {
                probability = setup_.biased_probability;  // uniform class behavior
            } else if (neurons::detect_concept(scene_data, setup_.context, context_spec_,
                                               *vocab_)) {
                probability = setup_.biased_probability;
            }
        }
        result.activation = probability;
        result.reported_activation = std::round(probability * 100.0) / 100.0;

        auto mask = std::make_shared<scene::Mask>(
            class_hit ? neurons::detection_mask(*class_hit, scene_data.width, scene_data.height,
                                                class_spec_.dilation_radius)
                      : scene::Mask(scene_data.width, scene_data.height, 0));
        result.mask_coverage = mask->coverage();
        result.masked_image = image;
        result.masked_image.evidence_mask = std::move(mask);
        result.masked_image.reported_activation = result.reported_activation;
        return result;
    }

private:
    BiasSetup setup_;
    neurons::SyntheticNeuronSpec class_spec_, context_spec_;
    std::shared_ptr<const scene::ConceptVocabulary> vocab_;
};

}  // namespace

neurons::SystemHandle biased_logit_system(const BiasSetup& setup,
                                          const scene::ConceptVocabulary* vocab) {
    if (setup.class_label.empty()) fail("TemplateError", "bias setup needs a class label");
    auto shared_vocab = std::make_shared<const scene::ConceptVocabulary>(
        vocab ? *vocab : scene::default_vocabulary());
    return std::make_shared<BiasedLogit>(setup, std::move(shared_vocab));
}

agent::FinalReport bias_probe_session(const std::string& class_label,
                                      neurons::SystemHandle logit,
                                      const scene::ConceptVocabulary& vocab,
                                      const BiasProbeOptions& options) {
    const tools::ClientRegistry registry = tools::ClientRegistry::with_defaults(&vocab);
    tools::ToolContext ctx;
    ctx.clients = registry.make_clients("scene", "scene", "scene", "scene");
    ctx.seed = 23;

    agent::TaskPrompt task;
    task.kind = agent::TaskKind::bias_identification;
    task.slots["class_label"] = class_label;

    agent::SessionOptions session_options;
    session_options.round_budget = options.round_budget;
    session_options.run_dir = options.run_dir;
    session_options.artifact_stem = options.artifact_stem;

    auto backbone = agent::scripted_backbone(agent::Playbook::bias_default, &vocab);
    return agent::run_session(*backbone, std::move(logit), ctx, task, {}, session_options).report;
}

}  // namespace maialab::audit
