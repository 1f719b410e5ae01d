#include "taskgraph/density.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "taskgraph/error.hpp"
#include "taskgraph/json_util.hpp"

namespace taskgraph::density {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;

using ConstMap = Eigen::Map<const Eigen::ArrayXXd>;  // modes x d, stored column-major
using GradMap = Eigen::Map<Eigen::ArrayXXd>;

/// Flat parameter block [logits (K), means (K*d, mode-major), v (K*d)], the
/// same layout the conditional network emits per sample.
struct Layout {
    int modes, dim;
    int means() const { return modes; }
    int vars() const { return modes + modes * dim; }
    int size() const { return modes * (1 + 2 * dim); }
};

/// -log q(y) for one mixture; accumulates d(-log q)/dparams into `grad` when non-null.
/// Means and v are read as d x K column-major so each mode is contiguous.
double mixture_nll(const double* params, const double* y, const Layout& L, double floor, double* grad,
                   Eigen::ArrayXd& scratch_l) {
    const int K = L.modes, d = L.dim;
    Eigen::Map<const Eigen::ArrayXd> logits(params, K);
    Eigen::Map<const Eigen::ArrayXXd> mu(params + L.means(), d, K);
    Eigen::Map<const Eigen::ArrayXXd> v(params + L.vars(), d, K);
    Eigen::Map<const Eigen::ArrayXd> yv(y, d);

    const double lmax = logits.maxCoeff();
    const double lse_a = lmax + std::log((logits - lmax).exp().sum());
    scratch_l.resize(K);
    for (int k = 0; k < K; ++k) {
        const Eigen::ArrayXd var = floor + v.col(k).exp();
        const Eigen::ArrayXd diff = yv - mu.col(k);
        scratch_l(k) = logits(k) - lse_a - 0.5 * (kLog2Pi * d + var.log().sum() + (diff.square() / var).sum());
    }
    const double m = scratch_l.maxCoeff();
    const double lse = m + std::log((scratch_l - m).exp().sum());
    if (grad) {
        Eigen::Map<Eigen::ArrayXd> g_logits(grad, K);
        Eigen::Map<Eigen::ArrayXXd> g_mu(grad + L.means(), d, K);
        Eigen::Map<Eigen::ArrayXXd> g_v(grad + L.vars(), d, K);
        for (int k = 0; k < K; ++k) {
            const double r = std::exp(scratch_l(k) - lse);
            const double w = std::exp(logits(k) - lse_a);
            g_logits(k) += w - r;
            const Eigen::ArrayXd ev = v.col(k).exp();
            const Eigen::ArrayXd var = floor + ev;
            const Eigen::ArrayXd diff = yv - mu.col(k);
            g_mu.col(k) -= r * diff / var;
            g_v.col(k) += 0.5 * r * (1.0 - diff.square() / var) * ev / var;
        }
    }
    return -lse;
}

/// Plain Adam over a fixed list of contiguous parameter buffers.
class Adam {
public:
    Adam(std::vector<std::pair<double*, Eigen::Index>> blocks, double lr)
        : blocks_(std::move(blocks)), lr_(lr) {
        for (const auto& [ptr, n] : blocks_) {
            m_.emplace_back(Eigen::ArrayXd::Zero(n));
            v_.emplace_back(Eigen::ArrayXd::Zero(n));
        }
    }

    void step(const std::vector<const double*>& grads) {
        ++t_;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            auto [ptr, n] = blocks_[i];
            Eigen::Map<Eigen::ArrayXd> p(ptr, n);
            Eigen::Map<const Eigen::ArrayXd> g(grads[i], n);
            m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g;
            v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g.square();
            p -= lr_ * (m_[i] / c1) / ((v_[i] / c2).sqrt() + kEps);
        }
    }

private:
    static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    std::vector<std::pair<double*, Eigen::Index>> blocks_;
    std::vector<Eigen::ArrayXd> m_, v_;
    double lr_;
    long t_ = 0;
};

Vector column_variance(const Matrix& x) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    return ((x.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(x.rows())).transpose();
}

double inverse_variance_param(double var, double floor) {
    return std::log(std::max(var - floor, 1e-12));
}

/// Distinct row indices for mode initialisation (with replacement only if rows < modes).
std::vector<Eigen::Index> pick_rows(Eigen::Index rows, int count, Rng& rng) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(rows));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<Eigen::Index> out;
    for (int k = 0; k < count; ++k) out.push_back(idx[static_cast<std::size_t>(k) % idx.size()]);
    return out;
}

void check_finite(const Matrix& x, const char* what) {
    if (!x.allFinite()) throw ValidationError(std::string(what) + " contains non-finite values");
}

GmmModel unpack_marginal(const Eigen::VectorXd& theta, const Layout& L, double floor) {
    GmmModel g;
    g.variance_floor = floor;
    const Eigen::ArrayXd logits = theta.head(L.modes).array();
    const Eigen::ArrayXd e = (logits - logits.maxCoeff()).exp();
    g.weights = (e / e.sum()).matrix();
    g.means = Eigen::Map<const Matrix>(theta.data() + L.means(), L.dim, L.modes).transpose();
    g.diag_variances =
        (floor + Eigen::Map<const Eigen::ArrayXXd>(theta.data() + L.vars(), L.dim, L.modes).exp()).matrix().transpose();
    return g;
}

struct Net {
    Matrix h1, h2, out;  // columns are samples
};

void net_forward(const CondGmm& m, const Matrix& xt, Net& n) {
    n.h1 = ((m.w1.transpose() * xt).colwise() + m.b1).array().tanh().matrix();
    n.h2 = ((m.w2.transpose() * n.h1).colwise() + m.b2).array().tanh().matrix();
    n.out.noalias() = m.w3.transpose() * n.h2;
    n.out.colwise() += m.b3;
}

/// Output columns that carry input-dependent parameters.
Eigen::ArrayXd output_mask(const CondGmm& m) {
    const Layout L{m.modes, m.target_dim};
    Eigen::ArrayXd mask(L.size());
    mask.head(L.modes).setConstant(m.cond_weights ? 1.0 : 0.0);
    mask.segment(L.means(), L.modes * L.dim).setConstant(m.cond_means ? 1.0 : 0.0);
    mask.tail(L.modes * L.dim).setConstant(m.cond_variances ? 1.0 : 0.0);
    return mask;
}

Matrix glorot(Eigen::Index rows, Eigen::Index cols, double gain, Rng& rng) {
    std::normal_distribution<double> nd(0.0, gain * std::sqrt(2.0 / static_cast<double>(rows + cols)));
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = nd(rng);
    return m;
}

}  // namespace

void KnifeConfig::validate() const {
    if (num_modes < 1) throw ValidationError("num_modes must be >= 1");
    if (marginal_epochs < 1 || conditional_epochs < 1) throw ValidationError("epochs must be >= 1");
    if (!(marginal_lr > 0) || !(conditional_lr > 0)) throw ValidationError("learning rates must be > 0");
    if (marginal_batch < 1 || conditional_batch < 1) throw ValidationError("batch sizes must be >= 1");
    if (hidden_dim < 1) throw ValidationError("hidden_dim must be >= 1");
    if (!(variance_floor > 0)) throw ValidationError("variance_floor must be > 0");
    if (!(eval_fraction > 0 && eval_fraction < 1)) throw ValidationError("eval_fraction must be in (0, 1)");
}

nlohmann::json to_json(const KnifeConfig& c) {
    return {{"num_modes", c.num_modes},
            {"marginal_epochs", c.marginal_epochs},
            {"marginal_lr", c.marginal_lr},
            {"marginal_batch", c.marginal_batch},
            {"conditional_epochs", c.conditional_epochs},
            {"conditional_lr", c.conditional_lr},
            {"conditional_batch", c.conditional_batch},
            {"hidden_dim", c.hidden_dim},
            {"variance_floor", c.variance_floor},
            {"eval_fraction", c.eval_fraction},
            {"standardize", c.standardize},
            {"cond_weights", c.cond_weights},
            {"cond_means", c.cond_means},
            {"cond_variances", c.cond_variances}};
}

KnifeConfig knife_from_json(const nlohmann::json& doc) {
    KnifeConfig c;
    ObjectReader r(doc, "knife");
    r.optional("num_modes", c.num_modes);
    r.optional("marginal_epochs", c.marginal_epochs);
    r.optional("marginal_lr", c.marginal_lr);
    r.optional("marginal_batch", c.marginal_batch);
    r.optional("conditional_epochs", c.conditional_epochs);
    r.optional("conditional_lr", c.conditional_lr);
    r.optional("conditional_batch", c.conditional_batch);
    r.optional("hidden_dim", c.hidden_dim);
    r.optional("variance_floor", c.variance_floor);
    r.optional("eval_fraction", c.eval_fraction);
    r.optional("standardize", c.standardize);
    r.optional("cond_weights", c.cond_weights);
    r.optional("cond_means", c.cond_means);
    r.optional("cond_variances", c.cond_variances);
    r.finish();
    c.validate();
    return c;
}

Vector log_density(const GmmModel& gmm, const Matrix& x) {
    if (x.cols() != gmm.dim()) throw ValidationError("dimension mismatch between GMM and data");
    const int K = gmm.modes();
    const Eigen::ArrayXd log_w = gmm.weights.array().log();
    const Eigen::ArrayXd log_norm =
        -0.5 * (kLog2Pi * gmm.dim() + gmm.diag_variances.array().log().rowwise().sum());
    const Eigen::ArrayXXd inv_var = gmm.diag_variances.array().inverse();
    Vector out(x.rows());
    Eigen::ArrayXd l(K);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (int k = 0; k < K; ++k) {
            const double q = ((x.row(i) - gmm.means.row(k)).array().square() * inv_var.row(k)).sum();
            l(k) = log_w(k) + log_norm(k) - 0.5 * q;
        }
        const double m = l.maxCoeff();
        out(i) = m + std::log((l - m).exp().sum());
    }
    return out;
}

GmmModel fit_marginal(const Matrix& train, const KnifeConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    check_finite(train, "training data");
    const Eigen::Index N = train.rows();
    const int K = cfg.num_modes;
    const int d = static_cast<int>(train.cols());
    if (d < 1) throw ValidationError("training data has no columns");
    if (N < 10 * static_cast<Eigen::Index>(K)) {
        throw ValidationError("fit_marginal needs at least " + std::to_string(10 * K) + " rows, got " +
                              std::to_string(N));
    }
    const Vector var = column_variance(train);
    if ((var.array() == 0.0).all()) throw FitError("degenerate data: zero variance in every dimension");

    Rng rng(seed);
    const Layout L{K, d};
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(L.size());
    const auto init_rows = pick_rows(N, K, rng);
    for (int k = 0; k < K; ++k) {
        theta.segment(L.means() + k * d, d) = train.row(init_rows[static_cast<std::size_t>(k)]).transpose();
        for (int j = 0; j < d; ++j) theta(L.vars() + k * d + j) = inverse_variance_param(var(j), cfg.variance_floor);
    }

    const Matrix xt = train.transpose();
    Adam adam({{theta.data(), theta.size()}}, cfg.marginal_lr);
    Eigen::VectorXd grad(L.size());
    Eigen::ArrayXd scratch;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    for (int epoch = 0; epoch < cfg.marginal_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.marginal_batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.marginal_batch));
            grad.setZero();
            for (std::size_t b = start; b < end; ++b) {
                total += mixture_nll(theta.data(), xt.col(order[b]).data(), L, cfg.variance_floor, grad.data(), scratch);
            }
            grad /= static_cast<double>(end - start);
            adam.step({grad.data()});
        }
        if (!std::isfinite(total) || !theta.allFinite()) {
            throw FitError("marginal mixture diverged at epoch " + std::to_string(epoch));
        }
    }
    return unpack_marginal(theta, L, cfg.variance_floor);
}

double entropy(const GmmModel& gmm, const Matrix& eval) {
    if (eval.rows() == 0) throw ValidationError("entropy of an empty evaluation set");
    return -log_density(gmm, eval).mean();
}

double entropy(const GmmModel& gmm, const EmbeddingSet& eval) { return entropy(gmm, eval.values); }

MixtureParams conditional_mixture(const CondGmm& model, const Vector& source_row) {
    if (source_row.size() != model.source_dim) throw ValidationError("conditioning vector has the wrong dimension");
    Net n;
    net_forward(model, source_row, n);
    const Layout L{model.modes, model.target_dim};
    const Eigen::ArrayXd logits = n.out.col(0).head(L.modes).array();
    const Eigen::ArrayXd e = (logits - logits.maxCoeff()).exp();
    MixtureParams p;
    p.weights = (e / e.sum()).matrix();
    p.means = Eigen::Map<const Matrix>(n.out.data() + L.means(), L.dim, L.modes).transpose();
    p.diag_variances = (model.variance_floor +
                        Eigen::Map<const Eigen::ArrayXXd>(n.out.data() + L.vars(), L.dim, L.modes).exp())
                           .matrix()
                           .transpose();
    return p;
}

Vector conditional_log_density(const CondGmm& model, const Matrix& source, const Matrix& target) {
    if (source.rows() != target.rows()) throw ValidationError("source and target row counts differ");
    if (source.cols() != model.source_dim || target.cols() != model.target_dim)
        throw ValidationError("dimension mismatch between conditional model and data");
    const Layout L{model.modes, model.target_dim};
    Vector out(source.rows());
    Eigen::ArrayXd scratch;
    constexpr Eigen::Index kChunk = 256;
    for (Eigen::Index start = 0; start < source.rows(); start += kChunk) {
        const Eigen::Index n = std::min(kChunk, source.rows() - start);
        const Matrix xt = source.middleRows(start, n).transpose();
        const Matrix yt = target.middleRows(start, n).transpose();
        Net net;
        net_forward(model, xt, net);
        for (Eigen::Index b = 0; b < n; ++b) {
            out(start + b) = -mixture_nll(net.out.col(b).data(), yt.col(b).data(), L, model.variance_floor, nullptr,
                                          scratch);
        }
    }
    return out;
}

CondGmm fit_conditional(const Matrix& source, const Matrix& target, const KnifeConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (source.rows() != target.rows()) {
        throw ValidationError("misaligned pair: source has " + std::to_string(source.rows()) + " rows, target has " +
                              std::to_string(target.rows()));
    }
    check_finite(source, "source data");
    check_finite(target, "target data");
    const Eigen::Index N = source.rows();
    const int K = cfg.num_modes;
    const int d = static_cast<int>(target.cols());
    if (N < 10 * static_cast<Eigen::Index>(K)) {
        throw ValidationError("fit_conditional needs at least " + std::to_string(10 * K) + " rows, got " +
                              std::to_string(N));
    }
    const Vector var = column_variance(target);
    if ((var.array() == 0.0).all()) throw FitError("degenerate target: zero variance in every dimension");

    Rng rng(seed);
    CondGmm m;
    m.source_dim = static_cast<int>(source.cols());
    m.target_dim = d;
    m.modes = K;
    m.variance_floor = cfg.variance_floor;
    m.cond_weights = cfg.cond_weights;
    m.cond_means = cfg.cond_means;
    m.cond_variances = cfg.cond_variances;
    const Layout L{K, d};
    const int H = cfg.hidden_dim;
    m.w1 = glorot(m.source_dim, H, 1.0, rng);
    m.b1 = Vector::Zero(H);
    m.w2 = glorot(H, H, 1.0, rng);
    m.b2 = Vector::Zero(H);
    m.w3 = glorot(H, L.size(), 0.1, rng);
    m.b3 = Vector::Zero(L.size());
    const Eigen::ArrayXd mask = output_mask(m);
    m.w3 = m.w3 * mask.matrix().asDiagonal();
    const auto init_rows = pick_rows(N, K, rng);
    for (int k = 0; k < K; ++k) {
        m.b3.segment(L.means() + k * d, d) = target.row(init_rows[static_cast<std::size_t>(k)]).transpose();
        for (int j = 0; j < d; ++j) m.b3(L.vars() + k * d + j) = inverse_variance_param(var(j), cfg.variance_floor);
    }

    const Matrix xt = source.transpose();
    const Matrix yt = target.transpose();
    Matrix gw1(m.w1.rows(), m.w1.cols()), gw2(m.w2.rows(), m.w2.cols()), gw3(m.w3.rows(), m.w3.cols());
    Vector gb1(H), gb2(H), gb3(L.size());
    Adam adam({{m.w1.data(), m.w1.size()},
               {m.b1.data(), m.b1.size()},
               {m.w2.data(), m.w2.size()},
               {m.b2.data(), m.b2.size()},
               {m.w3.data(), m.w3.size()},
               {m.b3.data(), m.b3.size()}},
              cfg.conditional_lr);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Eigen::ArrayXd scratch;
    Matrix xb, yb, dout;
    Net net;
    for (int epoch = 0; epoch < cfg.conditional_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.conditional_batch)) {
            const auto B = static_cast<Eigen::Index>(
                std::min(order.size(), start + static_cast<std::size_t>(cfg.conditional_batch)) - start);
            xb.resize(m.source_dim, B);
            yb.resize(d, B);
            for (Eigen::Index b = 0; b < B; ++b) {
                xb.col(b) = xt.col(order[start + static_cast<std::size_t>(b)]);
                yb.col(b) = yt.col(order[start + static_cast<std::size_t>(b)]);
            }
            net_forward(m, xb, net);
            dout.setZero(L.size(), B);
            for (Eigen::Index b = 0; b < B; ++b) {
                total += mixture_nll(net.out.col(b).data(), yb.col(b).data(), L, cfg.variance_floor,
                                     dout.col(b).data(), scratch);
            }
            dout /= static_cast<double>(B);
            gb3 = dout.rowwise().sum();
            gw3.noalias() = net.h2 * dout.transpose();
            gw3 = gw3 * mask.matrix().asDiagonal();
            Matrix dh2 = (m.w3 * dout).array() * (1.0 - net.h2.array().square());
            gb2 = dh2.rowwise().sum();
            gw2.noalias() = net.h1 * dh2.transpose();
            Matrix dh1 = (m.w2 * dh2).array() * (1.0 - net.h1.array().square());
            gb1 = dh1.rowwise().sum();
            gw1.noalias() = xb * dh1.transpose();
            adam.step({gw1.data(), gb1.data(), gw2.data(), gb2.data(), gw3.data(), gb3.data()});
        }
        if (!std::isfinite(total) || !m.w3.allFinite() || !m.b3.allFinite()) {
            throw FitError("conditional mixture diverged at epoch " + std::to_string(epoch));
        }
    }
    return m;
}

double conditional_entropy(const CondGmm& model, const Matrix& source, const Matrix& target) {
    if (source.rows() == 0) throw ValidationError("conditional entropy of an empty evaluation set");
    return -conditional_log_density(model, source, target).mean();
}

Split make_split(Eigen::Index rows, double eval_fraction, std::uint64_t seed) {
    if (rows < 2) throw ValidationError("need at least 2 rows to split");
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(rows));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(rows)));
    n_eval = std::clamp<std::size_t>(n_eval, 1, idx.size() - 1);
    Split s;
    s.eval.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_eval));
    s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_eval), idx.end());
    std::sort(s.eval.begin(), s.eval.end());
    std::sort(s.train.begin(), s.train.end());
    return s;
}

Standardizer Standardizer::fit(const Matrix& train) {
    Standardizer s;
    s.mean = train.colwise().mean().transpose();
    s.scale = column_variance(train).array().sqrt().matrix();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j) {
        if (!(s.scale(j) > 0)) s.scale(j) = 1.0;
    }
    return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
    return ((x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).matrix();
}

Matrix take_rows(const Matrix& x, const std::vector<Eigen::Index>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    return out;
}

namespace {

struct Prepared {
    Matrix train, eval;
};

Prepared prepare(const Matrix& x, const Split& split, bool standardize) {
    Prepared p{take_rows(x, split.train), take_rows(x, split.eval)};
    if (standardize) {
        const auto s = Standardizer::fit(p.train);
        p.train = s.apply(p.train);
        p.eval = s.apply(p.eval);
    }
    return p;
}

}  // namespace

double heldout_marginal_entropy(const Matrix& target, const KnifeConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const Split split = make_split(target.rows(), cfg.eval_fraction, derive_seed(seed, 1));
    const Prepared t = prepare(target, split, cfg.standardize);
    const GmmModel gmm = fit_marginal(t.train, cfg, derive_seed(seed, 2));
    return entropy(gmm, t.eval);
}

double heldout_conditional_entropy(const Matrix& source, const Matrix& target, const KnifeConfig& cfg,
                                   std::uint64_t seed) {
    cfg.validate();
    if (source.rows() != target.rows()) {
        throw ValidationError("misaligned pair: source has " + std::to_string(source.rows()) + " rows, target has " +
                              std::to_string(target.rows()));
    }
    const Split split = make_split(target.rows(), cfg.eval_fraction, derive_seed(seed, 1));
    const Prepared s = prepare(source, split, cfg.standardize);
    const Prepared t = prepare(target, split, cfg.standardize);
    const CondGmm model = fit_conditional(s.train, t.train, cfg, derive_seed(seed, 3));
    return conditional_entropy(model, s.eval, t.eval);
}

IsEstimate make_estimate(double marginal, double conditional) {
    IsEstimate e;
    e.marginal_entropy = marginal;
    e.conditional_entropy = conditional;
    e.value = marginal - conditional;
    e.negative = e.value < 0;
    return e;
}

IsEstimate information_sufficiency(const EmbeddingSet& source, const EmbeddingSet& target, const KnifeConfig& cfg,
                                   std::uint64_t seed) {
    if (source.rows() != target.rows()) {
        throw ValidationError("misaligned pair: source has " + std::to_string(source.rows()) + " rows, target has " +
                              std::to_string(target.rows()));
    }
    IsEstimate e = make_estimate(heldout_marginal_entropy(target.values, cfg, seed),
                                 heldout_conditional_entropy(source.values, target.values, cfg, seed));
    e.source_id = source.task_id;
    e.target_id = target.task_id;
    e.layer = target.layer;
    e.seed = seed;
    return e;
}

nlohmann::json to_json(const IsEstimate& e) {
    return {{"src", e.source_id}, {"dst", e.target_id},     {"layer", e.layer},  {"is", e.value},
            {"h_marg", e.marginal_entropy}, {"h_cond", e.conditional_entropy}, {"seed", e.seed},
            {"negative", e.negative}};
}

void append_ledger(const std::filesystem::path& path, const std::vector<IsEstimate>& rows) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot open ledger " + path.string());
    for (const auto& r : rows) out << to_json(r).dump() << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace taskgraph::density
