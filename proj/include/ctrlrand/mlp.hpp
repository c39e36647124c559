#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ctrlrand/errors.hpp"
#include "ctrlrand/fast_math.hpp"
#include "ctrlrand/random.hpp"

namespace ctrlrand {

enum class Head { Linear, Sigmoid, MaskedSoftmax };

inline const char* head_name(Head h) {
    switch (h) {
        case Head::Linear: return "linear";
        case Head::Sigmoid: return "sigmoid";
        case Head::MaskedSoftmax: return "masked_softmax";
    }
    return "?";
}

inline Head parse_head(const std::string& s) {
    if (s == "linear") return Head::Linear;
    if (s == "sigmoid") return Head::Sigmoid;
    if (s == "masked_softmax") return Head::MaskedSoftmax;
    throw ShapeError("unknown head '" + s + "'");
}

// Fully connected tanh network. Layer l stores W_l as an (in x out) row-major
// block followed by the bias b_l, so that y = x W_l + b_l.
class MlpShape {
public:
    MlpShape() = default;
    MlpShape(std::vector<int> widths, Head head) : widths_(std::move(widths)), head_(head) {
        if (widths_.size() < 2) throw ShapeError("network needs an input and an output layer");
        for (int w : widths_)
            if (w <= 0) throw ShapeError("layer widths must be positive");
        if (head_ == Head::MaskedSoftmax && widths_.back() > 32) throw ShapeError("softmax head limited to 32 outputs");
        std::size_t p = 0, a = 0;
        for (std::size_t l = 0; l < widths_.size(); ++l) {
            act_offset_.push_back(a);
            a += widths_[l];
            if (l + 1 < widths_.size()) {
                param_offset_.push_back(p);
                p += static_cast<std::size_t>(widths_[l]) * widths_[l + 1] + widths_[l + 1];
            }
        }
        params_ = p;
        acts_ = a;
    }

    const std::vector<int>& widths() const { return widths_; }
    Head head() const { return head_; }
    int inputs() const { return widths_.front(); }
    int outputs() const { return widths_.back(); }
    std::size_t layers() const { return widths_.size() - 1; }
    std::size_t parameter_count() const { return params_; }
    std::size_t activation_count() const { return acts_; }
    std::size_t param_offset(std::size_t l) const { return param_offset_[l]; }
    std::size_t act_offset(std::size_t l) const { return act_offset_[l]; }

    bool operator==(const MlpShape& o) const { return widths_ == o.widths_ && head_ == o.head_; }

private:
    std::vector<int> widths_;
    Head head_ = Head::Linear;
    std::vector<std::size_t> param_offset_, act_offset_;
    std::size_t params_ = 0, acts_ = 0;
};

// Activations of the last forward pass; the final block holds the head output.
struct MlpWorkspace {
    std::vector<double> act;
    std::vector<double> delta, delta_next;
    std::uint32_t mask = 0;

    void fit(const MlpShape& s) {
        if (act.size() < s.activation_count()) act.resize(s.activation_count());
        int widest = 0;
        for (int w : s.widths()) widest = std::max(widest, w);
        if (delta.size() < static_cast<std::size_t>(widest)) {
            delta.resize(widest);
            delta_next.resize(widest);
        }
    }
    std::span<const double> output(const MlpShape& s) const {
        return {act.data() + s.act_offset(s.layers()), static_cast<std::size_t>(s.outputs())};
    }
};

inline double sigmoid(double z) {
    z = std::clamp(z, -36.0, 36.0);
    return 1.0 / (1.0 + std::exp(-z));
}

// Evaluates the network; `mask` (bit i set = output i allowed) is only read by
// the masked softmax head.
inline std::span<const double> mlp_forward(const MlpShape& s, const double* params, std::span<const double> input,
                                           MlpWorkspace& ws, std::uint32_t mask = ~0u) {
    if (static_cast<int>(input.size()) != s.inputs()) throw ShapeError("input dimension mismatch");
    ws.fit(s);
    ws.mask = mask;
    const auto& w = s.widths();
    double* a = ws.act.data();
    std::copy(input.begin(), input.end(), a);
    const std::size_t L = s.layers();
    for (std::size_t l = 0; l < L; ++l) {
        const int nin = w[l], nout = w[l + 1];
        const double* W = params + s.param_offset(l);
        const double* b = W + static_cast<std::size_t>(nin) * nout;
        const double* x = a + s.act_offset(l);
        double* __restrict y = a + s.act_offset(l + 1);
        std::copy(b, b + nout, y);
        for (int i = 0; i < nin; ++i) {
            const double xi = x[i];
            const double* Wi = W + static_cast<std::size_t>(i) * nout;
            for (int o = 0; o < nout; ++o) y[o] += xi * Wi[o];
        }
        if (l + 1 < L) fastmath::tanh_inplace(y, nout);
    }
    double* out = a + s.act_offset(L);
    const int n = s.outputs();
    if (s.head() == Head::Sigmoid) {
        for (int o = 0; o < n; ++o) out[o] = sigmoid(out[o]);
    } else if (s.head() == Head::MaskedSoftmax) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int o = 0; o < n; ++o)
            if (mask >> o & 1u) mx = std::max(mx, out[o]);
        if (!std::isfinite(mx)) throw PolicyError("softmax head with every output masked or non-finite logits");
        double sum = 0.0;
        for (int o = 0; o < n; ++o) {
            out[o] = (mask >> o & 1u) ? std::exp(out[o] - mx) : 0.0;
            sum += out[o];
        }
        for (int o = 0; o < n; ++o) out[o] /= sum;
    }
    return {out, static_cast<std::size_t>(n)};
}

// Adds d(upstream . output)/d(params) to `grad`, using the activations left
// in `ws` by the matching forward call. Optionally returns d/d(input).
inline void mlp_backward(const MlpShape& s, const double* params, MlpWorkspace& ws, std::span<const double> upstream,
                         double* grad, double* input_grad = nullptr) {
    if (static_cast<int>(upstream.size()) != s.outputs()) throw ShapeError("upstream dimension mismatch");
    const auto& w = s.widths();
    const std::size_t L = s.layers();
    const double* y = ws.act.data() + s.act_offset(L);
    const int n = s.outputs();
    double* d = ws.delta.data();
    if (s.head() == Head::Linear) {
        for (int o = 0; o < n; ++o) d[o] = upstream[o];
    } else if (s.head() == Head::Sigmoid) {
        for (int o = 0; o < n; ++o) d[o] = upstream[o] * y[o] * (1.0 - y[o]);
    } else {
        double dot = 0.0;
        for (int o = 0; o < n; ++o) dot += y[o] * upstream[o];
        for (int o = 0; o < n; ++o) d[o] = (ws.mask >> o & 1u) ? y[o] * (upstream[o] - dot) : 0.0;
    }
    for (std::size_t l = L; l-- > 0;) {
        const int nin = w[l], nout = w[l + 1];
        const double* W = params + s.param_offset(l);
        double* gW = grad + s.param_offset(l);
        double* gb = gW + static_cast<std::size_t>(nin) * nout;
        const double* x = ws.act.data() + s.act_offset(l);
        for (int o = 0; o < nout; ++o) gb[o] += d[o];
        for (int i = 0; i < nin; ++i) {
            const double xi = x[i];
            double* g = gW + static_cast<std::size_t>(i) * nout;
            for (int o = 0; o < nout; ++o) g[o] += xi * d[o];
        }
        if (l == 0 && !input_grad) break;
        double* dn = ws.delta_next.data();
        for (int i = 0; i < nin; ++i) {
            const double* Wi = W + static_cast<std::size_t>(i) * nout;
            double acc = 0.0;
            for (int o = 0; o < nout; ++o) acc += Wi[o] * d[o];
            dn[i] = l > 0 ? acc * (1.0 - x[i] * x[i]) : acc;
        }
        if (l == 0) {
            std::copy(dn, dn + nin, input_grad);
            break;
        }
        std::swap(ws.delta, ws.delta_next);
        d = ws.delta.data();
    }
}

// Xavier-uniform weights, zero biases.
inline void xavier_init(const MlpShape& s, double* params, Rng& rng) {
    const auto& w = s.widths();
    for (std::size_t l = 0; l < s.layers(); ++l) {
        const int nin = w[l], nout = w[l + 1];
        const double r = std::sqrt(6.0 / (nin + nout));
        double* W = params + s.param_offset(l);
        for (std::size_t j = 0; j < static_cast<std::size_t>(nin) * nout; ++j) W[j] = r * (2.0 * rng.uniform() - 1.0);
        std::fill(W + static_cast<std::size_t>(nin) * nout, W + static_cast<std::size_t>(nin) * nout + nout, 0.0);
    }
}

// Networks of one shape keyed by (date n, regime i, level k), stored in one
// flat parameter vector.
class ParamBank {
public:
    ParamBank() = default;
    ParamBank(MlpShape shape, int dates, int regimes, int levels)
        : shape_(std::move(shape)), dates_(dates), regimes_(regimes), levels_(levels) {
        if (dates <= 0 || regimes <= 0 || levels <= 0) throw ShapeError("bank key ranges must be positive");
        params_.assign(static_cast<std::size_t>(dates) * regimes * levels * shape_.parameter_count(), 0.0);
    }

    const MlpShape& shape() const { return shape_; }
    int dates() const { return dates_; }
    int regimes() const { return regimes_; }
    int levels() const { return levels_; }
    std::size_t nets() const { return static_cast<std::size_t>(dates_) * regimes_ * levels_; }
    std::size_t net_size() const { return shape_.parameter_count(); }
    std::size_t size() const { return params_.size(); }

    std::size_t offset(int n, int i, int k) const {
        if (n < 0 || n >= dates_ || i < 0 || i >= regimes_ || k < 0 || k >= levels_) throw ShapeError("bank key out of range");
        return ((static_cast<std::size_t>(n) * regimes_ + i) * levels_ + k) * shape_.parameter_count();
    }
    double* net(int n, int i, int k) { return params_.data() + offset(n, i, k); }
    const double* net(int n, int i, int k) const { return params_.data() + offset(n, i, k); }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    void init_xavier(Rng& rng) {
        for (std::size_t j = 0; j < nets(); ++j) xavier_init(shape_, params_.data() + j * net_size(), rng);
    }

    // Text checkpoint: a header with the shape and key ranges, then one line
    // per network "n i k" followed by its row-major values.
    void save(std::ostream& os) const {
        os << "parambank 1\n";
        os << "shape";
        for (int w : shape_.widths()) os << ' ' << w;
        os << "\nhead " << head_name(shape_.head()) << "\n";
        os << "keys " << dates_ << ' ' << regimes_ << ' ' << levels_ << "\n";
        std::ostringstream line;
        line << std::setprecision(17);
        for (int n = 0; n < dates_; ++n)
            for (int i = 0; i < regimes_; ++i)
                for (int k = 0; k < levels_; ++k) {
                    os << "net " << n << ' ' << i << ' ' << k;
                    const double* p = net(n, i, k);
                    for (std::size_t j = 0; j < net_size(); ++j) {
                        line.str("");
                        line << p[j];
                        os << ' ' << line.str();
                    }
                    os << '\n';
                }
    }

    static ParamBank load(std::istream& is) {
        auto expect = [&](const std::string& word) {
            std::string w;
            if (!(is >> w) || w != word) throw ShapeError("checkpoint: expected '" + word + "'");
        };
        expect("parambank");
        int version = 0;
        is >> version;
        if (version != 1) throw ShapeError("checkpoint: unsupported version");
        expect("shape");
        std::string rest;
        std::getline(is, rest);
        std::istringstream ws(rest);
        std::vector<int> widths;
        for (int w; ws >> w;) widths.push_back(w);
        expect("head");
        std::string head;
        is >> head;
        expect("keys");
        int d = 0, r = 0, l = 0;
        is >> d >> r >> l;
        ParamBank bank(MlpShape(widths, parse_head(head)), d, r, l);
        for (std::size_t j = 0; j < bank.nets(); ++j) {
            expect("net");
            int n, i, k;
            if (!(is >> n >> i >> k)) throw ShapeError("checkpoint: bad key");
            double* p = bank.net(n, i, k);
            for (std::size_t q = 0; q < bank.net_size(); ++q)
                if (!(is >> p[q])) throw ShapeError("checkpoint: truncated values");
        }
        return bank;
    }

private:
    MlpShape shape_;
    int dates_ = 0, regimes_ = 0, levels_ = 0;
    std::vector<double> params_;
};

struct Adam {
    double rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<double> m, v;
    long steps = 0;

    Adam() = default;
    Adam(double r, std::size_t n) : rate(r), m(n, 0.0), v(n, 0.0) {}

    // ascent: params += ..., otherwise params -= ...; effective rate is rate * schedule.
    void step(std::span<double> params, std::span<const double> grad, double schedule, bool ascent) {
        if (params.size() != grad.size() || m.size() != grad.size()) throw ShapeError("adam: size mismatch");
        for (double g : grad)
            if (!std::isfinite(g)) throw DivergenceError("non-finite gradient");
        ++steps;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
        const double lr = (ascent ? rate : -rate) * schedule;
        for (std::size_t j = 0; j < grad.size(); ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
            params[j] += lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
        }
    }
};

}  // namespace ctrlrand
