#include "fskin/mlp.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>

namespace fskin {

double softplus(double x) {
    // max(x,0) + log1p(exp(-|x|)) avoids overflow on both tails.
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void softmax_inplace(MatrixXd& logits) {
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        auto col = logits.col(c);
        col.array() -= col.maxCoeff();
        col = col.array().exp();
        col /= col.sum();
    }
}

void softmax_inplace(VectorXd& logits) {
    logits.array() -= logits.maxCoeff();
    logits = logits.array().exp();
    logits /= logits.sum();
}

VectorXd softmax(const VectorXd& logits) {
    VectorXd w = logits;
    softmax_inplace(w);
    return w;
}

VectorXd softmax_vjp(const VectorXd& w, const VectorXd& dw) {
    const double dot = w.dot(dw);
    return (w.array() * (dw.array() - dot)).matrix();
}

void MlpGrad::set_zero() {
    for (auto& m : dW) m.setZero();
    for (auto& v : db) v.setZero();
}

void MlpGrad::scale(double s) {
    for (auto& m : dW) m *= s;
    for (auto& v : db) v *= s;
}

void MlpGrad::add_scaled(const MlpGrad& other, double scale) {
    for (size_t l = 0; l < dW.size(); ++l) {
        dW[l] += scale * other.dW[l];
        db[l] += scale * other.db[l];
    }
}

VectorXd MlpGrad::flatten() const {
    Eigen::Index n = 0;
    for (size_t l = 0; l < dW.size(); ++l) n += dW[l].size() + db[l].size();
    VectorXd v(n);
    Eigen::Index off = 0;
    for (size_t l = 0; l < dW.size(); ++l) {
        v.segment(off, dW[l].size()) = Eigen::Map<const VectorXd>(dW[l].data(), dW[l].size());
        off += dW[l].size();
        v.segment(off, db[l].size()) = db[l];
        off += db[l].size();
    }
    return v;
}

Mlp::Mlp(std::vector<int> widths, std::uint64_t seed) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
    std::mt19937_64 rng(seed);
    for (size_t l = 0; l + 1 < widths_.size(); ++l) {
        const int fan_in = widths_[l];
        // Fan-in scaling: softplus behaves like ReLU once signals reach unit
        // scale, and fan-out terms would starve the narrow input layer.
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        MatrixXd w(widths_[l + 1], fan_in);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
        W_.push_back(std::move(w));
        b_.push_back(VectorXd::Zero(widths_[l + 1]));
    }
}

MatrixXd Mlp::forward(const MatrixXd& X, MlpTape* tape) const {
    if (X.rows() != input_width()) {
        throw std::invalid_argument("Mlp::forward: input has wrong width");
    }
    if (tape) {
        tape->input = X;
        tape->pre.clear();
        tape->act.clear();
    }
    MatrixXd h = X;
    const size_t n_layers = W_.size();
    for (size_t l = 0; l < n_layers; ++l) {
        MatrixXd z = (W_[l] * h).colwise() + b_[l];
        if (l + 1 < n_layers) {
            h = z.unaryExpr([](double v) { return softplus(v); });
            if (tape) {
                tape->pre.push_back(std::move(z));
                tape->act.push_back(h);
            }
        } else {
            if (tape) tape->pre.push_back(z);
            h = std::move(z);
        }
    }
    return h;
}

void Mlp::backward(const MlpTape& tape, const MatrixXd& d_out, MlpGrad& grad,
                   MatrixXd* d_input) const {
    const size_t n_layers = W_.size();
    MatrixXd delta = d_out;
    for (size_t li = n_layers; li-- > 0;) {
        const MatrixXd& in_act = (li == 0) ? tape.input : tape.act[li - 1];
        grad.dW[li].noalias() += delta * in_act.transpose();
        grad.db[li] += delta.rowwise().sum();
        if (li == 0 && !d_input) break;
        MatrixXd d_prev = W_[li].transpose() * delta;
        if (li == 0) {
            *d_input = std::move(d_prev);
            break;
        }
        // softplus' = sigmoid(pre)
        delta = d_prev.cwiseProduct(
            tape.pre[li - 1].unaryExpr([](double v) { return sigmoid(v); }));
    }
}

MatrixXd Mlp::input_tangent(const MlpTape& tape, const MatrixXd& dX) const {
    const size_t n_layers = W_.size();
    MatrixXd t = dX;
    for (size_t l = 0; l < n_layers; ++l) {
        t = W_[l] * t;
        if (l + 1 < n_layers) {
            // tape recorded for a single input column; broadcast its slopes.
            t = t.cwiseProduct(tape.pre[l].unaryExpr([](double v) { return sigmoid(v); })
                                   .replicate(1, t.cols() / tape.pre[l].cols()));
        }
    }
    return t;
}

const VectorXd& Mlp::forward_single(Eigen::Ref<const VectorXd> x, Scratch& scratch) const {
    const size_t n_layers = W_.size();
    if (scratch.h.size() != n_layers) {
        scratch.h.resize(n_layers);
        for (size_t l = 0; l < n_layers; ++l) scratch.h[l].resize(W_[l].rows());
    }
    for (size_t l = 0; l < n_layers; ++l) {
        VectorXd& out = scratch.h[l];
        if (l == 0) {
            out.noalias() = W_[0] * x;
        } else {
            out.noalias() = W_[l] * scratch.h[l - 1];
        }
        out += b_[l];
        if (l + 1 < n_layers) {
            for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = softplus(out[i]);
        }
    }
    return scratch.h.back();
}

MlpGrad Mlp::zero_grad() const {
    MlpGrad g;
    for (size_t l = 0; l < W_.size(); ++l) {
        g.dW.push_back(MatrixXd::Zero(W_[l].rows(), W_[l].cols()));
        g.db.push_back(VectorXd::Zero(b_[l].size()));
    }
    return g;
}

std::int64_t Mlp::parameter_count() const {
    std::int64_t n = 0;
    for (size_t l = 0; l < W_.size(); ++l) n += W_[l].size() + b_[l].size();
    return n;
}

VectorXd Mlp::parameters() const {
    VectorXd v(parameter_count());
    Eigen::Index off = 0;
    for (size_t l = 0; l < W_.size(); ++l) {
        v.segment(off, W_[l].size()) = Eigen::Map<const VectorXd>(W_[l].data(), W_[l].size());
        off += W_[l].size();
        v.segment(off, b_[l].size()) = b_[l];
        off += b_[l].size();
    }
    return v;
}

void Mlp::set_parameters(const VectorXd& theta) {
    if (theta.size() != parameter_count()) {
        throw std::invalid_argument("Mlp::set_parameters: wrong parameter count");
    }
    Eigen::Index off = 0;
    for (size_t l = 0; l < W_.size(); ++l) {
        Eigen::Map<VectorXd>(W_[l].data(), W_[l].size()) = theta.segment(off, W_[l].size());
        off += W_[l].size();
        b_[l] = theta.segment(off, b_[l].size());
        off += b_[l].size();
    }
}

void Mlp::apply_update(const MlpGrad& step, double scale) {
    for (size_t l = 0; l < W_.size(); ++l) {
        W_[l] += scale * step.dW[l];
        b_[l] += scale * step.db[l];
    }
}

void Mlp::scale_output_layer(double factor) {
    W_.back() *= factor;
    b_.back() *= factor;
}

void Mlp::condition_input(const VectorXd& center, const VectorXd& half_extent) {
    if (center.size() != half_extent.size() || center.size() > input_width()) {
        throw std::invalid_argument("Mlp::condition_input: bad normalization size");
    }
    const Eigen::Index n = center.size();
    for (Eigen::Index j = 0; j < n; ++j) {
        W_.front().col(j) /= std::max(half_extent[j], 1e-12);
    }
    b_.front() -= W_.front().leftCols(n) * center;
}

void Mlp::save(std::ostream& out) const {
    const std::uint32_t n = static_cast<std::uint32_t>(widths_.size());
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    for (int w : widths_) {
        const std::uint32_t u = static_cast<std::uint32_t>(w);
        out.write(reinterpret_cast<const char*>(&u), sizeof(u));
    }
    for (size_t l = 0; l < W_.size(); ++l) {
        out.write(reinterpret_cast<const char*>(W_[l].data()),
                  static_cast<std::streamsize>(W_[l].size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(b_[l].data()),
                  static_cast<std::streamsize>(b_[l].size() * sizeof(double)));
    }
}

Mlp Mlp::load(std::istream& in) {
    std::uint32_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (!in || n < 2 || n > 64) throw std::runtime_error("Mlp::load: corrupt layer count");
    std::vector<int> widths(n);
    for (auto& w : widths) {
        std::uint32_t u = 0;
        in.read(reinterpret_cast<char*>(&u), sizeof(u));
        w = static_cast<int>(u);
    }
    Mlp mlp(widths, 0);
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        in.read(reinterpret_cast<char*>(mlp.W_[l].data()),
                static_cast<std::streamsize>(mlp.W_[l].size() * sizeof(double)));
        in.read(reinterpret_cast<char*>(mlp.b_[l].data()),
                static_cast<std::streamsize>(mlp.b_[l].size() * sizeof(double)));
    }
    if (!in) throw std::runtime_error("Mlp::load: truncated parameter block");
    return mlp;
}

}  // namespace fskin
