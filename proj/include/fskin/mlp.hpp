#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

namespace fskin {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Σ over parameters of one Mlp, same layer order as the network.
struct MlpGrad {
    std::vector<MatrixXd> dW;
    std::vector<VectorXd> db;

    void set_zero();
    void scale(double s);
    void add_scaled(const MlpGrad& other, double scale);
    VectorXd flatten() const;
};

/// Activations cached during a forward pass, consumed by backward().
struct MlpTape {
    MatrixXd input;             // (in × B)
    std::vector<MatrixXd> pre;  // pre-activations per layer
    std::vector<MatrixXd> act;  // post-activations for hidden layers
};

/// Fully connected network with softplus hidden units and a linear output
/// layer. Heads (softmax, sigmoid) are applied by the callers, which also own
/// the corresponding head Jacobians in their backward passes.
class Mlp {
public:
    Mlp() = default;
    /// widths = {in, hidden..., out}; parameters drawn from a seeded
    /// Xavier-style normal distribution.
    Mlp(std::vector<int> widths, std::uint64_t seed);

    /// X is (in × B); returns logits (out × B). Pass a tape to enable backward().
    MatrixXd forward(const MatrixXd& X, MlpTape* tape = nullptr) const;

    /// Accumulates parameter gradients for the batch into `grad` and optionally
    /// returns gradients w.r.t. the inputs (in × B).
    void backward(const MlpTape& tape, const MatrixXd& d_out, MlpGrad& grad,
                  MatrixXd* d_input = nullptr) const;

    /// Forward-mode sweep: directional derivatives of the logits for the input
    /// tangents in `dX` (in × K), reusing a tape recorded at the same input.
    MatrixXd input_tangent(const MlpTape& tape, const MatrixXd& dX) const;

    /// Allocation-free single-point forward for hot loops; scratch buffers are
    /// sized on first use and reused afterwards.
    struct Scratch {
        std::vector<VectorXd> h;
    };
    const VectorXd& forward_single(Eigen::Ref<const VectorXd> x, Scratch& scratch) const;

    MlpGrad zero_grad() const;

    int input_width() const { return widths_.front(); }
    int output_width() const { return widths_.back(); }
    const std::vector<int>& widths() const { return widths_; }
    std::int64_t parameter_count() const;

    VectorXd parameters() const;
    void set_parameters(const VectorXd& theta);
    void apply_update(const MlpGrad& step, double scale);
    void scale_output_layer(double factor);

    /// Folds an affine input normalization (x - center) / half_extent into the
    /// first layer, for the leading center.size() inputs.  Later inputs are
    /// left untouched.  The network still consumes raw coordinates.
    void condition_input(const VectorXd& center, const VectorXd& half_extent);

    void save(std::ostream& out) const;
    static Mlp load(std::istream& in);

    const std::vector<MatrixXd>& weight_matrices() const { return W_; }
    const std::vector<VectorXd>& bias_vectors() const { return b_; }

private:
    std::vector<int> widths_;
    std::vector<MatrixXd> W_;
    std::vector<VectorXd> b_;
};

// Numerically stable softplus and its derivative (the logistic sigmoid).
double softplus(double x);
double sigmoid(double x);

/// Column-wise stable softmax.
void softmax_inplace(MatrixXd& logits);
void softmax_inplace(VectorXd& logits);
VectorXd softmax(const VectorXd& logits);

/// VJP of softmax: given w = softmax(z) and cotangent dw, returns dz.
VectorXd softmax_vjp(const VectorXd& w, const VectorXd& dw);

}  // namespace fskin
