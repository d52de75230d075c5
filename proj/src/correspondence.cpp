#include "fskin/correspondence.hpp"

#include <cmath>
#include <stdexcept>

#include "fskin/parallel.hpp"

namespace fskin {

SearchOptions SearchOptions::defaults_for(const Aabb& bbox) {
    const double diag = bbox.diagonal();
    SearchOptions o;
    o.conv_eps = 1e-5 * diag;
    o.div_eps = 0.5 * diag;
    o.dedup_dist = 1e-2 * diag;
    return o;
}

void SearchOptions::validate() const {
    if (max_iters < 1) throw std::invalid_argument("search: max_iters must be >= 1");
    if (!(conv_eps > 0.0)) throw std::invalid_argument("search: conv_eps must be > 0");
    if (!(div_eps > conv_eps))
        throw std::invalid_argument("search: div_eps must exceed conv_eps");
    if (!(dedup_dist >= 0.0)) throw std::invalid_argument("search: dedup_dist must be >= 0");
}

namespace {

void check_context(const SearchContext& ctx, SearchVariant variant) {
    if (ctx.bones.empty()) throw std::invalid_argument("search: no bone transforms");
    if (variant == SearchVariant::Mlp) {
        if (ctx.mlp == nullptr) throw std::invalid_argument("search: mlp variant needs a skinning mlp");
        if (std::size_t(ctx.mlp->bone_count()) != ctx.bones.size())
            throw std::invalid_argument("search: mlp bone count mismatch");
    } else {
        if (ctx.grid == nullptr || ctx.tgrid == nullptr)
            throw std::invalid_argument("search: voxel variant needs skinning and transform grids");
        if (std::size_t(ctx.grid->bone_count()) != ctx.bones.size())
            throw std::invalid_argument("search: grid bone count mismatch");
    }
}

Mat3 initial_inverse_jacobian(const Vec3& x0, const SearchContext& ctx,
                              SearchVariant variant) {
    Mat3 jac;
    if (variant == SearchVariant::Mlp) {
        jac = deform_jacobian(x0, *ctx.mlp, ctx.bones);
    } else {
        jac = deform_jacobian(x0, *ctx.grid, ctx.bones);
    }
    const double det = jac.determinant();
    if (std::abs(det) < 1e-8) return Mat3::Identity();
    return jac.inverse();
}

}  // namespace

std::vector<InitState> init_states(const Vec3& x_prime, const SearchContext& ctx,
                                   SearchVariant variant) {
    check_context(ctx, variant);
    std::vector<InitState> states;
    states.reserve(ctx.bones.size());
    for (const RigidTransform& b : ctx.bones) {
        InitState s;
        s.x0 = b.inverse().apply(x_prime);
        s.inv_jacobian = initial_inverse_jacobian(s.x0, ctx, variant);
        states.push_back(s);
    }
    return states;
}

namespace {

/// Evaluate d(x) for the active variant without heap allocation.
inline Vec3 eval_deform(const Vec3& x, const SearchContext& ctx, SearchVariant variant,
                        Mlp::Scratch& scratch) {
    if (variant == SearchVariant::Mlp) {
        return forward_deform(x, *ctx.mlp, ctx.bones, scratch);
    }
    double entries[12];
    trilerp_transform_into(*ctx.tgrid, x, entries);
    return Vec3(entries[0] * x.x() + entries[1] * x.y() + entries[2] * x.z() + entries[3],
                entries[4] * x.x() + entries[5] * x.y() + entries[6] * x.z() + entries[7],
                entries[8] * x.x() + entries[9] * x.y() + entries[10] * x.z() + entries[11]);
}

struct IterationState {
    Vec3 x;
    Mat3 inv_jac;
    Vec3 g;  // d(x) − x′
    int iterations = 0;
    bool converged = false;
};

/// Iterate x ← x − J̃·g with the good Broyden update of J̃. Stops on
/// ‖g‖ < conv_eps (converged) or ‖g‖ > div_eps (diverged, discarded).
void iterate(IterationState& st, const Vec3& x_prime, const SearchContext& ctx,
             const SearchOptions& opts, Mlp::Scratch& scratch) {
    double err = st.g.norm();
    if (err < opts.conv_eps) {
        st.converged = true;
        return;
    }
    for (int k = 0; k < opts.max_iters; ++k) {
        if (err > opts.div_eps) return;
        const Vec3 dx = -(st.inv_jac * st.g);
        st.x += dx;
        const Vec3 g_new = eval_deform(st.x, ctx, opts.variant, scratch) - x_prime;
        const Vec3 dg = g_new - st.g;
        st.g = g_new;
        st.iterations = k + 1;
        err = st.g.norm();
        if (err < opts.conv_eps) {
            st.converged = true;
            return;
        }
        // Good Broyden rank-one update of the inverse Jacobian estimate.
        const Vec3 jdg = st.inv_jac * dg;
        const double denom = dx.dot(jdg);
        if (std::abs(denom) > 1e-18) {
            st.inv_jac += ((dx - jdg) / denom) * (dx.transpose() * st.inv_jac);
        }
    }
}

CorrespondenceSet search_one(const Vec3& x_prime, const SearchContext& ctx,
                             const SearchOptions& opts, Mlp::Scratch& scratch) {
    CorrespondenceSet out;
    out.query = x_prime;

    std::vector<Root> found;
    const std::size_t n_b = ctx.bones.size();
    for (std::size_t i = 0; i < n_b; ++i) {
        IterationState st;
        st.x = ctx.bones[i].inverse().apply(x_prime);
        st.inv_jac = initial_inverse_jacobian(st.x, ctx, opts.variant);
        st.g = eval_deform(st.x, ctx, opts.variant, scratch) - x_prime;
        iterate(st, x_prime, ctx, opts, scratch);
        if (!st.converged) continue;
        Root r;
        r.x = st.x;
        r.residual = st.g.norm();
        r.inv_jacobian = st.inv_jac;
        r.source_bone = static_cast<int>(i);
        r.iterations = st.iterations;
        found.push_back(r);
    }
    out.roots = dedup_roots(std::move(found), opts.dedup_dist);
    return out;
}

}  // namespace

CorrespondenceSet broyden_search(const Vec3& x_prime, const SearchContext& ctx,
                                 const SearchOptions& opts) {
    check_context(ctx, opts.variant);
    opts.validate();
    Mlp::Scratch scratch;
    return search_one(x_prime, ctx, opts, scratch);
}

std::vector<Root> dedup_roots(std::vector<Root> roots, double dedup_dist) {
    std::vector<Root> kept;
    kept.reserve(roots.size());
    for (Root& r : roots) {
        bool duplicate = false;
        for (const Root& k : kept) {
            if ((r.x - k.x).norm() < dedup_dist) {
                duplicate = true;
                break;
            }
        }
        if (!duplicate) kept.push_back(std::move(r));
    }
    return kept;
}

std::vector<CorrespondenceSet> batch_search(std::span<const Vec3> queries,
                                            const SearchContext& ctx,
                                            const SearchOptions& opts,
                                            int workers) {
    check_context(ctx, opts.variant);
    opts.validate();
    std::vector<CorrespondenceSet> out(queries.size());
    parallel_for(queries.size(), workers, [&](std::size_t begin, std::size_t end) {
        Mlp::Scratch scratch;
        for (std::size_t q = begin; q < end; ++q) {
            out[q] = search_one(queries[q], ctx, opts, scratch);
        }
    });
    return out;
}

}  // namespace fskin
