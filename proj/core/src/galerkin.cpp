#include "hjsynth/galerkin.hpp"

#include "hjsynth/parallel.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <unordered_map>

namespace hjsynth {

namespace {

constexpr int kMaxDim = 16;
constexpr int kMaxPower = 255;

// ---------------------------------------------------------------------------
// multi-index packing (for interning exponent tuples)
// ---------------------------------------------------------------------------

struct Key128 {
    std::uint64_t lo = 0, hi = 0;
    bool operator==(const Key128& o) const { return lo == o.lo && hi == o.hi; }
};

struct Key128Hash {
    std::size_t operator()(const Key128& k) const {
        std::uint64_t h = k.lo * 0x9E3779B97F4A7C15ull;
        h ^= h >> 29;
        h += k.hi * 0xBF58476D1CE4E5B9ull;
        h ^= h >> 32;
        return static_cast<std::size_t>(h);
    }
};

Key128 pack_powers(const int* p, int d) {
    Key128 k;
    for (int t = 0; t < d; ++t) {
        const auto byte = static_cast<std::uint64_t>(p[t]);
        if (p[t] < 0 || p[t] > kMaxPower) throw std::logic_error("galerkin: exponent out of packing range");
        if (t < 8)
            k.lo |= byte << (8 * t);
        else
            k.hi |= byte << (8 * (t - 8));
    }
    return k;
}

// ---------------------------------------------------------------------------
// normalized separable terms: coeff * prod_t x_t^pw[t] * prod extras
// ---------------------------------------------------------------------------

struct Extra {
    bool is_custom = false;
    double rate = 0.0;  // exp(rate * x)
    std::shared_ptr<const Factor1D::Evaluator> fn;
};

struct NTerm {
    double coeff = 1.0;
    std::vector<int> pw;                        // size d
    std::vector<std::pair<int, int>> extras;    // (dim, extra id), at most one per dim
    int extra_at(int dim) const {
        for (const auto& [t, e] : extras)
            if (t == dim) return e;
        return -1;
    }
};

struct NScalar {
    std::vector<NTerm> terms;
};

// Per-dimension extras signature of (at most) a pair of terms.
struct MomKey {
    int dim = 0;
    int e1 = -1, e2 = -1;  // sorted, -1 = absent
    bool operator<(const MomKey& o) const {
        return std::tie(dim, e1, e2) < std::tie(o.dim, o.e1, o.e2);
    }
};

MomKey merge_key(int dim, int ea, int eb) {
    MomKey k;
    k.dim = dim;
    if (ea > eb) std::swap(ea, eb);
    if (ea == -1) {
        k.e1 = -1;
        k.e2 = eb;
    } else {
        k.e1 = ea;
        k.e2 = eb;
    }
    return k;
}

}  // namespace

// ---------------------------------------------------------------------------
// IntegralTables::Impl
// ---------------------------------------------------------------------------

struct IntegralTables::Impl {
    ControlSystem sys;
    MonomialBasis bas;
    int quad_order = 0;
    bool from_cache = false;
    bool hashable = true;
    std::uint64_t digest = 0;

    std::vector<QuadratureRule> quad;  // per dimension
    std::vector<Extra> extras;
    std::map<double, int> exp_ids;
    std::map<const void*, int> custom_ids;

    std::vector<NScalar> f_rows;                 // d entries
    std::vector<std::vector<NScalar>> g_cols;    // per column, d rows
    std::vector<std::vector<NScalar>> h_cols;
    NScalar ell_norm;
    Eigen::MatrixXd Rinv, Pinv;

    // moment vectors, grown on demand while structures are built
    std::map<MomKey, std::vector<double>> moments;

    Eigen::MatrixXd F;
    Eigen::VectorXd ell_vec;

    // ---- channel contraction machinery (built lazily) ----
    struct ChiGroup {
        std::vector<std::pair<int, int>> sig;  // (dim, extra id)
        std::vector<int> beta_flat;            // nbeta x d
        std::vector<int> max_pow;              // per dim
        int size() const { return static_cast<int>(beta_flat.size()) / std::max(1, dim); }
        int dim = 0;
        int extra_at(int t) const {
            for (const auto& [dd, e] : sig)
                if (dd == t) return e;
            return -1;
        }
    };
    struct ChiScatter {
        std::uint32_t group, slot, r;
        double factor;
    };
    struct ChiStructure {
        std::vector<ChiGroup> groups;
        std::vector<ChiScatter> scatter;
    };
    struct Universe {
        std::vector<int> rho_flat;  // nrho x d
        std::vector<int> max_pow;   // per dim
        int count = 0;
    };
    struct MatLp {
        int l = 0;
        double kappa = 1.0;
        int univ = 0;                          // universe id (one per distinct lp signature)
        std::vector<int> alpha;                // powers
        std::vector<std::pair<int, int>> sig;  // extras
    };
    struct MatEntry {
        std::uint32_t lp, slot;
    };
    struct FillPlan {
        // moment vector per dimension for one (universe sig, chi group sig) pair
        std::vector<const std::vector<double>*> mom;
    };
    struct PairOps {
        std::vector<MatLp> lps;
        std::vector<Universe> mat_univ;
        std::vector<std::vector<FillPlan>> mat_plan;  // [univ][group]
        std::vector<std::uint64_t> pair_offsets;      // npairs + 1
        std::vector<MatEntry> entries;

        std::vector<Universe> rhs_univ;               // one per chi group of column a
        std::vector<std::vector<FillPlan>> rhs_plan;  // [gA][gB]
        std::vector<std::vector<std::uint32_t>> rhs_idx;  // [gA] : n * nbeta(gA)
    };
    struct ChannelOps {
        std::vector<ChiStructure> chi;                       // per column
        std::map<std::pair<int, int>, PairOps> pairs;        // (a, b)
    };

    mutable std::shared_mutex structure_mutex;
    ChannelOps g_ops, h_ops;
    bool g_chi_built = false, h_chi_built = false;

    // ------------------------------------------------------------------
    int dim() const { return sys.dim(); }
    int n() const { return bas.size(); }

    int extra_id_exp(double b) {
        auto it = exp_ids.find(b);
        if (it != exp_ids.end()) return it->second;
        Extra e;
        e.rate = b;
        extras.push_back(e);
        const int id = static_cast<int>(extras.size()) - 1;
        exp_ids.emplace(b, id);
        return id;
    }

    int extra_id_custom(const std::shared_ptr<const Factor1D::Evaluator>& fn) {
        auto it = custom_ids.find(fn.get());
        if (it != custom_ids.end()) return it->second;
        Extra e;
        e.is_custom = true;
        e.fn = fn;
        extras.push_back(e);
        const int id = static_cast<int>(extras.size()) - 1;
        custom_ids.emplace(fn.get(), id);
        return id;
    }

    NScalar normalize(const SeparableScalar& s) {
        NScalar out;
        for (const auto& term : s.terms) {
            NTerm nt;
            nt.pw.assign(dim(), 0);
            bool dead = false;
            for (int t = 0; t < dim(); ++t) {
                const Factor1D& f = term[t];
                switch (f.kind()) {
                    case Factor1D::Kind::Constant:
                        nt.coeff *= f.value();
                        if (f.value() == 0.0) dead = true;
                        break;
                    case Factor1D::Kind::Monomial:
                        nt.pw[t] += f.power();
                        break;
                    case Factor1D::Kind::ScaledExponential:
                        nt.coeff *= f.scale();
                        if (f.scale() == 0.0) dead = true;
                        nt.pw[t] += f.power();
                        if (f.rate() != 0.0) nt.extras.emplace_back(t, extra_id_exp(f.rate()));
                        break;
                    case Factor1D::Kind::Custom:
                        hashable = false;
                        nt.extras.emplace_back(t, extra_id_custom(f.evaluator()));
                        break;
                }
                if (dead) break;
            }
            if (!dead && nt.coeff != 0.0) out.terms.push_back(std::move(nt));
        }
        return out;
    }

    double extra_value(int id, double x) const {
        const Extra& e = extras[id];
        return e.is_custom ? (*e.fn)(x) : std::exp(e.rate * x);
    }

    // Grow the moment vector for `key` so powers 0..maxpow are available.
    const std::vector<double>& ensure_moments(const MomKey& key, int maxpow) {
        auto& vec = moments[key];
        const int have = static_cast<int>(vec.size());
        if (have > maxpow) return vec;
        vec.resize(maxpow + 1);
        const Interval iv = sys.domain.intervals[key.dim];
        if (key.e1 == -1 && key.e2 == -1) {
            for (int s = have; s <= maxpow; ++s)
                vec[s] = (ipow(iv.hi, s + 1) - ipow(iv.lo, s + 1)) / (s + 1);
            return vec;
        }
        const QuadratureRule& q = quad[key.dim];
        for (int s = have; s <= maxpow; ++s) {
            double sum = 0.0;
            for (size_t k = 0; k < q.nodes.size(); ++k) {
                const double x = q.nodes[k];
                double v = ipow(x, s);
                if (key.e1 != -1) v *= extra_value(key.e1, x);
                if (key.e2 != -1) v *= extra_value(key.e2, x);
                sum += q.weights[k] * v;
            }
            if (!std::isfinite(sum))
                throw std::runtime_error("build_tables: non-finite moment integral");
            vec[s] = sum;
        }
        return vec;
    }

    // Product over dimensions of moments for a single normalized term shifted
    // by the exponents in `shift` (already including the term's powers).
    double term_moment_product(const NTerm& term, const int* shift) {
        double prod = 1.0;
        for (int t = 0; t < dim(); ++t) {
            const MomKey key = merge_key(t, -1, term.extra_at(t));
            const auto& vec = moments.at(key);
            prod *= vec[shift[t]];
        }
        return prod;
    }

    void assemble_f_and_ell();
    void build_chi(ChannelOps& ops, const std::vector<std::vector<NScalar>>& cols);
    PairOps& pair_ops(bool control_channel, int a, int b);
    std::vector<std::vector<double>> fill_chi(const ChiStructure& chi, const Eigen::VectorXd& c) const;
};

namespace {

using Impl = IntegralTables::Impl;

std::uint64_t fnv64(std::uint64_t h, const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t hash_double(std::uint64_t h, double v) {
    return fnv64(h, &v, sizeof(v));
}

std::uint64_t hash_nscalar(std::uint64_t h, const NScalar& s, const std::vector<Extra>& extras) {
    for (const auto& t : s.terms) {
        h = hash_double(h, t.coeff);
        h = fnv64(h, t.pw.data(), t.pw.size() * sizeof(int));
        for (const auto& [d, e] : t.extras) {
            h = fnv64(h, &d, sizeof(d));
            h = hash_double(h, extras[e].rate);
        }
    }
    h = fnv64(h, "|", 1);
    return h;
}

}  // namespace

void Impl::assemble_f_and_ell() {
    const int d = dim();
    const int nn = n();
    const auto& basis = bas;

    // Pre-grow all moment vectors the assembly touches (reads are then
    // lock-free in the parallel loop).
    int max_basis_pow = 2 * bas.max_degree();
    auto pregrow = [&](const NScalar& s) {
        for (const auto& term : s.terms)
            for (int t = 0; t < d; ++t)
                ensure_moments(merge_key(t, -1, term.extra_at(t)), max_basis_pow + term.pw[t]);
    };
    for (const auto& row : f_rows) pregrow(row);
    pregrow(ell_norm);

    F = Eigen::MatrixXd::Zero(nn, nn);
    ell_vec = Eigen::VectorXd::Zero(nn);

    parallel_for(nn, [&](size_t ii) {
        const int i = static_cast<int>(ii);
        const auto& nui = basis[i].powers;
        std::vector<int> shift(d);
        for (int p = 0; p < d; ++p) {
            for (const auto& term : f_rows[p].terms) {
                for (int j = 0; j < nn; ++j) {
                    const auto& nuj = basis[j].powers;
                    if (nuj[p] == 0) continue;
                    for (int t = 0; t < d; ++t) shift[t] = nui[t] + nuj[t] + term.pw[t];
                    shift[p] -= 1;
                    F(i, j) += term.coeff * nuj[p] * term_moment_product(term, shift.data());
                }
            }
        }
        for (const auto& term : ell_norm.terms) {
            for (int t = 0; t < d; ++t) shift[t] = nui[t] + term.pw[t];
            ell_vec[i] += term.coeff * term_moment_product(term, shift.data());
        }
    });
}

void Impl::build_chi(ChannelOps& ops, const std::vector<std::vector<NScalar>>& cols) {
    const int d = dim();
    const int nn = n();
    ops.chi.resize(cols.size());
    for (size_t col = 0; col < cols.size(); ++col) {
        ChiStructure& chi = ops.chi[col];
        std::vector<std::unordered_map<Key128, int, Key128Hash>> interns;
        auto group_for = [&](const std::vector<std::pair<int, int>>& sig) {
            for (size_t gi = 0; gi < chi.groups.size(); ++gi)
                if (chi.groups[gi].sig == sig) return static_cast<int>(gi);
            ChiGroup g;
            g.sig = sig;
            g.dim = d;
            g.max_pow.assign(d, 0);
            chi.groups.push_back(std::move(g));
            interns.emplace_back();
            return static_cast<int>(chi.groups.size()) - 1;
        };
        std::vector<int> beta(d);
        for (int m = 0; m < d; ++m) {
            for (const auto& term : cols[col][m].terms) {
                const int gid = group_for(term.extras);
                ChiGroup& g = chi.groups[gid];
                auto& intern = interns[gid];
                for (int r = 0; r < nn; ++r) {
                    const auto& nur = bas[r].powers;
                    if (nur[m] == 0) continue;
                    for (int t = 0; t < d; ++t) beta[t] = nur[t] + term.pw[t];
                    beta[m] -= 1;
                    const Key128 key = pack_powers(beta.data(), d);
                    auto [it, fresh] = intern.emplace(key, static_cast<int>(g.beta_flat.size() / d));
                    if (fresh) {
                        g.beta_flat.insert(g.beta_flat.end(), beta.begin(), beta.end());
                        for (int t = 0; t < d; ++t) g.max_pow[t] = std::max(g.max_pow[t], beta[t]);
                    }
                    chi.scatter.push_back({static_cast<std::uint32_t>(gid),
                                           static_cast<std::uint32_t>(it->second),
                                           static_cast<std::uint32_t>(r),
                                           term.coeff * nur[m]});
                }
            }
        }
    }
}

Impl::PairOps& Impl::pair_ops(bool control_channel, int a, int b) {
    ChannelOps& ops = control_channel ? g_ops : h_ops;
    const auto& cols = control_channel ? g_cols : h_cols;
    bool& chi_built = control_channel ? g_chi_built : h_chi_built;
    if (!chi_built) {
        build_chi(ops, cols);
        chi_built = true;
    }
    auto found = ops.pairs.find({a, b});
    if (found != ops.pairs.end()) return found->second;

    const int d = dim();
    const int nn = n();
    PairOps po;

    // lp terms of column a, one universe per distinct extras signature
    std::vector<std::vector<std::pair<int, int>>> univ_sigs;
    for (int l = 0; l < d; ++l) {
        for (const auto& term : cols[a][l].terms) {
            MatLp lp;
            lp.l = l;
            lp.kappa = term.coeff;
            lp.alpha = term.pw;
            lp.sig = term.extras;
            int u = -1;
            for (size_t k = 0; k < univ_sigs.size(); ++k)
                if (univ_sigs[k] == term.extras) u = static_cast<int>(k);
            if (u < 0) {
                univ_sigs.push_back(term.extras);
                u = static_cast<int>(univ_sigs.size()) - 1;
            }
            lp.univ = u;
            po.lps.push_back(std::move(lp));
        }
    }
    po.mat_univ.resize(univ_sigs.size());
    for (auto& u : po.mat_univ) u.max_pow.assign(d, 0);

    std::vector<std::unordered_map<Key128, int, Key128Hash>> interns(univ_sigs.size());
    const std::uint64_t npairs = static_cast<std::uint64_t>(nn) * (nn + 1) / 2;
    po.pair_offsets.assign(npairs + 1, 0);

    std::vector<int> rho(d);
    // first pass: count entries per pair
    std::uint64_t pair_idx = 0;
    for (int i = 0; i < nn; ++i) {
        const auto& nui = bas[i].powers;
        for (int j = i; j < nn; ++j, ++pair_idx) {
            const auto& nuj = bas[j].powers;
            std::uint64_t cnt = 0;
            for (const auto& lp : po.lps)
                if (nui[lp.l] + nuj[lp.l] >= 1) ++cnt;
            po.pair_offsets[pair_idx + 1] = cnt;
        }
    }
    for (std::uint64_t k = 0; k < npairs; ++k) po.pair_offsets[k + 1] += po.pair_offsets[k];
    po.entries.resize(po.pair_offsets[npairs]);

    pair_idx = 0;
    std::uint64_t cursor = 0;
    for (int i = 0; i < nn; ++i) {
        const auto& nui = bas[i].powers;
        for (int j = i; j < nn; ++j, ++pair_idx) {
            const auto& nuj = bas[j].powers;
            for (std::uint32_t lpid = 0; lpid < po.lps.size(); ++lpid) {
                const MatLp& lp = po.lps[lpid];
                if (nui[lp.l] + nuj[lp.l] < 1) continue;
                for (int t = 0; t < d; ++t) rho[t] = nui[t] + nuj[t] + lp.alpha[t];
                rho[lp.l] -= 1;
                Universe& u = po.mat_univ[lp.univ];
                auto& intern = interns[lp.univ];
                const Key128 key = pack_powers(rho.data(), d);
                auto [it, fresh] = intern.emplace(key, u.count);
                if (fresh) {
                    u.rho_flat.insert(u.rho_flat.end(), rho.begin(), rho.end());
                    for (int t = 0; t < d; ++t) u.max_pow[t] = std::max(u.max_pow[t], rho[t]);
                    ++u.count;
                }
                po.entries[cursor++] = {lpid, static_cast<std::uint32_t>(it->second)};
            }
        }
    }

    // rhs universes: rho = nu_i + beta for beta in each group of chi(a)
    const ChiStructure& chiA = ops.chi[a];
    po.rhs_univ.resize(chiA.groups.size());
    po.rhs_idx.resize(chiA.groups.size());
    for (size_t gA = 0; gA < chiA.groups.size(); ++gA) {
        const ChiGroup& g = chiA.groups[gA];
        Universe& u = po.rhs_univ[gA];
        u.max_pow.assign(d, 0);
        std::unordered_map<Key128, int, Key128Hash> intern;
        const int nbeta = g.size();
        po.rhs_idx[gA].resize(static_cast<size_t>(nn) * nbeta);
        for (int i = 0; i < nn; ++i) {
            const auto& nui = bas[i].powers;
            for (int bslot = 0; bslot < nbeta; ++bslot) {
                for (int t = 0; t < d; ++t) rho[t] = nui[t] + g.beta_flat[bslot * d + t];
                const Key128 key = pack_powers(rho.data(), d);
                auto [it, fresh] = intern.emplace(key, u.count);
                if (fresh) {
                    u.rho_flat.insert(u.rho_flat.end(), rho.begin(), rho.end());
                    for (int t = 0; t < d; ++t) u.max_pow[t] = std::max(u.max_pow[t], rho[t]);
                    ++u.count;
                }
                po.rhs_idx[gA][static_cast<size_t>(i) * nbeta + bslot] =
                    static_cast<std::uint32_t>(it->second);
            }
        }
    }

    // fill plans: per (universe, chi(b) group), the per-dimension moment
    // vectors for the merged extras signatures, grown to the needed power
    const ChiStructure& chiB = ops.chi[b];
    auto make_plan = [&](const std::vector<std::pair<int, int>>& sig_u, const Universe& u,
                         const ChiGroup& g) {
        FillPlan plan;
        plan.mom.resize(d);
        for (int t = 0; t < d; ++t) {
            int ea = -1;
            for (const auto& [dd, e] : sig_u)
                if (dd == t) ea = e;
            const MomKey key = merge_key(t, ea, g.extra_at(t));
            plan.mom[t] = &ensure_moments(key, u.max_pow[t] + g.max_pow[t]);
        }
        return plan;
    };
    po.mat_plan.resize(po.mat_univ.size());
    for (size_t ui = 0; ui < po.mat_univ.size(); ++ui) {
        po.mat_plan[ui].resize(chiB.groups.size());
        for (size_t gi = 0; gi < chiB.groups.size(); ++gi)
            po.mat_plan[ui][gi] = make_plan(univ_sigs[ui], po.mat_univ[ui], chiB.groups[gi]);
    }
    po.rhs_plan.resize(po.rhs_univ.size());
    for (size_t ui = 0; ui < po.rhs_univ.size(); ++ui) {
        po.rhs_plan[ui].resize(chiB.groups.size());
        for (size_t gi = 0; gi < chiB.groups.size(); ++gi)
            po.rhs_plan[ui][gi] = make_plan(chiA.groups[ui].sig, po.rhs_univ[ui], chiB.groups[gi]);
    }

    auto [it, ok] = ops.pairs.emplace(std::make_pair(a, b), std::move(po));
    (void)ok;
    return it->second;
}

std::vector<std::vector<double>> Impl::fill_chi(const ChiStructure& chi,
                                                const Eigen::VectorXd& c) const {
    std::vector<std::vector<double>> vals(chi.groups.size());
    for (size_t g = 0; g < chi.groups.size(); ++g)
        vals[g].assign(chi.groups[g].size(), 0.0);
    for (const auto& s : chi.scatter) {
        const double cv = c[s.r];
        if (cv != 0.0) vals[s.group][s.slot] += s.factor * cv;
    }
    return vals;
}

namespace {

// psi(rho) = sum over chi entries of chi[beta] * prod_t mom_t[rho_t + beta_t]
void fill_universe(const Impl::Universe& u, const Impl::FillPlan& plan,
                   const std::vector<int>& beta_flat, const std::vector<double>& chi_vals,
                   int d, std::vector<double>& out) {
    const int nbeta = static_cast<int>(chi_vals.size());
    parallel_for(u.count, [&](size_t slot) {
        const int* rho = &u.rho_flat[slot * d];
        double acc = 0.0;
        for (int bi = 0; bi < nbeta; ++bi) {
            const double cv = chi_vals[bi];
            if (cv == 0.0) continue;
            const int* beta = &beta_flat[static_cast<size_t>(bi) * d];
            double prod = cv;
            for (int t = 0; t < d; ++t) prod *= (*plan.mom[t])[rho[t] + beta[t]];
            acc += prod;
        }
        out[slot] += acc;
    });
}

}  // namespace

// ---------------------------------------------------------------------------
// public API
// ---------------------------------------------------------------------------

const ControlSystem& IntegralTables::system() const { return impl->sys; }
const MonomialBasis& IntegralTables::basis() const { return impl->bas; }
int IntegralTables::quad_order() const { return impl->quad_order; }
bool IntegralTables::cache_hit() const { return impl->from_cache; }
std::uint64_t IntegralTables::fingerprint() const { return impl->hashable ? impl->digest : 0; }

namespace {

std::uint64_t system_digest(const Impl& impl) {
    std::uint64_t h = 1469598103934665603ull;
    const int d = impl.sys.dim();
    h = fnv64(h, &d, sizeof(d));
    const int M = impl.bas.max_degree();
    h = fnv64(h, &M, sizeof(M));
    h = fnv64(h, &impl.quad_order, sizeof(impl.quad_order));
    for (const auto& iv : impl.sys.domain.intervals) {
        h = hash_double(h, iv.lo);
        h = hash_double(h, iv.hi);
    }
    for (const auto& row : impl.f_rows) h = hash_nscalar(h, row, impl.extras);
    for (const auto& col : impl.g_cols)
        for (const auto& row : col) h = hash_nscalar(h, row, impl.extras);
    for (const auto& col : impl.h_cols)
        for (const auto& row : col) h = hash_nscalar(h, row, impl.extras);
    h = hash_nscalar(h, impl.ell_norm, impl.extras);
    for (int i = 0; i < impl.sys.R.size(); ++i) h = hash_double(h, impl.sys.R.data()[i]);
    for (int i = 0; i < impl.sys.P.size(); ++i) h = hash_double(h, impl.sys.P.data()[i]);
    return h;
}

constexpr char kCacheMagic[4] = {'H', 'J', 'T', 'B'};
constexpr std::uint32_t kCacheVersion = 1;

bool load_cache(Impl& impl, const std::string& dir) {
    namespace fs = std::filesystem;
    std::ostringstream name;
    name << std::hex << impl.digest << ".hjt";
    const fs::path path = fs::path(dir) / name.str();
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[4];
    std::uint32_t version = 0, d = 0, M = 0, order = 0;
    std::uint64_t digest = 0, n = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&d), sizeof(d));
    in.read(reinterpret_cast<char*>(&M), sizeof(M));
    in.read(reinterpret_cast<char*>(&order), sizeof(order));
    in.read(reinterpret_cast<char*>(&digest), sizeof(digest));
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (!in || std::memcmp(magic, kCacheMagic, 4) != 0 || version != kCacheVersion) return false;
    if (digest != impl.digest || static_cast<int>(d) != impl.dim() ||
        static_cast<int>(M) != impl.bas.max_degree() ||
        static_cast<int>(order) != impl.quad_order || static_cast<int>(n) != impl.n())
        return false;
    impl.F.resize(n, n);
    impl.ell_vec.resize(n);
    in.read(reinterpret_cast<char*>(impl.F.data()), static_cast<std::streamsize>(n * n * sizeof(double)));
    in.read(reinterpret_cast<char*>(impl.ell_vec.data()), static_cast<std::streamsize>(n * sizeof(double)));
    return static_cast<bool>(in);
}

void store_cache(const Impl& impl, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) return;
    std::ostringstream name;
    name << std::hex << impl.digest << ".hjt";
    const fs::path path = fs::path(dir) / name.str();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) return;
    const std::uint32_t version = kCacheVersion;
    const std::uint32_t d = impl.dim(), M = impl.bas.max_degree(), order = impl.quad_order;
    const std::uint64_t digest = impl.digest, n = impl.n();
    out.write(kCacheMagic, 4);
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&d), sizeof(d));
    out.write(reinterpret_cast<const char*>(&M), sizeof(M));
    out.write(reinterpret_cast<const char*>(&order), sizeof(order));
    out.write(reinterpret_cast<const char*>(&digest), sizeof(digest));
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(impl.F.data()),
              static_cast<std::streamsize>(n * n * sizeof(double)));
    out.write(reinterpret_cast<const char*>(impl.ell_vec.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
}

}  // namespace

IntegralTables build_tables(const ControlSystem& sys, const MonomialBasis& basis,
                            const TableOptions& options) {
    static_assert(std::endian::native == std::endian::little, "cache format is little-endian");
    sys.validate();
    const int d = sys.dim();
    if (basis.dim() != d) throw std::invalid_argument("build_tables: basis dimension mismatch");
    if (d > kMaxDim) throw std::invalid_argument("build_tables: dimensions above 16 are not supported");

    auto impl = std::make_shared<Impl>();
    impl->sys = sys;
    impl->bas = basis;
    impl->quad_order = options.quad_order > 0 ? options.quad_order
                                              : std::max(2 * basis.max_degree() + 4, 16);
    impl->quad.reserve(d);
    for (int t = 0; t < d; ++t)
        impl->quad.push_back(gauss_legendre(impl->quad_order, sys.domain.intervals[t]));

    impl->f_rows.resize(d);
    for (int i = 0; i < d; ++i) impl->f_rows[i] = impl->normalize(sys.f.entry(i, 0));
    impl->g_cols.resize(sys.control_dim());
    for (int a = 0; a < sys.control_dim(); ++a) {
        impl->g_cols[a].resize(d);
        for (int i = 0; i < d; ++i) impl->g_cols[a][i] = impl->normalize(sys.g.entry(i, a));
    }
    impl->h_cols.resize(sys.disturbance_dim());
    for (int a = 0; a < sys.disturbance_dim(); ++a) {
        impl->h_cols[a].resize(d);
        for (int i = 0; i < d; ++i) impl->h_cols[a][i] = impl->normalize(sys.h.entry(i, a));
    }
    impl->ell_norm = impl->normalize(sys.ell);
    impl->Rinv = sys.R.inverse();
    impl->Pinv = sys.disturbance_dim() > 0 ? sys.P.inverse() : Eigen::MatrixXd();

    if (impl->hashable) impl->digest = system_digest(*impl);

    bool loaded = false;
    if (options.use_cache && impl->hashable) loaded = load_cache(*impl, options.cache_dir);
    if (loaded) {
        impl->from_cache = true;
        // moments are still needed for the per-iteration contractions
        int max_basis_pow = 2 * basis.max_degree();
        for (const auto& row : impl->f_rows)
            for (const auto& term : row.terms)
                for (int t = 0; t < d; ++t)
                    impl->ensure_moments(merge_key(t, -1, term.extra_at(t)), max_basis_pow + term.pw[t]);
    } else {
        impl->assemble_f_and_ell();
        if (options.use_cache && impl->hashable) store_cache(*impl, options.cache_dir);
    }

    IntegralTables tables;
    tables.impl = std::move(impl);
    return tables;
}

const Eigen::MatrixXd& assemble_F(const IntegralTables& tables) { return tables.impl->F; }
const Eigen::VectorXd& ell_vector(const IntegralTables& tables) { return tables.impl->ell_vec; }

namespace {

void check_coeff_size(const Impl& impl, const Eigen::VectorXd& c, const char* where) {
    if (c.size() != impl.n())
        throw std::invalid_argument(std::string(where) + ": coefficient vector size mismatch");
}

// Shared implementation of the H and G contractions. `weight` already holds
// the full scalar prefactor per channel pair.
Eigen::MatrixXd assemble_contraction(Impl& impl, bool control_channel, const Eigen::VectorXd& c,
                                     const Eigen::MatrixXd& weights) {
    const int nn = impl.n();
    const int d = impl.dim();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(nn, nn);
    if (c.isZero(0.0)) return out;
    const int cols = control_channel ? impl.sys.control_dim() : impl.sys.disturbance_dim();

    for (int a = 0; a < cols; ++a) {
        for (int b = 0; b < cols; ++b) {
            const double w = weights(a, b);
            if (w == 0.0) continue;
            Impl::PairOps* ops;
            const Impl::ChiStructure* chiB;
            {
                std::unique_lock<std::shared_mutex> lock(impl.structure_mutex);
                ops = &impl.pair_ops(control_channel, a, b);
                chiB = &(control_channel ? impl.g_ops : impl.h_ops).chi[b];
            }
            std::shared_lock<std::shared_mutex> lock(impl.structure_mutex);
            const auto chi_vals = impl.fill_chi(*chiB, c);
            bool any = false;
            for (const auto& g : chi_vals)
                for (double v : g)
                    if (v != 0.0) any = true;
            if (!any) continue;

            std::vector<std::vector<double>> psi(ops->mat_univ.size());
            for (size_t u = 0; u < ops->mat_univ.size(); ++u) {
                psi[u].assign(ops->mat_univ[u].count, 0.0);
                for (size_t g = 0; g < chiB->groups.size(); ++g)
                    fill_universe(ops->mat_univ[u], ops->mat_plan[u][g], chiB->groups[g].beta_flat,
                                  chi_vals[g], d, psi[u]);
            }

            // Pairs (i, j >= i) are laid out row-major; a worker owns a whole
            // row, so every matrix entry (including mirrors) has one writer.
            parallel_for(nn, [&](size_t ii) {
                const int i = static_cast<int>(ii);
                const auto& nui = impl.bas[i].powers;
                std::uint64_t pair_idx = static_cast<std::uint64_t>(i) * nn -
                                         static_cast<std::uint64_t>(i) * (i > 0 ? i - 1 : 0) / 2;
                for (int j = i; j < nn; ++j, ++pair_idx) {
                    const auto& nuj = impl.bas[j].powers;
                    double hij = 0.0, hji = 0.0;
                    for (std::uint64_t e = ops->pair_offsets[pair_idx];
                         e < ops->pair_offsets[pair_idx + 1]; ++e) {
                        const auto& ent = ops->entries[e];
                        const auto& lp = ops->lps[ent.lp];
                        const double v = lp.kappa * psi[lp.univ][ent.slot];
                        hij += nuj[lp.l] * v;
                        hji += nui[lp.l] * v;
                    }
                    out(i, j) += w * hij;
                    if (i != j) out(j, i) += w * hji;
                }
            });
        }
    }
    return out;
}

// <chi_a * chi_b, phi_i> for all i, via the rhs universes of pair (a,b).
Eigen::VectorXd quadratic_load(Impl& impl, bool control_channel, int a, int b,
                               const Eigen::VectorXd& c) {
    const int nn = impl.n();
    const int d = impl.dim();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(nn);
    Impl::PairOps* ops;
    const Impl::ChiStructure* chiA;
    const Impl::ChiStructure* chiB;
    {
        std::unique_lock<std::shared_mutex> lock(impl.structure_mutex);
        ops = &impl.pair_ops(control_channel, a, b);
        const auto& channel = control_channel ? impl.g_ops : impl.h_ops;
        chiA = &channel.chi[a];
        chiB = &channel.chi[b];
    }
    std::shared_lock<std::shared_mutex> lock(impl.structure_mutex);
    const auto chiA_vals = impl.fill_chi(*chiA, c);
    const auto chiB_vals = impl.fill_chi(*chiB, c);

    std::vector<std::vector<double>> psi(ops->rhs_univ.size());
    for (size_t u = 0; u < ops->rhs_univ.size(); ++u) {
        psi[u].assign(ops->rhs_univ[u].count, 0.0);
        for (size_t g = 0; g < chiB->groups.size(); ++g)
            fill_universe(ops->rhs_univ[u], ops->rhs_plan[u][g], chiB->groups[g].beta_flat,
                          chiB_vals[g], d, psi[u]);
    }

    parallel_for(nn, [&](size_t i) {
        double acc = 0.0;
        for (size_t gA = 0; gA < chiA->groups.size(); ++gA) {
            const int nbeta = chiA->groups[gA].size();
            const auto& idx = ops->rhs_idx[gA];
            for (int bslot = 0; bslot < nbeta; ++bslot) {
                const double av = chiA_vals[gA][bslot];
                if (av == 0.0) continue;
                acc += av * psi[gA][idx[i * nbeta + bslot]];
            }
        }
        out[i] = acc;
    });
    return out;
}

}  // namespace

Eigen::MatrixXd assemble_H(const IntegralTables& tables, const Eigen::VectorXd& c_prev,
                           double gamma) {
    Impl& impl = *tables.impl;
    check_coeff_size(impl, c_prev, "assemble_H");
    if (!(gamma > 0)) throw std::invalid_argument("assemble_H: gamma must be positive");
    const int p = impl.sys.disturbance_dim();
    if (p == 0 || !std::isfinite(gamma) || c_prev.isZero(0.0))
        return Eigen::MatrixXd::Zero(impl.n(), impl.n());
    const Eigen::MatrixXd weights = impl.Pinv / (2.0 * gamma * gamma);
    return assemble_contraction(impl, /*control=*/false, c_prev, weights);
}

Eigen::MatrixXd assemble_G(const IntegralTables& tables, const Eigen::VectorXd& c_ctrl) {
    Impl& impl = *tables.impl;
    check_coeff_size(impl, c_ctrl, "assemble_G");
    if (impl.sys.control_dim() == 0 || c_ctrl.isZero(0.0))
        return Eigen::MatrixXd::Zero(impl.n(), impl.n());
    const Eigen::MatrixXd weights = -0.5 * impl.Rinv;
    return assemble_contraction(impl, /*control=*/true, c_ctrl, weights);
}

Eigen::VectorXd assemble_rhs(const IntegralTables& tables, const Eigen::VectorXd& c_ctrl,
                             const Eigen::VectorXd& c_prev, double gamma) {
    Impl& impl = *tables.impl;
    check_coeff_size(impl, c_ctrl, "assemble_rhs");
    check_coeff_size(impl, c_prev, "assemble_rhs");
    if (!(gamma > 0)) throw std::invalid_argument("assemble_rhs: gamma must be positive");
    Eigen::VectorXd b = -impl.ell_vec;

    if (impl.sys.control_dim() > 0 && !c_ctrl.isZero(0.0)) {
        const int m = impl.sys.control_dim();
        for (int a = 0; a < m; ++a)
            for (int bc = 0; bc < m; ++bc) {
                const double w = impl.Rinv(a, bc);
                if (w == 0.0) continue;
                b -= 0.25 * w * quadratic_load(impl, /*control=*/true, a, bc, c_ctrl);
            }
    }
    const int p = impl.sys.disturbance_dim();
    if (p > 0 && std::isfinite(gamma) && !c_prev.isZero(0.0)) {
        for (int a = 0; a < p; ++a)
            for (int bc = 0; bc < p; ++bc) {
                const double w = impl.Pinv(a, bc);
                if (w == 0.0) continue;
                b += w / (4.0 * gamma * gamma) * quadratic_load(impl, /*control=*/false, a, bc, c_prev);
            }
    }
    return b;
}

GalerkinSystem make_galerkin_system(const ControlSystem& sys, const MonomialBasis& basis,
                                    const TableOptions& options) {
    return GalerkinSystem{build_tables(sys, basis, options)};
}

Eigen::VectorXd solve_policy_evaluation(const GalerkinSystem& gs, const Eigen::VectorXd& c_ctrl,
                                        const Eigen::VectorXd& c_prev, double gamma,
                                        SolveInfo* info) {
    const Eigen::VectorXd b = gs.rhs(c_ctrl, c_prev, gamma);
    if (info) *info = SolveInfo{};
    if (b.isZero(0.0)) return Eigen::VectorXd::Zero(gs.size());

    Eigen::MatrixXd A = gs.F() + gs.G(c_ctrl);
    if (std::isfinite(gamma)) A += gs.H(c_prev, gamma);

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    const double rcond = lu.rcond();
    if (!(rcond > 0.0) || !std::isfinite(rcond))
        throw SingularSystemError("solve_policy_evaluation: singular policy-evaluation system "
                                  "(non-stabilizing policy or gamma below the attenuation limit)",
                                  rcond > 0 ? 1.0 / rcond : std::numeric_limits<double>::infinity());
    Eigen::VectorXd c = lu.solve(b);
    double residual = (A * c - b).norm();
    const double bound = 1e-10 * b.norm();
    if (residual > bound) {
        c += lu.solve(b - A * c);
        residual = (A * c - b).norm();
    }
    if (residual > bound || !c.allFinite())
        throw SingularSystemError("solve_policy_evaluation: residual bound not met, condition " +
                                      std::to_string(1.0 / rcond),
                                  1.0 / rcond);
    if (info) {
        info->rcond = rcond;
        info->residual = residual;
        info->ill_conditioned = 1.0 / rcond > 1e12;
    }
    return c;
}

double residual_check(const ControlSystem& sys, const MonomialBasis& basis,
                      const Eigen::VectorXd& c, const Eigen::VectorXd& c_ctrl,
                      const Eigen::VectorXd& c_prev, double gamma, int samples,
                      std::uint64_t seed) {
    if (samples < 1) throw std::invalid_argument("residual_check: samples must be >= 1");
    const int d = sys.dim();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Eigen::MatrixXd Rinv = sys.R.inverse();
    const Eigen::MatrixXd Pinv =
        sys.disturbance_dim() > 0 ? sys.P.inverse() : Eigen::MatrixXd();

    double worst = 0.0;
    for (int s = 0; s < samples; ++s) {
        Eigen::VectorXd x(d);
        for (int t = 0; t < d; ++t) {
            const Interval& iv = sys.domain.intervals[t];
            x[t] = iv.lo + unit(rng) * iv.width();
        }
        const Eigen::VectorXd grad = eval_combination_gradient(basis, c, x);
        const Eigen::VectorXd grad_ctrl = eval_combination_gradient(basis, c_ctrl, x);
        const Eigen::MatrixXd gx = sys.g.eval(x);
        const Eigen::VectorXd u = -0.5 * Rinv * gx.transpose() * grad_ctrl;
        double r = 0.0;
        Eigen::VectorXd drift(d);
        for (int i = 0; i < d; ++i) drift[i] = sys.f.entry(i, 0).eval(x);
        drift += gx * u;
        if (sys.disturbance_dim() > 0 && std::isfinite(gamma)) {
            const Eigen::VectorXd grad_prev = eval_combination_gradient(basis, c_prev, x);
            const Eigen::MatrixXd hx = sys.h.eval(x);
            const Eigen::VectorXd w = Pinv * hx.transpose() * grad_prev / (2.0 * gamma * gamma);
            drift += hx * w;
            r -= gamma * gamma * (w.dot(sys.P * w));
        }
        r += grad.dot(drift) + sys.ell.eval(x) + u.dot(sys.R * u);
        worst = std::max(worst, std::abs(r));
    }
    return worst;
}

}  // namespace hjsynth
