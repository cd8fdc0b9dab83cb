#include "modalmend/kernel.hpp"

#include <cmath>

#include "modalmend/errors.hpp"

namespace modalmend {

double rbf(std::span<const double> a, std::span<const double> b, double sigma) {
    if (sigma <= 0.0) throw NumericError("rbf: sigma must be positive, got " + std::to_string(sigma));
    if (a.size() != b.size()) {
        throw ShapeError("rbf: vectors of lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    double sq = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sq += d * d;
    }
    return std::exp(-sq / (2.0 * sigma * sigma));
}

BandwidthResult bandwidth_from_batch(const Tensor& h, const std::vector<uint8_t>& valid, double fraction) {
    if (h.rank() != 2) throw ShapeError("bandwidth_from_batch: expected [B,D], got " + shape_str(h.shape()));
    const int64_t b = h.dim(0), d = h.dim(1);
    std::vector<int64_t> rows;
    for (int64_t i = 0; i < b; ++i) {
        if (i >= static_cast<int64_t>(valid.size()) || valid[static_cast<size_t>(i)]) rows.push_back(i);
    }
    if (rows.size() < 2) return {1.0, true};
    double total = 0.0;
    int64_t pairs = 0;
    for (size_t i = 0; i < rows.size(); ++i) {
        for (size_t j = i + 1; j < rows.size(); ++j) {
            double sq = 0.0;
            const double* ri = h.data() + rows[i] * d;
            const double* rj = h.data() + rows[j] * d;
            for (int64_t k = 0; k < d; ++k) {
                const double diff = ri[k] - rj[k];
                sq += diff * diff;
            }
            total += std::sqrt(sq);
            ++pairs;
        }
    }
    const double mean = total / static_cast<double>(pairs);
    if (mean == 0.0) return {1.0, true};
    return {fraction * mean, false};
}

DeepKernelParams make_deep_kernel(ParamStore& store, const std::string& prefix, int64_t n_h, double delta_init,
                                  double fraction_k, double fraction_q, Rng& rng) {
    if (delta_init <= 0.0 || delta_init >= 1.0) throw ConfigError("deep kernel: delta init must lie in (0,1)");
    DeepKernelParams p;
    p.phi_w1 = store.create(prefix + ".phi_w1", {n_h, n_h}, n_h, rng);
    p.phi_w2 = store.create(prefix + ".phi_w2", {n_h, n_h}, n_h, rng);
    // inverse sigmoid so the blend starts exactly at delta_init
    p.delta_raw = store.create_const(prefix + ".delta_raw", {}, std::log(delta_init / (1.0 - delta_init)));
    p.bandwidth_fraction_k = fraction_k;
    p.bandwidth_fraction_q = fraction_q;
    return p;
}

NodeId pairwise_sqdist(Graph& g, NodeId h) {
    const Tensor& th = g.value(h);
    if (th.rank() != 2) throw ShapeError("pairwise_sqdist: expected [B,D], got " + shape_str(th.shape()));
    const int64_t b = th.dim(0);
    NodeId gram = g.matmul(h, g.transpose(h));            // [B,B]
    NodeId sq = g.sum_axis(g.mul(h, h), 1);               // [B,1]
    NodeId d2 = g.add(g.affine(gram, -2.0, 0.0), sq);     // column expansion
    d2 = g.add(d2, g.reshape(g.transpose(sq), {b}));      // row expansion
    return g.relu(d2);                                     // clip rounding negatives; diagonal is exact 0
}

NodeId rbf_matrix(Graph& g, NodeId h, double sigma) {
    if (sigma <= 0.0) throw NumericError("rbf_matrix: sigma must be positive, got " + std::to_string(sigma));
    return g.exp(g.affine(pairwise_sqdist(g, h), -1.0 / (2.0 * sigma * sigma), 0.0));
}

NodeId cosine_similarity_matrix(Graph& g, NodeId h) {
    NodeId norms = g.sqrt(g.clamp(g.sum_axis(g.mul(h, h), 1), 1e-24, 1e300));  // [B,1]
    NodeId unit = g.div(h, norms);
    NodeId cos = g.matmul(unit, g.transpose(unit));
    return g.clamp(g.affine(cos, 0.5, 0.5), 0.0, 1.0);
}

KernelResult deep_kernel_matrix(Graph& g, NodeId h, const std::vector<uint8_t>& valid, const DeepKernelParams& p) {
    const Tensor& th = g.value(h);
    if (th.rank() != 2) throw ShapeError("deep_kernel_matrix: expected [B,D], got " + shape_str(th.shape()));
    if (!th.all_finite()) throw NumericError("deep_kernel_matrix: non-finite values in representations");

    KernelResult out;
    out.phi_out = g.matmul(g.relu(g.matmul(h, g.param(*p.phi_w1))), g.param(*p.phi_w2));

    const BandwidthResult bk = bandwidth_from_batch(g.value(out.phi_out), valid, p.bandwidth_fraction_k);
    const BandwidthResult bq = bandwidth_from_batch(th, valid, p.bandwidth_fraction_q);
    out.sigma_k = bk.sigma;
    out.sigma_q = bq.sigma;
    out.degenerate_bandwidth = bk.degenerate || bq.degenerate;

    NodeId k = rbf_matrix(g, out.phi_out, bk.sigma);
    NodeId q = rbf_matrix(g, h, bq.sigma);
    NodeId delta = g.sigmoid(g.param(*p.delta_raw));
    NodeId blend = g.add(g.mul(k, g.affine(delta, -1.0, 1.0)), delta);
    out.matrix = g.mul(blend, q);
    return out;
}

NodeId stability_term(Graph& g, NodeId h, NodeId phi_out, const std::vector<uint8_t>& valid) {
    const Tensor& th = g.value(h);
    Tensor mask({th.dim(0), 1});
    for (int64_t i = 0; i < th.dim(0); ++i) {
        mask[i] = (i < static_cast<int64_t>(valid.size()) && !valid[static_cast<size_t>(i)]) ? 0.0 : 1.0;
    }
    NodeId m = g.constant(mask);
    NodeId fh = g.frobenius(g.mul(h, m));
    NodeId fp = g.frobenius(g.mul(phi_out, m));
    return g.abs(g.sub(fp, fh));
}

} // namespace modalmend
