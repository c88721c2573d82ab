// Python bindings for the core operations. The heavy lifting (training loops,
// CLI workflows) stays in C++; this module exposes the numeric primitives so
// they can be cross-checked from numpy and scripted in notebooks.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rmx/attention.hpp"
#include "rmx/cost.hpp"
#include "rmx/kv_cache.hpp"
#include "rmx/numerics.hpp"
#include "rmx/pattern.hpp"
#include "rmx/scan.hpp"

namespace py = pybind11;

namespace {

rmx::Array array_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
    rmx::Array out({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))});
    std::copy(a.data(), a.data() + a.size(), out.flat().begin());
    return out;
}

py::array_t<double> numpy_from_array(const rmx::Array& a) {
    if (a.shape().size() != 2) throw std::logic_error("expected a 2-d result");
    py::array_t<double> out({static_cast<py::ssize_t>(a.shape()[0]),
                             static_cast<py::ssize_t>(a.shape()[1])});
    std::copy(a.flat().begin(), a.flat().end(), out.mutable_data());
    return out;
}

std::vector<double> vector_from_numpy(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d array");
    return std::vector<double>(a.data(), a.data() + a.size());
}

rmx::SparsePatternSpec spec_from_kwargs(std::int64_t dilation, std::int64_t window,
                                        std::int64_t sinks, std::int64_t recurrence_window) {
    rmx::SparsePatternSpec spec;
    spec.dilation = dilation;
    spec.window = window;
    spec.sinks = sinks;
    if (recurrence_window >= 0) spec.recurrence_window = recurrence_window;
    spec.validate();
    return spec;
}

}  // namespace

PYBIND11_MODULE(_rmx, m) {
    m.doc() = "gated temporal mixing with dilated sparse attention: core operations";

    m.def(
        "scan_sequential",
        [](const py::array_t<double>& x, const py::array_t<double>& g) {
            return numpy_from_array(rmx::scan::sequential(array_from_numpy(x), array_from_numpy(g)));
        },
        py::arg("x"), py::arg("g"),
        "First-order gated recurrence y_t = g_t * y_{t-1} + (1 - g_t) * x_t, row by row.");

    m.def(
        "scan_parallel",
        [](const py::array_t<double>& x, const py::array_t<double>& g) {
            return numpy_from_array(rmx::scan::parallel(array_from_numpy(x), array_from_numpy(g)));
        },
        py::arg("x"), py::arg("g"), "Blelloch-style evaluation of the same recurrence.");

    m.def(
        "softmax",
        [](const py::array_t<double>& v) {
            std::vector<double> row = vector_from_numpy(v);
            rmx::softmax_stable(row);
            return row;
        },
        py::arg("scores"), "Max-subtracted softmax of one score row.");

    m.def(
        "rope_apply",
        [](const py::array_t<double>& v, std::int64_t position, double theta) {
            std::vector<double> row = vector_from_numpy(v);
            rmx::RopeParams params;
            params.base = theta;
            rmx::rope_apply_row(row, position, params);
            return row;
        },
        py::arg("row"), py::arg("position"), py::arg("theta") = 10000.0,
        "Rotates interleaved channel pairs by the position-dependent angles.");

    m.def(
        "dilated_indices",
        [](std::int64_t t, std::int64_t dilation, std::int64_t window, std::int64_t sinks) {
            const rmx::SparsePatternSpec spec = spec_from_kwargs(dilation, window, sinks, -1);
            const rmx::AttendedSet set = rmx::attended_for_query(t, spec);
            std::vector<std::pair<std::int64_t, std::string>> out;
            out.reserve(set.size());
            for (const rmx::AttendedEntry& e : set) {
                out.emplace_back(e.pos, rmx::entry_label_name(e.label));
            }
            return out;
        },
        py::arg("t"), py::arg("dilation"), py::arg("window") = 0, py::arg("sinks") = 0,
        "Attended (position, label) pairs for the query at position t.");

    m.def(
        "expected_cache_entries",
        [](std::int64_t t, std::int64_t dilation, std::int64_t window, std::int64_t sinks) {
            return rmx::expected_cache_entries(t, spec_from_kwargs(dilation, window, sinks, -1));
        },
        py::arg("t"), py::arg("dilation"), py::arg("window") = 0, py::arg("sinks") = 0,
        "Cache occupancy (distinct stored positions plus state slots) after absorbing t.");

    m.def(
        "quest_block_score",
        [](const py::array_t<double>& q, const py::array_t<double>& block_min,
           const py::array_t<double>& block_max) {
            return rmx::quest_block_score(vector_from_numpy(q), vector_from_numpy(block_min),
                                    vector_from_numpy(block_max));
        },
        py::arg("q"), py::arg("block_min"), py::arg("block_max"),
        "Upper bound sum_i max(q_i*min_i, q_i*max_i) used for block retrieval.");

    m.def(
        "moba_block_score",
        [](const py::array_t<double>& q, const py::array_t<double>& block_mean) {
            return rmx::moba_block_score(vector_from_numpy(q), vector_from_numpy(block_mean));
        },
        py::arg("q"), py::arg("block_mean"), "Query dot block mean key.");

    m.def(
        "attend",
        [](const py::array_t<double>& q, const py::array_t<double>& keys,
           const py::array_t<double>& values, const std::vector<std::int64_t>& positions,
           double scale) {
            rmx::AttendedSet set;
            set.reserve(positions.size());
            for (std::int64_t p : positions) set.push_back({p, rmx::EntryLabel::Local});
            return rmx::attend_oracle(vector_from_numpy(q), array_from_numpy(keys),
                                      array_from_numpy(values), set, scale);
        },
        py::arg("q"), py::arg("keys"), py::arg("values"), py::arg("positions"), py::arg("scale"),
        "Softmax attention of one query over the listed key/value rows.");

    m.def(
        "temporal_mix",
        [](const py::array_t<double>& x, const py::array_t<double>& wq,
           const py::array_t<double>& wk, const py::array_t<double>& wv,
           const py::array_t<double>& wg, const py::array_t<double>& wog,
           const py::array_t<double>& wout, std::int64_t heads, std::int64_t dilation,
           std::int64_t window, std::int64_t sinks, std::int64_t recurrence_window) {
            rmx::MixParams params;
            params.wq = array_from_numpy(wq);
            params.wk = array_from_numpy(wk);
            params.wv = array_from_numpy(wv);
            params.gate.w = array_from_numpy(wg);
            params.ogate.w = array_from_numpy(wog);
            params.wout = array_from_numpy(wout);
            params.heads = heads;
            if (heads <= 0 || params.wq.shape()[1] % static_cast<std::size_t>(heads) != 0) {
                throw std::invalid_argument("head count must divide the projection width");
            }
            params.head_dim = static_cast<std::int64_t>(params.wq.shape()[1]) / heads;
            rmx::MixConfig config;
            config.spec = spec_from_kwargs(dilation, window, sinks, recurrence_window);
            return numpy_from_array(rmx::temporal_mixing_forward(array_from_numpy(x), params, config));
        },
        py::arg("x"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("w_gate"),
        py::arg("w_ogate"), py::arg("w_out"), py::arg("heads") = 1, py::arg("dilation") = 1,
        py::arg("window") = 0, py::arg("sinks") = 0, py::arg("recurrence_window") = -1,
        "Full mixing layer: gated recurrence over keys/values, sparse attention, output gate.");

    m.def(
        "flops_per_token",
        [](std::int64_t t, std::int64_t dilation, std::int64_t window, std::int64_t sinks,
           std::int64_t heads, std::int64_t head_dim) {
            const rmx::FlopsBreakdown f = rmx::flops_per_token(
                spec_from_kwargs(dilation, window, sinks, -1), t, heads, head_dim);
            py::dict d;
            d["attention"] = f.attention;
            d["recurrence"] = f.recurrence;
            d["scoring"] = f.scoring;
            d["total"] = f.total;
            return d;
        },
        py::arg("t"), py::arg("dilation"), py::arg("window") = 0, py::arg("sinks") = 0,
        py::arg("heads") = 8, py::arg("head_dim") = 64,
        "Analytic decode cost at position t, split by component.");
}
