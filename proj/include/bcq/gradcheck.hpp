#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bcq/layers.hpp"
#include "bcq/params.hpp"
#include "bcq/tape.hpp"

// Central-difference gradient verification. The analytic pass records one
// graph and back-propagates; every sampled parameter element is then nudged
// up and down with a fresh forward pass each time. Double precision
// throughout, step scaled with the element's magnitude.
//
// corrupt_tensor + corrupt_delta bias the reported analytic gradient of one
// tensor, simulating a broken backward rule; the check must then fail, which
// is used as a negative control on the checker itself.

namespace bcq {

struct GradCheckReport {
    std::string component;
    int64_t checked = 0;
    int64_t failed = 0;
    double max_rel_err = 0.0;
    std::vector<std::string> failures;
    bool ok() const { return checked > 0 && failed == 0; }
};

// make_loss: called with a fresh Binder, builds the graph, returns the
// scalar loss node id. Must be deterministic in the parameter values.
template <typename MakeLoss>
GradCheckReport check_gradients(ParamStore<double>& ps, MakeLoss make_loss,
                                const std::string& component, double tol = 1e-4,
                                int64_t max_per_tensor = 25,
                                const std::string& corrupt_tensor = std::string(),
                                double corrupt_delta = 0.0) {
    GradCheckReport rep;
    rep.component = component;

    auto eval = [&]() {
        Tape<double> tp;
        Binder<double> b(tp, ps, false);
        int loss = make_loss(b);
        return tp.val(loss)[0];
    };

    Tape<double> tp;
    Binder<double> b(tp, ps, true);
    int loss = make_loss(b);
    tp.backward(loss);

    for (const auto& [entry, node] : b.bound()) {
        if (entry->trainable_prefix <= 0) continue;
        int64_t n = entry->value.numel();
        int64_t stride = std::max<int64_t>(1, n / max_per_tensor);
        bool corrupt = entry->name == corrupt_tensor;
        int64_t taken = 0;
        for (int64_t idx = 0; idx < n && taken < max_per_tensor; idx += stride, ++taken) {
            double a = tp.grad_touched(node) ? tp.grad(node)[idx] : 0.0;
            if (corrupt) a += corrupt_delta;
            double old = entry->value[idx];
            double h = 1e-5 * std::max(1.0, std::abs(old));
            entry->value[idx] = old + h;
            double fp = eval();
            entry->value[idx] = old - h;
            double fm = eval();
            entry->value[idx] = old;
            double num = (fp - fm) / (2.0 * h);
            double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-3});
            rep.max_rel_err = std::max(rep.max_rel_err, rel);
            ++rep.checked;
            if (!(rel <= tol)) {
                ++rep.failed;
                if (rep.failures.size() < 16) {
                    std::ostringstream os;
                    os << entry->name << '[' << idx << "] analytic " << a << " numeric " << num
                       << " rel " << rel;
                    rep.failures.push_back(os.str());
                }
            }
        }
    }
    return rep;
}

inline std::string gradcheck_json(const std::vector<GradCheckReport>& reports) {
    nlohmann::ordered_json j;
    j["components"] = nlohmann::ordered_json::array();
    bool all_ok = true;
    for (const auto& r : reports) {
        nlohmann::ordered_json e;
        e["component"] = r.component;
        e["checked"] = r.checked;
        e["failed"] = r.failed;
        e["max_rel_err"] = r.max_rel_err;
        e["ok"] = r.ok();
        e["failures"] = r.failures;
        j["components"].push_back(std::move(e));
        all_ok = all_ok && r.ok();
    }
    j["ok"] = all_ok;
    return j.dump(2) + "\n";
}

} // namespace bcq
